fn main() {
    std::process::exit(lmtriplet::cli::run(std::env::args_os()));
}
