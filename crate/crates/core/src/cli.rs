//! Command-line workflow: train, evaluate, verify, compare, export.
//!
//! Every command resolves its settings as flags over an optional TOML file
//! (`--config`) over built-in defaults. The TOML keys are the flag names
//! with `_` in place of `-`, e.g.
//!
//! ```toml
//! method = "lm_mining"
//! data = "mnist"
//! train_dir = "data/mnist"
//! subset = 5000
//! seed = 7
//! ```
//!
//! A training run writes to `runs/<unix-seconds>-<method>/` (the parent
//! can be moved with `LMTRIPLET_RUNS_DIR`, the whole directory with
//! `--out`):
//!
//! | file              | content                                     |
//! |-------------------|---------------------------------------------|
//! | `manifest.json`   | [`RunManifest`]                             |
//! | `config.toml`     | resolved settings                           |
//! | `checkpoint.json` | network parameters, see [`Checkpoint`]      |
//! | `epochs.jsonl`    | one [`EpochReport`] per line                |
//! | `eval.json`       | written by `eval`                           |
//! | `verify/`         | written by `verify`                         |
//! | `scatter.csv`     | written by `export-scatter`                 |
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 numeric failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{load_mnist_dir, make_blobs, BlobsConfig, Dataset, Split};
use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::math::Matrix;
use crate::network::{Checkpoint, EmbeddingNet, NetSpec};
use crate::training::{evaluate_knn, EpochReport, Method, StopReason, TrainConfig, Trainer};
use crate::verify::{
    check_optimal_condition, corollary_margin_check, purity_check, scatter_rows, write_scatter_csv, CorollaryReport,
    QueryStatus, Reading,
};

/// Overrides the parent directory of new runs.
pub const RUNS_DIR_ENV: &str = "LMTRIPLET_RUNS_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const EPOCH_LOG_FILE: &str = "epochs.jsonl";
pub const EVAL_FILE: &str = "eval.json";
pub const SCATTER_FILE: &str = "scatter.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// IDX files in `train_dir`.
    Mnist,
    /// Synthetic Gaussian blobs.
    Blobs,
}

/// Every tunable, all optional so that layers can be merged.
#[derive(Debug, Clone, Default, PartialEq, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[arg(long)]
    pub method: Option<Method>,
    #[arg(long, value_enum)]
    pub data: Option<DataSource>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    /// Stratified training subset size (MNIST).
    #[arg(long)]
    pub subset: Option<usize>,
    /// Stratified test subset size (MNIST).
    #[arg(long)]
    pub test_subset: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub std: Option<f64>,
    /// Hidden widths of the blob MLP, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Convergence threshold on the change of mean epoch loss.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub c_b: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub w_lm: Option<f64>,
    #[arg(long)]
    pub w_ms: Option<f64>,
    #[arg(long)]
    pub w_md: Option<f64>,
    #[arg(long)]
    pub w_ss: Option<f64>,
    #[arg(long)]
    pub w_sd: Option<f64>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        RunOptions { $($f: $top.$f.or($base.$f)),* }
    };
}

impl RunOptions {
    /// `top` wins wherever it sets a value.
    pub fn overlay(self, top: RunOptions) -> RunOptions {
        let base = self;
        overlay!(
            base, top, method, data, train_dir, subset, test_subset, classes, per_class, test_per_class, dim,
            spacing, std, hidden, k, batch_size, epochs, lr, tol, seed, c_b, eps, margin, w_lm, w_ms, w_md, w_ss,
            w_sd
        )
    }

    pub fn from_toml(text: &str) -> Result<RunOptions> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<RunOptions> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn resolve(self) -> Result<Settings> {
        let d = Settings::default();
        let w = d.weights;
        let s = Settings {
            method: self.method.unwrap_or(d.method),
            data: self.data.unwrap_or(d.data),
            train_dir: self.train_dir.unwrap_or(d.train_dir),
            subset: self.subset.or(d.subset),
            test_subset: self.test_subset.or(d.test_subset),
            classes: self.classes.unwrap_or(d.classes),
            per_class: self.per_class.unwrap_or(d.per_class),
            test_per_class: self.test_per_class.unwrap_or(d.test_per_class),
            dim: self.dim.unwrap_or(d.dim),
            spacing: self.spacing.unwrap_or(d.spacing),
            std: self.std.unwrap_or(d.std),
            hidden: self.hidden.unwrap_or(d.hidden),
            k: self.k.or(d.k),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            lr: self.lr.unwrap_or(d.lr),
            tol: self.tol.unwrap_or(d.tol),
            seed: self.seed.unwrap_or(d.seed),
            weights: LossWeights {
                w_lm: self.w_lm.unwrap_or(w.w_lm),
                w_ms: self.w_ms.unwrap_or(w.w_ms),
                w_md: self.w_md.unwrap_or(w.w_md),
                w_ss: self.w_ss.unwrap_or(w.w_ss),
                w_sd: self.w_sd.unwrap_or(w.w_sd),
                c_b: self.c_b.unwrap_or(w.c_b),
                eps: self.eps.unwrap_or(w.eps),
                fixed_margin: self.margin.unwrap_or(w.fixed_margin),
                sd_variance: w.sd_variance,
            },
        };
        s.validate()?;
        Ok(s)
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub method: Method,
    pub data: DataSource,
    pub train_dir: PathBuf,
    pub subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub spacing: f64,
    pub std: f64,
    pub hidden: Vec<usize>,
    pub k: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub tol: f64,
    pub seed: u64,
    pub weights: LossWeights,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            method: Method::Lm,
            data: DataSource::Mnist,
            train_dir: PathBuf::from("data/mnist"),
            subset: None,
            test_subset: None,
            classes: 3,
            per_class: 200,
            test_per_class: 100,
            dim: 8,
            spacing: 6.0,
            std: 1.0,
            hidden: vec![32, 16],
            k: None,
            batch_size: TrainConfig::DEFAULT_BATCH,
            epochs: 60,
            lr: TrainConfig::DEFAULT_LR,
            tol: TrainConfig::DEFAULT_CONVERGENCE_EPS,
            seed: 0,
            weights: LossWeights::mnist(),
        }
    }
}

impl Settings {
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.data == DataSource::Blobs {
            if self.classes < 2 || self.per_class < 2 || self.test_per_class == 0 || self.dim == 0 {
                return Err(Error::Config(
                    "blobs need classes >= 2, per_class >= 2, test_per_class >= 1, dim >= 1".into(),
                ));
            }
            if self.hidden.is_empty() || self.hidden.contains(&0) {
                return Err(Error::Config("hidden widths must be positive and non-empty".into()));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            k: self.k,
            weights: self.weights,
            batch_size: self.batch_size,
            e_max: self.epochs,
            convergence_eps: self.tol,
            lr: self.lr,
            seed: self.seed.wrapping_add(2),
        }
    }

    /// Training and test sets. Both depend only on the data settings and
    /// the seed, so every method of a comparison sees the same samples.
    pub fn prepare_data(&self) -> Result<(Dataset, Dataset)> {
        match self.data {
            DataSource::Mnist => {
                let (train, test) = load_mnist_dir(&self.train_dir)?;
                let train = match self.subset {
                    Some(n) => train.stratified_subset(n, self.seed)?,
                    None => train,
                };
                let test = match self.test_subset {
                    Some(n) => test.stratified_subset(n, self.seed.wrapping_add(1))?,
                    None => test,
                };
                Ok((train, test))
            }
            DataSource::Blobs => {
                let per = self.per_class + self.test_per_class;
                let cfg = BlobsConfig::new(self.classes, per, self.dim, self.spacing, self.std, self.seed);
                let all = make_blobs(&cfg)?;
                all.partition(self.classes * self.per_class, Split::Train, Split::Test, self.seed)
            }
        }
    }

    pub fn net_spec(&self, train: &Dataset) -> Result<NetSpec> {
        match self.data {
            DataSource::Mnist => Ok(NetSpec::mnist()),
            DataSource::Blobs => NetSpec::mlp(train.samples().cols(), &self.hidden),
        }
    }

    pub fn build_net(&self, train: &Dataset) -> Result<EmbeddingNet> {
        Ok(EmbeddingNet::new(self.net_spec(train)?, self.seed.wrapping_add(1)))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("settings serialize to TOML")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataFingerprint {
    pub train: String,
    pub test: String,
    pub n_train: usize,
    pub n_test: usize,
}

/// Record of a run directory. Paths in `outputs` are relative to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: Settings,
    pub seed: u64,
    pub dataset: DataFingerprint,
    pub epochs_run: usize,
    pub stop: Option<StopReason>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<RunManifest> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format {
            path,
            reason: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join(MANIFEST_FILE), &to_json(self))
    }

    fn add_output(&mut self, name: &str) {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
            self.outputs.sort();
        }
    }
}

pub fn artifact_version() -> String {
    format!(
        "lmtriplet-{}+checkpoint-v{}",
        env!("CARGO_PKG_VERSION"),
        crate::network::CHECKPOINT_VERSION
    )
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Parent directory for new runs.
pub fn runs_root() -> PathBuf {
    std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// `<root>/<unix-seconds>-<label>`, suffixed if that name is taken.
pub fn fresh_run_dir(root: &Path, label: &str) -> PathBuf {
    let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let base = root.join(format!("{ts}-{label}"));
    let mut dir = base.clone();
    let mut n = 2;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    dir
}

/// Result of [`train_run`].
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub reports: Vec<EpochReport>,
}

/// Trains according to `settings` and writes the run directory `dir`.
/// Progress lines go to stderr when `verbose`.
pub fn train_run(settings: &Settings, dir: &Path, verbose: bool) -> Result<TrainedRun> {
    let (train, test) = settings.prepare_data()?;
    create_dir(dir)?;
    let mut manifest = RunManifest {
        artifact_version: artifact_version(),
        config: settings.clone(),
        seed: settings.seed,
        dataset: DataFingerprint {
            train: train.fingerprint(),
            test: test.fingerprint(),
            n_train: train.len(),
            n_test: test.len(),
        },
        epochs_run: 0,
        stop: None,
        outputs: Vec::new(),
    };
    write_file(&dir.join(CONFIG_FILE), &settings.to_toml())?;
    manifest.add_output(CONFIG_FILE);

    let log_path = dir.join(EPOCH_LOG_FILE);
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    manifest.add_output(EPOCH_LOG_FILE);
    manifest.save(dir)?;

    let net = settings.build_net(&train)?;
    let mut trainer = Trainer::new(net, settings.train_config(), train.num_classes())?;
    let mut log_err = None;
    let started = Instant::now();
    let result = trainer.train(&train, None, |r| {
        let line = serde_json::to_string(r).expect("epoch report serializes");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
        if verbose {
            eprintln!(
                "epoch {:>3}  loss {:>14.6}  active {}  ({:.1}s)",
                r.epoch,
                r.mean_loss,
                r.hinge_active_fraction.map_or("-".into(), |f| format!("{f:.4}")),
                started.elapsed().as_secs_f64()
            );
        }
    });
    if let Some(e) = log_err {
        return Err(Error::io(&log_path, e));
    }
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            if let Error::Diverged { partial, .. } = &e {
                manifest.epochs_run = partial.len();
                manifest.save(dir)?;
            }
            return Err(e);
        }
    };
    let (net, head) = trainer.into_parts();
    Checkpoint::new(&net, head.as_ref()).save(&dir.join(CHECKPOINT_FILE))?;
    manifest.add_output(CHECKPOINT_FILE);
    manifest.epochs_run = outcome.reports.len();
    manifest.stop = Some(outcome.stop);
    manifest.save(dir)?;
    Ok(TrainedRun {
        dir: dir.to_path_buf(),
        manifest,
        reports: outcome.reports,
    })
}

/// Data and trained network of an existing run.
pub struct LoadedRun {
    pub manifest: RunManifest,
    pub net: EmbeddingNet,
    pub train: Dataset,
    pub test: Dataset,
}

impl LoadedRun {
    pub fn open(dir: &Path) -> Result<LoadedRun> {
        let manifest = RunManifest::load(dir)?;
        let (net, _) = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?.into_parts()?;
        let (train, test) = manifest.config.prepare_data()?;
        if train.fingerprint() != manifest.dataset.train || test.fingerprint() != manifest.dataset.test {
            return Err(Error::Format {
                path: dir.join(MANIFEST_FILE),
                reason: "dataset fingerprint differs from the one recorded at training time".into(),
            });
        }
        Ok(LoadedRun {
            manifest,
            net,
            train,
            test,
        })
    }

    pub fn embeddings(&self) -> Result<(Matrix, Matrix)> {
        Ok((self.net.embed(self.train.samples())?, self.net.embed(self.test.samples())?))
    }

    pub fn default_k(&self) -> usize {
        self.manifest.config.train_config().k_for(self.train.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl EvalReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "method {}  k {}  train {}  test {}\naccuracy {:.4}\nconfusion (rows true, columns predicted):\n",
            self.method, self.k, self.n_train, self.n_test, self.accuracy
        );
        for (c, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>5}")).collect();
            s.push_str(&format!("{c:>3} |{}\n", cells.join("")));
        }
        s
    }
}

/// KNN evaluation of a run on its test set; also written to `eval.json`
/// in the run directory.
pub fn eval_run(dir: &Path, k: Option<usize>) -> Result<EvalReport> {
    let run = LoadedRun::open(dir)?;
    let (tr, te) = run.embeddings()?;
    let k = k.unwrap_or_else(|| run.default_k());
    let e = evaluate_knn(&tr, run.train.labels(), &te, run.test.labels(), k, run.train.num_classes())?;
    let report = EvalReport {
        method: run.manifest.config.method,
        k: e.k,
        n_train: e.n_train,
        n_test: e.n_test,
        accuracy: e.accuracy,
        confusion: e.confusion,
    };
    write_file(&dir.join(EVAL_FILE), &to_json(&report))?;
    let mut manifest = run.manifest;
    manifest.add_output(EVAL_FILE);
    manifest.save(dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub k: usize,
    pub c_b: f64,
    pub eps: f64,
    pub anchors_checked: usize,
    pub anchors_skipped: usize,
    pub violations: usize,
    pub worst_residual: Option<f64>,
    pub n_queries: usize,
    pub outliers: usize,
    pub pure: usize,
    pub impure: usize,
    pub purity: f64,
    pub corollary: CorollaryReport,
}

/// Optimal-condition and purity checks of a run; writes `verify/`.
pub fn verify_run(dir: &Path, k: Option<usize>) -> Result<VerifySummary> {
    let run = LoadedRun::open(dir)?;
    let (tr, te) = run.embeddings()?;
    let k = k.unwrap_or_else(|| run.default_k());
    let w = run.manifest.config.weights;
    let opt = check_optimal_condition(&tr, run.train.labels(), k, w.c_b, w.eps, Reading::Euclidean)?;
    let purity = purity_check(&tr, run.train.labels(), &te, k)?;
    let corollary = corollary_margin_check(&tr, run.train.labels(), k, w.fixed_margin)?;

    let out = dir.join("verify");
    create_dir(&out)?;
    let vpath = out.join("violations.csv");
    let mut vw = csv::Writer::from_path(&vpath).map_err(|e| csv_error(&vpath, e))?;
    vw.write_record(["anchor", "residual", "max_pos", "min_neg", "d_ak"])
        .map_err(|e| csv_error(&vpath, e))?;
    for v in &opt.violations {
        vw.write_record([
            v.anchor.to_string(),
            v.residual.to_string(),
            v.max_pos.to_string(),
            v.min_neg.to_string(),
            v.d_ak.to_string(),
        ])
        .map_err(|e| csv_error(&vpath, e))?;
    }
    vw.flush().map_err(|e| Error::io(&vpath, e))?;

    let statuses: Vec<QueryStatus> = purity.queries.iter().map(|q| q.status).collect();
    let anchor_labels: Vec<usize> = purity.queries.iter().map(|q| q.label).collect();
    let rows = scatter_rows(&te, &anchor_labels, Some(&statuses))?;
    write_scatter_csv(&out.join("purity.csv"), &rows)?;

    let summary = VerifySummary {
        k,
        c_b: w.c_b,
        eps: w.eps,
        anchors_checked: opt.checked,
        anchors_skipped: opt.skipped.len(),
        violations: opt.violations.len(),
        worst_residual: opt.worst_residual(),
        n_queries: purity.n_queries,
        outliers: purity.outlier_count,
        pure: purity.pure_count,
        impure: purity.impure_count,
        purity: purity.purity(),
        corollary,
    };
    write_file(&out.join("summary.json"), &to_json(&summary))?;
    let mut manifest = run.manifest;
    for f in ["verify/violations.csv", "verify/purity.csv", "verify/summary.json"] {
        manifest.add_output(f);
    }
    manifest.save(dir)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScatterSplit {
    Train,
    Test,
}

/// 2-D PCA scatter of a run's embeddings. Test points carry their purity
/// status; training points are `unchecked`.
pub fn export_scatter(dir: &Path, split: ScatterSplit, out: Option<&Path>) -> Result<PathBuf> {
    let run = LoadedRun::open(dir)?;
    let (tr, te) = run.embeddings()?;
    let rows = match split {
        ScatterSplit::Train => scatter_rows(&tr, run.train.labels(), None)?,
        ScatterSplit::Test => {
            let purity = purity_check(&tr, run.train.labels(), &te, run.default_k())?;
            let statuses: Vec<QueryStatus> = purity.queries.iter().map(|q| q.status).collect();
            scatter_rows(&te, run.test.labels(), Some(&statuses))?
        }
    };
    let path = out.map_or_else(|| dir.join(SCATTER_FILE), Path::to_path_buf);
    write_scatter_csv(&path, &rows)?;
    if out.is_none() {
        let mut manifest = run.manifest;
        manifest.add_output(SCATTER_FILE);
        manifest.save(dir)?;
    }
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: Method,
    pub accuracy: f64,
    pub epochs_run: usize,
}

/// Trains every method under one seed and dataset, one subdirectory each,
/// and writes `compare.csv`.
pub fn compare_run(settings: &Settings, dir: &Path, k: Option<usize>, verbose: bool) -> Result<Vec<CompareRow>> {
    create_dir(dir)?;
    let mut rows = Vec::new();
    for method in Method::ALL {
        let s = Settings {
            method,
            ..settings.clone()
        };
        if verbose {
            eprintln!("== {method}");
        }
        let sub = dir.join(method.name());
        let trained = train_run(&s, &sub, verbose)?;
        let eval = eval_run(&sub, k)?;
        rows.push(CompareRow {
            method,
            accuracy: eval.accuracy,
            epochs_run: trained.manifest.epochs_run,
        });
    }
    let path = dir.join("compare.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

pub fn render_compare(rows: &[CompareRow]) -> String {
    let mut s = String::from("| method | accuracy (%) | epochs |\n|---|---|---|\n");
    for r in rows {
        s.push_str(&format!("| {} | {:.2} | {} |\n", r.method, 100.0 * r.accuracy, r.epochs_run));
    }
    s
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

#[derive(Debug, Parser)]
#[command(name = "lmtriplet", version, about = "Local-margin triplet metric learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method and write a run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Exact run directory instead of a fresh one under the runs root.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOptions,
    },
    /// KNN accuracy and confusion counts of a trained run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Optimal-condition, purity and margin checks of a trained run.
    Verify {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train all five methods on the same data and tabulate KNN accuracy.
    Compare {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: RunOptions,
    },
    /// Write a 2-D PCA scatter CSV of a run's embeddings.
    ExportScatter {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: ScatterSplit,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load the MNIST IDX files and print their sizes.
    MnistCheck {
        #[arg(long, default_value = "data/mnist")]
        train_dir: PathBuf,
    },
}

fn resolve(config: Option<&Path>, opts: RunOptions) -> Result<Settings> {
    let file = match config {
        Some(p) => RunOptions::load(p)?,
        None => RunOptions::default(),
    };
    file.overlay(opts).resolve()
}

/// Runs one parsed command, printing its report to stdout.
pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Train { config, out, opts } => {
            let s = resolve(config.as_deref(), opts)?;
            let dir = out.unwrap_or_else(|| fresh_run_dir(&runs_root(), s.method.name()));
            let run = train_run(&s, &dir, true)?;
            println!(
                "trained {} for {} epochs ({:?}); run directory {}",
                s.method,
                run.manifest.epochs_run,
                run.manifest.stop.expect("set after training"),
                dir.display()
            );
        }
        Command::Eval { run, k } => print!("{}", eval_run(&run, k)?.render()),
        Command::Verify { run, k } => {
            let v = verify_run(&run, k)?;
            println!("{}", to_json(&v).trim_end());
        }
        Command::Compare { config, out, opts } => {
            let s = resolve(config.as_deref(), opts)?;
            let k = s.k;
            let dir = out.unwrap_or_else(|| fresh_run_dir(&runs_root(), "compare"));
            let rows = compare_run(&s, &dir, k, true)?;
            print!("{}", render_compare(&rows));
        }
        Command::ExportScatter { run, split, out } => {
            let path = export_scatter(&run, split, out.as_deref())?;
            println!("wrote {}", path.display());
        }
        Command::MnistCheck { train_dir } => {
            let (train, test) = load_mnist_dir(&train_dir)?;
            for (name, ds) in [("train", &train), ("test", &test)] {
                println!(
                    "{name}: {} samples, {}x{} pixels, labels {}..={}, class counts {:?}",
                    ds.len(),
                    ds.shape().h,
                    ds.shape().w,
                    ds.labels().iter().min().copied().unwrap_or(0),
                    ds.labels().iter().max().copied().unwrap_or(0),
                    ds.class_counts()
                );
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command; returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.code());
            e.exit_code()
        }
    }
}
