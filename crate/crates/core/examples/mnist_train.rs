//! Train one method on a stratified MNIST subset and report KNN accuracy.
//!
//! ```text
//! cargo run --release --example mnist_train -- [method] [epochs] [batch]
//! ```
//!
//! The IDX files are read from `LMTRIPLET_MNIST_DIR` (default
//! `data/mnist`).

use std::path::PathBuf;
use std::time::Instant;

use lmtriplet::cli::{DataSource, RunOptions};
use lmtriplet::training::{Method, Trainer};

fn main() -> lmtriplet::Result<()> {
    let mut args = std::env::args().skip(1);
    let method: Method = args.next().as_deref().unwrap_or("lm_mining").parse()?;
    let epochs: usize = args.next().map_or(10, |a| a.parse().expect("epochs"));
    let batch: usize = args.next().map_or(128, |a| a.parse().expect("batch"));
    let dir = std::env::var_os("LMTRIPLET_MNIST_DIR").map_or_else(|| PathBuf::from("data/mnist"), PathBuf::from);

    let settings = RunOptions {
        method: Some(method),
        data: Some(DataSource::Mnist),
        train_dir: Some(dir),
        subset: Some(5000),
        test_subset: Some(1000),
        epochs: Some(epochs),
        batch_size: Some(batch),
        tol: Some(0.0),
        seed: Some(7),
        ..RunOptions::default()
    }
    .resolve()?;
    let (train, test) = settings.prepare_data()?;
    let net = settings.build_net(&train)?;
    let mut trainer = Trainer::new(net, settings.train_config(), train.num_classes())?;
    let start = Instant::now();
    trainer.train(&train, None, |r| {
        println!(
            "epoch {:>2}  loss {:>14.4}  active {}  {:.1}s",
            r.epoch,
            r.mean_loss,
            r.hinge_active_fraction.map_or("-".into(), |f| format!("{f:.4}")),
            start.elapsed().as_secs_f64()
        )
    })?;
    let eval = trainer.knn_score(&train, &test)?;
    println!("{method}: k {} accuracy {:.2}%", eval.k, 100.0 * eval.accuracy);
    Ok(())
}
