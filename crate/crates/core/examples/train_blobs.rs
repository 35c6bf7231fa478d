//! lm_mining on Gaussian blobs with a small MLP, then KNN accuracy.

use lmtriplet::data::{make_blobs, BlobsConfig, Split};
use lmtriplet::network::{EmbeddingNet, NetSpec};
use lmtriplet::training::{Method, TrainConfig, Trainer};

fn main() -> lmtriplet::Result<()> {
    // centers packed into a small box so the raw classes overlap
    let mut blobs = BlobsConfig::new(5, 120, 10, 1.5, 1.0, 3);
    blobs.box_half_width = Some(1.5);
    let all = make_blobs(&blobs)?;
    let (train, test) = all.partition(400, Split::Train, Split::Test, 3)?;

    let mut cfg = TrainConfig::new(Method::LmMining);
    cfg.lr = 1e-3;
    cfg.batch_size = 64;
    cfg.e_max = 20;
    let net = EmbeddingNet::new(NetSpec::mlp(10, &[64, 16])?, 1);
    let mut trainer = Trainer::new(net, cfg, train.num_classes())?;
    let before = trainer.knn_score(&train, &test)?.accuracy;
    let outcome = trainer.train(&train, None, |r| {
        println!(
            "epoch {:>2}  loss {:>12.3}  active {:.3}  mean d_ak {:.3}",
            r.epoch,
            r.mean_loss,
            r.hinge_active_fraction.unwrap_or(0.0),
            r.snapshot.map_or(0.0, |s| s.mean_d_ak)
        )
    })?;
    let after = trainer.knn_score(&train, &test)?;
    println!(
        "{:?} after {} epochs; KNN accuracy (k={}) {:.3} -> {:.3}",
        outcome.stop,
        outcome.reports.len(),
        after.k,
        before,
        after.accuracy
    );
    Ok(())
}
