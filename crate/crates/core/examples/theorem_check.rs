//! Train lm_mining on blobs until almost no hinge is active, then check the
//! optimal condition on the training embedding and the purity of held-out
//! queries.

use lmtriplet::data::{make_blobs, BlobsConfig, Split};
use lmtriplet::knn::choose_k;
use lmtriplet::network::{EmbeddingNet, NetSpec};
use lmtriplet::training::{Method, TrainConfig, Trainer};
use lmtriplet::verify::{check_optimal_condition, purity_check, Reading};

fn main() -> lmtriplet::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let lr = args.first().copied().unwrap_or(1e-3);
    let batch = args.get(1).copied().unwrap_or(64.0) as usize;
    let spacing = args.get(2).copied().unwrap_or(6.0);
    let all = make_blobs(&BlobsConfig::new(4, 300, 8, spacing, 1.0, 11))?;
    let (train, test) = all.partition(800, Split::Train, Split::Test, 11)?;
    let k = choose_k(train.len());

    let mut cfg = TrainConfig::new(Method::LmMining);
    cfg.lr = lr;
    cfg.batch_size = batch;
    cfg.k = Some(k);
    cfg.seed = 1;
    let net = EmbeddingNet::new(NetSpec::mlp(8, &[64, 16])?, 2);
    let mut trainer = Trainer::new(net, cfg, train.num_classes())?;
    for _ in 0..200 {
        let r = trainer.run_epoch(&train)?;
        let active = r.hinge_active_fraction.unwrap_or(1.0);
        println!("epoch {:>3} loss {:>12.4} active {:.4}", r.epoch, r.mean_loss, active);
        if active < 0.01 {
            break;
        }
    }
    let emb = trainer.net().embed(train.samples())?;
    let queries = trainer.net().embed(test.samples())?;
    for reading in [Reading::Squared, Reading::Euclidean] {
        let opt = check_optimal_condition(&emb, train.labels(), k, 3.0, 1e-3, reading)?;
        println!(
            "{reading:?}: {} of {} anchors violate, worst residual {:?}",
            opt.violations.len(),
            opt.checked,
            opt.worst_residual()
        );
    }
    let p = purity_check(&emb, train.labels(), &queries, k)?;
    println!(
        "queries {}: {} pure, {} impure, {} outliers (purity {:.4})",
        p.n_queries,
        p.pure_count,
        p.impure_count,
        p.outlier_count,
        p.purity()
    );
    Ok(())
}
