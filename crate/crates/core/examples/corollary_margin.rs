//! Max-margin baseline on blobs: after training, measure the largest
//! neighborhood radius, pick a fixed margin above three times it, and check
//! whether the embedding clears that margin everywhere.

use lmtriplet::data::{make_blobs, BlobsConfig, Split};
use lmtriplet::knn::choose_k;
use lmtriplet::network::{EmbeddingNet, NetSpec};
use lmtriplet::training::{Method, TrainConfig, Trainer};
use lmtriplet::verify::{corollary_margin_check, purity_check};

fn main() -> lmtriplet::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let epochs = args.first().copied().unwrap_or(30.0) as usize;
    let lr = args.get(1).copied().unwrap_or(1e-3);
    let all = make_blobs(&BlobsConfig::new(4, 300, 8, 5.0, 1.0, 11))?;
    let (train, test) = all.partition(800, Split::Train, Split::Test, 11)?;
    let k = choose_k(train.len());

    let mut cfg = TrainConfig::new(Method::Mm);
    cfg.lr = lr;
    cfg.batch_size = 64;
    cfg.e_max = epochs;
    cfg.seed = 1;
    let net = EmbeddingNet::new(NetSpec::mlp(8, &[64, 16])?, 2);
    let mut trainer = Trainer::new(net, cfg, train.num_classes())?;
    let outcome = trainer.train(&train, None, |r| {
        println!(
            "epoch {:>3} loss {:>16.4} active {:.4}",
            r.epoch,
            r.mean_loss,
            r.hinge_active_fraction.unwrap_or(1.0)
        )
    })?;
    println!("stopped: {:?}", outcome.stop);

    let emb = trainer.net().embed(train.samples())?;
    let probe = corollary_margin_check(&emb, train.labels(), k, 0.0)?;
    let m = 3.0 * probe.max_d_ak * (1.0 + 1e-9) + 1e-12;
    let r = corollary_margin_check(&emb, train.labels(), k, m)?;
    println!(
        "max d_ak {:.4}, m {:.4}: sufficient {}, anchors failing the margin {}, purity implied {}",
        r.max_d_ak, m, r.margin_sufficient, r.hinge_violations, r.purity_implied
    );
    let queries = trainer.net().embed(test.samples())?;
    let p = purity_check(&emb, train.labels(), &queries, k)?;
    println!(
        "queries {}: {} pure, {} impure, {} outliers",
        p.n_queries, p.pure_count, p.impure_count, p.outlier_count
    );
    Ok(())
}
