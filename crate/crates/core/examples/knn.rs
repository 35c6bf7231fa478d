//! Exact KNN search, majority-vote classification, and the per-anchor
//! neighborhood snapshot used for local margins.

use lmtriplet::data::{make_blobs, BlobsConfig};
use lmtriplet::knn::{choose_k, is_outlier, take_snapshot, Metric, NeighborIndex};

fn main() -> lmtriplet::Result<()> {
    let ds = make_blobs(&BlobsConfig::new(3, 50, 2, 6.0, 1.0, 1))?;
    let index = NeighborIndex::build(ds.samples().clone(), ds.labels().to_vec(), Metric::Euclidean)?;
    let k = choose_k(ds.len());
    println!("{} points, k = {k}, kd-tree: {}", index.len(), index.uses_tree());

    let q = [0.5, -0.5];
    for nb in index.query_knn(&q, 3, None)? {
        println!("neighbor {:>3}  dist {:.4}  label {}", nb.id, nb.dist, ds.labels()[nb.id]);
    }
    let c = index.knn_classify(&q, k)?;
    println!("class {} with posterior {:?}", c.class, c.posterior());

    let snap = take_snapshot(&index, k, 0)?;
    println!(
        "anchor 0: d_ak {:.4}, d_ak_pos {:?}; mean d_ak {:.4}, max d_ak {:.4}",
        snap.d_ak(0),
        snap.d_ak_pos(0),
        snap.mean_d_ak(),
        snap.max_d_ak()
    );
    for probe in [[0.0, 0.0], [100.0, 100.0]] {
        println!("{probe:?} outlier: {}", is_outlier(&snap, &index, &probe)?);
    }
    Ok(())
}
