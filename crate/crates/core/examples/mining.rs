//! Uniform, local and hard triplet sampling for the same anchor.

use lmtriplet::data::{make_blobs, BlobsConfig};
use lmtriplet::knn::{take_snapshot, Metric, NeighborIndex};
use lmtriplet::mining::{sample_hard, sample_local, sample_uniform, ClassIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> lmtriplet::Result<()> {
    let ds = make_blobs(&BlobsConfig::new(3, 30, 2, 2.0, 1.0, 4))?;
    let classes = ClassIndex::new(ds.labels());
    let index = NeighborIndex::build(ds.samples().clone(), ds.labels().to_vec(), Metric::Euclidean)?;
    let snap = take_snapshot(&index, 8, 0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let anchor = 0;
    println!("anchor {anchor}, label {}, neighborhood {:?}", ds.labels()[anchor], snap.neighbor_ids(anchor));
    for _ in 0..3 {
        let u = sample_uniform(&classes, anchor, &mut rng)?;
        let l = sample_local(&snap, &classes, anchor, &mut rng)?;
        println!("uniform {:?}  local {:?}", (u.positive, u.negative), (l.positive, l.negative));
    }
    let h = sample_hard(ds.samples(), ds.labels(), anchor)?;
    println!("hard: farthest positive {}, nearest negative {}", h.positive, h.negative);
    Ok(())
}
