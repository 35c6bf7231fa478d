//! Synthetic blobs, stratified splits, and the binary dataset cache.

use lmtriplet::data::{make_blobs_with_centers, BlobsConfig, Dataset};

fn main() -> lmtriplet::Result<()> {
    let (ds, centers) = make_blobs_with_centers(&BlobsConfig::new(4, 100, 3, 5.0, 1.0, 7))?;
    println!("{} samples, class counts {:?}", ds.len(), ds.class_counts());
    for c in 0..centers.rows() {
        println!("center {c}: {:?}", centers.row(c));
    }
    let (train, val, test) = ds.split(0.7, 0.1, 3)?;
    println!("split sizes {} / {} / {}", train.len(), val.len(), test.len());
    println!("train class counts {:?}", train.class_counts());

    let dir = std::env::temp_dir().join("lmtriplet-data-example");
    std::fs::create_dir_all(&dir).map_err(|e| lmtriplet::Error::Io { path: dir.clone(), source: e })?;
    let path = dir.join("train.bin");
    train.save_cache(&path)?;
    let back = Dataset::load_cache(&path)?;
    println!("cache round trip: fingerprint {} equal {}", &back.fingerprint()[..16], back == train);
    Ok(())
}
