//! 2-D PCA of a blob embedding written as a scatter CSV
//! (`query_id,x,y,label,status`).

use std::path::PathBuf;

use lmtriplet::data::{make_blobs, BlobsConfig, Split};
use lmtriplet::verify::{pca_reduce, purity_check, scatter_rows, write_scatter_csv, QueryStatus};

fn main() -> lmtriplet::Result<()> {
    let all = make_blobs(&BlobsConfig::new(3, 150, 6, 5.0, 1.0, 2))?;
    let (train, test) = all.partition(300, Split::Train, Split::Test, 2)?;

    let pca = pca_reduce(train.samples(), 2)?;
    println!(
        "explained variance {:?}, ratio {:?}",
        pca.explained_variance, pca.explained_ratio
    );
    let purity = purity_check(train.samples(), train.labels(), test.samples(), 12)?;
    let statuses: Vec<QueryStatus> = purity.queries.iter().map(|q| q.status).collect();
    let rows = scatter_rows(test.samples(), test.labels(), Some(&statuses))?;
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("scatter.csv"), PathBuf::from);
    write_scatter_csv(&out, &rows)?;
    println!(
        "{} rows to {} ({} pure, {} impure, {} outliers)",
        rows.len(),
        out.display(),
        purity.pure_count,
        purity.impure_count,
        purity.outlier_count
    );
    Ok(())
}
