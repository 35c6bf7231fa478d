//! Executable checks of the neighborhood-purity guarantee on a trained
//! embedding, plus PCA projection and CSV export for scatter plots.
//!
//! Distances here are Euclidean unless a function says otherwise: the
//! purity argument chains triangle inequalities, which squared distances
//! do not satisfy.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::{take_snapshot, Metric, NeighborIndex, NeighborhoodSnapshot};
use crate::math::{euclid_dist, sq_dist_unchecked, Matrix};

/// Units in which the optimal condition is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reading {
    /// `min_n |a-n| >= max_p |a-p| + c_b d_ak + eps`.
    Euclidean,
    /// Same inequality with squared distances on both sides, the units the
    /// training hinge uses; `d_ak` stays a plain distance.
    Squared,
}

/// An anchor for which the optimal condition fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub anchor: usize,
    /// `max_p D(a,p) + c_b d_ak + eps - min_n D(a,n)`; positive here.
    pub residual: f64,
    pub max_pos: f64,
    pub min_neg: f64,
    pub d_ak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub k: usize,
    pub reading: Reading,
    pub checked: usize,
    /// Anchors whose class has fewer than `k + 1` members.
    pub skipped: Vec<usize>,
    pub violations: Vec<Violation>,
    /// Residual of every anchor (`None` for skipped ones), same sign
    /// convention as [`Violation::residual`].
    pub residuals: Vec<Option<f64>>,
}

impl OptimalityReport {
    pub fn worst_residual(&self) -> Option<f64> {
        self.residuals.iter().flatten().copied().reduce(f64::max)
    }
}

fn class_sizes(labels: &[usize]) -> Vec<usize> {
    let mut sizes = vec![0; labels.iter().max().map_or(0, |m| m + 1)];
    for &l in labels {
        sizes[l] += 1;
    }
    sizes
}

fn check_inputs(embeddings: &Matrix, labels: &[usize], k: usize) -> Result<()> {
    if labels.len() != embeddings.rows() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings but {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    if k == 0 || k >= embeddings.rows() {
        return Err(Error::KExceedsN {
            k,
            n: embeddings.rows().saturating_sub(1),
        });
    }
    Ok(())
}

/// For every anchor: the farthest positive, the nearest negative, and
/// whether the nearest negative clears the farthest positive by
/// `c_b * d_ak + eps`.
pub fn check_optimal_condition(
    embeddings: &Matrix,
    labels: &[usize],
    k: usize,
    c_b: f64,
    eps: f64,
    reading: Reading,
) -> Result<OptimalityReport> {
    check_inputs(embeddings, labels, k)?;
    let index = NeighborIndex::build(embeddings.clone(), labels.to_vec(), Metric::Euclidean)?;
    let sizes = class_sizes(labels);
    let n = labels.len();
    let mut report = OptimalityReport {
        k,
        reading,
        checked: 0,
        skipped: Vec::new(),
        violations: Vec::new(),
        residuals: vec![None; n],
    };
    for a in 0..n {
        if sizes[labels[a]] < k + 1 {
            report.skipped.push(a);
            continue;
        }
        let xa = embeddings.row(a);
        let d_ak = index.query_knn(xa, k, Some(a))?.last().expect("k >= 1").dist;
        let (mut max_pos, mut min_neg) = (0.0f64, f64::INFINITY);
        for (j, xj) in embeddings.iter_rows().enumerate() {
            if j == a {
                continue;
            }
            let d2 = sq_dist_unchecked(xa, xj);
            if labels[j] == labels[a] {
                max_pos = max_pos.max(d2);
            } else {
                min_neg = min_neg.min(d2);
            }
        }
        if reading == Reading::Euclidean {
            max_pos = max_pos.sqrt();
            min_neg = min_neg.sqrt();
        }
        let residual = max_pos + c_b * d_ak + eps - min_neg;
        report.checked += 1;
        report.residuals[a] = Some(residual);
        if residual > 0.0 {
            report.violations.push(Violation {
                anchor: a,
                residual,
                max_pos,
                min_neg,
                d_ak,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Pure,
    Impure,
    Outlier,
}

impl QueryStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            QueryStatus::Pure => "pure",
            QueryStatus::Impure => "impure",
            QueryStatus::Outlier => "outlier",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: usize,
    pub nearest_anchor: usize,
    /// Distance from the query to its nearest anchor.
    pub dist: f64,
    /// Neighborhood radius `d_ak` of that anchor.
    pub anchor_radius: f64,
    /// Label of the nearest anchor.
    pub label: usize,
    pub status: QueryStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub k: usize,
    pub n_queries: usize,
    pub outlier_count: usize,
    pub pure_count: usize,
    pub impure_count: usize,
    pub queries: Vec<QueryRecord>,
    /// Optimal-condition failures on the training embedding, when checked.
    pub violations: Vec<Violation>,
}

impl PurityReport {
    /// Pure fraction among non-outlier queries; 1 when every query is an
    /// outlier.
    pub fn purity(&self) -> f64 {
        let inliers = self.n_queries - self.outlier_count;
        if inliers == 0 {
            1.0
        } else {
            self.pure_count as f64 / inliers as f64
        }
    }
}

/// Classifies each query as an outlier (farther from its nearest training
/// point `a` than `d_ak(a)`), pure (all k nearest training points carry
/// `label(a)`) or impure.
pub fn purity_check(
    train: &Matrix,
    train_labels: &[usize],
    queries: &Matrix,
    k: usize,
) -> Result<PurityReport> {
    check_inputs(train, train_labels, k)?;
    if queries.rows() > 0 && queries.cols() != train.cols() {
        return Err(Error::DimMismatch {
            expected: train.cols(),
            got: queries.cols(),
        });
    }
    let index = NeighborIndex::build(train.clone(), train_labels.to_vec(), Metric::Euclidean)?;
    let snapshot = take_snapshot(&index, k, 0)?;
    purity_with_snapshot(&index, &snapshot, queries)
}

fn purity_with_snapshot(
    index: &NeighborIndex,
    snapshot: &NeighborhoodSnapshot,
    queries: &Matrix,
) -> Result<PurityReport> {
    let k = snapshot.k;
    let labels = index.labels();
    let mut report = PurityReport {
        k,
        n_queries: queries.rows(),
        outlier_count: 0,
        pure_count: 0,
        impure_count: 0,
        queries: Vec::with_capacity(queries.rows()),
        violations: Vec::new(),
    };
    for (qid, q) in queries.iter_rows().enumerate() {
        let nearest = index.query_knn(q, 1, None)?[0];
        let radius = snapshot.d_ak(nearest.id);
        let label = labels[nearest.id];
        let status = if nearest.dist > radius {
            report.outlier_count += 1;
            QueryStatus::Outlier
        } else if index.query_knn(q, k, None)?.iter().all(|nb| labels[nb.id] == label) {
            report.pure_count += 1;
            QueryStatus::Pure
        } else {
            report.impure_count += 1;
            QueryStatus::Impure
        };
        report.queries.push(QueryRecord {
            query_id: qid,
            nearest_anchor: nearest.id,
            dist: nearest.dist,
            anchor_radius: radius,
            label,
            status,
        });
    }
    Ok(report)
}

/// Optimal-condition check on the training embedding followed by the
/// purity check of `queries`, in one report.
pub fn verify_theorem(
    train: &Matrix,
    train_labels: &[usize],
    queries: &Matrix,
    k: usize,
    c_b: f64,
    eps: f64,
) -> Result<(OptimalityReport, PurityReport)> {
    let opt = check_optimal_condition(train, train_labels, k, c_b, eps, Reading::Euclidean)?;
    let mut purity = purity_check(train, train_labels, queries, k)?;
    purity.violations = opt.violations.clone();
    Ok((opt, purity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorollaryReport {
    pub k: usize,
    pub m: f64,
    pub max_d_ak: f64,
    /// `m > 3 max_a d_ak`.
    pub margin_sufficient: bool,
    /// Anchors failing `min_n |a-n| >= max_p |a-p| + m`.
    pub hinge_violations: usize,
    /// Margin sufficient and no anchor violates the fixed-margin condition.
    pub purity_implied: bool,
}

/// Whether a fixed margin `m` is large enough to stand in for the local
/// one, and whether the embedding satisfies the fixed-margin condition.
pub fn corollary_margin_check(embeddings: &Matrix, labels: &[usize], k: usize, m: f64) -> Result<CorollaryReport> {
    let opt = check_optimal_condition(embeddings, labels, k, 0.0, m, Reading::Euclidean)?;
    let index = NeighborIndex::build(embeddings.clone(), labels.to_vec(), Metric::Euclidean)?;
    let mut max_d_ak = 0.0f64;
    for a in 0..labels.len() {
        let d = index.query_knn(embeddings.row(a), k, Some(a))?.last().expect("k >= 1").dist;
        max_d_ak = max_d_ak.max(d);
    }
    let margin_sufficient = m > 3.0 * max_d_ak;
    let hinge_violations = opt.violations.len() + opt.skipped.len();
    Ok(CorollaryReport {
        k,
        m,
        max_d_ak,
        margin_sufficient,
        hinge_violations,
        purity_implied: margin_sufficient && hinge_violations == 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub projected: Matrix,
    /// One principal direction per row, unit length.
    pub components: Matrix,
    /// Eigenvalues of the sample covariance, descending.
    pub explained_variance: Vec<f64>,
    /// `explained_variance / total variance`.
    pub explained_ratio: Vec<f64>,
    pub mean: Vec<f64>,
}

/// Projects mean-centered `vectors` onto the top `out_dim` eigenvectors of
/// their covariance. Each eigenvector's largest-magnitude entry is made
/// positive.
pub fn pca_reduce(vectors: &Matrix, out_dim: usize) -> Result<Pca> {
    let (n, d) = (vectors.rows(), vectors.cols());
    if out_dim == 0 || out_dim > d || out_dim > n {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {out_dim} components of {n} samples in {d} dimensions"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in vectors.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| vectors.row(i)[j] - mean[j]);
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = (centered.transpose() * &centered) / denom;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(out_dim * d);
    let mut explained_variance = Vec::with_capacity(out_dim);
    for &c in order.iter().take(out_dim) {
        let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let pivot = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[pivot] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.extend(v);
        explained_variance.push(eig.eigenvalues[c].max(0.0));
    }
    let comp = DMatrix::from_row_slice(out_dim, d, &components);
    let proj = &centered * comp.transpose();
    let projected: Vec<f64> = (0..n).flat_map(|i| (0..out_dim).map(move |j| (i, j))).map(|(i, j)| proj[(i, j)]).collect();
    let explained_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(Pca {
        projected: Matrix::new(n, out_dim, projected)?,
        components: Matrix::new(out_dim, d, components)?,
        explained_variance,
        explained_ratio,
        mean,
    })
}

/// One line of a scatter CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub query_id: usize,
    pub x: f64,
    pub y: f64,
    pub label: usize,
    /// `pure`, `impure`, `outlier`, or `unchecked` for points that went
    /// through no purity check.
    pub status: String,
}

/// 2-D PCA coordinates of `vectors` with their labels and optional purity
/// status per row.
pub fn scatter_rows(vectors: &Matrix, labels: &[usize], statuses: Option<&[QueryStatus]>) -> Result<Vec<ScatterRow>> {
    if labels.len() != vectors.rows() || statuses.is_some_and(|s| s.len() != vectors.rows()) {
        return Err(Error::ShapeMismatch("scatter inputs differ in length".into()));
    }
    let pca = pca_reduce(vectors, 2.min(vectors.cols()))?;
    Ok((0..vectors.rows())
        .map(|i| {
            let p = pca.projected.row(i);
            ScatterRow {
                query_id: i,
                x: p[0],
                y: p.get(1).copied().unwrap_or(0.0),
                label: labels[i],
                status: statuses.map_or("unchecked", |s| s[i].as_str()).to_string(),
            }
        })
        .collect())
}

pub fn write_scatter_csv(path: &Path, rows: &[ScatterRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    if rows.is_empty() {
        w.write_record(["query_id", "x", "y", "label", "status"])
            .map_err(|e| csv_err(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

/// Euclidean distance matrix helper used by tests and examples.
pub fn pairwise_distances(a: &Matrix) -> Result<Vec<Vec<f64>>> {
    a.iter_rows()
        .map(|x| a.iter_rows().map(|y| euclid_dist(x, y)).collect())
        .collect()
}
