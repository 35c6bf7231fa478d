//! Triplet losses and their gradients with respect to the embeddings.
//!
//! `D` below is always the squared Euclidean distance between embeddings.
//! The local margin `c_b · d_ak_pos` uses the snapshot radius as a constant:
//! no gradient flows through it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean_and_var, sq_dist, Matrix, Vector};
use crate::mining::Triplet;

/// Default fixed margin of the max-margin baseline.
pub const DEFAULT_FIXED_MARGIN: f64 = 1_000_000.0;
/// Default `ε` added to the local margin.
pub const DEFAULT_EPS: f64 = 1e-3;

/// Which variance multiplies `w_sd` in the combined loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdVariance {
    /// `w_sd · σ²_d`, the variance of anchor-negative distances.
    Negative,
    /// `w_sd · σ²_s`, the regularizer as literally typeset (σ²_s twice).
    LiteralPositive,
}

/// Reading of the `w_sd` term used unless a config overrides it.
pub const DEFAULT_SD_VARIANCE: SdVariance = SdVariance::Negative;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub w_lm: f64,
    pub w_ms: f64,
    pub w_md: f64,
    pub w_ss: f64,
    pub w_sd: f64,
    pub c_b: f64,
    pub eps: f64,
    pub fixed_margin: f64,
    #[serde(default = "default_sd_variance")]
    pub sd_variance: SdVariance,
}

fn default_sd_variance() -> SdVariance {
    DEFAULT_SD_VARIANCE
}

impl LossWeights {
    /// Weights used for the MNIST experiments.
    pub fn mnist() -> Self {
        LossWeights {
            w_lm: 1000.0,
            w_ms: 1.0,
            w_md: 1.0,
            w_ss: 0.0,
            w_sd: 1.0,
            c_b: 3.0,
            eps: DEFAULT_EPS,
            fixed_margin: DEFAULT_FIXED_MARGIN,
            sd_variance: DEFAULT_SD_VARIANCE,
        }
    }

    /// Only the hinge term, with unit weight.
    pub fn hinge_only() -> Self {
        LossWeights {
            w_lm: 1.0,
            w_ms: 0.0,
            w_md: 0.0,
            w_ss: 0.0,
            w_sd: 0.0,
            ..Self::mnist()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_lm, self.w_ms, self.w_md, self.w_ss, self.w_sd];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and non-negative".into()));
        }
        if !(self.c_b >= 3.0) || !self.c_b.is_finite() {
            return Err(Error::Config(format!("c_b must be >= 3, got {}", self.c_b)));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
        }
        if !(self.fixed_margin >= 0.0) || !self.fixed_margin.is_finite() {
            return Err(Error::Config("fixed margin must be non-negative".into()));
        }
        Ok(())
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::mnist()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLossResult {
    pub value: f64,
    pub grad_a: Vector,
    pub grad_p: Vector,
    pub grad_n: Vector,
    /// The hinge argument was strictly positive.
    pub active: bool,
}

fn hinge_triplet(xa: &[f64], xp: &[f64], xn: &[f64], margin: f64) -> Result<TripletLossResult> {
    let d_ap = sq_dist(xa, xp)?;
    let d_an = sq_dist(xa, xn)?;
    let arg = d_ap - d_an + margin;
    let dim = xa.len();
    if dim == 0 {
        return Err(Error::EmptySample);
    }
    if !(arg > 0.0) {
        return Ok(TripletLossResult {
            value: 0.0,
            grad_a: Vector::zeros(dim),
            grad_p: Vector::zeros(dim),
            grad_n: Vector::zeros(dim),
            active: false,
        });
    }
    let mut ga = vec![0.0; dim];
    let mut gp = vec![0.0; dim];
    let mut gn = vec![0.0; dim];
    for i in 0..dim {
        ga[i] = 2.0 * (xn[i] - xp[i]);
        gp[i] = -2.0 * (xa[i] - xp[i]);
        gn[i] = 2.0 * (xa[i] - xn[i]);
    }
    Ok(TripletLossResult {
        value: arg,
        grad_a: Vector::new(ga)?,
        grad_p: Vector::new(gp)?,
        grad_n: Vector::new(gn)?,
        active: true,
    })
}

/// `max(0, D_ap - D_an + m)`.
pub fn fixed_margin_loss(xa: &[f64], xp: &[f64], xn: &[f64], m: f64) -> Result<TripletLossResult> {
    if !m.is_finite() {
        return Err(Error::InvalidArgument("margin must be finite".into()));
    }
    hinge_triplet(xa, xp, xn, m)
}

/// `max(0, D_ap - D_an + c_b · d_ak_pos + eps)` with `d_ak_pos` taken from
/// the epoch's neighborhood snapshot.
pub fn local_margin_loss(
    xa: &[f64],
    xp: &[f64],
    xn: &[f64],
    d_ak_pos: f64,
    c_b: f64,
    eps: f64,
) -> Result<TripletLossResult> {
    if !(d_ak_pos >= 0.0) || !d_ak_pos.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "snapshot radius must be a finite non-negative number, got {d_ak_pos}"
        )));
    }
    hinge_triplet(xa, xp, xn, c_b * d_ak_pos + eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub mu_s: f64,
    pub mu_d: f64,
    pub var_s: f64,
    pub var_d: f64,
}

/// Per-triplet margin source for [`combined_loss`].
#[derive(Debug, Clone, Copy)]
pub enum Margins<'a> {
    /// `weights.fixed_margin` for every triplet.
    Fixed,
    /// One snapshot radius `d_ak_pos` per triplet; margin `c_b · r + eps`.
    Local(&'a [f64]),
}

#[derive(Debug, Clone)]
pub struct CombinedLoss {
    pub value: f64,
    /// Unweighted sum of hinge values.
    pub hinge_sum: f64,
    pub active: Vec<bool>,
    pub stats: BatchStats,
    /// Gradient with respect to every embedding row (zero for rows that no
    /// triplet references).
    pub grad: Matrix,
}

impl CombinedLoss {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }
}

/// Weighted hinge sum plus the distance-moment regularizers:
///
/// `w_lm Σ hinge + w_ms μ_s − w_md μ_d + w_ss σ²_s + w_sd σ²_d`
///
/// where the moments are taken over the batch's anchor-positive and
/// anchor-negative distances. Triplets index rows of `embeddings`.
pub fn combined_loss(
    embeddings: &Matrix,
    triplets: &[Triplet],
    margins: Margins<'_>,
    weights: &LossWeights,
) -> Result<CombinedLoss> {
    if triplets.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Margins::Local(r) = margins {
        if r.len() != triplets.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} margins for {} triplets",
                r.len(),
                triplets.len()
            )));
        }
        if r.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument("snapshot radii must be non-negative".into()));
        }
    }
    let rows = embeddings.rows();
    for t in triplets {
        let max = t.anchor.max(t.positive).max(t.negative);
        if max >= rows {
            return Err(Error::InvalidArgument(format!(
                "triplet index {max} out of range for {rows} embeddings"
            )));
        }
    }

    let b = triplets.len();
    let mut d_ap = Vec::with_capacity(b);
    let mut d_an = Vec::with_capacity(b);
    for t in triplets {
        let a = embeddings.row(t.anchor);
        d_ap.push(sq_dist(a, embeddings.row(t.positive))?);
        d_an.push(sq_dist(a, embeddings.row(t.negative))?);
    }
    let (mu_s, var_s) = mean_and_var(&d_ap)?;
    let (mu_d, var_d) = mean_and_var(&d_an)?;
    let stats = BatchStats {
        mu_s,
        mu_d,
        var_s,
        var_d,
    };

    let mut hinge_sum = 0.0;
    let mut active = Vec::with_capacity(b);
    for i in 0..b {
        let margin = match margins {
            Margins::Fixed => weights.fixed_margin,
            Margins::Local(r) => weights.c_b * r[i] + weights.eps,
        };
        let arg = d_ap[i] - d_an[i] + margin;
        let on = arg > 0.0;
        if on {
            hinge_sum += arg;
        }
        active.push(on);
    }

    let sd_var = match weights.sd_variance {
        SdVariance::Negative => var_d,
        SdVariance::LiteralPositive => var_s,
    };
    let value = weights.w_lm * hinge_sum + weights.w_ms * mu_s - weights.w_md * mu_d
        + weights.w_ss * var_s
        + weights.w_sd * sd_var;

    // dL/dD for every distance in the batch, then the chain rule into rows.
    let inv_b = 1.0 / b as f64;
    let mut grad = Matrix::zeros(rows, embeddings.cols());
    for (i, t) in triplets.iter().enumerate() {
        let h = if active[i] { weights.w_lm } else { 0.0 };
        let mut c_ap = h + weights.w_ms * inv_b + weights.w_ss * 2.0 * (d_ap[i] - mu_s) * inv_b;
        let mut c_an = -h - weights.w_md * inv_b;
        match weights.sd_variance {
            SdVariance::Negative => c_an += weights.w_sd * 2.0 * (d_an[i] - mu_d) * inv_b,
            SdVariance::LiteralPositive => c_ap += weights.w_sd * 2.0 * (d_ap[i] - mu_s) * inv_b,
        }
        accumulate_pair(&mut grad, embeddings, t.anchor, t.positive, c_ap);
        accumulate_pair(&mut grad, embeddings, t.anchor, t.negative, c_an);
    }

    if !value.is_finite() {
        return Err(Error::NonFinite("loss"));
    }
    Ok(CombinedLoss {
        value,
        hinge_sum,
        active,
        stats,
        grad,
    })
}

// d/dx ‖x_i - x_j‖² = 2 (x_i - x_j), d/dx_j = -2 (x_i - x_j)
fn accumulate_pair(grad: &mut Matrix, emb: &Matrix, i: usize, j: usize, coef: f64) {
    if coef == 0.0 || i == j {
        return;
    }
    let dim = emb.cols();
    let (xi, xj) = (emb.row(i), emb.row(j));
    let diff: Vec<f64> = (0..dim).map(|d| 2.0 * coef * (xi[d] - xj[d])).collect();
    for (g, v) in grad.row_mut(i).iter_mut().zip(&diff) {
        *g += v;
    }
    for (g, v) in grad.row_mut(j).iter_mut().zip(&diff) {
        *g -= v;
    }
}
