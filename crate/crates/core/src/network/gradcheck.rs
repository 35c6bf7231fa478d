//! Central-difference checks of [`EmbeddingNet::backward`].
//!
//! The probe loss is `sum(upstream * f(x))`, whose exact parameter gradient
//! is `backward(upstream)`. The network is piecewise linear in any single
//! parameter, so a difference whose two probe points sit on the same linear
//! piece is exact up to rounding; the step shrinks until that holds.

use crate::math::Matrix;

use super::{EmbeddingNet, ForwardCache};

/// `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn probe(net: &EmbeddingNet, x: &Matrix, upstream: &Matrix) -> crate::Result<(f64, ForwardCache)> {
    let (y, cache) = net.forward(x)?;
    let v = y.as_slice().iter().zip(upstream.as_slice()).map(|(a, b)| a * b).sum();
    Ok((v, cache))
}

/// Central difference for parameter `j`, starting at `h = 1e-4` and
/// dividing by ten down to `1e-9`. `None` when every step straddles a kink.
pub fn fd_param(net: &mut EmbeddingNet, j: usize, x: &Matrix, upstream: &Matrix) -> crate::Result<Option<f64>> {
    let orig = net.params()[j];
    let mut h = 1e-4;
    while h >= 1e-9 {
        net.params_mut()[j] = orig + h;
        let (lp, cp) = probe(net, x, upstream)?;
        net.params_mut()[j] = orig - h;
        let (lm, cm) = probe(net, x, upstream)?;
        net.params_mut()[j] = orig;
        if cp.same_branches(&cm) {
            return Ok(Some((lp - lm) / (2.0 * h)));
        }
        h /= 10.0;
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Parameters for which no kink-free step was found.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Compares `backward` against central differences on the given
/// parameter indices.
pub fn check_params(
    net: &mut EmbeddingNet,
    x: &Matrix,
    upstream: &Matrix,
    indices: impl IntoIterator<Item = usize>,
) -> crate::Result<GradCheck> {
    let (_, cache) = net.forward(x)?;
    let g = net.backward(&cache, upstream)?;
    drop(cache);
    let mut report = GradCheck {
        checked: 0,
        skipped: 0,
        max_rel_err: 0.0,
    };
    for j in indices {
        match fd_param(net, j, x, upstream)? {
            Some(fd) => {
                report.checked += 1;
                report.max_rel_err = report.max_rel_err.max(rel_err(g[j], fd));
            }
            None => report.skipped += 1,
        }
    }
    Ok(report)
}
