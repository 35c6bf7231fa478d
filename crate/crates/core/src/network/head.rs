use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gemm::{gemm, Op};
use crate::error::{Error, Result};
use crate::math::Matrix;

/// Linear classifier `logits = x W + b` on top of the embedding, used by
/// the end-to-end softmax baseline. `params` holds `W` (`[dim][classes]`)
/// followed by `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxHead {
    dim: usize,
    classes: usize,
    params: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HeadLoss {
    /// Mean cross-entropy over the batch.
    pub value: f64,
    pub grad_embeddings: Matrix,
    pub grad_params: Vec<f64>,
}

impl SoftmaxHead {
    /// Gaussian weights with std `sqrt(1 / dim)`, zero biases.
    pub fn new(dim: usize, classes: usize, seed: u64) -> Self {
        let mut head = SoftmaxHead::zeros(dim, classes);
        let normal = Normal::new(0.0, (1.0 / dim.max(1) as f64).sqrt()).expect("positive std");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in &mut head.params[..dim * classes] {
            *w = normal.sample(&mut rng);
        }
        head
    }

    pub fn zeros(dim: usize, classes: usize) -> Self {
        SoftmaxHead {
            dim,
            classes,
            params: vec![0.0; dim * classes + classes],
        }
    }

    pub fn from_params(dim: usize, classes: usize, params: Vec<f64>) -> Result<Self> {
        let head = SoftmaxHead { dim, classes, params };
        head.validate()?;
        Ok(head)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.classes < 2 {
            return Err(Error::ShapeMismatch(format!(
                "softmax head needs dim > 0 and >= 2 classes, got {}x{}",
                self.dim, self.classes
            )));
        }
        if self.params.len() != self.dim * self.classes + self.classes {
            return Err(Error::ShapeMismatch(format!(
                "softmax head {}x{} cannot hold {} parameters",
                self.dim,
                self.classes,
                self.params.len()
            )));
        }
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("softmax head"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim {
            return Err(Error::DimMismatch {
                expected: self.dim,
                got: x.cols(),
            });
        }
        let (w, b) = self.params.split_at(self.dim * self.classes);
        let mut z = vec![0.0; x.rows() * self.classes];
        gemm(Op::n(x.as_slice(), x.rows(), self.dim), Op::n(w, self.dim, self.classes), &mut z, 0.0);
        for row in z.chunks_exact_mut(self.classes) {
            for (v, &bias) in row.iter_mut().zip(b) {
                *v += bias;
            }
        }
        Ok(Matrix::from_raw(x.rows(), self.classes, z))
    }
}

/// Mean cross-entropy of the head's softmax over `labels`, with gradients
/// for both the embeddings and the head parameters. Each row's maximum
/// logit is subtracted before exponentiating.
pub fn softmax_head_loss(embeddings: &Matrix, labels: &[usize], head: &SoftmaxHead) -> Result<HeadLoss> {
    let n = embeddings.rows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} embeddings but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= head.classes) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: head.classes,
        });
    }
    let c = head.classes;
    let mut dz = head.logits(embeddings)?.into_vec();
    let mut total = 0.0;
    for (row, &y) in dz.chunks_exact_mut(c).zip(labels) {
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, v)| if v > bv { (i, v) } else { (bi, bv) });
        let shifted_y = row[y] - max;
        // exp(0) = 1 for the max logit; summing the rest separately keeps
        // ln(1 + rest) accurate when the rest is tiny
        let mut rest = 0.0;
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - max).exp();
            if i != arg {
                rest += *v;
            }
        }
        let sum = 1.0 + rest;
        total += rest.ln_1p() - shifted_y;
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    let value = total / n as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite("softmax loss"));
    }

    let (w, _) = head.params.split_at(head.dim * c);
    let mut grad_params = vec![0.0; head.params.len()];
    {
        let (gw, gb) = grad_params.split_at_mut(head.dim * c);
        gemm(Op::t(embeddings.as_slice(), n, head.dim), Op::n(&dz, n, c), gw, 0.0);
        for row in dz.chunks_exact(c) {
            for (g, &d) in gb.iter_mut().zip(row) {
                *g += d;
            }
        }
    }
    let mut gx = vec![0.0; n * head.dim];
    gemm(Op::n(&dz, n, c), Op::t(w, head.dim, c), &mut gx, 0.0);
    Ok(HeadLoss {
        value,
        grad_embeddings: Matrix::from_raw(n, head.dim, gx),
        grad_params,
    })
}
