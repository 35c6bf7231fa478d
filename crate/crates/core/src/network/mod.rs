//! The embedding network: a stack of same-padded convolutions, 2x2 max
//! pools and dense layers with hand-written backward passes.
//!
//! Activations use NHWC layout, one sample per matrix row, so flattening
//! is free and a dense layer sees exactly the row a conv stack produced.

mod adam;
mod checkpoint;
pub mod gradcheck;
pub(crate) mod gemm;
mod head;
mod pool;

use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Matrix;
use gemm::{gemm, Op};

pub use adam::{adam_step, AdamState};
pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use head::{softmax_head_loss, HeadLoss, SoftmaxHead};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

// im2col buffers are built this many values at a time.
// Conv layers work on chunks of samples whose patch matrix and output both
// stay under this many values.
const CHUNK_BUDGET: usize = 1 << 18;
const EMBED_CHUNK: usize = 256;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    LeakyRelu,
    None,
}

impl Activation {
    fn apply(self, v: &mut [f64]) {
        if self == Activation::LeakyRelu {
            for x in v {
                *x = x.max(LEAKY_SLOPE * *x);
            }
        }
    }

    /// Turns an upstream gradient into a pre-activation gradient. The
    /// output sign equals the input sign, so the cached output suffices;
    /// an input of exactly zero takes the 0.01 branch.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        if self == Activation::LeakyRelu {
            for (g, &y) in grad.iter_mut().zip(out) {
                if y <= 0.0 {
                    *g *= LEAKY_SLOPE;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride 1, zero "same" padding.
    Conv2d {
        kh: usize,
        kw: usize,
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
    },
    /// 2x2 window, stride 2; an odd trailing row or column is dropped.
    MaxPool2,
    Flatten,
    Dense {
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn conv(kh: usize, kw: usize, in_channels: usize, out_channels: usize) -> Self {
        LayerSpec::Conv2d {
            kh,
            kw,
            in_channels,
            out_channels,
            activation: Activation::LeakyRelu,
        }
    }

    pub fn dense(in_dim: usize, out_dim: usize) -> Self {
        LayerSpec::Dense {
            in_dim,
            out_dim,
            activation: Activation::LeakyRelu,
        }
    }

    /// (weight count, bias count)
    fn param_shape(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv2d {
                kh,
                kw,
                in_channels,
                out_channels,
                ..
            } => (kh * kw * in_channels * out_channels, out_channels),
            LayerSpec::Dense { in_dim, out_dim, .. } => (in_dim * out_dim, out_dim),
            LayerSpec::MaxPool2 | LayerSpec::Flatten => (0, 0),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d { kh, kw, in_channels, .. } => kh * kw * in_channels,
            LayerSpec::Dense { in_dim, .. } => in_dim,
            _ => 0,
        }
    }
}

/// Height, width, channels of one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl Shape {
    pub fn new(h: usize, w: usize, c: usize) -> Self {
        Shape { h, w, c }
    }

    pub fn flat(dim: usize) -> Self {
        Shape { h: 1, w: 1, c: dim }
    }

    pub fn size(&self) -> usize {
        self.h * self.w * self.c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
struct RawNetSpec {
    input: Shape,
    layers: Vec<LayerSpec>,
}

/// Input shape plus layer list. Shapes are checked when the spec is built,
/// so a network never discovers a mismatch mid-training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawNetSpec")]
pub struct NetSpec {
    input: Shape,
    layers: Vec<LayerSpec>,
    #[serde(skip)]
    shapes: Vec<Shape>,
}

impl TryFrom<RawNetSpec> for NetSpec {
    type Error = Error;
    fn try_from(raw: RawNetSpec) -> Result<Self> {
        NetSpec::new(raw.input, raw.layers)
    }
}

impl NetSpec {
    pub fn new(input: Shape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.size() == 0 {
            return Err(Error::ShapeMismatch("input shape has a zero extent".into()));
        }
        if layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        let mut shapes = vec![input];
        let mut cur = input;
        for (i, layer) in layers.iter().enumerate() {
            let bad = |why: String| Error::ShapeMismatch(format!("layer {i}: {why}"));
            cur = match *layer {
                LayerSpec::Conv2d {
                    kh,
                    kw,
                    in_channels,
                    out_channels,
                    ..
                } => {
                    if kh == 0 || kw == 0 || out_channels == 0 {
                        return Err(bad("conv extents must be positive".into()));
                    }
                    if in_channels != cur.c {
                        return Err(bad(format!("expects {in_channels} channels, receives {}", cur.c)));
                    }
                    Shape::new(cur.h, cur.w, out_channels)
                }
                LayerSpec::MaxPool2 => {
                    if cur.h < 2 || cur.w < 2 {
                        return Err(bad(format!("cannot pool a {}x{} map", cur.h, cur.w)));
                    }
                    Shape::new(cur.h / 2, cur.w / 2, cur.c)
                }
                LayerSpec::Flatten => Shape::flat(cur.size()),
                LayerSpec::Dense { in_dim, out_dim, .. } => {
                    if out_dim == 0 {
                        return Err(bad("dense output must be positive".into()));
                    }
                    if cur.h != 1 || cur.w != 1 {
                        return Err(bad("dense layer needs a flattened input".into()));
                    }
                    if in_dim != cur.c {
                        return Err(bad(format!("expects {in_dim} inputs, receives {}", cur.c)));
                    }
                    Shape::flat(out_dim)
                }
            };
            shapes.push(cur);
        }
        Ok(NetSpec { input, layers, shapes })
    }

    /// conv 3x3x32, pool, conv 3x3x64, pool, flatten (3136), dense 128;
    /// leaky ReLU after every conv and dense layer.
    pub fn mnist() -> Self {
        NetSpec::new(
            Shape::new(28, 28, 1),
            vec![
                LayerSpec::conv(3, 3, 1, 32),
                LayerSpec::MaxPool2,
                LayerSpec::conv(3, 3, 32, 64),
                LayerSpec::MaxPool2,
                LayerSpec::Flatten,
                LayerSpec::dense(7 * 7 * 64, 128),
            ],
        )
        .expect("reference architecture chains")
    }

    /// Fully connected stack `input_dim -> widths[0] -> ... -> widths[last]`,
    /// leaky ReLU throughout.
    pub fn mlp(input_dim: usize, widths: &[usize]) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for &w in widths {
            layers.push(LayerSpec::dense(prev, w));
            prev = w;
        }
        NetSpec::new(Shape::flat(input_dim), layers)
    }

    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Shape entering each layer, followed by the output shape.
    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_dim(&self) -> usize {
        self.input.size()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().expect("non-empty").size()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                let (w, b) = l.param_shape();
                w + b
            })
            .sum()
    }
}

/// Parameters θ for a [`NetSpec`], stored as one flat array: for each
/// parametrized layer in order, its weights then its biases. Conv weights
/// are laid out `[kh][kw][in][out]`, dense weights `[in][out]`.
#[derive(Debug, Clone)]
pub struct EmbeddingNet {
    spec: NetSpec,
    offsets: Vec<usize>,
    params: Vec<f64>,
    seed: u64,
    version: u64,
}

/// Activations recorded by [`EmbeddingNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    n: usize,
    // acts[i] enters layer i; the last entry is the network output
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    // layers whose output went through a leaky ReLU
    gated: Vec<bool>,
}

impl Drop for ForwardCache {
    fn drop(&mut self) {
        for a in self.acts.drain(..) {
            pool::recycle(a);
        }
    }
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    /// True when both passes took the same branch at every leaky ReLU and
    /// picked the same element in every pooling window, i.e. the network
    /// is linear in its parameters along the segment between them.
    pub fn same_branches(&self, other: &ForwardCache) -> bool {
        if self.n != other.n || self.gated != other.gated || self.argmax != other.argmax {
            return false;
        }
        self.gated.iter().enumerate().filter(|(_, &g)| g).all(|(i, _)| {
            self.acts[i + 1]
                .iter()
                .zip(&other.acts[i + 1])
                .all(|(a, b)| (*a > 0.0) == (*b > 0.0))
        })
    }
}

impl EmbeddingNet {
    /// He-initialized weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn new(spec: NetSpec, seed: u64) -> Self {
        let mut net = EmbeddingNet::zeros(spec);
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in 0..net.spec.layers.len() {
            let fan_in = net.spec.layers[i].fan_in();
            if fan_in == 0 {
                continue;
            }
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            let (w, _) = net.layer_params_mut(i).expect("parametrized layer");
            for v in w {
                *v = normal.sample(&mut rng);
            }
        }
        net
    }

    pub fn zeros(spec: NetSpec) -> Self {
        let mut offsets = Vec::with_capacity(spec.layers.len() + 1);
        let mut total = 0;
        for l in &spec.layers {
            offsets.push(total);
            let (w, b) = l.param_shape();
            total += w + b;
        }
        offsets.push(total);
        EmbeddingNet {
            spec,
            offsets,
            params: vec![0.0; total],
            seed: 0,
            version: fresh_version(),
        }
    }

    pub fn from_params(spec: NetSpec, params: Vec<f64>, seed: u64) -> Result<Self> {
        let mut net = EmbeddingNet::zeros(spec);
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "network has {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        net.params = params;
        net.seed = seed;
        Ok(net)
    }

    pub fn spec(&self) -> &NetSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Any cache recorded before this call is
    /// rejected by [`backward`](Self::backward) afterwards.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Index range of layer `i` inside the flat parameter array.
    pub fn layer_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Weights and biases of layer `i`, or `None` for pools and flattens.
    pub fn layer_params(&self, i: usize) -> Option<(&[f64], &[f64])> {
        let (nw, nb) = self.spec.layers.get(i)?.param_shape();
        if nw + nb == 0 {
            return None;
        }
        let s = &self.params[self.layer_range(i)];
        Some(s.split_at(nw))
    }

    pub fn layer_params_mut(&mut self, i: usize) -> Option<(&mut [f64], &mut [f64])> {
        let (nw, nb) = self.spec.layers.get(i)?.param_shape();
        if nw + nb == 0 {
            return None;
        }
        let range = self.layer_range(i);
        self.version = fresh_version();
        Some(self.params[range].split_at_mut(nw))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.spec.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "network expects {} input values per sample, got {}",
                self.spec.input_dim(),
                x.cols()
            )));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("network input"));
        }
        Ok(())
    }

    fn layer_forward(&self, i: usize, x: &[f64], n: usize) -> (Vec<f64>, Vec<u32>) {
        let shape = self.spec.shapes[i];
        match self.spec.layers[i] {
            LayerSpec::Conv2d {
                kh,
                kw,
                out_channels,
                activation,
                ..
            } => {
                let (w, b) = self.layer_params(i).expect("conv has parameters");
                (conv_forward(x, n, shape, kh, kw, out_channels, w, b, activation), Vec::new())
            }
            LayerSpec::Dense {
                in_dim,
                out_dim,
                activation,
            } => {
                let (w, b) = self.layer_params(i).expect("dense has parameters");
                let mut y = pool::zeroed(n * out_dim);
                gemm(Op::n(x, n, in_dim), Op::n(w, in_dim, out_dim), &mut y, 0.0);
                add_bias(&mut y, b);
                activation.apply(&mut y);
                (y, Vec::new())
            }
            LayerSpec::MaxPool2 => pool_forward(x, n, shape),
            LayerSpec::Flatten => (pool::copied(x), Vec::new()),
        }
    }

    /// Embeds a batch and records what [`backward`](Self::backward) needs.
    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let n = x.rows();
        let mut acts = Vec::with_capacity(self.spec.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.spec.layers.len());
        let gated = self
            .spec
            .layers
            .iter()
            .map(|l| {
                matches!(
                    l,
                    LayerSpec::Conv2d {
                        activation: Activation::LeakyRelu,
                        ..
                    } | LayerSpec::Dense {
                        activation: Activation::LeakyRelu,
                        ..
                    }
                )
            })
            .collect();
        acts.push(pool::copied(x.as_slice()));
        for i in 0..self.spec.layers.len() {
            let (y, am) = self.layer_forward(i, acts.last().expect("non-empty"), n);
            acts.push(y);
            argmax.push(am);
        }
        let out = Matrix::from_raw(n, self.spec.output_dim(), pool::copied(acts.last().expect("non-empty")));
        Ok((
            out,
            ForwardCache {
                version: self.version,
                n,
                acts,
                argmax,
                gated,
            },
        ))
    }

    /// Inference-only forward pass over any number of rows, processed in
    /// fixed-size chunks without keeping intermediate activations.
    pub fn embed(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let d_in = x.cols();
        let d_out = self.spec.output_dim();
        let mut out = Vec::with_capacity(x.rows() * d_out);
        for chunk in x.as_slice().chunks(EMBED_CHUNK * d_in) {
            let n = chunk.len() / d_in;
            let mut cur = pool::copied(chunk);
            for i in 0..self.spec.layers.len() {
                let next = self.layer_forward(i, &cur, n).0;
                pool::recycle(std::mem::replace(&mut cur, next));
            }
            out.extend_from_slice(&cur);
            pool::recycle(cur);
        }
        Ok(Matrix::from_raw(x.rows(), d_out, out))
    }

    /// Parameter gradients for upstream gradients `d loss / d embedding`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<Vec<f64>> {
        self.backward_impl(cache, upstream, false).map(|(g, _)| g)
    }

    /// As [`backward`](Self::backward), also returning `d loss / d input`.
    pub fn backward_with_input(&self, cache: &ForwardCache, upstream: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let (g, dx) = self.backward_impl(cache, upstream, true)?;
        let dx = dx.expect("input gradient requested");
        Ok((g, Matrix::from_raw(cache.n, self.spec.input_dim(), dx)))
    }

    fn backward_impl(
        &self,
        cache: &ForwardCache,
        upstream: &Matrix,
        want_input: bool,
    ) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
        if cache.version != self.version {
            return Err(Error::StaleCache);
        }
        if upstream.rows() != cache.n || upstream.cols() != self.spec.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "upstream gradient is {}x{}, network output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.n,
                self.spec.output_dim()
            )));
        }
        let n = cache.n;
        let mut grads = vec![0.0; self.params.len()];
        let mut dy = pool::copied(upstream.as_slice());
        for i in (0..self.spec.layers.len()).rev() {
            let x = &cache.acts[i];
            let y = &cache.acts[i + 1];
            let shape = self.spec.shapes[i];
            let need_dx = i > 0 || want_input;
            let range = self.layer_range(i);
            let next = match self.spec.layers[i] {
                LayerSpec::Conv2d {
                    kh,
                    kw,
                    out_channels,
                    activation,
                    ..
                } => {
                    let (w, _) = self.layer_params(i).expect("conv has parameters");
                    let (gw, gb) = grads[range].split_at_mut(w.len());
                    let geom = ConvGeom {
                        s: shape,
                        kh,
                        kw,
                        out_c: out_channels,
                    };
                    conv_backward(x, n, geom, w, activation, y, &mut dy, gw, gb, need_dx)
                }
                LayerSpec::Dense {
                    in_dim,
                    out_dim,
                    activation,
                } => {
                    activation.backprop(y, &mut dy);
                    let (w, _) = self.layer_params(i).expect("dense has parameters");
                    let (gw, gb) = grads[range].split_at_mut(w.len());
                    gemm(Op::t(x, n, in_dim), Op::n(&dy, n, out_dim), gw, 0.0);
                    sum_rows(&dy, out_dim, gb);
                    if need_dx {
                        let mut dx = pool::zeroed(n * in_dim);
                        gemm(Op::n(&dy, n, out_dim), Op::t(w, in_dim, out_dim), &mut dx, 0.0);
                        dx
                    } else {
                        Vec::new()
                    }
                }
                LayerSpec::MaxPool2 => {
                    let per_in = shape.size();
                    let per_out = self.spec.shapes[i + 1].size();
                    let mut dx = pool::zeroed(n * per_in);
                    for s in 0..n {
                        let src = &dy[s * per_out..(s + 1) * per_out];
                        let idx = &cache.argmax[i][s * per_out..(s + 1) * per_out];
                        let dst = &mut dx[s * per_in..(s + 1) * per_in];
                        for (&g, &j) in src.iter().zip(idx) {
                            dst[j as usize] += g;
                        }
                    }
                    dx
                }
                LayerSpec::Flatten => std::mem::take(&mut dy),
            };
            pool::recycle(std::mem::replace(&mut dy, next));
        }
        Ok((grads, want_input.then_some(dy)))
    }
}

fn add_bias(y: &mut [f64], b: &[f64]) {
    for row in y.chunks_exact_mut(b.len()) {
        for (v, &bias) in row.iter_mut().zip(b) {
            *v += bias;
        }
    }
}

fn sum_rows(dy: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for row in dy.chunks_exact(cols) {
        for (o, &g) in out.iter_mut().zip(row) {
            *o += g;
        }
    }
}

/// Writes the patch matrix for samples `x` (NHWC, `n` samples) into
/// `cols`, one row per output pixel, columns ordered `[dy][dx][c]`.
fn im2col(x: &[f64], n: usize, s: Shape, kh: usize, kw: usize, cols: &mut [f64]) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let k = kh * kw * s.c;
    let row_len = s.w * s.c;
    for (sample, block) in cols.chunks_exact_mut(s.h * s.w * k).take(n).enumerate() {
        let img = &x[sample * s.size()..(sample + 1) * s.size()];
        for oy in 0..s.h {
            for dy in 0..kh {
                let iy = (oy + dy).wrapping_sub(ph);
                let src_row = (iy < s.h).then(|| &img[iy * row_len..(iy + 1) * row_len]);
                for ox in 0..s.w {
                    let row = &mut block[(oy * s.w + ox) * k..(oy * s.w + ox + 1) * k];
                    let dst = &mut row[dy * kw * s.c..(dy + 1) * kw * s.c];
                    let Some(src_row) = src_row else {
                        dst.fill(0.0);
                        continue;
                    };
                    // columns ox - pw .. ox - pw + kw, clipped to the image
                    let lo = ox as isize - pw as isize;
                    let first = (-lo).max(0) as usize;
                    let last = ((s.w as isize - lo).min(kw as isize)).max(0) as usize;
                    dst[..first * s.c].fill(0.0);
                    if first < last {
                        let a = (lo + first as isize) as usize * s.c;
                        dst[first * s.c..last * s.c].copy_from_slice(&src_row[a..a + (last - first) * s.c]);
                    }
                    dst[last.max(first) * s.c..].fill(0.0);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input.
fn col2im(cols: &[f64], n: usize, s: Shape, kh: usize, kw: usize, dx: &mut [f64]) {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let k = kh * kw * s.c;
    let mut r = 0;
    for sample in 0..n {
        let base = sample * s.size();
        for oy in 0..s.h {
            for ox in 0..s.w {
                let row = &cols[r * k..(r + 1) * k];
                for dy in 0..kh {
                    let iy = (oy + dy) as isize - ph as isize;
                    if iy < 0 || iy >= s.h as isize {
                        continue;
                    }
                    for dxk in 0..kw {
                        let ix = (ox + dxk) as isize - pw as isize;
                        if ix < 0 || ix >= s.w as isize {
                            continue;
                        }
                        let at = base + (iy as usize * s.w + ix as usize) * s.c;
                        let src = &row[(dy * kw + dxk) * s.c..(dy * kw + dxk + 1) * s.c];
                        for (d, &g) in dx[at..at + s.c].iter_mut().zip(src) {
                            *d += g;
                        }
                    }
                }
                r += 1;
            }
        }
    }
}

fn conv_chunk(s: Shape, kh: usize, kw: usize, out_c: usize) -> usize {
    (CHUNK_BUDGET / (s.h * s.w * (kh * kw * s.c).max(out_c))).max(1)
}

/// Convolution plus bias and activation, applied chunk by chunk while the
/// output is still in cache.
#[allow(clippy::too_many_arguments)]
fn conv_forward(
    x: &[f64],
    n: usize,
    s: Shape,
    kh: usize,
    kw: usize,
    out_c: usize,
    w: &[f64],
    b: &[f64],
    activation: Activation,
) -> Vec<f64> {
    let k = kh * kw * s.c;
    let pix = s.h * s.w;
    let mut y = pool::zeroed(n * pix * out_c);
    let chunk = conv_chunk(s, kh, kw, out_c);
    let mut cols = pool::zeroed(chunk.min(n) * pix * k);
    let mut start = 0;
    while start < n {
        let m = chunk.min(n - start);
        let rows = m * pix;
        let cols = &mut cols[..rows * k];
        im2col(&x[start * s.size()..(start + m) * s.size()], m, s, kh, kw, cols);
        let out = &mut y[start * pix * out_c..(start + m) * pix * out_c];
        gemm(Op::n(cols, rows, k), Op::n(w, k, out_c), out, 0.0);
        add_bias(out, b);
        activation.apply(out);
        start += m;
    }
    pool::recycle(cols);
    y
}

#[derive(Clone, Copy)]
struct ConvGeom {
    s: Shape,
    kh: usize,
    kw: usize,
    out_c: usize,
}

/// Turns the upstream gradient `dy` into weight and bias gradients, and
/// returns the input gradient when `need_dx`. `y` is the layer output.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    n: usize,
    g: ConvGeom,
    w: &[f64],
    activation: Activation,
    y: &[f64],
    dy: &mut [f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let ConvGeom { s, kh, kw, out_c } = g;
    let k = kh * kw * s.c;
    let pix = s.h * s.w;
    gb.fill(0.0);
    gw.fill(0.0);
    let mut dx = if need_dx { pool::zeroed(n * s.size()) } else { Vec::new() };
    let chunk = conv_chunk(s, kh, kw, out_c);
    let mut cols = pool::zeroed(chunk.min(n) * pix * k);
    let mut start = 0;
    while start < n {
        let m = chunk.min(n - start);
        let rows = m * pix;
        let cols = &mut cols[..rows * k];
        let span = start * pix * out_c..(start + m) * pix * out_c;
        let dz_chunk = &mut dy[span.clone()];
        activation.backprop(&y[span], dz_chunk);
        for row in dz_chunk.chunks_exact(out_c) {
            for (acc, &v) in gb.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let dz_chunk = &*dz_chunk;
        im2col(&x[start * s.size()..(start + m) * s.size()], m, s, kh, kw, cols);
        gemm(Op::t(cols, rows, k), Op::n(dz_chunk, rows, out_c), gw, 1.0);
        if need_dx {
            // the patch buffer is no longer needed; reuse it for patch gradients
            gemm(Op::n(dz_chunk, rows, out_c), Op::t(w, k, out_c), cols, 0.0);
            col2im(cols, m, s, kh, kw, &mut dx[start * s.size()..(start + m) * s.size()]);
        }
        start += m;
    }
    pool::recycle(cols);
    dx
}

fn pool_forward(x: &[f64], n: usize, s: Shape) -> (Vec<f64>, Vec<u32>) {
    let (oh, ow) = (s.h / 2, s.w / 2);
    let per_out = oh * ow * s.c;
    let mut y = pool::zeroed(n * per_out);
    let mut arg = vec![0u32; n * per_out];
    for sample in 0..n {
        let xs = &x[sample * s.size()..(sample + 1) * s.size()];
        let ys = &mut y[sample * per_out..(sample + 1) * per_out];
        let args = &mut arg[sample * per_out..(sample + 1) * per_out];
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..s.c {
                    let o = (oy * ow + ox) * s.c + ch;
                    let mut best = usize::MAX;
                    // scan order (0,0), (0,1), (1,0), (1,1); strict > keeps the first maximum
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let j = ((2 * oy + dy) * s.w + 2 * ox + dx) * s.c + ch;
                            if best == usize::MAX || xs[j] > xs[best] {
                                best = j;
                            }
                        }
                    }
                    ys[o] = xs[best];
                    args[o] = best as u32;
                }
            }
        }
    }
    (y, arg)
}
