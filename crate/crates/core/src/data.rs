//! Datasets: MNIST IDX ingestion, Gaussian blobs, stratified splits and a
//! small binary cache.
//!
//! Cache layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "LMTDSET\0"
//! version  u32      1
//! h, w, c  u64 x 3  sample shape
//! n        u64      sample count
//! classes  u64
//! split    u8       0 full, 1 train, 2 val, 3 test
//! scale    f64      raw value = (stored - offset) / scale
//! offset   f64
//! labels   u32 x n
//! indices  u64 x n  position of each sample in the source it came from
//! samples  f64 x n*h*w*c, row-major
//! ```

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::network::Shape;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const CACHE_MAGIC: &[u8; 8] = b"LMTDSET\0";
const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Full,
    Train,
    Val,
    Test,
}

/// Affine map applied to raw values: `stored = raw * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub offset: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { scale: 1.0, offset: 0.0 };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    shape: Shape,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
    normalization: Normalization,
    indices: Vec<usize>,
}

impl Dataset {
    /// `num_classes` defaults to `max(label) + 1`.
    pub fn new(samples: Matrix, shape: Shape, labels: Vec<usize>, num_classes: Option<usize>) -> Result<Self> {
        if samples.cols() != shape.size() {
            return Err(Error::ShapeMismatch(format!(
                "samples have {} values, shape {}x{}x{} needs {}",
                samples.cols(),
                shape.h,
                shape.w,
                shape.c,
                shape.size()
            )));
        }
        if labels.len() != samples.rows() {
            return Err(Error::CountMismatch {
                images: samples.rows(),
                labels: labels.len(),
            });
        }
        let needed = labels.iter().max().map_or(0, |m| m + 1);
        let num_classes = num_classes.unwrap_or(needed);
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: num_classes,
            });
        }
        let n = labels.len();
        Ok(Dataset {
            samples,
            shape,
            labels,
            num_classes,
            split: Split::Full,
            normalization: Normalization::IDENTITY,
            indices: (0..n).collect(),
        })
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split_tag(&self) -> Split {
        self.split
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Position of each sample in the dataset this one was drawn from.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows `ids` in the given order, tagged `split`.
    pub fn select(&self, ids: &[usize], split: Split) -> Dataset {
        Dataset {
            samples: self.samples.select_rows(ids),
            shape: self.shape,
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            split,
            normalization: self.normalization,
            indices: ids.iter().map(|&i| self.indices[i]).collect(),
        }
    }

    /// Stratified, seed-deterministic partition into train / val / test.
    /// Split sizes are `round(n * fraction)`; within a split, each class
    /// gets its proportional share to within one sample.
    pub fn split(&self, train_frac: f64, val_frac: f64, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
        for (name, f) in [("train", train_frac), ("val", val_frac)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::FractionOutOfRange(format!("{name} fraction {f} is not in (0, 1)")));
            }
        }
        if train_frac + val_frac > 1.0 + 1e-12 {
            return Err(Error::FractionOutOfRange(format!(
                "train + val = {} exceeds 1",
                train_frac + val_frac
            )));
        }
        let n = self.len();
        let n_val = (n as f64 * val_frac).round() as usize;
        let n_train = ((n as f64 * train_frac).round() as usize).min(n - n_val);
        let parts = self.stratified_parts(&[n_train, n_val], seed);
        Ok((
            self.select(&parts[0], Split::Train),
            self.select(&parts[1], Split::Val),
            self.select(&parts[2], Split::Test),
        ))
    }

    /// Stratified random subset of `count` samples, keeping this split tag.
    pub fn stratified_subset(&self, count: usize, seed: u64) -> Result<Dataset> {
        if count == 0 || count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "subset of {count} from {} samples",
                self.len()
            )));
        }
        let parts = self.stratified_parts(&[count], seed);
        Ok(self.select(&parts[0], self.split))
    }

    /// Stratified split into `count` samples tagged `first` and the
    /// remainder tagged `rest`.
    pub fn partition(&self, count: usize, first: Split, rest: Split, seed: u64) -> Result<(Dataset, Dataset)> {
        if count == 0 || count >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "partition of {count} from {} samples leaves an empty side",
                self.len()
            )));
        }
        let parts = self.stratified_parts(&[count], seed);
        Ok((self.select(&parts[0], first), self.select(&parts[1], rest)))
    }

    /// Shuffles each class, then deals consecutive slices of it into parts
    /// of the requested sizes; whatever is left forms a final extra part.
    /// Ids inside each part are sorted.
    fn stratified_parts(&self, sizes: &[usize], seed: u64) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        for ids in &mut by_class {
            ids.shuffle(&mut rng);
        }
        let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
        let mut remaining = counts.clone();
        let mut taken = vec![0; self.num_classes];
        let mut parts = Vec::with_capacity(sizes.len() + 1);
        for &size in sizes {
            let quota = apportion(size, &counts, &remaining);
            let mut part = Vec::with_capacity(size);
            for c in 0..self.num_classes {
                part.extend_from_slice(&by_class[c][taken[c]..taken[c] + quota[c]]);
                taken[c] += quota[c];
                remaining[c] -= quota[c];
            }
            part.sort_unstable();
            parts.push(part);
        }
        let mut rest: Vec<usize> = (0..self.num_classes)
            .flat_map(|c| by_class[c][taken[c]..].iter().copied())
            .collect();
        rest.sort_unstable();
        parts.push(rest);
        parts
    }

    /// SHA-256 over shape, labels and the exact bit patterns of the samples.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.shape.h, self.shape.w, self.shape.c, self.len(), self.num_classes] {
            h.update((v as u64).to_le_bytes());
        }
        for &l in &self.labels {
            h.update((l as u32).to_le_bytes());
        }
        for &v in self.samples.as_slice() {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_cache_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(64 + n * (12 + 8 * self.samples.cols()));
        out.extend_from_slice(CACHE_MAGIC);
        out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
        for v in [self.shape.h, self.shape.w, self.shape.c, n, self.num_classes] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        out.push(match self.split {
            Split::Full => 0,
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        });
        out.extend_from_slice(&self.normalization.scale.to_le_bytes());
        out.extend_from_slice(&self.normalization.offset.to_le_bytes());
        for &l in &self.labels {
            out.extend_from_slice(&(l as u32).to_le_bytes());
        }
        for &i in &self.indices {
            out.extend_from_slice(&(i as u64).to_le_bytes());
        }
        for &v in self.samples.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_cache_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(8)? != CACHE_MAGIC {
            return Err(bad("not a dataset cache"));
        }
        let version = u32::from_le_bytes(r.array()?);
        if version != CACHE_VERSION {
            return Err(bad(&format!("unsupported cache version {version}")));
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = u64::from_le_bytes(r.array()?) as usize;
        }
        let [h, w, c, n, num_classes] = dims;
        let split = match r.take(1)?[0] {
            0 => Split::Full,
            1 => Split::Train,
            2 => Split::Val,
            3 => Split::Test,
            t => return Err(bad(&format!("unknown split tag {t}"))),
        };
        let scale = f64::from_le_bytes(r.array()?);
        let offset = f64::from_le_bytes(r.array()?);
        let shape = Shape::new(h, w, c);
        let expected = r.pos + n * (4 + 8 + 8 * shape.size());
        if bytes.len() != expected {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                expected,
                found: bytes.len(),
            });
        }
        let labels = (0..n)
            .map(|_| r.array().map(|b| u32::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let indices = (0..n)
            .map(|_| r.array().map(|b| u64::from_le_bytes(b) as usize))
            .collect::<Result<Vec<_>>>()?;
        let data = (0..n * shape.size())
            .map(|_| r.array().map(f64::from_le_bytes))
            .collect::<Result<Vec<_>>>()?;
        let samples = if n == 0 {
            Matrix::zeros(0, shape.size().max(1))
        } else {
            Matrix::new(n, shape.size(), data)?
        };
        let mut ds = Dataset::new(samples, shape, labels, Some(num_classes))?;
        ds.split = split;
        ds.normalization = Normalization { scale, offset };
        ds.indices = indices;
        Ok(ds)
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_cache_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_cache_bytes(&bytes, path)
    }
}

/// Largest-remainder split of `total` across classes in proportion to
/// `counts`, capped by what each class still has available.
fn apportion(total: usize, counts: &[usize], remaining: &[usize]) -> Vec<usize> {
    let n: usize = counts.iter().sum();
    if n == 0 {
        return vec![0; counts.len()];
    }
    let mut quota: Vec<usize> = counts
        .iter()
        .zip(remaining)
        .map(|(&c, &r)| ((c * total) / n).min(r))
        .collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // remainder of c * total / n, larger first, lower class id on ties
    order.sort_by_key(|&i| (std::cmp::Reverse((counts[i] * total) % n), i));
    let mut left = total.saturating_sub(quota.iter().sum());
    while left > 0 {
        let mut progressed = false;
        for &i in &order {
            if left == 0 {
                break;
            }
            if quota[i] < remaining[i] {
                quota[i] += 1;
                left -= 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    quota
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Truncated {
                path: self.path.to_path_buf(),
                expected: self.pos + len,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }

    fn be_u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.array()?))
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn check_magic(r: &mut Reader<'_>, expected: u32) -> Result<()> {
    let found = r.be_u32()?;
    if found != expected {
        return Err(Error::BadMagic {
            path: r.path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after the declared data", bytes.len() - expected),
        });
    }
    Ok(())
}

/// Raw IDX image file: (count, rows, cols, pixels).
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    check_magic(&mut r, IDX_IMAGES_MAGIC)?;
    let n = r.be_u32()? as usize;
    let rows = r.be_u32()? as usize;
    let cols = r.be_u32()? as usize;
    check_len(path, &bytes, 16 + n * rows * cols)?;
    Ok((n, rows, cols, bytes[16..].to_vec()))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path,
    };
    check_magic(&mut r, IDX_LABELS_MAGIC)?;
    let n = r.be_u32()? as usize;
    check_len(path, &bytes, 8 + n)?;
    Ok(bytes[8..].to_vec())
}

/// Loads an IDX image/label pair, scaling pixels to [0, 1].
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = read_idx_images(images)?;
    let lab = read_idx_labels(labels)?;
    if lab.len() != n {
        return Err(Error::CountMismatch {
            images: n,
            labels: lab.len(),
        });
    }
    if rows * cols == 0 {
        return Err(Error::Format {
            path: images.to_path_buf(),
            reason: "zero-sized images".into(),
        });
    }
    let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let samples = Matrix::new(n, rows * cols, data)?;
    let labels: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset::new(samples, Shape::new(rows, cols, 1), labels, Some(classes))?.with_normalization(Normalization {
        scale: 1.0 / 255.0,
        offset: 0.0,
    }))
}

/// The four standard MNIST file names inside a directory.
pub struct MnistFiles;

impl MnistFiles {
    pub const TRAIN_IMAGES: &'static str = "train-images-idx3-ubyte";
    pub const TRAIN_LABELS: &'static str = "train-labels-idx1-ubyte";
    pub const TEST_IMAGES: &'static str = "t10k-images-idx3-ubyte";
    pub const TEST_LABELS: &'static str = "t10k-labels-idx1-ubyte";
    /// Published sizes of the uncompressed files, in the order above.
    pub const SIZES: [u64; 4] = [47_040_016, 60_008, 7_840_016, 10_008];
}

/// Loads the standard train and test sets from `dir`.
pub fn load_mnist_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let mut train = load_mnist_idx(&dir.join(MnistFiles::TRAIN_IMAGES), &dir.join(MnistFiles::TRAIN_LABELS))?;
    let mut test = load_mnist_idx(&dir.join(MnistFiles::TEST_IMAGES), &dir.join(MnistFiles::TEST_LABELS))?;
    train.split = Split::Train;
    test.split = Split::Test;
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    /// Minimum distance between any two centers.
    pub spacing: f64,
    pub std: f64,
    pub seed: u64,
    /// Centers are drawn uniformly from `[-b, b]^dim`; defaults to
    /// `spacing * classes`.
    pub box_half_width: Option<f64>,
}

impl BlobsConfig {
    pub fn new(classes: usize, per_class: usize, dim: usize, spacing: f64, std: f64, seed: u64) -> Self {
        BlobsConfig {
            classes,
            per_class,
            dim,
            spacing,
            std,
            seed,
            box_half_width: None,
        }
    }
}

const PACKING_ATTEMPTS: usize = 10_000;

/// Isotropic Gaussian clusters, class-major order. Returns the dataset and
/// the centers (one row per class).
pub fn make_blobs_with_centers(cfg: &BlobsConfig) -> Result<(Dataset, Matrix)> {
    if cfg.classes < 2 {
        return Err(Error::InvalidArgument(format!("blobs need >= 2 classes, got {}", cfg.classes)));
    }
    if cfg.per_class == 0 || cfg.dim == 0 {
        return Err(Error::InvalidArgument("blobs need per_class > 0 and dim > 0".into()));
    }
    if !(cfg.spacing.is_finite() && cfg.spacing >= 0.0 && cfg.std.is_finite() && cfg.std >= 0.0) {
        return Err(Error::InvalidArgument("spacing and std must be finite and non-negative".into()));
    }
    let half = cfg.box_half_width.unwrap_or(cfg.spacing * cfg.classes as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(cfg.classes);
    let mut attempts = 0;
    while centers.len() < cfg.classes {
        if attempts == PACKING_ATTEMPTS {
            return Err(Error::PackingFailed {
                classes: cfg.classes,
                spacing: cfg.spacing,
                attempts,
            });
        }
        attempts += 1;
        let cand: Vec<f64> = (0..cfg.dim)
            .map(|_| if half > 0.0 { rng.random_range(-half..=half) } else { 0.0 })
            .collect();
        let far_enough = centers.iter().all(|c| {
            let d2: f64 = c.iter().zip(&cand).map(|(a, b)| (a - b) * (a - b)).sum();
            d2.sqrt() >= cfg.spacing
        });
        if far_enough {
            centers.push(cand);
        }
    }
    let mut data = Vec::with_capacity(cfg.classes * cfg.per_class * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.classes * cfg.per_class);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..cfg.per_class {
            for &m in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(m + cfg.std * z);
            }
            labels.push(c);
        }
    }
    let samples = Matrix::new(labels.len(), cfg.dim, data)?;
    let ds = Dataset::new(samples, Shape::flat(cfg.dim), labels, Some(cfg.classes))?;
    Ok((ds, Matrix::from_rows(&centers)?))
}

pub fn make_blobs(cfg: &BlobsConfig) -> Result<Dataset> {
    make_blobs_with_centers(cfg).map(|(d, _)| d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knn::{Metric, NeighborIndex};

    fn idx_images(n: u32, r: u32, c: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [0x803u32, n, r, c] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [0x801u32, labels.len() as u32] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(labels);
        b
    }

    #[test]
    fn idx_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        let pixels: Vec<u8> = (0..2 * 3 * 2).map(|i| (i * 20) as u8).collect();
        fs::write(&img, idx_images(2, 3, 2, &pixels)).unwrap();
        fs::write(&lab, idx_labels(&[7, 2])).unwrap();
        let ds = load_mnist_idx(&img, &lab).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), Shape::new(3, 2, 1));
        assert_eq!(ds.labels(), &[7, 2]);
        for (v, p) in ds.samples().as_slice().iter().zip(&pixels) {
            assert_eq!(*v, *p as f64 / 255.0);
        }

        // labels file passed as images
        assert_eq!(load_mnist_idx(&lab, &lab).unwrap_err().code(), "bad_magic");
        fs::write(&img, &idx_images(2, 3, 2, &pixels)[..20]).unwrap();
        assert_eq!(load_mnist_idx(&img, &lab).unwrap_err().code(), "truncated");
        fs::write(&img, idx_images(2, 3, 2, &pixels)).unwrap();
        fs::write(&lab, idx_labels(&[7, 2, 1])).unwrap();
        assert_eq!(load_mnist_idx(&img, &lab).unwrap_err().code(), "count_mismatch");
        let missing = dir.path().join("nope");
        let err = load_mnist_idx(&missing, &lab).unwrap_err();
        assert_eq!(err.code(), "io");
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn split_sizes_disjoint_and_stratified() {
        let labels: Vec<usize> = (0..60_000).map(|i| (i * 7 + i / 13) % 10).collect();
        let samples = Matrix::new(60_000, 1, (0..60_000).map(|i| i as f64).collect()).unwrap();
        let ds = Dataset::new(samples, Shape::flat(1), labels, None).unwrap();
        let (tr, va, te) = ds.split(0.9, 0.1, 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (54_000, 6_000, 0));

        let mut all: Vec<usize> = tr.indices().iter().chain(va.indices()).chain(te.indices()).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..60_000).collect::<Vec<_>>());

        let overall = ds.class_counts();
        for (c, &vc) in va.class_counts().iter().enumerate() {
            let expect = overall[c] as f64 * 6_000.0 / 60_000.0;
            assert!((vc as f64 - expect).abs() <= 1.0, "class {c}: {vc} vs {expect}");
        }

        let (tr2, va2, _) = ds.split(0.9, 0.1, 3).unwrap();
        assert_eq!(tr2.indices(), tr.indices());
        assert_eq!(va2.indices(), va.indices());
        let (tr3, _, _) = ds.split(0.9, 0.1, 4).unwrap();
        assert_ne!(tr3.indices(), tr.indices());
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = make_blobs(&BlobsConfig::new(2, 10, 2, 5.0, 1.0, 0)).unwrap();
        for (t, v) in [(0.0, 0.5), (0.5, 1.0), (0.7, 0.4), (f64::NAN, 0.1)] {
            assert_eq!(ds.split(t, v, 0).unwrap_err().code(), "fraction_out_of_range");
        }
        let (a, b, c) = ds.split(0.5, 0.25, 0).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (10, 5, 5));
    }

    #[test]
    fn partition_is_disjoint_and_stratified() {
        let ds = make_blobs(&BlobsConfig::new(4, 25, 2, 5.0, 1.0, 0)).unwrap();
        let (a, b) = ds.partition(80, Split::Train, Split::Test, 2).unwrap();
        assert_eq!((a.len(), b.len()), (80, 20));
        assert_eq!(a.class_counts(), vec![20; 4]);
        assert_eq!(b.split_tag(), Split::Test);
        assert!(a.indices().iter().all(|i| !b.indices().contains(i)));
        assert!(ds.partition(100, Split::Train, Split::Test, 2).is_err());
    }

    #[test]
    fn blobs_separated_classes_are_one_nn_perfect() {
        let (ds, _) = make_blobs_with_centers(&BlobsConfig::new(2, 100, 3, 100.0, 0.1, 5)).unwrap();
        let (tr, _, te) = ds.split(0.5, 0.1, 1).unwrap();
        let idx = NeighborIndex::build(tr.samples().clone(), tr.labels().to_vec(), Metric::Euclidean).unwrap();
        for (q, &l) in te.samples().iter_rows().zip(te.labels()) {
            assert_eq!(idx.knn_classify(q, 1).unwrap().class, l);
        }
    }

    #[test]
    fn blobs_zero_std_collapse_to_centers() {
        let (ds, centers) = make_blobs_with_centers(&BlobsConfig::new(3, 5, 4, 2.0, 0.0, 9)).unwrap();
        for (row, &l) in ds.samples().iter_rows().zip(ds.labels()) {
            assert_eq!(row, centers.row(l));
        }
    }

    #[test]
    fn blob_means_near_centers() {
        let per = 2000;
        let (ds, centers) = make_blobs_with_centers(&BlobsConfig::new(3, per, 2, 4.0, 1.0, 11)).unwrap();
        for c in 0..3 {
            for d in 0..2 {
                let mean = ds
                    .samples()
                    .iter_rows()
                    .zip(ds.labels())
                    .filter(|(_, &l)| l == c)
                    .map(|(r, _)| r[d])
                    .sum::<f64>()
                    / per as f64;
                assert!((mean - centers.row(c)[d]).abs() < 3.0 / (per as f64).sqrt());
            }
        }
        for a in 0..3 {
            for b in a + 1..3 {
                assert!(crate::math::euclid_dist(centers.row(a), centers.row(b)).unwrap() >= 4.0);
            }
        }
    }

    #[test]
    fn impossible_packing_fails() {
        let mut cfg = BlobsConfig::new(5, 3, 1, 10.0, 1.0, 0);
        cfg.box_half_width = Some(1.0);
        assert_eq!(make_blobs(&cfg).unwrap_err().code(), "packing_failed");
    }

    #[test]
    fn cache_round_trip_is_identical() {
        let ds = make_blobs(&BlobsConfig::new(3, 7, 5, 3.0, 1.0, 2)).unwrap();
        let (tr, _, _) = ds.split(0.6, 0.2, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        tr.save_cache(&p).unwrap();
        let back = Dataset::load_cache(&p).unwrap();
        assert_eq!(back, tr);
        assert_eq!(back.fingerprint(), tr.fingerprint());
        assert_ne!(ds.fingerprint(), tr.fingerprint());

        let bytes = tr.to_cache_bytes();
        assert_eq!(
            Dataset::from_cache_bytes(&bytes[..bytes.len() - 3], &p).unwrap_err().code(),
            "truncated"
        );
    }

    #[test]
    fn apportion_respects_totals() {
        assert_eq!(apportion(5, &[3, 3, 4], &[3, 3, 4]), vec![2, 1, 2]);
        assert_eq!(apportion(10, &[3, 3, 4], &[3, 3, 4]), vec![3, 3, 4]);
        assert_eq!(apportion(0, &[3, 3, 4], &[3, 3, 4]), vec![0, 0, 0]);
    }
}
