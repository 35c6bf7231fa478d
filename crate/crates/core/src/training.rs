//! The training loop: per epoch, re-embed the training set, freeze the
//! neighborhood snapshot, mine one triplet per anchor and take Adam steps
//! on the selected loss. Also hosts the softmax baseline and KNN scoring.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::knn::{choose_k, take_snapshot, Metric, NeighborIndex, NeighborhoodSnapshot};
use crate::losses::{combined_loss, LossWeights, Margins};
use crate::math::Matrix;
use crate::mining::{sample_hard, sample_local, sample_uniform, ClassIndex, Triplet};
use crate::network::{adam_step, softmax_head_loss, AdamState, EmbeddingNet, SoftmaxHead};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Local-margin loss, uniform triplets.
    Lm,
    /// Local-margin loss, local positive/negative mining.
    LmMining,
    /// Fixed-margin loss, uniform triplets.
    Mm,
    /// Fixed-margin loss, in-batch hardest positive and negative.
    MmHardmin,
    /// Softmax classifier on the embedding, cross-entropy loss.
    Softmax,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Lm, Method::LmMining, Method::Mm, Method::MmHardmin, Method::Softmax];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lm => "lm",
            Method::LmMining => "lm_mining",
            Method::Mm => "mm",
            Method::MmHardmin => "mm_hardmin",
            Method::Softmax => "softmax",
        }
    }

    /// Whether the method reads the epoch-start neighborhood snapshot.
    pub fn uses_snapshot(self) -> bool {
        matches!(self, Method::Lm | Method::LmMining)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    /// Neighborhood size; `None` means `choose_k(n_train)`.
    pub k: Option<usize>,
    pub weights: LossWeights,
    pub batch_size: usize,
    pub e_max: usize,
    pub convergence_eps: f64,
    pub lr: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub const DEFAULT_BATCH: usize = 128;
    pub const DEFAULT_CONVERGENCE_EPS: f64 = 1e-4;
    pub const DEFAULT_LR: f64 = 1e-4;

    pub fn new(method: Method) -> Self {
        TrainConfig {
            method,
            k: None,
            weights: LossWeights::mnist(),
            batch_size: Self::DEFAULT_BATCH,
            e_max: 60,
            convergence_eps: Self::DEFAULT_CONVERGENCE_EPS,
            lr: Self::DEFAULT_LR,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == Some(0) {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.convergence_eps >= 0.0) {
            return Err(Error::Config("convergence_eps must be non-negative".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        self.weights.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn k_for(&self, n: usize) -> usize {
        self.k.unwrap_or_else(|| choose_k(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotStats {
    pub k: usize,
    pub mean_d_ak: f64,
    pub max_d_ak: f64,
    pub mean_d_ak_pos: Option<f64>,
}

impl SnapshotStats {
    fn of(s: &NeighborhoodSnapshot) -> Self {
        SnapshotStats {
            k: s.k,
            mean_d_ak: s.mean_d_ak(),
            max_d_ak: s.max_d_ak(),
            mean_d_ak_pos: s.mean_d_ak_pos(),
        }
    }
}

/// One line of the epoch log. Wall time is kept in memory only so that
/// serialized logs of identical runs are byte-identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub method: Method,
    pub mean_loss: f64,
    pub batches: usize,
    /// Fraction of triplets whose hinge was positive; absent for softmax.
    pub hinge_active_fraction: Option<f64>,
    /// Absent for methods that never build a snapshot.
    pub snapshot: Option<SnapshotStats>,
    pub val_accuracy: Option<f64>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    pub stop: StopReason,
    /// Epoch whose parameters were kept, when a validation set was given.
    pub best_epoch: Option<usize>,
}

/// Margin lookup recorded during an epoch, for checking that the loss only
/// ever saw the epoch-start snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginUse {
    pub epoch: usize,
    pub anchor: usize,
    pub d_ak_pos: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnnEval {
    pub k: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// KNN accuracy of `test` embeddings against `train` embeddings.
pub fn evaluate_knn(
    train: &Matrix,
    train_labels: &[usize],
    test: &Matrix,
    test_labels: &[usize],
    k: usize,
    num_classes: usize,
) -> Result<KnnEval> {
    if test.rows() != test_labels.len() {
        return Err(Error::CountMismatch {
            images: test.rows(),
            labels: test_labels.len(),
        });
    }
    let index = NeighborIndex::build(train.clone(), train_labels.to_vec(), Metric::Euclidean)?;
    let mut confusion = vec![vec![0; num_classes]; num_classes];
    let mut predictions = Vec::with_capacity(test.rows());
    let mut correct = 0;
    for (q, &truth) in test.iter_rows().zip(test_labels) {
        let pred = index.knn_classify(q, k)?.class;
        if pred == truth {
            correct += 1;
        }
        if truth < num_classes && pred < num_classes {
            confusion[truth][pred] += 1;
        }
        predictions.push(pred);
    }
    Ok(KnnEval {
        k,
        n_train: train.rows(),
        n_test: test.rows(),
        accuracy: if test.rows() == 0 { 0.0 } else { correct as f64 / test.rows() as f64 },
        confusion,
        predictions,
    })
}

pub struct Trainer {
    net: EmbeddingNet,
    head: Option<SoftmaxHead>,
    config: TrainConfig,
    adam: AdamState,
    head_adam: Option<AdamState>,
    rng: ChaCha8Rng,
    epoch: usize,
    snapshots_taken: usize,
    last_snapshot: Option<NeighborhoodSnapshot>,
    trace: Option<Vec<MarginUse>>,
}

impl Trainer {
    /// The softmax head (if the method needs one) is seeded from
    /// `config.seed`, as is every sampling decision.
    pub fn new(net: EmbeddingNet, config: TrainConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        let head = (config.method == Method::Softmax).then(|| {
            SoftmaxHead::new(net.spec().output_dim(), num_classes.max(2), config.seed ^ 0x5eed_4ead)
        });
        let adam = AdamState::new(net.param_count(), config.lr);
        let head_adam = head.as_ref().map(|h| AdamState::new(h.params().len(), config.lr));
        Ok(Trainer {
            net,
            head,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            adam,
            head_adam,
            epoch: 0,
            snapshots_taken: 0,
            last_snapshot: None,
            trace: None,
        })
    }

    pub fn net(&self) -> &EmbeddingNet {
        &self.net
    }

    pub fn head(&self) -> Option<&SoftmaxHead> {
        self.head.as_ref()
    }

    pub fn into_parts(self) -> (EmbeddingNet, Option<SoftmaxHead>) {
        (self.net, self.head)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    pub fn snapshots_taken(&self) -> usize {
        self.snapshots_taken
    }

    /// Snapshot used by the most recent epoch, if the method takes one.
    pub fn last_snapshot(&self) -> Option<&NeighborhoodSnapshot> {
        self.last_snapshot.as_ref()
    }

    /// Starts recording every margin radius handed to the loss.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    pub fn trace(&self) -> Option<&[MarginUse]> {
        self.trace.as_deref()
    }

    /// One pass over `train`.
    pub fn run_epoch(&mut self, train: &Dataset) -> Result<EpochReport> {
        if train.num_classes() < 2 || train.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
            return Err(Error::InvalidArgument("training needs at least two classes".into()));
        }
        let started = Instant::now();
        let epoch = self.epoch + 1;
        let out = match self.config.method {
            Method::Softmax => self.softmax_epoch(train, epoch),
            Method::MmHardmin => self.hardmin_epoch(train, epoch),
            _ => self.triplet_epoch(train, epoch),
        };
        let (mean_loss, batches, hinge) = out.map_err(|e| match e {
            Error::NonFinite(_) => Error::Diverged {
                epoch,
                partial: Vec::new(),
            },
            other => other,
        })?;
        if !mean_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                partial: Vec::new(),
            });
        }
        self.epoch = epoch;
        Ok(EpochReport {
            epoch,
            method: self.config.method,
            mean_loss,
            batches,
            hinge_active_fraction: hinge,
            snapshot: self.last_snapshot.as_ref().map(SnapshotStats::of),
            val_accuracy: None,
            wall_time: started.elapsed(),
        })
    }

    fn step(&mut self, grads: &[f64]) -> Result<()> {
        adam_step(&mut self.adam, self.net.params_mut(), grads)
    }

    /// Forward the distinct samples referenced by `triplets`, evaluate the
    /// combined loss and update θ. Returns (loss, active hinges).
    fn triplet_step(&mut self, train: &Dataset, triplets: &[Triplet], margins: Option<&[f64]>) -> Result<(f64, usize)> {
        let mut local: BTreeMap<usize, usize> = BTreeMap::new();
        let mut ids = Vec::new();
        let mut remap = |g: usize| {
            *local.entry(g).or_insert_with(|| {
                ids.push(g);
                ids.len() - 1
            })
        };
        let batch: Vec<Triplet> = triplets
            .iter()
            .map(|t| Triplet::new_unchecked(remap(t.anchor), remap(t.positive), remap(t.negative)))
            .collect();
        let x = train.samples().select_rows(&ids);
        let (emb, cache) = self.net.forward(&x)?;
        let m = match margins {
            Some(r) => Margins::Local(r),
            None => Margins::Fixed,
        };
        let loss = combined_loss(&emb, &batch, m, &self.config.weights)?;
        let grads = self.net.backward(&cache, &loss.grad)?;
        self.step(&grads)?;
        Ok((loss.value, loss.active_count()))
    }

    fn take_epoch_snapshot(&mut self, train: &Dataset, epoch: usize) -> Result<()> {
        let emb = self.net.embed(train.samples())?;
        let index = NeighborIndex::build(emb, train.labels().to_vec(), Metric::Euclidean)?;
        let k = self.config.k_for(train.len());
        self.last_snapshot = Some(take_snapshot(&index, k, epoch)?);
        self.snapshots_taken += 1;
        Ok(())
    }

    fn triplet_epoch(&mut self, train: &Dataset, epoch: usize) -> Result<(f64, usize, Option<f64>)> {
        let method = self.config.method;
        if method.uses_snapshot() {
            self.take_epoch_snapshot(train, epoch)?;
        }
        let classes = ClassIndex::new(train.labels());
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);

        let (mut loss_sum, mut batches, mut active, mut total) = (0.0, 0, 0, 0);
        for chunk in order.chunks(self.config.batch_size) {
            let mut triplets = Vec::with_capacity(chunk.len());
            let mut radii = Vec::new();
            for &a in chunk {
                let t = match method {
                    Method::LmMining => {
                        let snap = self.last_snapshot.as_ref().expect("snapshot taken");
                        sample_local(snap, &classes, a, &mut self.rng)?
                    }
                    _ => sample_uniform(&classes, a, &mut self.rng)?,
                };
                if method.uses_snapshot() {
                    let snap = self.last_snapshot.as_ref().expect("snapshot taken");
                    let r = snap.d_ak_pos(a).ok_or(Error::NoPositive { anchor: a })?;
                    if let Some(tr) = &mut self.trace {
                        tr.push(MarginUse {
                            epoch,
                            anchor: a,
                            d_ak_pos: r,
                        });
                    }
                    radii.push(r);
                }
                triplets.push(t);
            }
            let margins = method.uses_snapshot().then_some(radii.as_slice());
            let (l, act) = self.triplet_step(train, &triplets, margins)?;
            loss_sum += l;
            batches += 1;
            active += act;
            total += triplets.len();
        }
        Ok((loss_sum / batches as f64, batches, Some(active as f64 / total as f64)))
    }

    /// Class-balanced batches of `max(2, ceil(batch / classes))` samples per
    /// class; every batch member serves as an anchor with its hardest
    /// in-batch positive and negative.
    fn hardmin_epoch(&mut self, train: &Dataset, _epoch: usize) -> Result<(f64, usize, Option<f64>)> {
        let classes = ClassIndex::new(train.labels());
        let present: Vec<usize> = (0..train.num_classes()).filter(|&c| classes.class_size(c) > 0).collect();
        let per_class = self.config.batch_size.div_ceil(present.len()).max(2);
        for &c in &present {
            if classes.class_size(c) < 2 {
                return Err(Error::NoPositive {
                    anchor: classes.members(c)[0],
                });
            }
        }
        let per_batch = per_class * present.len();
        let n_batches = train.len().div_ceil(per_batch);
        let mut queues: Vec<Vec<usize>> = present.iter().map(|_| Vec::new()).collect();

        let (mut loss_sum, mut active, mut total) = (0.0, 0, 0);
        for _ in 0..n_batches {
            let mut ids = Vec::with_capacity(per_batch);
            for (qi, &c) in present.iter().enumerate() {
                let need = per_class.min(classes.class_size(c));
                let mut picked: Vec<usize> = Vec::with_capacity(need);
                while picked.len() < need {
                    if queues[qi].is_empty() {
                        let mut fresh = classes.members(c).to_vec();
                        fresh.shuffle(&mut self.rng);
                        // avoid repeating a sample inside one batch across a refill
                        fresh.retain(|id| !picked.contains(id));
                        queues[qi] = fresh;
                    }
                    picked.push(queues[qi].pop().expect("refilled"));
                }
                ids.extend(picked);
            }
            let labels: Vec<usize> = ids.iter().map(|&i| train.labels()[i]).collect();
            let x = train.samples().select_rows(&ids);
            let (emb, cache) = self.net.forward(&x)?;
            let triplets = (0..ids.len())
                .map(|a| sample_hard(&emb, &labels, a))
                .collect::<Result<Vec<_>>>()?;
            let loss = combined_loss(&emb, &triplets, Margins::Fixed, &self.config.weights)?;
            let grads = self.net.backward(&cache, &loss.grad)?;
            self.step(&grads)?;
            loss_sum += loss.value;
            active += loss.active_count();
            total += triplets.len();
        }
        Ok((loss_sum / n_batches as f64, n_batches, Some(active as f64 / total as f64)))
    }

    fn softmax_epoch(&mut self, train: &Dataset, _epoch: usize) -> Result<(f64, usize, Option<f64>)> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss_sum, mut batches) = (0.0, 0);
        for chunk in order.chunks(self.config.batch_size) {
            let x = train.samples().select_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
            let (emb, cache) = self.net.forward(&x)?;
            let head = self.head.as_mut().expect("softmax head");
            let l = softmax_head_loss(&emb, &labels, head)?;
            let head_adam = self.head_adam.as_mut().expect("head optimizer");
            adam_step(head_adam, head.params_mut(), &l.grad_params)?;
            let grads = self.net.backward(&cache, &l.grad_embeddings)?;
            self.step(&grads)?;
            loss_sum += l.value;
            batches += 1;
        }
        Ok((loss_sum / batches as f64, batches, None))
    }

    /// Runs epochs until the mean loss changes by less than
    /// `convergence_eps` between consecutive epochs or `e_max` epochs have
    /// run. With a validation set, KNN validation accuracy is tracked each
    /// epoch and the best-scoring parameters are restored at the end.
    pub fn train(
        &mut self,
        train: &Dataset,
        val: Option<&Dataset>,
        mut on_epoch: impl FnMut(&EpochReport),
    ) -> Result<TrainOutcome> {
        let mut reports: Vec<EpochReport> = Vec::new();
        let mut best: Option<(f64, usize, Vec<f64>, Option<SoftmaxHead>)> = None;
        let mut stop = StopReason::MaxEpochs;
        for _ in 0..self.config.e_max {
            let mut report = match self.run_epoch(train) {
                Ok(r) => r,
                Err(Error::Diverged { epoch, .. }) => {
                    return Err(Error::Diverged {
                        epoch,
                        partial: reports,
                    })
                }
                Err(e) => return Err(e),
            };
            if let Some(val) = val {
                let acc = self.knn_score(train, val)?.accuracy;
                report.val_accuracy = Some(acc);
                if best.as_ref().is_none_or(|b| acc > b.0) {
                    best = Some((acc, report.epoch, self.net.params().to_vec(), self.head.clone()));
                }
            }
            on_epoch(&report);
            let converged = reports
                .last()
                .is_some_and(|prev| (report.mean_loss - prev.mean_loss).abs() < self.config.convergence_eps);
            reports.push(report);
            if converged {
                stop = StopReason::Converged;
                break;
            }
        }
        let best_epoch = best.map(|(_, epoch, params, head)| {
            self.net.params_mut().copy_from_slice(&params);
            self.head = head;
            epoch
        });
        Ok(TrainOutcome {
            reports,
            stop,
            best_epoch,
        })
    }

    /// KNN accuracy of `test` against the embedded training set, with the
    /// configured k (or `choose_k(n_train)`).
    pub fn knn_score(&self, train: &Dataset, test: &Dataset) -> Result<KnnEval> {
        let tr = self.net.embed(train.samples())?;
        let te = self.net.embed(test.samples())?;
        let k = self.config.k_for(train.len()).min(train.len());
        evaluate_knn(&tr, train.labels(), &te, test.labels(), k, train.num_classes())
    }
}
