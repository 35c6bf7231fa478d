//! Triplet metric learning with a local, data-dependent margin.
//!
//! The margin of each anchor is `c_b · d_ak_pos`, a multiple of its
//! distance to the k-th nearest same-class sample, frozen at the start of
//! every epoch. Once no hinge is active, every non-outlier query has a
//! single-class k-neighborhood; [`verify`] turns that guarantee into
//! checks on a trained embedding.
//!
//! Modules, bottom up:
//!
//! - [`math`]: dense row-major matrices and distances.
//! - [`knn`]: exact k-nearest-neighbor search, classification, and
//!   per-epoch neighborhood snapshots.
//! - [`losses`]: fixed-margin, local-margin and combined triplet losses
//!   with embedding gradients.
//! - [`mining`]: uniform, local and hard triplet sampling.
//! - [`network`]: convolutional / dense embedding network with manual
//!   backpropagation, Adam, softmax head, checkpoints.
//! - [`training`]: the epoch loop for the five methods.
//! - [`data`]: MNIST IDX loading, synthetic blobs, stratified splits.
//! - [`verify`]: optimal-condition, purity and margin checks; PCA.
//! - [`cli`]: the `lmtriplet` command-line workflow.
//!
//! Runnable examples (`cargo run --release --example <name>`):
//!
//! | example            | shows                                         |
//! |--------------------|-----------------------------------------------|
//! | `knn`              | exact search, classification, snapshots       |
//! | `losses`           | loss values and gradients on a toy batch      |
//! | `mining`           | the three sampling strategies side by side    |
//! | `gradient_check`   | finite-difference check of the network        |
//! | `data`             | blobs, splits, the dataset cache              |
//! | `train_blobs`      | lm_mining on blobs, KNN accuracy              |
//! | `theorem_check`    | training to inactive hinges, then purity      |
//! | `corollary_margin` | fixed-margin baseline and the `3·d_ak` bound  |
//! | `pca_scatter`      | 2-D scatter CSV of an embedding               |
//! | `mnist_train`      | lm_mining on an MNIST subset (needs the data) |

pub mod cli;
pub mod data;
pub mod error;
pub mod knn;
pub mod losses;
pub mod math;
pub mod mining;
pub mod network;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
