//! Triplet construction: uniform sampling, local positive/negative mining
//! against the epoch snapshot, and in-batch hard mining.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::NeighborhoodSnapshot;
use crate::math::{sq_dist_unchecked, Matrix};

/// Index triple `(anchor, positive, negative)` into the current sample set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    /// Checks `label(a) == label(p)`, `label(a) != label(n)` and `a != p`.
    pub fn new(anchor: usize, positive: usize, negative: usize, labels: &[usize]) -> Result<Self> {
        let t = Triplet::new_unchecked(anchor, positive, negative);
        t.validate(labels)?;
        Ok(t)
    }

    pub fn new_unchecked(anchor: usize, positive: usize, negative: usize) -> Self {
        Triplet {
            anchor,
            positive,
            negative,
        }
    }

    pub fn validate(&self, labels: &[usize]) -> Result<()> {
        let n = labels.len();
        if self.anchor >= n || self.positive >= n || self.negative >= n {
            return Err(Error::InvalidArgument(format!("triplet {self:?} out of range")));
        }
        if self.anchor == self.positive || labels[self.anchor] != labels[self.positive] {
            return Err(Error::NoPositive { anchor: self.anchor });
        }
        if labels[self.anchor] == labels[self.negative] {
            return Err(Error::NoNegative { anchor: self.anchor });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiningKind {
    Uniform,
    Local,
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningStrategy {
    pub kind: MiningKind,
    pub seed: u64,
}

/// Sample ids grouped by class, laid out contiguously so that "any sample
/// of another class" is a single range draw.
#[derive(Debug, Clone)]
pub struct ClassIndex {
    labels: Vec<usize>,
    grouped: Vec<usize>,
    ranges: BTreeMap<usize, (usize, usize)>,
}

impl ClassIndex {
    pub fn new(labels: &[usize]) -> Self {
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &c) in labels.iter().enumerate() {
            by_class.entry(c).or_default().push(i);
        }
        let mut grouped = Vec::with_capacity(labels.len());
        let mut ranges = BTreeMap::new();
        for (c, ids) in by_class {
            let start = grouped.len();
            grouped.extend(ids);
            ranges.insert(c, (start, grouped.len()));
        }
        ClassIndex {
            labels: labels.to_vec(),
            grouped,
            ranges,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.ranges.len()
    }

    /// Ids of class `c` in ascending order.
    pub fn members(&self, c: usize) -> &[usize] {
        self.ranges
            .get(&c)
            .map_or(&[][..], |&(s, e)| &self.grouped[s..e])
    }

    pub fn class_size(&self, c: usize) -> usize {
        self.members(c).len()
    }

    fn draw_positive<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> Result<usize> {
        let members = self.members(self.labels[anchor]);
        if members.len() < 2 {
            return Err(Error::NoPositive { anchor });
        }
        // uniform over the class minus the anchor
        let r = rng.random_range(0..members.len() - 1);
        let pos = members.binary_search(&anchor).expect("anchor belongs to its class");
        Ok(members[if r >= pos { r + 1 } else { r }])
    }

    fn draw_negative<R: Rng + ?Sized>(&self, anchor: usize, rng: &mut R) -> Result<usize> {
        let (start, end) = self.ranges[&self.labels[anchor]];
        let others = self.grouped.len() - (end - start);
        if others == 0 {
            return Err(Error::NoNegative { anchor });
        }
        let r = rng.random_range(0..others);
        Ok(self.grouped[if r >= start { r + (end - start) } else { r }])
    }
}

/// Positive uniform over the anchor's class (anchor excluded), negative
/// uniform over every other class.
pub fn sample_uniform<R: Rng + ?Sized>(classes: &ClassIndex, anchor: usize, rng: &mut R) -> Result<Triplet> {
    if anchor >= classes.len() {
        return Err(Error::InvalidArgument(format!("anchor {anchor} out of range")));
    }
    let positive = classes.draw_positive(anchor, rng)?;
    let negative = classes.draw_negative(anchor, rng)?;
    Ok(Triplet::new_unchecked(anchor, positive, negative))
}

/// Negative drawn from the different-class members of the anchor's
/// snapshot neighborhood, positive from the same-class samples outside it.
/// Either side falls back to uniform sampling when its candidate set is
/// empty.
pub fn sample_local<R: Rng + ?Sized>(
    snapshot: &NeighborhoodSnapshot,
    classes: &ClassIndex,
    anchor: usize,
    rng: &mut R,
) -> Result<Triplet> {
    if anchor >= classes.len() || snapshot.len() != classes.len() {
        return Err(Error::InvalidArgument(format!(
            "anchor {anchor} with snapshot of {} and {} labels",
            snapshot.len(),
            classes.len()
        )));
    }
    let labels = classes.labels();
    let class = labels[anchor];
    let hood = snapshot.neighbor_ids(anchor);

    if classes.class_size(class) < 2 {
        return Err(Error::NoPositive { anchor });
    }
    let far_positives: Vec<usize> = classes
        .members(class)
        .iter()
        .copied()
        .filter(|&i| i != anchor && !hood.contains(&i))
        .collect();
    let positive = if far_positives.is_empty() {
        classes.draw_positive(anchor, rng)?
    } else {
        far_positives[rng.random_range(0..far_positives.len())]
    };

    let near_negatives: Vec<usize> = hood.iter().copied().filter(|&i| labels[i] != class).collect();
    let negative = if near_negatives.is_empty() {
        classes.draw_negative(anchor, rng)?
    } else {
        near_negatives[rng.random_range(0..near_negatives.len())]
    };
    Ok(Triplet::new_unchecked(anchor, positive, negative))
}

/// Farthest in-batch positive and nearest in-batch negative by squared
/// distance; ties go to the lower index.
pub fn sample_hard(embeddings: &Matrix, labels: &[usize], anchor: usize) -> Result<Triplet> {
    if labels.len() != embeddings.rows() || anchor >= labels.len() {
        return Err(Error::InvalidArgument(format!(
            "anchor {anchor} for a batch of {} rows and {} labels",
            embeddings.rows(),
            labels.len()
        )));
    }
    let a = embeddings.row(anchor);
    let mut hardest_pos: Option<(f64, usize)> = None;
    let mut hardest_neg: Option<(f64, usize)> = None;
    for (i, row) in embeddings.iter_rows().enumerate() {
        if i == anchor {
            continue;
        }
        let d = sq_dist_unchecked(a, row);
        if labels[i] == labels[anchor] {
            if hardest_pos.is_none_or(|(best, _)| d > best) {
                hardest_pos = Some((d, i));
            }
        } else if hardest_neg.is_none_or(|(best, _)| d < best) {
            hardest_neg = Some((d, i));
        }
    }
    let (_, positive) = hardest_pos.ok_or(Error::NoPositive { anchor })?;
    let (_, negative) = hardest_neg.ok_or(Error::NoNegative { anchor })?;
    Ok(Triplet::new_unchecked(anchor, positive, negative))
}
