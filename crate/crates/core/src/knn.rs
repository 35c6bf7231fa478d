//! Exact nearest-neighbor search, KNN classification and the per-epoch
//! neighborhood snapshot used by local-margin training.
//!
//! Results are defined by exhaustive search: neighbors come back in
//! ascending distance, and equal distances are ordered by ascending point
//! id. The kd-tree only prunes subtrees whose lower bound is strictly
//! greater than the current k-th distance, so it returns exactly what a
//! full scan would.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{sq_dist_unchecked, Matrix};

/// Above this dimension the index falls back to a linear scan.
pub const KD_TREE_MAX_DIM: usize = 20;
const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    SqEuclidean,
}

impl Metric {
    #[inline]
    fn from_sq(self, sq: f64) -> f64 {
        match self {
            Metric::Euclidean => sq.sqrt(),
            Metric::SqEuclidean => sq,
        }
    }

    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        self.from_sq(sq_dist_unchecked(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: usize,
    pub dist: f64,
}

impl Neighbor {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

// Max-heap ordering: the worst kept candidate sits on top.
struct HeapItem(Neighbor);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug, Clone)]
struct KdTree {
    order: Vec<usize>,
    root: Node,
}

impl KdTree {
    fn build(points: &Matrix) -> Self {
        let mut order: Vec<usize> = (0..points.rows()).collect();
        let root = Self::build_node(points, &mut order, 0);
        KdTree { order, root }
    }

    fn build_node(points: &Matrix, ids: &mut [usize], offset: usize) -> Node {
        let len = ids.len();
        if len <= LEAF_SIZE {
            return Node::Leaf {
                start: offset,
                end: offset + len,
            };
        }
        let dim = points.cols();
        let mut axis = 0;
        let mut best_spread = -1.0;
        for d in 0..dim {
            let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = points.row(i)[d];
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = d;
            }
        }
        if best_spread <= 0.0 {
            // all points coincide
            return Node::Leaf {
                start: offset,
                end: offset + len,
            };
        }
        let mid = len / 2;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            points.row(a)[axis]
                .total_cmp(&points.row(b)[axis])
                .then(a.cmp(&b))
        });
        let value = points.row(ids[mid])[axis];
        // left coordinates <= value <= right coordinates
        let (left_ids, right_ids) = ids.split_at_mut(mid);
        let left = Self::build_node(points, left_ids, offset);
        let right = Self::build_node(points, right_ids, offset + mid);
        Node::Split {
            axis,
            value,
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn search(
        &self,
        node: &Node,
        points: &Matrix,
        metric: Metric,
        q: &[f64],
        k: usize,
        exclude: Option<usize>,
        heap: &mut BinaryHeap<HeapItem>,
    ) {
        match node {
            Node::Leaf { start, end } => {
                for &id in &self.order[*start..*end] {
                    if Some(id) == exclude {
                        continue;
                    }
                    push_candidate(
                        heap,
                        k,
                        Neighbor {
                            id,
                            dist: metric.distance(q, points.row(id)),
                        },
                    );
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, points, metric, q, k, exclude, heap);
                // Any point across the plane differs from q by at least |diff|
                // along `axis`; its computed distance is never below this bound.
                let bound = metric.from_sq(diff * diff);
                let full = heap.len() == k;
                if !full || bound <= heap.peek().map_or(f64::INFINITY, |w| w.0.dist) {
                    self.search(far, points, metric, q, k, exclude, heap);
                }
            }
        }
    }
}

fn push_candidate(heap: &mut BinaryHeap<HeapItem>, k: usize, cand: Neighbor) {
    if heap.len() < k {
        heap.push(HeapItem(cand));
    } else if let Some(worst) = heap.peek() {
        if cand.key_cmp(&worst.0) == Ordering::Less {
            heap.pop();
            heap.push(HeapItem(cand));
        }
    }
}

/// Exact nearest-neighbor index over labelled points.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    points: Matrix,
    labels: Vec<usize>,
    metric: Metric,
    tree: Option<KdTree>,
}

/// Outcome of a KNN vote.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub class: usize,
    pub k: usize,
    /// Neighbor count per class; sums to `k`.
    pub votes: BTreeMap<usize, usize>,
    pub neighbors: Vec<Neighbor>,
}

impl Classification {
    /// `votes[c] / k` for every class that appears among the neighbors.
    pub fn posterior(&self) -> BTreeMap<usize, f64> {
        self.votes
            .iter()
            .map(|(&c, &n)| (c, n as f64 / self.k as f64))
            .collect()
    }
}

impl NeighborIndex {
    /// Builds a kd-tree for dimensions up to [`KD_TREE_MAX_DIM`], a linear
    /// scan table above that.
    pub fn build(points: Matrix, labels: Vec<usize>, metric: Metric) -> Result<Self> {
        let use_tree = points.cols() <= KD_TREE_MAX_DIM;
        Self::with_structure(points, labels, metric, use_tree)
    }

    /// Same contract as [`build`](Self::build) but always scans linearly.
    pub fn brute_force(points: Matrix, labels: Vec<usize>, metric: Metric) -> Result<Self> {
        Self::with_structure(points, labels, metric, false)
    }

    fn with_structure(
        points: Matrix,
        labels: Vec<usize>,
        metric: Metric,
        use_tree: bool,
    ) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::EmptySet);
        }
        if labels.len() != points.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} points but {} labels",
                points.rows(),
                labels.len()
            )));
        }
        if !points.is_finite() {
            return Err(Error::NonFinite("index points"));
        }
        let tree = use_tree.then(|| KdTree::build(&points));
        Ok(NeighborIndex {
            points,
            labels,
            metric,
            tree,
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn points(&self) -> &Matrix {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn uses_tree(&self) -> bool {
        self.tree.is_some()
    }

    /// The `k` nearest points to `q`, nearest first. `exclude` drops one
    /// point id from consideration (an anchor querying its own position).
    pub fn query_knn(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Result<Vec<Neighbor>> {
        if q.len() != self.dim() {
            return Err(Error::DimMismatch {
                expected: self.dim(),
                got: q.len(),
            });
        }
        let available = self.len() - usize::from(exclude.is_some_and(|e| e < self.len()));
        if k == 0 {
            return Err(Error::InvalidArgument("k must be positive".into()));
        }
        if k > available {
            return Err(Error::KExceedsN { k, n: available });
        }
        let mut out = match &self.tree {
            Some(tree) => {
                let mut heap = BinaryHeap::with_capacity(k + 1);
                tree.search(&tree.root, &self.points, self.metric, q, k, exclude, &mut heap);
                heap.into_iter().map(|h| h.0).collect::<Vec<_>>()
            }
            None => self.scan(q, k, exclude),
        };
        out.sort_by(Neighbor::key_cmp);
        Ok(out)
    }

    fn scan(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = self
            .points
            .iter_rows()
            .enumerate()
            .filter(|(id, _)| Some(*id) != exclude)
            .map(|(id, p)| Neighbor {
                id,
                dist: self.metric.distance(q, p),
            })
            .collect();
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, Neighbor::key_cmp);
            all.truncate(k);
        }
        all
    }

    /// Majority vote over the `k` nearest neighbors. Ties between classes go
    /// to the tied class whose member appears first in the neighbor list.
    pub fn knn_classify(&self, q: &[f64], k: usize) -> Result<Classification> {
        let neighbors = self.query_knn(q, k, None)?;
        Ok(vote(&self.labels, neighbors, k))
    }
}

fn vote(labels: &[usize], neighbors: Vec<Neighbor>, k: usize) -> Classification {
    let mut votes = BTreeMap::new();
    for n in &neighbors {
        *votes.entry(labels[n.id]).or_insert(0usize) += 1;
    }
    let top = votes.values().copied().max().unwrap_or(0);
    let class = neighbors
        .iter()
        .map(|n| labels[n.id])
        .find(|c| votes[c] == top)
        .expect("at least one neighbor");
    Classification {
        class,
        k,
        votes,
        neighbors,
    }
}

/// `⌈√n⌉`, the neighborhood size tied to the training-set size.
pub fn choose_k(n: usize) -> usize {
    assert!(n >= 1, "choose_k needs at least one sample");
    let mut k = (n as f64).sqrt().ceil() as usize;
    // guard against floating error around perfect squares
    while k > 1 && (k - 1) * (k - 1) >= n {
        k -= 1;
    }
    while k * k < n {
        k += 1;
    }
    k
}

/// Neighborhood of one anchor at snapshot time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorNeighborhood {
    /// Distance to the k-th nearest neighbor of any class.
    pub d_ak: f64,
    /// Distance to the k-th nearest same-class neighbor; falls back to the
    /// farthest same-class peer when the class has fewer than k others, and
    /// is `None` when the anchor is alone in its class.
    pub d_ak_pos: Option<f64>,
    /// Ids of the k nearest neighbors, nearest first; never the anchor.
    pub neighbor_ids: Vec<usize>,
}

/// Neighborhood radii and memberships of every training point, frozen at
/// the start of an epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborhoodSnapshot {
    pub epoch: usize,
    pub k: usize,
    records: Vec<AnchorNeighborhood>,
}

impl NeighborhoodSnapshot {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, anchor: usize) -> &AnchorNeighborhood {
        &self.records[anchor]
    }

    pub fn records(&self) -> &[AnchorNeighborhood] {
        &self.records
    }

    pub fn d_ak(&self, anchor: usize) -> f64 {
        self.records[anchor].d_ak
    }

    pub fn d_ak_pos(&self, anchor: usize) -> Option<f64> {
        self.records[anchor].d_ak_pos
    }

    pub fn neighbor_ids(&self, anchor: usize) -> &[usize] {
        &self.records[anchor].neighbor_ids
    }

    pub fn in_neighborhood(&self, anchor: usize, id: usize) -> bool {
        self.records[anchor].neighbor_ids.contains(&id)
    }

    pub fn max_d_ak(&self) -> f64 {
        self.records.iter().map(|r| r.d_ak).fold(0.0, f64::max)
    }

    pub fn mean_d_ak(&self) -> f64 {
        self.records.iter().map(|r| r.d_ak).sum::<f64>() / self.records.len() as f64
    }

    /// Mean over anchors that have a positive radius.
    pub fn mean_d_ak_pos(&self) -> Option<f64> {
        let vals: Vec<f64> = self.records.iter().filter_map(|r| r.d_ak_pos).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

/// Computes `d_ak`, `d_ak_pos` and the k-neighborhood of every indexed
/// point, excluding the point itself.
pub fn take_snapshot(index: &NeighborIndex, k: usize, epoch: usize) -> Result<NeighborhoodSnapshot> {
    let n = index.len();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k >= n {
        return Err(Error::KExceedsN { k, n: n - 1 });
    }

    // One sub-index per class answers the same-class queries.
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &c) in index.labels().iter().enumerate() {
        members.entry(c).or_default().push(i);
    }
    let mut class_index: BTreeMap<usize, (NeighborIndex, Vec<usize>)> = BTreeMap::new();
    for (&c, ids) in &members {
        let pts = index.points().select_rows(ids);
        let sub = NeighborIndex::with_structure(
            pts,
            vec![c; ids.len()],
            index.metric(),
            index.uses_tree(),
        )?;
        class_index.insert(c, (sub, ids.clone()));
    }
    // position of each point inside its class list
    let mut local_pos = vec![0usize; n];
    for ids in members.values() {
        for (pos, &i) in ids.iter().enumerate() {
            local_pos[i] = pos;
        }
    }

    let mut records = Vec::with_capacity(n);
    for a in 0..n {
        let q = index.points().row(a);
        let neighbors = index.query_knn(q, k, Some(a))?;
        let d_ak = neighbors.last().expect("k >= 1").dist;
        let (sub, _) = &class_index[&index.labels()[a]];
        let peers = sub.len() - 1;
        let d_ak_pos = if peers == 0 {
            None
        } else {
            let kk = k.min(peers);
            let pos = sub.query_knn(q, kk, Some(local_pos[a]))?;
            pos.last().map(|p| p.dist)
        };
        records.push(AnchorNeighborhood {
            d_ak,
            d_ak_pos,
            neighbor_ids: neighbors.into_iter().map(|nb| nb.id).collect(),
        });
    }
    Ok(NeighborhoodSnapshot { epoch, k, records })
}

/// A query is an outlier when it lies farther from its nearest indexed
/// point than that point's neighborhood radius.
pub fn is_outlier(snapshot: &NeighborhoodSnapshot, index: &NeighborIndex, q: &[f64]) -> Result<bool> {
    if snapshot.len() != index.len() {
        return Err(Error::ShapeMismatch(format!(
            "snapshot covers {} points, index holds {}",
            snapshot.len(),
            index.len()
        )));
    }
    let nearest = index.query_knn(q, 1, None)?[0];
    Ok(nearest.dist > snapshot.d_ak(nearest.id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(points: &Matrix, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
        let mut all = Vec::new();
        for i in 0..points.rows() {
            if Some(i) == exclude {
                continue;
            }
            let dist = crate::math::euclid_dist(q, points.row(i)).unwrap();
            all.push(Neighbor { id: i, dist });
        }
        all.sort_by(|a, b| a.dist.partial_cmp(&b.dist).unwrap().then(a.id.cmp(&b.id)));
        all.truncate(k);
        all
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Matrix {
        let data = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::new(n, dim, data).unwrap()
    }

    fn line(xs: &[f64]) -> Matrix {
        Matrix::from_rows(&xs.iter().map(|&x| vec![x, 0.0]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn three_points_nearest_other() {
        let pts = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let idx = NeighborIndex::build(pts, vec![0, 0, 1], Metric::Euclidean).unwrap();
        let nn = |i: usize| idx.query_knn(idx.points().row(i), 1, Some(i)).unwrap()[0].id;
        assert_eq!(nn(0), 1);
        assert_eq!(nn(1), 0);
        assert_eq!(nn(2), 0);
    }

    #[test]
    fn query_examples() {
        let idx = NeighborIndex::build(line(&[0.0, 1.0, 5.0]), vec![0, 1, 2], Metric::Euclidean).unwrap();
        let got: Vec<usize> = idx.query_knn(&[0.4, 0.0], 2, None).unwrap().iter().map(|n| n.id).collect();
        assert_eq!(got, vec![0, 1]);
        let got = idx.query_knn(&[1.0, 0.0], 1, Some(1)).unwrap();
        assert_eq!(got[0].id, 0);
        assert_eq!(idx.query_knn(&[0.0, 0.0], 4, None).unwrap_err().code(), "k_exceeds_n");
        assert_eq!(idx.query_knn(&[0.0, 0.0], 3, Some(0)).unwrap_err().code(), "k_exceeds_n");
        assert_eq!(idx.query_knn(&[0.0], 1, None).unwrap_err().code(), "dim_mismatch");
    }

    #[test]
    fn duplicates_are_ordered_by_index() {
        let pts = line(&[3.0, 1.0, 1.0, 0.0, 1.0]);
        for idx in [
            NeighborIndex::build(pts.clone(), vec![0; 5], Metric::Euclidean).unwrap(),
            NeighborIndex::brute_force(pts.clone(), vec![0; 5], Metric::Euclidean).unwrap(),
        ] {
            let ids: Vec<usize> = idx.query_knn(&[1.0, 0.0], 4, None).unwrap().iter().map(|n| n.id).collect();
            assert_eq!(ids, vec![1, 2, 4, 3]);
        }
    }

    #[test]
    fn build_errors() {
        let empty = Matrix::from_raw(0, 2, vec![]);
        assert_eq!(NeighborIndex::build(empty, vec![], Metric::Euclidean).unwrap_err().code(), "empty_set");
        assert!(NeighborIndex::build(line(&[0.0]), vec![0, 1], Metric::Euclidean).is_err());
    }

    #[test]
    fn kd_tree_matches_brute_force_on_500_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(&mut rng, 500, 16);
        let idx = NeighborIndex::build(pts.clone(), vec![0; 500], Metric::Euclidean).unwrap();
        assert!(idx.uses_tree());
        for i in 0..500 {
            let q = pts.row(i);
            assert_eq!(idx.query_knn(q, 10, None).unwrap(), brute(&pts, q, 10, None));
        }
    }

    #[test]
    fn random_queries_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts = random_points(&mut rng, 1000, 3);
        let idx = NeighborIndex::build(pts.clone(), vec![0; 1000], Metric::Euclidean).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(-1.2..1.2)).collect();
            assert_eq!(idx.query_knn(&q, 31, None).unwrap(), brute(&pts, &q, 31, None));
        }
    }

    #[test]
    fn classification_votes_and_ties() {
        // neighbors of q=0 in order: ids 0 (A), 1 (A), 2 (B)
        let idx = NeighborIndex::build(line(&[0.1, 0.2, 0.3, 5.0]), vec![0, 0, 1, 1], Metric::Euclidean).unwrap();
        let c = idx.knn_classify(&[0.0, 0.0], 3).unwrap();
        assert_eq!(c.class, 0);
        assert_eq!(c.votes, BTreeMap::from([(0, 2), (1, 1)]));
        assert_eq!(c.posterior()[&0], 2.0 / 3.0);
        assert_eq!(c.posterior()[&1], 1.0 / 3.0);

        let c1 = idx.knn_classify(&[4.0, 0.0], 1).unwrap();
        assert_eq!((c1.class, c1.posterior()[&1]), (1, 1.0));

        // 2-2 tie: nearest neighbor's class wins
        let idx = NeighborIndex::build(line(&[0.1, 0.2, 0.3, 0.4]), vec![1, 0, 0, 1], Metric::Euclidean).unwrap();
        assert_eq!(idx.knn_classify(&[0.0, 0.0], 4).unwrap().class, 1);
    }

    #[test]
    fn choose_k_values() {
        assert_eq!(choose_k(54000), 233);
        assert_eq!(choose_k(45000), 213);
        assert_eq!(choose_k(273), 17);
        assert_eq!(choose_k(180), 14);
        assert_eq!(choose_k(1), 1);
        assert_eq!(choose_k(5000), 71);
        for n in 1..5000 {
            let k = choose_k(n);
            assert!(k * k >= n && (k - 1) * (k - 1) < n, "n={n}");
        }
    }

    #[test]
    fn snapshot_on_collinear_points() {
        let idx = NeighborIndex::build(line(&[0.0, 1.0, 2.0, 10.0]), vec![0, 0, 0, 0], Metric::Euclidean).unwrap();
        let snap = take_snapshot(&idx, 2, 0).unwrap();
        assert_eq!(snap.d_ak(0), 2.0);
        assert_eq!(snap.neighbor_ids(0), &[1, 2]);
        assert_eq!(snap.d_ak_pos(0), Some(2.0));
        assert_eq!(take_snapshot(&idx, 4, 0).unwrap_err().code(), "k_exceeds_n");
    }

    #[test]
    fn snapshot_positive_fallbacks() {
        // class 1 has exactly two members (one peer each), k=2
        let idx = NeighborIndex::build(
            line(&[0.0, 1.0, 2.0, 3.0, 10.0, 13.0, 40.0]),
            vec![0, 0, 0, 0, 1, 1, 2],
            Metric::Euclidean,
        )
        .unwrap();
        let snap = take_snapshot(&idx, 2, 3).unwrap();
        assert_eq!(snap.epoch, 3);
        assert_eq!(snap.d_ak_pos(4), Some(3.0));
        assert_eq!(snap.d_ak_pos(6), None);
        // anchor 0 has three peers, k=2 -> second nearest peer
        assert_eq!(snap.d_ak_pos(0), Some(2.0));
    }

    #[test]
    fn snapshot_neighborhood_consistency_on_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 300;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let c = i % 2;
            let off = if c == 0 { -1.0 } else { 1.0 };
            rows.push(vec![off + rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0)]);
            labels.push(c);
        }
        let pts = Matrix::from_rows(&rows).unwrap();
        let idx = NeighborIndex::build(pts.clone(), labels.clone(), Metric::Euclidean).unwrap();
        let snap = take_snapshot(&idx, 12, 0).unwrap();
        for a in 0..n {
            let d_ak = snap.d_ak(a);
            for j in 0..n {
                if j == a {
                    continue;
                }
                let d = Metric::Euclidean.distance(pts.row(a), pts.row(j));
                if snap.in_neighborhood(a, j) {
                    assert!(d <= d_ak);
                } else {
                    assert!(d >= d_ak);
                }
            }
            let has_negative = snap.neighbor_ids(a).iter().any(|&j| labels[j] != labels[a]);
            if has_negative {
                assert!(snap.d_ak_pos(a).unwrap() >= d_ak);
            }
        }
    }

    #[test]
    fn outlier_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = random_points(&mut rng, 200, 2);
        let labels: Vec<usize> = (0..200).map(|i| i % 3).collect();
        let idx = NeighborIndex::build(pts.clone(), labels, Metric::Euclidean).unwrap();
        let snap = take_snapshot(&idx, 5, 0).unwrap();
        assert!(!is_outlier(&snap, &idx, pts.row(17)).unwrap());
        assert!(is_outlier(&snap, &idx, &[15.0, 15.0]).unwrap());

        // direct per-query oracle
        let mut outliers = 0;
        let mut oracle = 0;
        for _ in 0..300 {
            let q = [rng.random_range(-1.6..1.6), rng.random_range(-1.6..1.6)];
            outliers += usize::from(is_outlier(&snap, &idx, &q).unwrap());
            let nn = brute(&pts, &q, 1, None)[0];
            oracle += usize::from(nn.dist > snap.d_ak(nn.id));
        }
        assert_eq!(outliers, oracle);
        assert!(outliers > 0);
    }
}
