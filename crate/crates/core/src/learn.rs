//! K-nearest-neighbour and random-forest classifiers over 2-D positions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{self, Domain};
use crate::scenario::Position;

/// Something that maps a position estimate to a class id.
pub trait Predictor: Sync {
    fn predict(&self, p: &Position) -> u32;

    fn predict_batch(&self, points: &[Position]) -> Vec<u32> {
        points.iter().map(|p| self.predict(p)).collect()
    }
}

fn dist2(a: &Position, b: &Position) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    dx * dx + dy * dy
}

/// Candidate neighbour ordered by distance, then training index.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Neighbour {
    d2: f64,
    idx: u32,
}

impl Eq for Neighbour {}

impl Ord for Neighbour {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.idx.cmp(&other.idx))
    }
}

impl PartialOrd for Neighbour {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy)]
struct KdNode {
    /// Training index of the point stored at this node.
    point: u32,
    axis: u8,
    left: u32,
    right: u32,
}

const NIL: u32 = u32::MAX;

/// Stores the whole training set; queries use a 2-D k-d tree that returns
/// exactly what a linear scan ordered by `(distance, index)` would.
#[derive(Debug, Clone)]
pub struct KnnModel {
    points: Vec<Position>,
    labels: Vec<u32>,
    k: usize,
    nodes: Vec<KdNode>,
    root: u32,
}

impl KnnModel {
    pub fn fit(points: Vec<Position>, labels: Vec<u32>, k: usize) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyInput("KNN needs at least one training sample"));
        }
        if points.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        if k == 0 || k > points.len() {
            return Err(Error::InvalidArgument(format!(
                "K must lie in 1..={}, got {k}",
                points.len()
            )));
        }
        if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
            return Err(Error::InvalidArgument("non-finite training position".into()));
        }
        let mut order: Vec<u32> = (0..points.len() as u32).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = build_kd(&points, &mut order, 0, &mut nodes);
        Ok(Self {
            points,
            labels,
            k,
            nodes,
            root,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of the K nearest training points, nearest first.
    pub fn neighbours(&self, q: &Position) -> Vec<usize> {
        let mut heap = BinaryHeap::with_capacity(self.k + 1);
        self.search(self.root, q, &mut heap);
        let mut found = heap.into_vec();
        found.sort();
        found.into_iter().map(|n| n.idx as usize).collect()
    }

    fn search(&self, node: u32, q: &Position, heap: &mut BinaryHeap<Neighbour>) {
        if node == NIL {
            return;
        }
        let n = self.nodes[node as usize];
        let p = &self.points[n.point as usize];
        let cand = Neighbour {
            d2: dist2(p, q),
            idx: n.point,
        };
        if heap.len() < self.k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("heap is full") {
            heap.pop();
            heap.push(cand);
        }
        let diff = if n.axis == 0 { q.x - p.x } else { q.y - p.y };
        let (near, far) = if diff <= 0.0 { (n.left, n.right) } else { (n.right, n.left) };
        self.search(near, q, heap);
        // an equidistant point with a lower index could still displace the
        // current worst, so only strictly farther planes are pruned
        if heap.len() < self.k || diff * diff <= heap.peek().expect("heap is full").d2 {
            self.search(far, q, heap);
        }
    }

    /// Reference implementation: scan every training point.
    pub fn neighbours_linear(&self, q: &Position) -> Vec<usize> {
        let mut all: Vec<Neighbour> = self
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| Neighbour {
                d2: dist2(p, q),
                idx: i as u32,
            })
            .collect();
        all.sort();
        all.truncate(self.k);
        all.into_iter().map(|n| n.idx as usize).collect()
    }

    fn vote(&self, neighbours: &[usize]) -> u32 {
        if self.k == 1 {
            return self.labels[neighbours[0]];
        }
        let mut counts: Vec<(u32, usize)> = Vec::new();
        for &i in neighbours {
            let label = self.labels[i];
            match counts.iter_mut().find(|(l, _)| *l == label) {
                Some((_, c)) => *c += 1,
                None => counts.push((label, 1)),
            }
        }
        let top = counts.iter().map(|&(_, c)| c).max().unwrap_or(0);
        // counts is in order of first appearance, i.e. of nearest member
        counts.iter().find(|&&(_, c)| c == top).map(|&(l, _)| l).expect("at least one neighbour")
    }

    pub fn predict_linear(&self, q: &Position) -> u32 {
        self.vote(&self.neighbours_linear(q))
    }
}

impl Predictor for KnnModel {
    fn predict(&self, q: &Position) -> u32 {
        self.vote(&self.neighbours(q))
    }
}

fn build_kd(points: &[Position], order: &mut [u32], depth: usize, nodes: &mut Vec<KdNode>) -> u32 {
    if order.is_empty() {
        return NIL;
    }
    let axis = (depth % 2) as u8;
    let key = |i: &u32| {
        let p = &points[*i as usize];
        if axis == 0 {
            p.x
        } else {
            p.y
        }
    };
    order.sort_by(|a, b| key(a).total_cmp(&key(b)).then(a.cmp(b)));
    let mid = order.len() / 2;
    let at = nodes.len() as u32;
    nodes.push(KdNode {
        point: order[mid],
        axis,
        left: NIL,
        right: NIL,
    });
    let (lo, rest) = order.split_at_mut(mid);
    let hi = &mut rest[1..];
    let left = build_kd(points, lo, depth + 1, nodes);
    let right = build_kd(points, hi, depth + 1, nodes);
    nodes[at as usize].left = left;
    nodes[at as usize].right = right;
    at
}

/// Gini impurity of a class histogram.
pub fn gini_impurity(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Split {
        feature: u8,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        class_id: u32,
    },
}

/// One CART tree; node 0 is the root. `x[feature] <= threshold` goes left.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, p: &Position) -> u32 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { class_id } => return class_id,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    let v = if feature == 0 { p.x } else { p.y };
                    at = if v <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    /// Length of the longest root-to-leaf path, in edges.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

pub const FEATURE_COUNT: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub max_depth: usize,
    pub features_per_split: usize,
}

/// Features examined per split: `max(1, floor(sqrt(features)))`.
pub fn features_per_split(feature_count: usize) -> usize {
    ((feature_count as f64).sqrt().floor() as usize).max(1)
}

struct TreeBuilder<'a> {
    xs: [&'a [f64]; FEATURE_COUNT],
    /// Dense class index of each training sample.
    y: &'a [usize],
    classes: &'a [u32],
    max_depth: usize,
    features_per_split: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl TreeBuilder<'_> {
    fn histogram(&self, rows: &[usize]) -> Vec<usize> {
        let mut h = vec![0; self.classes.len()];
        for &r in rows {
            h[self.y[r]] += 1;
        }
        h
    }

    fn majority(&self, hist: &[usize]) -> u32 {
        let mut best = 0;
        for (i, &c) in hist.iter().enumerate() {
            if c > hist[best] {
                best = i;
            }
        }
        self.classes[best]
    }

    /// Best midpoint split on one feature. The score is
    /// `sum_l^2/n_l + sum_r^2/n_r` over class counts; maximising it minimises
    /// the weighted child Gini impurity.
    fn best_on(&self, feature: usize, rows: &mut [usize], hist: &[usize]) -> Option<BestSplit> {
        let x = self.xs[feature];
        rows.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
        let n = rows.len();
        let mut left = vec![0usize; hist.len()];
        let mut right = hist.to_vec();
        let mut sq_l = 0.0f64;
        let mut sq_r: f64 = hist.iter().map(|&c| (c * c) as f64).sum();
        let mut best: Option<BestSplit> = None;
        for i in 0..n - 1 {
            let c = self.y[rows[i]];
            sq_l += (2 * left[c] + 1) as f64;
            left[c] += 1;
            sq_r -= (2 * right[c] - 1) as f64;
            right[c] -= 1;
            let (a, b) = (x[rows[i]], x[rows[i + 1]]);
            if a == b {
                continue;
            }
            let n_l = (i + 1) as f64;
            let score = sq_l / n_l + sq_r / (n - i - 1) as f64;
            if best.as_ref().is_none_or(|s| score > s.score) {
                let mut threshold = 0.5 * (a + b);
                if threshold >= b {
                    threshold = a;
                }
                best = Some(BestSplit {
                    feature,
                    threshold,
                    score,
                });
            }
        }
        best
    }

    fn grow<R: Rng>(&mut self, rows: &mut [usize], depth: usize, rng: &mut R) -> u32 {
        let at = self.nodes.len() as u32;
        let hist = self.histogram(rows);
        let leaf = Node::Leaf {
            class_id: self.majority(&hist),
        };
        self.nodes.push(leaf);
        let distinct = hist.iter().filter(|&&c| c > 0).count();
        if depth >= self.max_depth || distinct <= 1 || rows.len() < 2 {
            return at;
        }
        let n = rows.len() as f64;
        let parent_score: f64 = hist.iter().map(|&c| (c * c) as f64).sum::<f64>() / n;

        // random feature order; the first `features_per_split` are the draw,
        // the rest are only consulted when the draw cannot split
        let mut features: Vec<usize> = (0..FEATURE_COUNT).collect();
        for i in (1..features.len()).rev() {
            let j = rng.random_range(0..=i);
            features.swap(i, j);
        }
        let improves = |s: &BestSplit| s.score > parent_score * (1.0 + 1e-12);
        let mut chosen: Option<BestSplit> = None;
        for (rank, &f) in features.iter().enumerate() {
            if rank >= self.features_per_split && chosen.is_some() {
                break;
            }
            if let Some(s) = self.best_on(f, rows, &hist).filter(improves) {
                if chosen.as_ref().is_none_or(|c| s.score > c.score) {
                    chosen = Some(s);
                }
            }
        }
        let Some(split) = chosen else {
            return at;
        };

        let x = self.xs[split.feature];
        let mut lo = 0;
        for i in 0..rows.len() {
            if x[rows[i]] <= split.threshold {
                rows.swap(lo, i);
                lo += 1;
            }
        }
        let (l_rows, r_rows) = rows.split_at_mut(lo);
        let left = self.grow(l_rows, depth + 1, rng);
        let right = self.grow(r_rows, depth + 1, rng);
        self.nodes[at as usize] = Node::Split {
            feature: split.feature as u8,
            threshold: split.threshold,
            left,
            right,
        };
        at
    }
}

/// Trains `trees` CART trees on bootstrap resamples. Tree `t` draws from its
/// own random stream, so the forest depends only on the data and `seed`.
pub fn rf_train(points: &[Position], labels: &[u32], trees: usize, max_depth: usize, seed: u64) -> Result<ForestModel> {
    if points.is_empty() {
        return Err(Error::EmptyInput("random forest needs at least one training sample"));
    }
    if points.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    if trees == 0 {
        return Err(Error::InvalidArgument("forest needs at least one tree".into()));
    }
    if max_depth > u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("max depth {max_depth} too large")));
    }
    let mut classes: Vec<u32> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let y: Vec<usize> = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label is registered"))
        .collect();
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    let fps = features_per_split(FEATURE_COUNT);
    let n = points.len();

    let trees = (0..trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng::stream(seed, Domain::Forest, t as u64);
            let mut rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut builder = TreeBuilder {
                xs: [&xs, &ys],
                y: &y,
                classes: &classes,
                max_depth,
                features_per_split: fps,
                nodes: Vec::new(),
            };
            builder.grow(&mut rows, 0, &mut rng);
            Tree { nodes: builder.nodes }
        })
        .collect();
    Ok(ForestModel {
        trees,
        max_depth,
        features_per_split: fps,
    })
}

impl Predictor for ForestModel {
    fn predict(&self, p: &Position) -> u32 {
        let mut votes: Vec<u32> = self.trees.iter().map(|t| t.predict(p)).collect();
        votes.sort_unstable();
        let (mut best, mut best_count) = (votes[0], 0);
        let mut i = 0;
        while i < votes.len() {
            let mut j = i;
            while j < votes.len() && votes[j] == votes[i] {
                j += 1;
            }
            if j - i > best_count {
                best = votes[i];
                best_count = j - i;
            }
            i = j;
        }
        best
    }
}

const FOREST_MAGIC: &[u8; 4] = b"CRRF";
const FOREST_VERSION: u8 = 1;
const LEAF_TAG: u8 = 0xFF;
const HEADER_BYTES: usize = 4 + 1 + 1 + 2 + 4;
const TREE_HEADER_BYTES: usize = 4;
const SPLIT_BYTES: usize = 1 + 8 + 4 + 4;
const LEAF_BYTES: usize = 1 + 4;

/// Serialized size in bytes: a 12-byte header, 4 bytes of node count per
/// tree, 17 bytes per split node and 5 per leaf.
pub fn model_size(model: &ForestModel) -> usize {
    HEADER_BYTES
        + model
            .trees
            .iter()
            .map(|t| {
                TREE_HEADER_BYTES
                    + t.nodes
                        .iter()
                        .map(|n| match n {
                            Node::Split { .. } => SPLIT_BYTES,
                            Node::Leaf { .. } => LEAF_BYTES,
                        })
                        .sum::<usize>()
            })
            .sum::<usize>()
}

/// Little-endian binary form; its length is [`model_size`].
pub fn serialize_forest(model: &ForestModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(model_size(model));
    out.extend_from_slice(FOREST_MAGIC);
    out.push(FOREST_VERSION);
    out.push(FEATURE_COUNT as u8);
    out.extend_from_slice(&(model.max_depth as u16).to_le_bytes());
    out.extend_from_slice(&(model.trees.len() as u32).to_le_bytes());
    for tree in &model.trees {
        out.extend_from_slice(&(tree.nodes.len() as u32).to_le_bytes());
        for node in &tree.nodes {
            match *node {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    out.push(feature);
                    out.extend_from_slice(&threshold.to_le_bytes());
                    out.extend_from_slice(&left.to_le_bytes());
                    out.extend_from_slice(&right.to_le_bytes());
                }
                Node::Leaf { class_id } => {
                    out.push(LEAF_TAG);
                    out.extend_from_slice(&class_id.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.at + N;
        let chunk = self
            .bytes
            .get(self.at..end)
            .ok_or_else(|| Error::Format(format!("forest truncated at byte {}", self.at)))?;
        self.at = end;
        Ok(chunk.try_into().expect("slice has length N"))
    }
}

pub fn deserialize_forest(bytes: &[u8]) -> Result<ForestModel> {
    let mut r = Reader { bytes, at: 0 };
    if &r.take::<4>()? != FOREST_MAGIC {
        return Err(Error::Format("not a forest file".into()));
    }
    let [version] = r.take::<1>()?;
    if version != FOREST_VERSION {
        return Err(Error::Format(format!("unsupported forest version {version}")));
    }
    let [features] = r.take::<1>()?;
    if features as usize != FEATURE_COUNT {
        return Err(Error::Format(format!("forest expects {features} features")));
    }
    let max_depth = u16::from_le_bytes(r.take()?) as usize;
    let tree_count = u32::from_le_bytes(r.take()?) as usize;
    let mut trees = Vec::with_capacity(tree_count.min(1 << 16));
    for t in 0..tree_count {
        let node_count = u32::from_le_bytes(r.take()?) as usize;
        if node_count == 0 {
            return Err(Error::Format(format!("tree {t} has no nodes")));
        }
        let mut nodes = Vec::with_capacity(node_count.min(1 << 20));
        for _ in 0..node_count {
            let [tag] = r.take::<1>()?;
            if tag == LEAF_TAG {
                nodes.push(Node::Leaf {
                    class_id: u32::from_le_bytes(r.take()?),
                });
            } else if (tag as usize) < FEATURE_COUNT {
                let threshold = f64::from_le_bytes(r.take()?);
                let left = u32::from_le_bytes(r.take()?);
                let right = u32::from_le_bytes(r.take()?);
                if left as usize >= node_count || right as usize >= node_count {
                    return Err(Error::Format(format!("tree {t} has a dangling child index")));
                }
                nodes.push(Node::Split {
                    feature: tag,
                    threshold,
                    left,
                    right,
                });
            } else {
                return Err(Error::Format(format!("bad node tag {tag:#x} in tree {t}")));
            }
        }
        // children always follow their parent, which rules out cycles
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, .. } = n {
                if *left as usize <= i || *right as usize <= i {
                    return Err(Error::Format(format!("tree {t} is not in preorder")));
                }
            }
        }
        trees.push(Tree { nodes });
    }
    if r.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    Ok(ForestModel {
        trees,
        max_depth,
        features_per_split: features_per_split(FEATURE_COUNT),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Position> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Position::new(rng.random_range(0.0..6.0), rng.random_range(0.0..25.0)))
            .collect()
    }

    #[test]
    fn gini_hand_values() {
        assert_eq!(gini_impurity(&[2, 2]), 0.5);
        assert_eq!(gini_impurity(&[4, 0]), 0.0);
        assert_eq!(gini_impurity(&[]), 0.0);
    }

    #[test]
    fn knn_basics() {
        let model = KnnModel::fit(vec![Position::new(0.0, 0.0), Position::new(3.0, 0.0)], vec![7, 9], 1).unwrap();
        assert_eq!(model.predict(&Position::new(3.0, 0.0)), 9);
        assert_eq!(model.predict(&Position::new(1.0, 0.0)), 7);
        // equidistant: lower training index
        assert_eq!(model.predict(&Position::new(1.5, 0.0)), 7);
        assert!(KnnModel::fit(vec![], vec![], 1).is_err());
        assert!(KnnModel::fit(vec![Position::new(0.0, 0.0)], vec![1], 2).is_err());
        assert!(KnnModel::fit(vec![Position::new(0.0, 0.0)], vec![1], 0).is_err());
    }

    #[test]
    fn knn_vote_tie_goes_to_nearest() {
        let pts = vec![
            Position::new(0.0, 0.0),
            Position::new(1.0, 0.0),
            Position::new(2.0, 0.0),
            Position::new(3.0, 0.0),
        ];
        let model = KnnModel::fit(pts, vec![5, 4, 5, 4], 4).unwrap();
        assert_eq!(model.predict(&Position::new(2.9, 0.0)), 4);
        assert_eq!(model.predict(&Position::new(0.1, 0.0)), 5);
        let model = KnnModel::fit(model.points.clone(), vec![5, 4, 4, 1], 3).unwrap();
        assert_eq!(model.predict(&Position::new(0.0, 0.0)), 4);
    }

    #[test]
    fn kd_tree_matches_linear_scan() {
        let pts = random_points(3000, 1);
        let labels: Vec<u32> = (0..3000).map(|i| (i % 17) as u32).collect();
        for k in [1, 3, 8] {
            let model = KnnModel::fit(pts.clone(), labels.clone(), k).unwrap();
            for q in random_points(300, 2 + k as u64) {
                assert_eq!(model.neighbours(&q), model.neighbours_linear(&q));
            }
        }
        // heavy duplication and collinearity
        let grid: Vec<Position> = (0..400).map(|i| Position::new((i % 4) as f64, ((i / 4) % 5) as f64)).collect();
        let model = KnnModel::fit(grid.clone(), (0..400).collect(), 5).unwrap();
        for q in &grid {
            assert_eq!(model.neighbours(q), model.neighbours_linear(q));
        }
    }

    #[test]
    fn single_class_forest_is_all_leaves() {
        let pts = random_points(50, 3);
        let forest = rf_train(&pts, &vec![42; 50], 5, 10, 1).unwrap();
        for t in &forest.trees {
            assert_eq!(t.nodes, vec![Node::Leaf { class_id: 42 }]);
        }
        assert_eq!(forest.predict(&Position::new(100.0, -3.0)), 42);
    }

    #[test]
    fn separable_clusters_fit_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let (cx, label) = if i % 2 == 0 { (1.0, 3) } else { (5.0, 11) };
            pts.push(Position::new(cx + rng.random_range(-0.5..0.5), rng.random_range(0.0..25.0)));
            labels.push(label);
        }
        let forest = rf_train(&pts, &labels, 10, 5, 4).unwrap();
        for (p, l) in pts.iter().zip(&labels) {
            assert_eq!(forest.predict(p), *l);
        }
    }

    #[test]
    fn depth_bound_and_determinism() {
        let pts = random_points(2000, 5);
        let labels: Vec<u32> = pts.iter().map(|p| ((p.x * 3.0) as u32) * 10 + (p.y / 4.0) as u32).collect();
        for depth in [0, 1, 4, 9] {
            let a = rf_train(&pts, &labels, 8, depth, 77).unwrap();
            assert!(a.trees.iter().all(|t| t.depth() <= depth));
            assert_eq!(a.trees.len(), 8);
            let b = rf_train(&pts, &labels, 8, depth, 77).unwrap();
            assert_eq!(a, b);
        }
        let a = rf_train(&pts, &labels, 8, 9, 77).unwrap();
        let c = rf_train(&pts, &labels, 8, 9, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn inseparable_duplicates_stop_splitting() {
        let p = Position::new(1.0, 1.0);
        let forest = rf_train(&[p, p, p, p], &[2, 1, 2, 1], 3, 10, 0).unwrap();
        for t in &forest.trees {
            assert_eq!(t.nodes.len(), 1);
        }
    }

    #[test]
    fn forest_vote_tie_goes_to_smallest_class() {
        let forest = ForestModel {
            trees: vec![
                Tree {
                    nodes: vec![Node::Leaf { class_id: 9 }],
                },
                Tree {
                    nodes: vec![Node::Leaf { class_id: 4 }],
                },
            ],
            max_depth: 0,
            features_per_split: 1,
        };
        assert_eq!(forest.predict(&Position::new(0.0, 0.0)), 4);
        assert_eq!(features_per_split(2), 1);
        assert_eq!(features_per_split(9), 3);
    }

    #[test]
    fn forest_bytes_roundtrip_and_size() {
        let single = ForestModel {
            trees: vec![Tree {
                nodes: vec![Node::Leaf { class_id: 1 }],
            }],
            max_depth: 3,
            features_per_split: 1,
        };
        assert_eq!(model_size(&single), 12 + 4 + 5);
        let doubled = ForestModel {
            trees: vec![single.trees[0].clone(), single.trees[0].clone()],
            ..single.clone()
        };
        assert_eq!(model_size(&doubled) - 12, 2 * (model_size(&single) - 12));

        let pts = random_points(500, 8);
        let labels: Vec<u32> = pts.iter().map(|p| (p.y / 5.0) as u32).collect();
        let forest = rf_train(&pts, &labels, 6, 7, 2).unwrap();
        let bytes = serialize_forest(&forest);
        assert_eq!(bytes.len(), model_size(&forest));
        assert_eq!(deserialize_forest(&bytes).unwrap(), forest);
        assert!(deserialize_forest(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(deserialize_forest(&bad).is_err());
    }
}
