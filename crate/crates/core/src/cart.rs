//! Binary classification trees grown with the Gini criterion.
//!
//! Trees live in an arena (`Vec<TreeNode>`) with the root at index 0. A sample
//! goes left at a split iff `value <= threshold`.
//!
//! Split candidates are midpoints between consecutive distinct values of a
//! feature. Candidates are compared with exact integer arithmetic, so ties are
//! real ties and resolve to the lowest feature index, then the lowest
//! threshold.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub type NodeId = usize;

/// Largest node size for which exact split comparison fits in `u128`.
pub const MAX_TRAINING_SAMPLES: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeKind {
    Leaf,
    Split {
        feature: usize,
        threshold: f64,
        left: NodeId,
        right: NodeId,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub kind: NodeKind,
    /// Per-class (possibly weighted) training counts of the samples reaching
    /// this node.
    pub class_counts: [f64; 2],
    /// `class_counts / sum(class_counts)`.
    pub probabilities: [f64; 2],
    pub impurity: f64,
    pub n_node_samples: u64,
}

impl TreeNode {
    pub fn new(kind: NodeKind, class_counts: [f64; 2], n_node_samples: u64) -> TreeNode {
        let total = class_counts[0] + class_counts[1];
        TreeNode {
            kind,
            class_counts,
            probabilities: [class_counts[0] / total, class_counts[1] / total],
            impurity: gini_weighted(class_counts),
            n_node_samples,
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub max_features: Option<usize>,
    pub max_leaf_nodes: Option<usize>,
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            max_features: None,
            max_leaf_nodes: None,
            min_samples_split: 2,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        let bounds = [
            ("max_depth", self.max_depth),
            ("max_features", self.max_features),
            ("max_leaf_nodes", self.max_leaf_nodes),
            ("min_samples_split", Some(self.min_samples_split)),
        ];
        for (name, v) in bounds {
            if v == Some(0) {
                return Err(Error::InvalidParam(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

/// A structural problem found while assembling a tree from raw nodes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidTree {
    pub node: NodeId,
    pub message: String,
}

impl fmt::Display for InvalidTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "node {}: {}", self.node, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    nodes: Vec<TreeNode>,
    params: TreeParams,
    n_features: usize,
    feature_importances: Vec<f64>,
}

impl TreeModel {
    /// Assembles a tree from an arena, checking that it is a rooted binary
    /// tree with valid splits and leaves.
    pub fn from_nodes(
        nodes: Vec<TreeNode>,
        n_features: usize,
        params: TreeParams,
    ) -> std::result::Result<TreeModel, InvalidTree> {
        let bad = |node, message: String| Err(InvalidTree { node, message });
        if nodes.is_empty() {
            return bad(0, "tree has no nodes".into());
        }
        let mut parents = vec![0usize; nodes.len()];
        for (id, node) in nodes.iter().enumerate() {
            let [c0, c1] = node.class_counts;
            if !(c0.is_finite() && c1.is_finite() && c0 >= 0.0 && c1 >= 0.0) {
                return bad(
                    id,
                    format!("class counts {:?} must be finite and non-negative", node.class_counts),
                );
            }
            match node.kind {
                NodeKind::Leaf => {
                    if c0 + c1 <= 0.0 {
                        return bad(id, "leaf class counts must have a positive sum".into());
                    }
                }
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if feature >= n_features {
                        return bad(id, format!("feature {feature} out of range for {n_features} features"));
                    }
                    if !threshold.is_finite() {
                        return bad(id, format!("threshold {threshold} is not finite"));
                    }
                    for child in [left, right] {
                        if child >= nodes.len() {
                            return bad(id, format!("child {child} out of range"));
                        }
                        if child == 0 {
                            return bad(id, "the root cannot be a child".into());
                        }
                        parents[child] += 1;
                    }
                    if left == right {
                        return bad(id, "left and right children are the same node".into());
                    }
                }
            }
        }
        if let Some(id) = (1..nodes.len()).find(|&i| parents[i] != 1) {
            return bad(id, format!("node has {} parents, expected 1", parents[id]));
        }
        // One parent per non-root node and n - 1 edges: a tree iff every node
        // is reachable from the root.
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![0];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return bad(id, "cycle detected".into());
            }
            if let NodeKind::Split { left, right, .. } = nodes[id].kind {
                stack.push(right);
                stack.push(left);
            }
        }
        if let Some(id) = seen.iter().position(|s| !s) {
            return bad(id, "node is unreachable from the root".into());
        }

        let feature_importances = compute_importances(&nodes, n_features);
        Ok(TreeModel {
            nodes,
            params,
            n_features,
            feature_importances,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn root(&self) -> NodeId {
        0
    }

    pub fn params(&self) -> &TreeParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_importances(&self) -> &[f64] {
        &self.feature_importances
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Length of the longest root-to-leaf path (0 for a single leaf).
    pub fn depth(&self) -> usize {
        let mut max = 0;
        let mut stack = vec![(0, 0)];
        while let Some((id, d)) = stack.pop() {
            max = max.max(d);
            if let NodeKind::Split { left, right, .. } = self.nodes[id].kind {
                stack.push((left, d + 1));
                stack.push((right, d + 1));
            }
        }
        max
    }

    /// Leaf reached by `sample`. The sample is assumed finite and of the right
    /// length; see [`TreeModel::predict_proba`] for the checked entry point.
    pub fn leaf_for(&self, sample: &[f64]) -> NodeId {
        let mut id = 0;
        while let NodeKind::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[id].kind
        {
            id = if sample[feature] <= threshold { left } else { right };
        }
        id
    }

    pub fn predict_proba(&self, sample: &[f64]) -> Result<[f64; 2]> {
        check_sample(sample, self.n_features)?;
        Ok(self.nodes[self.leaf_for(sample)].probabilities)
    }
}

pub(crate) fn check_sample(sample: &[f64], n_features: usize) -> Result<()> {
    if sample.len() != n_features {
        return Err(Error::FeatureCount {
            expected: n_features,
            got: sample.len(),
        });
    }
    if let Some((feature, &value)) = sample.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { feature, value });
    }
    Ok(())
}

/// Gini impurity `1 - sum(p_k^2)` of a two-class histogram.
pub fn gini(class_counts: [u64; 2]) -> Result<f64> {
    if class_counts == [0, 0] {
        return Err(Error::InvalidParam("gini of an empty node".into()));
    }
    Ok(gini_weighted([class_counts[0] as f64, class_counts[1] as f64]))
}

pub(crate) fn gini_weighted(counts: [f64; 2]) -> f64 {
    let total = counts[0] + counts[1];
    let p0 = counts[0] / total;
    let p1 = counts[1] / total;
    1.0 - (p0 * p0 + p1 * p1)
}

/// Mean decrease in impurity per feature, normalised to sum to 1.
pub fn feature_importances(model: &TreeModel) -> Vec<f64> {
    model.feature_importances.clone()
}

fn compute_importances(nodes: &[TreeNode], n_features: usize) -> Vec<f64> {
    let mut imp = vec![0.0; n_features];
    let n_total = nodes[0].n_node_samples as f64;
    if n_total <= 0.0 {
        return imp;
    }
    for node in nodes {
        if let NodeKind::Split {
            feature, left, right, ..
        } = node.kind
        {
            let (l, r) = (&nodes[left], &nodes[right]);
            let n = node.n_node_samples as f64;
            if n <= 0.0 {
                continue;
            }
            let decrease =
                node.impurity - (l.n_node_samples as f64 / n) * l.impurity - (r.n_node_samples as f64 / n) * r.impurity;
            imp[feature] += (n / n_total) * decrease.max(0.0);
        }
    }
    let sum: f64 = imp.iter().sum();
    if sum > 0.0 {
        for v in &mut imp {
            *v /= sum;
        }
    }
    imp
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// `gini(node) - sum over children of (n_child / n_node) * gini(child)`.
    pub impurity_decrease: f64,
}

/// Midpoint threshold between consecutive distinct values `lo < hi`, always
/// satisfying `lo <= t < hi`.
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let t = lo / 2.0 + hi / 2.0;
    if lo <= t && t < hi {
        t
    } else {
        lo
    }
}

/// Split score `(a^2 + b^2) / n_l + (c^2 + d^2) / n_r` held as an exact
/// fraction. Maximising it maximises the Gini decrease.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn of(left: [u64; 2], right: [u64; 2]) -> Score {
        let sq = |c: [u64; 2]| (c[0] as u128).pow(2) + (c[1] as u128).pow(2);
        let nl = (left[0] + left[1]) as u128;
        let nr = (right[0] + right[1]) as u128;
        Score {
            num: sq(left) * nr + sq(right) * nl,
            den: nl * nr,
        }
    }

    fn parent(counts: [u64; 2]) -> Score {
        Score {
            num: (counts[0] as u128).pow(2) + (counts[1] as u128).pow(2),
            den: (counts[0] + counts[1]) as u128,
        }
    }

    fn beats(&self, other: &Score) -> bool {
        self.num * other.den > other.num * self.den
    }
}

fn counts_of(rows: &[usize], data: &Dataset) -> [u64; 2] {
    let targets = data.targets();
    let mut c = [0u64; 2];
    for &i in rows {
        c[targets[i] as usize] += 1;
    }
    c
}

fn to_f64(c: [u64; 2]) -> [f64; 2] {
    [c[0] as f64, c[1] as f64]
}

/// Best Gini split of `rows` over `candidate_features`, or `None` when no
/// candidate strictly lowers the impurity. `rows` may repeat indices
/// (bootstrap samples); repeats count with multiplicity.
pub fn best_split(rows: &[usize], data: &Dataset, candidate_features: &[usize]) -> Option<Split> {
    if rows.len() < 2 {
        return None;
    }
    let total = counts_of(rows, data);
    if total[0] == 0 || total[1] == 0 {
        return None;
    }
    let mut features = candidate_features.to_vec();
    features.sort_unstable();
    features.dedup();

    let targets = data.targets();
    let mut best: Option<(Score, usize, f64, [u64; 2])> = None;
    let mut column: Vec<(f64, u8)> = Vec::with_capacity(rows.len());
    for &feature in &features {
        column.clear();
        column.extend(rows.iter().map(|&i| (data.value(i, feature), targets[i])));
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; 2];
        for k in 0..column.len() - 1 {
            left[column[k].1 as usize] += 1;
            let (lo, hi) = (column[k].0, column[k + 1].0);
            if lo == hi {
                continue;
            }
            let right = [total[0] - left[0], total[1] - left[1]];
            let score = Score::of(left, right);
            if best.as_ref().is_none_or(|(b, ..)| score.beats(b)) {
                best = Some((score, feature, midpoint(lo, hi), left));
            }
        }
    }

    let (score, feature, threshold, left) = best?;
    if !score.beats(&Score::parent(total)) {
        return None;
    }
    let right = [total[0] - left[0], total[1] - left[1]];
    let n = rows.len() as f64;
    let nl = (left[0] + left[1]) as f64;
    let nr = (right[0] + right[1]) as f64;
    let impurity_decrease =
        gini_weighted(to_f64(total)) - (nl / n) * gini_weighted(to_f64(left)) - (nr / n) * gini_weighted(to_f64(right));
    Some(Split {
        feature,
        threshold,
        impurity_decrease,
    })
}

/// Generator for a tree's feature subsampling: ChaCha8 seeded with `seed`,
/// stream 0.
pub(crate) fn tree_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sorted uniform subset of `k` of the `n_features` indices (partial
/// Fisher-Yates). Draws nothing when `k >= n_features`.
fn candidate_features(n_features: usize, max_features: Option<usize>, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n_features).collect();
    let k = match max_features {
        Some(k) if k < n_features => k,
        _ => return idx,
    };
    for i in 0..k {
        let j = rng.gen_range(i..n_features);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

pub fn fit_tree(data: &Dataset, params: &TreeParams) -> Result<TreeModel> {
    let rows: Vec<usize> = (0..data.n_samples()).collect();
    fit_tree_on_rows(data, rows, params, &mut tree_rng(params.seed))
}

/// Fits a tree on a multiset of row indices, drawing feature subsets from
/// `rng`.
pub(crate) fn fit_tree_on_rows(
    data: &Dataset,
    rows: Vec<usize>,
    params: &TreeParams,
    rng: &mut ChaCha8Rng,
) -> Result<TreeModel> {
    params.validate()?;
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if rows.len() > MAX_TRAINING_SAMPLES {
        return Err(Error::InvalidParam(format!(
            "{} training rows exceed the supported maximum of {MAX_TRAINING_SAMPLES}",
            rows.len()
        )));
    }
    let mut grower = Grower {
        data,
        params,
        rng,
        nodes: Vec::new(),
    };
    if params.max_leaf_nodes.is_some() {
        grower.grow_best_first(rows);
    } else {
        grower.grow_depth_first(rows);
    }
    let nodes = grower.nodes;
    TreeModel::from_nodes(nodes, data.n_features(), *params)
        .map_err(|e| Error::InvalidParam(format!("grown tree is malformed: {e}")))
}

struct Grower<'a> {
    data: &'a Dataset,
    params: &'a TreeParams,
    rng: &'a mut ChaCha8Rng,
    nodes: Vec<TreeNode>,
}

impl Grower<'_> {
    fn push_leaf(&mut self, rows: &[usize]) -> NodeId {
        let counts = counts_of(rows, self.data);
        self.nodes
            .push(TreeNode::new(NodeKind::Leaf, to_f64(counts), rows.len() as u64));
        self.nodes.len() - 1
    }

    /// Split for a node, or `None` if it must stay a leaf.
    fn find_split(&mut self, id: NodeId, rows: &[usize], depth: usize) -> Option<Split> {
        if self.params.max_depth.is_some_and(|d| depth >= d)
            || rows.len() < self.params.min_samples_split
            || self.nodes[id].impurity <= 0.0
        {
            return None;
        }
        let features = candidate_features(self.data.n_features(), self.params.max_features, self.rng);
        best_split(rows, self.data, &features)
    }

    fn partition(&self, rows: Vec<usize>, split: &Split) -> (Vec<usize>, Vec<usize>) {
        rows.into_iter()
            .partition(|&i| self.data.value(i, split.feature) <= split.threshold)
    }

    fn set_split(&mut self, id: NodeId, split: &Split, left: NodeId, right: NodeId) {
        self.nodes[id].kind = NodeKind::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
    }

    /// Pre-order growth: node ids and feature draws follow a left-first
    /// depth-first walk.
    fn grow_depth_first(&mut self, rows: Vec<usize>) {
        struct Pending {
            rows: Vec<usize>,
            depth: usize,
            /// Parent id and whether this node is its left child.
            parent: Option<(NodeId, bool)>,
        }
        let mut stack = vec![Pending {
            rows,
            depth: 0,
            parent: None,
        }];
        while let Some(Pending { rows, depth, parent }) = stack.pop() {
            let id = self.push_leaf(&rows);
            if let Some((p, is_left)) = parent {
                if let NodeKind::Split { left, right, .. } = &mut self.nodes[p].kind {
                    if is_left {
                        *left = id;
                    } else {
                        *right = id;
                    }
                }
            }
            if let Some(split) = self.find_split(id, &rows, depth) {
                self.set_split(id, &split, 0, 0);
                let (l, r) = self.partition(rows, &split);
                stack.push(Pending {
                    rows: r,
                    depth: depth + 1,
                    parent: Some((id, false)),
                });
                stack.push(Pending {
                    rows: l,
                    depth: depth + 1,
                    parent: Some((id, true)),
                });
            }
        }
    }

    /// Best-first growth under a leaf budget: the open leaf with the largest
    /// sample-weighted impurity decrease is expanded next, lowest node id on
    /// ties.
    fn grow_best_first(&mut self, rows: Vec<usize>) {
        let max_leaves = self.params.max_leaf_nodes.unwrap_or(usize::MAX);
        let n_total = rows.len() as f64;
        let mut frontier = BinaryHeap::new();
        let root = self.push_leaf(&rows);
        self.open(&mut frontier, root, rows, 0, n_total);
        let mut leaves = 1;
        while leaves < max_leaves {
            let Some(cand) = frontier.pop() else { break };
            let (l_rows, r_rows) = self.partition(cand.rows, &cand.split);
            let left = self.push_leaf(&l_rows);
            let right = self.push_leaf(&r_rows);
            self.set_split(cand.id, &cand.split, left, right);
            leaves += 1;
            self.open(&mut frontier, left, l_rows, cand.depth + 1, n_total);
            self.open(&mut frontier, right, r_rows, cand.depth + 1, n_total);
        }
    }

    fn open(&mut self, frontier: &mut BinaryHeap<Candidate>, id: NodeId, rows: Vec<usize>, depth: usize, n_total: f64) {
        if let Some(split) = self.find_split(id, &rows, depth) {
            let priority = rows.len() as f64 / n_total * split.impurity_decrease;
            frontier.push(Candidate {
                priority,
                id,
                depth,
                rows,
                split,
            });
        }
    }
}

struct Candidate {
    priority: f64,
    id: NodeId,
    depth: usize,
    rows: Vec<usize>,
    split: Split,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.id.cmp(&self.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}
