//! Slow, obviously-correct reference implementations used to check the
//! fast paths in `treerules-core`, plus generators for random trees,
//! datasets and probe grids.
//!
//! Nothing here calls the routines under test: trees are read through their
//! raw node arrays only.

use std::collections::BTreeMap;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use treerules_core::{Dataset, FeatureSchema, NodeKind, TreeModel, TreeNode, TreeParams};

pub type Q = Ratio<i128>;

/// Leaf reached by `x`, walking the raw arena from node 0.
pub fn leaf_of(tree: &TreeModel, x: &[f64]) -> usize {
    let nodes = tree.nodes();
    let mut id = 0;
    loop {
        match nodes[id].kind {
            NodeKind::Leaf => return id,
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                id = if x[feature] <= threshold { left } else { right };
            }
        }
    }
}

/// Class probabilities of the leaf reached by `x`: its counts over their sum.
pub fn tree_proba(tree: &TreeModel, x: &[f64]) -> [f64; 2] {
    let c = tree.nodes()[leaf_of(tree, x)].class_counts;
    let s = c[0] + c[1];
    [c[0] / s, c[1] / s]
}

/// Forest average: per-tree probabilities summed in tree order, then divided
/// by the number of trees.
pub fn forest_proba(trees: &[TreeModel], x: &[f64]) -> [f64; 2] {
    let mut acc = [0.0, 0.0];
    for t in trees {
        let p = tree_proba(t, x);
        acc[0] += p[0];
        acc[1] += p[1];
    }
    let m = trees.len() as f64;
    [acc[0] / m, acc[1] / m]
}

fn gini_q(c: [i128; 2]) -> Q {
    let n = c[0] + c[1];
    Q::from_integer(1) - Q::new(c[0] * c[0] + c[1] * c[1], n * n)
}

/// Exact Gini decrease of sending `left` one way and the rest the other.
pub fn exact_decrease(targets: &[u8], left: &[bool]) -> Q {
    let mut l = [0i128; 2];
    let mut r = [0i128; 2];
    for (&y, &goes_left) in targets.iter().zip(left) {
        if goes_left {
            l[y as usize] += 1;
        } else {
            r[y as usize] += 1;
        }
    }
    let (nl, nr) = (l[0] + l[1], r[0] + r[1]);
    let n = nl + nr;
    gini_q([l[0] + r[0], l[1] + r[1]]) - Q::new(nl, n) * gini_q(l) - Q::new(nr, n) * gini_q(r)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    /// Largest value sent left.
    pub cut: f64,
    /// Midpoint between `cut` and the next larger value.
    pub threshold: f64,
    pub decrease: Q,
}

/// Brute-force best split of the given rows: every feature, every distinct
/// value as a `<=` cut, exact arithmetic. Ties keep the lowest feature, then
/// the lowest cut. `None` when nothing strictly lowers the impurity.
pub fn brute_force_split(rows: &[Vec<f64>], targets: &[u8]) -> Option<OracleSplit> {
    let d = rows.first()?.len();
    let mut best: Option<OracleSplit> = None;
    for feature in 0..d {
        let mut values: Vec<f64> = rows.iter().map(|r| r[feature]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for pair in values.windows(2) {
            let (cut, next) = (pair[0], pair[1]);
            let left: Vec<bool> = rows.iter().map(|r| r[feature] <= cut).collect();
            let decrease = exact_decrease(targets, &left);
            if best.as_ref().is_none_or(|b| decrease > b.decrease) {
                let mid = (cut + next) / 2.0;
                // adjacent floats: the midpoint rounds up to `next`
                let threshold = if mid < next { mid } else { cut };
                best = Some(OracleSplit {
                    feature,
                    cut,
                    threshold,
                    decrease,
                });
            }
        }
    }
    best.filter(|b| b.decrease > Q::from_integer(0))
}

/// Rows of `data` (with targets) that reach each node of `tree`.
pub fn route_rows(tree: &TreeModel, data: &Dataset) -> Vec<Vec<usize>> {
    let mut per_node = vec![Vec::new(); tree.nodes().len()];
    for i in 0..data.n_samples() {
        let x = data.row(i);
        let mut id = 0;
        loop {
            per_node[id].push(i);
            match tree.nodes()[id].kind {
                NodeKind::Leaf => break,
                NodeKind::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if x[feature] <= threshold { left } else { right };
                }
            }
        }
    }
    per_node
}

/// Mann-Whitney statistic: the fraction of (positive, negative) pairs where
/// the positive scores higher, ties counting one half.
pub fn mann_whitney_auc(scores: &[f64], targets: &[u8]) -> Q {
    let pos: Vec<f64> = scores
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(targets)
        .filter(|(_, &t)| t == 0)
        .map(|(&s, _)| s)
        .collect();
    let mut twice = 0i128;
    for &p in &pos {
        for &n in &neg {
            twice += if p > n {
                2
            } else if p == n {
                1
            } else {
                0
            };
        }
    }
    Q::new(twice, 2 * pos.len() as i128 * neg.len() as i128)
}

pub fn feature_names(d: usize) -> Vec<String> {
    (0..d).map(|j| format!("x{j}")).collect()
}

pub fn schema(d: usize) -> FeatureSchema {
    FeatureSchema::new(
        feature_names(d),
        "y",
        BTreeMap::from([("neg".to_string(), 0), ("pos".to_string(), 1)]),
    )
    .expect("generated schema is valid")
}

/// Random tree with at most `max_depth` levels of splits over `n_features`
/// features. Thresholds come from a coarse grid so that probes can land on
/// them exactly; leaf counts are small positive integers.
pub fn random_tree(rng: &mut ChaCha8Rng, n_features: usize, max_depth: usize) -> TreeModel {
    struct Pending {
        id: usize,
        depth: usize,
    }
    let mut kinds: Vec<Option<NodeKind>> = vec![None];
    let mut stack = vec![Pending { id: 0, depth: 0 }];
    while let Some(p) = stack.pop() {
        let split_prob = if p.depth == 0 { 0.95 } else { 0.7 };
        if p.depth < max_depth && rng.gen_bool(split_prob) {
            let left = kinds.len();
            let right = left + 1;
            kinds.push(None);
            kinds.push(None);
            kinds[p.id] = Some(NodeKind::Split {
                feature: rng.gen_range(0..n_features),
                threshold: rng.gen_range(-20..=20) as f64 / 4.0,
                left,
                right,
            });
            stack.push(Pending {
                id: right,
                depth: p.depth + 1,
            });
            stack.push(Pending {
                id: left,
                depth: p.depth + 1,
            });
        } else {
            kinds[p.id] = Some(NodeKind::Leaf);
        }
    }
    let kinds: Vec<NodeKind> = kinds.into_iter().map(|k| k.expect("every node assigned")).collect();

    // leaves draw counts; internal nodes sum their children
    let mut counts = vec![[0u64; 2]; kinds.len()];
    for id in (0..kinds.len()).rev() {
        counts[id] = match kinds[id] {
            NodeKind::Leaf => loop {
                let c = [rng.gen_range(0..30), rng.gen_range(0..30)];
                if c[0] + c[1] > 0 {
                    break c;
                }
            },
            NodeKind::Split { left, right, .. } => {
                [counts[left][0] + counts[right][0], counts[left][1] + counts[right][1]]
            }
        };
    }
    let nodes = kinds
        .into_iter()
        .zip(&counts)
        .map(|(kind, c)| TreeNode::new(kind, [c[0] as f64, c[1] as f64], c[0] + c[1]))
        .collect();
    TreeModel::from_nodes(nodes, n_features, TreeParams::default()).expect("generated tree is valid")
}

/// Probe points for `trees`: every threshold, its floating-point neighbours,
/// and grid values in between, combined at random until `n` points exist.
pub fn probe_grid(rng: &mut ChaCha8Rng, trees: &[TreeModel], n_features: usize, n: usize) -> Vec<Vec<f64>> {
    let mut per_feature: Vec<Vec<f64>> = vec![vec![-100.0, 0.0, 100.0]; n_features];
    for t in trees {
        for node in t.nodes() {
            if let NodeKind::Split { feature, threshold, .. } = node.kind {
                per_feature[feature].extend([threshold.next_down(), threshold, threshold.next_up()]);
            }
        }
    }
    for v in &mut per_feature {
        v.extend((-12..=12).map(|k| k as f64 / 2.0 + 0.125));
        v.sort_by(f64::total_cmp);
        v.dedup();
    }
    (0..n)
        .map(|_| per_feature.iter().map(|v| *v.choose(rng).expect("non-empty")).collect())
        .collect()
}

/// Cell-exhaustive probe points for one tree. Each feature the tree tests
/// gets one value per interval between its thresholds plus every threshold
/// itself; the Cartesian product of those values is enumerated when it holds
/// at most `cap` points, otherwise `cap` points are drawn from it. A witness
/// point for every reachable leaf is always included, and random draws pad
/// the result to at least `min_points`.
pub fn cell_grid(
    rng: &mut ChaCha8Rng,
    tree: &TreeModel,
    n_features: usize,
    min_points: usize,
    cap: usize,
) -> Vec<Vec<f64>> {
    let mut axes: Vec<Vec<f64>> = vec![Vec::new(); n_features];
    for node in tree.nodes() {
        if let NodeKind::Split { feature, threshold, .. } = node.kind {
            axes[feature].extend([threshold, threshold.next_up()]);
        }
    }
    for axis in &mut axes {
        axis.push(-1.0e9);
        axis.sort_by(f64::total_cmp);
        axis.dedup();
    }
    let size = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()));
    let mut points = Vec::new();
    match size {
        Some(total) if total <= cap => {
            for mut k in 0..total {
                let mut x = Vec::with_capacity(n_features);
                for axis in &axes {
                    x.push(axis[k % axis.len()]);
                    k /= axis.len();
                }
                points.push(x);
            }
        }
        _ => {
            for _ in 0..cap {
                points.push(axes.iter().map(|a| *a.choose(rng).expect("non-empty")).collect());
            }
        }
    }
    points.extend(leaf_witnesses(tree, n_features));
    while points.len() < min_points {
        points.push(axes.iter().map(|a| *a.choose(rng).expect("non-empty")).collect());
    }
    points
}

/// One point per reachable leaf, built from the bounds along its path.
pub fn leaf_witnesses(tree: &TreeModel, n_features: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut stack = vec![(
        0usize,
        vec![f64::NEG_INFINITY; n_features],
        vec![f64::INFINITY; n_features],
    )];
    while let Some((id, lo, hi)) = stack.pop() {
        match tree.nodes()[id].kind {
            NodeKind::Leaf => {
                // value must satisfy lo < x <= hi
                let x: Option<Vec<f64>> = lo
                    .iter()
                    .zip(&hi)
                    .map(|(&l, &h)| {
                        let v = if h.is_finite() {
                            h
                        } else if l.is_finite() {
                            l + 1.0
                        } else {
                            0.0
                        };
                        (l < v && v <= h).then_some(v)
                    })
                    .collect();
                out.extend(x);
            }
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let mut left_hi = hi.clone();
                left_hi[feature] = left_hi[feature].min(threshold);
                let mut right_lo = lo.clone();
                right_lo[feature] = right_lo[feature].max(threshold);
                stack.push((right, right_lo, hi));
                stack.push((left, lo, left_hi));
            }
        }
    }
    out
}

/// Random binary dataset. Values come from a small grid when `coarse`, which
/// produces many ties; otherwise from a wide uniform range.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize, coarse: bool) -> Dataset {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..d)
                .map(|_| {
                    if coarse {
                        rng.gen_range(0..6) as f64 * 0.5
                    } else {
                        rng.gen_range(-1.0e3..1.0e3)
                    }
                })
                .collect()
        })
        .collect();
    // label depends partly on the first feature so splits are informative
    let targets: Vec<u8> = rows
        .iter()
        .map(|r| (rng.gen_bool(0.25) ^ (r[0] > r[d - 1])) as u8)
        .collect();
    Dataset::new(schema(d), rows, targets).expect("generated dataset is valid")
}
