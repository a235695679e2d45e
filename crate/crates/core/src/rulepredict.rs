//! Prediction from a [`RuleSet`] alone, and checks that the rules reproduce
//! the model they were extracted from.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::cart::check_sample;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::extract::{Op, RuleSet};
use crate::io::{fmt_f64, write_atomic};
use crate::model::Model;
use crate::stats::Describe;

/// Leaf probabilities summed over trees in ascending tree order, divided by
/// the rule set's normalization. Uses a linear scan of each tree's rules and
/// fails unless exactly one rule fires per tree.
pub fn rule_predict(rules: &RuleSet, sample: &[f64]) -> Result<[f64; 2]> {
    check_sample(sample, rules.n_features())?;
    let mut acc = [0.0; 2];
    for t in 0..rules.n_trees() {
        let mut fired = rules.tree_rules(t).iter().filter(|r| r.fires(sample));
        let (Some(rule), None) = (fired.next(), fired.next()) else {
            let fired = rules.tree_rules(t).iter().filter(|r| r.fires(sample)).count();
            return Err(Error::RuleConsistency { tree_id: t, fired });
        };
        acc[0] += rule.leaf_probabilities[0];
        acc[1] += rule.leaf_probabilities[1];
    }
    let m = rules.normalization() as f64;
    Ok([acc[0] / m, acc[1] / m])
}

/// Class-1 probability of every row, in row order.
pub fn rule_predict_batch(rules: &RuleSet, data: &Dataset) -> Result<Vec<f64>> {
    data.rows().map(|row| rule_predict(rules, row).map(|p| p[1])).collect()
}

#[derive(Debug, Clone)]
enum Dispatch {
    Leaf([f64; 2]),
    Test {
        feature: usize,
        threshold: f64,
        left: Box<Dispatch>,
        right: Box<Dispatch>,
    },
}

/// Rule set rebuilt into one decision tree per estimator, so prediction
/// costs one root-to-leaf walk per tree instead of a scan over all rules.
#[derive(Debug, Clone)]
pub struct CompiledRules {
    trees: Vec<Dispatch>,
    n_features: usize,
    normalization: f64,
}

impl CompiledRules {
    /// Fails if some tree's rules do not form a binary tree (overlapping or
    /// missing regions).
    pub fn compile(rules: &RuleSet) -> Result<CompiledRules> {
        let trees = (0..rules.n_trees())
            .map(|t| {
                let idx: Vec<usize> = (0..rules.tree_rules(t).len()).collect();
                compile_node(rules, t, &idx, 0)
                    .ok_or_else(|| Error::RuleSet(format!("rules of tree {t} do not form a binary tree")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CompiledRules {
            trees,
            n_features: rules.n_features(),
            normalization: rules.normalization() as f64,
        })
    }

    pub fn predict(&self, sample: &[f64]) -> Result<[f64; 2]> {
        check_sample(sample, self.n_features)?;
        let mut acc = [0.0; 2];
        for tree in &self.trees {
            let mut node = tree;
            let p = loop {
                match node {
                    Dispatch::Leaf(p) => break p,
                    Dispatch::Test {
                        feature,
                        threshold,
                        left,
                        right,
                    } => node = if sample[*feature] <= *threshold { left } else { right },
                }
            };
            acc[0] += p[0];
            acc[1] += p[1];
        }
        Ok([acc[0] / self.normalization, acc[1] / self.normalization])
    }
}

fn compile_node(rules: &RuleSet, tree: usize, idx: &[usize], depth: usize) -> Option<Dispatch> {
    let all = rules.tree_rules(tree);
    match idx {
        [] => None,
        [only] if all[*only].predicates.len() == depth => Some(Dispatch::Leaf(all[*only].leaf_probabilities)),
        _ => {
            let head = all[idx[0]].predicates.get(depth)?;
            let mut left = Vec::new();
            let mut right = Vec::new();
            for &i in idx {
                let p = all[i].predicates.get(depth)?;
                if p.feature_index != head.feature_index || p.threshold.to_bits() != head.threshold.to_bits() {
                    return None;
                }
                match p.op {
                    Op::Le => left.push(i),
                    Op::Gt => right.push(i),
                }
            }
            Some(Dispatch::Test {
                feature: head.feature_index,
                threshold: head.threshold,
                left: Box::new(compile_node(rules, tree, &left, depth + 1)?),
                right: Box::new(compile_node(rules, tree, &right, depth + 1)?),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleComparison {
    pub sample_index: usize,
    pub rule_probability: f64,
    pub model_probability: f64,
    pub abs_difference: f64,
}

/// Rule-based versus model-based class-1 probabilities. Differences are kept
/// exact; no tolerance is applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub per_sample: Vec<SampleComparison>,
    pub rule_stats: Describe,
    pub model_stats: Describe,
    pub max_abs_difference: f64,
}

impl EquivalenceReport {
    pub fn is_exact(&self) -> bool {
        self.max_abs_difference == 0.0
    }

    /// Per-sample CSV rows followed by a `#`-prefixed statistics footer.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("sample_index,rule_probability,model_probability,abs_difference\n");
        for s in &self.per_sample {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                s.sample_index,
                fmt_f64(s.rule_probability),
                fmt_f64(s.model_probability),
                fmt_f64(s.abs_difference)
            );
        }
        out.push_str("# statistic,rule_probability,model_probability,difference\n");
        for ((name, r), (_, m)) in self.rule_stats.rows().into_iter().zip(self.model_stats.rows()) {
            let _ = writeln!(out, "# {name},{},{},{}", fmt_f64(r), fmt_f64(m), fmt_f64((r - m).abs()));
        }
        let _ = writeln!(out, "# max_abs_difference,{}", fmt_f64(self.max_abs_difference));
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv_string().as_bytes())
    }
}

pub fn verify_equivalence(model: &Model, rules: &RuleSet, data: &Dataset) -> Result<EquivalenceReport> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for got in [rules.n_features(), data.n_features()] {
        if got != model.n_features() {
            return Err(Error::FeatureCount {
                expected: model.n_features(),
                got,
            });
        }
    }
    let mut per_sample = Vec::with_capacity(data.n_samples());
    for (i, row) in data.rows().enumerate() {
        let rule_probability = rule_predict(rules, row)?[1];
        let model_probability = model.predict_proba(row)?[1];
        per_sample.push(SampleComparison {
            sample_index: i,
            rule_probability,
            model_probability,
            abs_difference: (rule_probability - model_probability).abs(),
        });
    }
    let rule_p: Vec<f64> = per_sample.iter().map(|s| s.rule_probability).collect();
    let model_p: Vec<f64> = per_sample.iter().map(|s| s.model_probability).collect();
    let max_abs_difference = per_sample.iter().map(|s| s.abs_difference).fold(0.0, f64::max);
    Ok(EquivalenceReport {
        rule_stats: Describe::of(&rule_p).expect("non-empty"),
        model_stats: Describe::of(&model_p).expect("non-empty"),
        per_sample,
        max_abs_difference,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Roc {
    /// (false positive rate, true positive rate), from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl Roc {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            let _ = writeln!(out, "{},{}", fmt_f64(*f), fmt_f64(*t));
        }
        out
    }
}

/// Threshold-sweep ROC with tied scores grouped into one step. The
/// trapezoidal area is accumulated in integers and divided once, so it equals
/// the Mann-Whitney statistic `(concordant + ties / 2) / (P * N)` exactly.
pub fn roc_auc(scores: &[f64], targets: &[u8]) -> Result<Roc> {
    if scores.len() != targets.len() {
        return Err(Error::InvalidParam(format!(
            "{} scores but {} targets",
            scores.len(),
            targets.len()
        )));
    }
    if let Some(&s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidParam(format!("score {s} is not a number")));
    }
    let positives = targets.iter().filter(|&&t| t == 1).count();
    let negatives = targets.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (p, n) = (positives as f64, negatives as f64);
    let mut points = vec![(0.0, 0.0)];
    // twice the area, in units of one positive-negative pair
    let mut area2: u128 = 0;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (mut gp, mut gn) = (0u64, 0u64);
        while k < order.len() && scores[order[k]] == s {
            if targets[order[k]] == 1 {
                gp += 1;
            } else {
                gn += 1;
            }
            k += 1;
        }
        area2 += gn as u128 * (2 * tp as u128 + gp as u128);
        tp += gp;
        fp += gn;
        points.push((fp as f64 / n, tp as f64 / p));
    }
    let auc = area2 as f64 / (2 * positives as u128 * negatives as u128) as f64;
    Ok(Roc { points, auc })
}
