//! Rule extraction: every root-to-leaf path of every tree becomes one
//! "if-then" rule carrying the leaf's class probabilities.
//!
//! Rule file layout:
//!
//! ```text
//! # n_trees=1
//! # normalization=1
//! # n_features=2
//! # model_kind=tree
//! # feature=0,loan_amnt
//! # feature=1,int_rate
//! tree_id,leaf_id,n_leaf_samples,predicates,p0,p1
//! 0,1,120,0|le|2.5,0.9,0.1
//! 0,2,80,0|gt|2.5,0.25,0.75
//! ```
//!
//! `predicates` is a `;`-separated list of `feature_index|op|threshold`
//! triples with `op` in {`le`, `gt`}; it is empty for a single-leaf tree.
//! Numbers use the shortest decimal that parses back to the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::cart::{NodeId, NodeKind, TreeModel};
use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_to_string, write_atomic};
use crate::model::{Model, ModelKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
}

impl Op {
    pub fn symbol(self) -> &'static str {
        match self {
            Op::Le => "<=",
            Op::Gt => ">",
        }
    }

    fn code(self) -> &'static str {
        match self {
            Op::Le => "le",
            Op::Gt => "gt",
        }
    }

    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Op::Le => value <= threshold,
            Op::Gt => value > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub feature_index: usize,
    pub feature_name: String,
    pub op: Op,
    pub threshold: f64,
}

impl Predicate {
    pub fn holds(&self, sample: &[f64]) -> bool {
        self.op.holds(sample[self.feature_index], self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub tree_id: usize,
    pub leaf_id: NodeId,
    /// Root-to-leaf order.
    pub predicates: Vec<Predicate>,
    pub leaf_probabilities: [f64; 2],
    pub n_leaf_samples: u64,
}

impl Rule {
    pub fn fires(&self, sample: &[f64]) -> bool {
        self.predicates.iter().all(|p| p.holds(sample))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    n_trees: usize,
    n_features: usize,
    feature_names: Vec<String>,
    model_kind: ModelKind,
    normalization: usize,
    /// `rules[tree_starts[t]..tree_starts[t + 1]]` belong to tree `t`.
    tree_starts: Vec<usize>,
}

impl RuleSet {
    /// Checks the bookkeeping: rules grouped by ascending tree id with every
    /// tree present, feature indices in range, finite numbers.
    pub fn new(
        rules: Vec<Rule>,
        n_trees: usize,
        feature_names: Vec<String>,
        model_kind: ModelKind,
        normalization: usize,
    ) -> Result<RuleSet> {
        let fail = |m: String| Err(Error::RuleSet(m));
        let n_features = feature_names.len();
        if n_trees == 0 {
            return fail("a rule set needs at least one tree".into());
        }
        if normalization == 0 {
            return fail("normalization must be at least 1".into());
        }
        if model_kind == ModelKind::Tree && n_trees != 1 {
            return fail(format!("a tree rule set has exactly one tree, found {n_trees}"));
        }
        if let Some(name) = feature_names.iter().find(|n| n.contains(['\n', '\r'])) {
            return fail(format!("feature name {name:?} contains a line break"));
        }
        let mut tree_starts = Vec::with_capacity(n_trees + 1);
        for (i, rule) in rules.iter().enumerate() {
            while tree_starts.len() <= rule.tree_id {
                tree_starts.push(i);
            }
            if rule.tree_id + 1 != tree_starts.len() {
                return fail(format!("rule {i}: tree ids must be grouped in ascending order"));
            }
            if rule.tree_id >= n_trees {
                return fail(format!("rule {i}: tree id {} >= n_trees {n_trees}", rule.tree_id));
            }
            if !rule.leaf_probabilities.iter().all(|p| p.is_finite()) {
                return fail(format!("rule {i}: leaf probabilities must be finite"));
            }
            for p in &rule.predicates {
                if p.feature_index >= n_features {
                    return fail(format!(
                        "rule {i}: feature index {} out of range for {n_features} features",
                        p.feature_index
                    ));
                }
                if !p.threshold.is_finite() {
                    return fail(format!("rule {i}: threshold must be finite"));
                }
            }
        }
        if tree_starts.len() != n_trees {
            return fail(format!(
                "expected rules for {n_trees} trees, found rules for {}",
                tree_starts.len()
            ));
        }
        tree_starts.push(rules.len());
        Ok(RuleSet {
            rules,
            n_trees,
            n_features,
            feature_names,
            model_kind,
            normalization,
            tree_starts,
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn tree_rules(&self, tree_id: usize) -> &[Rule] {
        &self.rules[self.tree_starts[tree_id]..self.tree_starts[tree_id + 1]]
    }

    pub fn n_trees(&self) -> usize {
        self.n_trees
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn model_kind(&self) -> ModelKind {
        self.model_kind
    }

    pub fn normalization(&self) -> usize {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// `f0`, `f1`, ... for models without named features.
pub fn default_feature_names(n: usize) -> Vec<String> {
    (0..n).map(|j| format!("f{j}")).collect()
}

/// One rule per leaf, leaves in left-first depth-first order.
pub fn build_rules(tree: &TreeModel, tree_id: usize, feature_names: &[String]) -> Vec<Rule> {
    let mut rules = Vec::with_capacity(tree.n_leaves());
    let mut stack: Vec<(NodeId, Vec<Predicate>)> = vec![(tree.root(), Vec::new())];
    while let Some((id, path)) = stack.pop() {
        let node = tree.node(id);
        match node.kind {
            NodeKind::Leaf => rules.push(Rule {
                tree_id,
                leaf_id: id,
                predicates: path,
                leaf_probabilities: node.probabilities,
                n_leaf_samples: node.n_node_samples,
            }),
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let edge = |op| Predicate {
                    feature_index: feature,
                    feature_name: feature_names[feature].clone(),
                    op,
                    threshold,
                };
                let mut right_path = path.clone();
                right_path.push(edge(Op::Gt));
                let mut left_path = path;
                left_path.push(edge(Op::Le));
                stack.push((right, right_path));
                stack.push((left, left_path));
            }
        }
    }
    rules
}

/// Rules of every estimator of `model`, concatenated in tree order.
pub fn model_2rules(model: &Model, feature_names: &[String]) -> Result<RuleSet> {
    if feature_names.len() != model.n_features() {
        return Err(Error::FeatureCount {
            expected: model.n_features(),
            got: feature_names.len(),
        });
    }
    let trees = model.trees();
    let rules = trees
        .iter()
        .enumerate()
        .flat_map(|(t, tree)| build_rules(tree, t, feature_names))
        .collect();
    RuleSet::new(rules, trees.len(), feature_names.to_vec(), model.kind(), trees.len())
}

const HEADER: &str = "tree_id,leaf_id,n_leaf_samples,predicates,p0,p1";

pub fn rules_to_csv_string(rules: &RuleSet) -> String {
    let mut out = String::new();
    let kind = match rules.model_kind {
        ModelKind::Tree => "tree",
        ModelKind::Forest => "forest",
    };
    let _ = writeln!(out, "# n_trees={}", rules.n_trees);
    let _ = writeln!(out, "# normalization={}", rules.normalization);
    let _ = writeln!(out, "# n_features={}", rules.n_features);
    let _ = writeln!(out, "# model_kind={kind}");
    for (j, name) in rules.feature_names.iter().enumerate() {
        let _ = writeln!(out, "# feature={j},{name}");
    }
    out.push_str(HEADER);
    out.push('\n');
    for r in &rules.rules {
        let preds: Vec<String> = r
            .predicates
            .iter()
            .map(|p| format!("{}|{}|{}", p.feature_index, p.op.code(), fmt_f64(p.threshold)))
            .collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.tree_id,
            r.leaf_id,
            r.n_leaf_samples,
            preds.join(";"),
            fmt_f64(r.leaf_probabilities[0]),
            fmt_f64(r.leaf_probabilities[1])
        );
    }
    out
}

pub fn emit_csv(rules: &RuleSet, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, rules_to_csv_string(rules).as_bytes())
}

pub fn load_rules_csv(path: impl AsRef<Path>) -> Result<RuleSet> {
    let path = path.as_ref();
    parse_rules_csv(&read_to_string(path)?, &path.display().to_string())
}

/// Parses the rule file format; `source` names the input in errors.
pub fn parse_rules_csv(text: &str, source: &str) -> Result<RuleSet> {
    let err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line: line as u64,
        message,
    };
    let mut n_trees = None;
    let mut normalization = None;
    let mut n_features = None;
    let mut model_kind = None;
    let mut names: Vec<(usize, String)> = Vec::new();
    let mut saw_header = false;
    let mut rules = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim_start();
            let Some((key, value)) = meta.split_once('=') else {
                continue;
            };
            let num = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| err(line_no, format!("bad value {v:?} for {key}")))
            };
            match key.trim() {
                "n_trees" => n_trees = Some(num(value)?),
                "normalization" => normalization = Some(num(value)?),
                "n_features" => n_features = Some(num(value)?),
                "model_kind" => {
                    model_kind = Some(match value.trim() {
                        "tree" => ModelKind::Tree,
                        "forest" => ModelKind::Forest,
                        other => return Err(err(line_no, format!("unknown model kind {other:?}"))),
                    })
                }
                "feature" => {
                    let (idx, name) = value
                        .split_once(',')
                        .ok_or_else(|| err(line_no, "feature entry must be index,name".into()))?;
                    names.push((num(idx)?, name.to_string()));
                }
                _ => {}
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line != HEADER {
                return Err(err(line_no, format!("expected header {HEADER:?}")));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(err(line_no, format!("expected 6 columns, found {}", fields.len())));
        }
        let int = |s: &str, what: &str| s.parse::<u64>().map_err(|_| err(line_no, format!("bad {what} {s:?}")));
        let real = |s: &str, what: &str| s.parse::<f64>().map_err(|_| err(line_no, format!("bad {what} {s:?}")));
        let mut predicates = Vec::new();
        if !fields[3].is_empty() {
            for item in fields[3].split(';') {
                let parts: Vec<&str> = item.split('|').collect();
                if parts.len() != 3 {
                    return Err(err(line_no, format!("bad predicate {item:?}")));
                }
                let op = match parts[1] {
                    "le" => Op::Le,
                    "gt" => Op::Gt,
                    other => return Err(err(line_no, format!("unknown operator {other:?}"))),
                };
                predicates.push(Predicate {
                    feature_index: int(parts[0], "feature index")? as usize,
                    feature_name: String::new(),
                    op,
                    threshold: real(parts[2], "threshold")?,
                });
            }
        }
        rules.push((
            line_no,
            Rule {
                tree_id: int(fields[0], "tree id")? as usize,
                leaf_id: int(fields[1], "leaf id")? as usize,
                n_leaf_samples: int(fields[2], "sample count")?,
                predicates,
                leaf_probabilities: [real(fields[4], "p0")?, real(fields[5], "p1")?],
            },
        ));
    }

    let last = text.lines().count();
    if !saw_header {
        return Err(err(last, "missing header row".into()));
    }
    let missing = |what: &str| err(1, format!("missing `# {what}=` metadata line"));
    let n_trees = n_trees.ok_or_else(|| missing("n_trees"))?;
    let normalization = normalization.ok_or_else(|| missing("normalization"))?;
    let model_kind = model_kind.ok_or_else(|| missing("model_kind"))?;
    let n_features = n_features.ok_or_else(|| missing("n_features"))?;
    names.sort_by_key(|(j, _)| *j);
    if names.len() != n_features || names.iter().enumerate().any(|(j, (k, _))| j != *k) {
        return Err(err(1, format!("expected feature names 0..{n_features}")));
    }
    let feature_names: Vec<String> = names.into_iter().map(|(_, n)| n).collect();
    let mut plain = Vec::with_capacity(rules.len());
    for (line_no, mut rule) in rules {
        for p in &mut rule.predicates {
            p.feature_name = feature_names
                .get(p.feature_index)
                .cloned()
                .ok_or_else(|| err(line_no, format!("feature index {} out of range", p.feature_index)))?;
        }
        plain.push(rule);
    }
    RuleSet::new(plain, n_trees, feature_names, model_kind, normalization)
}

/// Nested `if`/`else` rendering of each tree, one `return [p0, p1]` per leaf.
/// Fails if a tree's rules do not form a binary tree.
pub fn emit_text(rules: &RuleSet) -> Result<String> {
    let mut out = String::new();
    for t in 0..rules.n_trees {
        if rules.n_trees > 1 {
            let _ = writeln!(out, "# tree {t}");
        }
        render(rules.tree_rules(t), 0, &mut out)
            .map_err(|()| Error::RuleSet(format!("rules of tree {t} do not form a binary tree")))?;
    }
    Ok(out)
}

fn render(rules: &[Rule], depth: usize, out: &mut String) -> std::result::Result<(), ()> {
    let indent = "    ".repeat(depth);
    match rules {
        [] => Err(()),
        [only] if only.predicates.len() == depth => {
            let [p0, p1] = only.leaf_probabilities;
            let _ = writeln!(out, "{indent}return [{p0:?}, {p1:?}]");
            Ok(())
        }
        _ => {
            let head = rules[0].predicates.get(depth).ok_or(())?;
            if head.op != Op::Le {
                return Err(());
            }
            let split = rules
                .iter()
                .position(|r| r.predicates.get(depth).is_some_and(|p| p.op == Op::Gt))
                .ok_or(())?;
            let same_test = |r: &Rule| {
                r.predicates.get(depth).is_some_and(|p| {
                    p.feature_index == head.feature_index && p.threshold.to_bits() == head.threshold.to_bits()
                })
            };
            if !rules.iter().all(same_test)
                || rules[..split].iter().any(|r| r.predicates[depth].op != Op::Le)
                || rules[split..].iter().any(|r| r.predicates[depth].op != Op::Gt)
            {
                return Err(());
            }
            let _ = writeln!(out, "{indent}if {} <= {:?}:", head.feature_name, head.threshold);
            render(&rules[..split], depth + 1, out)?;
            let _ = writeln!(out, "{indent}else:");
            render(&rules[split..], depth + 1, out)
        }
    }
}
