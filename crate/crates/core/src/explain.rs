//! Decision paths: the satisfied split conditions behind a prediction, for
//! one client or shared by a group, ordered by model feature importance.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::cart::check_sample;
use crate::error::{Error, Result};
use crate::extract::{Op, Rule, RuleSet};
use crate::io::{fmt_f64, read_to_string};
use crate::model::Model;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub rank: usize,
    pub feature_name: String,
    pub feature_index: usize,
    /// Absent in group paths, where members' values differ.
    pub client_value: Option<f64>,
    pub op: Op,
    pub threshold: f64,
    pub estimator_id: usize,
    /// Position of the split on the estimator's root-to-leaf path.
    pub depth: usize,
}

impl Decision {
    fn key(&self) -> (usize, Op, u64) {
        (self.feature_index, self.op, self.threshold.to_bits())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum SampleRef {
    Index(usize),
    Id(String),
    Group(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathKind {
    SingleClient,
    Group,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionPath {
    pub sample_ref: Option<SampleRef>,
    pub decisions: Vec<Decision>,
    pub kind: PathKind,
}

impl DecisionPath {
    pub fn with_ref(mut self, r: SampleRef) -> Self {
        self.sample_ref = Some(r);
        self
    }
}

/// Business descriptions for feature names, read from a two-column CSV
/// (`feature_name,description`).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureDictionary {
    entries: HashMap<String, String>,
}

impl FeatureDictionary {
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let mut entries = HashMap::new();
        for rec in reader.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(Error::Config(format!(
                    "feature dictionary line {}: expected 2 columns, found {}",
                    rec.position().map_or(0, |p| p.line()),
                    rec.len()
                )));
            }
            entries.insert(rec[0].trim().to_string(), rec[1].trim().to_string());
        }
        Ok(FeatureDictionary { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&read_to_string(path)?)
    }

    pub fn describe<'a>(&'a self, feature_name: &'a str) -> &'a str {
        self.entries.get(feature_name).map_or(feature_name, String::as_str)
    }
}

fn firing_rule<'r>(rules: &'r RuleSet, tree_id: usize, sample: &[f64]) -> Result<&'r Rule> {
    let mut fired = rules.tree_rules(tree_id).iter().filter(|r| r.fires(sample));
    match (fired.next(), fired.next()) {
        (Some(rule), None) => Ok(rule),
        _ => Err(Error::RuleConsistency {
            tree_id,
            fired: rules.tree_rules(tree_id).iter().filter(|r| r.fires(sample)).count(),
        }),
    }
}

fn check_inputs(model: &Model, rules: &RuleSet) -> Result<()> {
    if rules.n_features() != model.n_features() {
        return Err(Error::FeatureCount {
            expected: model.n_features(),
            got: rules.n_features(),
        });
    }
    if rules.n_trees() != model.trees().len() {
        return Err(Error::RuleSet(format!(
            "rule set has {} trees but the model has {}",
            rules.n_trees(),
            model.trees().len()
        )));
    }
    Ok(())
}

/// Satisfied predicates of every estimator's firing rule, without
/// deduplication, in estimator then depth order.
pub fn raw_decisions(rules: &RuleSet, sample: &[f64]) -> Result<Vec<Decision>> {
    check_sample(sample, rules.n_features())?;
    let mut out = Vec::new();
    for t in 0..rules.n_trees() {
        let rule = firing_rule(rules, t, sample)?;
        for (depth, p) in rule.predicates.iter().enumerate() {
            out.push(Decision {
                rank: 0,
                feature_name: p.feature_name.clone(),
                feature_index: p.feature_index,
                client_value: Some(sample[p.feature_index]),
                op: p.op,
                threshold: p.threshold,
                estimator_id: t,
                depth,
            });
        }
    }
    Ok(out)
}

fn order_and_rank(decisions: &mut [Decision], importances: &[f64]) {
    decisions.sort_by(|a, b| {
        importances[b.feature_index]
            .total_cmp(&importances[a.feature_index])
            .then(a.estimator_id.cmp(&b.estimator_id))
            .then(a.depth.cmp(&b.depth))
    });
    for (k, d) in decisions.iter_mut().enumerate() {
        d.rank = k + 1;
    }
}

/// Decision path of one client: the conditions the client satisfied in every
/// estimator, exact repeats across estimators kept once, most important
/// features first.
pub fn display_rule_per_estimator(model: &Model, rules: &RuleSet, sample: &[f64]) -> Result<DecisionPath> {
    check_inputs(model, rules)?;
    let mut seen = HashSet::new();
    let mut decisions: Vec<Decision> = raw_decisions(rules, sample)?
        .into_iter()
        .filter(|d| seen.insert(d.key()))
        .collect();
    order_and_rank(&mut decisions, &model.feature_importances());
    Ok(DecisionPath {
        sample_ref: None,
        decisions,
        kind: PathKind::SingleClient,
    })
}

/// Conditions shared by every member of a group (exact intersection of the
/// members' decision triples).
pub fn group_path<S: AsRef<[f64]>>(model: &Model, rules: &RuleSet, samples: &[S]) -> Result<DecisionPath> {
    let Some((first, rest)) = samples.split_first() else {
        return Err(Error::EmptyGroup);
    };
    let mut common = display_rule_per_estimator(model, rules, first.as_ref())?.decisions;
    for s in rest {
        let keys: HashSet<_> = display_rule_per_estimator(model, rules, s.as_ref())?
            .decisions
            .iter()
            .map(Decision::key)
            .collect();
        common.retain(|d| keys.contains(&d.key()));
    }
    for (k, d) in common.iter_mut().enumerate() {
        d.rank = k + 1;
        d.client_value = None;
    }
    Ok(DecisionPath {
        sample_ref: None,
        decisions: common,
        kind: PathKind::Group,
    })
}

/// Plain-text rendering, one `decision k:` line per decision.
pub fn render_text(path: &DecisionPath, dictionary: &FeatureDictionary) -> String {
    if path.decisions.is_empty() {
        return "no decisions: the prediction does not depend on any feature\n".to_string();
    }
    let mut out = String::new();
    for d in &path.decisions {
        let desc = dictionary.describe(&d.feature_name);
        let threshold = fmt_f64(d.threshold);
        let _ = match d.client_value {
            Some(v) => writeln!(
                out,
                "decision {}: {desc} (={v:?}) {} {threshold}",
                d.rank,
                d.op.symbol()
            ),
            None => writeln!(out, "decision {}: {desc} {} {threshold}", d.rank, d.op.symbol()),
        };
    }
    out
}

#[derive(Serialize)]
struct JsonDecision<'a> {
    #[serde(flatten)]
    decision: &'a Decision,
    description: &'a str,
}

#[derive(Serialize)]
struct JsonPath<'a> {
    sample_ref: &'a Option<SampleRef>,
    kind: PathKind,
    decisions: Vec<JsonDecision<'a>>,
}

/// Structured rendering for downstream systems.
pub fn render_json(path: &DecisionPath, dictionary: &FeatureDictionary) -> serde_json::Value {
    let doc = JsonPath {
        sample_ref: &path.sample_ref,
        kind: path.kind,
        decisions: path
            .decisions
            .iter()
            .map(|d| JsonDecision {
                decision: d,
                description: dictionary.describe(&d.feature_name),
            })
            .collect(),
    };
    serde_json::to_value(doc).expect("decision paths serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::tests::{dataset, stump_data};
    use crate::cart::{fit_tree, NodeKind, TreeModel, TreeNode, TreeParams};
    use crate::extract::{default_feature_names, model_2rules};
    use crate::forest::{fit_forest, ForestModel, ForestParams};

    fn stump() -> Model {
        let params = TreeParams {
            max_depth: Some(1),
            ..Default::default()
        };
        Model::Tree(fit_tree(&stump_data(), &params).unwrap())
    }

    #[test]
    fn single_leaf_has_no_decisions() {
        let leaf = TreeModel::from_nodes(
            vec![TreeNode::new(NodeKind::Leaf, [1.0, 1.0], 2)],
            1,
            TreeParams::default(),
        )
        .unwrap();
        let model = Model::Tree(leaf);
        let rules = model_2rules(&model, &default_feature_names(1)).unwrap();
        let path = display_rule_per_estimator(&model, &rules, &[3.0]).unwrap();
        assert!(path.decisions.is_empty());
        assert!(render_text(&path, &FeatureDictionary::default()).starts_with("no decisions"));
    }

    #[test]
    fn stump_path_text() {
        let model = stump();
        let rules = model_2rules(&model, &default_feature_names(1)).unwrap();
        let path = display_rule_per_estimator(&model, &rules, &[1.0]).unwrap();
        assert_eq!(path.decisions.len(), 1);
        assert_eq!(
            render_text(&path, &FeatureDictionary::default()),
            "decision 1: f0 (=1.0) <= 2.5\n"
        );
        let dict = FeatureDictionary::from_csv_str("feature_name,description\nf0,Recovery fee\n").unwrap();
        assert_eq!(render_text(&path, &dict), "decision 1: Recovery fee (=1.0) <= 2.5\n");
        let json = render_json(&path.clone().with_ref(SampleRef::Index(0)), &dict);
        assert_eq!(json["sample_ref"], 0);
        assert_eq!(json["kind"], "single-client");
        assert_eq!(json["decisions"][0]["op"], "<=");
        assert_eq!(json["decisions"][0]["description"], "Recovery fee");
        assert_eq!(json["decisions"][0]["threshold"], 2.5);
    }

    #[test]
    fn group_cases() {
        let model = stump();
        let rules = model_2rules(&model, &default_feature_names(1)).unwrap();
        let one = group_path(&model, &rules, &[[1.0]]).unwrap();
        assert_eq!(one.decisions.len(), 1);
        assert_eq!(one.decisions[0].client_value, None);
        assert_eq!(
            render_text(&one, &FeatureDictionary::default()),
            "decision 1: f0 <= 2.5\n"
        );
        let same_leaf = group_path(&model, &rules, &[[1.0], [2.0]]).unwrap();
        assert_eq!(same_leaf.decisions.len(), 1);
        let opposite = group_path(&model, &rules, &[[1.0], [4.0]]).unwrap();
        assert!(opposite.decisions.is_empty());
        let empty: [[f64; 1]; 0] = [];
        assert!(matches!(group_path(&model, &rules, &empty), Err(Error::EmptyGroup)));
    }

    #[test]
    fn duplicates_across_estimators_kept_once() {
        let t = match stump() {
            Model::Tree(t) => t,
            _ => unreachable!(),
        };
        let model = Model::Forest(ForestModel::from_trees(vec![t.clone(), t], ForestParams::default()).unwrap());
        let rules = model_2rules(&model, &default_feature_names(1)).unwrap();
        assert_eq!(raw_decisions(&rules, &[1.0]).unwrap().len(), 2);
        let path = display_rule_per_estimator(&model, &rules, &[1.0]).unwrap();
        assert_eq!(path.decisions.len(), 1);
        assert_eq!(path.decisions[0].estimator_id, 0);
    }

    #[test]
    fn ordering_follows_importance() {
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|i| vec![(i % 10) as f64, ((i * 3) % 7) as f64, ((i * 11) % 13) as f64])
            .collect();
        let targets = (0..80).map(|i| ((i % 10) + (i * 3) % 7 > 8) as u8).collect();
        let d = dataset(rows, targets);
        let params = ForestParams {
            n_estimators: 4,
            tree_params: TreeParams {
                max_depth: Some(4),
                max_features: Some(2),
                ..Default::default()
            },
            ..Default::default()
        };
        let model = Model::Forest(fit_forest(&d, &params).unwrap());
        let rules = model_2rules(&model, &default_feature_names(3)).unwrap();
        let imp = model.feature_importances();
        for row in d.rows() {
            let path = display_rule_per_estimator(&model, &rules, row).unwrap();
            for w in path.decisions.windows(2) {
                assert!(imp[w[0].feature_index] >= imp[w[1].feature_index]);
            }
            for dcs in &path.decisions {
                assert!(dcs.op.holds(row[dcs.feature_index], dcs.threshold));
            }
        }
    }

    #[test]
    fn mismatched_inputs() {
        let model = stump();
        let rules = model_2rules(&model, &default_feature_names(1)).unwrap();
        assert!(matches!(
            display_rule_per_estimator(&model, &rules, &[1.0, 2.0]),
            Err(Error::FeatureCount { .. })
        ));
    }
}
