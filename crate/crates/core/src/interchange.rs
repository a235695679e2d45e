//! JSON interchange for fitted trees and forests.
//!
//! Each tree is a set of parallel node arrays. `-1` in both child arrays marks
//! a leaf; `value` holds per-node class counts (probabilities are derived on
//! import). Leaves carry `feature = -2` and `threshold = -2.0`.
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "model_kind": "tree",
//!   "n_features": 1,
//!   "feature_names": ["x"],
//!   "trees": [{
//!     "children_left":  [1, -1, -1],
//!     "children_right": [2, -1, -1],
//!     "feature":        [0, -2, -2],
//!     "threshold":      [2.5, -2.0, -2.0],
//!     "value":          [[2.0, 2.0], [2.0, 0.0], [0.0, 2.0]],
//!     "n_node_samples": [4, 2, 2]
//!   }]
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cart::{NodeKind, TreeModel, TreeNode, TreeParams};
use crate::error::{Error, Result};
use crate::forest::{tree_seed, ForestModel, ForestParams};
use crate::io::{read_to_string, write_atomic};
use crate::model::{Model, ModelKind};

pub const FORMAT_VERSION: u32 = 1;

const LEAF_FEATURE: i64 = -2;
const LEAF_THRESHOLD: f64 = -2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub children_left: Vec<i64>,
    pub children_right: Vec<i64>,
    pub feature: Vec<i64>,
    pub threshold: Vec<f64>,
    pub value: Vec<Vec<f64>>,
    pub n_node_samples: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterchangeDocument {
    pub format_version: u32,
    pub model_kind: ModelKind,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree_params: Option<TreeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest_params: Option<ForestParams>,
    pub trees: Vec<TreeRecord>,
}

/// A model read back from an interchange document, with its feature names.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedModel {
    pub model: Model,
    pub feature_names: Vec<String>,
}

fn tree_record(tree: &TreeModel) -> TreeRecord {
    let n = tree.nodes().len();
    let mut rec = TreeRecord {
        children_left: Vec::with_capacity(n),
        children_right: Vec::with_capacity(n),
        feature: Vec::with_capacity(n),
        threshold: Vec::with_capacity(n),
        value: Vec::with_capacity(n),
        n_node_samples: Vec::with_capacity(n),
    };
    for node in tree.nodes() {
        let (l, r, f, t) = match node.kind {
            NodeKind::Leaf => (-1, -1, LEAF_FEATURE, LEAF_THRESHOLD),
            NodeKind::Split {
                feature,
                threshold,
                left,
                right,
            } => (left as i64, right as i64, feature as i64, threshold),
        };
        rec.children_left.push(l);
        rec.children_right.push(r);
        rec.feature.push(f);
        rec.threshold.push(t);
        rec.value.push(node.class_counts.to_vec());
        rec.n_node_samples.push(node.n_node_samples);
    }
    rec
}

pub fn to_document(model: &Model, feature_names: &[String]) -> Result<InterchangeDocument> {
    if feature_names.len() != model.n_features() {
        return Err(Error::FeatureCount {
            expected: model.n_features(),
            got: feature_names.len(),
        });
    }
    let (tree_params, forest_params) = match model {
        Model::Tree(t) => (Some(*t.params()), None),
        Model::Forest(f) => (None, Some(*f.params())),
    };
    Ok(InterchangeDocument {
        format_version: FORMAT_VERSION,
        model_kind: model.kind(),
        n_features: model.n_features(),
        feature_names: feature_names.to_vec(),
        tree_params,
        forest_params,
        trees: model.trees().iter().map(tree_record).collect(),
    })
}

fn tree_from_record(rec: &TreeRecord, tree: usize, n_features: usize, params: TreeParams) -> Result<TreeModel> {
    let fail = |node: usize, message: String| Error::Interchange { tree, node, message };
    let n = rec.children_left.len();
    let lengths = [
        ("children_right", rec.children_right.len()),
        ("feature", rec.feature.len()),
        ("threshold", rec.threshold.len()),
        ("value", rec.value.len()),
        ("n_node_samples", rec.n_node_samples.len()),
    ];
    for (name, len) in lengths {
        if len != n {
            return Err(fail(
                n.min(len),
                format!("{name} has {len} entries but children_left has {n}"),
            ));
        }
    }
    if n == 0 {
        return Err(fail(0, "tree has no nodes".into()));
    }
    let mut nodes = Vec::with_capacity(n);
    for id in 0..n {
        let row = &rec.value[id];
        if row.len() != 2 {
            return Err(fail(id, format!("value row has {} classes, expected 2", row.len())));
        }
        let (l, r) = (rec.children_left[id], rec.children_right[id]);
        let kind = match (l, r) {
            (-1, -1) => NodeKind::Leaf,
            (-1, _) | (_, -1) => return Err(fail(id, "exactly one child is -1; both or neither must be".into())),
            _ => {
                let in_range = |c: i64| c >= 0 && (c as usize) < n;
                if !in_range(l) || !in_range(r) {
                    return Err(fail(id, format!("child index ({l}, {r}) out of range for {n} nodes")));
                }
                let f = rec.feature[id];
                if f < 0 || f as usize >= n_features {
                    return Err(fail(id, format!("feature {f} out of range for {n_features} features")));
                }
                NodeKind::Split {
                    feature: f as usize,
                    threshold: rec.threshold[id],
                    left: l as usize,
                    right: r as usize,
                }
            }
        };
        nodes.push(TreeNode::new(kind, [row[0], row[1]], rec.n_node_samples[id]));
    }
    TreeModel::from_nodes(nodes, n_features, params).map_err(|e| fail(e.node, e.message))
}

pub fn from_document(doc: &InterchangeDocument) -> Result<NamedModel> {
    if doc.format_version != FORMAT_VERSION {
        return Err(Error::Document(format!(
            "unsupported format_version {} (expected {FORMAT_VERSION})",
            doc.format_version
        )));
    }
    if doc.feature_names.len() != doc.n_features {
        return Err(Error::Document(format!(
            "n_features is {} but {} feature names are listed",
            doc.n_features,
            doc.feature_names.len()
        )));
    }
    let model = match doc.model_kind {
        ModelKind::Tree => {
            if doc.trees.len() != 1 {
                return Err(Error::Document(format!(
                    "a tree document holds exactly one tree, found {}",
                    doc.trees.len()
                )));
            }
            let params = doc.tree_params.unwrap_or_default();
            Model::Tree(tree_from_record(&doc.trees[0], 0, doc.n_features, params)?)
        }
        ModelKind::Forest => {
            if doc.trees.is_empty() {
                return Err(Error::Document("a forest document needs at least one tree".into()));
            }
            let params = doc.forest_params.unwrap_or(ForestParams {
                n_estimators: doc.trees.len(),
                ..Default::default()
            });
            if params.n_estimators != doc.trees.len() {
                return Err(Error::Document(format!(
                    "forest_params.n_estimators is {} but {} trees are listed",
                    params.n_estimators,
                    doc.trees.len()
                )));
            }
            let trees = doc
                .trees
                .iter()
                .enumerate()
                .map(|(t, rec)| {
                    let tree_params = TreeParams {
                        seed: tree_seed(params.seed, t),
                        ..params.tree_params
                    };
                    tree_from_record(rec, t, doc.n_features, tree_params)
                })
                .collect::<Result<Vec<_>>>()?;
            Model::Forest(ForestModel::from_trees(trees, params)?)
        }
    };
    Ok(NamedModel {
        model,
        feature_names: doc.feature_names.clone(),
    })
}

pub fn to_json_string(model: &Model, feature_names: &[String]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&to_document(model, feature_names)?)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json_str(text: &str) -> Result<NamedModel> {
    let doc: InterchangeDocument = serde_json::from_str(text)?;
    from_document(&doc)
}

pub fn export_json(model: &Model, feature_names: &[String], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, to_json_string(model, feature_names)?.as_bytes())
}

pub fn import_json(path: impl AsRef<Path>) -> Result<NamedModel> {
    from_json_str(&read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cart::fit_tree;
    use crate::cart::tests::stump_data;
    use crate::extract::default_feature_names;

    fn stump() -> Model {
        let params = TreeParams {
            max_depth: Some(1),
            ..Default::default()
        };
        Model::Tree(fit_tree(&stump_data(), &params).unwrap())
    }

    #[test]
    fn single_leaf_record() {
        let leaf = TreeModel::from_nodes(
            vec![TreeNode::new(NodeKind::Leaf, [3.0, 1.0], 4)],
            1,
            TreeParams::default(),
        )
        .unwrap();
        let doc = to_document(&Model::Tree(leaf), &default_feature_names(1)).unwrap();
        assert_eq!(doc.trees[0].children_left, vec![-1]);
        assert_eq!(doc.trees[0].children_right, vec![-1]);
    }

    #[test]
    fn stump_arrays_and_round_trip() {
        let model = stump();
        let names = default_feature_names(1);
        let doc = to_document(&model, &names).unwrap();
        let rec = &doc.trees[0];
        assert_eq!(rec.children_left, vec![1, -1, -1]);
        assert_eq!(rec.children_right, vec![2, -1, -1]);
        assert_eq!(rec.threshold[0], 2.5);
        assert_eq!(rec.value, vec![vec![2.0, 2.0], vec![2.0, 0.0], vec![0.0, 2.0]]);
        let back = from_json_str(&to_json_string(&model, &names).unwrap()).unwrap();
        assert_eq!(back.model, model);
        assert_eq!(back.feature_names, names);
    }

    #[test]
    fn thresholds_survive_json_bit_for_bit() {
        // needs the exact float parser; the default one rounds this down
        let t = 945.0732736477613;
        let mut doc = to_document(&stump(), &default_feature_names(1)).unwrap();
        doc.trees[0].threshold[0] = t;
        let text = serde_json::to_string(&doc).unwrap();
        let back = from_json_str(&text).unwrap();
        match back.model.trees()[0].node(0).kind {
            NodeKind::Split { threshold, .. } => assert_eq!(threshold.to_bits(), t.to_bits()),
            NodeKind::Leaf => panic!("root should split"),
        }
    }

    fn doc_with(edit: impl FnOnce(&mut InterchangeDocument)) -> Result<NamedModel> {
        let mut doc = to_document(&stump(), &default_feature_names(1)).unwrap();
        edit(&mut doc);
        from_document(&doc)
    }

    #[test]
    fn validation_errors_name_tree_and_node() {
        let err = doc_with(|d| d.trees[0].children_left[0] = 7).unwrap_err();
        assert!(matches!(err, Error::Interchange { tree: 0, node: 0, .. }), "{err}");
        let err = doc_with(|d| d.trees[0].children_right[0] = -1).unwrap_err();
        assert!(matches!(err, Error::Interchange { node: 0, .. }), "{err}");
        let err = doc_with(|d| d.trees[0].value[2] = vec![0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::Interchange { node: 2, .. }), "{err}");
        let err = doc_with(|d| d.trees[0].value[1] = vec![-1.0, 3.0]).unwrap_err();
        assert!(matches!(err, Error::Interchange { node: 1, .. }), "{err}");
        let err = doc_with(|d| {
            d.trees[0].feature.pop();
        })
        .unwrap_err();
        assert!(matches!(err, Error::Interchange { .. }), "{err}");
        let err = doc_with(|d| d.trees[0].feature[0] = 3).unwrap_err();
        assert!(matches!(err, Error::Interchange { node: 0, .. }), "{err}");
        let err = doc_with(|d| d.trees[0].children_left[0] = 0).unwrap_err();
        assert!(matches!(err, Error::Interchange { .. }), "{err}");
    }

    #[test]
    fn unknown_version_rejected() {
        assert!(matches!(doc_with(|d| d.format_version = 2), Err(Error::Document(_))));
        assert!(matches!(doc_with(|d| d.n_features = 2), Err(Error::Document(_))));
    }

    #[test]
    fn external_document_without_params() {
        let text = r#"{
            "format_version": 1, "model_kind": "forest", "n_features": 1, "feature_names": ["x"],
            "trees": [
              {"children_left": [1,-1,-1], "children_right": [2,-1,-1], "feature": [0,-2,-2],
               "threshold": [2.5,-2,-2], "value": [[0.5,0.5],[1.0,0.0],[0.0,1.0]],
               "n_node_samples": [4,2,2]},
              {"children_left": [-1], "children_right": [-1], "feature": [-2],
               "threshold": [-2], "value": [[1.5,0.5]], "n_node_samples": [4]}
            ]}"#;
        let m = from_json_str(text).unwrap().model;
        assert_eq!(m.trees().len(), 2);
        assert_eq!(m.predict_proba(&[3.0]).unwrap(), [0.375, 0.625]);
    }
}
