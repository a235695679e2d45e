//! Train decision trees and bagged forests, transpile them into static
//! "if-then" rule sets, check that the rules reproduce the model's
//! probabilities exactly, and explain individual predictions.
//!
//! Pipeline: [`data`] → [`cart`] / [`forest`] → [`extract`] →
//! [`rulepredict`] / [`explain`], with [`interchange`] for importing and
//! exporting fitted models.

pub mod cart;
pub mod data;
pub mod error;
pub mod explain;
pub mod extract;
pub mod forest;
pub mod interchange;
pub mod io;
pub mod model;
pub mod rulepredict;
pub mod stats;
pub mod synth;

pub use cart::{best_split, fit_tree, gini, NodeId, NodeKind, Split, TreeModel, TreeNode, TreeParams};
pub use data::{load_csv, split, summarize, DataConfig, Dataset, FeatureSchema, LoadOptions, LoadReport};
pub use error::{Error, Result};
pub use explain::{display_rule_per_estimator, group_path, Decision, DecisionPath, FeatureDictionary};
pub use extract::{build_rules, emit_csv, emit_text, load_rules_csv, model_2rules, Op, Predicate, Rule, RuleSet};
pub use forest::{fit_forest, ForestModel, ForestParams};
pub use interchange::{export_json, import_json, NamedModel};
pub use model::{Model, ModelKind};
pub use rulepredict::{roc_auc, rule_predict, rule_predict_batch, verify_equivalence, EquivalenceReport, Roc};
