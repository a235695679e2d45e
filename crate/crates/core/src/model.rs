use serde::{Deserialize, Serialize};

use crate::cart::{check_sample, TreeModel};
use crate::error::Result;
use crate::forest::ForestModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tree,
    Forest,
}

/// A fitted single tree or forest.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Tree(TreeModel),
    Forest(ForestModel),
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Tree(_) => ModelKind::Tree,
            Model::Forest(_) => ModelKind::Forest,
        }
    }

    /// Estimators in index order; a single tree is its own only estimator.
    pub fn trees(&self) -> &[TreeModel] {
        match self {
            Model::Tree(t) => std::slice::from_ref(t),
            Model::Forest(f) => f.trees(),
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Tree(t) => t.n_features(),
            Model::Forest(f) => f.n_features(),
        }
    }

    pub fn predict_proba(&self, sample: &[f64]) -> Result<[f64; 2]> {
        check_sample(sample, self.n_features())?;
        Ok(match self {
            Model::Tree(t) => t.node(t.leaf_for(sample)).probabilities,
            Model::Forest(f) => f.predict_proba_unchecked(sample),
        })
    }

    pub fn feature_importances(&self) -> Vec<f64> {
        match self {
            Model::Tree(t) => t.feature_importances().to_vec(),
            Model::Forest(f) => f.feature_importances(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.trees().iter().map(TreeModel::n_leaves).sum()
    }
}

impl From<TreeModel> for Model {
    fn from(t: TreeModel) -> Self {
        Model::Tree(t)
    }
}

impl From<ForestModel> for Model {
    fn from(f: ForestModel) -> Self {
        Model::Forest(f)
    }
}
