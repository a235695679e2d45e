//! Bagged ensembles of Gini trees.
//!
//! Tree `t` is grown from its own seed `tree_seed(master, t)`, so trees can be
//! trained in parallel and the result never depends on scheduling. The
//! bootstrap draw uses ChaCha8 stream 1 of that seed; feature subsampling uses
//! stream 0, exactly like [`fit_tree`](crate::cart::fit_tree).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cart::{check_sample, fit_tree_on_rows, tree_rng, TreeModel, TreeParams};
use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    /// Shared by every tree; its `seed` is replaced by the per-tree seed.
    pub tree_params: TreeParams,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_estimators: 100,
            tree_params: TreeParams::default(),
            bootstrap: true,
            seed: 0,
        }
    }
}

/// SplitMix64 output finalizer. Maps 0 to 0.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of tree `t`: `master ^ mix64(t)`. Tree 0 uses the master seed itself.
pub fn tree_seed(master: u64, t: usize) -> u64 {
    master ^ mix64(t as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    trees: Vec<TreeModel>,
    params: ForestParams,
    n_features: usize,
}

impl ForestModel {
    pub fn from_trees(trees: Vec<TreeModel>, params: ForestParams) -> Result<ForestModel> {
        let Some(first) = trees.first() else {
            return Err(Error::InvalidParam("a forest needs at least one tree".into()));
        };
        let n_features = first.n_features();
        if let Some(t) = trees.iter().find(|t| t.n_features() != n_features) {
            return Err(Error::FeatureCount {
                expected: n_features,
                got: t.n_features(),
            });
        }
        Ok(ForestModel {
            trees,
            params,
            n_features,
        })
    }

    pub fn trees(&self) -> &[TreeModel] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_proba(&self, sample: &[f64]) -> Result<[f64; 2]> {
        check_sample(sample, self.n_features)?;
        Ok(self.predict_proba_unchecked(sample))
    }

    /// Sums leaf probabilities in tree order, then divides by the tree count.
    pub(crate) fn predict_proba_unchecked(&self, sample: &[f64]) -> [f64; 2] {
        let mut acc = [0.0; 2];
        for tree in &self.trees {
            let p = tree.node(tree.leaf_for(sample)).probabilities;
            acc[0] += p[0];
            acc[1] += p[1];
        }
        let m = self.trees.len() as f64;
        [acc[0] / m, acc[1] / m]
    }

    /// Mean of the per-tree importances, renormalised to sum to 1.
    pub fn feature_importances(&self) -> Vec<f64> {
        let mut imp = vec![0.0; self.n_features];
        for tree in &self.trees {
            for (acc, v) in imp.iter_mut().zip(tree.feature_importances()) {
                *acc += v;
            }
        }
        let m = self.trees.len() as f64;
        imp.iter_mut().for_each(|v| *v /= m);
        let sum: f64 = imp.iter().sum();
        if sum > 0.0 {
            imp.iter_mut().for_each(|v| *v /= sum);
        }
        imp
    }
}

pub fn fit_forest(data: &Dataset, params: &ForestParams) -> Result<ForestModel> {
    if params.n_estimators == 0 {
        return Err(Error::InvalidParam("n_estimators must be at least 1".into()));
    }
    params.tree_params.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = data.n_samples();
    let trees = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let seed = tree_seed(params.seed, t);
            let rows = if params.bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1);
                (0..n).map(|_| rng.gen_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let tree_params = TreeParams {
                seed,
                ..params.tree_params
            };
            fit_tree_on_rows(data, rows, &tree_params, &mut tree_rng(seed))
        })
        .collect::<Result<Vec<_>>>()?;
    ForestModel::from_trees(trees, *params)
}

pub fn forest_feature_importances(model: &ForestModel) -> Vec<f64> {
    model.feature_importances()
}
