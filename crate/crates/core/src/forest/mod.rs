//! Random forests for regression and classification.
//!
//! Each tree is grown on a bootstrap sample, choosing every split among a
//! fresh random subset of features. Rows left out of a tree's bootstrap
//! sample (out-of-bag rows) drive the permutation feature importance.

mod importance;
mod io;
mod tree;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use importance::block_importance;
pub use io::{read_model, write_model, MODEL_MAGIC};
pub use tree::{Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub n_random_features_per_node: usize,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub rng_seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 105,
            n_random_features_per_node: 11,
            max_depth: 35,
            min_samples_leaf: 5,
            rng_seed: 0,
        }
    }
}

impl ForestParams {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.n_trees == 0 {
            return Err(Error::InvalidParameter("n_trees must be >= 1".into()));
        }
        if self.max_depth == 0 {
            return Err(Error::InvalidParameter("max_depth must be >= 1".into()));
        }
        if self.n_random_features_per_node == 0 {
            return Err(Error::InvalidParameter(
                "n_random_features_per_node must be >= 1".into(),
            ));
        }
        if self.n_random_features_per_node > dim {
            log::debug!(
                "n_random_features_per_node {} exceeds feature dim {dim}; using {dim}",
                self.n_random_features_per_node
            );
        }
        Ok(())
    }
}

/// Dense row-major feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dims(rows * cols, data.len()));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if let Some(r) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dims(cols, r.len()));
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Keep only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        FeatureMatrix {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Regression(Vec<f64>),
    Classification { labels: Vec<usize>, n_classes: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Regression(v) => v.len(),
            Targets::Classification { labels, .. } => labels.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn task(&self) -> Task {
        match self {
            Targets::Regression(_) => Task::Regression,
            Targets::Classification { n_classes, .. } => Task::Classification {
                n_classes: *n_classes,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { n_classes: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub task: Task,
    pub n_features: usize,
    pub params: ForestParams,
    pub trees: Vec<Tree>,
    pub feature_names: Vec<String>,
    /// Mean out-of-bag error increase per permuted feature, before
    /// normalization. `None` when no tree had out-of-bag rows.
    pub oob_raw_importance: Option<Vec<f64>>,
    pub oob_error: Option<f64>,
}

pub fn train(x: &FeatureMatrix, y: &Targets, params: &ForestParams) -> Result<ForestModel> {
    if x.rows == 0 || y.is_empty() {
        return Err(Error::EmptyInput("training set is empty"));
    }
    if x.rows != y.len() {
        return Err(Error::dims(format!("{} targets", x.rows), format!("{} targets", y.len())));
    }
    if x.rows < 2 {
        return Err(Error::EmptyInput("need at least 2 training rows"));
    }
    if x.cols == 0 {
        return Err(Error::EmptyInput("feature matrix has no columns"));
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix"));
    }
    match y {
        Targets::Regression(v) if v.iter().any(|t| !t.is_finite()) => {
            return Err(Error::NonFinite("regression targets"))
        }
        Targets::Classification { labels, n_classes } => {
            if *n_classes == 0 {
                return Err(Error::InvalidParameter("n_classes must be >= 1".into()));
            }
            if let Some(l) = labels.iter().find(|l| **l >= *n_classes) {
                return Err(Error::InvalidParameter(format!(
                    "class label {l} out of range for {n_classes} classes"
                )));
            }
        }
        _ => {}
    }
    params.validate(x.cols)?;

    let grown: Vec<(Tree, Vec<usize>, ChaCha8Rng)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.rng_seed, t);
            let n = x.rows;
            let mut in_bag = vec![false; n];
            let rows: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let oob: Vec<usize> = (0..n).filter(|i| !in_bag[*i]).collect();
            let tree = tree::build(x, y, rows, params, &mut rng);
            (tree, oob, rng)
        })
        .collect();

    let oob = importance::permutation_importance(x, y, &grown);
    let trees = grown.into_iter().map(|(t, _, _)| t).collect();
    Ok(ForestModel {
        task: y.task(),
        n_features: x.cols,
        params: *params,
        trees,
        feature_names: (0..x.cols).map(|i| format!("f{i}")).collect(),
        oob_raw_importance: oob.as_ref().map(|o| o.0.clone()),
        oob_error: oob.map(|o| o.1),
    })
}

fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64 + 1);
    rng
}

impl ForestModel {
    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_features {
            return Err(Error::dims(self.n_features, names.len()));
        }
        self.feature_names = names;
        Ok(self)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::dims(
                format!("{} features", self.n_features),
                format!("{} features", x.len()),
            ));
        }
        if self.trees.is_empty() {
            return Err(Error::Untrained("forest has no trees".into()));
        }
        Ok(())
    }

    /// Mean tree output. Regression returns one value; classification
    /// returns the averaged class distribution.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let width = match self.task {
            Task::Regression => 1,
            Task::Classification { n_classes } => n_classes,
        };
        let mut acc = vec![0.0; width];
        for t in &self.trees {
            for (a, v) in acc.iter_mut().zip(t.leaf(x)) {
                *a += v;
            }
        }
        let n = self.trees.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64> {
        if self.task != Task::Regression {
            return Err(Error::InconsistentInput("predict_value on a classifier".into()));
        }
        Ok(self.predict(x)?[0])
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.task == Task::Regression {
            return Err(Error::InconsistentInput("predict_proba on a regressor".into()));
        }
        self.predict(x)
    }

    /// Permutation importance normalized to sum to one. Negative raw scores
    /// count as zero; if nothing is positive the scores are uniform.
    pub fn oob_importance(&self) -> Result<Vec<f64>> {
        let raw = self
            .oob_raw_importance
            .as_ref()
            .ok_or_else(|| Error::Untrained("model has no out-of-bag rows".into()))?;
        Ok(importance::normalize(raw))
    }
}
