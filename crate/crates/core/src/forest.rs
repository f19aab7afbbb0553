//! Random-forest binary classifier built from CART trees.
//!
//! Trees are grown greedily on bootstrap resamples with the Gini criterion.
//! At each node `max_features` candidate columns are drawn without
//! replacement and every midpoint between consecutive distinct values is
//! tried. Each tree owns an RNG stream seeded by
//! [`derive_seed`](crate::seed::derive_seed)`(seed, tree_index)`, so training
//! gives the same forest whether trees are grown sequentially or on a thread
//! pool of any size.
//!
//! Probabilities are the mean over trees of the class-`Below` fraction of the
//! leaf a sample lands in.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Class, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Impurity decreases at or below this value count as "no gain". Candidate
/// splits whose decrease is within this distance of the current best are
/// treated as ties, and the earlier candidate (lower feature position, then
/// lower threshold) wins.
pub const GAIN_EPSILON: f64 = 1e-12;

pub const FOREST_FORMAT: &str = "seawater-cascade/forest";
pub const FOREST_VERSION: u32 = 1;

fn default_true() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(F))`.
    #[serde(default)]
    pub max_features: Option<usize>,
    pub seed: u64,
    /// Test hook: `false` trains every tree on the data as given. Production
    /// paths always bootstrap.
    #[serde(default = "default_true", skip_serializing_if = "is_true")]
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams::single_model()
    }
}

impl ForestParams {
    /// 100 trees, depth 10, split needs 6 samples.
    pub fn single_model() -> Self {
        ForestParams {
            n_estimators: 100,
            max_depth: 10,
            min_samples_split: 6,
            max_features: None,
            seed: 0,
            bootstrap: true,
        }
    }

    /// 800 trees, depth 10, split needs 6 samples; used by every cascade stage.
    pub fn cascade() -> Self {
        ForestParams {
            n_estimators: 800,
            ..ForestParams::single_model()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Effective candidate-feature count for `n_features` columns.
    pub fn resolved_max_features(&self, n_features: usize) -> usize {
        self.max_features
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_estimators == 0 {
            return Err(Error::config("n_estimators must be >= 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::config("max_depth must be >= 1"));
        }
        if self.min_samples_split < 2 {
            return Err(Error::config("min_samples_split must be >= 2"));
        }
        let mf = self.resolved_max_features(n_features);
        if mf == 0 || mf > n_features {
            return Err(Error::config(format!(
                "max_features must be in 1..={n_features}, got {mf}"
            )));
        }
        Ok(())
    }
}

/// A tree node. Children are indices into [`Tree::nodes`]; samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        n_below: u32,
        n_above: u32,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
        /// Training samples (with bootstrap multiplicity) reaching the node.
        samples: u32,
        /// Weighted Gini decrease of this split.
        decrease: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Root at index 0.
    pub nodes: Vec<Node>,
}

impl Tree {
    fn leaf_for(&self, x: &[f64]) -> (u32, u32) {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { n_below, n_above } => return (*n_below, *n_above),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    /// Fraction of class `Below` in the leaf `x` reaches.
    pub fn proba_below(&self, x: &[f64]) -> f64 {
        let (b, a) = self.leaf_for(x);
        f64::from(b) / f64::from(b + a)
    }

    pub fn n_splits(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }

    fn root_samples(&self) -> f64 {
        match &self.nodes[0] {
            Node::Leaf { n_below, n_above } => f64::from(n_below + n_above),
            Node::Split { samples, .. } => f64::from(*samples),
        }
    }
}

/// Gini impurity `1 - p_below^2 - p_above^2` of a node with the given class counts.
pub fn gini_impurity(n_below: usize, n_above: usize) -> Result<f64> {
    let n = n_below + n_above;
    if n == 0 {
        return Err(Error::Empty("Gini impurity of an empty node".into()));
    }
    Ok(gini(n_below as f64, n_above as f64))
}

#[inline]
fn gini(b: f64, a: f64) -> f64 {
    let n = b + a;
    let pb = b / n;
    let pa = a / n;
    1.0 - pb * pb - pa * pa
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// `G(parent) - n_L/n G(L) - n_R/n G(R)`.
    pub decrease: f64,
}

fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Best Gini split of `rows` over the `candidates` columns of `x`.
///
/// Thresholds are midpoints between consecutive distinct values. Returns
/// `None` when fewer than two rows are given or no split decreases impurity
/// by more than [`GAIN_EPSILON`].
pub fn best_split(
    x: &[Vec<f64>],
    y: &[Class],
    rows: &[usize],
    candidates: &[usize],
) -> Option<SplitCandidate> {
    let mut scratch = Vec::with_capacity(rows.len());
    best_split_with(x, y, rows, candidates, &mut scratch)
}

fn best_split_with(
    x: &[Vec<f64>],
    y: &[Class],
    rows: &[usize],
    candidates: &[usize],
    scratch: &mut Vec<(f64, bool)>,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let total_above = rows.iter().filter(|&&r| y[r] == Class::Above).count();
    let total_below = n - total_above;
    if total_above == 0 || total_below == 0 {
        return None;
    }
    let nf = n as f64;
    let parent = gini(total_below as f64, total_above as f64);
    let mut best: Option<SplitCandidate> = None;

    for &feature in candidates {
        scratch.clear();
        scratch.extend(rows.iter().map(|&r| (x[r][feature], y[r] == Class::Above)));
        scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if scratch[0].0 == scratch[n - 1].0 {
            continue;
        }
        let mut left_above = 0usize;
        for i in 0..n - 1 {
            if scratch[i].1 {
                left_above += 1;
            }
            if scratch[i].0 == scratch[i + 1].0 {
                continue;
            }
            let nl = i + 1;
            let nr = n - nl;
            let right_above = total_above - left_above;
            let gl = gini((nl - left_above) as f64, left_above as f64);
            let gr = gini((nr - right_above) as f64, right_above as f64);
            let decrease = parent - (nl as f64 / nf) * gl - (nr as f64 / nf) * gr;
            let better = match &best {
                None => decrease > GAIN_EPSILON,
                Some(b) => decrease > b.decrease + GAIN_EPSILON,
            };
            if better {
                best = Some(SplitCandidate {
                    feature,
                    threshold: midpoint(scratch[i].0, scratch[i + 1].0),
                    decrease,
                });
            }
        }
    }
    best
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [Class],
    params: &'a ForestParams,
    n_features: usize,
    max_features: usize,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    scratch: Vec<(f64, bool)>,
}

impl Grower<'_> {
    fn leaf(&mut self, rows: &[usize]) -> u32 {
        let n_above = rows.iter().filter(|&&r| self.y[r] == Class::Above).count() as u32;
        let n_below = rows.len() as u32 - n_above;
        self.nodes.push(Node::Leaf { n_below, n_above });
        (self.nodes.len() - 1) as u32
    }

    fn grow(&mut self, rows: &mut [usize], depth: usize) -> u32 {
        if depth >= self.params.max_depth || rows.len() < self.params.min_samples_split {
            return self.leaf(rows);
        }
        let mut candidates =
            index::sample(&mut self.rng, self.n_features, self.max_features).into_vec();
        candidates.sort_unstable();
        let Some(split) = best_split_with(self.x, self.y, rows, &candidates, &mut self.scratch)
        else {
            return self.leaf(rows);
        };

        let samples = rows.len() as u32;
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf {
            n_below: 0,
            n_above: 0,
        });

        let mut mid = 0;
        for i in 0..rows.len() {
            if self.x[rows[i]][split.feature] <= split.threshold {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        let (l, r) = rows.split_at_mut(mid);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[at] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
            samples,
            decrease: split.decrease,
        };
        at as u32
    }
}

fn fit_tree(x: &[Vec<f64>], y: &[Class], params: &ForestParams, seed: u64) -> Tree {
    let n_features = x[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut rows: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut grower = Grower {
        x,
        y,
        params,
        n_features,
        max_features: params.resolved_max_features(n_features),
        rng,
        nodes: Vec::new(),
        scratch: Vec::with_capacity(n),
    };
    grower.grow(&mut rows, 0);
    Tree {
        nodes: grower.nodes,
    }
}

/// Per-feature mean-decrease-impurity weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceVector {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
}

impl ImportanceVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .map(|i| self.weights[i])
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub feature_names: Vec<String>,
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<Tree>,
}

#[derive(Serialize, Deserialize)]
struct ForestDocument<T> {
    format: String,
    version: u32,
    #[serde(flatten)]
    forest: T,
}

impl Forest {
    /// Trains on `data` with `params`. Trees are grown on the current rayon
    /// pool; the result does not depend on its size.
    pub fn fit(data: &LabeledDataset, params: &ForestParams) -> Result<Forest> {
        if data.is_empty() {
            return Err(Error::Empty(
                "cannot train a forest on an empty dataset".into(),
            ));
        }
        let n_features = data.features.len();
        params.validate(n_features)?;
        if data.count(Class::Above) == 0 || data.count(Class::Below) == 0 {
            log::warn!(
                "training data has a single class ({} records); trees will be single leaves",
                data.len()
            );
        }
        let tree_seeds: Vec<u64> = (0..params.n_estimators as u64)
            .map(|t| derive_seed(params.seed, t))
            .collect();
        let trees = tree_seeds
            .par_iter()
            .map(|&s| fit_tree(&data.rows, &data.labels, params, s))
            .collect();
        Ok(Forest {
            params: params.clone(),
            feature_names: data.feature_names(),
            tree_seeds,
            trees,
        })
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features() {
            return Err(Error::Arity {
                expected: self.n_features(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Mean over trees of the leaf's class-`Below` fraction.
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x)?;
        let sum: f64 = self.trees.iter().map(|t| t.proba_below(x)).sum();
        Ok(sum / self.trees.len() as f64)
    }

    /// `Below` iff the probability of `Below` exceeds 0.5; an exact tie is `Above`.
    pub fn predict_class(&self, x: &[f64]) -> Result<Class> {
        Ok(class_from_proba(self.predict_proba(x)?))
    }

    /// Mean decrease in impurity: per tree, the sum over splits on each
    /// feature of `(node samples / root samples) * decrease`; averaged over
    /// trees and normalized to sum to one. All zeros when no tree splits.
    pub fn feature_importance(&self) -> ImportanceVector {
        let mut weights = vec![0.0; self.n_features()];
        for tree in &self.trees {
            let root = tree.root_samples();
            for node in &tree.nodes {
                if let Node::Split {
                    feature,
                    samples,
                    decrease,
                    ..
                } = node
                {
                    weights[*feature] += f64::from(*samples) / root * decrease;
                }
            }
        }
        let n_trees = self.trees.len() as f64;
        weights.iter_mut().for_each(|w| *w /= n_trees);
        let total: f64 = weights.iter().sum();
        if total > 0.0 {
            weights.iter_mut().for_each(|w| *w /= total);
        }
        ImportanceVector {
            feature_names: self.feature_names.clone(),
            weights,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nf = self.n_features();
        if self.trees.len() != self.params.n_estimators || self.tree_seeds.len() != self.trees.len()
        {
            return Err(Error::Format(
                "tree count does not match n_estimators".into(),
            ));
        }
        for tree in &self.trees {
            if tree.nodes.is_empty() {
                return Err(Error::Format("empty tree".into()));
            }
            for node in &tree.nodes {
                match node {
                    Node::Leaf { n_below, n_above } if n_below + n_above == 0 => {
                        return Err(Error::Format("leaf without samples".into()))
                    }
                    Node::Split {
                        feature,
                        left,
                        right,
                        ..
                    } if *feature >= nf
                        || *left as usize >= tree.nodes.len()
                        || *right as usize >= tree.nodes.len() =>
                    {
                        return Err(Error::Format("split references an invalid index".into()))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ForestDocument {
            format: FOREST_FORMAT.into(),
            version: FOREST_VERSION,
            forest: self,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Forest> {
        let doc: ForestDocument<Forest> = serde_json::from_str(s)?;
        if doc.format != FOREST_FORMAT || doc.version != FOREST_VERSION {
            return Err(Error::Format(format!(
                "expected {FOREST_FORMAT} v{FOREST_VERSION}, found {} v{}",
                doc.format, doc.version
            )));
        }
        doc.forest.validate()?;
        Ok(doc.forest)
    }
}

pub fn class_from_proba(p_below: f64) -> Class {
    if p_below > 0.5 {
        Class::Below
    } else {
        Class::Above
    }
}
