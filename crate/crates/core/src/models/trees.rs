//! CART regression trees with bagged, randomized and boosted ensembles.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, ModelError};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    All,
    Sqrt,
    Fraction(f64),
}

impl MaxFeatures {
    pub fn resolve(&self, n_features: usize) -> usize {
        let k = match *self {
            Self::All => n_features,
            Self::Sqrt => (n_features as f64).sqrt().floor() as usize,
            Self::Fraction(f) => (f * n_features as f64).floor() as usize,
        };
        k.clamp(1, n_features.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Exhaustive,
    RandomThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until the other limits stop it.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// Fraction of the training size when below 1, otherwise a count.
    pub min_samples_leaf: f64,
    pub max_features: MaxFeatures,
    pub split_mode: SplitMode,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: None,
            min_samples_split: 2,
            min_samples_leaf: 1.0,
            max_features: MaxFeatures::All,
            split_mode: SplitMode::Exhaustive,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidHyperparameter(m));
        if self.min_samples_split < 2 {
            return bad(format!("min_samples_split = {} (< 2)", self.min_samples_split));
        }
        let l = self.min_samples_leaf;
        if !(l > 0.0) || (l < 1.0 && l > 0.5) || (l >= 1.0 && l.fract() != 0.0) {
            return bad(format!("min_samples_leaf = {l}"));
        }
        if let MaxFeatures::Fraction(f) = self.max_features {
            if !(f > 0.0 && f <= 1.0) {
                return bad(format!("max_features fraction = {f}"));
            }
        }
        if self.max_depth == Some(0) {
            return bad("max_depth = 0".into());
        }
        Ok(())
    }

    /// Absolute minimum leaf size for `n` training samples (fractions round
    /// up, never below 1).
    pub fn min_leaf_count(&self, n: usize) -> usize {
        if self.min_samples_leaf < 1.0 {
            ((self.min_samples_leaf * n as f64).ceil() as usize).max(1)
        } else {
            self.min_samples_leaf as usize
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node<T> {
    Split { feature_index: usize, threshold: T, left: Box<Node<T>>, right: Box<Node<T>> },
    Leaf { leaf_value: T },
}

impl<T: Scalar> Node<T> {
    pub fn predict_row(&self, row: &[T]) -> T {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { leaf_value } => return *leaf_value,
                Node::Split { feature_index, threshold, left, right } => {
                    node = if row[*feature_index] <= *threshold { left } else { right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            Node::Leaf { .. } => 1,
            Node::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree<T> {
    pub n_features: usize,
    pub root: Node<T>,
}

impl<T: Scalar> Tree<T> {
    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>, ModelError> {
        check_width(self.n_features, x)?;
        Ok(x.iter_rows().map(|r| self.root.predict_row(r)).collect())
    }
}

fn check_width<T: Scalar>(expected: usize, x: &Matrix<T>) -> Result<(), ModelError> {
    if x.cols() != expected {
        return Err(ModelError::Dimension { expected, got: x.cols() });
    }
    Ok(())
}

fn check_xy<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<(), ModelError> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(ModelError::EmptyInput);
    }
    if y.len() != x.rows() {
        return Err(ModelError::Dimension { expected: x.rows(), got: y.len() });
    }
    if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("training data".into()));
    }
    Ok(())
}

struct Builder<'a, T> {
    x: &'a Matrix<T>,
    y: &'a [T],
    params: &'a TreeParams,
    min_leaf: usize,
    n_candidates: usize,
    rng: ChaCha8Rng,
}

struct BestSplit<T> {
    feature: usize,
    threshold: T,
    children_sse: T,
}

fn mean_of<T: Scalar>(y: &[T], idx: &[usize]) -> T {
    idx.iter().map(|&i| y[i]).sum::<T>() / T::from_usize_lossy(idx.len())
}

fn sse_of<T: Scalar>(y: &[T], idx: &[usize]) -> T {
    let m = mean_of(y, idx);
    idx.iter().map(|&i| (y[i] - m) * (y[i] - m)).sum()
}

impl<T: Scalar> Builder<'_, T> {
    fn build(&mut self, idx: &mut Vec<usize>, depth: usize) -> Node<T> {
        let leaf = Node::Leaf { leaf_value: mean_of(self.y, idx) };
        let n = idx.len();
        if n < self.params.min_samples_split || n < 2 * self.min_leaf || self.params.max_depth.is_some_and(|d| depth >= d) {
            return leaf;
        }
        let node_sse = sse_of(self.y, idx);
        if !(node_sse > T::zero()) {
            return leaf;
        }
        let Some(best) = self.best_split(idx, node_sse) else {
            return leaf;
        };
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            idx.iter().copied().partition(|&i| self.x[(i, best.feature)] <= best.threshold);
        let left = self.build(&mut l, depth + 1);
        let right = self.build(&mut r, depth + 1);
        Node::Split { feature_index: best.feature, threshold: best.threshold, left: Box::new(left), right: Box::new(right) }
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.x.cols();
        if self.n_candidates >= p {
            (0..p).collect()
        } else {
            let mut f = sample(&mut self.rng, p, self.n_candidates).into_vec();
            f.sort_unstable();
            f
        }
    }

    fn best_split(&mut self, idx: &[usize], node_sse: T) -> Option<BestSplit<T>> {
        let mut best: Option<BestSplit<T>> = None;
        // a split must reduce the squared error by a non-negligible amount
        let mut bound = node_sse * (T::one() - T::lit(1e-12));
        for f in self.candidate_features() {
            let found = match self.params.split_mode {
                SplitMode::Exhaustive => self.scan_feature(idx, f),
                SplitMode::RandomThreshold => self.random_threshold(idx, f),
            };
            if let Some((threshold, sse)) = found {
                if sse < bound {
                    bound = sse;
                    best = Some(BestSplit { feature: f, threshold, children_sse: sse });
                }
            }
        }
        debug_assert!(best.as_ref().is_none_or(|b| b.children_sse < node_sse));
        best
    }

    /// Lowest children SSE over midpoints of consecutive distinct values.
    fn scan_feature(&self, idx: &[usize], f: usize) -> Option<(T, T)> {
        let mut pairs: Vec<(T, T)> = idx.iter().map(|&i| (self.x[(i, f)], self.y[i])).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let n = pairs.len();
        let total: T = pairs.iter().map(|p| p.1).sum();
        let total_sq: T = pairs.iter().map(|p| p.1 * p.1).sum();
        let mut left_sum = T::zero();
        let mut left_sq = T::zero();
        let mut best: Option<(T, T)> = None;
        for i in 0..n - 1 {
            left_sum += pairs[i].1;
            left_sq += pairs[i].1 * pairs[i].1;
            let nl = i + 1;
            let nr = n - nl;
            if nl < self.min_leaf || nr < self.min_leaf || pairs[i].0 == pairs[i + 1].0 {
                continue;
            }
            let (fl, fr) = (T::from_usize_lossy(nl), T::from_usize_lossy(nr));
            let right_sum = total - left_sum;
            let sse = (left_sq - left_sum * left_sum / fl) + (total_sq - left_sq - right_sum * right_sum / fr);
            if best.is_none_or(|(_, s)| sse < s) {
                let (a, b) = (pairs[i].0, pairs[i + 1].0);
                let mut mid = (a + b) * T::lit(0.5);
                if mid >= b {
                    mid = a;
                }
                best = Some((mid, sse));
            }
        }
        best
    }

    fn random_threshold(&mut self, idx: &[usize], f: usize) -> Option<(T, T)> {
        let (lo, hi) = idx.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &i| {
            let v = self.x[(i, f)];
            (lo.min(v), hi.max(v))
        });
        if !(hi > lo) {
            return None;
        }
        let u: f64 = self.rng.random();
        let mut t = lo + (hi - lo) * T::lit(u);
        if t >= hi {
            t = lo;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().copied().partition(|&i| self.x[(i, f)] <= t);
        if l.len() < self.min_leaf || r.len() < self.min_leaf {
            return None;
        }
        Some((t, sse_of(self.y, &l) + sse_of(self.y, &r)))
    }
}

/// Fits one regression tree on the rows listed in `rows` (repeats allowed).
fn fit_on_rows<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    mut rows: Vec<usize>,
    params: &TreeParams,
    seed: u64,
) -> Tree<T> {
    let mut b = Builder {
        x,
        y,
        params,
        min_leaf: params.min_leaf_count(rows.len()),
        n_candidates: params.max_features.resolve(x.cols()),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let root = b.build(&mut rows, 0);
    Tree { n_features: x.cols(), root }
}

pub fn cart_fit<T: Scalar>(x: &Matrix<T>, y: &[T], params: &TreeParams, seed: u64) -> Result<Tree<T>, ModelError> {
    check_xy(x, y)?;
    params.validate()?;
    Ok(fit_on_rows(x, y, (0..x.rows()).collect(), params, seed))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleFamily {
    RandomForest,
    ExtraTrees,
    Gbdt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel<T: Scalar = f64> {
    pub family: EnsembleFamily,
    pub trees: Vec<Tree<T>>,
    pub n_features: usize,
    pub learning_rate: Option<T>,
    pub base_prediction: Option<T>,
    pub bootstrap: bool,
    pub seed: u64,
    /// Training mean squared error after each boosting stage (GBDT only),
    /// starting with the base prediction.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stage_loss: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForestOptions {
    /// Overrides the family's bootstrap setting.
    pub bootstrap: Option<bool>,
}

pub fn forest_fit<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    family: EnsembleFamily,
    n_estimators: usize,
    params: &TreeParams,
    seed: u64,
) -> Result<EnsembleModel<T>, ModelError> {
    forest_fit_with(x, y, family, n_estimators, params, seed, ForestOptions::default())
}

pub fn forest_fit_with<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    family: EnsembleFamily,
    n_estimators: usize,
    params: &TreeParams,
    seed: u64,
    opts: ForestOptions,
) -> Result<EnsembleModel<T>, ModelError> {
    check_xy(x, y)?;
    params.validate()?;
    if n_estimators < 1 {
        return Err(ModelError::InvalidHyperparameter("n_estimators must be at least 1".into()));
    }
    let (split_mode, default_bootstrap) = match family {
        EnsembleFamily::RandomForest => (SplitMode::Exhaustive, true),
        EnsembleFamily::ExtraTrees => (SplitMode::RandomThreshold, false),
        EnsembleFamily::Gbdt => {
            return Err(ModelError::InvalidSpec("use gbdt_fit for boosted trees".into()));
        }
    };
    let bootstrap = opts.bootstrap.unwrap_or(default_bootstrap);
    let tree_params = TreeParams { split_mode, ..*params };
    let n = x.rows();
    let trees: Vec<Tree<T>> = (0..n_estimators)
        .into_par_iter()
        .map(|i| {
            let tree_seed = derive_seed(seed, i as u64);
            let rows: Vec<usize> = if bootstrap {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tree_seed, u64::MAX));
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_on_rows(x, y, rows, &tree_params, tree_seed)
        })
        .collect();
    Ok(EnsembleModel {
        family,
        trees,
        n_features: x.cols(),
        learning_rate: None,
        base_prediction: None,
        bootstrap,
        seed,
        stage_loss: Vec::new(),
    })
}

/// Gradient boosting on squared error. `params.split_mode` is ignored
/// (stages always use exhaustive splits); `n_estimators = 0` yields the
/// base prediction alone.
pub fn gbdt_fit<T: Scalar>(
    x: &Matrix<T>,
    y: &[T],
    learning_rate: T,
    n_estimators: usize,
    params: &TreeParams,
    seed: u64,
) -> Result<EnsembleModel<T>, ModelError> {
    check_xy(x, y)?;
    params.validate()?;
    if !(learning_rate > T::zero() && learning_rate <= T::one()) {
        return Err(ModelError::InvalidHyperparameter(format!("learning_rate = {learning_rate}")));
    }
    let n = x.rows();
    let stage_params = TreeParams { split_mode: SplitMode::Exhaustive, ..*params };
    let base = y.iter().copied().sum::<T>() / T::from_usize_lossy(n);
    let mut pred = vec![base; n];
    let mse = |pred: &[T]| {
        y.iter().zip(pred).map(|(&a, &b)| ((a - b) * (a - b)).to_f64_lossy()).sum::<f64>() / n as f64
    };
    let mut stage_loss = vec![mse(&pred)];
    let mut trees = Vec::with_capacity(n_estimators);
    let mut resid = vec![T::zero(); n];
    for k in 0..n_estimators {
        for ((r, &t), &p) in resid.iter_mut().zip(y).zip(&pred) {
            *r = t - p;
        }
        let tree = fit_on_rows(x, &resid, (0..n).collect(), &stage_params, derive_seed(seed, k as u64));
        for (p, row) in pred.iter_mut().zip(x.iter_rows()) {
            *p += learning_rate * tree.root.predict_row(row);
        }
        let loss = mse(&pred);
        let prev = *stage_loss.last().expect("base loss recorded");
        assert!(loss <= prev * (1.0 + 1e-9) + 1e-300, "boosting stage {k} increased training loss");
        stage_loss.push(loss);
        trees.push(tree);
    }
    Ok(EnsembleModel {
        family: EnsembleFamily::Gbdt,
        trees,
        n_features: x.cols(),
        learning_rate: Some(learning_rate),
        base_prediction: Some(base),
        bootstrap: false,
        seed,
        stage_loss,
    })
}

pub fn ensemble_predict<T: Scalar>(m: &EnsembleModel<T>, x: &Matrix<T>) -> Result<Vec<T>, ModelError> {
    check_width(m.n_features, x)?;
    let out = match m.family {
        EnsembleFamily::Gbdt => {
            let base = m.base_prediction.unwrap_or_else(T::zero);
            let lr = m.learning_rate.unwrap_or_else(T::one);
            x.iter_rows().map(|r| base + lr * m.trees.iter().map(|t| t.root.predict_row(r)).sum::<T>()).collect()
        }
        EnsembleFamily::RandomForest | EnsembleFamily::ExtraTrees => {
            if m.trees.is_empty() {
                return Err(ModelError::EmptyInput);
            }
            let k = T::from_usize_lossy(m.trees.len());
            x.iter_rows().map(|r| m.trees.iter().map(|t| t.root.predict_row(r)).sum::<T>() / k).collect()
        }
    };
    Ok(out)
}
