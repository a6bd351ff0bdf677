//! Per-target model training, cross-validated scoring with a single
//! negative log-likelihood scale, and best-family selection.
//!
//! Classifiers are scored with the categorical likelihood `−ln p(y|x)` and
//! regressors with the Gaussian likelihood
//! `½ln(2πσ²) + (y − μ)² / (2σ²)`, so both kinds of target land on one scale.

mod design;
pub mod linear;
pub mod mlp;
pub mod tree;

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use design::{build_design_matrix, ColumnGroup, DesignMatrix, Encoding, Target, Task};
use linear::{LinearRegression, Logistic};
use mlp::{Mlp, MlpParams};
use tree::{Leaf, Tree, TreeParams, TreeTarget};

use crate::error::{Error, Result};
use crate::table_ingest::FeatureTable;

/// Probability and variance floor.
pub const EPSILON: f64 = 1e-6;

/// Minimum number of rows accepted by [`fit_model`].
pub const MIN_FIT_ROWS: usize = 10;

static FIT_COUNT: AtomicUsize = AtomicUsize::new(0);

/// Number of models trained by this process so far, cross-validation fits
/// included. Lets callers verify that a cached run trained nothing.
pub fn fit_count() -> usize {
    FIT_COUNT.load(Ordering::Relaxed)
}

/// Declaration order is the tie-break order used by model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelFamily {
    Linear,
    Tree,
    Mlp,
    Ensemble,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [ModelFamily::Linear, ModelFamily::Tree, ModelFamily::Mlp, ModelFamily::Ensemble];

    /// Short name as printed in reports; the linear family reads
    /// "logistic" for classification targets.
    pub fn display_name(self, task: Task) -> &'static str {
        match (self, task) {
            (ModelFamily::Linear, Task::Classification { .. }) => "logistic",
            (ModelFamily::Linear, Task::Regression) => "linear",
            (ModelFamily::Tree, _) => "tree",
            (ModelFamily::Mlp, _) => "mlp",
            (ModelFamily::Ensemble, _) => "ensemble",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub cv_folds: usize,
    pub logistic_learning_rate: f64,
    pub logistic_epochs: usize,
    pub logistic_l2: f64,
    pub linear_ridge: f64,
    pub tree: TreeParams,
    pub mlp: MlpParams,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            cv_folds: 5,
            logistic_learning_rate: 0.1,
            logistic_epochs: 500,
            logistic_l2: 1e-4,
            linear_ridge: 1e-8,
            tree: TreeParams::default(),
            mlp: MlpParams::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cv_folds < 2 {
            return Err(Error::InvalidInput("cv_folds must be at least 2".into()));
        }
        if self.tree.max_depth == 0 || self.mlp.hidden == 0 {
            return Err(Error::InvalidInput("tree depth and hidden width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Probs(Vec<f64>),
    Gaussian(Gaussian),
}

impl Prediction {
    pub fn probs(&self) -> Option<&[f64]> {
        match self {
            Prediction::Probs(p) => Some(p),
            Prediction::Gaussian(_) => None,
        }
    }

    pub fn gaussian(&self) -> Option<Gaussian> {
        match self {
            Prediction::Gaussian(g) => Some(*g),
            Prediction::Probs(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelParams {
    Logistic(Logistic),
    Linear(LinearRegression),
    Tree(Tree),
    Mlp(Mlp),
    Ensemble(Vec<TrainedModel>),
}

/// An immutable fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub family: ModelFamily,
    pub task: Task,
    pub n_inputs: usize,
    pub params: ModelParams,
    /// Regression only: `max(ε, mean squared training residual)`.
    pub residual_variance: Option<f64>,
    /// Classification only: which classes occurred in the training rows.
    pub seen_classes: Vec<bool>,
}

/// Floors every entry at `eps` while keeping the sum at 1: entries below
/// the floor are pinned to it and the rest are rescaled to the remaining
/// mass, repeating until no rescaled entry drops under the floor.
pub fn floor_probabilities(p: &mut [f64], eps: f64) {
    let c = p.len();
    let mut pinned = vec![false; c];
    loop {
        for (v, pin) in p.iter_mut().zip(pinned.iter_mut()) {
            if !*pin && *v < eps {
                *pin = true;
                *v = eps;
            }
        }
        let n_pinned = pinned.iter().filter(|&&b| b).count();
        if n_pinned == c {
            p.iter_mut().for_each(|v| *v = 1.0 / c as f64);
            return;
        }
        let free_sum: f64 = p.iter().zip(&pinned).filter(|(_, &b)| !b).map(|(v, _)| *v).sum();
        let target = 1.0 - n_pinned as f64 * eps;
        let scale = target / free_sum;
        let mut again = false;
        for (v, &pin) in p.iter_mut().zip(&pinned) {
            if !pin {
                *v *= scale;
                again |= *v < eps;
            }
        }
        if !again {
            return;
        }
    }
}

impl TrainedModel {
    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_inputs {
            return Err(Error::LengthMismatch { left: self.n_inputs, right: x.len() });
        }
        Ok(())
    }

    /// Class probabilities (floored at ε, summing to one) or a Gaussian.
    ///
    /// ```
    /// use tabinsight::model_zoo::{Prediction, TrainedModel};
    /// let m = TrainedModel::zero_logistic(2, 3);
    /// let Prediction::Probs(p) = m.predict(&[0.4, 0.6]).unwrap() else { unreachable!() };
    /// assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
    /// ```
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        self.check_dim(x)?;
        Ok(self.predict_unchecked(x))
    }

    pub(crate) fn predict_unchecked(&self, x: &[f64]) -> Prediction {
        match self.task {
            Task::Classification { .. } => {
                let mut p = match &self.params {
                    ModelParams::Logistic(m) => m.probs(x),
                    ModelParams::Tree(t) => match t.leaf(x) {
                        Leaf::Probs(p) => p.clone(),
                        Leaf::Gaussian { .. } => unreachable!("classification tree"),
                    },
                    ModelParams::Mlp(m) => m.class_probs(x),
                    ModelParams::Ensemble(members) => {
                        let mut acc = vec![0.0; self.seen_classes.len()];
                        for m in members {
                            if let Prediction::Probs(q) = m.predict_unchecked(x) {
                                acc.iter_mut().zip(q).for_each(|(a, b)| *a += b);
                            }
                        }
                        acc.iter_mut().for_each(|a| *a /= members.len() as f64);
                        acc
                    }
                    ModelParams::Linear(_) => unreachable!("regression model"),
                };
                for (v, &seen) in p.iter_mut().zip(&self.seen_classes) {
                    if !seen {
                        *v = 0.0;
                    }
                }
                floor_probabilities(&mut p, EPSILON);
                Prediction::Probs(p)
            }
            Task::Regression => {
                let rv = self.residual_variance.unwrap_or(EPSILON);
                let g = match &self.params {
                    ModelParams::Linear(m) => Gaussian { mean: m.predict(x), var: rv },
                    ModelParams::Tree(t) => match t.leaf(x) {
                        Leaf::Gaussian { mean, var } => Gaussian { mean: *mean, var: *var },
                        Leaf::Probs(_) => unreachable!("regression tree"),
                    },
                    ModelParams::Mlp(m) => Gaussian { mean: m.regress(x), var: rv },
                    ModelParams::Ensemble(members) => {
                        let gs: Vec<Gaussian> =
                            members.iter().filter_map(|m| m.predict_unchecked(x).gaussian()).collect();
                        mixture(&gs)
                    }
                    ModelParams::Logistic(_) => unreachable!("classification model"),
                };
                Prediction::Gaussian(Gaussian { mean: g.mean, var: g.var.max(EPSILON) })
            }
        }
    }

    /// Mean NLL of the model on every row of `m`.
    pub fn nll(&self, m: &DesignMatrix) -> Result<f64> {
        if m.n_cols != self.n_inputs {
            return Err(Error::LengthMismatch { left: self.n_inputs, right: m.n_cols });
        }
        let preds: Vec<Prediction> = (0..m.n_rows).map(|i| self.predict_unchecked(m.row(i))).collect();
        Ok(match &m.target {
            Target::Classes { labels, .. } => {
                let probs: Vec<Vec<f64>> =
                    preds.into_iter().map(|p| p.probs().map(<[f64]>::to_vec).unwrap_or_default()).collect();
                nll_classification(&probs, labels)
            }
            Target::Real(y) => {
                let gs: Vec<Gaussian> = preds.iter().filter_map(Prediction::gaussian).collect();
                nll_regression(&gs, y)
            }
        })
    }

    /// Ensemble of already-trained members (all of one task).
    pub fn ensemble(members: Vec<TrainedModel>) -> Result<TrainedModel> {
        let first = members.first().ok_or(Error::EmptyInput)?;
        if members.iter().any(|m| m.task != first.task || m.n_inputs != first.n_inputs) {
            return Err(Error::InvalidInput("ensemble members disagree on task or width".into()));
        }
        let seen_classes = match first.task {
            Task::Classification { n_classes } => {
                (0..n_classes).map(|c| members.iter().any(|m| m.seen_classes[c])).collect()
            }
            Task::Regression => Vec::new(),
        };
        Ok(TrainedModel {
            family: ModelFamily::Ensemble,
            task: first.task,
            n_inputs: first.n_inputs,
            residual_variance: None,
            seen_classes,
            params: ModelParams::Ensemble(members),
        })
    }

    /// Softmax model with all-zero weights.
    pub fn zero_logistic(n_inputs: usize, n_classes: usize) -> TrainedModel {
        TrainedModel {
            family: ModelFamily::Linear,
            task: Task::Classification { n_classes },
            n_inputs,
            params: ModelParams::Logistic(Logistic::zeros(n_inputs, n_classes)),
            residual_variance: None,
            seen_classes: vec![true; n_classes],
        }
    }

    /// Regression model `y = intercept + coef·x` with the given residual
    /// variance. Convenient for building reference models.
    pub fn linear(coef: Vec<f64>, intercept: f64, residual_variance: f64) -> TrainedModel {
        TrainedModel {
            family: ModelFamily::Linear,
            task: Task::Regression,
            n_inputs: coef.len(),
            params: ModelParams::Linear(LinearRegression { coef, intercept }),
            residual_variance: Some(residual_variance.max(EPSILON)),
            seen_classes: Vec::new(),
        }
    }
}

/// Mixture of equally weighted Gaussians: mean of means, and mean of
/// variances plus the variance of the means.
pub fn mixture(members: &[Gaussian]) -> Gaussian {
    let k = members.len() as f64;
    let mean = members.iter().map(|g| g.mean).sum::<f64>() / k;
    let within = members.iter().map(|g| g.var).sum::<f64>() / k;
    let between = members.iter().map(|g| (g.mean - mean).powi(2)).sum::<f64>() / k;
    Gaussian { mean, var: within + between }
}

/// Mean of `−ln p(true class)`.
///
/// ```
/// use tabinsight::model_zoo::nll_classification;
/// let v = nll_classification(&[vec![0.5, 0.5]], &[1]);
/// assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
/// ```
pub fn nll_classification(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(probs.len(), labels.len(), "aligned predictions and labels");
    if probs.is_empty() {
        return 0.0;
    }
    probs.iter().zip(labels).map(|(p, &y)| -p[y].ln()).sum::<f64>() / probs.len() as f64
}

/// Mean Gaussian negative log-likelihood.
pub fn nll_regression(preds: &[Gaussian], y: &[f64]) -> f64 {
    assert_eq!(preds.len(), y.len(), "aligned predictions and targets");
    if preds.is_empty() {
        return 0.0;
    }
    let two_pi = 2.0 * std::f64::consts::PI;
    preds.iter().zip(y).map(|(g, &t)| 0.5 * (two_pi * g.var).ln() + (t - g.mean).powi(2) / (2.0 * g.var)).sum::<f64>()
        / preds.len() as f64
}

fn mean_squared_residual(m: &DesignMatrix, y: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    (0..m.n_rows).map(|i| (f(m.row(i)) - y[i]).powi(2)).sum::<f64>() / m.n_rows.max(1) as f64
}

/// Trains one family with no size or degeneracy checks; used directly by
/// cross-validation where training folds may be small.
fn fit_unchecked(family: ModelFamily, m: &DesignMatrix, cfg: &ModelConfig, seed: u64) -> TrainedModel {
    FIT_COUNT.fetch_add(1, Ordering::Relaxed);
    let (n, d) = (m.n_rows, m.n_cols);
    match &m.target {
        Target::Classes { labels, n_classes } => {
            let c = *n_classes;
            let mut seen = vec![false; c];
            labels.iter().for_each(|&l| seen[l] = true);
            if seen.iter().any(|s| !s) {
                tracing::debug!(target = %m.target_name, "training rows miss some classes; floored");
            }
            let params = match family {
                ModelFamily::Linear => ModelParams::Logistic(Logistic::fit(
                    &m.data,
                    n,
                    d,
                    labels,
                    c,
                    cfg.logistic_learning_rate,
                    cfg.logistic_epochs,
                    cfg.logistic_l2,
                )),
                ModelFamily::Tree => {
                    ModelParams::Tree(Tree::fit(&m.data, n, d, TreeTarget::Classes { labels, n_classes: c }, cfg.tree))
                }
                ModelFamily::Mlp => ModelParams::Mlp(Mlp::fit_classifier(&m.data, n, d, labels, c, cfg.mlp, seed)),
                ModelFamily::Ensemble => {
                    let members = [ModelFamily::Linear, ModelFamily::Tree, ModelFamily::Mlp]
                        .map(|f| fit_unchecked(f, m, cfg, seed))
                        .to_vec();
                    ModelParams::Ensemble(members)
                }
            };
            TrainedModel {
                family,
                task: Task::Classification { n_classes: c },
                n_inputs: d,
                params,
                residual_variance: None,
                seen_classes: seen,
            }
        }
        Target::Real(y) => {
            let (params, rv) = match family {
                ModelFamily::Linear => {
                    let lr = LinearRegression::fit(&m.data, n, d, y, cfg.linear_ridge);
                    let rv = mean_squared_residual(m, y, |x| lr.predict(x));
                    (ModelParams::Linear(lr), rv)
                }
                ModelFamily::Tree => {
                    let mut t = Tree::fit(&m.data, n, d, TreeTarget::Real(y), cfg.tree);
                    let rv = mean_squared_residual(m, y, |x| match t.leaf(x) {
                        Leaf::Gaussian { mean, .. } => *mean,
                        Leaf::Probs(_) => unreachable!(),
                    })
                    .max(EPSILON);
                    t.floor_variance(rv);
                    (ModelParams::Tree(t), rv)
                }
                ModelFamily::Mlp => {
                    let net = Mlp::fit_regressor(&m.data, n, d, y, cfg.mlp, seed);
                    let rv = mean_squared_residual(m, y, |x| net.regress(x));
                    (ModelParams::Mlp(net), rv)
                }
                ModelFamily::Ensemble => {
                    let members = [ModelFamily::Linear, ModelFamily::Tree, ModelFamily::Mlp]
                        .map(|f| fit_unchecked(f, m, cfg, seed))
                        .to_vec();
                    let model = TrainedModel {
                        family,
                        task: Task::Regression,
                        n_inputs: d,
                        params: ModelParams::Ensemble(members),
                        residual_variance: None,
                        seen_classes: Vec::new(),
                    };
                    let rv =
                        mean_squared_residual(m, y, |x| model.predict_unchecked(x).gaussian().map_or(0.0, |g| g.mean));
                    (model.params, rv)
                }
            };
            TrainedModel {
                family,
                task: Task::Regression,
                n_inputs: d,
                params,
                residual_variance: Some(rv.max(EPSILON)),
                seen_classes: Vec::new(),
            }
        }
    }
}

fn check_target(m: &DesignMatrix) -> Result<()> {
    if let Target::Classes { labels, .. } = &m.target {
        let first = labels.first().copied();
        if labels.iter().all(|&l| Some(l) == first) {
            return Err(Error::DegenerateTarget(m.target_name.clone()));
        }
    }
    Ok(())
}

/// Trains `family` on every row of `m`. Same inputs and seed give
/// bit-identical parameters.
pub fn fit_model(family: ModelFamily, m: &DesignMatrix, cfg: &ModelConfig, seed: u64) -> Result<TrainedModel> {
    if m.n_rows < MIN_FIT_ROWS {
        return Err(Error::InsufficientData { required: MIN_FIT_ROWS, available: m.n_rows });
    }
    check_target(m)?;
    Ok(fit_unchecked(family, m, cfg, seed))
}

/// Seeded shuffle of `0..n` cut into `k` contiguous folds whose sizes
/// differ by at most one.
pub fn fold_partition(n: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let len = base + usize::from(f < extra);
        out.push(perm[start..start + len].to_vec());
        start += len;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mean_nll: f64,
    pub fold_nlls: Vec<f64>,
}

/// k-fold cross-validated NLL. Every family given the same seed sees the
/// same folds.
pub fn cross_validate(family: ModelFamily, m: &DesignMatrix, cfg: &ModelConfig, seed: u64) -> Result<CvScore> {
    let k = cfg.cv_folds;
    if m.n_rows < k {
        return Err(Error::InsufficientData { required: k, available: m.n_rows });
    }
    let folds = fold_partition(m.n_rows, k, seed);
    let fold_nlls = folds
        .iter()
        .map(|test| {
            let mut in_test = vec![false; m.n_rows];
            test.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<usize> = (0..m.n_rows).filter(|&i| !in_test[i]).collect();
            let model = fit_unchecked(family, &m.subset(&train), cfg, seed);
            model.nll(&m.subset(test))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_nll = fold_nlls.iter().sum::<f64>() / k as f64;
    Ok(CvScore { mean_nll, fold_nlls })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub target_name: String,
    pub task: Task,
    pub best_family: ModelFamily,
    pub best_nll: f64,
    pub cv_nll_per_family: BTreeMap<ModelFamily, f64>,
    pub fold_nlls: Vec<f64>,
    pub final_model: TrainedModel,
}

/// Cross-validates all four families on shared folds, picks the lowest mean
/// NLL (ties resolved in [`ModelFamily`] order) and refits it on all rows.
pub fn select_best_model(table: &FeatureTable, target: &str, cfg: &ModelConfig, seed: u64) -> Result<ModelReport> {
    let m = build_design_matrix(table, target)?;
    select_best_on_matrix(&m, cfg, seed)
}

pub fn select_best_on_matrix(m: &DesignMatrix, cfg: &ModelConfig, seed: u64) -> Result<ModelReport> {
    check_target(m)?;
    if m.n_rows < MIN_FIT_ROWS {
        return Err(Error::InsufficientData { required: MIN_FIT_ROWS, available: m.n_rows });
    }
    let scores: Vec<CvScore> =
        ModelFamily::ALL.par_iter().map(|&f| cross_validate(f, m, cfg, seed)).collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.mean_nll.total_cmp(&scores[best].mean_nll).is_lt() {
            best = i;
        }
    }
    let best_family = ModelFamily::ALL[best];
    let final_model = fit_model(best_family, m, cfg, seed)?;
    Ok(ModelReport {
        target_name: m.target_name.clone(),
        task: m.task(),
        best_family,
        best_nll: scores[best].mean_nll,
        cv_nll_per_family: ModelFamily::ALL.iter().zip(&scores).map(|(&f, s)| (f, s.mean_nll)).collect(),
        fold_nlls: scores[best].fold_nlls.clone(),
        final_model,
    })
}
