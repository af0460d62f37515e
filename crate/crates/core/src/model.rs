//! Linear AQI model: covariates in, calibrated air-quality score out.
//!
//! Training follows a plain full-batch gradient-descent loop on the mean
//! squared error, with a closed-form (normal equations) fit kept alongside
//! as an independent check on the iterative result. Both fits work in
//! standardized feature coordinates so a single learning rate suits
//! covariates as different as income in dollars and poverty as a fraction.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{County, PanelRow};
use crate::numerics::{dot, solve_spd, Mat, NumericsError};

pub const MODEL_SCHEMA: &str = "aqilens.regression/1";

/// Covariates used when none are configured.
pub const DEFAULT_FEATURES: [&str; 4] = ["total_afv", "population", "poverty_pct", "median_household_income"];

/// Column the model learns to predict.
pub const TARGET: &str = "aqi_score";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("missing covariate `{0}`")]
    MissingCovariate(String),
    #[error("training diverged at iteration {iteration} (loss is not finite); lower the learning rate")]
    Diverged { iteration: usize },
    #[error("design matrix is rank deficient: {0}")]
    NotPositiveDefinite(NumericsError),
    #[error("feature `{0}` has zero variance in the training rows")]
    ZeroVariance(String),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Numerics(NumericsError),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::MissingCovariate(_) => "MissingCovariate",
            ModelError::Diverged { .. } => "Diverged",
            ModelError::NotPositiveDefinite(_) => "NotPositiveDefinite",
            ModelError::ZeroVariance(_) => "ZeroVariance",
            ModelError::TooFewRows { .. } => "TooFewRows",
            ModelError::InvalidConfig(_) => "InvalidConfig",
            ModelError::InvalidModel(_) => "InvalidModel",
            ModelError::Numerics(_) => "Numerics",
            ModelError::Json(_) => "Json",
        }
    }
}

impl From<NumericsError> for ModelError {
    fn from(e: NumericsError) -> Self {
        match e {
            NumericsError::NotPositiveDefinite { .. } => ModelError::NotPositiveDefinite(e),
            other => ModelError::Numerics(other),
        }
    }
}

/// Anything that can hand out covariate values by name.
pub trait CovariateSource {
    fn covariate(&self, name: &str) -> Option<f64>;
}

impl CovariateSource for PanelRow {
    fn covariate(&self, name: &str) -> Option<f64> {
        PanelRow::covariate(self, name)
    }
}

impl CovariateSource for BTreeMap<String, f64> {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl CovariateSource for HashMap<String, f64> {
    fn covariate(&self, name: &str) -> Option<f64> {
        self.get(name).copied()
    }
}

impl<T: CovariateSource + ?Sized> CovariateSource for &T {
    fn covariate(&self, name: &str) -> Option<f64> {
        (**self).covariate(name)
    }
}

/// Ordered covariates and whether an intercept is fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub names: Vec<String>,
    pub include_bias: bool,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec { names: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(), include_bias: true }
    }
}

impl FeatureSpec {
    pub fn new<S: AsRef<str>>(names: &[S], include_bias: bool) -> Result<Self, ModelError> {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().trim().to_string()).collect();
        if names.is_empty() && !include_bias {
            return Err(ModelError::InvalidConfig("no features and no bias".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(ModelError::InvalidConfig("empty feature name".into()));
            }
            if names[..i].contains(n) {
                return Err(ModelError::InvalidConfig(format!("feature `{n}` listed twice")));
            }
        }
        Ok(FeatureSpec { names, include_bias })
    }

    /// Number of weights, bias included.
    pub fn width(&self) -> usize {
        self.names.len() + usize::from(self.include_bias)
    }
}

/// Per-feature statistics captured from the training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    /// Observed training range, used to flag extrapolation.
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub max_iterations: usize,
    /// Training stops once the loss changes by less than this between
    /// consecutive iterations.
    pub convergence_threshold: f64,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { learning_rate: 0.01, max_iterations: 10_000, convergence_threshold: 1e-9, seed: 42 }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.max_iterations < 1 {
            return Err(ModelError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.convergence_threshold > 0.0) {
            return Err(ModelError::InvalidConfig("convergence_threshold must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowId {
    pub county: County,
    pub year: i32,
}

/// Raw feature matrix and target for a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<RowId>,
    pub features: Vec<String>,
    /// One entry per row, in `features` order.
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<String>, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self, ModelError> {
        if x.len() != y.len() || x.iter().any(|r| r.len() != features.len()) {
            return Err(ModelError::InvalidConfig("feature rows and targets disagree in shape".into()));
        }
        let ids = (0..y.len()).map(|i| RowId { county: County::new(&format!("row{i}")), year: 0 }).collect();
        Ok(Dataset { ids, features, x, y })
    }

    /// Pulls `spec` covariates and the score target out of panel rows.
    pub fn from_rows<R: std::borrow::Borrow<PanelRow>>(rows: &[R], spec: &FeatureSpec) -> Result<Self, ModelError> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut x = Vec::with_capacity(rows.len());
        let mut y = Vec::with_capacity(rows.len());
        for r in rows {
            let r = r.borrow();
            ids.push(RowId { county: r.county.clone(), year: r.year });
            x.push(extract(r, &spec.names)?);
            y.push(r.aqi_score.ok_or_else(|| ModelError::MissingCovariate(TARGET.into()))?);
        }
        Ok(Dataset { ids, features: spec.names.clone(), x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

fn extract<S: CovariateSource + ?Sized>(src: &S, names: &[String]) -> Result<Vec<f64>, ModelError> {
    names
        .iter()
        .map(|n| match src.covariate(n) {
            Some(v) if v.is_finite() => Ok(v),
            _ => Err(ModelError::MissingCovariate(n.clone())),
        })
        .collect()
}

fn scaling_for(data: &Dataset) -> Result<FeatureScaling, ModelError> {
    let n = data.len();
    let p = data.features.len();
    let mut s = FeatureScaling { means: vec![0.0; p], stds: vec![0.0; p], mins: vec![0.0; p], maxs: vec![0.0; p] };
    for k in 0..p {
        let col: Vec<f64> = data.x.iter().map(|r| r[k]).collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        if !(var > 0.0) || col.iter().all(|v| *v == col[0]) {
            return Err(ModelError::ZeroVariance(data.features[k].clone()));
        }
        s.means[k] = mean;
        s.stds[k] = var.sqrt();
        s.mins[k] = col.iter().copied().fold(f64::INFINITY, f64::min);
        s.maxs[k] = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(s)
}

/// One design-matrix row: leading 1 for the bias (if any), then z-scores.
fn design_row(raw: &[f64], scaling: &FeatureScaling, include_bias: bool) -> Vec<f64> {
    let mut row = Vec::with_capacity(raw.len() + 1);
    if include_bias {
        row.push(1.0);
    }
    row.extend(raw.iter().enumerate().map(|(k, v)| (v - scaling.means[k]) / scaling.stds[k]));
    row
}

/// Standardized design matrix for `data`.
pub fn design_matrix(data: &Dataset, scaling: &FeatureScaling, include_bias: bool) -> Result<Mat, ModelError> {
    let width = data.features.len() + usize::from(include_bias);
    let flat: Vec<f64> = data.x.iter().flat_map(|r| design_row(r, scaling, include_bias)).collect();
    Ok(Mat::from_row_major(data.len(), width, flat)?)
}

/// Mean squared error of `design · weights` against `target`.
pub fn mse_loss(design: &Mat, target: &[f64], weights: &[f64]) -> f64 {
    let n = target.len() as f64;
    (0..design.rows())
        .map(|i| {
            let r = dot(design.row(i), weights) - target[i];
            r * r
        })
        .sum::<f64>()
        / n
}

/// Gradient of [`mse_loss`]: `(2/n) · designᵀ · (design·weights − target)`.
pub fn mse_gradient(design: &Mat, target: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = target.len() as f64;
    let residual: Vec<f64> = (0..design.rows()).map(|i| dot(design.row(i), weights) - target[i]).collect();
    design
        .tr_mul_vec(&residual)
        .expect("residual length matches design rows")
        .into_iter()
        .map(|g| 2.0 * g / n)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMethod {
    GradientDescent,
    ClosedForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistorySummary {
    pub iterations: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// How the rows were divided into train and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitSpec {
    Random { train_fraction: f64, seed: u64 },
    Temporal { last_train_year: i32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub schema_version: String,
    pub method: FitMethod,
    pub feature_spec: FeatureSpec,
    pub scaling: FeatureScaling,
    /// Bias first (when enabled), then one weight per standardized feature.
    pub weights: Vec<f64>,
    pub config: TrainingConfig,
    pub converged_at: Option<usize>,
    pub history: HistorySummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    /// Per-iteration training loss; not persisted.
    #[serde(skip)]
    pub training_history: Vec<f64>,
}

impl RegressionModel {
    pub fn bias(&self) -> f64 {
        if self.feature_spec.include_bias {
            self.weights[0]
        } else {
            0.0
        }
    }

    /// Weights on the standardized features, without the bias.
    pub fn feature_weights(&self) -> &[f64] {
        &self.weights[usize::from(self.feature_spec.include_bias)..]
    }

    pub fn feature_weight(&self, name: &str) -> Option<f64> {
        let k = self.feature_spec.names.iter().position(|n| n == name)?;
        Some(self.feature_weights()[k])
    }

    /// Coefficients in raw covariate units: `(intercept, slopes)`.
    pub fn raw_coefficients(&self) -> (f64, Vec<f64>) {
        let w = self.feature_weights();
        let slopes: Vec<f64> = w.iter().zip(&self.scaling.stds).map(|(w, s)| w / s).collect();
        let shift: f64 = slopes.iter().zip(&self.scaling.means).map(|(b, m)| b * m).sum();
        (self.bias() - shift, slopes)
    }

    /// Training range `(min, max)` of a feature.
    pub fn training_range(&self, name: &str) -> Option<(f64, f64)> {
        let k = self.feature_spec.names.iter().position(|n| n == name)?;
        Some((self.scaling.mins[k], self.scaling.maxs[k]))
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.schema_version != MODEL_SCHEMA {
            return Err(ModelError::InvalidModel(format!("unsupported schema `{}`", self.schema_version)));
        }
        let p = self.feature_spec.names.len();
        if self.weights.len() != self.feature_spec.width() {
            return Err(ModelError::InvalidModel(format!(
                "{} weights for {} features (bias: {})",
                self.weights.len(),
                p,
                self.feature_spec.include_bias
            )));
        }
        let s = &self.scaling;
        if s.means.len() != p || s.stds.len() != p || s.mins.len() != p || s.maxs.len() != p {
            return Err(ModelError::InvalidModel("scaling statistics do not match the features".into()));
        }
        if s.stds.iter().any(|v| !(*v > 0.0)) {
            return Err(ModelError::InvalidModel("feature std must be positive".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::InvalidModel("non-finite weight".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let m: RegressionModel = serde_json::from_str(text)?;
        m.check()?;
        Ok(m)
    }
}

fn prepare(train: &Dataset, spec: &FeatureSpec) -> Result<(FeatureScaling, Mat), ModelError> {
    if train.features != spec.names {
        for n in &spec.names {
            if !train.features.contains(n) {
                return Err(ModelError::MissingCovariate(n.clone()));
            }
        }
        return Err(ModelError::InvalidConfig("dataset columns are not in feature-spec order".into()));
    }
    let needed = if spec.names.is_empty() { 1 } else { 2 };
    if train.len() < needed {
        return Err(ModelError::TooFewRows { needed, got: train.len() });
    }
    let scaling = scaling_for(train)?;
    let design = design_matrix(train, &scaling, spec.include_bias)?;
    Ok((scaling, design))
}

/// Full-batch gradient descent on the mean squared error.
///
/// Starting from zero weights, each iteration predicts with the current
/// weights, measures the loss, and steps against the gradient
/// `(2/n)·Xᵀ(Xw − y)`. The loop runs at most `max_iterations` times and
/// stops early once the loss changes by less than `convergence_threshold`
/// between consecutive iterations.
pub fn fit_gd(train: &Dataset, spec: &FeatureSpec, cfg: &TrainingConfig) -> Result<RegressionModel, ModelError> {
    cfg.validate()?;
    let (scaling, design) = prepare(train, spec)?;
    let n = train.len() as f64;
    let mut weights = vec![0.0; design.cols()];
    let mut history = Vec::new();
    let mut converged_at = None;

    for iteration in 1..=cfg.max_iterations {
        let residual: Vec<f64> =
            (0..design.rows()).map(|i| dot(design.row(i), &weights) - train.y[i]).collect();
        let loss = residual.iter().map(|r| r * r).sum::<f64>() / n;
        if !loss.is_finite() {
            return Err(ModelError::Diverged { iteration });
        }
        if let Some(prev) = history.last() {
            let change: f64 = prev - loss;
            // A loss that grows by more than the threshold is not convergence;
            // it is left to blow up into a Diverged error or hit the cap.
            if change.abs() < cfg.convergence_threshold {
                history.push(loss);
                converged_at = Some(iteration);
                break;
            }
        }
        history.push(loss);
        let grad = design.tr_mul_vec(&residual)?;
        for (w, g) in weights.iter_mut().zip(grad) {
            *w -= cfg.learning_rate * (2.0 * g / n);
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(ModelError::Diverged { iteration });
        }
    }

    let summary = HistorySummary {
        iterations: history.len(),
        initial_loss: history[0],
        final_loss: *history.last().expect("at least one iteration"),
    };
    Ok(RegressionModel {
        schema_version: MODEL_SCHEMA.to_string(),
        method: FitMethod::GradientDescent,
        feature_spec: spec.clone(),
        scaling,
        weights,
        config: *cfg,
        converged_at,
        history: summary,
        split: None,
        training_history: history,
    })
}

/// Normal-equations fit `(XᵀX) w = Xᵀy` on the same standardized design.
pub fn fit_closed_form(train: &Dataset, spec: &FeatureSpec) -> Result<RegressionModel, ModelError> {
    let (scaling, design) = prepare(train, spec)?;
    let xt = design.transpose();
    let gram = crate::numerics::matmul(&xt, &design)?;
    let rhs = design.tr_mul_vec(&train.y)?;
    let weights = solve_spd(&gram, &rhs)?;
    let loss = mse_loss(&design, &train.y, &weights);
    Ok(RegressionModel {
        schema_version: MODEL_SCHEMA.to_string(),
        method: FitMethod::ClosedForm,
        feature_spec: spec.clone(),
        scaling,
        weights,
        config: TrainingConfig::default(),
        converged_at: None,
        history: HistorySummary { iterations: 0, initial_loss: loss, final_loss: loss },
        split: None,
        training_history: Vec::new(),
    })
}

/// Predicted score for one row of covariates.
pub fn predict<S: CovariateSource + ?Sized>(model: &RegressionModel, covariates: &S) -> Result<f64, ModelError> {
    let raw = extract(covariates, &model.feature_spec.names)?;
    let row = design_row(&raw, &model.scaling, model.feature_spec.include_bias);
    Ok(dot(&row, &model.weights))
}

/// Predictions for every row of a dataset.
pub fn predict_dataset(model: &RegressionModel, data: &Dataset) -> Result<Vec<f64>, ModelError> {
    if data.features != model.feature_spec.names {
        return Err(ModelError::InvalidConfig("dataset columns differ from the model features".into()));
    }
    Ok(data
        .x
        .iter()
        .map(|r| dot(&design_row(r, &model.scaling, model.feature_spec.include_bias), &model.weights))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub county: County,
    pub year: i32,
    pub actual: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` when the actual values are constant and R² is undefined.
    pub r2: Option<f64>,
    pub mse: f64,
    pub pairs: Vec<EvalPair>,
}

impl EvalReport {
    /// Metrics over already-paired values. `pairs` must be non-empty.
    pub fn from_pairs(pairs: Vec<EvalPair>) -> Result<Self, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::TooFewRows { needed: 1, got: 0 });
        }
        let n = pairs.len() as f64;
        let ss_res: f64 = pairs.iter().map(|p| (p.actual - p.predicted).powi(2)).sum();
        let mean = pairs.iter().map(|p| p.actual).sum::<f64>() / n;
        let ss_tot: f64 = pairs.iter().map(|p| (p.actual - mean).powi(2)).sum();
        let r2 = if ss_tot > 0.0 { Some(1.0 - ss_res / ss_tot) } else { None };
        Ok(EvalReport { r2, mse: ss_res / n, pairs })
    }

    /// `county,year,actual,predicted` with round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("county,year,actual,predicted\n");
        for p in &self.pairs {
            s.push_str(&format!("{},{},{},{}\n", p.county, p.year, p.actual, p.predicted));
        }
        s
    }
}

/// Scores `model` on `test`. R² uses the test-set mean.
pub fn evaluate(model: &RegressionModel, test: &Dataset) -> Result<EvalReport, ModelError> {
    let predicted = predict_dataset(model, test)?;
    let pairs = test
        .ids
        .iter()
        .zip(test.y.iter().zip(predicted))
        .map(|(id, (actual, predicted))| EvalPair { county: id.county.clone(), year: id.year, actual: *actual, predicted })
        .collect();
    EvalReport::from_pairs(pairs)
}

/// Seeded shuffle, then the first `round(fraction · n)` rows train.
/// Both sides always keep at least one row.
pub fn split_train_test<T: Clone>(rows: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>), ModelError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ModelError::InvalidConfig(format!("train fraction {fraction} outside (0, 1)")));
    }
    let n = rows.len();
    if n < 2 {
        return Err(ModelError::TooFewRows { needed: 2, got: n });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let train = idx[..n_train].iter().map(|&i| rows[i].clone()).collect();
    let test = idx[n_train..].iter().map(|&i| rows[i].clone()).collect();
    Ok((train, test))
}

/// Rows up to and including `last_train_year` train; later rows test.
pub fn split_temporal(rows: &[PanelRow], last_train_year: i32) -> Result<(Vec<PanelRow>, Vec<PanelRow>), ModelError> {
    let (train, test): (Vec<PanelRow>, Vec<PanelRow>) = rows.iter().cloned().partition(|r| r.year <= last_train_year);
    if train.is_empty() || test.is_empty() {
        return Err(ModelError::TooFewRows { needed: 1, got: train.len().min(test.len()) });
    }
    Ok((train, test))
}

/// Applies a split spec to panel rows.
pub fn split_rows(rows: &[PanelRow], split: &SplitSpec) -> Result<(Vec<PanelRow>, Vec<PanelRow>), ModelError> {
    match *split {
        SplitSpec::Random { train_fraction, seed } => split_train_test(rows, train_fraction, seed),
        SplitSpec::Temporal { last_train_year } => split_temporal(rows, last_train_year),
    }
}
