//! Composite air-quality score from five pollutant series.
//!
//! Pollutants are z-scored, the correlation-scale covariance is
//! eigendecomposed, and rows are projected on the first principal
//! component. The projection is oriented so that **higher scores mean
//! cleaner air** (the opposite of the EPA AQI convention) and min-max
//! calibrated to `[0, 1]` on the training rows.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Panel, Pollutant};
use crate::numerics::{dot, eigen_symmetric, EigenResult, Mat, NumericsError};
use crate::stats::pearson;

pub const AQI_MODEL_SCHEMA: &str = "aqilens.aqi_pca/1";

/// Reported scores are clamped into this range; scores outside `[0, 1]`
/// only arise for data unlike the training rows.
pub const SCORE_CLAMP: (f64, f64) = (-0.25, 1.25);

#[derive(Debug, Error)]
pub enum AqiError {
    #[error("pollutant {0} is constant across rows")]
    ConstantPollutant(Pollutant),
    #[error("need at least 2 rows to fit, got {0}")]
    TooFewRows(usize),
    #[error("model is not fitted")]
    UnfittedModel,
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
}

impl AqiError {
    pub fn code(&self) -> &'static str {
        match self {
            AqiError::ConstantPollutant(_) => "ConstantPollutant",
            AqiError::TooFewRows(_) => "TooFewRows",
            AqiError::UnfittedModel => "UnfittedModel",
            AqiError::InvalidModel(_) => "InvalidModel",
            AqiError::Numerics(_) => "Numerics",
            AqiError::Json(_) => "Json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AqiPcaModel {
    pub schema_version: String,
    pub pollutants: Vec<Pollutant>,
    pub pollutant_means: Vec<f64>,
    pub pollutant_stds: Vec<f64>,
    pub components: EigenResult,
    /// `+1` or `-1`, applied to the PC1 projection.
    pub orientation: i8,
    pub score_min: f64,
    pub score_max: f64,
    pub training_rows: usize,
}

/// A calibrated score, with a flag when it had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AqiScore {
    pub score: f64,
    pub clamped: bool,
}

fn standardize(values: &[f64; 5], means: &[f64], stds: &[f64]) -> [f64; 5] {
    let mut z = [0.0; 5];
    for k in 0..5 {
        z[k] = (values[k] - means[k]) / stds[k];
    }
    z
}

/// Fits the score model on every row of the panel.
pub fn fit_aqi_model(panel: &Panel) -> Result<AqiPcaModel, AqiError> {
    let rows: Vec<[f64; 5]> = panel.rows().iter().map(|r| r.pollutants).collect();
    fit_aqi_rows(&rows)
}

pub fn fit_aqi_rows(rows: &[[f64; 5]]) -> Result<AqiPcaModel, AqiError> {
    let n = rows.len();
    if n < 2 {
        return Err(AqiError::TooFewRows(n));
    }
    let mut means = vec![0.0; 5];
    let mut stds = vec![0.0; 5];
    for k in 0..5 {
        let m = rows.iter().map(|r| r[k]).sum::<f64>() / n as f64;
        let var = rows.iter().map(|r| (r[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        if !(var > 0.0) || rows.iter().all(|r| r[k] == rows[0][k]) {
            return Err(AqiError::ConstantPollutant(Pollutant::ALL[k]));
        }
        means[k] = m;
        stds[k] = var.sqrt();
    }

    let z: Vec<[f64; 5]> = rows.iter().map(|r| standardize(r, &means, &stds)).collect();
    let mut cov = Mat::zeros(5, 5);
    for i in 0..5 {
        for j in i..5 {
            let c = z.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n - 1) as f64;
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    let components = eigen_symmetric(&cov)?;
    let pc1 = components.vector(0);

    let raw: Vec<f64> = z.iter().map(|r| dot(r, &pc1)).collect();
    let level: Vec<f64> = z.iter().map(|r| r.iter().sum::<f64>() / 5.0).collect();
    // A constant mean level leaves the direction unconstrained; keep +1.
    let orientation = match pearson(&raw, &level) {
        Ok(r) if r > 0.0 => -1,
        _ => 1,
    };

    let mut model = AqiPcaModel {
        schema_version: AQI_MODEL_SCHEMA.to_string(),
        pollutants: Pollutant::ALL.to_vec(),
        pollutant_means: means,
        pollutant_stds: stds,
        components,
        orientation,
        score_min: 0.0,
        score_max: 0.0,
        training_rows: n,
    };
    let oriented: Vec<f64> = rows.iter().map(|r| model.oriented_projection(r)).collect();
    model.score_min = oriented.iter().copied().fold(f64::INFINITY, f64::min);
    model.score_max = oriented.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(model.score_min < model.score_max) {
        return Err(AqiError::InvalidModel("training scores have zero range".into()));
    }
    Ok(model)
}

impl AqiPcaModel {
    /// Oriented PC1 projection of raw pollutant values, before calibration.
    pub fn oriented_projection(&self, pollutants: &[f64; 5]) -> f64 {
        let z = standardize(pollutants, &self.pollutant_means, &self.pollutant_stds);
        let pc1 = self.components.vector(0);
        f64::from(self.orientation) * dot(&z, &pc1)
    }

    pub fn check(&self) -> Result<(), AqiError> {
        if self.components.values.is_empty() {
            return Err(AqiError::UnfittedModel);
        }
        if self.schema_version != AQI_MODEL_SCHEMA {
            return Err(AqiError::InvalidModel(format!("unsupported schema `{}`", self.schema_version)));
        }
        if self.pollutant_means.len() != 5
            || self.pollutant_stds.len() != 5
            || self.components.values.len() != 5
            || self.components.vectors.rows() != 5
            || self.components.vectors.cols() != 5
        {
            return Err(AqiError::InvalidModel("expected five pollutants".into()));
        }
        if self.pollutant_stds.iter().any(|s| !(*s > 0.0)) {
            return Err(AqiError::InvalidModel("pollutant std must be positive".into()));
        }
        if self.orientation != 1 && self.orientation != -1 {
            return Err(AqiError::InvalidModel("orientation must be +1 or -1".into()));
        }
        if !(self.score_min < self.score_max) {
            return Err(AqiError::InvalidModel("score_min must be below score_max".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, AqiError> {
        let model: AqiPcaModel = serde_json::from_str(text)?;
        model.check()?;
        Ok(model)
    }
}

/// Calibrated score in `[0, 1]` for training-like data; clamped into
/// [`SCORE_CLAMP`] otherwise.
pub fn aqi_score(model: &AqiPcaModel, pollutants: &[f64; 5]) -> Result<AqiScore, AqiError> {
    model.check()?;
    let s = (model.oriented_projection(pollutants) - model.score_min) / (model.score_max - model.score_min);
    let clamped_value = s.clamp(SCORE_CLAMP.0, SCORE_CLAMP.1);
    Ok(AqiScore { score: clamped_value, clamped: clamped_value != s })
}

/// Fraction of total variance carried by each component, descending.
pub fn explained_variance(model: &AqiPcaModel) -> Result<Vec<f64>, AqiError> {
    if model.components.values.is_empty() {
        return Err(AqiError::UnfittedModel);
    }
    let clipped: Vec<f64> = model.components.values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    Ok(clipped.iter().map(|v| v / total).collect())
}

/// Fills `aqi_score` on every panel row. Returns how many scores were clamped.
pub fn score_panel(model: &AqiPcaModel, panel: &mut Panel) -> Result<usize, AqiError> {
    let mut clamped = 0;
    for row in panel.rows_mut() {
        let s = aqi_score(model, &row.pollutants)?;
        clamped += usize::from(s.clamped);
        row.aqi_score = Some(s.score);
    }
    Ok(clamped)
}
