//! The batch pipeline as one pure function: join, score, split, fit,
//! evaluate, and summarize.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aqi_pca::{explained_variance, fit_aqi_model, score_panel, AqiError, AqiPcaModel};
use crate::ingest::{build_panel, AfvRecord, DroppedRow, IngestError, Panel, PollutantRecord, SocioRecord};
use crate::model::{
    evaluate, fit_closed_form, fit_gd, split_rows, Dataset, EvalReport, FeatureSpec, FitMethod, ModelError,
    RegressionModel, SplitSpec, TrainingConfig,
};
use crate::report::{rank_table, RankingRow, ReportError};
use crate::scenario::ScenarioError;
use crate::stats::{correlation_matrix, growth_by_type, CorrelationMatrix, GrowthReport, StatsError};

/// Variables of the correlation report, in output order.
pub const CORRELATION_VARIABLES: [&str; 9] = [
    "total_afv",
    "population",
    "education_pct",
    "unemployment_rate",
    "poverty_pct",
    "poverty_lower",
    "poverty_upper",
    "median_household_income",
    "aqi_score",
];

/// Any library error, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Aqi(#[from] AqiError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl PipelineError {
    /// `module.Variant`, e.g. `ingest.MissingColumn`.
    pub fn code(&self) -> String {
        let (module, code) = match self {
            PipelineError::Ingest(e) => ("ingest", e.code()),
            PipelineError::Aqi(e) => ("aqi_pca", e.code()),
            PipelineError::Stats(e) => ("stats", e.code()),
            PipelineError::Model(e) => ("model", e.code()),
            PipelineError::Scenario(e) => ("scenario", e.code()),
            PipelineError::Report(e) => ("report", e.code()),
        };
        format!("{module}.{code}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub features: FeatureSpec,
    pub training: TrainingConfig,
    pub split: SplitSpec,
    pub method: FitMethod,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let training = TrainingConfig::default();
        PipelineConfig {
            features: FeatureSpec::default(),
            training,
            split: SplitSpec::Random { train_fraction: 0.8, seed: training.seed },
            method: FitMethod::GradientDescent,
        }
    }
}

/// Headline numbers written next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub test_r2: Option<f64>,
    pub test_mse: f64,
    pub train_r2: Option<f64>,
    pub train_mse: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub split: SplitSpec,
    pub method: FitMethod,
    pub iterations: usize,
    pub converged_at: Option<usize>,
    pub explained_variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    /// Joined panel with scores filled in.
    pub panel: Panel,
    pub dropped: Vec<DroppedRow>,
    pub clamped_scores: usize,
    pub aqi_model: AqiPcaModel,
    pub model: RegressionModel,
    pub test: EvalReport,
    pub train: EvalReport,
    pub metrics: Metrics,
    pub correlations: CorrelationMatrix,
    pub growth: Option<GrowthReport>,
    /// Rankings for the latest year in the panel.
    pub rankings: Vec<RankingRow>,
}

/// Scores every row of a joined panel with a freshly fitted score model.
pub fn score(panel: &mut Panel) -> Result<(AqiPcaModel, usize), PipelineError> {
    let aqi_model = fit_aqi_model(panel)?;
    let clamped = score_panel(&aqi_model, panel)?;
    Ok((aqi_model, clamped))
}

/// Splits a scored panel, fits, and evaluates on both halves.
pub fn train(panel: &Panel, cfg: &PipelineConfig) -> Result<(RegressionModel, EvalReport, EvalReport), PipelineError> {
    let (train_rows, test_rows) = split_rows(panel.rows(), &cfg.split)?;
    let train_set = Dataset::from_rows(&train_rows, &cfg.features)?;
    let test_set = Dataset::from_rows(&test_rows, &cfg.features)?;
    let mut model = match cfg.method {
        FitMethod::GradientDescent => fit_gd(&train_set, &cfg.features, &cfg.training)?,
        FitMethod::ClosedForm => {
            let mut m = fit_closed_form(&train_set, &cfg.features)?;
            m.config = cfg.training;
            m
        }
    };
    model.split = Some(cfg.split);
    let test = evaluate(&model, &test_set)?;
    let train = evaluate(&model, &train_set)?;
    Ok((model, test, train))
}

pub fn run(
    afv: &[AfvRecord],
    socio: &[SocioRecord],
    aqi: &[PollutantRecord],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput, PipelineError> {
    let built = build_panel(afv, socio, aqi)?;
    let mut panel = built.panel;
    let (aqi_model, clamped_scores) = score(&mut panel)?;
    let (model, test, train) = train(&panel, cfg)?;
    let metrics = Metrics {
        test_r2: test.r2,
        test_mse: test.mse,
        train_r2: train.r2,
        train_mse: train.mse,
        n_train: train.pairs.len(),
        n_test: test.pairs.len(),
        split: cfg.split,
        method: model.method,
        iterations: model.history.iterations,
        converged_at: model.converged_at,
        explained_variance: explained_variance(&aqi_model)?,
    };
    let correlations = correlation_matrix(&panel, &CORRELATION_VARIABLES)?;
    let growth = match growth_by_type(afv) {
        Ok(g) => Some(g),
        Err(StatsError::InsufficientPeriods(_)) => None,
        Err(e) => return Err(e.into()),
    };
    let latest = *panel.years().last().expect("panel is non-empty");
    let rankings = rank_table(&panel.year_slice(latest))?;
    Ok(PipelineOutput {
        panel,
        dropped: built.dropped,
        clamped_scores,
        aqi_model,
        model,
        test,
        train,
        metrics,
        correlations,
        growth,
        rankings,
    })
}
