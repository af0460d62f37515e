//! What-if predictions: perturb a county's covariates and compare the
//! predicted score against the unmodified baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{covariate_domain, County, Domain, Panel};
use crate::model::{predict, ModelError, RegressionModel};

/// Attached to every result. Predictions describe association in the
/// training data, not the effect of an intervention.
pub const DISCLAIMER: &str = "Predictions reflect associations learned from historical county data, not causal effects. \
Air quality is not just affected by transportation: industry, energy generation, and weather also matter.";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("no panel row for {county} {year}")]
    UnknownCounty { county: County, year: i32 },
    #[error("covariate `{0}` is not a model feature")]
    UnknownCovariate(String),
    #[error("{covariate} = {value} violates its domain ({reason})")]
    BoundViolation { covariate: String, value: f64, reason: String },
    #[error("empty sweep grid")]
    EmptyGrid,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl ScenarioError {
    pub fn code(&self) -> &'static str {
        match self {
            ScenarioError::UnknownCounty { .. } => "UnknownCounty",
            ScenarioError::UnknownCovariate(_) => "UnknownCovariate",
            ScenarioError::BoundViolation { .. } => "BoundViolation",
            ScenarioError::EmptyGrid => "EmptyGrid",
            ScenarioError::Model(e) => e.code(),
        }
    }
}

/// New value for one covariate, in raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Override {
    Absolute(f64),
    Multiplier(f64),
}

impl Override {
    pub fn apply(self, baseline: f64) -> f64 {
        match self {
            Override::Absolute(v) => v,
            Override::Multiplier(m) => baseline * m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRequest {
    pub county: County,
    pub base_year: i32,
    #[serde(default)]
    pub overrides: BTreeMap<String, Override>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub county: County,
    pub base_year: i32,
    pub baseline_covariates: BTreeMap<String, f64>,
    pub scenario_covariates: BTreeMap<String, f64>,
    pub baseline_aqi: f64,
    pub scenario_aqi: f64,
    pub delta: f64,
    pub extrapolation_flag: bool,
    /// Covariates lying strictly outside the training range.
    pub extrapolated: Vec<String>,
    pub disclaimer: String,
}

fn check_domain(name: &str, value: f64) -> Result<(), ScenarioError> {
    let bad = |reason: &str| ScenarioError::BoundViolation { covariate: name.to_string(), value, reason: reason.into() };
    match covariate_domain(name) {
        _ if !value.is_finite() => Err(bad("not finite")),
        Some(Domain::NonNegative) if value < 0.0 => Err(bad("must be >= 0")),
        Some(Domain::Fraction) if !(0.0..=1.0).contains(&value) => Err(bad("must lie in [0, 1]")),
        _ => Ok(()),
    }
}

/// Baseline and overridden predictions for one county-year.
pub fn run_scenario(
    request: &ScenarioRequest,
    panel: &Panel,
    model: &RegressionModel,
) -> Result<ScenarioResult, ScenarioError> {
    let row = panel.get(&request.county, request.base_year).ok_or_else(|| ScenarioError::UnknownCounty {
        county: request.county.clone(),
        year: request.base_year,
    })?;
    let names = &model.feature_spec.names;
    for key in request.overrides.keys() {
        if !names.contains(key) {
            return Err(ScenarioError::UnknownCovariate(key.clone()));
        }
    }

    let mut baseline = BTreeMap::new();
    for n in names {
        let v = row.covariate(n).ok_or_else(|| ModelError::MissingCovariate(n.clone()))?;
        baseline.insert(n.clone(), v);
    }
    let mut scenario = baseline.clone();
    for (name, ov) in &request.overrides {
        let v = ov.apply(baseline[name]);
        check_domain(name, v)?;
        scenario.insert(name.clone(), v);
    }

    let baseline_aqi = predict(model, &baseline)?;
    let scenario_aqi = predict(model, &scenario)?;
    let extrapolated: Vec<String> = names
        .iter()
        .filter(|n| {
            let (lo, hi) = model.training_range(n).expect("feature has a range");
            let v = scenario[*n];
            v < lo || v > hi
        })
        .cloned()
        .collect();

    Ok(ScenarioResult {
        county: request.county.clone(),
        base_year: request.base_year,
        baseline_covariates: baseline,
        scenario_covariates: scenario,
        baseline_aqi,
        scenario_aqi,
        delta: scenario_aqi - baseline_aqi,
        extrapolation_flag: !extrapolated.is_empty(),
        extrapolated,
        disclaimer: DISCLAIMER.to_string(),
    })
}

/// One scenario per grid value, with `covariate` set absolutely to that
/// value on top of the template's other overrides.
pub fn sweep(
    template: &ScenarioRequest,
    covariate: &str,
    grid: &[f64],
    panel: &Panel,
    model: &RegressionModel,
) -> Result<Vec<ScenarioResult>, ScenarioError> {
    if grid.is_empty() {
        return Err(ScenarioError::EmptyGrid);
    }
    if !model.feature_spec.names.iter().any(|n| n == covariate) {
        return Err(ScenarioError::UnknownCovariate(covariate.to_string()));
    }
    grid.iter()
        .map(|&v| {
            let mut req = template.clone();
            req.overrides.insert(covariate.to_string(), Override::Absolute(v));
            run_scenario(&req, panel, model)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::PanelRow;
    use crate::model::{fit_closed_form, Dataset, FeatureSpec};

    fn row(county: &str, year: i32, afv: u64, income: f64, score: f64) -> PanelRow {
        PanelRow {
            county: County::new(county),
            year,
            total_afv: afv,
            bev_count: afv,
            phev_count: 0,
            nev_count: 0,
            hev_count: 0,
            pev_count: afv,
            non_pev_count: 0,
            road_mileage: None,
            vmt: None,
            population: 1000,
            population_change: 0.0,
            education_pct: 0.3,
            unemployment_rate: 0.05,
            poverty_pct: 0.1,
            poverty_lower: 0.09,
            poverty_upper: 0.11,
            median_household_income: income,
            pollutants: [1.0; 5],
            aqi_score: Some(score),
        }
    }

    fn fixture() -> (Panel, RegressionModel) {
        let rows = vec![
            row("Atlantic", 2016, 100, 50_000.0, 0.40),
            row("Atlantic", 2017, 200, 52_000.0, 0.47),
            row("Camden", 2016, 300, 61_000.0, 0.55),
            row("Camden", 2017, 350, 60_000.0, 0.57),
            row("Mercer", 2016, 500, 70_000.0, 0.70),
            row("Mercer", 2017, 650, 71_000.0, 0.78),
        ];
        let panel = Panel::new(rows).unwrap();
        let spec = FeatureSpec::new(&["total_afv", "median_household_income"], true).unwrap();
        let data = Dataset::from_rows(panel.rows(), &spec).unwrap();
        let model = fit_closed_form(&data, &spec).unwrap();
        (panel, model)
    }

    fn request(overrides: &[(&str, Override)]) -> ScenarioRequest {
        ScenarioRequest {
            county: County::new("Camden"),
            base_year: 2017,
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            model_id: None,
        }
    }

    #[test]
    fn empty_overrides_have_zero_delta() {
        let (panel, model) = fixture();
        let r = run_scenario(&request(&[]), &panel, &model).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.baseline_aqi, predict(&model, panel.get(&County::new("Camden"), 2017).unwrap()).unwrap());
        assert!(!r.extrapolation_flag);
        assert_eq!(r.disclaimer, DISCLAIMER);
    }

    #[test]
    fn doubling_afv_follows_weight_sign() {
        let (panel, model) = fixture();
        assert!(model.feature_weight("total_afv").unwrap() > 0.0);
        let r = run_scenario(&request(&[("total_afv", Override::Multiplier(2.0))]), &panel, &model).unwrap();
        assert!(r.delta > 0.0);
        assert_eq!(r.scenario_covariates["total_afv"], 700.0);
    }

    #[test]
    fn tenfold_afv_is_flagged() {
        let (panel, model) = fixture();
        let r = run_scenario(&request(&[("total_afv", Override::Multiplier(10.0))]), &panel, &model).unwrap();
        assert!(r.extrapolation_flag);
        assert_eq!(r.extrapolated, vec!["total_afv".to_string()]);
        // the training maximum itself is inside the range
        let r = run_scenario(&request(&[("total_afv", Override::Absolute(650.0))]), &panel, &model).unwrap();
        assert!(!r.extrapolation_flag);
    }

    #[test]
    fn error_paths() {
        let (panel, model) = fixture();
        let mut req = request(&[]);
        req.county = County::new("Salem");
        assert!(matches!(run_scenario(&req, &panel, &model), Err(ScenarioError::UnknownCounty { .. })));
        let req = request(&[("population", Override::Absolute(1.0))]);
        assert!(matches!(run_scenario(&req, &panel, &model), Err(ScenarioError::UnknownCovariate(_))));
        let req = request(&[("total_afv", Override::Absolute(-5.0))]);
        assert!(matches!(run_scenario(&req, &panel, &model), Err(ScenarioError::BoundViolation { .. })));
        assert!(matches!(sweep(&request(&[]), "total_afv", &[], &panel, &model), Err(ScenarioError::EmptyGrid)));
    }

    #[test]
    fn sweep_is_affine() {
        let (panel, model) = fixture();
        let grid: Vec<f64> = (0..=20).map(|i| 35.0 * i as f64).collect();
        let out = sweep(&request(&[]), "total_afv", &grid, &panel, &model).unwrap();
        assert_eq!(out.len(), 21);
        assert!(out.windows(2).all(|w| w[1].scenario_aqi > w[0].scenario_aqi));
        for w in out.windows(3) {
            let second = w[2].scenario_aqi - 2.0 * w[1].scenario_aqi + w[0].scenario_aqi;
            assert!(second.abs() < 1e-9);
        }
        let single = sweep(&request(&[]), "total_afv", &[350.0], &panel, &model).unwrap();
        assert_eq!(single[0].delta, 0.0);
    }

    #[test]
    fn request_json_shape() {
        let req: ScenarioRequest = serde_json::from_str(
            r#"{"county":"camden county","base_year":2017,"overrides":{"total_afv":{"multiplier":2.0},"median_household_income":{"absolute":65000}}}"#,
        )
        .unwrap();
        assert_eq!(req.county.as_str(), "Camden");
        assert_eq!(req.overrides["total_afv"], Override::Multiplier(2.0));
        assert!(serde_json::from_str::<ScenarioRequest>(r#"{"county":"A","base_year":1,"bogus":1}"#).is_err());
    }
}
