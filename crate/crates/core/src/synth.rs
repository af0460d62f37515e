//! Synthetic county panels with a known linear ground truth.
//!
//! Covariates are drawn per county and year, a latent cleanliness level
//! `q = Σ β_k z_k + ε` is formed from the standardized covariates, and all
//! five pollutants are affine and decreasing in `q`. The composite score of
//! such data is an exact min-max rescaling of `q`, so a fitted regression
//! should recover `β / (q_max − q_min)` up to the noise.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::fixtures::TABLE1;
use crate::model::{Dataset, FeatureSpec, DEFAULT_FEATURES};
use crate::numerics::{dot, eigen_symmetric, Mat};
use crate::stats::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub noise_sd: f64,
    /// Latent weight per standardized covariate, in [`DEFAULT_FEATURES`] order.
    pub beta: [f64; 4],
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 7, noise_sd: 0.01, beta: [0.30, -0.20, -0.25, 0.35], first_year: 2016, last_year: 2021 }
    }
}

/// What the generator knows and a fit should find.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub features: Vec<String>,
    pub beta_standardized: Vec<f64>,
    /// Mean and sample standard deviation of each covariate over all rows.
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
    pub latent_min: f64,
    pub latent_max: f64,
    /// Change in composite score per raw covariate unit.
    pub raw_slopes: Vec<f64>,
    pub noise_sd: f64,
    pub seed: u64,
    pub rows: usize,
}

impl GroundTruth {
    /// Expected standardized weights for a model whose scaling used `stds`.
    pub fn standardized_for(&self, stds: &[f64]) -> Vec<f64> {
        self.raw_slopes.iter().zip(stds).map(|(s, sd)| s * sd).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBundle {
    pub afv_csv: String,
    pub socio_csv: String,
    pub aqi_csv: String,
    pub truth: GroundTruth,
}

impl SynthBundle {
    /// Writes `afv.csv`, `socio.csv`, `aqi.csv`, and `truth.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("afv.csv"), &self.afv_csv)?;
        fs::write(dir.join("socio.csv"), &self.socio_csv)?;
        fs::write(dir.join("aqi.csv"), &self.aqi_csv)?;
        let mut truth = serde_json::to_string_pretty(&self.truth).expect("truth serializes");
        truth.push('\n');
        fs::write(dir.join("truth.json"), truth)
    }
}

// pollutant level = BASE - SLOPE * q, per pollutant (so2, o3, no2, pm25, co)
const POLLUTANT_BASE: [f64; 5] = [2.0, 30.0, 15.0, 9.0, 0.4];
const POLLUTANT_SLOPE: [f64; 5] = [0.3, 4.0, 2.5, 1.2, 0.05];

struct Row {
    county: &'static str,
    year: i32,
    // bev, phev, nev, hev at mid-year and year end
    h1: [u64; 4],
    h2: [u64; 4],
    road_mileage: f64,
    vmt: f64,
    population: u64,
    population_change: f64,
    education: String,
    unemployment: String,
    poverty: [String; 3],
    income: f64,
}

fn pct(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// Value the census parser will produce for a percentage cell.
fn parsed_pct(s: &str) -> f64 {
    s.parse::<f64>().expect("formatted number") / 100.0
}

fn split_types(total: u64, year_index: f64) -> [u64; 4] {
    let bev = (total as f64 * (0.25 + 0.02 * year_index)).floor() as u64;
    let phev = (total as f64 * 0.15).floor() as u64;
    let nev = (total as f64 * 0.05).floor() as u64;
    [bev, phev, nev, total - bev - phev - nev]
}

pub fn generate(cfg: &SynthConfig) -> SynthBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut rows = Vec::new();

    let mut counties: Vec<_> = TABLE1.iter().collect();
    counties.sort_by_key(|t| t.county);
    for t in counties {
        let pop_growth: f64 = rng.gen_range(-0.005..0.01);
        let afv_pace: f64 = rng.gen_range(0.8..1.2);
        let poverty_base: f64 = rng.gen_range(0.05..0.16);
        let income_base: f64 = rng.gen_range(55_000.0..125_000.0);
        let education_base: f64 = rng.gen_range(0.20..0.60);
        let unemployment_base: f64 = rng.gen_range(0.03..0.07);
        let road_mileage: f64 = rng.gen_range(500.0..3000.0);
        let vmt_per_mile: f64 = rng.gen_range(8_000.0..12_000.0);
        let mut prev_pop = (t.population as f64 * (1.0 + pop_growth * f64::from(cfg.first_year - 1 - 2021))).round();
        for year in cfg.first_year..=cfg.last_year {
            let yi = f64::from(year - cfg.first_year);
            let population = (t.population as f64 * (1.0 + pop_growth * f64::from(year - 2021))).round();
            let factor = (0.45 + 0.11 * yi * afv_pace).max(0.05);
            let total = (t.total_afv as f64 * factor).round() as u64;
            let total_h1 = (total as f64 * 0.93).round() as u64;

            let poverty = (poverty_base + 0.004 * std_normal.sample(&mut rng)).clamp(0.02, 0.30);
            let half_width: f64 = rng.gen_range(0.008..0.015);
            let pandemic = if year == 2020 { 0.03 } else { 0.0 };
            let unemployment = (unemployment_base + pandemic + 0.003 * std_normal.sample(&mut rng)).clamp(0.01, 0.2);
            let income = (income_base * (1.0 + 0.025 * yi) + 1_500.0 * std_normal.sample(&mut rng)).round();

            rows.push(Row {
                county: t.county,
                year,
                h1: split_types(total_h1, yi),
                h2: split_types(total, yi),
                road_mileage: (road_mileage * 10.0).round() / 10.0,
                vmt: (road_mileage * vmt_per_mile).round(),
                population: population as u64,
                population_change: population - prev_pop,
                education: pct(education_base + 0.002 * yi),
                unemployment: pct(unemployment),
                poverty: [pct(poverty), pct(poverty - half_width), pct(poverty + half_width)],
                income,
            });
            prev_pop = population;
        }
    }

    // covariates exactly as the parsers will read them back
    let x: Vec<[f64; 4]> = rows
        .iter()
        .map(|r| [r.h2.iter().sum::<u64>() as f64, r.population as f64, parsed_pct(&r.poverty[0]), r.income])
        .collect();
    let n = x.len() as f64;
    let mut means = [0.0; 4];
    let mut stds = [0.0; 4];
    for k in 0..4 {
        means[k] = x.iter().map(|r| r[k]).sum::<f64>() / n;
        stds[k] = (x.iter().map(|r| (r[k] - means[k]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    }
    let noise = Normal::new(0.0, cfg.noise_sd).expect("noise_sd is non-negative and finite");
    let latent: Vec<f64> = x
        .iter()
        .map(|r| (0..4).map(|k| cfg.beta[k] * (r[k] - means[k]) / stds[k]).sum::<f64>() + noise.sample(&mut rng))
        .collect();
    let latent_min = latent.iter().copied().fold(f64::INFINITY, f64::min);
    let latent_max = latent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = latent_max - latent_min;

    let mut afv_csv = String::from("county,date,fuel_type,count,road_mileage,vmt\n");
    let mut socio_csv = String::from(
        "county,year,population,population_change,education_pct%,unemployment_rate%,poverty_pct%,poverty_lower%,poverty_upper%,median_household_income\n",
    );
    let mut aqi_csv = String::from("county,year,monitor_id,so2,o3,no2,pm25,co\n");
    let labels = ["BEV", "PHEV", "NEV", "HEV"];
    for (r, q) in rows.iter().zip(&latent) {
        for (date, counts) in [(format!("{}-06-30", r.year), r.h1), (format!("{}-12-31", r.year), r.h2)] {
            for (label, c) in labels.iter().zip(counts) {
                writeln!(afv_csv, "{} County,{date},{label},{c},{},{}", r.county, r.road_mileage, r.vmt).unwrap();
            }
        }
        writeln!(
            socio_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            r.county,
            r.year,
            r.population,
            r.population_change,
            r.education,
            r.unemployment,
            r.poverty[0],
            r.poverty[1],
            r.poverty[2],
            r.income
        )
        .unwrap();
        // two monitors straddling the county level
        let level: Vec<f64> = (0..5).map(|j| POLLUTANT_BASE[j] - POLLUTANT_SLOPE[j] * q).collect();
        for (m, sign) in [(1, 1.0), (2, -1.0)] {
            let v: Vec<String> =
                (0..5).map(|j| format!("{}", level[j] + sign * 0.05 * POLLUTANT_SLOPE[j])).collect();
            let id = format!("{}-{m}", r.county.to_uppercase().replace(' ', "_"));
            writeln!(aqi_csv, "{},{},{id},{}", r.county, r.year, v.join(",")).unwrap();
        }
    }

    let truth = GroundTruth {
        features: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
        beta_standardized: cfg.beta.to_vec(),
        feature_means: means.to_vec(),
        feature_stds: stds.to_vec(),
        latent_min,
        latent_max,
        raw_slopes: (0..4).map(|k| cfg.beta[k] / (stds[k] * range)).collect(),
        noise_sd: cfg.noise_sd,
        seed: cfg.seed,
        rows: rows.len(),
    };
    SynthBundle { afv_csv, socio_csv, aqi_csv, truth }
}

/// Smallest eigenvalue allowed in the feature correlation matrix of a
/// [`random_regression`] instance.
pub const MIN_CORRELATION_EIGENVALUE: f64 = 0.05;

/// A random linear regression with `rows` rows and `features` columns on
/// mixed scales, or `None` when the draw is ill-conditioned: fewer than
/// `features + 3` rows, or a feature correlation matrix with an eigenvalue
/// below [`MIN_CORRELATION_EIGENVALUE`].
pub fn random_regression(seed: u64, rows: usize, features: usize) -> Option<(Dataset, FeatureSpec)> {
    if rows < features + 3 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let scales: Vec<f64> = (0..features).map(|_| 10f64.powf(rng.gen_range(-3.0..5.0))).collect();
    let offsets: Vec<f64> = scales.iter().map(|s| s * rng.gen_range(-5.0..5.0)).collect();
    let beta: Vec<f64> = (0..features).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let bias: f64 = rng.gen_range(-1.0..1.0);
    let mut x = Vec::with_capacity(rows);
    let mut y = Vec::with_capacity(rows);
    for _ in 0..rows {
        let z: Vec<f64> = (0..features).map(|_| std_normal.sample(&mut rng)).collect();
        y.push(bias + dot(&z, &beta) + 0.1 * std_normal.sample(&mut rng));
        x.push(z.iter().zip(&scales).zip(&offsets).map(|((z, s), o)| z * s + o).collect::<Vec<f64>>());
    }
    if features > 0 {
        let cols: Vec<Vec<f64>> = (0..features).map(|k| x.iter().map(|r: &Vec<f64>| r[k]).collect()).collect();
        let mut flat = vec![1.0; features * features];
        for i in 0..features {
            for j in 0..i {
                let r = pearson(&cols[i], &cols[j]).ok()?;
                flat[i * features + j] = r;
                flat[j * features + i] = r;
            }
        }
        let eig = eigen_symmetric(&Mat::from_row_major(features, features, flat).ok()?).ok()?;
        if eig.values.last().copied().unwrap_or(0.0) < MIN_CORRELATION_EIGENVALUE {
            return None;
        }
    }
    let names: Vec<String> = (0..features).map(|k| format!("x{k}")).collect();
    let spec = FeatureSpec::new(&names, true).ok()?;
    let data = Dataset::new(names, x, y).ok()?;
    Some((data, spec))
}
