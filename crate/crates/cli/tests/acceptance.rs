//! Acceptance suite. Each test prints one `PASS` or `FAIL` line to stderr
//! (visible without `--nocapture`) and then asserts the same verdict.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use aqilens_core::aqi_pca::{aqi_score, explained_variance, fit_aqi_rows};
use aqilens_core::fixtures::{growth_fixture, table2_pairs, TABLE1, TABLE2_TEXT};
use aqilens_core::ingest::{read_panel_file, County, VehicleType};
use aqilens_core::model::{
    design_matrix, fit_closed_form, fit_gd, mse_gradient, mse_loss, EvalReport, TrainingConfig,
};
use aqilens_core::numerics::{matmul, Mat};
use aqilens_core::pipeline::CORRELATION_VARIABLES;
use aqilens_core::report::render_table2;
use aqilens_core::stats::{correlation_matrix, pearson, rank_agreement, rank_desc, CountyRanking, RankEntry, RankOrder};
use aqilens_core::synth::{random_regression, GroundTruth};
use aqilens_service::{router, AppState, RouterOptions, Snapshot, SnapshotPaths};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

const RANK_AGREEMENT_TARGET: f64 = 0.92;
const RANK_AGREEMENT_TOL: f64 = 0.02;
const TABLE2_MSE_TARGET: f64 = 0.00352;
const TABLE2_MSE_TOL: f64 = 0.0005;
const FIXTURE_BUDGET: Duration = Duration::from_secs(1);

const REGRESSION_INSTANCES: usize = 100;
const WEIGHT_TOL: f64 = 1e-6;
const GRADIENT_REL_TOL: f64 = 1e-6;
const GRADIENT_STEP: f64 = 1e-5;
const REGRESSION_BUDGET: Duration = Duration::from_secs(30);

const MIN_TEST_R2: f64 = 0.95;
const BETA_TOL: f64 = 0.05;
const PIPELINE_BUDGET: Duration = Duration::from_secs(10);

const ORTHONORMAL_TOL: f64 = 1e-10;
const RECONSTRUCTION_TOL: f64 = 1e-8;
const RATIO_SUM_TOL: f64 = 1e-12;
const STATS_TOL: f64 = 1e-12;

fn verdict(name: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    // libtest captures print!, but not writes to the raw stderr handle
    let _ = writeln!(std::io::stderr(), "{tag} {name}: {detail}");
    assert!(ok, "{name}: {detail}");
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic").join(name)
}

fn aqilens(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_aqilens")).args(args).output().expect("binary runs");
    assert!(out.status.success(), "aqilens {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn printed(rank_of: impl Fn(&aqilens_core::fixtures::Table1Row) -> usize) -> CountyRanking {
    let mut entries: Vec<RankEntry> = TABLE1
        .iter()
        .map(|t| RankEntry { county: County::new(t.county), value: rank_of(t) as f64, rank: rank_of(t) })
        .collect();
    entries.sort_by_key(|e| e.rank);
    CountyRanking { order: RankOrder::Ascending, entries }
}

#[test]
fn table1_ranks() {
    let start = Instant::now();
    let totals: Vec<(County, f64)> = TABLE1.iter().map(|t| (County::new(t.county), t.total_afv as f64)).collect();
    let ranking = rank_desc(&totals);
    let matches = TABLE1.iter().filter(|t| ranking.rank_of(&County::new(t.county)) == Some(t.afv_rank)).count();
    let rho = rank_agreement(&printed(|t| t.se_rank), &printed(|t| t.afv_rank)).unwrap();
    let elapsed = start.elapsed();
    let ok = matches == TABLE1.len() && (rho - RANK_AGREEMENT_TARGET).abs() <= RANK_AGREEMENT_TOL && elapsed < FIXTURE_BUDGET;
    verdict(
        "table1_ranks",
        ok,
        &format!(
            "AFV rank matches {matches}/{}, rank agreement {rho:.6} (target {RANK_AGREEMENT_TARGET} ± {RANK_AGREEMENT_TOL}), {elapsed:?}",
            TABLE1.len()
        ),
    );
}

#[test]
fn table2_fixture() {
    let start = Instant::now();
    let pairs = table2_pairs();
    let report = EvalReport::from_pairs(pairs.clone()).unwrap();
    let layout = render_table2(&pairs) == TABLE2_TEXT;
    let elapsed = start.elapsed();
    let ok = (report.mse - TABLE2_MSE_TARGET).abs() <= TABLE2_MSE_TOL && layout && elapsed < FIXTURE_BUDGET;
    verdict(
        "table2_fixture",
        ok,
        &format!("MSE {:.7} (target {TABLE2_MSE_TARGET} ± {TABLE2_MSE_TOL}), layout identical {layout}, {elapsed:?}", report.mse),
    );
}

#[test]
fn gradient_descent_correctness() {
    let start = Instant::now();
    let cfg = TrainingConfig { learning_rate: 0.1, max_iterations: 100_000, convergence_threshold: 1e-30, seed: 0 };
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let (mut checked, mut worst_weight, mut worst_grad) = (0, 0.0f64, 0.0f64);
    while checked < REGRESSION_INSTANCES {
        let rows = rng.gen_range(5..=200);
        let features = rng.gen_range(1..=6);
        let Some((data, spec)) = random_regression(rng.gen(), rows, features) else { continue };
        let gd = fit_gd(&data, &spec, &cfg).unwrap();
        let cf = fit_closed_form(&data, &spec).unwrap();
        for (a, b) in gd.weights.iter().zip(&cf.weights) {
            worst_weight = worst_weight.max((a - b).abs());
        }

        let design = design_matrix(&data, &cf.scaling, true).unwrap();
        let w: Vec<f64> = (0..design.cols()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let g = mse_gradient(&design, &data.y, &w);
        for k in 0..w.len() {
            let (mut up, mut down) = (w.clone(), w.clone());
            up[k] += GRADIENT_STEP;
            down[k] -= GRADIENT_STEP;
            let fd = (mse_loss(&design, &data.y, &up) - mse_loss(&design, &data.y, &down)) / (2.0 * GRADIENT_STEP);
            worst_grad = worst_grad.max((fd - g[k]).abs() / g[k].abs().max(1.0));
        }
        checked += 1;
    }
    let elapsed = start.elapsed();
    let ok = worst_weight < WEIGHT_TOL && worst_grad < GRADIENT_REL_TOL && elapsed < REGRESSION_BUDGET;
    verdict(
        "gradient_descent_correctness",
        ok,
        &format!("{checked} instances, max |w_gd - w_cf| {worst_weight:.2e}, max gradient rel err {worst_grad:.2e}, {elapsed:?}"),
    );
}

#[test]
fn end_to_end_recovery() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    aqilens(&[
        "ingest",
        "--afv",
        s(&data("afv.csv")),
        "--socio",
        s(&data("socio.csv")),
        "--aqi",
        s(&data("aqi.csv")),
        "--out",
        s(out),
    ]);
    for cmd in ["score", "train", "evaluate"] {
        aqilens(&[cmd, "--out", s(out)]);
    }
    let elapsed = start.elapsed();

    let metrics: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    let r2 = metrics["test_r2"].as_f64().unwrap();
    let model = aqilens_core::model::RegressionModel::from_json(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    let truth: GroundTruth = serde_json::from_str(&fs::read_to_string(data("truth.json")).unwrap()).unwrap();
    assert_eq!(model.feature_spec.names, truth.features);
    let expected = truth.standardized_for(&model.scaling.stds);
    let worst = model.feature_weights().iter().zip(&expected).map(|(w, e)| (w - e).abs()).fold(0.0, f64::max);
    let ok = r2 >= MIN_TEST_R2 && worst <= BETA_TOL && elapsed < PIPELINE_BUDGET;
    verdict(
        "end_to_end_recovery",
        ok,
        &format!("test R² {r2:.5} (min {MIN_TEST_R2}), max |β̂ - β| {worst:.4} (tol {BETA_TOL}), {elapsed:?}"),
    );
}

fn correlation_of(rows: &[[f64; 5]]) -> Mat {
    let n = rows.len() as f64;
    let cols: Vec<Vec<f64>> = (0..5).map(|k| rows.iter().map(|r| r[k]).collect()).collect();
    let z: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let m = c.iter().sum::<f64>() / n;
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            c.iter().map(|v| (v - m) / sd).collect()
        })
        .collect();
    let mut out = Mat::zeros(5, 5);
    for i in 0..5 {
        for j in 0..5 {
            out[(i, j)] = z[i].iter().zip(&z[j]).map(|(a, b)| a * b).sum::<f64>() / (n - 1.0);
        }
    }
    out
}

#[test]
fn pca_suite() {
    let panel = read_panel_file(&data_panel()).unwrap();
    let rows: Vec<[f64; 5]> = panel.rows().iter().map(|r| r.pollutants).collect();
    let model = fit_aqi_rows(&rows).unwrap();
    let v = &model.components.vectors;
    let gram = matmul(&v.transpose(), v).unwrap();
    let orthonormal = gram.max_abs_diff(&Mat::identity(5));
    let corr = correlation_of(&rows);
    let trace_gap = (model.components.values.iter().sum::<f64>() - corr.trace()).abs();
    let reconstruction = model.components.reconstruct().max_abs_diff(&corr);
    let ratio_sum = (explained_variance(&model).unwrap().iter().sum::<f64>() - 1.0).abs();

    let rank_one: Vec<[f64; 5]> = (0..20)
        .map(|i| {
            let t = i as f64;
            [1.0 + t, 2.0 + 3.0 * t, 0.5 * t, 10.0 + 2.0 * t, 4.0 * t + 7.0]
        })
        .collect();
    let ev1 = explained_variance(&fit_aqi_rows(&rank_one).unwrap()).unwrap();
    let rank_one_gap = ev1.iter().zip([1.0, 0.0, 0.0, 0.0, 0.0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let scores: Vec<f64> = rows.iter().map(|r| aqi_score(&model, r).unwrap().score).collect();
    let (lo, hi) = scores.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(*s), b.max(*s)));
    let level: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>()).collect();
    let orientation = pearson(&scores, &level).unwrap();

    let ok = orthonormal < ORTHONORMAL_TOL
        && trace_gap < ORTHONORMAL_TOL
        && reconstruction < RECONSTRUCTION_TOL
        && ratio_sum < RATIO_SUM_TOL
        && rank_one_gap < RECONSTRUCTION_TOL
        && lo == 0.0
        && hi == 1.0
        && orientation <= 0.0;
    verdict(
        "pca_suite",
        ok,
        &format!(
            "|VᵀV - I| {orthonormal:.1e}, trace gap {trace_gap:.1e}, reconstruction {reconstruction:.1e}, \
             ratio sum gap {ratio_sum:.1e}, rank-1 gap {rank_one_gap:.1e}, score range [{lo}, {hi}], \
             orientation r {orientation:.3}"
        ),
    );
}

/// Scored panel built once from the bundled inputs and shared by the suites.
fn data_panel() -> PathBuf {
    static PANEL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    PANEL.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        aqilens(&[
            "ingest",
            "--afv",
            s(&data("afv.csv")),
            "--socio",
            s(&data("socio.csv")),
            "--aqi",
            s(&data("aqi.csv")),
            "--out",
            s(&dir),
        ]);
        aqilens(&["score", "--out", s(&dir)]);
        (tmp, dir.join("panel.csv"))
    })
    .1
    .clone()
}

#[test]
fn stats_suite() {
    let panel = read_panel_file(&data_panel()).unwrap();
    let x: Vec<f64> = panel.rows().iter().map(|r| r.total_afv as f64).collect();
    let y: Vec<f64> = panel.rows().iter().map(|r| r.aqi_score.unwrap()).collect();
    let r = pearson(&x, &y).unwrap();
    let affine: Vec<f64> = x.iter().map(|v| 3.5 * v - 120.0).collect();
    let flipped: Vec<f64> = x.iter().map(|v| -0.25 * v + 9.0).collect();
    let affine_gap = (pearson(&affine, &y).unwrap() - r).abs();
    let symmetry_gap = (pearson(&y, &x).unwrap() - r).abs();
    let flip_gap = (pearson(&flipped, &y).unwrap() + r).abs();

    let m = correlation_matrix(&panel, &CORRELATION_VARIABLES).unwrap();
    let n = CORRELATION_VARIABLES.len();
    let mut exact_symmetry = true;
    let mut unit_diagonal = true;
    for i in 0..n {
        unit_diagonal &= m.get(i, i) == 1.0;
        for j in 0..n {
            exact_symmetry &= m.get(i, j).to_bits() == m.get(j, i).to_bits();
        }
    }

    let latest = panel.latest_per_county();
    let base: Vec<(County, f64)> = latest.iter().map(|r| (r.county.clone(), r.median_household_income)).collect();
    let warped: Vec<(County, f64)> = base.iter().map(|(c, v)| (c.clone(), v.ln() * 7.0 + v.sqrt())).collect();
    let (a, b) = (rank_desc(&base), rank_desc(&warped));
    let rank_invariant = a.entries.iter().zip(&b.entries).all(|(p, q)| p.county == q.county && p.rank == q.rank);

    let growth = aqilens_core::stats::growth_by_type(&growth_fixture()).unwrap();
    let expected = [(VehicleType::Bev, 15.0), (VehicleType::Phev, 5.8), (VehicleType::Nev, 3.8), (VehicleType::Hev, 1.8)];
    let growth_gap = expected.iter().map(|(k, p)| (growth.growth(*k).unwrap() - p).abs()).fold(0.0, f64::max);

    let ok = affine_gap < STATS_TOL
        && symmetry_gap == 0.0
        && flip_gap < STATS_TOL
        && exact_symmetry
        && unit_diagonal
        && rank_invariant
        && growth_gap < STATS_TOL;
    verdict(
        "stats_suite",
        ok,
        &format!(
            "affine gap {affine_gap:.1e}, symmetry gap {symmetry_gap:.1e}, sign-flip gap {flip_gap:.1e}, \
             exact symmetry {exact_symmetry}, unit diagonal {unit_diagonal}, monotone rank invariance {rank_invariant}, \
             growth gap {growth_gap:.1e}"
        ),
    );
}

fn run_dir(out: &Path) {
    aqilens(&[
        "run",
        "--afv",
        s(&data("afv.csv")),
        "--socio",
        s(&data("socio.csv")),
        "--aqi",
        s(&data("aqi.csv")),
        "--out",
        s(out),
    ]);
}

#[tokio::test]
async fn determinism() {
    // Same config, output directory included, so run_config.txt must match too.
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("run");
    let snapshot_files = |dir: &Path| -> BTreeMap<String, Vec<u8>> {
        fs::read_dir(dir)
            .unwrap()
            .map(|e| e.unwrap())
            .map(|e| (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap()))
            .filter(|(n, _)| n != "run.log")
            .collect()
    };
    run_dir(&a);
    let first = snapshot_files(&a);
    run_dir(&a);
    let second = snapshot_files(&a);
    let names: Vec<&String> = first.keys().collect();
    let differing: Vec<&String> = names.iter().copied().filter(|n| first.get(*n) != second.get(*n)).collect();
    let same_set = first.len() == second.len();

    let cli = aqilens(&["predict", "--out", s(&a), "--county", "Mercer", "--year", "2021", "--set", "total_afv=*1.5"]);
    let cli_body = String::from_utf8(cli.stdout).unwrap();

    let snapshot = Snapshot::load(&SnapshotPaths::in_dir(&a)).unwrap();
    let app = router(AppState::ready(snapshot), &RouterOptions::default());
    let body = r#"{"county":"Mercer","base_year":2021,"overrides":{"total_afv":{"multiplier":1.5}}}"#;
    let req = Request::builder()
        .method("POST")
        .uri("/api/scenario")
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let api_body = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    let agree = status == StatusCode::OK && cli_body.trim_end() == api_body;

    let ok = differing.is_empty() && same_set && names.len() >= 10 && agree;
    verdict(
        "determinism",
        ok,
        &format!("{} artifacts compared, {} differ {differing:?}, CLI predict == POST /api/scenario {agree}", names.len(), differing.len()),
    );
}
