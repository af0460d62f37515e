use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aqilens_core::fixtures::TABLE1;
use aqilens_core::ingest::{write_panel_file, County, Panel, PanelRow};
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aqilens"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic").join(name).display().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--learning-rate", "fast"]).status.code(), Some(2));
    assert_eq!(run(&["predict", "--county", "Atlantic"]).status.code(), Some(2));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let text = String::from_utf8(help.stdout).unwrap();
    for verb in ["ingest", "correlate", "rank", "score", "train", "evaluate", "predict", "serve", "report", "run"] {
        assert!(text.contains(verb), "{verb} missing from help");
    }
}

#[test]
fn domain_errors_exit_one_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("afv.csv");
    fs::write(&bad, "county,date,count\nA,2020-01-01,3\n").unwrap();
    let out = run(&["ingest", "--afv", s(&bad), "--socio", &data("socio.csv"), "--aqi", &data("aqi.csv"), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "ingest.MissingColumn");

    let out = run(&["evaluate", "--out", s(&dir.path().join("missing"))]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["code"], "ingest.Io");
}

#[test]
fn rank_table1_reproduces_printed_afv_ranks() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["rank", "--table1", "--out", s(dir.path())]).status.success());
    let text = fs::read_to_string(dir.path().join("rankings.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("county,population,total_afv,afv_rank,se_rank"));
    for (line, t) in lines.zip(TABLE1) {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], t.county);
        assert_eq!(cells[3], t.afv_rank.to_string());
        assert_eq!(cells[4], t.se_rank.to_string());
    }
}

fn smoke_panel(dir: &Path) -> PathBuf {
    // aqi_score = 2 · total_afv
    let rows = (1..=8)
        .map(|i| PanelRow {
            county: County::new(&format!("County {i}")),
            year: 2020,
            total_afv: i,
            bev_count: i,
            phev_count: 0,
            nev_count: 0,
            hev_count: 0,
            pev_count: i,
            non_pev_count: 0,
            road_mileage: None,
            vmt: None,
            population: 1000,
            population_change: 0.0,
            education_pct: 0.3,
            unemployment_rate: 0.05,
            poverty_pct: 0.1,
            poverty_lower: 0.05,
            poverty_upper: 0.15,
            median_household_income: 50_000.0,
            pollutants: [1.0; 5],
            aqi_score: Some(2.0 * i as f64),
        })
        .collect();
    let path = dir.join("panel.csv");
    write_panel_file(&Panel::new(rows).unwrap(), &path).unwrap();
    path
}

#[test]
fn train_then_predict_on_exact_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    smoke_panel(out);
    let trained = run(&["train", "--out", s(out), "--features", "total_afv", "--threshold", "1e-25", "--max-iterations", "100000"]);
    assert!(trained.status.success(), "{}", String::from_utf8_lossy(&trained.stderr));
    assert!(run(&["predict", "--out", s(out)]).status.success());
    let text = fs::read_to_string(out.join("predictions.csv")).unwrap();
    for line in text.lines().skip(1) {
        let cells: Vec<f64> = line.split(',').skip(2).map(|c| c.parse().unwrap()).collect();
        assert!((cells[0] - cells[1]).abs() < 1e-6, "{line}");
    }
}

#[test]
fn config_file_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let conf = dir.path().join("run.conf");
    fs::write(
        &conf,
        format!(
            "afv = {}\nsocio = {}\naqi = {}\nout = {}\nmethod = closed_form\nsplit = temporal\nlast_train_year = 2019\n",
            data("afv.csv"),
            data("socio.csv"),
            data("aqi.csv"),
            out.display()
        ),
    )
    .unwrap();
    let res = run(&["run", "--config", s(&conf), "--last-train-year", "2020"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["method"], "closed_form");
    assert_eq!(metrics["split"]["last_train_year"], 2020);
    assert_eq!(metrics["n_test"], 21);
    let echoed = fs::read_to_string(out.join("run_config.txt")).unwrap();
    assert!(echoed.contains("last_train_year = 2020"));
}

#[test]
fn stepwise_commands_match_run() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    let steps = dir.path().join("steps");
    let inputs = ["--afv", &data("afv.csv"), "--socio", &data("socio.csv"), "--aqi", &data("aqi.csv")];
    let mut args = vec!["run", "--out", s(&whole)];
    args.extend(inputs);
    assert!(run(&args).status.success());
    let mut args = vec!["ingest", "--out", s(&steps)];
    args.extend(inputs);
    assert!(run(&args).status.success());
    for cmd in ["score", "correlate", "rank", "train", "evaluate", "report"] {
        let r = run(&[cmd, "--out", s(&steps)]);
        assert!(r.status.success(), "{cmd}: {}", String::from_utf8_lossy(&r.stderr));
    }
    for name in ["panel.csv", "correlations.csv", "rankings.csv", "aqi_model.json", "model.json", "eval.csv", "metrics.json", "table2.tsv", "fig5.csv"] {
        assert_eq!(fs::read(whole.join(name)).unwrap(), fs::read(steps.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn report_fixture_regenerates_table() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["report", "--fixture", "--out", s(dir.path()), "--afv", &data("afv.csv")]).status.success());
    let text = fs::read_to_string(dir.path().join("table2.tsv")).unwrap();
    assert!(text.starts_with(aqilens_core::fixtures::TABLE2_TEXT));
    assert!(text.ends_with("MSE\t0.003521\n"));
    assert!(fs::read_to_string(dir.path().join("growth.csv")).unwrap().starts_with("# growth_pct"));
}
