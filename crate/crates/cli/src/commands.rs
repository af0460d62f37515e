use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use aqilens_core::aqi_pca::{explained_variance, AqiPcaModel};
use aqilens_core::canonical::to_canonical_json;
use aqilens_core::fixtures::table2_pairs;
use aqilens_core::ingest::{
    build_panel, parse_afv_csv, parse_aqi_csv, parse_socio_csv, read_panel_file, write_panel_file, County,
    DroppedRow, Panel,
};
use aqilens_core::model::{evaluate, split_rows, Dataset, EvalPair, EvalReport, RegressionModel, SplitSpec};
use aqilens_core::pipeline::{self, Metrics, PipelineOutput, CORRELATION_VARIABLES};
use aqilens_core::report::{
    fig5_csv, prediction_pairs, rank_table, rankings_csv, render_table2_report, table1_rank_table,
};
use aqilens_core::scenario::{run_scenario, Override, ScenarioRequest};
use aqilens_core::stats::{correlation_matrix, growth_by_type};
use aqilens_core::synth::{generate, SynthConfig};
use aqilens_service::{RouterOptions, Snapshot, SnapshotPaths};

use crate::config::{parse_method, RunConfig};
use crate::error::CliError;
use crate::{
    Command, CorrelateArgs, EvaluateArgs, FitArgs, GenerateArgs, IngestArgs, PanelArgs, PredictArgs, RankArgs,
    ReportArgs, RunArgs, ServeArgs, TrainArgs,
};

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Ingest(a) => cmd_ingest(&a),
        Command::Correlate(a) => cmd_correlate(&a),
        Command::Rank(a) => cmd_rank(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Serve(a) => cmd_serve(&a),
        Command::Run(a) => cmd_run(&a),
    }
}

// ---------------------------------------------------------------------------
// file helpers

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(path)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn with_newline(mut s: String) -> String {
    if !s.ends_with('\n') {
        s.push('\n');
    }
    s
}

impl PanelArgs {
    fn panel_path(&self) -> PathBuf {
        self.panel.clone().unwrap_or_else(|| self.out.join("panel.csv"))
    }

    fn load_panel(&self) -> Result<Panel, CliError> {
        Ok(read_panel_file(&self.panel_path())?)
    }
}

fn load_model(path: &Path) -> Result<RegressionModel, CliError> {
    Ok(RegressionModel::from_json(&read_text(path)?)?)
}

fn drops_csv(dropped: &[DroppedRow]) -> String {
    let mut s = String::from("county,year,reasons\n");
    for d in dropped {
        let reasons: Vec<String> = d.reasons.iter().map(ToString::to_string).collect();
        s.push_str(&format!("{},{},{}\n", d.county, d.year, reasons.join(";")));
    }
    s
}

fn metrics_json(m: &Metrics) -> String {
    with_newline(to_canonical_json(m))
}

/// Requested counties present in the panel; the first three panel counties
/// when none are.
fn report_counties(panel: &Panel, requested: &[String]) -> Vec<County> {
    let available = panel.counties();
    let chosen: Vec<County> =
        requested.iter().map(|c| County::new(c)).filter(|c| available.contains(c)).collect();
    if chosen.is_empty() {
        available.into_iter().take(3).collect()
    } else {
        chosen
    }
}

fn write_table2(dir: &Path, pairs: &[EvalPair]) -> Result<(), CliError> {
    write_file(dir, "table2.tsv", &render_table2_report(pairs)?)?;
    write_file(dir, "fig5.csv", &fig5_csv(pairs))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// configuration

fn resolve_config(fit: &FitArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &fit.config {
        Some(path) => RunConfig::parse(&read_text(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(f) = &fit.features {
        cfg.features = f.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
    }
    if fit.no_bias {
        cfg.include_bias = false;
    }
    if let Some(m) = &fit.method {
        cfg.method = parse_method(m)?;
    }
    if let Some(v) = fit.learning_rate {
        cfg.training.learning_rate = v;
    }
    if let Some(v) = fit.max_iterations {
        cfg.training.max_iterations = v;
    }
    if let Some(v) = fit.threshold {
        cfg.training.convergence_threshold = v;
    }
    if let Some(v) = fit.seed {
        cfg.training.seed = v;
    }
    let mode = match (&fit.split, cfg.split) {
        (Some(m), _) => m.as_str(),
        (None, SplitSpec::Random { .. }) => "random",
        (None, SplitSpec::Temporal { .. }) => "temporal",
    };
    cfg.split = match mode {
        "random" => {
            if fit.last_train_year.is_some() {
                return Err(CliError::config("--last-train-year needs --split temporal"));
            }
            let current = match cfg.split {
                SplitSpec::Random { train_fraction, .. } => train_fraction,
                SplitSpec::Temporal { .. } => 0.8,
            };
            SplitSpec::Random { train_fraction: fit.train_fraction.unwrap_or(current), seed: cfg.training.seed }
        }
        "temporal" => {
            if fit.train_fraction.is_some() {
                return Err(CliError::config("--train-fraction needs --split random"));
            }
            let year = match (fit.last_train_year, cfg.split) {
                (Some(y), _) => y,
                (None, SplitSpec::Temporal { last_train_year }) => last_train_year,
                (None, SplitSpec::Random { .. }) => {
                    return Err(CliError::config("--split temporal needs --last-train-year"))
                }
            };
            SplitSpec::Temporal { last_train_year: year }
        }
        other => return Err(CliError::config(format!("--split `{other}`: expected random or temporal"))),
    };
    cfg.sync_split_seed();
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// commands

fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(CliError::config("--noise must be a non-negative number"));
    }
    let bundle = generate(&SynthConfig { seed: a.seed, noise_sd: a.noise, ..SynthConfig::default() });
    bundle.write_to(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    for name in ["afv.csv", "socio.csv", "aqi.csv", "truth.json"] {
        println!("wrote {}", a.out.join(name).display());
    }
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> Result<(), CliError> {
    let built = build_panel(&parse_afv_csv(&a.afv)?, &parse_socio_csv(&a.socio)?, &parse_aqi_csv(&a.aqi)?)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let path = a.out.join("panel.csv");
    write_panel_file(&built.panel, &path)?;
    println!("wrote {}", path.display());
    write_file(&a.out, "drops.csv", &drops_csv(&built.dropped))?;
    Ok(())
}

fn cmd_correlate(a: &CorrelateArgs) -> Result<(), CliError> {
    let panel = a.io.load_panel()?;
    let scored = panel.rows().iter().all(|r| r.aqi_score.is_some());
    let vars: Vec<&str> = if a.vars.is_empty() {
        CORRELATION_VARIABLES.iter().copied().filter(|v| scored || *v != "aqi_score").collect()
    } else {
        a.vars.iter().map(|s| s.trim()).collect()
    };
    let matrix = correlation_matrix(&panel, &vars)?;
    write_file(&a.io.out, "correlations.csv", &matrix.to_csv())?;
    Ok(())
}

fn cmd_rank(a: &RankArgs) -> Result<(), CliError> {
    let rows = if a.table1 {
        table1_rank_table()
    } else {
        let panel = a.io.load_panel()?;
        let year = match a.year {
            Some(y) => y,
            None => *panel.years().last().ok_or_else(|| CliError::new("cli.EmptyPanel", "panel has no rows"))?,
        };
        let slice = panel.year_slice(year);
        if slice.is_empty() {
            return Err(CliError::new("cli.NoRows", format!("panel has no rows for {year}")));
        }
        rank_table(&slice)?
    };
    write_file(&a.io.out, "rankings.csv", &rankings_csv(&rows))?;
    Ok(())
}

fn cmd_score(a: &PanelArgs) -> Result<(), CliError> {
    let mut panel = a.load_panel()?;
    let (model, clamped) = pipeline::score(&mut panel)?;
    write_file(&a.out, "aqi_model.json", &with_newline(model.to_json()))?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    let path = a.out.join("panel.csv");
    write_panel_file(&panel, &path)?;
    println!("wrote {}", path.display());
    if clamped > 0 {
        eprintln!("note: {clamped} scores were clamped");
    }
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.fit)?;
    let panel = a.io.load_panel()?;
    let (model, _, _) = pipeline::train(&panel, &cfg.pipeline()?)?;
    write_file(&a.io.out, "model.json", &with_newline(model.to_json()))?;
    Ok(())
}

fn metrics_for(
    model: &RegressionModel,
    test: &EvalReport,
    train: &EvalReport,
    aqi: Option<&AqiPcaModel>,
) -> Result<Metrics, CliError> {
    Ok(Metrics {
        test_r2: test.r2,
        test_mse: test.mse,
        train_r2: train.r2,
        train_mse: train.mse,
        n_train: train.pairs.len(),
        n_test: test.pairs.len(),
        split: model.split.unwrap_or(SplitSpec::Random { train_fraction: 0.8, seed: model.config.seed }),
        method: model.method,
        iterations: model.history.iterations,
        converged_at: model.converged_at,
        explained_variance: match aqi {
            Some(m) => explained_variance(m)?,
            None => Vec::new(),
        },
    })
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let panel = a.io.load_panel()?;
    let model = load_model(&a.model.clone().unwrap_or_else(|| a.io.out.join("model.json")))?;
    let split = model
        .split
        .ok_or_else(|| CliError::new("cli.NoSplit", "model.json records no train/test split"))?;
    let (train_rows, test_rows) = split_rows(panel.rows(), &split)?;
    let test = evaluate(&model, &Dataset::from_rows(&test_rows, &model.feature_spec)?)?;
    let train = evaluate(&model, &Dataset::from_rows(&train_rows, &model.feature_spec)?)?;
    let aqi_path = a.io.out.join("aqi_model.json");
    let aqi = if aqi_path.exists() { Some(AqiPcaModel::from_json(&read_text(&aqi_path)?)?) } else { None };
    let metrics = metrics_for(&model, &test, &train, aqi.as_ref())?;
    write_file(&a.io.out, "eval.csv", &test.to_csv())?;
    write_file(&a.io.out, "metrics.json", &metrics_json(&metrics))?;
    Ok(())
}

/// `name=value` sets an absolute value, `name=*factor` a multiplier.
fn parse_override(spec: &str) -> Result<(String, Override), CliError> {
    let (name, value) =
        spec.split_once('=').ok_or_else(|| CliError::config(format!("--set `{spec}`: expected name=value")))?;
    let parse = |v: &str| -> Result<f64, CliError> {
        v.trim().parse().map_err(|_| CliError::config(format!("--set `{spec}`: `{v}` is not a number")))
    };
    let ov = match value.strip_prefix('*') {
        Some(m) => Override::Multiplier(parse(m)?),
        None => Override::Absolute(parse(value)?),
    };
    Ok((name.trim().to_string(), ov))
}

fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let panel = a.io.load_panel()?;
    let model = load_model(&a.model.clone().unwrap_or_else(|| a.io.out.join("model.json")))?;
    let request = match (&a.request, &a.county, a.year) {
        (Some(path), _, _) => Some(
            serde_json::from_str::<ScenarioRequest>(&read_text(path)?)
                .map_err(|e| CliError::new("cli.BadRequest", format!("{}: {e}", path.display())))?,
        ),
        (None, Some(county), Some(year)) => {
            let overrides: BTreeMap<String, Override> =
                a.overrides.iter().map(|s| parse_override(s)).collect::<Result<_, _>>()?;
            Some(ScenarioRequest { county: County::new(county), base_year: year, overrides, model_id: None })
        }
        _ => None,
    };
    match request {
        Some(req) => {
            let result = run_scenario(&req, &panel, &model)?;
            println!("{}", to_canonical_json(&result));
        }
        None => {
            let mut s = String::from("county,year,actual,predicted\n");
            for r in panel.rows() {
                let p = aqilens_core::model::predict(&model, r)?;
                let actual = r.aqi_score.map(|v| v.to_string()).unwrap_or_default();
                s.push_str(&format!("{},{},{},{}\n", r.county, r.year, actual, p));
            }
            write_file(&a.io.out, "predictions.csv", &s)?;
        }
    }
    Ok(())
}

fn cmd_report(a: &ReportArgs) -> Result<(), CliError> {
    if a.fixture {
        write_table2(&a.io.out, &table2_pairs())?;
    } else {
        let panel = a.io.load_panel()?;
        let model = load_model(&a.model.clone().unwrap_or_else(|| a.io.out.join("model.json")))?;
        let pairs = prediction_pairs(&model, &panel, &report_counties(&panel, &a.counties))?;
        write_table2(&a.io.out, &pairs)?;
    }
    if let Some(afv) = &a.afv {
        let growth = growth_by_type(&parse_afv_csv(afv)?)?;
        write_file(&a.io.out, "growth.csv", &growth.to_csv())?;
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> Result<(), CliError> {
    let mut paths = SnapshotPaths::in_dir(&a.dir);
    if let Some(p) = &a.panel {
        paths.panel = p.clone();
    }
    if let Some(p) = &a.model {
        paths.model = p.clone();
    }
    if a.aqi_model.is_some() {
        paths.aqi_model = a.aqi_model.clone();
    }
    if a.metrics.is_some() {
        paths.metrics = a.metrics.clone();
    }
    let snapshot = Snapshot::load(&paths)?;
    let addr = SocketAddr::new(a.host, a.port);
    let opts = RouterOptions { cors_origin: a.cors.clone(), static_dir: a.static_dir.clone() };
    eprintln!("serving model {} on http://{addr}", snapshot.fingerprint);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("cli.Runtime", e.to_string()))?;
    runtime
        .block_on(aqilens_service::serve(snapshot, addr, &opts))
        .map_err(|e| CliError::new("service.Io", format!("{addr}: {e}")))
}

fn write_run_artifacts(out: &Path, result: &PipelineOutput, counties: &[String]) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let panel_path = out.join("panel.csv");
    write_panel_file(&result.panel, &panel_path)?;
    println!("wrote {}", panel_path.display());
    write_file(out, "drops.csv", &drops_csv(&result.dropped))?;
    write_file(out, "correlations.csv", &result.correlations.to_csv())?;
    write_file(out, "rankings.csv", &rankings_csv(&result.rankings))?;
    write_file(out, "aqi_model.json", &with_newline(result.aqi_model.to_json()))?;
    write_file(out, "model.json", &with_newline(result.model.to_json()))?;
    write_file(out, "eval.csv", &result.test.to_csv())?;
    write_file(out, "metrics.json", &metrics_json(&result.metrics))?;
    if let Some(g) = &result.growth {
        write_file(out, "growth.csv", &g.to_csv())?;
    }
    let pairs = prediction_pairs(&result.model, &result.panel, &report_counties(&result.panel, counties))?;
    write_table2(out, &pairs)
}

fn cmd_run(a: &RunArgs) -> Result<(), CliError> {
    let mut cfg = resolve_config(&a.fit)?;
    if a.afv.is_some() {
        cfg.afv = a.afv.clone();
    }
    if a.socio.is_some() {
        cfg.socio = a.socio.clone();
    }
    if a.aqi.is_some() {
        cfg.aqi = a.aqi.clone();
    }
    if let Some(o) = &a.out {
        cfg.out = o.clone();
    }
    let need = |p: &Option<PathBuf>, key: &str| {
        p.clone().ok_or_else(|| CliError::config(format!("no `{key}` input: pass --{key} or set it in --config")))
    };
    let (afv, socio, aqi) = (need(&cfg.afv, "afv")?, need(&cfg.socio, "socio")?, need(&cfg.aqi, "aqi")?);
    let started = SystemTime::now();
    let result = pipeline::run(&parse_afv_csv(&afv)?, &parse_socio_csv(&socio)?, &parse_aqi_csv(&aqi)?, &cfg.pipeline()?)?;
    write_run_artifacts(&cfg.out, &result, &a.counties)?;
    write_file(&cfg.out, "run_config.txt", &cfg.to_string())?;

    let secs = |t: SystemTime| t.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let log = format!(
        "started_unix = {:.3}\nfinished_unix = {:.3}\nrows = {}\ndropped = {}\ntest_r2 = {}\ntest_mse = {}\n",
        secs(started),
        secs(SystemTime::now()),
        result.panel.len(),
        result.dropped.len(),
        result.metrics.test_r2.map_or("undefined".to_string(), |v| v.to_string()),
        result.metrics.test_mse
    );
    write_file(&cfg.out, "run.log", &log)?;
    Ok(())
}
