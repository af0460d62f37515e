mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// County AFV / air-quality pipeline.
///
/// Every command writes fixed file names under its output directory and
/// exits 0 on success, 1 on a data or model error (JSON on stderr), and 2
/// on bad usage.
#[derive(Debug, Parser)]
#[command(name = "aqilens", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic input bundle (afv.csv, socio.csv, aqi.csv, truth.json).
    Generate(GenerateArgs),
    /// Join the three source files into panel.csv (plus drops.csv).
    Ingest(IngestArgs),
    /// Pairwise Pearson correlations into correlations.csv.
    Correlate(CorrelateArgs),
    /// AFV and socioeconomic county ranks into rankings.csv.
    Rank(RankArgs),
    /// Fit the pollutant score model (aqi_model.json) and score panel.csv.
    Score(PanelArgs),
    /// Fit the regression model on the training split into model.json.
    Train(TrainArgs),
    /// Score model.json on its test split into eval.csv and metrics.json.
    Evaluate(EvaluateArgs),
    /// Predict one what-if scenario (JSON to stdout) or every panel row (predictions.csv).
    Predict(PredictArgs),
    /// Table- and figure-shaped report files (table2.tsv, fig5.csv, growth.csv).
    Report(ReportArgs),
    /// Serve the JSON API over a finished run.
    Serve(ServeArgs),
    /// Full pipeline: ingest, score, correlate, rank, train, evaluate, report.
    Run(RunArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value = "data/synthetic")]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Standard deviation of the latent noise.
    #[arg(long, default_value_t = 0.01)]
    noise: f64,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[arg(long)]
    afv: PathBuf,
    #[arg(long)]
    socio: PathBuf,
    #[arg(long)]
    aqi: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PanelArgs {
    /// Output directory; also the default location of input artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Panel file [default: <out>/panel.csv]
    #[arg(long)]
    panel: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorrelateArgs {
    #[command(flatten)]
    io: PanelArgs,
    /// Comma-separated variables [default: AFV, census, and score columns]
    #[arg(long, value_delimiter = ',')]
    vars: Vec<String>,
}

#[derive(Debug, Args)]
struct RankArgs {
    #[command(flatten)]
    io: PanelArgs,
    /// Year to rank [default: latest in the panel]
    #[arg(long)]
    year: Option<i32>,
    /// Rank the embedded 21-county table instead of a panel.
    #[arg(long)]
    table1: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    io: PanelArgs,
    #[command(flatten)]
    fit: FitArgs,
}

/// Model and split settings; each flag overrides the config file.
#[derive(Debug, Args, Default)]
struct FitArgs {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Fit without an intercept.
    #[arg(long)]
    no_bias: bool,
    /// gd or closed_form
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// Stop once the loss changes by less than this.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// random or temporal
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    last_train_year: Option<i32>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    io: PanelArgs,
    /// Model file [default: <out>/model.json]
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    io: PanelArgs,
    /// Model file [default: <out>/model.json]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Scenario request JSON file.
    #[arg(long, conflicts_with_all = ["county", "year"])]
    request: Option<PathBuf>,
    #[arg(long, requires = "year")]
    county: Option<String>,
    #[arg(long, requires = "county")]
    year: Option<i32>,
    /// Override as name=value (absolute) or name=*factor (multiplier); repeatable.
    #[arg(long = "set", requires = "county")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[command(flatten)]
    io: PanelArgs,
    /// Model file [default: <out>/model.json]
    #[arg(long)]
    model: Option<PathBuf>,
    /// Use the embedded 18-row predicted-vs-observed table.
    #[arg(long)]
    fixture: bool,
    /// Counties for table2.tsv and fig5.csv.
    #[arg(long, value_delimiter = ',', default_value = "Atlantic,Camden,Mercer")]
    counties: Vec<String>,
    /// Half-year AFV file for growth.csv.
    #[arg(long)]
    afv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Run directory holding panel.csv, model.json, and optional aqi_model.json / metrics.json.
    #[arg(long, env = "AQILENS_DIR", default_value = "out")]
    dir: PathBuf,
    #[arg(long, env = "AQILENS_PANEL")]
    panel: Option<PathBuf>,
    #[arg(long, env = "AQILENS_MODEL")]
    model: Option<PathBuf>,
    #[arg(long, env = "AQILENS_AQI_MODEL")]
    aqi_model: Option<PathBuf>,
    #[arg(long, env = "AQILENS_METRICS")]
    metrics: Option<PathBuf>,
    #[arg(long, env = "AQILENS_HOST", default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, env = "AQILENS_PORT", default_value_t = 8080)]
    port: u16,
    /// Allowed CORS origin, or * for any.
    #[arg(long, env = "AQILENS_CORS")]
    cors: Option<String>,
    /// Static asset directory served for non-API paths.
    #[arg(long = "static", env = "AQILENS_STATIC")]
    static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    afv: Option<PathBuf>,
    #[arg(long)]
    socio: Option<PathBuf>,
    #[arg(long)]
    aqi: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, value_delimiter = ',', default_value = "Atlantic,Camden,Mercer")]
    counties: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(1)
        }
    }
}
