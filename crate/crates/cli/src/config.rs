//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use aqilens_core::model::{FeatureSpec, FitMethod, SplitSpec, TrainingConfig, DEFAULT_FEATURES};
use aqilens_core::pipeline::PipelineConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub afv: Option<PathBuf>,
    pub socio: Option<PathBuf>,
    pub aqi: Option<PathBuf>,
    pub out: PathBuf,
    pub features: Vec<String>,
    pub include_bias: bool,
    pub method: FitMethod,
    pub training: TrainingConfig,
    pub split: SplitSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let training = TrainingConfig::default();
        RunConfig {
            afv: None,
            socio: None,
            aqi: None,
            out: PathBuf::from("out"),
            features: DEFAULT_FEATURES.iter().map(|s| s.to_string()).collect(),
            include_bias: true,
            method: FitMethod::GradientDescent,
            training,
            split: SplitSpec::Random { train_fraction: 0.8, seed: training.seed },
        }
    }
}

const KEYS: &[&str] = &[
    "afv",
    "socio",
    "aqi",
    "out",
    "features",
    "include_bias",
    "method",
    "learning_rate",
    "max_iterations",
    "convergence_threshold",
    "seed",
    "split",
    "train_fraction",
    "last_train_year",
];

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::config(format!("{key} = `{value}`: {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(key, value, "not a valid number"))
}

pub fn parse_method(value: &str) -> Result<FitMethod, CliError> {
    match value {
        "gd" | "gradient_descent" => Ok(FitMethod::GradientDescent),
        "closed_form" => Ok(FitMethod::ClosedForm),
        _ => Err(bad("method", value, "expected gd or closed_form")),
    }
}

fn method_name(m: FitMethod) -> &'static str {
    match m {
        FitMethod::GradientDescent => "gd",
        FitMethod::ClosedForm => "closed_form",
    }
}

impl RunConfig {
    /// Parses `key = value` lines. Blank lines and `#` comments are skipped;
    /// unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(CliError::config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        let mut cfg = RunConfig::default();
        for (k, v) in &values {
            cfg.set(k, v)?;
        }
        // split parameters only make sense once the mode is known
        cfg.resolve_split(&values)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "afv" => self.afv = Some(PathBuf::from(value)),
            "socio" => self.socio = Some(PathBuf::from(value)),
            "aqi" => self.aqi = Some(PathBuf::from(value)),
            "out" => self.out = PathBuf::from(value),
            "features" => {
                self.features = value.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
            }
            "include_bias" => {
                self.include_bias = value.parse().map_err(|_| bad(key, value, "expected true or false"))?
            }
            "method" => self.method = parse_method(value)?,
            "learning_rate" => self.training.learning_rate = num(key, value)?,
            "max_iterations" => self.training.max_iterations = num(key, value)?,
            "convergence_threshold" => self.training.convergence_threshold = num(key, value)?,
            "seed" => self.training.seed = num(key, value)?,
            _ => {}
        }
        Ok(())
    }

    fn resolve_split(&mut self, values: &BTreeMap<String, String>) -> Result<(), CliError> {
        let mode = values.get("split").map(String::as_str).unwrap_or("random");
        self.split = match mode {
            "random" => {
                if values.contains_key("last_train_year") {
                    return Err(CliError::config("last_train_year needs split = temporal"));
                }
                let train_fraction = match values.get("train_fraction") {
                    Some(v) => num("train_fraction", v)?,
                    None => 0.8,
                };
                SplitSpec::Random { train_fraction, seed: self.training.seed }
            }
            "temporal" => {
                if values.contains_key("train_fraction") {
                    return Err(CliError::config("train_fraction needs split = random"));
                }
                let v = values
                    .get("last_train_year")
                    .ok_or_else(|| CliError::config("split = temporal needs last_train_year"))?;
                SplitSpec::Temporal { last_train_year: num("last_train_year", v)? }
            }
            other => return Err(bad("split", other, "expected random or temporal")),
        };
        Ok(())
    }

    /// Re-derives the random split seed after the training seed changed.
    pub fn sync_split_seed(&mut self) {
        if let SplitSpec::Random { train_fraction, .. } = self.split {
            self.split = SplitSpec::Random { train_fraction, seed: self.training.seed };
        }
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, CliError> {
        self.training.validate().map_err(CliError::from_model)?;
        Ok(PipelineConfig {
            features: FeatureSpec::new(&self.features, self.include_bias).map_err(CliError::from_model)?,
            training: self.training,
            split: self.split,
            method: self.method,
        })
    }
}

fn path_line(f: &mut fmt::Formatter<'_>, key: &str, p: &Option<PathBuf>) -> fmt::Result {
    match p {
        Some(p) => writeln!(f, "{key} = {}", p.display()),
        None => Ok(()),
    }
}

/// Writes every key, so `parse(to_string())` reproduces the config.
impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        path_line(f, "afv", &self.afv)?;
        path_line(f, "socio", &self.socio)?;
        path_line(f, "aqi", &self.aqi)?;
        writeln!(f, "out = {}", self.out.display())?;
        writeln!(f, "features = {}", self.features.join(","))?;
        writeln!(f, "include_bias = {}", self.include_bias)?;
        writeln!(f, "method = {}", method_name(self.method))?;
        writeln!(f, "learning_rate = {:?}", self.training.learning_rate)?;
        writeln!(f, "max_iterations = {}", self.training.max_iterations)?;
        writeln!(f, "convergence_threshold = {:?}", self.training.convergence_threshold)?;
        writeln!(f, "seed = {}", self.training.seed)?;
        match self.split {
            SplitSpec::Random { train_fraction, .. } => {
                writeln!(f, "split = random")?;
                writeln!(f, "train_fraction = {train_fraction:?}")
            }
            SplitSpec::Temporal { last_train_year } => {
                writeln!(f, "split = temporal")?;
                writeln!(f, "last_train_year = {last_train_year}")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn custom_config_round_trips() {
        let text = "# sample\nafv = data/afv.csv\nsocio=data/socio.csv\naqi = data/aqi.csv\nout = build/run 1\n\
                    features = total_afv, poverty_pct\ninclude_bias = false\nmethod = closed_form\n\
                    learning_rate = 0.05\nmax_iterations = 500\nconvergence_threshold = 1e-12\nseed = 9\n\
                    split = temporal\nlast_train_year = 2019\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.features, vec!["total_afv", "poverty_pct"]);
        assert_eq!(cfg.out, PathBuf::from("build/run 1"));
        assert_eq!(cfg.split, SplitSpec::Temporal { last_train_year: 2019 });
        assert_eq!(cfg.training.convergence_threshold, 1e-12);
        assert_eq!(RunConfig::parse(&cfg.to_string()).unwrap(), cfg);
    }

    #[test]
    fn random_split_follows_seed() {
        let cfg = RunConfig::parse("seed = 5\ntrain_fraction = 0.7").unwrap();
        assert_eq!(cfg.split, SplitSpec::Random { train_fraction: 0.7, seed: 5 });
    }

    #[test]
    fn rejects_unknown_and_inconsistent_keys() {
        assert!(RunConfig::parse("colour = red").is_err());
        assert!(RunConfig::parse("no equals sign").is_err());
        assert!(RunConfig::parse("split = temporal").is_err());
        assert!(RunConfig::parse("last_train_year = 2019").is_err());
        assert!(RunConfig::parse("learning_rate = fast").is_err());
    }
}
