//! CSV ingestion for the three source families (AFV registrations, census
//! socioeconomics, monitor pollutant readings) and the county×year join that
//! produces the analysis [`Panel`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: negative count")]
    NegativeCount { line: u64 },
    #[error("line {line}: bound violation: {reason}")]
    BoundViolation { line: u64, reason: String },
    #[error("no {pollutant} readings for {county} {year}")]
    NoPollutantData { county: County, year: i32, pollutant: Pollutant },
    #[error("duplicate panel row for {county} {year}")]
    DuplicateRow { county: County, year: i32 },
    #[error("join produced an empty panel")]
    EmptyPanel,
}

impl IngestError {
    /// Short machine-readable code, e.g. `MissingColumn`.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::Io { .. } => "Io",
            IngestError::Csv(_) => "Csv",
            IngestError::MissingColumn(_) => "MissingColumn",
            IngestError::MalformedRow { .. } => "MalformedRow",
            IngestError::NegativeCount { .. } => "NegativeCount",
            IngestError::BoundViolation { .. } => "BoundViolation",
            IngestError::NoPollutantData { .. } => "NoPollutantData",
            IngestError::DuplicateRow { .. } => "DuplicateRow",
            IngestError::EmptyPanel => "EmptyPanel",
        }
    }
}

impl From<csv::Error> for IngestError {
    fn from(e: csv::Error) -> Self {
        IngestError::Csv(e.to_string())
    }
}

/// Normalized county name.
///
/// Source files disagree on naming ("BERGEN", "Bergen County", " bergen ").
/// The key is trimmed, case-folded, stripped of a trailing " County", and
/// re-cased word by word, so all of those become `Bergen`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct County(String);

impl County {
    pub fn new(raw: &str) -> Self {
        let folded = raw.trim().to_lowercase();
        let stem = folded.strip_suffix(" county").unwrap_or(&folded).trim_end();
        let words: Vec<String> = stem
            .split_whitespace()
            .map(|w| {
                let mut chars = w.chars();
                match chars.next() {
                    Some(first) => first.to_uppercase().chain(chars).collect(),
                    None => String::new(),
                }
            })
            .collect();
        County(words.join(" "))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<String> for County {
    fn from(s: String) -> Self {
        County::new(&s)
    }
}

impl From<&str> for County {
    fn from(s: &str) -> Self {
        County::new(s)
    }
}

impl From<County> for String {
    fn from(c: County) -> Self {
        c.0
    }
}

impl fmt::Display for County {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Half-year registration period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub year: i32,
    pub half: u8,
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-H{}", self.year, self.half)
    }
}

/// The five pollutants entering the composite score, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pollutant {
    So2,
    O3,
    No2,
    Pm25,
    Co,
}

impl Pollutant {
    pub const ALL: [Pollutant; 5] =
        [Pollutant::So2, Pollutant::O3, Pollutant::No2, Pollutant::Pm25, Pollutant::Co];

    pub fn column(self) -> &'static str {
        match self {
            Pollutant::So2 => "so2",
            Pollutant::O3 => "o3",
            Pollutant::No2 => "no2",
            Pollutant::Pm25 => "pm25",
            Pollutant::Co => "co",
        }
    }
}

impl fmt::Display for Pollutant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfvRecord {
    pub county: County,
    pub period: Period,
    pub bev_count: u64,
    pub phev_count: u64,
    pub nev_count: u64,
    pub hev_count: u64,
    pub pev_count: u64,
    pub non_pev_count: u64,
    pub road_mileage: Option<f64>,
    pub vmt: Option<f64>,
}

impl AfvRecord {
    pub fn total_afv(&self) -> u64 {
        self.bev_count + self.phev_count + self.nev_count + self.hev_count
    }

    pub fn count(&self, kind: VehicleType) -> u64 {
        match kind {
            VehicleType::Bev => self.bev_count,
            VehicleType::Phev => self.phev_count,
            VehicleType::Nev => self.nev_count,
            VehicleType::Hev => self.hev_count,
        }
    }
}

/// The four AFV types tracked per county.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VehicleType {
    Bev,
    Phev,
    Nev,
    Hev,
}

impl VehicleType {
    pub const ALL: [VehicleType; 4] =
        [VehicleType::Bev, VehicleType::Phev, VehicleType::Nev, VehicleType::Hev];

    pub fn label(self) -> &'static str {
        match self {
            VehicleType::Bev => "BEV",
            VehicleType::Phev => "PHEV",
            VehicleType::Nev => "NEV",
            VehicleType::Hev => "HEV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocioRecord {
    pub county: County,
    pub year: i32,
    pub population: u64,
    pub population_change: f64,
    pub education_pct: f64,
    pub unemployment_rate: f64,
    pub poverty_pct: f64,
    pub poverty_lower: f64,
    pub poverty_upper: f64,
    pub median_household_income: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PollutantRecord {
    pub county: County,
    pub year: i32,
    /// Readings in [`Pollutant::ALL`] order.
    pub values: [f64; 5],
}

impl PollutantRecord {
    pub fn get(&self, p: Pollutant) -> f64 {
        self.values[p as usize]
    }
}

/// One county-year observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub county: County,
    pub year: i32,
    pub total_afv: u64,
    pub bev_count: u64,
    pub phev_count: u64,
    pub nev_count: u64,
    pub hev_count: u64,
    pub pev_count: u64,
    pub non_pev_count: u64,
    pub road_mileage: Option<f64>,
    pub vmt: Option<f64>,
    pub population: u64,
    pub population_change: f64,
    pub education_pct: f64,
    pub unemployment_rate: f64,
    pub poverty_pct: f64,
    pub poverty_lower: f64,
    pub poverty_upper: f64,
    pub median_household_income: f64,
    pub pollutants: [f64; 5],
    pub aqi_score: Option<f64>,
}

/// How a named covariate is bounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Non-negative quantity (vehicle counts, population, miles, income).
    NonNegative,
    /// Fraction in `[0, 1]`.
    Fraction,
    /// Any finite real.
    Real,
}

impl Domain {
    pub fn contains(self, v: f64) -> bool {
        v.is_finite()
            && match self {
                Domain::NonNegative => v >= 0.0,
                Domain::Fraction => (0.0..=1.0).contains(&v),
                Domain::Real => true,
            }
    }
}

/// Every numeric column a [`PanelRow`] exposes by name.
pub const COVARIATE_NAMES: &[&str] = &[
    "total_afv",
    "bev_count",
    "phev_count",
    "nev_count",
    "hev_count",
    "pev_count",
    "non_pev_count",
    "road_mileage",
    "vmt",
    "population",
    "population_change",
    "education_pct",
    "unemployment_rate",
    "poverty_pct",
    "poverty_lower",
    "poverty_upper",
    "median_household_income",
    "so2",
    "o3",
    "no2",
    "pm25",
    "co",
    "aqi_score",
];

/// Domain of a named covariate, or `None` for unknown names.
pub fn covariate_domain(name: &str) -> Option<Domain> {
    match name {
        "total_afv" | "bev_count" | "phev_count" | "nev_count" | "hev_count" | "pev_count"
        | "non_pev_count" | "road_mileage" | "vmt" | "population" | "median_household_income"
        | "so2" | "o3" | "no2" | "pm25" | "co" => Some(Domain::NonNegative),
        "education_pct" | "unemployment_rate" | "poverty_pct" | "poverty_lower"
        | "poverty_upper" => Some(Domain::Fraction),
        "population_change" | "aqi_score" => Some(Domain::Real),
        _ => None,
    }
}

impl PanelRow {
    /// Looks up a numeric column by name.
    pub fn covariate(&self, name: &str) -> Option<f64> {
        Some(match name {
            "total_afv" => self.total_afv as f64,
            "bev_count" => self.bev_count as f64,
            "phev_count" => self.phev_count as f64,
            "nev_count" => self.nev_count as f64,
            "hev_count" => self.hev_count as f64,
            "pev_count" => self.pev_count as f64,
            "non_pev_count" => self.non_pev_count as f64,
            "road_mileage" => return self.road_mileage,
            "vmt" => return self.vmt,
            "population" => self.population as f64,
            "population_change" => self.population_change,
            "education_pct" => self.education_pct,
            "unemployment_rate" => self.unemployment_rate,
            "poverty_pct" => self.poverty_pct,
            "poverty_lower" => self.poverty_lower,
            "poverty_upper" => self.poverty_upper,
            "median_household_income" => self.median_household_income,
            "so2" => self.pollutants[0],
            "o3" => self.pollutants[1],
            "no2" => self.pollutants[2],
            "pm25" => self.pollutants[3],
            "co" => self.pollutants[4],
            "aqi_score" => return self.aqi_score,
            _ => return None,
        })
    }

    /// Re-checks every field invariant.
    pub fn validate(&self) -> Result<(), String> {
        if self.total_afv != self.bev_count + self.phev_count + self.nev_count + self.hev_count {
            return Err("total_afv differs from the sum of per-type counts".into());
        }
        if self.pev_count != self.bev_count + self.phev_count {
            return Err("pev_count differs from bev_count + phev_count".into());
        }
        if self.population == 0 {
            return Err("population must be positive".into());
        }
        for name in COVARIATE_NAMES {
            if let (Some(v), Some(domain)) = (self.covariate(name), covariate_domain(name)) {
                if !domain.contains(v) {
                    return Err(format!("{name} = {v} outside its domain"));
                }
            }
        }
        if !(self.poverty_lower <= self.poverty_pct && self.poverty_pct <= self.poverty_upper) {
            return Err("poverty bounds are disordered".into());
        }
        if self.median_household_income <= 0.0 {
            return Err("median_household_income must be positive".into());
        }
        Ok(())
    }
}

/// County-year rows, unique on `(county, year)` and sorted by that key.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Panel {
    rows: Vec<PanelRow>,
}

impl Panel {
    pub fn new(mut rows: Vec<PanelRow>) -> Result<Self, IngestError> {
        rows.sort_by(|a, b| (&a.county, a.year).cmp(&(&b.county, b.year)));
        for w in rows.windows(2) {
            if w[0].county == w[1].county && w[0].year == w[1].year {
                return Err(IngestError::DuplicateRow { county: w[0].county.clone(), year: w[0].year });
            }
        }
        Ok(Panel { rows })
    }

    pub fn rows(&self) -> &[PanelRow] {
        &self.rows
    }

    pub fn rows_mut(&mut self) -> &mut [PanelRow] {
        &mut self.rows
    }

    pub fn into_rows(self) -> Vec<PanelRow> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, county: &County, year: i32) -> Option<&PanelRow> {
        self.rows
            .binary_search_by(|r| (&r.county, r.year).cmp(&(county, year)))
            .ok()
            .map(|i| &self.rows[i])
    }

    pub fn counties(&self) -> BTreeSet<County> {
        self.rows.iter().map(|r| r.county.clone()).collect()
    }

    pub fn years(&self) -> BTreeSet<i32> {
        self.rows.iter().map(|r| r.year).collect()
    }

    /// Rows observed in `year`, in county order.
    pub fn year_slice(&self, year: i32) -> Vec<&PanelRow> {
        self.rows.iter().filter(|r| r.year == year).collect()
    }

    /// The most recent row for each county, in county order.
    pub fn latest_per_county(&self) -> Vec<&PanelRow> {
        let mut latest: BTreeMap<&County, &PanelRow> = BTreeMap::new();
        for r in &self.rows {
            latest.insert(&r.county, r);
        }
        latest.into_values().collect()
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        for (i, r) in self.rows.iter().enumerate() {
            r.validate().map_err(|reason| IngestError::MalformedRow { line: i as u64 + 2, reason })?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// CSV helpers

struct Header {
    columns: Vec<String>,
}

impl Header {
    fn read<R: Read>(reader: &mut csv::Reader<R>) -> Result<Self, IngestError> {
        let columns = reader.headers()?.iter().map(|h| h.trim().to_lowercase()).collect();
        Ok(Header { columns })
    }

    fn find(&self, name: &str) -> Result<usize, IngestError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }

    /// Locates a fraction column that may carry a `%` suffix. Returns the
    /// index and the divisor that turns the stored value into a fraction.
    fn find_fraction(&self, name: &str) -> Result<(usize, f64), IngestError> {
        let pct = format!("{name}%");
        if let Some(i) = self.columns.iter().position(|c| *c == pct) {
            return Ok((i, 100.0));
        }
        Ok((self.find(name)?, 1.0))
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(input)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn field(rec: &csv::StringRecord, idx: usize, line: u64) -> Result<&str, IngestError> {
    rec.get(idx).ok_or_else(|| IngestError::MalformedRow { line, reason: format!("missing field {}", idx + 1) })
}

fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64, IngestError> {
    let v: f64 = s
        .parse()
        .map_err(|_| IngestError::MalformedRow { line, reason: format!("{what}: `{s}` is not a number") })?;
    if !v.is_finite() {
        return Err(IngestError::MalformedRow { line, reason: format!("{what}: non-finite value") });
    }
    Ok(v)
}

fn parse_opt_f64(s: &str, what: &str, line: u64) -> Result<Option<f64>, IngestError> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_f64(s, what, line).map(Some)
    }
}

fn parse_year(s: &str, line: u64) -> Result<i32, IngestError> {
    s.parse()
        .map_err(|_| IngestError::MalformedRow { line, reason: format!("year: `{s}` is not an integer") })
}

fn parse_count(s: &str, what: &str, line: u64) -> Result<u64, IngestError> {
    let v: i64 = s
        .parse()
        .map_err(|_| IngestError::MalformedRow { line, reason: format!("{what}: `{s}` is not an integer") })?;
    if v < 0 {
        return Err(IngestError::NegativeCount { line });
    }
    Ok(v as u64)
}

/// Parses `YYYY-MM-DD` (or `YYYY-MM`) into its half-year period.
fn parse_period(s: &str, line: u64) -> Result<Period, IngestError> {
    let bad = || IngestError::MalformedRow { line, reason: format!("date: `{s}` is not YYYY-MM-DD") };
    let mut parts = s.split('-');
    let year: i32 = parts.next().and_then(|y| y.parse().ok()).ok_or_else(bad)?;
    let month: u32 = parts.next().and_then(|m| m.parse().ok()).ok_or_else(bad)?;
    if let Some(day) = parts.next() {
        let d: u32 = day.parse().map_err(|_| bad())?;
        if !(1..=31).contains(&d) {
            return Err(bad());
        }
    }
    if parts.next().is_some() || !(1..=12).contains(&month) {
        return Err(bad());
    }
    Ok(Period { year, half: if month <= 6 { 1 } else { 2 } })
}

// ---------------------------------------------------------------------------
// AFV

#[derive(Default)]
struct AfvAccumulator {
    counts: [u64; 4],
    pev: Option<(u64, u64)>,
    non_pev: Option<u64>,
    road_mileage: Option<f64>,
    vmt: Option<f64>,
}

pub fn parse_afv_csv(path: &Path) -> Result<Vec<AfvRecord>, IngestError> {
    parse_afv_reader(open(path)?)
}

/// Parses long-format AFV registrations (`county,date,fuel_type,count,road_mileage,vmt`)
/// into one record per county and half-year.
pub fn parse_afv_reader<R: Read>(input: R) -> Result<Vec<AfvRecord>, IngestError> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr)?;
    let c_county = header.find("county")?;
    let c_date = header.find("date")?;
    let c_fuel = header.find("fuel_type")?;
    let c_count = header.find("count")?;
    let c_miles = header.find("road_mileage")?;
    let c_vmt = header.find("vmt")?;

    let mut groups: BTreeMap<(County, Period), AfvAccumulator> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let county = County::new(field(&rec, c_county, line)?);
        if county.as_str().is_empty() {
            return Err(IngestError::MalformedRow { line, reason: "empty county".into() });
        }
        let period = parse_period(field(&rec, c_date, line)?, line)?;
        let fuel = field(&rec, c_fuel, line)?.to_uppercase().replace('-', "_");
        let count = parse_count(field(&rec, c_count, line)?, "count", line)?;
        let miles = parse_opt_f64(field(&rec, c_miles, line)?, "road_mileage", line)?;
        let vmt = parse_opt_f64(field(&rec, c_vmt, line)?, "vmt", line)?;
        if miles.is_some_and(|m| m < 0.0) || vmt.is_some_and(|v| v < 0.0) {
            return Err(IngestError::MalformedRow { line, reason: "negative road_mileage or vmt".into() });
        }

        let acc = groups.entry((county, period)).or_default();
        match fuel.as_str() {
            "BEV" => acc.counts[0] += count,
            "PHEV" => acc.counts[1] += count,
            "NEV" => acc.counts[2] += count,
            "HEV" => acc.counts[3] += count,
            "PEV" => {
                let prev = acc.pev.map_or(0, |(c, _)| c);
                acc.pev = Some((prev + count, line));
            }
            "NON_PEV" => acc.non_pev = Some(acc.non_pev.unwrap_or(0) + count),
            other => {
                return Err(IngestError::MalformedRow { line, reason: format!("unknown fuel_type `{other}`") })
            }
        }
        if miles.is_some() {
            acc.road_mileage = miles;
        }
        if vmt.is_some() {
            acc.vmt = vmt;
        }
    }

    let mut out = Vec::with_capacity(groups.len());
    for ((county, period), acc) in groups {
        let [bev, phev, nev, hev] = acc.counts;
        let pev = match acc.pev {
            Some((reported, line)) if reported != bev + phev => {
                return Err(IngestError::MalformedRow {
                    line,
                    reason: format!("PEV count {reported} differs from BEV + PHEV = {}", bev + phev),
                })
            }
            _ => bev + phev,
        };
        out.push(AfvRecord {
            county,
            period,
            bev_count: bev,
            phev_count: phev,
            nev_count: nev,
            hev_count: hev,
            pev_count: pev,
            non_pev_count: acc.non_pev.unwrap_or(nev + hev),
            road_mileage: acc.road_mileage,
            vmt: acc.vmt,
        });
    }
    Ok(out)
}

/// Annual AFV snapshot for one county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualAfv {
    pub county: County,
    pub year: i32,
    /// Half-year whose cumulative counts were taken.
    pub source_half: u8,
    pub record: AfvRecord,
}

/// Collapses half-year records to one per county-year. Registration counts
/// are cumulative, so the latest half observed in a year wins.
pub fn annualize_afv(records: &[AfvRecord]) -> Vec<AnnualAfv> {
    let mut latest: BTreeMap<(County, i32), &AfvRecord> = BTreeMap::new();
    for r in records {
        let key = (r.county.clone(), r.period.year);
        match latest.get(&key) {
            Some(prev) if prev.period.half >= r.period.half => {}
            _ => {
                latest.insert(key, r);
            }
        }
    }
    latest
        .into_iter()
        .map(|((county, year), r)| AnnualAfv { county, year, source_half: r.period.half, record: r.clone() })
        .collect()
}

// ---------------------------------------------------------------------------
// Socioeconomic

pub fn parse_socio_csv(path: &Path) -> Result<Vec<SocioRecord>, IngestError> {
    parse_socio_reader(open(path)?)
}

/// Parses census rows. Fraction columns whose header ends in `%` hold
/// percentages and are divided by 100.
pub fn parse_socio_reader<R: Read>(input: R) -> Result<Vec<SocioRecord>, IngestError> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr)?;
    let c_county = header.find("county")?;
    let c_year = header.find("year")?;
    let c_pop = header.find("population")?;
    let c_change = header.find("population_change")?;
    let c_edu = header.find_fraction("education_pct")?;
    let c_unemp = header.find_fraction("unemployment_rate")?;
    let c_pov = header.find_fraction("poverty_pct")?;
    let c_lo = header.find_fraction("poverty_lower")?;
    let c_hi = header.find_fraction("poverty_upper")?;
    let c_income = header.find("median_household_income")?;

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let county = County::new(field(&rec, c_county, line)?);
        let year = parse_year(field(&rec, c_year, line)?, line)?;
        let population = parse_count(field(&rec, c_pop, line)?, "population", line)?;
        if population == 0 {
            return Err(IngestError::MalformedRow { line, reason: "population must be positive".into() });
        }
        let population_change = parse_f64(field(&rec, c_change, line)?, "population_change", line)?;
        let fraction = |(idx, div): (usize, f64), what: &str| -> Result<f64, IngestError> {
            let v = parse_f64(field(&rec, idx, line)?, what, line)? / div;
            if !(0.0..=1.0).contains(&v) {
                return Err(IngestError::MalformedRow { line, reason: format!("{what} = {v} outside [0, 1]") });
            }
            Ok(v)
        };
        let education_pct = fraction(c_edu, "education_pct")?;
        let unemployment_rate = fraction(c_unemp, "unemployment_rate")?;
        let poverty_pct = fraction(c_pov, "poverty_pct")?;
        let poverty_lower = fraction(c_lo, "poverty_lower")?;
        let poverty_upper = fraction(c_hi, "poverty_upper")?;
        if !(poverty_lower <= poverty_pct && poverty_pct <= poverty_upper) {
            return Err(IngestError::BoundViolation {
                line,
                reason: format!(
                    "expected poverty_lower <= poverty_pct <= poverty_upper, got {poverty_lower} / {poverty_pct} / {poverty_upper}"
                ),
            });
        }
        let median_household_income = parse_f64(field(&rec, c_income, line)?, "median_household_income", line)?;
        if median_household_income <= 0.0 {
            return Err(IngestError::MalformedRow { line, reason: "median_household_income must be positive".into() });
        }
        if !seen.insert((county.clone(), year)) {
            return Err(IngestError::MalformedRow { line, reason: format!("duplicate row for {county} {year}") });
        }
        out.push(SocioRecord {
            county,
            year,
            population,
            population_change,
            education_pct,
            unemployment_rate,
            poverty_pct,
            poverty_lower,
            poverty_upper,
            median_household_income,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Air quality

pub fn parse_aqi_csv(path: &Path) -> Result<Vec<PollutantRecord>, IngestError> {
    parse_aqi_reader(open(path)?)
}

/// Parses monitor readings and averages all monitors of a county-year.
/// Blank cells mean the monitor does not measure that pollutant.
pub fn parse_aqi_reader<R: Read>(input: R) -> Result<Vec<PollutantRecord>, IngestError> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr)?;
    let c_county = header.find("county")?;
    let c_year = header.find("year")?;
    header.find("monitor_id")?;
    let cols = Pollutant::ALL.map(|p| header.find(p.column()));
    let mut idx = [0usize; 5];
    for (slot, c) in idx.iter_mut().zip(cols) {
        *slot = c?;
    }

    let mut sums: BTreeMap<(County, i32), [(f64, u32); 5]> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let county = County::new(field(&rec, c_county, line)?);
        let year = parse_year(field(&rec, c_year, line)?, line)?;
        let acc = sums.entry((county, year)).or_insert([(0.0, 0); 5]);
        for (k, p) in Pollutant::ALL.iter().enumerate() {
            if let Some(v) = parse_opt_f64(field(&rec, idx[k], line)?, p.column(), line)? {
                if v < 0.0 {
                    return Err(IngestError::MalformedRow { line, reason: format!("{p} reading is negative") });
                }
                acc[k].0 += v;
                acc[k].1 += 1;
            }
        }
    }

    let mut out = Vec::with_capacity(sums.len());
    for ((county, year), acc) in sums {
        let mut values = [0.0; 5];
        for (k, (sum, n)) in acc.iter().enumerate() {
            if *n == 0 {
                return Err(IngestError::NoPollutantData { county, year, pollutant: Pollutant::ALL[k] });
            }
            values[k] = sum / f64::from(*n);
        }
        out.push(PollutantRecord { county, year, values });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Join

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingAfv,
    MissingSocio,
    MissingAqi,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropReason::MissingAfv => "missing_afv",
            DropReason::MissingSocio => "missing_socio",
            DropReason::MissingAqi => "missing_aqi",
        })
    }
}

/// A county-year present in some sources but not all, and so left out.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DroppedRow {
    pub county: County,
    pub year: i32,
    pub reasons: Vec<DropReason>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelBuild {
    pub panel: Panel,
    pub dropped: Vec<DroppedRow>,
}

/// Joins half-year AFV records, census rows, and pollutant records on
/// `(county, year)`.
pub fn build_panel(
    afv: &[AfvRecord],
    socio: &[SocioRecord],
    aqi: &[PollutantRecord],
) -> Result<PanelBuild, IngestError> {
    build_panel_annual(&annualize_afv(afv), socio, aqi)
}

/// Same as [`build_panel`] for AFV data already collapsed to years.
pub fn build_panel_annual(
    afv: &[AnnualAfv],
    socio: &[SocioRecord],
    aqi: &[PollutantRecord],
) -> Result<PanelBuild, IngestError> {
    let afv_by: BTreeMap<(&County, i32), &AnnualAfv> = afv.iter().map(|a| ((&a.county, a.year), a)).collect();
    let socio_by: BTreeMap<(&County, i32), &SocioRecord> = socio.iter().map(|s| ((&s.county, s.year), s)).collect();
    let aqi_by: BTreeMap<(&County, i32), &PollutantRecord> = aqi.iter().map(|p| ((&p.county, p.year), p)).collect();

    let keys: BTreeSet<(&County, i32)> =
        afv_by.keys().chain(socio_by.keys()).chain(aqi_by.keys()).copied().collect();

    let mut rows = Vec::new();
    let mut dropped = Vec::new();
    for key in keys {
        match (afv_by.get(&key), socio_by.get(&key), aqi_by.get(&key)) {
            (Some(a), Some(s), Some(p)) => {
                let r = &a.record;
                rows.push(PanelRow {
                    county: key.0.clone(),
                    year: key.1,
                    total_afv: r.total_afv(),
                    bev_count: r.bev_count,
                    phev_count: r.phev_count,
                    nev_count: r.nev_count,
                    hev_count: r.hev_count,
                    pev_count: r.pev_count,
                    non_pev_count: r.non_pev_count,
                    road_mileage: r.road_mileage,
                    vmt: r.vmt,
                    population: s.population,
                    population_change: s.population_change,
                    education_pct: s.education_pct,
                    unemployment_rate: s.unemployment_rate,
                    poverty_pct: s.poverty_pct,
                    poverty_lower: s.poverty_lower,
                    poverty_upper: s.poverty_upper,
                    median_household_income: s.median_household_income,
                    pollutants: p.values,
                    aqi_score: None,
                });
            }
            (a, s, p) => {
                let mut reasons = Vec::new();
                if a.is_none() {
                    reasons.push(DropReason::MissingAfv);
                }
                if s.is_none() {
                    reasons.push(DropReason::MissingSocio);
                }
                if p.is_none() {
                    reasons.push(DropReason::MissingAqi);
                }
                dropped.push(DroppedRow { county: key.0.clone(), year: key.1, reasons });
            }
        }
    }
    if rows.is_empty() {
        return Err(IngestError::EmptyPanel);
    }
    let panel = Panel::new(rows)?;
    panel.validate()?;
    Ok(PanelBuild { panel, dropped })
}

// ---------------------------------------------------------------------------
// Canonical panel CSV

/// Column order of the canonical panel file.
pub const PANEL_COLUMNS: &[&str] = &[
    "county",
    "year",
    "total_afv",
    "bev_count",
    "phev_count",
    "nev_count",
    "hev_count",
    "pev_count",
    "non_pev_count",
    "road_mileage",
    "vmt",
    "population",
    "population_change",
    "education_pct",
    "unemployment_rate",
    "poverty_pct",
    "poverty_lower",
    "poverty_upper",
    "median_household_income",
    "so2",
    "o3",
    "no2",
    "pm25",
    "co",
    "aqi_score",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes the panel as canonical CSV. Floats use the shortest repr that
/// round-trips, so write → read → write is byte-stable.
pub fn write_panel_csv<W: Write>(panel: &Panel, out: W) -> Result<(), IngestError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(PANEL_COLUMNS)?;
    for r in panel.rows() {
        let mut rec: Vec<String> = vec![
            r.county.to_string(),
            r.year.to_string(),
            r.total_afv.to_string(),
            r.bev_count.to_string(),
            r.phev_count.to_string(),
            r.nev_count.to_string(),
            r.hev_count.to_string(),
            r.pev_count.to_string(),
            r.non_pev_count.to_string(),
            opt(r.road_mileage),
            opt(r.vmt),
            r.population.to_string(),
            r.population_change.to_string(),
            r.education_pct.to_string(),
            r.unemployment_rate.to_string(),
            r.poverty_pct.to_string(),
            r.poverty_lower.to_string(),
            r.poverty_upper.to_string(),
            r.median_household_income.to_string(),
        ];
        rec.extend(r.pollutants.iter().map(f64::to_string));
        rec.push(opt(r.aqi_score));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| IngestError::Io { path: "<panel>".into(), source })?;
    Ok(())
}

pub fn panel_to_csv_string(panel: &Panel) -> String {
    let mut buf = Vec::new();
    write_panel_csv(panel, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("csv output is utf-8")
}

pub fn write_panel_file(panel: &Panel, path: &Path) -> Result<(), IngestError> {
    let file = File::create(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })?;
    write_panel_csv(panel, file)
}

pub fn read_panel_file(path: &Path) -> Result<Panel, IngestError> {
    read_panel_csv(open(path)?)
}

pub fn read_panel_csv<R: Read>(input: R) -> Result<Panel, IngestError> {
    let mut rdr = reader(input);
    let header = Header::read(&mut rdr)?;
    let mut idx = Vec::with_capacity(PANEL_COLUMNS.len());
    for c in PANEL_COLUMNS {
        idx.push(header.find(c)?);
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let get = |k: usize| field(&rec, idx[k], line);
        let count = |k: usize| -> Result<u64, IngestError> { parse_count(get(k)?, PANEL_COLUMNS[k], line) };
        let real = |k: usize| -> Result<f64, IngestError> { parse_f64(get(k)?, PANEL_COLUMNS[k], line) };
        let maybe = |k: usize| -> Result<Option<f64>, IngestError> { parse_opt_f64(get(k)?, PANEL_COLUMNS[k], line) };
        let row = PanelRow {
            county: County::new(get(0)?),
            year: parse_year(get(1)?, line)?,
            total_afv: count(2)?,
            bev_count: count(3)?,
            phev_count: count(4)?,
            nev_count: count(5)?,
            hev_count: count(6)?,
            pev_count: count(7)?,
            non_pev_count: count(8)?,
            road_mileage: maybe(9)?,
            vmt: maybe(10)?,
            population: count(11)?,
            population_change: real(12)?,
            education_pct: real(13)?,
            unemployment_rate: real(14)?,
            poverty_pct: real(15)?,
            poverty_lower: real(16)?,
            poverty_upper: real(17)?,
            median_household_income: real(18)?,
            pollutants: [real(19)?, real(20)?, real(21)?, real(22)?, real(23)?],
            aqi_score: maybe(24)?,
        };
        row.validate().map_err(|reason| IngestError::MalformedRow { line, reason })?;
        rows.push(row);
    }
    Panel::new(rows)
}
