//! Pearson correlation, county rankings, and AFV growth accounting.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AfvRecord, County, Panel, PanelRow, Period, VehicleType};

/// Slack allowed on the `[-1, 1]` range of a correlation coefficient.
pub const CORRELATION_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("series lengths differ ({0} vs {1}) or are shorter than 2")]
    LengthMismatch(usize, usize),
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("unknown or missing covariate `{0}`")]
    MissingCovariate(String),
    #[error("need at least two periods for {0}")]
    InsufficientPeriods(String),
    #[error("rankings cover different counties")]
    CountyMismatch,
}

impl StatsError {
    pub fn code(&self) -> &'static str {
        match self {
            StatsError::LengthMismatch(..) => "LengthMismatch",
            StatsError::ZeroVariance(_) => "ZeroVariance",
            StatsError::MissingCovariate(_) => "MissingCovariate",
            StatsError::InsufficientPeriods(_) => "InsufficientPeriods",
            StatsError::CountyMismatch => "CountyMismatch",
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample Pearson correlation coefficient, clamped into `[-1, 1]`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let mx = mean(x);
    let my = mean(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance("x".into()));
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance("y".into()));
    }
    // sqrt of the product keeps r exactly 1 when x == y
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub variables: Vec<String>,
    /// Row-major `variables.len()²` coefficients.
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.variables.len() + j]
    }

    pub fn lookup(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.variables.iter().position(|v| v == a)?;
        let j = self.variables.iter().position(|v| v == b)?;
        Some(self.get(i, j))
    }

    /// Long-form `(variable_a, variable_b, r)` triples over every ordered pair.
    pub fn triples(&self) -> Vec<(&str, &str, f64)> {
        let n = self.variables.len();
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push((self.variables[i].as_str(), self.variables[j].as_str(), self.get(i, j)));
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable_a,variable_b,r\n");
        for (a, b, r) in self.triples() {
            s.push_str(&format!("{a},{b},{r}\n"));
        }
        s
    }
}

fn column(rows: &[&PanelRow], name: &str) -> Result<Vec<f64>, StatsError> {
    rows.iter()
        .map(|r| r.covariate(name).ok_or_else(|| StatsError::MissingCovariate(name.to_string())))
        .collect()
}

/// Pairwise Pearson coefficients over named panel columns. The diagonal is
/// exactly 1 and the upper triangle is mirrored into the lower.
pub fn correlation_matrix(panel: &Panel, variables: &[&str]) -> Result<CorrelationMatrix, StatsError> {
    let rows: Vec<&PanelRow> = panel.rows().iter().collect();
    correlation_matrix_rows(&rows, variables)
}

pub fn correlation_matrix_rows(rows: &[&PanelRow], variables: &[&str]) -> Result<CorrelationMatrix, StatsError> {
    let cols: Vec<Vec<f64>> = variables.iter().map(|v| column(rows, v)).collect::<Result<_, _>>()?;
    let n = variables.len();
    for (name, c) in variables.iter().zip(&cols) {
        if c.len() < 2 {
            return Err(StatsError::LengthMismatch(c.len(), c.len()));
        }
        let m = mean(c);
        if c.iter().all(|v| *v == m) {
            return Err(StatsError::ZeroVariance((*name).to_string()));
        }
    }
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
        for j in (i + 1)..n {
            let r = pearson(&cols[i], &cols[j]).map_err(|e| match e {
                StatsError::ZeroVariance(_) => StatsError::ZeroVariance(variables[j].to_string()),
                other => other,
            })?;
            values[i * n + j] = r;
            values[j * n + i] = r;
        }
    }
    Ok(CorrelationMatrix { variables: variables.iter().map(|s| s.to_string()).collect(), values })
}

/// Whether rank 1 holds the largest or the smallest metric value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankOrder {
    Descending,
    Ascending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub county: County,
    pub value: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountyRanking {
    pub order: RankOrder,
    /// Entries sorted by rank.
    pub entries: Vec<RankEntry>,
}

impl CountyRanking {
    pub fn rank_of(&self, county: &County) -> Option<usize> {
        self.entries.iter().find(|e| &e.county == county).map(|e| e.rank)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn rank_by(entries: &[(County, f64)], order: RankOrder) -> CountyRanking {
    let mut sorted: Vec<&(County, f64)> = entries.iter().collect();
    sorted.sort_by(|a, b| {
        let by_value = match order {
            RankOrder::Descending => b.1.total_cmp(&a.1),
            RankOrder::Ascending => a.1.total_cmp(&b.1),
        };
        by_value.then_with(|| a.0.cmp(&b.0))
    });
    CountyRanking {
        order,
        entries: sorted
            .into_iter()
            .enumerate()
            .map(|(i, (county, value))| RankEntry { county: county.clone(), value: *value, rank: i + 1 })
            .collect(),
    }
}

/// Rank 1 is the largest value; ties go to the alphabetically first county.
pub fn rank_desc(entries: &[(County, f64)]) -> CountyRanking {
    rank_by(entries, RankOrder::Descending)
}

/// Variables composited into the socioeconomic rank.
pub const SE_RANK_VARIABLES: [&str; 3] = ["median_household_income", "education_pct", "population"];

/// Socioeconomic rank of a single year's rows.
///
/// Each county is ranked (descending) on income, education, and
/// population separately; the composite is the mean of those three ranks,
/// and counties are ordered by ascending composite. The composite formula
/// is a modelling assumption: only the ingredients are fixed.
pub fn se_rank(rows: &[&PanelRow]) -> Result<CountyRanking, StatsError> {
    let mut composite: BTreeMap<County, f64> = rows.iter().map(|r| (r.county.clone(), 0.0)).collect();
    for var in SE_RANK_VARIABLES {
        let values = column(rows, var)?;
        let entries: Vec<(County, f64)> = rows.iter().map(|r| r.county.clone()).zip(values).collect();
        for e in rank_desc(&entries).entries {
            *composite.get_mut(&e.county).expect("same county set") += e.rank as f64;
        }
    }
    let entries: Vec<(County, f64)> = composite
        .into_iter()
        .map(|(c, total)| (c, total / SE_RANK_VARIABLES.len() as f64))
        .collect();
    Ok(rank_by(&entries, RankOrder::Ascending))
}

/// Spearman's ρ between two rankings of the same counties.
pub fn rank_agreement(a: &CountyRanking, b: &CountyRanking) -> Result<f64, StatsError> {
    let ra: BTreeMap<&County, f64> = a.entries.iter().map(|e| (&e.county, e.rank as f64)).collect();
    let rb: BTreeMap<&County, f64> = b.entries.iter().map(|e| (&e.county, e.rank as f64)).collect();
    if ra.len() != a.entries.len() || ra.keys().ne(rb.keys()) || rb.len() != b.entries.len() {
        return Err(StatsError::CountyMismatch);
    }
    let x: Vec<f64> = ra.values().copied().collect();
    let y: Vec<f64> = rb.values().copied().collect();
    pearson(&x, &y)
}

/// Statewide growth of one vehicle type between the first and last period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeGrowth {
    pub vehicle_type: VehicleType,
    pub first_count: u64,
    pub last_count: u64,
    pub growth_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub first_period: Period,
    pub last_period: Period,
    /// All four types summed at the first period; the denominator of every
    /// `growth_pct`.
    pub fleet_total_first: u64,
    pub types: Vec<TypeGrowth>,
}

impl GrowthReport {
    pub const FORMULA: &'static str = "growth_pct = (last_count - first_count) / fleet_total_first * 100";

    pub fn growth(&self, kind: VehicleType) -> Option<f64> {
        self.types.iter().find(|t| t.vehicle_type == kind).map(|t| t.growth_pct)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("# {}\n", Self::FORMULA);
        s.push_str("vehicle_type,first_period,last_period,first_count,last_count,fleet_total_first,growth_pct\n");
        for t in &self.types {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                t.vehicle_type.label(),
                self.first_period,
                self.last_period,
                t.first_count,
                t.last_count,
                self.fleet_total_first,
                t.growth_pct
            ));
        }
        s
    }
}

fn growth_pct(first: u64, last: u64, base: u64) -> f64 {
    (last as f64 - first as f64) / base as f64 * 100.0
}

/// Per-type change between the earliest and latest half-year, summed over
/// counties and measured against the whole AFV fleet at the earliest period.
pub fn growth_by_type(records: &[AfvRecord]) -> Result<GrowthReport, StatsError> {
    let mut by_period: BTreeMap<Period, [u64; 4]> = BTreeMap::new();
    for r in records {
        let slot = by_period.entry(r.period).or_default();
        for (k, t) in VehicleType::ALL.iter().enumerate() {
            slot[k] += r.count(*t);
        }
    }
    let periods: BTreeSet<Period> = by_period.keys().copied().collect();
    if periods.len() < 2 {
        return Err(StatsError::InsufficientPeriods("AFV records".into()));
    }
    let (first_period, first) = by_period.first_key_value().map(|(p, c)| (*p, *c)).expect("non-empty");
    let (last_period, last) = by_period.last_key_value().map(|(p, c)| (*p, *c)).expect("non-empty");
    let fleet_total_first: u64 = first.iter().sum();
    if fleet_total_first == 0 {
        return Err(StatsError::ZeroVariance("fleet total at first period is zero".into()));
    }
    let types = VehicleType::ALL
        .iter()
        .enumerate()
        .map(|(k, t)| TypeGrowth {
            vehicle_type: *t,
            first_count: first[k],
            last_count: last[k],
            growth_pct: growth_pct(first[k], last[k], fleet_total_first),
        })
        .collect();
    Ok(GrowthReport { first_period, last_period, fleet_total_first, types })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(name: &str) -> County {
        County::new(name)
    }

    #[test]
    fn pearson_hand_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        // cov = 1.0 (sum of products 3 over n), var x = var y = 5/4 → 3/5
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(StatsError::LengthMismatch(1, 1)));
        assert!(matches!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(StatsError::ZeroVariance(_))));
    }

    #[test]
    fn rank_desc_ties_and_singletons() {
        let r = rank_desc(&[(c("Beta"), 5.0), (c("Alpha"), 5.0)]);
        assert_eq!(r.rank_of(&c("Alpha")), Some(1));
        assert_eq!(r.rank_of(&c("Beta")), Some(2));
        let r = rank_desc(&[(c("Solo"), 1.0)]);
        assert_eq!(r.entries[0].rank, 1);
        assert!(rank_desc(&[]).is_empty());
    }

    #[test]
    fn rank_agreement_extremes() {
        let a = rank_desc(&[(c("A"), 3.0), (c("B"), 2.0), (c("C"), 1.0)]);
        let rev = rank_desc(&[(c("A"), 1.0), (c("B"), 2.0), (c("C"), 3.0)]);
        assert_eq!(rank_agreement(&a, &a).unwrap(), 1.0);
        assert_eq!(rank_agreement(&a, &rev).unwrap(), -1.0);
        let other = rank_desc(&[(c("A"), 1.0), (c("B"), 2.0), (c("D"), 3.0)]);
        assert_eq!(rank_agreement(&a, &other), Err(StatsError::CountyMismatch));
    }

    fn afv(year: i32, half: u8, counts: [u64; 4]) -> AfvRecord {
        AfvRecord {
            county: c("X"),
            period: Period { year, half },
            bev_count: counts[0],
            phev_count: counts[1],
            nev_count: counts[2],
            hev_count: counts[3],
            pev_count: counts[0] + counts[1],
            non_pev_count: counts[2] + counts[3],
            road_mileage: None,
            vmt: None,
        }
    }

    #[test]
    fn growth_constant_is_zero() {
        let r = growth_by_type(&[afv(2016, 1, [5, 5, 5, 5]), afv(2016, 2, [5, 5, 5, 5])]).unwrap();
        assert!(r.types.iter().all(|t| t.growth_pct == 0.0));
    }

    #[test]
    fn growth_against_fleet_base() {
        // BEV 100 → 200 with 1000 vehicles at the start: 100 / 1000 = 10 %.
        let r = growth_by_type(&[afv(2016, 1, [100, 300, 100, 500]), afv(2022, 2, [200, 300, 100, 500])]).unwrap();
        assert_eq!(r.fleet_total_first, 1000);
        assert!((r.growth(VehicleType::Bev).unwrap() - 10.0).abs() < 1e-12);
        assert!(r.to_csv().starts_with("# growth_pct = "));
    }

    #[test]
    fn growth_needs_two_periods() {
        assert!(matches!(
            growth_by_type(&[afv(2016, 1, [1, 1, 1, 1])]),
            Err(StatsError::InsufficientPeriods(_))
        ));
    }

    proptest! {
        #[test]
        fn pearson_symmetry_affine_and_sign(
            xs in prop::collection::vec(-100.0f64..100.0, 3..40),
            noise in prop::collection::vec(-100.0f64..100.0, 40),
            scale in 0.01f64..100.0,
            shift in -1000.0f64..1000.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, n)| 0.5 * x + n).collect();
            let r = match pearson(&xs, &ys) { Ok(r) => r, Err(_) => return Ok(()) };
            prop_assert!((pearson(&ys, &xs).unwrap() - r).abs() < 1e-12);
            let xt: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            prop_assert!((pearson(&xt, &ys).unwrap() - r).abs() < 1e-12);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            prop_assert!((pearson(&xs, &neg).unwrap() + r).abs() < 1e-12);
        }

        #[test]
        fn ranking_survives_monotone_transforms(values in prop::collection::vec(-50.0f64..50.0, 1..30)) {
            let entries: Vec<(County, f64)> = values.iter().enumerate().map(|(i, v)| (c(&format!("C{i:02}")), *v)).collect();
            let transformed: Vec<(County, f64)> = entries.iter().map(|(k, v)| (k.clone(), v.exp() * 3.0 + v)).collect();
            // the transform must stay strictly increasing after rounding
            for (a, b) in entries.iter().zip(&transformed) {
                for (c2, d) in entries.iter().zip(&transformed) {
                    prop_assume!(a.1.partial_cmp(&c2.1) == b.1.partial_cmp(&d.1));
                }
            }
            let a = rank_desc(&entries);
            let b = rank_desc(&transformed);
            let ra: Vec<_> = a.entries.iter().map(|e| (&e.county, e.rank)).collect();
            let rb: Vec<_> = b.entries.iter().map(|e| (&e.county, e.rank)).collect();
            prop_assert_eq!(ra, rb);
            let mut ranks: Vec<usize> = a.entries.iter().map(|e| e.rank).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=values.len()).collect::<Vec<_>>());
            prop_assert!(a.entries.windows(2).all(|w| w[0].value >= w[1].value));
            if values.len() >= 2 {
                prop_assert_eq!(rank_agreement(&a, &a).unwrap(), 1.0);
            }
        }
    }
}
