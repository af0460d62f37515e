//! Table- and figure-shaped report files.

use thiserror::Error;

use crate::fixtures::TABLE1;
use crate::ingest::{County, Panel, PanelRow};
use crate::model::{predict, EvalPair, ModelError, RegressionModel};
use crate::stats::{rank_desc, se_rank, CountyRanking, StatsError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("table line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("table has no rows")]
    Empty,
    #[error("no panel rows for the requested counties")]
    NoRows,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl ReportError {
    pub fn code(&self) -> &'static str {
        match self {
            ReportError::Malformed { .. } => "Malformed",
            ReportError::Empty => "Empty",
            ReportError::NoRows => "NoRows",
            ReportError::Model(e) => e.code(),
            ReportError::Stats(e) => e.code(),
        }
    }
}

pub const TABLE2_HEADER: &str = "County\tAQI Score\tPredicted AQI";

/// Predicted-vs-actual table: `County,YY<TAB>actual<TAB>predicted`, three
/// decimals, in the order given.
pub fn render_table2(pairs: &[EvalPair]) -> String {
    let mut s = format!("{TABLE2_HEADER}\n");
    for p in pairs {
        s.push_str(&format!("{},{:02}\t{:.3}\t{:.3}\n", p.county, p.year.rem_euclid(100), p.actual, p.predicted));
    }
    s
}

/// Mean squared residual over the printed (rounded) rows of a table
/// produced by [`render_table2`].
pub fn table2_mse(text: &str) -> Result<f64, ReportError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.starts_with("MSE\t") {
            break;
        }
        let bad = |reason: &str| ReportError::Malformed { line: i + 1, reason: reason.to_string() };
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 3 {
            return Err(bad("expected three tab-separated cells"));
        }
        let actual: f64 = cells[1].parse().map_err(|_| bad("actual is not a number"))?;
        let predicted: f64 = cells[2].parse().map_err(|_| bad("predicted is not a number"))?;
        sum += (actual - predicted).powi(2);
        n += 1;
    }
    if n == 0 {
        return Err(ReportError::Empty);
    }
    Ok(sum / n as f64)
}

/// [`render_table2`] followed by an `MSE` line recomputed from those rows.
pub fn render_table2_report(pairs: &[EvalPair]) -> Result<String, ReportError> {
    let mut s = render_table2(pairs);
    let mse = table2_mse(&s)?;
    s.push_str(&format!("MSE\t{mse:.6}\n"));
    Ok(s)
}

/// Long-form plot data: one line per county-year.
pub fn fig5_csv(pairs: &[EvalPair]) -> String {
    let mut s = String::from("county,year,actual,predicted,residual\n");
    for p in pairs {
        s.push_str(&format!("{},{},{},{},{}\n", p.county, p.year, p.actual, p.predicted, p.predicted - p.actual));
    }
    s
}

/// Model predictions next to observed scores for every panel row of the
/// named counties, ordered by county then year.
pub fn prediction_pairs(model: &RegressionModel, panel: &Panel, counties: &[County]) -> Result<Vec<EvalPair>, ReportError> {
    let mut out = Vec::new();
    for c in counties {
        for r in panel.rows().iter().filter(|r| &r.county == c) {
            let Some(actual) = r.aqi_score else { continue };
            out.push(EvalPair { county: r.county.clone(), year: r.year, actual, predicted: predict(model, r)? });
        }
    }
    if out.is_empty() {
        return Err(ReportError::NoRows);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingRow {
    pub county: County,
    pub population: u64,
    pub total_afv: u64,
    pub afv_rank: usize,
    pub se_rank: usize,
}

fn join_rankings(rows: Vec<(County, u64, u64)>, afv: &CountyRanking, se: &CountyRanking) -> Vec<RankingRow> {
    let mut out: Vec<RankingRow> = rows
        .into_iter()
        .map(|(county, population, total_afv)| RankingRow {
            afv_rank: afv.rank_of(&county).expect("ranked"),
            se_rank: se.rank_of(&county).expect("ranked"),
            county,
            population,
            total_afv,
        })
        .collect();
    out.sort_by_key(|r| r.afv_rank);
    out
}

/// AFV and socioeconomic ranks for one year's rows, ordered by AFV rank.
pub fn rank_table(rows: &[&PanelRow]) -> Result<Vec<RankingRow>, ReportError> {
    let totals: Vec<(County, f64)> = rows.iter().map(|r| (r.county.clone(), r.total_afv as f64)).collect();
    let afv = rank_desc(&totals);
    let se = se_rank(rows)?;
    let base = rows.iter().map(|r| (r.county.clone(), r.population, r.total_afv)).collect();
    Ok(join_rankings(base, &afv, &se))
}

/// Ranking table of the embedded county fixture: AFV ranks are computed
/// from the totals, socioeconomic ranks are the printed ones.
pub fn table1_rank_table() -> Vec<RankingRow> {
    let totals: Vec<(County, f64)> = TABLE1.iter().map(|t| (County::new(t.county), t.total_afv as f64)).collect();
    let afv = rank_desc(&totals);
    let se = CountyRanking {
        order: crate::stats::RankOrder::Ascending,
        entries: TABLE1
            .iter()
            .map(|t| crate::stats::RankEntry { county: County::new(t.county), value: t.se_rank as f64, rank: t.se_rank })
            .collect(),
    };
    let base = TABLE1.iter().map(|t| (County::new(t.county), t.population, t.total_afv)).collect();
    join_rankings(base, &afv, &se)
}

pub fn rankings_csv(rows: &[RankingRow]) -> String {
    let mut s = String::from("county,population,total_afv,afv_rank,se_rank\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{}\n", r.county, r.population, r.total_afv, r.afv_rank, r.se_rank));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{table2_pairs, TABLE2_TEXT};

    #[test]
    fn table2_layout_round_trips() {
        assert_eq!(render_table2(&table2_pairs()), TABLE2_TEXT);
    }

    #[test]
    fn mse_line_matches_rows() {
        let report = render_table2_report(&table2_pairs()).unwrap();
        assert!(report.starts_with(TABLE2_TEXT));
        assert_eq!(report.lines().last().unwrap(), "MSE\t0.003521");
        let mse = table2_mse(&report).unwrap();
        assert!((mse - 0.0035212222).abs() < 1e-9);
    }

    #[test]
    fn malformed_rows_are_reported() {
        let err = table2_mse("h\nA,16\t0.5\n").unwrap_err();
        assert!(matches!(err, ReportError::Malformed { line: 2, .. }));
        assert!(matches!(table2_mse("h\n"), Err(ReportError::Empty)));
    }

    #[test]
    fn fixture_ranks_follow_printed_order() {
        let rows = table1_rank_table();
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.afv_rank, i + 1);
            assert_eq!(r.county.as_str(), TABLE1[i].county);
            assert_eq!(r.se_rank, TABLE1[i].se_rank);
        }
        let csv = rankings_csv(&rows);
        assert_eq!(csv.lines().nth(1).unwrap(), "Bergen,953819,28304,1,1");
    }
}
