//! Published county tables, embedded as test and demo fixtures.
//!
//! Only the printed columns are real data. Income and education values in
//! [`table1_se_rows`] are synthetic, chosen so the mean-of-ranks composite
//! reproduces the printed socioeconomic ranks; [`growth_fixture`] is
//! synthetic with endpoints matching the published per-type growth.

use crate::ingest::{AfvRecord, County, Panel, PanelRow, Period};
use crate::model::{fit_closed_form, Dataset, EvalPair, FeatureSpec, RegressionModel};

/// One row of the AFV / socioeconomic ranking table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Table1Row {
    pub se_rank: usize,
    pub county: &'static str,
    pub population: u64,
    pub total_afv: u64,
    pub afv_rank: usize,
}

const fn t1(se_rank: usize, county: &'static str, population: u64, total_afv: u64, afv_rank: usize) -> Table1Row {
    Table1Row { se_rank, county, population, total_afv, afv_rank }
}

/// New Jersey counties in printed order.
pub const TABLE1: [Table1Row; 21] = [
    t1(1, "Bergen", 953819, 28304, 1),
    t1(2, "Middlesex", 860807, 25674, 2),
    t1(6, "Monmouth", 645354, 19800, 3),
    t1(3, "Essex", 854917, 19138, 4),
    t1(10, "Morris", 510981, 16782, 5),
    t1(12, "Mercer", 385898, 16063, 6),
    t1(8, "Camden", 523771, 13398, 7),
    t1(11, "Burlington", 464269, 12862, 8),
    t1(13, "Somerset", 345647, 12722, 9),
    t1(5, "Ocean", 648998, 12530, 10),
    t1(7, "Union", 572114, 11995, 11),
    t1(4, "Hudson", 702463, 11193, 12),
    t1(9, "Passaic", 518117, 8755, 13),
    t1(14, "Gloucester", 304477, 6331, 14),
    t1(15, "Atlantic", 274966, 6236, 15),
    t1(18, "Hunterdon", 129924, 5362, 16),
    t1(17, "Sussex", 145543, 3625, 17),
    t1(20, "Cape May", 95661, 2888, 18),
    t1(19, "Warren", 110731, 2814, 19),
    t1(16, "Cumberland", 153627, 2302, 20),
    t1(21, "Salem", 65046, 1148, 21),
];

/// Predicted vs. observed score table, verbatim (tab-separated).
pub const TABLE2_TEXT: &str = "County\tAQI Score\tPredicted AQI
Atlantic,16\t0.573\t0.543
Atlantic,17\t0.565\t0.592
Atlantic,18\t0.577\t0.575
Atlantic,19\t0.577\t0.607
Atlantic,20\t0.577\t0.637
Atlantic,21\t0.576\t0.626
Camden,16\t0.447\t0.453
Camden,17\t0.444\t0.447
Camden,18\t0.447\t0.473
Camden,19\t0.447\t0.539
Camden,20\t0.447\t0.579
Camden,21\t0.447\t0.577
Mercer,16\t0.707\t0.694
Mercer,17\t0.707\t0.710
Mercer,18\t0.707\t0.723
Mercer,19\t0.707\t0.721
Mercer,20\t0.707\t0.768
Mercer,21\t0.706\t0.789
";

/// `(county, year, actual, predicted)` for the 18 published rows.
pub const TABLE2: [(&str, i32, f64, f64); 18] = [
    ("Atlantic", 2016, 0.573, 0.543),
    ("Atlantic", 2017, 0.565, 0.592),
    ("Atlantic", 2018, 0.577, 0.575),
    ("Atlantic", 2019, 0.577, 0.607),
    ("Atlantic", 2020, 0.577, 0.637),
    ("Atlantic", 2021, 0.576, 0.626),
    ("Camden", 2016, 0.447, 0.453),
    ("Camden", 2017, 0.444, 0.447),
    ("Camden", 2018, 0.447, 0.473),
    ("Camden", 2019, 0.447, 0.539),
    ("Camden", 2020, 0.447, 0.579),
    ("Camden", 2021, 0.447, 0.577),
    ("Mercer", 2016, 0.707, 0.694),
    ("Mercer", 2017, 0.707, 0.710),
    ("Mercer", 2018, 0.707, 0.723),
    ("Mercer", 2019, 0.707, 0.721),
    ("Mercer", 2020, 0.707, 0.768),
    ("Mercer", 2021, 0.706, 0.789),
];

pub fn table2_pairs() -> Vec<EvalPair> {
    TABLE2
        .iter()
        .map(|&(c, year, actual, predicted)| EvalPair { county: County::new(c), year, actual, predicted })
        .collect()
}

/// Swaps ranks pairwise: `(1,2), (3,4), ...` when `offset` is 0 and
/// `(2,3), (4,5), ...` when `offset` is 1. Unpaired ends stay in place.
fn paired_swap(rank: usize, offset: usize, n: usize) -> usize {
    if rank <= offset {
        return rank;
    }
    let k = rank - offset;
    let partner = if k % 2 == 1 { rank + 1 } else { rank - 1 };
    if partner > n {
        rank
    } else {
        partner
    }
}

/// Panel rows for the ranking table, one per county for `year`. Population
/// and AFV totals are the printed values; income and education are
/// synthetic (see module docs).
pub fn table1_se_rows(year: i32) -> Vec<PanelRow> {
    let n = TABLE1.len();
    TABLE1
        .iter()
        .map(|t| {
            let income_rank = paired_swap(t.se_rank, 0, n);
            let education_rank = paired_swap(t.se_rank, 1, n);
            // split the total across types so per-type invariants hold
            let bev = t.total_afv * 3 / 10;
            let phev = t.total_afv * 17 / 100;
            let nev = t.total_afv / 20;
            let hev = t.total_afv - bev - phev - nev;
            PanelRow {
                county: County::new(t.county),
                year,
                total_afv: t.total_afv,
                bev_count: bev,
                phev_count: phev,
                nev_count: nev,
                hev_count: hev,
                pev_count: bev + phev,
                non_pev_count: nev + hev,
                road_mileage: None,
                vmt: None,
                population: t.population,
                population_change: 0.0,
                education_pct: 0.58 - 0.015 * (education_rank as f64 - 1.0),
                unemployment_rate: 0.05,
                poverty_pct: 0.10,
                poverty_lower: 0.09,
                poverty_upper: 0.11,
                median_household_income: 130_000.0 - 3_000.0 * (income_rank as f64 - 1.0),
                pollutants: [1.0; 5],
                aqi_score: None,
            }
        })
        .collect()
}

/// Semiannual statewide counts whose first-to-last change, measured against
/// the 1000-vehicle fleet of 2016-H1, is BEV 15 %, PHEV 5.8 %, NEV 3.8 %,
/// HEV 1.8 %. Split over three counties.
pub fn growth_fixture() -> Vec<AfvRecord> {
    // [BEV, PHEV, NEV, HEV] statewide totals per period
    let periods: [(i32, u8, [u64; 4]); 4] = [
        (2016, 1, [300, 150, 50, 500]),
        (2018, 2, [350, 170, 60, 505]),
        (2020, 2, [400, 190, 75, 512]),
        (2022, 2, [450, 208, 88, 518]),
    ];
    let shares = [("Bergen", 5u64), ("Essex", 3), ("Salem", 2)];
    let mut out = Vec::new();
    for (year, half, totals) in periods {
        let mut assigned = [0u64; 4];
        for (i, (county, share)) in shares.iter().enumerate() {
            let mut c = [0u64; 4];
            for k in 0..4 {
                c[k] = if i + 1 == shares.len() { totals[k] - assigned[k] } else { totals[k] * share / 10 };
                assigned[k] += c[k];
            }
            out.push(AfvRecord {
                county: County::new(county),
                period: Period { year, half },
                bev_count: c[0],
                phev_count: c[1],
                nev_count: c[2],
                hev_count: c[3],
                pev_count: c[0] + c[1],
                non_pev_count: c[2] + c[3],
                road_mileage: None,
                vmt: None,
            });
        }
    }
    out
}

/// Covariates of the reference fit behind the predicted-vs-observed table.
pub const TABLE2_REFERENCE_FEATURES: [&str; 2] = ["total_afv", "median_household_income"];

/// Eighteen panel rows for the predicted-vs-observed table. Scores are the
/// printed observed values; covariates are synthetic, with `total_afv`
/// chosen so that the printed predictions are an exact linear function of it.
pub fn table2_reference_panel() -> Panel {
    let counties = ["Atlantic", "Camden", "Mercer"];
    let rows = TABLE2
        .iter()
        .map(|&(c, year, actual, predicted)| {
            let ci = counties.iter().position(|n| *n == c).expect("fixture county") as f64;
            let afv = (predicted * 1e6).round() as u64 - 400_000;
            let bev = afv / 3;
            PanelRow {
                county: County::new(c),
                year,
                total_afv: afv,
                bev_count: bev,
                phev_count: afv - bev,
                nev_count: 0,
                hev_count: 0,
                pev_count: afv,
                non_pev_count: 0,
                road_mileage: None,
                vmt: None,
                population: 300_000 + 100_000 * ci as u64,
                population_change: 0.0,
                education_pct: 0.35,
                unemployment_rate: 0.05,
                poverty_pct: 0.10,
                poverty_lower: 0.09,
                poverty_upper: 0.11,
                median_household_income: 50_000.0 + 1_000.0 * f64::from(year - 2016) + 7_000.0 * ci,
                pollutants: [1.0; 5],
                aqi_score: Some(actual),
            }
        })
        .collect();
    Panel::new(rows).expect("fixture rows are unique")
}

/// Closed-form model fitted to the printed predictions of
/// [`table2_reference_panel`]; replaying it reproduces them.
pub fn table2_reference_model() -> RegressionModel {
    let panel = table2_reference_panel();
    let spec = FeatureSpec::new(&TABLE2_REFERENCE_FEATURES, true).expect("valid spec");
    let mut data = Dataset::from_rows(panel.rows(), &spec).expect("fixture covariates present");
    for (y, id) in data.y.iter_mut().zip(&data.ids) {
        *y = TABLE2
            .iter()
            .find(|t| t.0 == id.county.as_str() && t.1 == id.year)
            .map(|t| t.3)
            .expect("fixture row");
    }
    fit_closed_form(&data, &spec).expect("well-posed fixture fit")
}
