use aqilens_core::ingest::{
    annualize_afv, build_panel, build_panel_annual, panel_to_csv_string, parse_afv_reader, parse_aqi_reader,
    parse_socio_reader, read_panel_csv, AfvRecord, DropReason, IngestError, PollutantRecord, SocioRecord,
};
use aqilens_core::model::FitMethod;
use aqilens_core::pipeline::{run, PipelineConfig};
use aqilens_core::synth::{generate, SynthConfig};

fn inputs(cfg: &SynthConfig) -> (Vec<AfvRecord>, Vec<SocioRecord>, Vec<PollutantRecord>) {
    let b = generate(cfg);
    (
        parse_afv_reader(b.afv_csv.as_bytes()).unwrap(),
        parse_socio_reader(b.socio_csv.as_bytes()).unwrap(),
        parse_aqi_reader(b.aqi_csv.as_bytes()).unwrap(),
    )
}

#[test]
fn synthetic_panel_recovers_ground_truth() {
    let cfg = SynthConfig::default();
    let truth = generate(&cfg).truth;
    let (afv, socio, aqi) = inputs(&cfg);
    for method in [FitMethod::GradientDescent, FitMethod::ClosedForm] {
        let out = run(&afv, &socio, &aqi, &PipelineConfig { method, ..Default::default() }).unwrap();
        assert_eq!(out.panel.len(), 126);
        assert_eq!((out.metrics.n_train, out.metrics.n_test), (101, 25));
        let r2 = out.test.r2.unwrap();
        assert!(r2 >= 0.95, "{method:?}: test R² {r2}");
        let expected = truth.standardized_for(&out.model.scaling.stds);
        for (w, e) in out.model.feature_weights().iter().zip(&expected) {
            assert!((w - e).abs() < 0.05, "{method:?}: weight {w} vs {e}");
        }
    }
}

#[test]
fn pipeline_is_deterministic() {
    let (afv, socio, aqi) = inputs(&SynthConfig::default());
    let a = run(&afv, &socio, &aqi, &PipelineConfig::default()).unwrap();
    let b = run(&afv, &socio, &aqi, &PipelineConfig::default()).unwrap();
    assert_eq!(panel_to_csv_string(&a.panel), panel_to_csv_string(&b.panel));
    assert_eq!(a.model.to_json(), b.model.to_json());
    assert_eq!(a.test.to_csv(), b.test.to_csv());
}

#[test]
fn input_order_does_not_matter() {
    let (mut afv, mut socio, mut aqi) = inputs(&SynthConfig::default());
    let first = panel_to_csv_string(&build_panel(&afv, &socio, &aqi).unwrap().panel);
    afv.reverse();
    socio.rotate_left(17);
    aqi.reverse();
    assert_eq!(panel_to_csv_string(&build_panel(&afv, &socio, &aqi).unwrap().panel), first);
}

#[test]
fn annualizing_first_commutes_with_join() {
    let (afv, socio, aqi) = inputs(&SynthConfig::default());
    let direct = build_panel(&afv, &socio, &aqi).unwrap();
    let annual = build_panel_annual(&annualize_afv(&afv), &socio, &aqi).unwrap();
    assert_eq!(direct, annual);
}

#[test]
fn panel_csv_round_trips_and_revalidates() {
    let (afv, socio, aqi) = inputs(&SynthConfig::default());
    let panel = build_panel(&afv, &socio, &aqi).unwrap().panel;
    let text = panel_to_csv_string(&panel);
    let back = read_panel_csv(text.as_bytes()).unwrap();
    assert_eq!(back, panel);
    back.validate().unwrap();
}

#[test]
fn missing_census_year_is_dropped_and_reported() {
    let (afv, mut socio, aqi) = inputs(&SynthConfig::default());
    socio.retain(|s| !(s.county.as_str() == "Essex" && s.year == 2019));
    let built = build_panel(&afv, &socio, &aqi).unwrap();
    assert_eq!(built.panel.len(), 125);
    assert_eq!(built.dropped.len(), 1);
    assert_eq!(built.dropped[0].county.as_str(), "Essex");
    assert_eq!(built.dropped[0].year, 2019);
    assert_eq!(built.dropped[0].reasons, vec![DropReason::MissingSocio]);
}

#[test]
fn disjoint_sources_give_empty_panel() {
    let (afv, socio, mut aqi) = inputs(&SynthConfig::default());
    for r in &mut aqi {
        r.county = format!("Elsewhere {}", r.county).as_str().into();
    }
    assert!(matches!(build_panel(&afv, &socio, &aqi), Err(IngestError::EmptyPanel)));
}
