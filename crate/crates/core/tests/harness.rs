mod common;

use dsse::harness::profile::true_injections;
use dsse::harness::report::box_plot_svg;
use dsse::harness::{
    emit_report, iqr, median, nrmse, quantile, run_scenario, Method, RunSettings, ScenarioConfig,
    Summary,
};
use dsse::linalg::{CVector, C64};
use dsse::parallel::Execution;
use dsse::Error;
use proptest::prelude::*;

fn toy_settings(methods: Vec<Method>) -> RunSettings {
    RunSettings {
        steps: 4,
        trials: 3,
        seed: 7,
        methods,
        ..RunSettings::default()
    }
}

#[test]
fn quantiles_follow_linear_interpolation() {
    let v = [4.0, 1.0, 3.0, 2.0];
    assert_eq!(quantile(&v, 0.0), 1.0);
    assert_eq!(quantile(&v, 0.25), 1.75);
    assert_eq!(median(&v), 2.5);
    assert_eq!(quantile(&v, 1.0), 4.0);
    assert_eq!(iqr(&v), 1.5);
    assert!(quantile(&[], 0.5).is_nan());
    let s = Summary::of(&v);
    assert_eq!((s.count, s.min, s.max, s.mean), (4, 1.0, 4.0, 2.5));
}

#[test]
fn nrmse_of_a_uniform_offset() {
    let a = CVector::from_element(5, C64::new(1.0, 0.0));
    let b = CVector::from_element(5, C64::new(1.0, 0.03));
    assert!((nrmse(&a, &b, 1.0) - 0.03).abs() < 1e-15);
    assert!((nrmse(&a, &b, 2.0) - 0.015).abs() < 1e-15);
}

#[test]
fn truth_keeps_zero_injections_at_zero() {
    let net = common::ieee123();
    let base = net.base_loads().unwrap();
    let s = true_injections(&base, 0.5, 3, 10, 2);
    for k in net.zero_injection_indices() {
        assert_eq!(s[k], C64::new(0.0, 0.0));
    }
    assert_eq!(s, true_injections(&base, 0.5, 3, 10, 2));
    assert_ne!(s, true_injections(&base, 0.5, 3, 10, 3));
}

#[test]
fn empty_method_list_is_a_config_error() {
    let err = run_scenario(&common::toy(), &common::toy_plan(), &toy_settings(vec![])).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn toy_scenario_is_reproducible_across_execution_modes() {
    let net = common::toy();
    let plan = common::toy_plan();
    let mut settings = toy_settings(Method::ALL.to_vec());
    settings.execution = Execution::Sequential;
    let seq = run_scenario(&net, &plan, &settings).unwrap();
    settings.execution = Execution::Parallel;
    let par = run_scenario(&net, &plan, &settings).unwrap();
    assert!(!seq.is_partial());
    assert_eq!(seq.nrmse, par.nrmse);
    for m in Method::ALL {
        let e = seq.nrmse_of(m);
        assert_eq!(e.len(), 12);
        assert!(e.iter().all(|x| x.is_finite() && *x > 0.0), "{m:?}");
    }
    settings.seed += 1;
    assert_ne!(run_scenario(&net, &plan, &settings).unwrap().nrmse, seq.nrmse);
}

#[test]
fn report_files_follow_method_order() {
    let report = run_scenario(
        &common::toy(),
        &common::toy_plan(),
        &toy_settings(vec![Method::WlsNl, Method::Prior]),
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join("nrmse.csv")).unwrap();
    assert!(csv.starts_with("t,trial,WLSNL,prior\n"));
    assert_eq!(csv.lines().count(), 13);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(summary.to_string().contains("WLSNL"));
    let svg = std::fs::read_to_string(dir.path().join("nrmse.svg")).unwrap();
    assert!(svg.find(">WLSNL<").unwrap() < svg.find(">prior<").unwrap());
}

#[test]
fn box_plot_draws_one_box_per_series() {
    let series = vec![
        ("a".to_string(), vec![1.0, 2.0, 3.0]),
        ("b".to_string(), vec![]),
        ("c".to_string(), vec![0.5, 0.7]),
    ];
    let svg = box_plot_svg("nrmse", &series, true);
    assert_eq!(svg.matches("<rect").count(), 2);
    assert!(svg.find(">a<").unwrap() < svg.find(">b<").unwrap());
    assert!(svg.find(">b<").unwrap() < svg.find(">c<").unwrap());
}

#[test]
fn scenario_paths_resolve_against_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cfg");
    std::fs::create_dir(&sub).unwrap();
    let file = sub.join("s.json");
    std::fs::write(&file, r#"{"network": "n.json", "plan": "../p.json", "output_dir": "out", "trials": 2}"#).unwrap();
    let cfg = ScenarioConfig::load(&file).unwrap();
    assert_eq!(cfg.network, sub.join("n.json"));
    assert_eq!(cfg.plan, sub.join("../p.json"));
    assert_eq!(cfg.output_dir, Some(sub.join("out")));
    assert_eq!(cfg.settings.trials, 2);
    assert_eq!(cfg.settings.steps, RunSettings::default().steps);

    std::fs::write(&file, r#"{"network": "n.json", "plan": "p.json", "trails": 2}"#).unwrap();
    let err = ScenarioConfig::load(&file).unwrap_err();
    assert!(err.to_string().contains("trails"), "{err}");
    assert!(!err.is_numerical());
}

proptest! {
    #[test]
    fn quantile_is_monotone_and_bounded(
        v in prop::collection::vec(-1e3f64..1e3, 1..40),
        p in 0.0f64..1.0,
        q in 0.0f64..1.0,
    ) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let s = Summary::of(&v);
        prop_assert!(quantile(&v, lo) <= quantile(&v, hi));
        prop_assert!(s.min <= quantile(&v, lo) && quantile(&v, hi) <= s.max);
        prop_assert!(s.iqr() >= 0.0);
    }

    #[test]
    fn nrmse_is_a_scaled_norm(
        d in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..20),
        k in 0.1f64..10.0,
    ) {
        let a = CVector::from_iterator(d.len(), d.iter().map(|&(r, i)| C64::new(r, i)));
        let z = CVector::zeros(d.len());
        let expect = a.norm() / (d.len() as f64).sqrt();
        prop_assert!((nrmse(&a, &z, 1.0) - expect).abs() <= 1e-12 * (1.0 + expect));
        prop_assert!((nrmse(&(&a * C64::new(k, 0.0)), &z, 1.0) - k * expect).abs() <= 1e-12 * (1.0 + k * expect));
    }
}
