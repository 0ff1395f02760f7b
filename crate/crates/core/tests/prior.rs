mod common;

use dsse::estimator::Context;
use dsse::linalg::{
    complexify_covariance, max_abs, min_eigenvalue, vec_inf_norm, CMatrix, CVector, C64,
};
use dsse::measurement::PseudoMeasurements;
use dsse::network::{build_admittance, compute_injections};
use dsse::prior::{
    fixed_point_power_flow, prior_covariances, rect_fixed_point_power_flow, solve_power_flow,
    Linearization, PriorArtifact, SolverConfig,
};
use proptest::prelude::*;

#[test]
fn recovers_voltage_that_generated_the_injections() {
    // Pick a voltage, derive s = V conj(I(V)), then solve the power flow for s.
    let net = common::toy();
    let ctx = Context::new(&net).unwrap();
    let target = ctx.basis.lift(&CVector::from_fn(ctx.basis.dim(), |k, _| {
        C64::new(-0.02 - 0.003 * k as f64, 0.01)
    }))
    .unwrap();
    let (_, s) = compute_injections(&ctx.adm, &ctx.v_source, &target).unwrap();
    let mut s_clean = s.clone();
    for &e in &ctx.eps {
        s_clean[e] = C64::new(0.0, 0.0);
    }
    let pf = solve_power_flow(&ctx.adm, &ctx.v_source, &s_clean, &ctx.eps, &SolverConfig::default())
        .unwrap();
    assert!(pf.converged);
    assert!(vec_inf_norm(&(&pf.v - &target)) < 1e-7);
}

#[test]
fn every_iterate_satisfies_zero_injection() {
    let net = common::toy();
    let ctx = Context::new(&net).unwrap();
    let s = net.base_loads().unwrap() * C64::new(2.0, 0.0);
    let cfg = SolverConfig { record_iterates: true, ..SolverConfig::default() };
    let pf = solve_power_flow(&ctx.adm, &ctx.v_source, &s, &ctx.eps, &cfg).unwrap();
    let its = pf.diagnostics.iterates.as_ref().unwrap();
    assert_eq!(its.len(), pf.iterations + 1);
    assert!(its.iter().all(|v| ctx.feasibility(v) < 1e-12));
    // The mismatch history ends below the tolerance.
    assert!(*pf.diagnostics.history.last().unwrap() < 1e-8);
}

#[test]
fn nonzero_injection_at_constrained_entry_is_rejected() {
    let net = common::toy();
    let ctx = Context::new(&net).unwrap();
    let mut s = net.base_loads().unwrap();
    s[ctx.eps[0]] = C64::new(-0.1, 0.0);
    assert!(solve_power_flow(&ctx.adm, &ctx.v_source, &s, &ctx.eps, &SolverConfig::default()).is_err());
}

#[test]
fn stops_at_iteration_limit_without_error() {
    let net = common::toy();
    let ctx = Context::new(&net).unwrap();
    let s = net.base_loads().unwrap();
    let cfg = SolverConfig { max_iter: 1, ..SolverConfig::default() };
    let pf = solve_power_flow(&ctx.adm, &ctx.v_source, &s, &ctx.eps, &cfg).unwrap();
    assert!(!pf.converged);
    assert_eq!(pf.iterations, 1);
}

#[test]
fn covariance_matches_columnwise_sensitivity() {
    // Sigma = sum_k sigma^2 |S_k|^2 g_k g_k^*, with g_k = Yd^-1 e_k / conj(V0_k)
    // the sensitivity of the first fixed-point step to conj(S_k).
    let net = common::toy();
    let adm = build_admittance(&net).unwrap();
    let ctx = Context::new(&net).unwrap();
    let s = net.base_loads().unwrap();
    let pseudo = PseudoMeasurements::new(s.clone(), 0.3, &ctx.eps).unwrap();
    let (cov, rect) = prior_covariances(&adm, &ctx.v0, &pseudo).unwrap();
    let n = s.len();
    let mut oracle = CMatrix::zeros(n, n);
    for k in 0..n {
        let mut e = CVector::zeros(n);
        e[k] = C64::new(1.0, 0.0) / ctx.v0[k].conj();
        let g = adm.solve_yd(&e).unwrap();
        oracle += &g * g.adjoint() * C64::new(0.09 * s[k].norm_sqr(), 0.0);
    }
    assert!(max_abs(&(&cov - &oracle)) < 1e-14);
    assert!(max_abs(&(complexify_covariance(&rect) - &cov)) < 1e-14);
}

#[test]
fn prior_range_lies_in_feasible_subspace() {
    let net = common::ieee123();
    let ctx = Context::new(&net).unwrap();
    let pseudo = PseudoMeasurements::new(net.base_loads().unwrap(), 0.5, &ctx.eps).unwrap();
    let est = fixed_point_power_flow(&ctx.adm, &ctx.v_source, &pseudo, &ctx.eps, &SolverConfig::default()).unwrap();
    let (rows, _) = ctx.adm.constraint_rows(&ctx.eps);
    assert!(max_abs(&(&rows * &est.cov)) < 1e-12);
    assert!(min_eigenvalue(&est.cov) > -1e-12);
    assert!(est.feasibility_residual < 1e-10);
}

#[test]
fn converged_linearization_differs_but_stays_psd() {
    let net = common::toy();
    let ctx = Context::new(&net).unwrap();
    let pseudo = PseudoMeasurements::new(net.base_loads().unwrap(), 0.5, &ctx.eps).unwrap();
    let a = fixed_point_power_flow(&ctx.adm, &ctx.v_source, &pseudo, &ctx.eps, &SolverConfig::default()).unwrap();
    let cfg = SolverConfig { linearization: Linearization::Converged, ..SolverConfig::default() };
    let b = rect_fixed_point_power_flow(&ctx.adm, &ctx.v_source, &pseudo, &ctx.eps, &cfg).unwrap();
    assert_eq!(a.v, b.v);
    assert!(max_abs(&(&a.cov - &b.cov)) > 1e-8);
    assert!(min_eigenvalue(&b.cov) > -1e-14);
}

#[test]
fn artifact_round_trip_and_network_check() {
    let net = common::toy();
    let ctx = Context::new(&net).unwrap();
    let pseudo = PseudoMeasurements::new(net.base_loads().unwrap(), 0.5, &ctx.eps).unwrap();
    let est = fixed_point_power_flow(&ctx.adm, &ctx.v_source, &pseudo, &ctx.eps, &SolverConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("prior.json");
    PriorArtifact::new(&net, &est, 0.5).save(&p).unwrap();
    let back = PriorArtifact::load(&p).unwrap().to_estimate(&net).unwrap();
    assert_eq!(back.v, est.v);
    assert_eq!(back.cov, est.cov);
    assert_eq!(back.cov_rect, est.cov_rect);

    let mut other = net.clone();
    other.lines[1].z *= C64::new(1.01, 0.0);
    let err = PriorArtifact::load(&p).unwrap().to_estimate(&other).unwrap_err();
    assert!(err.to_string().contains("different network"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn power_flow_solves_random_loadings(scale in prop::collection::vec(0.0f64..2.0, 9)) {
        let net = common::toy();
        let ctx = Context::new(&net).unwrap();
        let base = net.base_loads().unwrap();
        let s = CVector::from_fn(base.len(), |k, _| base[k] * scale[k]);
        let pf = solve_power_flow(&ctx.adm, &ctx.v_source, &s, &ctx.eps, &SolverConfig::default()).unwrap();
        prop_assert!(pf.converged);
        let (_, s_v) = compute_injections(&ctx.adm, &ctx.v_source, &pf.v).unwrap();
        for k in 0..s.len() {
            if ctx.eps.contains(&k) {
                continue;
            }
            prop_assert!((s_v[k] - s[k]).norm() < 1e-8);
        }
        prop_assert!(pf.diagnostics.max_iterate_residual < 1e-12);
    }
}
