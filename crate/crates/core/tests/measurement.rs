mod common;

use dsse::estimator::Context;
use dsse::linalg::{
    complexify_vec, max_abs, min_eigenvalue, realify_vec, vec_inf_norm, CVector, RMatrix, RVector, C64,
};
use dsse::measurement::{
    eval_nonlinear, measurement_covariances, nonlinear_jacobian, read_frames, simulate_frame,
    write_frames, MeasurementFrame, NoiseModel, RectCovarianceModel,
};
use dsse::prior::{solve_power_flow, SolverConfig};
use proptest::prelude::*;

fn toy_setup() -> (Context, dsse::measurement::CompiledPlan, CVector) {
    let net = common::toy();
    let ctx = Context::new(&net).unwrap();
    let plan = common::toy_plan().compile(&ctx.adm, &ctx.v_source).unwrap();
    let truth = solve_power_flow(&ctx.adm, &ctx.v_source, &net.base_loads().unwrap(), &ctx.eps, &SolverConfig::default())
        .unwrap()
        .v;
    (ctx, plan, truth)
}

#[test]
fn plan_splits_into_phasor_and_magnitude_rows() {
    let (_, plan, _) = toy_setup();
    assert_eq!(plan.n_lin(), 6);
    assert_eq!(plan.n_nl(), 5);
    assert_eq!(plan.linear_ids, vec![0, 1, 3, 4, 6, 7]);
}

#[test]
fn node_current_rows_reproduce_injections() {
    let (ctx, plan, truth) = toy_setup();
    let (i, _) = dsse::network::compute_injections(&ctx.adm, &ctx.v_source, &truth).unwrap();
    // Magnitude rows 0..3 are the node currents at bus B.
    let b = ctx.map().state_index("B", dsse::network::Phase::A).unwrap();
    let m = eval_nonlinear(&plan, &truth);
    for p in 0..3 {
        assert!((m[p] - i[b + p].norm()).abs() < 1e-12);
    }
}

#[test]
fn branch_current_into_junction_equals_its_outflow() {
    // A carries no load, so the current from S into A equals the current from A into B.
    let (ctx, _, truth) = toy_setup();
    let net = common::toy();
    let spec = |from: &str, to: &str, p| dsse::measurement::SensorSpec {
        kind: dsse::measurement::SensorKind::Branch,
        bus: from.into(),
        phase: p,
        to_bus: Some(to.into()),
        sync: true,
    };
    let phases = dsse::network::Phase::ALL;
    let into: Vec<_> = phases.iter().map(|&p| spec("S", "A", p)).collect();
    let out: Vec<_> = phases.iter().map(|&p| spec("A", "B", p)).collect();
    let a = dsse::measurement::build_linear_map(&into, &ctx.adm, &net.v_source_vector()).unwrap();
    let b = dsse::measurement::build_linear_map(&out, &ctx.adm, &net.v_source_vector()).unwrap();
    let (ia, ib) = (a.eval(&truth), b.eval(&truth));
    assert!(vec_inf_norm(&(&ia - &ib)) < 1e-10 * vec_inf_norm(&ia));
}

#[test]
fn frames_are_reproducible_per_key() {
    let (_, plan, truth) = toy_setup();
    let f = |t, trial, seed| simulate_frame(&plan, &truth, t, trial, seed, NoiseModel::Linearized).unwrap();
    assert_eq!(f(2, 1, 9), f(2, 1, 9));
    assert_ne!(f(2, 1, 9), f(2, 2, 9));
    assert_ne!(f(2, 1, 9), f(3, 1, 9));
    assert_ne!(f(2, 1, 9), f(2, 1, 10));
}

#[test]
fn frames_csv_round_trip() {
    let (_, plan, truth) = toy_setup();
    let frames: Vec<MeasurementFrame> = (0..3)
        .map(|t| simulate_frame(&plan, &truth, t, 0, 1, NoiseModel::ExactPolar).unwrap())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("frames.csv");
    write_frames(&p, &plan, &frames).unwrap();
    assert_eq!(read_frames(&p, &plan).unwrap(), frames);

    let text = std::fs::read_to_string(&p).unwrap();
    let missing: String = text.lines().filter(|l| !l.starts_with("1,4,")).map(|l| format!("{l}\n")).collect();
    std::fs::write(&p, missing).unwrap();
    let err = read_frames(&p, &plan).unwrap_err().to_string();
    assert!(err.contains("t=1") && err.contains("sensor 4"), "{err}");

    std::fs::write(&p, "t,sensor_id,re,im\n0,2,0.5,0.1\n").unwrap();
    assert!(read_frames(&p, &plan).unwrap_err().to_string().contains("leave im empty"));
}

#[test]
fn magnitudes_are_clipped_at_zero() {
    let (_, mut plan, truth) = toy_setup();
    plan.sigma_meas = 5.0;
    let clipped = (0..200)
        .map(|trial| simulate_frame(&plan, &truth, 0, trial, 3, NoiseModel::Linearized).unwrap())
        .flat_map(|f| f.z_nl.iter().copied().collect::<Vec<_>>())
        .filter(|&m| m == 0.0)
        .count();
    assert!(clipped > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn magnitude_jacobian_matches_central_differences(
        d in prop::collection::vec((-0.05f64..0.05, -0.05f64..0.05), 9)
    ) {
        let (_, plan, truth) = toy_setup();
        let v = CVector::from_fn(truth.len(), |k, _| truth[k] + C64::new(d[k].0, d[k].1));
        let x = realify_vec(&v);
        let jac = nonlinear_jacobian(&plan, &x).unwrap();
        let h = 1e-6;
        let mut fd = RMatrix::zeros(jac.nrows(), jac.ncols());
        for k in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col: RVector = (eval_nonlinear(&plan, &complexify_vec(&xp)) - eval_nonlinear(&plan, &complexify_vec(&xm))) / (2.0 * h);
            fd.set_column(k, &col);
        }
        prop_assert!(max_abs(&(&jac - fd)) < 1e-5 * max_abs(&jac));
    }

    #[test]
    fn measurement_covariances_are_psd(
        zs in prop::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 6),
        mags in prop::collection::vec(0.0f64..2.0, 5),
        sigma in 0.0f64..0.2,
    ) {
        let (_, mut plan, _) = toy_setup();
        plan.sigma_meas = sigma;
        let frame = MeasurementFrame {
            t: 0,
            z_lin: CVector::from_fn(6, |k, _| C64::new(zs[k].0, zs[k].1)),
            z_nl: RVector::from_vec(mags),
        };
        for model in [RectCovarianceModel::Coupled, RectCovarianceModel::Circular] {
            let c = measurement_covariances(&plan, &frame, model).unwrap();
            prop_assert!(min_eigenvalue(&c.rect) > -1e-15);
            prop_assert!(c.lin.iter().chain(c.nl.iter()).all(|&v| v >= 1e-12));
            // Complex variance equals the trace of each 2x2 rectangular block.
            for k in 0..6 {
                let tr = c.rect[(k, k)] + c.rect[(k + 6, k + 6)];
                prop_assert!((tr - c.lin[k]).abs() <= 1e-12 + 1e-12 * tr);
            }
        }
    }
}
