#![allow(dead_code)]

use std::path::PathBuf;

use dsse::estimator::Context;
use dsse::feeder::{convert_feeder, FeederOptions};
use dsse::linalg::{CMatrix, CVector, C64};
use dsse::measurement::{MeasurementPlan, PseudoMeasurements, SensorKind, SensorSpec};
use dsse::network::{nominal_source, Bus, LineSpec, NetworkModel, Phase, PhaseSet};
use dsse::prior::{fixed_point_power_flow, SolverConfig, StateEstimate};
use rand::Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/ieee123")
}

pub fn ieee123() -> NetworkModel {
    convert_feeder(data_dir(), &FeederOptions::default()).expect("feeder converts")
}

pub fn ieee123_plan() -> MeasurementPlan {
    MeasurementPlan::load(data_dir().join("plan.json")).expect("plan loads")
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Coupled three-phase segment impedance, p.u.
pub fn z3(scale: f64) -> CMatrix {
    let m = CMatrix::from_row_slice(
        3,
        3,
        &[
            c(0.030, 0.080),
            c(0.010, 0.030),
            c(0.010, 0.025),
            c(0.010, 0.030),
            c(0.031, 0.079),
            c(0.010, 0.028),
            c(0.010, 0.025),
            c(0.010, 0.028),
            c(0.0305, 0.081),
        ],
    );
    m * c(scale, 0.0)
}

fn line(from: &str, to: &str, phases: &str, z: CMatrix) -> LineSpec {
    LineSpec {
        from: from.into(),
        to: to.into(),
        phases: PhaseSet::parse(phases).unwrap(),
        z,
    }
}

fn bus(id: &str, phases: &str, loads: &[C64]) -> Bus {
    let zero: Vec<bool> = loads.iter().map(|s| *s == c(0.0, 0.0)).collect();
    Bus {
        id: id.into(),
        phases: PhaseSet::parse(phases).unwrap(),
        zero_injection: zero,
        base_load: Some(loads.to_vec()),
    }
}

/// S -(abc)- A -(abc)- B -(ab)- C, with B -(c)- D. A is a junction with no load.
pub fn toy() -> NetworkModel {
    let z = z3(1.0);
    let zab = z.view((0, 0), (2, 2)).into_owned();
    let zc = z.view((2, 2), (1, 1)).into_owned();
    let l = c(-0.2, -0.08);
    NetworkModel {
        s_base_va: 1e6,
        v_base_v: 2401.78,
        source_bus: "S".into(),
        v_source: nominal_source(),
        buses: vec![
            bus("A", "abc", &[c(0.0, 0.0); 3]),
            bus("B", "abc", &[l, l * 0.8, l * 1.1]),
            bus("C", "ab", &[c(-0.1, -0.04), c(-0.12, -0.03)]),
            bus("D", "c", &[c(-0.15, -0.05)]),
        ],
        lines: vec![
            line("S", "A", "abc", z3(0.5)),
            line("A", "B", "abc", z.clone()),
            line("B", "C", "ab", zab),
            line("B", "D", "c", zc),
        ],
    }
}

fn spec(kind: SensorKind, bus: &str, phase: Phase, to: Option<&str>, sync: bool) -> SensorSpec {
    SensorSpec {
        kind,
        bus: bus.into(),
        phase,
        to_bus: to.map(String::from),
        sync,
    }
}

pub fn toy_plan() -> MeasurementPlan {
    let mut sensors = Vec::new();
    for p in Phase::ALL {
        sensors.push(spec(SensorKind::Branch, "S", p, Some("A"), true));
        sensors.push(spec(SensorKind::Voltage, "B", p, None, true));
        sensors.push(spec(SensorKind::Current, "B", p, None, false));
    }
    sensors.push(spec(SensorKind::Voltage, "C", Phase::A, None, false));
    sensors.push(spec(SensorKind::Voltage, "D", Phase::C, None, false));
    MeasurementPlan {
        sigma_meas: 0.01,
        sensors,
    }
}

/// Base loads scaled entrywise by factors drawn from `[lo, hi]`.
pub fn scaled_loads(base: &CVector, rng: &mut impl Rng, lo: f64, hi: f64) -> CVector {
    base.map(|s| s * rng.random_range(lo..hi))
}

pub fn prior_for(ctx: &Context, s: &CVector, sigma: f64) -> (PseudoMeasurements, StateEstimate) {
    let pseudo = PseudoMeasurements::new(s.clone(), sigma, &ctx.eps).unwrap();
    let prior = fixed_point_power_flow(
        &ctx.adm,
        &ctx.v_source,
        &pseudo,
        &ctx.eps,
        &SolverConfig::default(),
    )
    .unwrap();
    (pseudo, prior)
}
