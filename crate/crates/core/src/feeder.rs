//! Conversion of IEEE test-feeder tables (CSV) into a per-unit [`NetworkModel`].
//!
//! Expected files in the feeder directory: `line_data.csv`, `line_configs.csv`,
//! `switch_data.csv` and `spot_loads.csv`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::network::{nominal_source, Bus, LineSpec, NetworkModel, Phase, PhaseSet};

const FEET_PER_MILE: f64 = 5280.0;

#[derive(Clone, Debug, PartialEq)]
pub struct FeederOptions {
    pub source_bus: String,
    /// Three-phase power base.
    pub s_base_va: f64,
    pub v_base_ll: f64,
    /// Per-phase impedance of closed switches and regulators, ohm.
    pub switch_z_ohm: C64,
    /// Connections left out of the model.
    pub dropped: Vec<(String, String)>,
}

impl Default for FeederOptions {
    fn default() -> Self {
        FeederOptions {
            source_bus: "150".into(),
            s_base_va: 5.0e6,
            v_base_ll: 4160.0,
            switch_z_ohm: C64::new(1e-3, 1e-3),
            // Step-down transformer with nothing connected behind it.
            dropped: vec![("61".into(), "610".into())],
        }
    }
}

#[derive(Deserialize)]
struct LineRow {
    node_a: String,
    node_b: String,
    length_ft: f64,
    config: String,
}

#[derive(Deserialize)]
struct ConfigRow {
    config: String,
    phases: String,
    raa: f64,
    xaa: f64,
    rab: f64,
    xab: f64,
    rac: f64,
    xac: f64,
    rbb: f64,
    xbb: f64,
    rbc: f64,
    xbc: f64,
    rcc: f64,
    xcc: f64,
}

#[derive(Deserialize)]
struct SwitchRow {
    node_a: String,
    node_b: String,
    normal: String,
}

#[derive(Deserialize)]
struct LoadRow {
    node: String,
    #[allow(dead_code)]
    model: String,
    p1_kw: f64,
    q1_kvar: f64,
    p2_kw: f64,
    q2_kvar: f64,
    p3_kw: f64,
    q3_kvar: f64,
}

fn read_table<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>> {
    let path = dir.join(name);
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::io(&path, e.into()))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(format!("{name} row {}", i + 2), e)))
        .collect()
}

struct Config {
    phases: PhaseSet,
    /// Full 3x3 ohm/mile matrix.
    z: [[C64; 3]; 3],
}

fn config_from_row(row: &ConfigRow) -> Result<Config> {
    let c = |r, x| C64::new(r, x);
    let (aa, ab, ac) = (c(row.raa, row.xaa), c(row.rab, row.xab), c(row.rac, row.xac));
    let (bb, bc, cc) = (c(row.rbb, row.xbb), c(row.rbc, row.xbc), c(row.rcc, row.xcc));
    Ok(Config {
        phases: PhaseSet::parse(&row.phases)?,
        z: [[aa, ab, ac], [ab, bb, bc], [ac, bc, cc]],
    })
}

fn sub_matrix(z: &[[C64; 3]; 3], phases: PhaseSet, scale: f64) -> CMatrix {
    let idx: Vec<usize> = phases.iter().map(Phase::index).collect();
    CMatrix::from_fn(idx.len(), idx.len(), |i, j| z[idx[i]][idx[j]] * scale)
}

/// Reads the feeder tables in `dir` and builds the per-unit network.
pub fn convert_feeder(dir: impl AsRef<Path>, opts: &FeederOptions) -> Result<NetworkModel> {
    let dir = dir.as_ref();
    let lines: Vec<LineRow> = read_table(dir, "line_data.csv")?;
    let config_rows: Vec<ConfigRow> = read_table(dir, "line_configs.csv")?;
    let switches: Vec<SwitchRow> = read_table(dir, "switch_data.csv")?;
    let loads: Vec<LoadRow> = read_table(dir, "spot_loads.csv")?;

    let mut configs = BTreeMap::new();
    for row in &config_rows {
        configs.insert(row.config.clone(), config_from_row(row)?);
    }
    let v_base = opts.v_base_ll / 3f64.sqrt();
    let s_phase = opts.s_base_va / 3.0;
    let z_base = v_base * v_base / s_phase;
    let dropped: HashSet<(String, String)> = opts
        .dropped
        .iter()
        .flat_map(|(a, b)| [(a.clone(), b.clone()), (b.clone(), a.clone())])
        .collect();

    // Bus order: source, then first appearance in the line table.
    let mut order: Vec<String> = vec![opts.source_bus.clone()];
    let mut phases: BTreeMap<String, PhaseSet> = BTreeMap::new();
    phases.insert(opts.source_bus.clone(), PhaseSet::ABC);
    fn note(phases: &mut BTreeMap<String, PhaseSet>, order: &mut Vec<String>, bus: &str, p: PhaseSet) {
        let e = phases.entry(bus.to_string()).or_insert_with(|| {
            order.push(bus.to_string());
            PhaseSet::default()
        });
        *e = e.union(p);
    }
    let mut specs = Vec::new();
    for l in &lines {
        let cfg = configs.get(&l.config).ok_or_else(|| {
            Error::validation(
                format!("line {}-{}", l.node_a, l.node_b),
                format!("unknown configuration {}", l.config),
            )
        })?;
        note(&mut phases, &mut order, &l.node_a, cfg.phases);
        note(&mut phases, &mut order, &l.node_b, cfg.phases);
        let scale = l.length_ft / FEET_PER_MILE / z_base;
        specs.push(LineSpec {
            from: l.node_a.clone(),
            to: l.node_b.clone(),
            phases: cfg.phases,
            z: sub_matrix(&cfg.z, cfg.phases, scale),
        });
    }
    for s in &switches {
        let closed = match s.normal.to_ascii_lowercase().as_str() {
            "closed" => true,
            "open" => false,
            other => {
                return Err(Error::validation(
                    format!("switch {}-{}", s.node_a, s.node_b),
                    format!("state must be open or closed, got {other}"),
                ))
            }
        };
        if !closed || dropped.contains(&(s.node_a.clone(), s.node_b.clone())) {
            continue;
        }
        let pa = phases.get(&s.node_a).copied();
        let pb = phases.get(&s.node_b).copied();
        let p = match (pa, pb) {
            (Some(a), Some(b)) => a.intersection(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => {
                return Err(Error::validation(
                    format!("switch {}-{}", s.node_a, s.node_b),
                    "neither end is connected to a line",
                ))
            }
        };
        note(&mut phases, &mut order, &s.node_a, p);
        note(&mut phases, &mut order, &s.node_b, p);
        let zs = opts.switch_z_ohm / z_base;
        specs.push(LineSpec {
            from: s.node_a.clone(),
            to: s.node_b.clone(),
            phases: p,
            z: CMatrix::from_diagonal_element(p.len(), p.len(), zs),
        });
    }

    let mut load_by_bus: BTreeMap<String, [C64; 3]> = BTreeMap::new();
    for l in &loads {
        let kw = [(l.p1_kw, l.q1_kvar), (l.p2_kw, l.q2_kvar), (l.p3_kw, l.q3_kvar)];
        let entry = load_by_bus.entry(l.node.clone()).or_default();
        for (k, (p, q)) in kw.iter().enumerate() {
            entry[k] -= C64::new(p * 1e3, q * 1e3) / s_phase;
        }
    }

    let mut buses = Vec::new();
    for id in order.iter().skip(1) {
        let p = phases[id];
        let load = load_by_bus.remove(id);
        let mut flags = Vec::new();
        let mut base = Vec::new();
        for ph in p.iter() {
            let s = load.map(|l| l[ph.index()]).unwrap_or_default();
            flags.push(s == C64::new(0.0, 0.0));
            base.push(s);
        }
        if let Some(l) = load {
            for ph in Phase::ALL {
                if !p.contains(ph) && l[ph.index()] != C64::new(0.0, 0.0) {
                    return Err(Error::validation(
                        format!("load at {id}"),
                        format!("phase {ph} is not present at the bus"),
                    ));
                }
            }
        }
        buses.push(Bus {
            id: id.clone(),
            phases: p,
            zero_injection: flags,
            base_load: Some(base),
        });
    }
    if let Some(id) = load_by_bus.keys().next() {
        return Err(Error::validation(format!("load at {id}"), "bus is not in the network"));
    }

    let net = NetworkModel {
        s_base_va: opts.s_base_va,
        v_base_v: v_base,
        source_bus: opts.source_bus.clone(),
        v_source: nominal_source(),
        buses,
        lines: specs,
    };
    net.validate()?;
    Ok(net)
}
