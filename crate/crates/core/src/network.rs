//! Three-phase network data model, admittance assembly and power-flow algebra.
//!
//! Voltages are per unit. The state vector holds one complex voltage per
//! non-source (bus, phase) pair; the three source phases always occupy the
//! first slots of the full admittance matrix.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::path::Path;

use nalgebra::{Dyn, LU};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{CMatrix, CVector, C64};

/// Number of source slots at the head of the full index space.
pub const SOURCE_SLOTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    A,
    B,
    C,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::A, Phase::B, Phase::C];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_char(c: char) -> Option<Phase> {
        match c.to_ascii_lowercase() {
            'a' => Some(Phase::A),
            'b' => Some(Phase::B),
            'c' => Some(Phase::C),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        ['a', 'b', 'c'][self.index()]
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl std::str::FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next().and_then(Phase::from_char), chars.next()) {
            (Some(p), None) => Ok(p),
            _ => Err(Error::parse("phase", format!("expected a, b or c, got {s:?}"))),
        }
    }
}

/// Subset of {a, b, c}; iteration is always in a-b-c order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct PhaseSet(u8);

impl PhaseSet {
    pub const ABC: PhaseSet = PhaseSet(0b111);

    pub fn parse(s: &str) -> Result<PhaseSet> {
        let mut bits = 0u8;
        for ch in s.trim().chars() {
            let p = Phase::from_char(ch)
                .ok_or_else(|| Error::parse("phase set", format!("unknown phase {ch:?} in {s:?}")))?;
            let bit = 1 << p.index();
            if bits & bit != 0 {
                return Err(Error::parse("phase set", format!("phase {p} repeated in {s:?}")));
            }
            bits |= bit;
        }
        if bits == 0 {
            return Err(Error::parse("phase set", "empty phase set"));
        }
        Ok(PhaseSet(bits))
    }

    pub fn contains(self, p: Phase) -> bool {
        self.0 & (1 << p.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: PhaseSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 | other.0)
    }

    pub fn intersection(self, other: PhaseSet) -> PhaseSet {
        PhaseSet(self.0 & other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = Phase> {
        Phase::ALL.into_iter().filter(move |p| self.contains(*p))
    }

    /// Position of `p` within the set (row/column of a per-line matrix).
    pub fn position(self, p: Phase) -> Option<usize> {
        self.iter().position(|q| q == p)
    }
}

impl fmt::Display for PhaseSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in self.iter() {
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BusPhase {
    pub bus: String,
    pub phase: Phase,
}

impl fmt::Display for BusPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.bus, self.phase)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// One flag per present phase, in a-b-c order.
    pub zero_injection: Vec<bool>,
    /// Base complex power injection per present phase (p.u., loads negative).
    pub base_load: Option<Vec<C64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LineSpec {
    pub from: String,
    pub to: String,
    pub phases: PhaseSet,
    /// Series impedance, p.u., `phases.len()` square and symmetric.
    pub z: CMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkModel {
    pub s_base_va: f64,
    pub v_base_v: f64,
    pub source_bus: String,
    pub v_source: [C64; 3],
    /// Non-source buses in file order.
    pub buses: Vec<Bus>,
    pub lines: Vec<LineSpec>,
}

/// Balanced unit source with angles 0, -120, +120 degrees.
pub fn nominal_source() -> [C64; 3] {
    let a = 2.0 * std::f64::consts::PI / 3.0;
    [
        C64::from_polar(1.0, 0.0),
        C64::from_polar(1.0, -a),
        C64::from_polar(1.0, a),
    ]
}

/// Flat (bus, phase) indexing: source phases first, then buses in model order.
#[derive(Clone, Debug)]
pub struct PhaseIndexMap {
    entries: Vec<BusPhase>,
    lookup: HashMap<BusPhase, usize>,
    bus_phases: HashMap<String, PhaseSet>,
}

impl PhaseIndexMap {
    fn new(net: &NetworkModel) -> Self {
        let mut entries = Vec::with_capacity(SOURCE_SLOTS + net.buses.len() * 3);
        let mut bus_phases = HashMap::new();
        for p in Phase::ALL {
            entries.push(BusPhase {
                bus: net.source_bus.clone(),
                phase: p,
            });
        }
        bus_phases.insert(net.source_bus.clone(), PhaseSet::ABC);
        for bus in &net.buses {
            bus_phases.insert(bus.id.clone(), bus.phases);
            for p in bus.phases.iter() {
                entries.push(BusPhase {
                    bus: bus.id.clone(),
                    phase: p,
                });
            }
        }
        let lookup = entries
            .iter()
            .enumerate()
            .map(|(i, bp)| (bp.clone(), i))
            .collect();
        PhaseIndexMap {
            entries,
            lookup,
            bus_phases,
        }
    }

    /// Total entries including the source (N + 3).
    pub fn len_full(&self) -> usize {
        self.entries.len()
    }

    /// Number of state entries N.
    pub fn n_state(&self) -> usize {
        self.entries.len() - SOURCE_SLOTS
    }

    pub fn full_index(&self, bus: &str, phase: Phase) -> Option<usize> {
        self.lookup
            .get(&BusPhase {
                bus: bus.to_string(),
                phase,
            })
            .copied()
    }

    /// Index into the state vector; `None` for the source bus or unknown pairs.
    pub fn state_index(&self, bus: &str, phase: Phase) -> Option<usize> {
        self.full_index(bus, phase)
            .and_then(|i| i.checked_sub(SOURCE_SLOTS))
    }

    pub fn full_entry(&self, i: usize) -> &BusPhase {
        &self.entries[i]
    }

    pub fn state_entry(&self, i: usize) -> &BusPhase {
        &self.entries[i + SOURCE_SLOTS]
    }

    pub fn state_entries(&self) -> &[BusPhase] {
        &self.entries[SOURCE_SLOTS..]
    }

    pub fn phases_of(&self, bus: &str) -> Option<PhaseSet> {
        self.bus_phases.get(bus).copied()
    }

    pub fn is_source(&self, bus: &str) -> bool {
        self.entries[0].bus == bus
    }
}

/// Full admittance matrix with its source/non-source partition.
///
/// `Y = [[Ya, Yb], [Yc, Yd]]` with the source block first. A factorization of
/// `Yd` is computed once and reused by every solve.
#[derive(Clone, Debug)]
pub struct AdmittanceBlocks {
    y: CMatrix,
    ya: CMatrix,
    yb: CMatrix,
    yc: CMatrix,
    yd: CMatrix,
    yd_lu: LU<C64, Dyn, Dyn>,
    map: PhaseIndexMap,
}

impl AdmittanceBlocks {
    pub fn y(&self) -> &CMatrix {
        &self.y
    }
    pub fn ya(&self) -> &CMatrix {
        &self.ya
    }
    pub fn yb(&self) -> &CMatrix {
        &self.yb
    }
    pub fn yc(&self) -> &CMatrix {
        &self.yc
    }
    pub fn yd(&self) -> &CMatrix {
        &self.yd
    }
    pub fn map(&self) -> &PhaseIndexMap {
        &self.map
    }
    pub fn n_state(&self) -> usize {
        self.map.n_state()
    }

    /// Solves `Yd x = rhs` with the cached factorization.
    pub fn solve_yd(&self, rhs: &CVector) -> Result<CVector> {
        check_dim("Yd solve", self.n_state(), rhs.len())?;
        self.yd_lu
            .solve(rhs)
            .ok_or_else(|| Error::DegenerateNetwork("Yd solve failed".into()))
    }

    pub fn solve_yd_matrix(&self, rhs: &CMatrix) -> Result<CMatrix> {
        check_dim("Yd solve", self.n_state(), rhs.nrows())?;
        self.yd_lu
            .solve(rhs)
            .ok_or_else(|| Error::DegenerateNetwork("Yd solve failed".into()))
    }

    pub fn yd_inverse(&self) -> Result<CMatrix> {
        self.solve_yd_matrix(&CMatrix::identity(self.n_state(), self.n_state()))
    }

    /// Rows of `Yd` and `Yc` restricted to the state indices in `rows`.
    pub fn constraint_rows(&self, rows: &[usize]) -> (CMatrix, CMatrix) {
        (
            crate::linalg::select_rows(&self.yd, rows),
            crate::linalg::select_rows(&self.yc, rows),
        )
    }
}

/// Assembles `Y` from the line impedances (no shunt elements) and partitions it.
///
/// Each line contributes its admittance block `Z^-1` with a negative sign to the
/// off-diagonal (from, to) blocks and with a positive sign to both diagonal blocks.
pub fn build_admittance(net: &NetworkModel) -> Result<AdmittanceBlocks> {
    net.validate()?;
    let map = PhaseIndexMap::new(net);
    let n_full = map.len_full();
    let mut y = CMatrix::zeros(n_full, n_full);
    for line in &net.lines {
        let yl = line_admittance(line)?;
        let idx = |bus: &str| -> Vec<usize> {
            line.phases
                .iter()
                .map(|p| map.full_index(bus, p).expect("validated line phases"))
                .collect()
        };
        let from = idx(&line.from);
        let to = idx(&line.to);
        for (a, (&fa, &ta)) in from.iter().zip(&to).enumerate() {
            for (b, (&fb, &tb)) in from.iter().zip(&to).enumerate() {
                let v = yl[(a, b)];
                y[(fa, fb)] += v;
                y[(ta, tb)] += v;
                y[(fa, tb)] -= v;
                y[(ta, fb)] -= v;
            }
        }
    }
    let n = n_full - SOURCE_SLOTS;
    let ya = y.view((0, 0), (SOURCE_SLOTS, SOURCE_SLOTS)).into_owned();
    let yb = y.view((0, SOURCE_SLOTS), (SOURCE_SLOTS, n)).into_owned();
    let yc = y.view((SOURCE_SLOTS, 0), (n, SOURCE_SLOTS)).into_owned();
    let yd = y.view((SOURCE_SLOTS, SOURCE_SLOTS), (n, n)).into_owned();
    let yd_lu = yd.clone().lu();
    let u = yd_lu.u();
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0_f64);
    for i in 0..n {
        let d = u[(i, i)].norm();
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    if n > 0 && !(dmin > 1e-13 * dmax) {
        return Err(Error::DegenerateNetwork(format!(
            "Yd is singular (pivot ratio {:e})",
            dmin / dmax
        )));
    }
    Ok(AdmittanceBlocks {
        y,
        ya,
        yb,
        yc,
        yd,
        yd_lu,
        map,
    })
}

fn line_admittance(line: &LineSpec) -> Result<CMatrix> {
    let inv = line.z.clone().try_inverse().ok_or_else(|| {
        Error::validation(
            format!("line {}-{}", line.from, line.to),
            "impedance matrix is singular",
        )
    })?;
    // Z is symmetric, so is its inverse; remove roundoff asymmetry.
    Ok((&inv + inv.transpose()).scale(0.5))
}

/// No-load voltage `V0 = -Yd^-1 Yc V_source`.
pub fn no_load_voltage(adm: &AdmittanceBlocks, v_source: &CVector) -> Result<CVector> {
    check_dim("source voltage", SOURCE_SLOTS, v_source.len())?;
    let rhs = -(adm.yc() * v_source);
    adm.solve_yd(&rhs)
}

/// Current and complex power injections `I = Yc Vs + Yd V`, `S = diag(conj I) V`.
pub fn compute_injections(
    adm: &AdmittanceBlocks,
    v_source: &CVector,
    v: &CVector,
) -> Result<(CVector, CVector)> {
    check_dim("source voltage", SOURCE_SLOTS, v_source.len())?;
    check_dim("voltage vector", adm.n_state(), v.len())?;
    let i = adm.yc() * v_source + adm.yd() * v;
    let s = v.zip_map(&i, |vk, ik| vk * ik.conj());
    Ok((i, s))
}

impl NetworkModel {
    pub fn v_source_vector(&self) -> CVector {
        CVector::from_row_slice(&self.v_source)
    }

    pub fn phase_index_map(&self) -> PhaseIndexMap {
        PhaseIndexMap::new(self)
    }

    pub fn n_state(&self) -> usize {
        self.buses.iter().map(|b| b.phases.len()).sum()
    }

    /// State indices flagged as zero-injection, ascending.
    pub fn zero_injection_indices(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut k = 0;
        for bus in &self.buses {
            for flag in &bus.zero_injection {
                if *flag {
                    out.push(k);
                }
                k += 1;
            }
        }
        out
    }

    /// Base loads in state order; `None` when no bus carries a base load.
    pub fn base_loads(&self) -> Option<CVector> {
        if self.buses.iter().all(|b| b.base_load.is_none()) {
            return None;
        }
        let mut out = Vec::with_capacity(self.n_state());
        for bus in &self.buses {
            match &bus.base_load {
                Some(l) => out.extend_from_slice(l),
                None => out.extend(std::iter::repeat(C64::new(0.0, 0.0)).take(bus.phases.len())),
            }
        }
        Some(CVector::from_vec(out))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_base_va > 0.0) || !(self.v_base_v > 0.0) {
            return Err(Error::validation("network bases", "s_base_va and v_base_v must be positive"));
        }
        let mut phases: HashMap<&str, PhaseSet> = HashMap::new();
        phases.insert(&self.source_bus, PhaseSet::ABC);
        for bus in &self.buses {
            if phases.insert(&bus.id, bus.phases).is_some() {
                return Err(Error::validation(format!("bus {}", bus.id), "duplicate bus id"));
            }
            if bus.zero_injection.len() != bus.phases.len() {
                return Err(Error::validation(
                    format!("bus {}", bus.id),
                    "zero_injection must have one flag per phase",
                ));
            }
            if let Some(load) = &bus.base_load {
                if load.len() != bus.phases.len() {
                    return Err(Error::validation(
                        format!("bus {}", bus.id),
                        "load must have one entry per phase",
                    ));
                }
                for ((p, flag), s) in bus.phases.iter().zip(&bus.zero_injection).zip(load) {
                    if *flag && s.norm() != 0.0 {
                        return Err(Error::validation(
                            format!("bus {}", bus.id),
                            format!("phase {p} is zero-injection but carries a load"),
                        ));
                    }
                }
            }
        }
        for (k, line) in self.lines.iter().enumerate() {
            let name = format!("line #{k} {}-{}", line.from, line.to);
            let pf = *phases
                .get(line.from.as_str())
                .ok_or_else(|| Error::validation(&name, format!("unknown bus {}", line.from)))?;
            let pt = *phases
                .get(line.to.as_str())
                .ok_or_else(|| Error::validation(&name, format!("unknown bus {}", line.to)))?;
            if line.from == line.to {
                return Err(Error::validation(&name, "line connects a bus to itself"));
            }
            if !line.phases.is_subset(pf) || !line.phases.is_subset(pt) {
                return Err(Error::validation(
                    &name,
                    format!("line phases {} not present at both ends ({pf}, {pt})", line.phases),
                ));
            }
            let p = line.phases.len();
            if line.z.shape() != (p, p) {
                return Err(Error::validation(
                    &name,
                    format!("impedance is {:?}, expected {p}x{p}", line.z.shape()),
                ));
            }
            let scale = line.z.iter().fold(0.0_f64, |a, z| a.max(z.norm()));
            for i in 0..p {
                if line.z[(i, i)].norm() == 0.0 {
                    return Err(Error::validation(&name, "zero diagonal impedance"));
                }
                for j in 0..i {
                    if (line.z[(i, j)] - line.z[(j, i)]).norm() > 1e-12 * scale {
                        return Err(Error::validation(&name, "impedance matrix is not symmetric"));
                    }
                }
            }
        }
        self.check_connectivity()
    }

    /// Every (bus, phase) must reach the source through lines carrying that phase.
    fn check_connectivity(&self) -> Result<()> {
        for phase in Phase::ALL {
            let mut adj: HashMap<&str, Vec<&str>> = HashMap::new();
            for line in self.lines.iter().filter(|l| l.phases.contains(phase)) {
                adj.entry(&line.from).or_default().push(&line.to);
                adj.entry(&line.to).or_default().push(&line.from);
            }
            let mut seen: HashSet<&str> = HashSet::new();
            let mut queue = VecDeque::from([self.source_bus.as_str()]);
            seen.insert(&self.source_bus);
            while let Some(b) = queue.pop_front() {
                for &nb in adj.get(b).map(Vec::as_slice).unwrap_or(&[]) {
                    if seen.insert(nb) {
                        queue.push_back(nb);
                    }
                }
            }
            if let Some(bus) = self
                .buses
                .iter()
                .find(|b| b.phases.contains(phase) && !seen.contains(b.id.as_str()))
            {
                return Err(Error::validation(
                    format!("bus {}", bus.id),
                    format!("phase {phase} is not connected to the source"),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON encoding; guards prior artifacts.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(&NetworkFile::from(self)).expect("network serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn from_json_str(s: &str) -> Result<NetworkModel> {
        let file: NetworkFile = serde_json::from_str(s).map_err(|e| Error::parse("network JSON", e))?;
        let net = NetworkModel::try_from(file)?;
        net.validate()?;
        Ok(net)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&NetworkFile::from(self)).expect("network serializes")
    }
}

/// Reads and validates a network JSON file.
pub fn load_network(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NetworkModel::from_json_str(&text).map_err(|e| match e {
        Error::Parse { what, message } => Error::Parse {
            what: format!("{what} ({})", path.display()),
            message,
        },
        other => other,
    })
}

pub fn save_network(net: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, net.to_json_string()).map_err(|e| Error::io(path, e))
}

// ---- file schema ----

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum BusId {
    Text(String),
    Number(u64),
}

impl From<BusId> for String {
    fn from(b: BusId) -> String {
        match b {
            BusId::Text(s) => s,
            BusId::Number(n) => n.to_string(),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ZeroInjectionFlags {
    All(bool),
    PerPhase(Vec<bool>),
}

impl Default for ZeroInjectionFlags {
    fn default() -> Self {
        ZeroInjectionFlags::All(false)
    }
}

#[derive(Serialize, Deserialize)]
struct SourceFile {
    bus: BusId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v_pu: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct BusFile {
    id: BusId,
    phases: String,
    #[serde(default)]
    zero_injection: ZeroInjectionFlags,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    load_pu: Option<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct LineFile {
    from: BusId,
    to: BusId,
    phases: String,
    z_pu: Vec<Vec<[f64; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    s_base_va: f64,
    v_base_v: f64,
    source: SourceFile,
    buses: Vec<BusFile>,
    lines: Vec<LineFile>,
}

fn c_pair(z: &C64) -> [f64; 2] {
    [z.re, z.im]
}

impl From<&NetworkModel> for NetworkFile {
    fn from(net: &NetworkModel) -> Self {
        NetworkFile {
            s_base_va: net.s_base_va,
            v_base_v: net.v_base_v,
            source: SourceFile {
                bus: BusId::Text(net.source_bus.clone()),
                v_pu: Some(net.v_source.iter().map(c_pair).collect()),
            },
            buses: net
                .buses
                .iter()
                .map(|b| BusFile {
                    id: BusId::Text(b.id.clone()),
                    phases: b.phases.to_string(),
                    zero_injection: ZeroInjectionFlags::PerPhase(b.zero_injection.clone()),
                    load_pu: b.base_load.as_ref().map(|l| l.iter().map(c_pair).collect()),
                })
                .collect(),
            lines: net
                .lines
                .iter()
                .map(|l| LineFile {
                    from: BusId::Text(l.from.clone()),
                    to: BusId::Text(l.to.clone()),
                    phases: l.phases.to_string(),
                    z_pu: l
                        .z
                        .row_iter()
                        .map(|r| r.iter().map(c_pair).collect())
                        .collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkFile> for NetworkModel {
    type Error = Error;

    fn try_from(file: NetworkFile) -> Result<Self> {
        let source_bus: String = file.source.bus.into();
        let v_source = match file.source.v_pu {
            None => nominal_source(),
            Some(v) if v.len() == 3 => [
                C64::new(v[0][0], v[0][1]),
                C64::new(v[1][0], v[1][1]),
                C64::new(v[2][0], v[2][1]),
            ],
            Some(v) => {
                return Err(Error::validation(
                    format!("source bus {source_bus}"),
                    format!("v_pu must have 3 entries, found {}", v.len()),
                ))
            }
        };
        let mut buses = Vec::with_capacity(file.buses.len());
        for b in file.buses {
            let id: String = b.id.into();
            let phases = PhaseSet::parse(&b.phases)
                .map_err(|e| Error::validation(format!("bus {id}"), e.to_string()))?;
            if id == source_bus {
                if phases != PhaseSet::ABC {
                    return Err(Error::validation(
                        format!("source bus {id}"),
                        "source bus must carry phases abc",
                    ));
                }
                continue;
            }
            let zero_injection = match b.zero_injection {
                ZeroInjectionFlags::All(f) => vec![f; phases.len()],
                ZeroInjectionFlags::PerPhase(v) => v,
            };
            let base_load = b
                .load_pu
                .map(|l| l.iter().map(|p| C64::new(p[0], p[1])).collect());
            buses.push(Bus {
                id,
                phases,
                zero_injection,
                base_load,
            });
        }
        let mut lines = Vec::with_capacity(file.lines.len());
        for l in file.lines {
            let from: String = l.from.into();
            let to: String = l.to.into();
            let phases = PhaseSet::parse(&l.phases)
                .map_err(|e| Error::validation(format!("line {from}-{to}"), e.to_string()))?;
            let rows = l.z_pu.len();
            if l.z_pu.iter().any(|r| r.len() != rows) {
                return Err(Error::validation(
                    format!("line {from}-{to}"),
                    "z_pu must be a square matrix",
                ));
            }
            let z = CMatrix::from_fn(rows, rows, |i, j| C64::new(l.z_pu[i][j][0], l.z_pu[i][j][1]));
            lines.push(LineSpec {
                from,
                to,
                phases,
                z,
            });
        }
        Ok(NetworkModel {
            s_base_va: file.s_base_va,
            v_base_v: file.v_base_v,
            source_bus,
            v_source,
            buses,
            lines,
        })
    }
}
