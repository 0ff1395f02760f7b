//! Pseudo-measurements, sensor plans, measurement maps and noise simulation.
//!
//! Every sensor observes a complex quantity that is affine in the state,
//! `w = c^T V + d`, where `d` carries the contribution of the fixed source
//! voltages. Synchronized sensors report `w` itself; unsynchronized sensors
//! report `|w|`.

use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{complexify_vec, CMatrix, CVector, RMatrix, RVector, C64, COVARIANCE_FLOOR};
use crate::network::{AdmittanceBlocks, Phase, SOURCE_SLOTS};
use crate::rng;

/// Magnitudes below this make the gradient of `|w|` undefined.
pub const MIN_GRADIENT_MAGNITUDE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Voltage,
    /// Current injected at a bus.
    Current,
    /// Current flowing from `bus` to `to_bus`.
    Branch,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub kind: SensorKind,
    #[serde(deserialize_with = "de_bus_id")]
    pub bus: String,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Option::is_none", deserialize_with = "de_opt_bus_id")]
    pub to_bus: Option<String>,
    /// Synchronized phasor (true) or magnitude only (false).
    pub sync: bool,
}

fn de_bus_id<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Id {
        S(String),
        N(u64),
    }
    Ok(match Id::deserialize(d)? {
        Id::S(s) => s,
        Id::N(n) => n.to_string(),
    })
}

fn de_opt_bus_id<'de, D: serde::Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<String>, D::Error> {
    de_bus_id(d).map(Some)
}

impl fmt::Display for SensorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            SensorKind::Voltage => "voltage",
            SensorKind::Current => "current",
            SensorKind::Branch => "branch",
        };
        let mode = if self.sync { "phasor" } else { "magnitude" };
        match &self.to_bus {
            Some(to) => write!(f, "{kind} {}->{}.{} ({mode})", self.bus, to, self.phase),
            None => write!(f, "{kind} {}.{} ({mode})", self.bus, self.phase),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPlan {
    /// Relative standard deviation of magnitude and angle noise.
    pub sigma_meas: f64,
    pub sensors: Vec<SensorSpec>,
}

impl MeasurementPlan {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let plan: MeasurementPlan =
            serde_json::from_str(s).map_err(|e| Error::parse("measurement plan JSON", e))?;
        if !(plan.sigma_meas >= 0.0) {
            return Err(Error::validation("measurement plan", "sigma_meas must be non-negative"));
        }
        for s in &plan.sensors {
            if (s.kind == SensorKind::Branch) != s.to_bus.is_some() {
                return Err(Error::validation(
                    format!("sensor {s}"),
                    "to_bus is required for branch sensors and only for them",
                ));
            }
        }
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    /// Same plan restricted to synchronized sensors.
    pub fn synchronized_only(&self) -> MeasurementPlan {
        MeasurementPlan {
            sigma_meas: self.sigma_meas,
            sensors: self.sensors.iter().filter(|s| s.sync).cloned().collect(),
        }
    }

    pub fn compile(&self, adm: &AdmittanceBlocks, v_source: &CVector) -> Result<CompiledPlan> {
        let lin_ids: Vec<usize> = (0..self.sensors.len()).filter(|&i| self.sensors[i].sync).collect();
        let nl_ids: Vec<usize> = (0..self.sensors.len()).filter(|&i| !self.sensors[i].sync).collect();
        let pick = |ids: &[usize]| ids.iter().map(|&i| self.sensors[i].clone()).collect::<Vec<_>>();
        let lin_sensors = pick(&lin_ids);
        let nl_sensors = pick(&nl_ids);
        Ok(CompiledPlan {
            sigma_meas: self.sigma_meas,
            linear: build_linear_map(&lin_sensors, adm, v_source)?,
            nonlinear: build_linear_map(&nl_sensors, adm, v_source)?,
            linear_sensors: lin_sensors,
            nonlinear_sensors: nl_sensors,
            linear_ids: lin_ids,
            nonlinear_ids: nl_ids,
        })
    }
}

/// Affine map `w = C V + d` from state voltages to complex sensor quantities.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearMap {
    pub c: CMatrix,
    pub d: CVector,
}

impl LinearMap {
    pub fn rows(&self) -> usize {
        self.c.nrows()
    }

    pub fn eval(&self, v: &CVector) -> CVector {
        &self.c * v + &self.d
    }
}

/// A plan bound to a network: synchronized rows and magnitude rows in plan order.
#[derive(Clone, Debug)]
pub struct CompiledPlan {
    pub sigma_meas: f64,
    pub linear: LinearMap,
    pub nonlinear: LinearMap,
    pub linear_sensors: Vec<SensorSpec>,
    pub nonlinear_sensors: Vec<SensorSpec>,
    /// Positions of the linear / nonlinear sensors in the original plan.
    pub linear_ids: Vec<usize>,
    pub nonlinear_ids: Vec<usize>,
}

impl CompiledPlan {
    pub fn n_lin(&self) -> usize {
        self.linear.rows()
    }
    pub fn n_nl(&self) -> usize {
        self.nonlinear.rows()
    }
    pub fn n_sensors(&self) -> usize {
        self.n_lin() + self.n_nl()
    }
}

fn sensor_error(s: &SensorSpec, reason: impl Into<String>) -> Error {
    Error::validation(format!("sensor {s}"), reason)
}

/// Rows of `C_measL` (and offsets `d`) for the given sensors, ignoring their sync flag.
pub fn build_linear_map(
    sensors: &[SensorSpec],
    adm: &AdmittanceBlocks,
    v_source: &CVector,
) -> Result<LinearMap> {
    check_dim("source voltage", SOURCE_SLOTS, v_source.len())?;
    let n = adm.n_state();
    let map = adm.map();
    let y = adm.y();
    let mut c = CMatrix::zeros(sensors.len(), n);
    let mut d = CVector::zeros(sensors.len());
    for (row, s) in sensors.iter().enumerate() {
        let i_l = map
            .full_index(&s.bus, s.phase)
            .ok_or_else(|| sensor_error(s, "bus or phase not present in network"))?;
        let mut add = |col: usize, coef: C64| {
            if col < SOURCE_SLOTS {
                d[row] += coef * v_source[col];
            } else {
                c[(row, col - SOURCE_SLOTS)] += coef;
            }
        };
        match s.kind {
            SensorKind::Voltage => add(i_l, C64::new(1.0, 0.0)),
            SensorKind::Current => {
                for col in 0..map.len_full() {
                    let v = y[(i_l, col)];
                    if v != C64::new(0.0, 0.0) {
                        add(col, v);
                    }
                }
            }
            SensorKind::Branch => {
                let to = s.to_bus.as_deref().ok_or_else(|| sensor_error(s, "missing to_bus"))?;
                let m_l = map
                    .full_index(to, s.phase)
                    .ok_or_else(|| sensor_error(s, "target bus lacks the measured phase"))?;
                if y[(i_l, m_l)] == C64::new(0.0, 0.0) {
                    return Err(sensor_error(s, "target bus is not adjacent on this phase"));
                }
                // Current on phase l from i to m, including mutual coupling:
                // sum_k (Z^-1)_{l,k} (V_{i,k} - V_{m,k}) with Z^-1 = -Y_{i,m}.
                for p in Phase::ALL {
                    if let (Some(i_k), Some(m_k)) = (map.full_index(&s.bus, p), map.full_index(to, p)) {
                        let coef = -y[(i_l, m_k)];
                        if coef != C64::new(0.0, 0.0) {
                            add(i_k, coef);
                            add(m_k, -coef);
                        }
                    }
                }
            }
        }
    }
    Ok(LinearMap { c, d })
}

/// Noise-free magnitude readings `|C_NL V + d|`.
pub fn eval_nonlinear(plan: &CompiledPlan, v: &CVector) -> RVector {
    plan.nonlinear.eval(v).map(|w| w.norm())
}

/// Jacobian of the magnitude readings with respect to `[Re V; Im V]`.
pub fn nonlinear_jacobian(plan: &CompiledPlan, v_rect: &RVector) -> Result<RMatrix> {
    let n = plan.nonlinear.c.ncols();
    check_dim("rectangular voltage", 2 * n, v_rect.len())?;
    let v = complexify_vec(v_rect);
    let w = plan.nonlinear.eval(&v);
    let mut jac = RMatrix::zeros(plan.n_nl(), 2 * n);
    for (r, wr) in w.iter().enumerate() {
        let mag = wr.norm();
        if mag < MIN_GRADIENT_MAGNITUDE {
            return Err(Error::SingularGradient {
                sensor: plan.nonlinear_sensors[r].to_string(),
                magnitude: mag,
            });
        }
        for k in 0..n {
            let g = wr.conj() * plan.nonlinear.c[(r, k)] / mag;
            jac[(r, k)] = g.re;
            jac[(r, k + n)] = -g.im;
        }
    }
    Ok(jac)
}

/// One timestep of noisy readings, in compiled-plan order.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementFrame {
    pub t: usize,
    pub z_lin: CVector,
    pub z_nl: RVector,
}

/// How the rectangular covariance of synchronized readings is assembled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RectCovarianceModel {
    /// `sigma^2 [[diag|z|^2, 2 diag(Re z Im z)], [2 diag(Re z Im z), diag|z|^2]]`.
    Coupled,
    /// `sigma^2 diag|z|^2` on both blocks, no cross term. This is the exact
    /// covariance of the linearized noise model used by [`simulate_frame`].
    #[default]
    Circular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementCovariances {
    /// Diagonal of the complex covariance of synchronized readings.
    pub lin: RVector,
    /// `2 m x 2 m` covariance of `[Re z; Im z]`.
    pub rect: RMatrix,
    /// Diagonal covariance of magnitude readings.
    pub nl: RVector,
}

impl MeasurementCovariances {
    /// Complex covariance as a diagonal matrix.
    pub fn lin_matrix(&self) -> CMatrix {
        CMatrix::from_diagonal(&self.lin.map(|v| C64::new(v, 0.0)))
    }
}

/// Covariances from measured values (`z`), floored at [`COVARIANCE_FLOOR`].
pub fn measurement_covariances(
    plan: &CompiledPlan,
    frame: &MeasurementFrame,
    rect_model: RectCovarianceModel,
) -> Result<MeasurementCovariances> {
    check_dim("synchronized readings", plan.n_lin(), frame.z_lin.len())?;
    check_dim("magnitude readings", plan.n_nl(), frame.z_nl.len())?;
    Ok(covariances_from_values(
        plan.sigma_meas,
        &frame.z_lin,
        &frame.z_nl,
        rect_model,
    ))
}

/// Covariances evaluated at model predictions instead of readings.
pub fn model_covariances(
    plan: &CompiledPlan,
    v: &CVector,
    rect_model: RectCovarianceModel,
) -> MeasurementCovariances {
    covariances_from_values(
        plan.sigma_meas,
        &plan.linear.eval(v),
        &eval_nonlinear(plan, v),
        rect_model,
    )
}

fn covariances_from_values(
    sigma: f64,
    z_lin: &CVector,
    z_nl: &RVector,
    rect_model: RectCovarianceModel,
) -> MeasurementCovariances {
    let s2 = sigma * sigma;
    let floor = |v: f64| {
        if v < COVARIANCE_FLOOR {
            if v != 0.0 || sigma != 0.0 {
                log::debug!("measurement variance {v:e} floored to {COVARIANCE_FLOOR:e}");
            }
            COVARIANCE_FLOOR
        } else {
            v
        }
    };
    let m = z_lin.len();
    let lin = z_lin.map(|z| floor(2.0 * s2 * z.norm_sqr()));
    let mut rect = RMatrix::zeros(2 * m, 2 * m);
    for (k, z) in z_lin.iter().enumerate() {
        let diag = floor(s2 * z.norm_sqr());
        rect[(k, k)] = diag;
        rect[(k + m, k + m)] = diag;
        if rect_model == RectCovarianceModel::Coupled {
            let cross = 2.0 * s2 * z.re * z.im;
            rect[(k, k + m)] = cross;
            rect[(k + m, k)] = cross;
        }
    }
    let nl = z_nl.map(|z| floor(s2 * z * z));
    MeasurementCovariances { lin, rect, nl }
}

/// Noise model for synchronized readings.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    /// `z = u (1 + w_mag + j w_ang)`.
    #[default]
    Linearized,
    /// `z = |u| (1 + w_mag) exp(j (angle(u) + w_ang))`.
    ExactPolar,
}

/// Applies relative magnitude/angle noise `(w_mag, w_ang)` to a phasor.
pub fn apply_phasor_noise(u: C64, w_mag: f64, w_ang: f64, model: NoiseModel) -> C64 {
    match model {
        NoiseModel::Linearized => u * C64::new(1.0 + w_mag, w_ang),
        NoiseModel::ExactPolar => u * (1.0 + w_mag) * C64::from_polar(1.0, w_ang),
    }
}

/// Key of the random stream used for sensor `sensor` at `(t, trial)`.
fn frame_stream(seed: u64, t: usize, trial: usize, sensor: usize) -> rng::Stream {
    rng::stream(seed, &[rng::tag::FRAME, t as u64, trial as u64, sensor as u64])
}

/// Noisy readings of the true state. Each sensor draws from its own stream
/// keyed by `(seed, t, trial, plan position)`.
pub fn simulate_frame(
    plan: &CompiledPlan,
    v_true: &CVector,
    t: usize,
    trial: usize,
    seed: u64,
    model: NoiseModel,
) -> Result<MeasurementFrame> {
    check_dim("true voltage", plan.linear.c.ncols(), v_true.len())?;
    let sigma = plan.sigma_meas;
    let u_lin = plan.linear.eval(v_true);
    let z_lin = CVector::from_fn(plan.n_lin(), |k, _| {
        let mut r = frame_stream(seed, t, trial, plan.linear_ids[k]);
        let w_mag: f64 = r.sample::<f64, _>(StandardNormal) * sigma;
        let w_ang: f64 = r.sample::<f64, _>(StandardNormal) * sigma;
        apply_phasor_noise(u_lin[k], w_mag, w_ang, model)
    });
    let u_nl = plan.nonlinear.eval(v_true);
    let z_nl = RVector::from_fn(plan.n_nl(), |k, _| {
        let mut r = frame_stream(seed, t, trial, plan.nonlinear_ids[k]);
        let w: f64 = r.sample::<f64, _>(StandardNormal) * sigma;
        (u_nl[k].norm() * (1.0 + w)).max(0.0)
    });
    Ok(MeasurementFrame { t, z_lin, z_nl })
}

/// Load forecasts used as low-accuracy measurements of the injections.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoMeasurements {
    /// Complex injections, p.u., zero at zero-injection entries.
    pub s: CVector,
    /// Relative standard deviation.
    pub sigma: f64,
}

impl PseudoMeasurements {
    pub fn new(s: CVector, sigma: f64, eps: &[usize]) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::validation("pseudo-measurements", "sigma_pseudo must be positive"));
        }
        check_zero_at(&s, eps)?;
        Ok(PseudoMeasurements { s, sigma })
    }

    /// Diagonal of `sigma^2 diag(|S|^2)`.
    pub fn covariance_diag(&self) -> RVector {
        let s2 = self.sigma * self.sigma;
        self.s.map(|z| s2 * z.norm_sqr())
    }
}

fn check_zero_at(s: &CVector, eps: &[usize]) -> Result<()> {
    for &e in eps {
        if e >= s.len() || s[e] != C64::new(0.0, 0.0) {
            return Err(Error::validation(
                "injections",
                format!("entry {e} must be zero (zero-injection constraint)"),
            ));
        }
    }
    Ok(())
}

/// Relative noise on the real and imaginary parts separately.
pub fn perturb_relative(s: &CVector, sigma: f64, rng: &mut impl Rng) -> CVector {
    s.map(|z| {
        let wr: f64 = rng.sample(StandardNormal);
        let wi: f64 = rng.sample(StandardNormal);
        C64::new(z.re * (1.0 + sigma * wr), z.im * (1.0 + sigma * wi))
    })
}

/// Draws pseudo-measurements around `s_true`. A `sigma` of zero returns `s_true`
/// (the attached covariance then uses the smallest positive sigma permitted).
pub fn sample_pseudo(
    s_true: &CVector,
    sigma: f64,
    eps: &[usize],
    seed: u64,
) -> Result<PseudoMeasurements> {
    check_zero_at(s_true, eps)?;
    if sigma < 0.0 {
        return Err(Error::validation("pseudo-measurements", "sigma_pseudo must be non-negative"));
    }
    let mut r = rng::stream(seed, &[rng::tag::PSEUDO]);
    let s = perturb_relative(s_true, sigma, &mut r);
    Ok(PseudoMeasurements {
        s,
        sigma: if sigma > 0.0 { sigma } else { f64::MIN_POSITIVE },
    })
}

// ---- frame CSV ----

/// Writes frames as `t,sensor_id,re,im`; `sensor_id` is the plan position and
/// `im` is empty for magnitude-only readings.
pub fn write_frames(
    path: impl AsRef<Path>,
    plan: &CompiledPlan,
    frames: &[MeasurementFrame],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, e.into()))?;
    let io = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["t", "sensor_id", "re", "im"]).map_err(io)?;
    for f in frames {
        let mut rows: Vec<(usize, String, String)> = Vec::new();
        for (k, &id) in plan.linear_ids.iter().enumerate() {
            rows.push((id, format!("{:e}", f.z_lin[k].re), format!("{:e}", f.z_lin[k].im)));
        }
        for (k, &id) in plan.nonlinear_ids.iter().enumerate() {
            rows.push((id, format!("{:e}", f.z_nl[k]), String::new()));
        }
        rows.sort_by_key(|r| r.0);
        for (id, re, im) in rows {
            w.write_record([f.t.to_string(), id.to_string(), re, im])
                .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads frames written by [`write_frames`]; every timestep must list every sensor.
pub fn read_frames(path: impl AsRef<Path>, plan: &CompiledPlan) -> Result<Vec<MeasurementFrame>> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::io(path, e.into()))?;
    let n_sensors = plan.n_sensors();
    let mut slot = vec![None; n_sensors];
    for (k, &id) in plan.linear_ids.iter().enumerate() {
        slot[id] = Some((true, k));
    }
    for (k, &id) in plan.nonlinear_ids.iter().enumerate() {
        slot[id] = Some((false, k));
    }
    let mut frames: Vec<MeasurementFrame> = Vec::new();
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let bad = |line: usize, msg: String| Error::parse(format!("frames CSV line {line}"), msg);
    for (line, rec) in r.records().enumerate() {
        let line = line + 2;
        let rec = rec.map_err(|e| bad(line, e.to_string()))?;
        if rec.len() < 3 {
            return Err(bad(line, "expected t,sensor_id,re,im".into()));
        }
        let t: usize = rec[0].parse().map_err(|e| bad(line, format!("t: {e}")))?;
        let id: usize = rec[1].parse().map_err(|e| bad(line, format!("sensor_id: {e}")))?;
        let re: f64 = rec[2].parse().map_err(|e| bad(line, format!("re: {e}")))?;
        let im_text = rec.get(3).unwrap_or("");
        let (is_lin, k) = slot
            .get(id)
            .copied()
            .flatten()
            .ok_or_else(|| bad(line, format!("unknown sensor_id {id}")))?;
        let pos = match frames.iter().position(|f| f.t == t) {
            Some(p) => p,
            None => {
                frames.push(MeasurementFrame {
                    t,
                    z_lin: CVector::zeros(plan.n_lin()),
                    z_nl: RVector::zeros(plan.n_nl()),
                });
                seen.push(vec![false; n_sensors]);
                frames.len() - 1
            }
        };
        if std::mem::replace(&mut seen[pos][id], true) {
            return Err(bad(line, format!("sensor {id} repeated at t={t}")));
        }
        if is_lin {
            let im: f64 = im_text
                .parse()
                .map_err(|e| bad(line, format!("im required for phasor sensor: {e}")))?;
            frames[pos].z_lin[k] = C64::new(re, im);
        } else {
            if !im_text.is_empty() {
                return Err(bad(line, "magnitude-only sensor must leave im empty".into()));
            }
            if re < 0.0 {
                return Err(bad(line, "magnitude must be non-negative".into()));
            }
            frames[pos].z_nl[k] = re;
        }
    }
    for (f, s) in frames.iter().zip(&seen) {
        if let Some(missing) = s.iter().position(|x| !x) {
            return Err(Error::parse(
                "frames CSV",
                format!("t={} has no reading for sensor {missing}", f.t),
            ));
        }
    }
    frames.sort_by_key(|f| f.t);
    Ok(frames)
}
