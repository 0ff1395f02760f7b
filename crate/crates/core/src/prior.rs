//! Offline prior: fixed-point power flow on pseudo-measurements, with the
//! covariance of its first-order sensitivity to pseudo-measurement errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    complexify_covariance, hermitian_part, realify, symmetric_part, CMatrix,
    CVector, RMatrix, C64,
};
use crate::measurement::PseudoMeasurements;
use crate::network::{compute_injections, no_load_voltage, AdmittanceBlocks, NetworkModel};
use crate::subspace::residual_from_currents;

/// Point at which the prior covariance is linearized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linearization {
    /// The no-load voltage `V0` (first fixed-point step).
    #[default]
    NoLoad,
    /// The converged power-flow solution.
    Converged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Step halving in Gauss-Newton when the objective does not decrease.
    pub backtracking: bool,
    pub max_halvings: usize,
    pub linearization: Linearization,
    pub record_iterates: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-8,
            max_iter: 50,
            backtracking: true,
            max_halvings: 20,
            linearization: Linearization::NoLoad,
            record_iterates: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Diagnostics {
    /// Per-iteration objective (WLS) or power mismatch (power flow).
    pub history: Vec<f64>,
    /// Largest zero-injection residual over all iterates.
    pub max_iterate_residual: f64,
    pub iterates: Option<Vec<CVector>>,
    pub jitter_used: bool,
}

/// Voltage estimate with its error covariance.
///
/// `cov` is always present; `cov_rect` holds the covariance of `[Re V; Im V]`
/// when the producing method works in rectangular coordinates.
#[derive(Clone, Debug)]
pub struct StateEstimate {
    pub v: CVector,
    pub cov: CMatrix,
    pub cov_rect: Option<RMatrix>,
    pub feasibility_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

impl StateEstimate {
    /// Standard deviation of each complex voltage, `sqrt(diag Sigma)`.
    pub fn std_dev(&self) -> Vec<f64> {
        (0..self.v.len()).map(|i| self.cov[(i, i)].re.max(0.0).sqrt()).collect()
    }
}

#[derive(Clone, Debug)]
pub struct PowerFlowSolution {
    pub v: CVector,
    pub iterations: usize,
    pub converged: bool,
    /// `||S(V) - s||_inf` over unconstrained entries.
    pub mismatch: f64,
    pub feasibility_residual: f64,
    pub diagnostics: Diagnostics,
}

fn is_constrained(eps: &[usize], n: usize) -> Vec<bool> {
    let mut mask = vec![false; n];
    for &e in eps {
        mask[e] = true;
    }
    mask
}

/// Fixed-point power flow `V <- Yd^-1 diag(conj V)^-1 conj(s) + V0` from `V0`.
///
/// Stops once the power mismatch at unconstrained entries drops below
/// `cfg.tol`. Running out of iterations is reported through `converged`.
pub fn solve_power_flow(
    adm: &AdmittanceBlocks,
    v_source: &CVector,
    s: &CVector,
    eps: &[usize],
    cfg: &SolverConfig,
) -> Result<PowerFlowSolution> {
    let n = adm.n_state();
    check_dim("injections", n, s.len())?;
    let constrained = is_constrained(eps, n);
    for &e in eps {
        if s[e] != C64::new(0.0, 0.0) {
            return Err(Error::validation(
                "injections",
                format!("entry {e} must be zero (zero-injection constraint)"),
            ));
        }
    }
    let v0 = no_load_voltage(adm, v_source)?;
    let s_conj = s.map(|z| z.conj());
    let mut v = v0.clone();
    let mut diag = Diagnostics::default();
    let mut iterates = cfg.record_iterates.then(Vec::new);
    let mut converged = false;
    let mut iterations = 0;
    let mut mismatch;
    let mut feas;
    loop {
        let (i, s_v) = compute_injections(adm, v_source, &v)?;
        feas = residual_from_currents(&i, eps);
        diag.max_iterate_residual = diag.max_iterate_residual.max(feas);
        mismatch = (0..n)
            .filter(|&k| !constrained[k])
            .map(|k| (s_v[k] - s[k]).norm())
            .fold(0.0, f64::max);
        diag.history.push(mismatch);
        if let Some(it) = iterates.as_mut() {
            it.push(v.clone());
        }
        if !mismatch.is_finite() {
            return Err(Error::DegenerateNetwork(format!(
                "power flow diverged after {iterations} iterations"
            )));
        }
        if mismatch < cfg.tol {
            converged = true;
            break;
        }
        if iterations >= cfg.max_iter {
            break;
        }
        let mut rhs = CVector::zeros(n);
        for k in 0..n {
            if s_conj[k] != C64::new(0.0, 0.0) {
                if v[k].norm() == 0.0 {
                    return Err(Error::DegenerateNetwork(format!(
                        "voltage collapsed to zero at state entry {k}"
                    )));
                }
                rhs[k] = s_conj[k] / v[k].conj();
            }
        }
        v = adm.solve_yd(&rhs)? + &v0;
        iterations += 1;
    }
    if !converged {
        log::warn!(
            "power flow stopped after {iterations} iterations with mismatch {mismatch:e}"
        );
    }
    diag.iterates = iterates;
    Ok(PowerFlowSolution {
        v,
        iterations,
        converged,
        mismatch,
        feasibility_residual: feas,
        diagnostics: diag,
    })
}

/// Complex and rectangular prior covariances, linearized at `v_lin`.
///
/// Complex: `Yd^-1 diag(conj V)^-1 Sigma_S diag(V)^-1 Yd^-*` with
/// `Sigma_S = sigma^2 diag|S|^2`.
/// Rectangular: `B Sigma_PQ B^T` with `Sigma_PQ = sigma^2 diag([Re S^2; Im S^2])`.
pub fn prior_covariances(
    adm: &AdmittanceBlocks,
    v_lin: &CVector,
    pseudo: &PseudoMeasurements,
) -> Result<(CMatrix, RMatrix)> {
    let n = adm.n_state();
    check_dim("linearization point", n, v_lin.len())?;
    check_dim("pseudo-measurements", n, pseudo.s.len())?;
    if let Some(k) = v_lin.iter().position(|z| z.norm() == 0.0) {
        return Err(Error::DegenerateNetwork(format!(
            "zero voltage at state entry {k} in covariance linearization"
        )));
    }
    let yd_inv = adm.yd_inverse()?;
    let sigma = pseudo.sigma;

    // Sigma = A A^* with A = Yd^-1 diag(sigma |S| / conj V).
    let mut a = yd_inv.clone();
    for k in 0..n {
        let scale = C64::new(sigma * pseudo.s[k].norm(), 0.0) / v_lin[k].conj();
        for r in 0..n {
            a[(r, k)] *= scale;
        }
    }
    let cov = hermitian_part(&(&a * a.adjoint()));

    // B = realify(Yd^-1) diag(|V|^2)^-1 [[diag Re V, diag Im V], [diag Im V, -diag Re V]],
    // scaled on the right by sigma diag([|Re S|; |Im S|]).
    let mut m = RMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        let v = v_lin[k];
        let inv = 1.0 / v.norm_sqr();
        let (sp, sq) = (sigma * pseudo.s[k].re.abs(), sigma * pseudo.s[k].im.abs());
        m[(k, k)] = v.re * inv * sp;
        m[(k, k + n)] = v.im * inv * sq;
        m[(k + n, k)] = v.im * inv * sp;
        m[(k + n, k + n)] = -v.re * inv * sq;
    }
    let b = realify(&yd_inv) * m;
    let cov_rect = symmetric_part(&(&b * b.transpose()));
    Ok((cov, cov_rect))
}

/// Power flow on pseudo-measurements plus both prior covariances.
pub fn fixed_point_power_flow(
    adm: &AdmittanceBlocks,
    v_source: &CVector,
    pseudo: &PseudoMeasurements,
    eps: &[usize],
    cfg: &SolverConfig,
) -> Result<StateEstimate> {
    let pf = solve_power_flow(adm, v_source, &pseudo.s, eps, cfg)?;
    let v_lin = match cfg.linearization {
        Linearization::NoLoad => no_load_voltage(adm, v_source)?,
        Linearization::Converged => pf.v.clone(),
    };
    let (cov, cov_rect) = prior_covariances(adm, &v_lin, pseudo)?;
    Ok(StateEstimate {
        v: pf.v,
        cov,
        cov_rect: Some(cov_rect),
        feasibility_residual: pf.feasibility_residual,
        iterations: pf.iterations,
        converged: pf.converged,
        diagnostics: pf.diagnostics,
    })
}

/// Same estimate, with the complex covariance rebuilt from the rectangular one.
pub fn rect_fixed_point_power_flow(
    adm: &AdmittanceBlocks,
    v_source: &CVector,
    pseudo: &PseudoMeasurements,
    eps: &[usize],
    cfg: &SolverConfig,
) -> Result<StateEstimate> {
    let mut est = fixed_point_power_flow(adm, v_source, pseudo, eps, cfg)?;
    let rect = est.cov_rect.as_ref().expect("power flow sets the rectangular covariance");
    est.cov = complexify_covariance(rect);
    Ok(est)
}

pub const ARTIFACT_VERSION: u32 = 1;

/// Serialized prior: mean, covariances (lower triangles, row-major) and the
/// hash of the network it was computed for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorArtifact {
    pub version: u32,
    pub network_hash: String,
    pub n_state: usize,
    pub sigma_pseudo: f64,
    pub v: Vec<[f64; 2]>,
    pub cov_lower: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov_rect_lower: Option<Vec<f64>>,
    pub converged: bool,
}

fn lower<T: Copy, U>(m: &nalgebra::DMatrix<T>, f: impl Fn(T) -> U) -> Vec<U> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            out.push(f(m[(i, j)]));
        }
    }
    out
}

fn from_lower<T: nalgebra::Scalar + Copy>(
    n: usize,
    data: &[T],
    conj: impl Fn(T) -> T,
    zero: T,
) -> Result<nalgebra::DMatrix<T>> {
    if data.len() != n * (n + 1) / 2 {
        return Err(Error::parse(
            "prior artifact",
            format!("covariance has {} entries, expected {}", data.len(), n * (n + 1) / 2),
        ));
    }
    let mut m = nalgebra::DMatrix::from_element(n, n, zero);
    let mut k = 0;
    for i in 0..n {
        for j in 0..=i {
            m[(i, j)] = data[k];
            m[(j, i)] = conj(data[k]);
            k += 1;
        }
    }
    Ok(m)
}

impl PriorArtifact {
    pub fn new(net: &NetworkModel, est: &StateEstimate, sigma_pseudo: f64) -> Self {
        PriorArtifact {
            version: ARTIFACT_VERSION,
            network_hash: net.content_hash(),
            n_state: est.v.len(),
            sigma_pseudo,
            v: est.v.iter().map(|z| [z.re, z.im]).collect(),
            cov_lower: lower(&est.cov, |z| [z.re, z.im]),
            cov_rect_lower: est.cov_rect.as_ref().map(|r| lower(r, |x| x)),
            converged: est.converged,
        }
    }

    /// Rebuilds the estimate, rejecting artifacts made for another network.
    pub fn to_estimate(&self, net: &NetworkModel) -> Result<StateEstimate> {
        if self.version != ARTIFACT_VERSION {
            return Err(Error::validation(
                "prior artifact",
                format!("unsupported version {}", self.version),
            ));
        }
        if self.network_hash != net.content_hash() {
            return Err(Error::validation(
                "prior artifact",
                "it was computed for a different network",
            ));
        }
        let n = self.n_state;
        check_dim("prior mean", n, self.v.len())?;
        let v = CVector::from_iterator(n, self.v.iter().map(|p| C64::new(p[0], p[1])));
        let data: Vec<C64> = self.cov_lower.iter().map(|p| C64::new(p[0], p[1])).collect();
        let cov = from_lower(n, &data, |z| z.conj(), C64::new(0.0, 0.0))?;
        let cov_rect = match &self.cov_rect_lower {
            Some(d) => Some(from_lower(2 * n, d, |x| x, 0.0)?),
            None => None,
        };
        let adm = crate::network::build_admittance(net)?;
        let eps = net.zero_injection_indices();
        let feas =
            crate::subspace::feasibility_residual(&adm, &eps, &net.v_source_vector(), &v);
        Ok(StateEstimate {
            v,
            cov,
            cov_rect,
            feasibility_residual: feas,
            iterations: 0,
            converged: self.converged,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self).expect("artifact serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse("prior artifact", e))
    }
}
