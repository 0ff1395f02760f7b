//! Online step: Bayesian updates of the prior with sensor frames, and the
//! subspace-constrained WLS baselines they are compared against.

use std::io::Write;

use crate::error::{check_dim, Error, Result};
use crate::linalg::{
    complexify_covariance, complexify_vec, count_small_eigenvalues, hermitian_part, realify,
    realify_vec, robust_cholesky, symmetric_part, CMatrix, CVector, RMatrix, RVector, C64,
    COVARIANCE_FLOOR,
};
use crate::measurement::{
    eval_nonlinear, nonlinear_jacobian, CompiledPlan, LinearMap, MeasurementCovariances,
    MeasurementFrame, PseudoMeasurements,
};
use crate::network::{
    build_admittance, compute_injections, no_load_voltage, AdmittanceBlocks, NetworkModel,
    PhaseIndexMap,
};
use crate::prior::{Diagnostics, SolverConfig, StateEstimate};
use crate::subspace::{
    complex_kernel_basis, feasibility_residual, rect_kernel_basis, RectSubspaceBasis,
    SubspaceBasis,
};

/// Priors whose zero-injection residual exceeds this are rejected by the updates.
pub const PRIOR_FEASIBILITY_LIMIT: f64 = 1e-6;

/// Relinearizations allowed in the iterated mixed update.
pub const MAX_RELINEARIZATIONS: usize = 5;

/// Network quantities shared by all estimators.
#[derive(Clone, Debug)]
pub struct Context {
    pub adm: AdmittanceBlocks,
    pub v_source: CVector,
    pub eps: Vec<usize>,
    pub v0: CVector,
    pub basis: SubspaceBasis,
    pub rect_basis: RectSubspaceBasis,
}

impl Context {
    pub fn new(net: &NetworkModel) -> Result<Self> {
        let adm = build_admittance(net)?;
        let v_source = net.v_source_vector();
        let eps = net.zero_injection_indices();
        let v0 = no_load_voltage(&adm, &v_source)?;
        let basis = complex_kernel_basis(&adm, &eps, &v0)?;
        let rect_basis = rect_kernel_basis(&adm, &eps, &v0)?;
        Ok(Context {
            adm,
            v_source,
            eps,
            v0,
            basis,
            rect_basis,
        })
    }

    pub fn n_state(&self) -> usize {
        self.adm.n_state()
    }

    pub fn map(&self) -> &PhaseIndexMap {
        self.adm.map()
    }

    pub fn feasibility(&self, v: &CVector) -> f64 {
        feasibility_residual(&self.adm, &self.eps, &self.v_source, v)
    }

    /// State entries without a zero-injection constraint.
    pub fn unconstrained(&self) -> Vec<usize> {
        (0..self.n_state()).filter(|i| self.eps.binary_search(i).is_err()).collect()
    }

    fn check_prior(&self, prior: &StateEstimate) -> Result<()> {
        check_dim("prior mean", self.n_state(), prior.v.len())?;
        let r = self.feasibility(&prior.v);
        if !(r <= PRIOR_FEASIBILITY_LIMIT) {
            return Err(Error::InfeasiblePrior {
                residual: r,
                limit: PRIOR_FEASIBILITY_LIMIT,
            });
        }
        Ok(())
    }

    fn finish(&self, v: CVector, cov: CMatrix, cov_rect: Option<RMatrix>) -> StateEstimate {
        let feasibility_residual = self.feasibility(&v);
        StateEstimate {
            v,
            cov,
            cov_rect,
            feasibility_residual,
            iterations: 1,
            converged: true,
            diagnostics: Diagnostics::default(),
        }
    }
}

/// Linear Bayesian update in complex coordinates:
/// `K = Sigma C^* (C Sigma C^* + Sigma_m)^-1`, `V+ = V + K (z - C V - d)`.
pub fn linear_update_complex(
    ctx: &Context,
    prior: &StateEstimate,
    map: &LinearMap,
    z: &CVector,
    sigma_m: &CMatrix,
) -> Result<StateEstimate> {
    ctx.check_prior(prior)?;
    let m = map.rows();
    check_dim("synchronized readings", m, z.len())?;
    check_dim("measurement covariance", m, sigma_m.nrows())?;
    let sigma = &prior.cov;
    let c_sigma = &map.c * sigma;
    let s = hermitian_part(&(&c_sigma * map.c.adjoint() + sigma_m));
    let chol = robust_cholesky(&s, "innovation covariance")?;
    let k = chol.solve(&c_sigma).adjoint();
    let innovation = z - map.eval(&prior.v);
    let v = &prior.v + &k * innovation;
    let kc_sigma = &k * &c_sigma;
    let cov = sigma + &k * &s * k.adjoint() - &kc_sigma - kc_sigma.adjoint();
    Ok(ctx.finish(v, hermitian_part(&cov), None))
}

/// The same update written as a WLS problem on the subspace coordinates:
/// `x+ = (P^-1 + F^* C^* Sm^-1 C F)^-1 (P^-1 x + F^* C^* Sm^-1 (z - C V0 - d))`
/// with `P = F^* Sigma F`.
pub fn subspace_wls_update(
    ctx: &Context,
    prior: &StateEstimate,
    map: &LinearMap,
    z: &CVector,
    sigma_m: &CMatrix,
) -> Result<StateEstimate> {
    ctx.check_prior(prior)?;
    let m = map.rows();
    check_dim("synchronized readings", m, z.len())?;
    check_dim("measurement covariance", m, sigma_m.nrows())?;
    let f = ctx.basis.f();
    let v0 = ctx.basis.particular();
    let x_prior = f.ad_mul(&(&prior.v - v0));
    let p = hermitian_part(&(f.adjoint() * &prior.cov * f));
    let p_chol = robust_cholesky(&p, "prior covariance on the subspace")?;
    let cf = &map.c * f;
    let sm_chol = robust_cholesky(sigma_m, "measurement covariance")?;
    let sm_inv_cf = sm_chol.solve(&cf);
    let p_inv = p_chol.inverse();
    let a = hermitian_part(&(&p_inv + cf.adjoint() * &sm_inv_cf));
    let rhs = &p_inv * x_prior + sm_inv_cf.ad_mul(&(z - map.eval(v0)));
    let a_chol = robust_cholesky(&a, "posterior information matrix")?;
    let x = a_chol.solve(&rhs);
    let v = f * x + v0;
    let cov = f * a_chol.inverse() * f.adjoint();
    Ok(ctx.finish(v, hermitian_part(&cov), None))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixedOptions {
    /// 1 for a single linearization at the prior mean; up to
    /// [`MAX_RELINEARIZATIONS`] for the iterated form.
    pub linearizations: usize,
    pub tol: f64,
}

impl Default for MixedOptions {
    fn default() -> Self {
        MixedOptions {
            linearizations: 1,
            tol: 1e-10,
        }
    }
}

/// Stacked rectangular measurement block `[realify(C_L); grad |C_NL V + d|]`
/// and its value at `v_rect`.
fn mixed_model(plan: &CompiledPlan, c_l: &RMatrix, d_l: &RVector, v_rect: &RVector) -> Result<(RMatrix, RVector)> {
    let n2 = v_rect.len();
    let m2 = c_l.nrows();
    let q = plan.n_nl();
    let mut h = RMatrix::zeros(m2 + q, n2);
    let mut val = RVector::zeros(m2 + q);
    h.rows_mut(0, m2).copy_from(c_l);
    val.rows_mut(0, m2).copy_from(&(c_l * v_rect + d_l));
    if q > 0 {
        h.rows_mut(m2, q).copy_from(&nonlinear_jacobian(plan, v_rect)?);
        val.rows_mut(m2, q)
            .copy_from(&eval_nonlinear(plan, &complexify_vec(v_rect)));
    }
    Ok((h, val))
}

/// Bayesian update in rectangular coordinates with synchronized phasors and
/// magnitude-only readings. Magnitudes are linearized at the prior mean, or
/// re-linearized at successive estimates when `opts.linearizations > 1`.
pub fn mixed_update_rect(
    ctx: &Context,
    prior: &StateEstimate,
    plan: &CompiledPlan,
    frame: &MeasurementFrame,
    covs: &MeasurementCovariances,
    opts: &MixedOptions,
) -> Result<StateEstimate> {
    ctx.check_prior(prior)?;
    if opts.linearizations == 0 || opts.linearizations > MAX_RELINEARIZATIONS {
        return Err(Error::Config(format!(
            "linearizations must be between 1 and {MAX_RELINEARIZATIONS}"
        )));
    }
    let sigma = prior.cov_rect.as_ref().ok_or_else(|| {
        Error::Config("mixed update needs a prior with a rectangular covariance".into())
    })?;
    let n = ctx.n_state();
    let (m, q) = (plan.n_lin(), plan.n_nl());
    check_dim("synchronized readings", m, frame.z_lin.len())?;
    check_dim("magnitude readings", q, frame.z_nl.len())?;
    check_dim("rectangular measurement covariance", 2 * m, covs.rect.nrows())?;
    check_dim("magnitude covariance", q, covs.nl.len())?;

    let c_l = realify(&plan.linear.c);
    let d_l = realify_vec(&plan.linear.d);
    let mut w = RMatrix::zeros(2 * m + q, 2 * m + q);
    w.view_mut((0, 0), (2 * m, 2 * m)).copy_from(&covs.rect);
    for k in 0..q {
        w[(2 * m + k, 2 * m + k)] = covs.nl[k];
    }
    let mut z = RVector::zeros(2 * m + q);
    z.rows_mut(0, 2 * m).copy_from(&realify_vec(&frame.z_lin));
    z.rows_mut(2 * m, q).copy_from(&frame.z_nl);

    let x_prior = realify_vec(&prior.v);
    let mut x = x_prior.clone();
    let mut iterations = 0;
    let mut result = None;
    for _ in 0..opts.linearizations {
        let (h, val) = mixed_model(plan, &c_l, &d_l, &x)?;
        let innovation = &z - val - &h * (&x_prior - &x);
        let h_sigma = &h * sigma;
        let s = symmetric_part(&(&h_sigma * h.transpose() + &w));
        let chol = robust_cholesky(&s, "innovation covariance")?;
        let k = chol.solve(&h_sigma).transpose();
        let x_next = &x_prior + &k * innovation;
        let step = (&x_next - &x).amax();
        x = x_next;
        iterations += 1;
        result = Some((k, h_sigma, s));
        if step < opts.tol {
            break;
        }
    }
    let (k, h_sigma, s) = result.expect("at least one linearization");
    let kh_sigma = &k * &h_sigma;
    let cov_rect = symmetric_part(&(sigma + &k * &s * k.transpose() - &kh_sigma - kh_sigma.transpose()));
    debug_assert_eq!(x.len(), 2 * n);
    let mut est = ctx.finish(complexify_vec(&x), complexify_covariance(&cov_rect), Some(cov_rect));
    est.iterations = iterations;
    Ok(est)
}

/// Measurements entering a WLS solve besides the pseudo-measurements.
#[derive(Clone, Copy, Debug)]
pub struct SensorData<'a> {
    pub plan: &'a CompiledPlan,
    pub frame: &'a MeasurementFrame,
    pub covs: &'a MeasurementCovariances,
    /// Include magnitude-only readings.
    pub nonlinear: bool,
}

struct WlsModel<'a> {
    ctx: &'a Context,
    unconstrained: Vec<usize>,
    c_l: RMatrix,
    d_l: RVector,
    sensors: Option<SensorData<'a>>,
    rows: usize,
}

impl WlsModel<'_> {
    fn n_nl(&self) -> usize {
        match self.sensors {
            Some(s) if s.nonlinear => s.plan.n_nl(),
            _ => 0,
        }
    }

    /// `h(V)` and its Jacobian with respect to `[Re V; Im V]`.
    fn eval(&self, v_rect: &RVector) -> Result<(RVector, RMatrix)> {
        let n = self.ctx.n_state();
        let u = self.unconstrained.len();
        let v = complexify_vec(v_rect);
        let (i, s) = compute_injections(&self.ctx.adm, &self.ctx.v_source, &v)?;
        let yd = self.ctx.adm.yd();
        let mut h = RVector::zeros(self.rows);
        let mut jac = RMatrix::zeros(self.rows, 2 * n);
        // dS = (diag conj I + diag V conj Yd) dRe + j (diag conj I - diag V conj Yd) dIm
        for (r, &k) in self.unconstrained.iter().enumerate() {
            h[r] = s[k].re;
            h[r + u] = s[k].im;
            for j in 0..n {
                let coupling = v[k] * yd[(k, j)].conj();
                let (mut d_re, mut d_im) = (coupling, -coupling);
                if j == k {
                    d_re += i[k].conj();
                    d_im += i[k].conj();
                }
                let d_im = d_im * C64::new(0.0, 1.0);
                jac[(r, j)] = d_re.re;
                jac[(r + u, j)] = d_re.im;
                jac[(r, j + n)] = d_im.re;
                jac[(r + u, j + n)] = d_im.im;
            }
        }
        if let Some(sd) = self.sensors {
            let m2 = self.c_l.nrows();
            let off = 2 * u;
            h.rows_mut(off, m2).copy_from(&(&self.c_l * v_rect + &self.d_l));
            jac.view_mut((off, 0), (m2, 2 * n)).copy_from(&self.c_l);
            let q = self.n_nl();
            if q > 0 {
                h.rows_mut(off + m2, q).copy_from(&eval_nonlinear(sd.plan, &v));
                jac.view_mut((off + m2, 0), (q, 2 * n))
                    .copy_from(&nonlinear_jacobian(sd.plan, v_rect)?);
            }
        }
        Ok((h, jac))
    }
}

fn floor_var(v: f64) -> f64 {
    v.max(COVARIANCE_FLOOR)
}

/// Gauss-Newton WLS on the zero-injection subspace, in rectangular coordinates
/// `[Re V; Im V] = F x + V0`. Pseudo-measurements enter as `[Re S; Im S]` at
/// unconstrained entries; `sensors` adds synchronized phasors and optionally
/// magnitudes. Iteration starts from the projection of `init` onto the subspace.
pub fn wls_subspace(
    ctx: &Context,
    pseudo: &PseudoMeasurements,
    sensors: Option<SensorData<'_>>,
    init: &CVector,
    cfg: &SolverConfig,
) -> Result<StateEstimate> {
    let n = ctx.n_state();
    check_dim("pseudo-measurements", n, pseudo.s.len())?;
    check_dim("initial voltage", n, init.len())?;
    let unconstrained = ctx.unconstrained();
    let u = unconstrained.len();
    let (c_l, d_l) = match sensors {
        Some(sd) => (realify(&sd.plan.linear.c), realify_vec(&sd.plan.linear.d)),
        None => (RMatrix::zeros(0, 2 * n), RVector::zeros(0)),
    };
    let mut model = WlsModel {
        ctx,
        unconstrained,
        c_l,
        d_l,
        sensors,
        rows: 0,
    };
    let m2 = model.c_l.nrows();
    let q = model.n_nl();
    model.rows = 2 * u + m2 + q;

    let mut z = RVector::zeros(model.rows);
    let mut w = RMatrix::zeros(model.rows, model.rows);
    let s2 = pseudo.sigma * pseudo.sigma;
    for (r, &k) in model.unconstrained.iter().enumerate() {
        let s = pseudo.s[k];
        z[r] = s.re;
        z[r + u] = s.im;
        w[(r, r)] = floor_var(s2 * s.re * s.re);
        w[(r + u, r + u)] = floor_var(s2 * s.im * s.im);
    }
    if let Some(sd) = sensors {
        check_dim("synchronized readings", sd.plan.n_lin(), sd.frame.z_lin.len())?;
        check_dim("rectangular measurement covariance", m2, sd.covs.rect.nrows())?;
        z.rows_mut(2 * u, m2).copy_from(&realify_vec(&sd.frame.z_lin));
        w.view_mut((2 * u, 2 * u), (m2, m2)).copy_from(&sd.covs.rect);
        if q > 0 {
            check_dim("magnitude readings", q, sd.frame.z_nl.len())?;
            z.rows_mut(2 * u + m2, q).copy_from(&sd.frame.z_nl);
            for k in 0..q {
                w[(2 * u + m2 + k, 2 * u + m2 + k)] = sd.covs.nl[k];
            }
        }
    }
    // Whitening: with W = L L^T, minimize |L^-1 (z - h)|^2.
    let w_chol = robust_cholesky(&w, "WLS weight matrix")?;
    let whiten = |m: &RMatrix| w_chol.l().solve_lower_triangular(m).expect("L is invertible");
    let whiten_v = |v: &RVector| w_chol.l().solve_lower_triangular(v).expect("L is invertible");

    let basis = &ctx.rect_basis;
    let f = basis.f();
    let mut x = basis.project(&realify_vec(init))?;
    let objective = |x: &RVector| -> Result<f64> {
        let (h, _) = model.eval(&basis.lift(x)?)?;
        Ok(whiten_v(&(&z - h)).norm_squared())
    };

    let mut diag = Diagnostics::default();
    let mut iterates = cfg.record_iterates.then(Vec::new);
    let mut converged = false;
    let mut iterations = 0;
    let mut obj = objective(&x)?;
    diag.history.push(obj);
    while iterations < cfg.max_iter {
        let v_rect = basis.lift(&x)?;
        let (h, jac) = model.eval(&v_rect)?;
        let hw = whiten(&(jac * f));
        let rw = whiten_v(&(&z - h));
        let g = hw.tr_mul(&hw);
        let chol = g.clone().cholesky().ok_or_else(|| Error::Unobservable {
            deficient: count_small_eigenvalues(&g, 1e-12).max(1),
        })?;
        let dx = chol.solve(&hw.tr_mul(&rw));
        let mut step = 1.0;
        let mut x_new = &x + &dx;
        let mut obj_new = objective(&x_new)?;
        let decreased = |o: f64| o <= obj * (1.0 + 1e-12);
        if cfg.backtracking {
            let mut halvings = 0;
            while !decreased(obj_new) && halvings < cfg.max_halvings {
                step *= 0.5;
                x_new = &x + &dx * step;
                obj_new = objective(&x_new)?;
                halvings += 1;
            }
            if !decreased(obj_new) {
                log::warn!("WLS line search failed to reduce the objective");
            }
        }
        if !obj_new.is_finite() {
            log::warn!("WLS objective became non-finite; keeping the last iterate");
            break;
        }
        let change = (&dx * step).amax();
        x = x_new;
        obj = obj_new;
        iterations += 1;
        diag.history.push(obj);
        if let Some(it) = iterates.as_mut() {
            it.push(complexify_vec(&basis.lift(&x)?));
        }
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("WLS stopped after {iterations} iterations without meeting tolerance");
    }

    let v_rect = basis.lift(&x)?;
    let (_, jac) = model.eval(&v_rect)?;
    let hw = whiten(&(jac * f));
    let g = hw.tr_mul(&hw);
    let g_chol = g.clone().cholesky().ok_or_else(|| Error::Unobservable {
        deficient: count_small_eigenvalues(&g, 1e-12).max(1),
    })?;
    let cov_rect = symmetric_part(&(f * g_chol.inverse() * f.transpose()));
    let v = complexify_vec(&v_rect);
    diag.iterates = iterates;
    diag.max_iterate_residual = ctx.feasibility(&v);
    Ok(StateEstimate {
        feasibility_residual: ctx.feasibility(&v),
        v,
        cov: complexify_covariance(&cov_rect),
        cov_rect: Some(cov_rect),
        iterations,
        converged,
        diagnostics: diag,
    })
}

/// WLS on pseudo-measurements alone, started at the no-load voltage.
pub fn wls_prior(
    ctx: &Context,
    pseudo: &PseudoMeasurements,
    cfg: &SolverConfig,
) -> Result<StateEstimate> {
    wls_subspace(ctx, pseudo, None, &ctx.v0, cfg)
}

/// Writes `t,bus,phase,re_v,im_v,std_v` rows for one estimate.
pub fn write_estimate_rows<W: Write>(
    out: &mut csv::Writer<W>,
    t: usize,
    map: &PhaseIndexMap,
    est: &StateEstimate,
) -> Result<()> {
    let std = est.std_dev();
    for (k, bp) in map.state_entries().iter().enumerate() {
        out.write_record([
            t.to_string(),
            bp.bus.clone(),
            bp.phase.to_string(),
            format!("{:e}", est.v[k].re),
            format!("{:e}", est.v[k].im),
            format!("{:e}", std[k]),
        ])
        .map_err(|e| Error::Config(format!("writing estimates: {e}")))?;
    }
    Ok(())
}

pub const ESTIMATE_HEADER: [&str; 6] = ["t", "bus", "phase", "re_v", "im_v", "std_v"];
