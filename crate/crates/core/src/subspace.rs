//! Zero-injection constraints as an affine subspace `V = F x + V0`.
//!
//! `F` spans the kernel of the constrained rows of `Yd`. Any orthonormal
//! kernel basis is acceptable; downstream results depend only on `F F^*`.

use crate::error::{check_dim, Result};
use crate::linalg::{
    kernel_basis, realify, realify_vec, select_entries, vec_inf_norm, CMatrix, CVector, RMatrix,
    RVector,
};
use crate::network::AdmittanceBlocks;

/// Singular values below this fraction of the largest count as zero.
pub const KERNEL_REL_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct SubspaceBasis {
    f: CMatrix,
    v_p: CVector,
    eps: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct RectSubspaceBasis {
    f: RMatrix,
    v_p: RVector,
    eps: Vec<usize>,
}

impl SubspaceBasis {
    pub fn f(&self) -> &CMatrix {
        &self.f
    }
    pub fn particular(&self) -> &CVector {
        &self.v_p
    }
    pub fn constrained(&self) -> &[usize] {
        &self.eps
    }
    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    /// `F x + V_p`.
    pub fn lift(&self, x: &CVector) -> Result<CVector> {
        check_dim("subspace coordinates", self.dim(), x.len())?;
        Ok(&self.f * x + &self.v_p)
    }

    /// `F^* (v - V_p)`: coordinates of the closest feasible point.
    pub fn project(&self, v: &CVector) -> Result<CVector> {
        check_dim("voltage vector", self.v_p.len(), v.len())?;
        Ok(self.f.ad_mul(&(v - &self.v_p)))
    }
}

impl RectSubspaceBasis {
    pub fn f(&self) -> &RMatrix {
        &self.f
    }
    pub fn particular(&self) -> &RVector {
        &self.v_p
    }
    pub fn constrained(&self) -> &[usize] {
        &self.eps
    }
    pub fn dim(&self) -> usize {
        self.f.ncols()
    }

    pub fn lift(&self, x: &RVector) -> Result<RVector> {
        check_dim("subspace coordinates", self.dim(), x.len())?;
        Ok(&self.f * x + &self.v_p)
    }

    pub fn project(&self, v: &RVector) -> Result<RVector> {
        check_dim("voltage vector", self.v_p.len(), v.len())?;
        Ok(self.f.tr_mul(&(v - &self.v_p)))
    }
}

fn checked_eps(eps: &[usize], n: usize) -> Result<Vec<usize>> {
    let mut e = eps.to_vec();
    e.sort_unstable();
    e.dedup();
    if let Some(&bad) = e.iter().find(|&&i| i >= n) {
        return Err(crate::Error::validation(
            "zero-injection set",
            format!("index {bad} outside state of size {n}"),
        ));
    }
    Ok(e)
}

/// Complex kernel basis of `(Yd)_eps` with particular solution `v0`.
pub fn complex_kernel_basis(
    adm: &AdmittanceBlocks,
    eps: &[usize],
    v0: &CVector,
) -> Result<SubspaceBasis> {
    let n = adm.n_state();
    check_dim("no-load voltage", n, v0.len())?;
    let eps = checked_eps(eps, n)?;
    let f = if eps.is_empty() {
        CMatrix::identity(n, n)
    } else {
        let (rows, _) = adm.constraint_rows(&eps);
        kernel_basis(&rows, KERNEL_REL_TOL)?
    };
    Ok(SubspaceBasis {
        f,
        v_p: v0.clone(),
        eps,
    })
}

/// Real kernel basis of `[[Re, -Im], [Im, Re]]` of `(Yd)_eps`, over `[Re V; Im V]`.
pub fn rect_kernel_basis(
    adm: &AdmittanceBlocks,
    eps: &[usize],
    v0: &CVector,
) -> Result<RectSubspaceBasis> {
    let n = adm.n_state();
    check_dim("no-load voltage", n, v0.len())?;
    let eps = checked_eps(eps, n)?;
    let f = if eps.is_empty() {
        RMatrix::identity(2 * n, 2 * n)
    } else {
        let (rows, _) = adm.constraint_rows(&eps);
        kernel_basis(&realify(&rows), KERNEL_REL_TOL)?
    };
    Ok(RectSubspaceBasis {
        f,
        v_p: realify_vec(v0),
        eps,
    })
}

/// `||(Yd)_eps v + (Yc)_eps V_source||_inf`: current drawn at zero-injection entries.
pub fn feasibility_residual(
    adm: &AdmittanceBlocks,
    eps: &[usize],
    v_source: &CVector,
    v: &CVector,
) -> f64 {
    if eps.is_empty() {
        return 0.0;
    }
    let (yd_eps, yc_eps) = adm.constraint_rows(eps);
    vec_inf_norm(&(yd_eps * v + yc_eps * v_source))
}

/// Same as [`feasibility_residual`] but reusing a full current vector.
pub(crate) fn residual_from_currents(i: &CVector, eps: &[usize]) -> f64 {
    if eps.is_empty() {
        0.0
    } else {
        vec_inf_norm(&select_entries(i, eps))
    }
}
