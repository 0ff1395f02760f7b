//! Dense complex/real helpers shared by the estimator modules.

use nalgebra::{Cholesky, ComplexField, DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub type C64 = nalgebra::Complex<f64>;
pub type CVector = DVector<C64>;
pub type CMatrix = DMatrix<C64>;
pub type RVector = DVector<f64>;
pub type RMatrix = DMatrix<f64>;

/// Diagonal covariance entries below this are raised to it.
pub const COVARIANCE_FLOOR: f64 = 1e-12;

/// Real block form `[[Re, -Im], [Im, Re]]` of a complex matrix.
pub fn realify(m: &CMatrix) -> RMatrix {
    let (r, c) = m.shape();
    let mut out = RMatrix::zeros(2 * r, 2 * c);
    for j in 0..c {
        for i in 0..r {
            let z = m[(i, j)];
            out[(i, j)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
            out[(i + r, j + c)] = z.re;
        }
    }
    out
}

/// Stacks `[Re v; Im v]`.
pub fn realify_vec(v: &CVector) -> RVector {
    let n = v.len();
    RVector::from_fn(2 * n, |i, _| if i < n { v[i].re } else { v[i - n].im })
}

/// Inverse of [`realify_vec`].
pub fn complexify_vec(v: &RVector) -> CVector {
    assert!(v.len() % 2 == 0, "rectangular vector must have even length");
    let n = v.len() / 2;
    CVector::from_fn(n, |i, _| C64::new(v[i], v[i + n]))
}

/// Complex covariance `E[(x - m)(x - m)^*]` from the covariance of `[Re x; Im x]`.
pub fn complexify_covariance(rect: &RMatrix) -> CMatrix {
    let n = rect.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let rr = rect[(i, j)];
        let ii = rect[(i + n, j + n)];
        let ri = rect[(i, j + n)];
        let ri_t = rect[(j, i + n)];
        C64::new(rr + ii, ri_t - ri)
    })
}

/// Rectangular covariance of a proper (circular) complex random vector with covariance `c`.
pub fn circular_realify_covariance(c: &CMatrix) -> RMatrix {
    let mut r = realify(c);
    r *= 0.5;
    r
}

pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

pub fn symmetric_part(m: &RMatrix) -> RMatrix {
    (m + m.transpose()).scale(0.5)
}

/// Orthonormal basis of the kernel of `a` (m x n, m <= n), as columns.
///
/// Singular values below `rel_tol * sigma_max` count as zero. The matrix is
/// padded to square so the SVD yields a complete right singular basis.
pub fn kernel_basis<T>(a: &DMatrix<T>, rel_tol: f64) -> Result<DMatrix<T>>
where
    T: ComplexField<RealField = f64>,
{
    let (m, n) = a.shape();
    if m == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    if m > n {
        return Err(Error::Config(format!(
            "kernel requested for a {m}x{n} matrix with more rows than columns"
        )));
    }
    let mut padded = DMatrix::<T>::zeros(n, n);
    padded.view_mut((0, 0), (m, n)).copy_from(a);
    let svd = SVD::new(padded, false, true);
    let v_t = svd.v_t.as_ref().expect("right singular vectors requested");
    let sigma_max = svd.singular_values.max();
    let threshold = rel_tol * sigma_max;
    let null: Vec<usize> = (0..n)
        .filter(|&k| svd.singular_values[k] <= threshold)
        .collect();
    if null.len() != n - m {
        return Err(Error::RankDeficient {
            expected: n - m,
            found: null.len(),
        });
    }
    let mut basis = DMatrix::<T>::zeros(n, null.len());
    for (col, &k) in null.iter().enumerate() {
        for i in 0..n {
            basis[(i, col)] = v_t[(k, i)].clone().conjugate();
        }
    }
    Ok(basis)
}

/// Cholesky factor of a Hermitian positive definite matrix, adding diagonal jitter
/// `1e-12 * trace / n` (growing tenfold per retry) when the plain factorization fails.
pub fn robust_cholesky<T>(m: &DMatrix<T>, what: &str) -> Result<Cholesky<T, Dyn>>
where
    T: ComplexField<RealField = f64>,
{
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok(ch);
    }
    let n = m.nrows().max(1);
    let trace: f64 = (0..m.nrows()).map(|i| m[(i, i)].clone().real().abs()).sum();
    let mut jitter = 1e-12 * trace.max(f64::MIN_POSITIVE) / n as f64;
    for _ in 0..8 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += T::from_real(jitter);
        }
        if let Some(ch) = Cholesky::new(shifted) {
            log::warn!("{what}: not positive definite, regularized with jitter {jitter:e}");
            return Ok(ch);
        }
        jitter *= 10.0;
    }
    Err(Error::Unobservable {
        deficient: count_small_eigenvalues(m, 1e-10),
    })
}

/// Number of eigenvalues below `rel_tol * max|eigenvalue|` of a Hermitian matrix.
pub fn count_small_eigenvalues<T>(m: &DMatrix<T>, rel_tol: f64) -> usize
where
    T: ComplexField<RealField = f64>,
{
    if m.is_empty() {
        return 0;
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let scale = eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    eig.iter().filter(|&&e| e <= rel_tol * scale).count()
}

/// Smallest eigenvalue of a Hermitian matrix (after Hermitian symmetrization).
pub fn min_eigenvalue<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.adjoint()).scale(0.5);
    SymmetricEigen::new(sym).eigenvalues.min()
}

pub fn max_abs<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    m.iter().fold(0.0, |acc, z| acc.max(z.clone().modulus()))
}

/// Induced infinity norm (max absolute row sum).
pub fn inf_norm<T>(m: &DMatrix<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    m.row_iter()
        .map(|row| row.iter().map(|z| z.clone().modulus()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn vec_inf_norm<T>(v: &DVector<T>) -> f64
where
    T: ComplexField<RealField = f64>,
{
    v.iter().fold(0.0, |acc, z| acc.max(z.clone().modulus()))
}

/// Rows of `m` selected by `rows`, in order.
pub fn select_rows<T>(m: &DMatrix<T>, rows: &[usize]) -> DMatrix<T>
where
    T: ComplexField,
{
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)].clone())
}

pub fn select_entries<T>(v: &DVector<T>, idx: &[usize]) -> DVector<T>
where
    T: ComplexField,
{
    DVector::from_fn(idx.len(), |i, _| v[idx[i]].clone())
}
