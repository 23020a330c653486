//! Dense matrix utilities: Kronecker algebra, the commutation permutation,
//! block access, Cholesky inverse/log-determinant, norms and sparsity counts.
//!
//! Indices in this module are zero-based. For a `pf x pf` matrix the block
//! `(i, j)` with `i, j < p` is the `f x f` submatrix at rows `i*f..(i+1)*f` and
//! columns `j*f..(j+1)*f`. The permuted block `(k, l)` with `k, l < f` is the
//! `p x p` block of `K^T M K`, where `K` maps index `i*f + k` to `k*p + i`.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative asymmetry tolerated when symmetrizing on construction.
pub const SYMMETRY_TOL: f64 = 1e-8;

const POWER_ITER_TOL: f64 = 1e-8;
const POWER_ITER_MAX: usize = 10_000;

/// A dense, exactly symmetric, positive definite matrix.
///
/// Construction averages `(M + M^T)/2` and verifies positive definiteness with
/// a Cholesky factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        let (sym, _) = symmetrize(m)?;
        if sym.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(SpdMatrix(sym))
    }

    pub fn identity(dim: usize) -> Self {
        SpdMatrix(DMatrix::identity(dim, dim))
    }

    /// Wraps a matrix the caller has already verified to be symmetric positive definite.
    pub(crate) fn from_verified(m: DMatrix<f64>) -> Self {
        debug_assert!(m.is_square());
        SpdMatrix(m)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Inverse via Cholesky. Always succeeds up to rounding for a verified SPD matrix.
    pub fn inverse(&self) -> Result<SpdMatrix> {
        chol_inv_logdet(&self.0).map(|(inv, _)| inv)
    }

    pub fn logdet(&self) -> Result<f64> {
        logdet_spd(&self.0)
    }

    pub fn scaled(&self, c: f64) -> Result<SpdMatrix> {
        if c <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(SpdMatrix(&self.0 * c))
    }
}

impl Deref for SpdMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl From<SpdMatrix> for DMatrix<f64> {
    fn from(m: SpdMatrix) -> Self {
        m.0
    }
}

/// Returns `(M + M^T)/2` and the relative asymmetry `max|M - M^T| / max(1, max|M|)`.
///
/// Fails with [`Error::NotSymmetric`] above [`SYMMETRY_TOL`].
pub fn symmetrize(m: DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let d = m.nrows();
    let scale = linf_norm(&m).max(1.0);
    let mut asym: f64 = 0.0;
    let mut out = m;
    for i in 0..d {
        for j in (i + 1)..d {
            let (a, b) = (out[(i, j)], out[(j, i)]);
            asym = asym.max((a - b).abs());
            let avg = 0.5 * (a + b);
            out[(i, j)] = avg;
            out[(j, i)] = avg;
        }
    }
    let rel = asym / scale;
    if rel > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(rel));
    }
    Ok((out, rel))
}

/// Standard Kronecker product: `out[i*f + k, j*f + l] = a[i, j] * b[k, l]`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Computes `K^T m K` for the `pf x pf` commutation permutation as a pure index map.
pub fn permute_kron(m: &DMatrix<f64>, p: usize, f: usize) -> Result<DMatrix<f64>> {
    let d = p * f;
    if m.nrows() != d || m.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "permute_kron expects {d}x{d}, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let src = |k: usize, i: usize| i * f + k;
    Ok(DMatrix::from_fn(d, d, |r, c| {
        let (k, i) = (r / p, r % p);
        let (l, j) = (c / p, c % p);
        m[(src(k, i), src(l, j))]
    }))
}

/// Block accessor over a `pf x pf` matrix.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    parent: &'a DMatrix<f64>,
    p: usize,
    f: usize,
}

impl<'a> BlockView<'a> {
    pub fn new(parent: &'a DMatrix<f64>, p: usize, f: usize) -> Result<Self> {
        let d = p * f;
        if parent.nrows() != d || parent.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "block view expects {d}x{d}, got {}x{}",
                parent.nrows(),
                parent.ncols()
            )));
        }
        Ok(BlockView { parent, p, f })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn f(&self) -> usize {
        self.f
    }

    /// The `f x f` block `(i, j)`.
    pub fn block(&self, i: usize, j: usize) -> Result<DMatrix<f64>> {
        if i >= self.p || j >= self.p {
            return Err(Error::IndexOutOfRange {
                row: i,
                col: j,
                bound: self.p,
            });
        }
        let f = self.f;
        Ok(self.parent.view((i * f, j * f), (f, f)).into_owned())
    }

    /// The `p x p` block `(k, l)` of the permuted matrix `K^T M K`.
    pub fn pblock(&self, k: usize, l: usize) -> Result<DMatrix<f64>> {
        if k >= self.f || l >= self.f {
            return Err(Error::IndexOutOfRange {
                row: k,
                col: l,
                bound: self.f,
            });
        }
        let f = self.f;
        Ok(DMatrix::from_fn(self.p, self.p, |i, j| {
            self.parent[(i * f + k, j * f + l)]
        }))
    }
}

/// Cholesky-based inverse and log-determinant of a symmetric positive definite matrix.
pub fn chol_inv_logdet(m: &DMatrix<f64>) -> Result<(SpdMatrix, f64)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inv = chol.inverse();
    let (inv, _) = symmetrize(inv)?;
    Ok((SpdMatrix(inv), logdet))
}

/// Log-determinant through Cholesky, without forming the inverse.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.clone().cholesky().is_some()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub frobenius: f64,
    pub linf: f64,
    pub spectral: f64,
}

pub fn norms(m: &DMatrix<f64>) -> Norms {
    Norms {
        frobenius: m.norm(),
        linf: linf_norm(m),
        spectral: spectral_norm(m),
    }
}

/// Largest absolute entry.
pub fn linf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Sum of absolute entries.
pub fn l1_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).sum()
}

/// Largest singular value by power iteration on `M^T M`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    if linf_norm(m) == 0.0 {
        return 0.0;
    }
    // Deterministic start with a mild tilt so it is not orthogonal to simple eigenvectors.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 + 1.0) / (7.0 * n as f64));
    v.normalize_mut();
    let mut est = 0.0;
    for _ in 0..POWER_ITER_MAX {
        let mv = m * &v;
        let mut w = m.tr_mul(&mv);
        let next = mv.norm();
        let wn = w.norm();
        if wn == 0.0 {
            return next;
        }
        w /= wn;
        v = w;
        if (next - est).abs() <= POWER_ITER_TOL * next {
            est = next;
            break;
        }
        est = next;
    }
    // One more Rayleigh evaluation with the converged vector.
    (m * &v).norm().max(est)
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    extreme_eigenvalues(m).0
}

/// Condition number `lambda_max / lambda_min` of a symmetric matrix.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let (lo, hi) = extreme_eigenvalues(m);
    hi / lo
}

/// Count of nonzero off-diagonal entries, both triangles.
pub fn sparsity(m: &DMatrix<f64>) -> usize {
    let mut count = 0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if i != j && m[(i, j)] != 0.0 {
                count += 1;
            }
        }
    }
    count
}

/// Frobenius inner product `tr(A^T B)`.
pub fn frobenius_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// `|| A (x) B - C (x) D ||_F^2` from factor inner products, never forming a product.
pub fn kron_distance_sq(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> f64 {
    let aa = frobenius_inner(a, a) * frobenius_inner(b, b);
    let cc = frobenius_inner(c, c) * frobenius_inner(d, d);
    let ac = frobenius_inner(a, c) * frobenius_inner(b, d);
    (aa + cc - 2.0 * ac).max(0.0)
}

/// `|| A (x) B ||_F^2`.
pub fn kron_norm_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    frobenius_inner(a, a) * frobenius_inner(b, b)
}

/// `|| M - A (x) B ||_F^2` for a dense `pf x pf` matrix `M`, blockwise.
pub fn dense_kron_distance_sq(m: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let (p, f) = (a.nrows(), b.nrows());
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            let aij = a[(i, j)];
            for k in 0..f {
                for l in 0..f {
                    let diff = m[(i * f + k, j * f + l)] - aij * b[(k, l)];
                    acc += diff * diff;
                }
            }
        }
    }
    acc
}
