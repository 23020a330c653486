//! Ground-truth Kronecker models, matrix-normal sampling and sample covariances.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matkit::{self, kron, BlockView, SpdMatrix};
use crate::rng::{rng_from_seed, Rng};

/// True model `Sigma0 = A0 (x) B0` with precision factors `X0 = A0^-1`, `Y0 = B0^-1`.
#[derive(Debug, Clone)]
pub struct KroneckerModel {
    a0: SpdMatrix,
    b0: SpdMatrix,
    x0: SpdMatrix,
    y0: SpdMatrix,
    chol_a: DMatrix<f64>,
    chol_b: DMatrix<f64>,
    sigma0: OnceLock<DMatrix<f64>>,
    theta0: OnceLock<DMatrix<f64>>,
}

impl KroneckerModel {
    pub fn from_covariances(a0: SpdMatrix, b0: SpdMatrix) -> Result<Self> {
        let x0 = a0.inverse()?;
        let y0 = b0.inverse()?;
        Self::assemble(a0, b0, x0, y0)
    }

    pub fn from_precisions(x0: SpdMatrix, y0: SpdMatrix) -> Result<Self> {
        let a0 = x0.inverse()?;
        let b0 = y0.inverse()?;
        Self::assemble(a0, b0, x0, y0)
    }

    fn assemble(a0: SpdMatrix, b0: SpdMatrix, x0: SpdMatrix, y0: SpdMatrix) -> Result<Self> {
        let chol_a = a0
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .l();
        let chol_b = b0
            .as_matrix()
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?
            .l();
        Ok(KroneckerModel {
            a0,
            b0,
            x0,
            y0,
            chol_a,
            chol_b,
            sigma0: OnceLock::new(),
            theta0: OnceLock::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.a0.dim()
    }

    pub fn f(&self) -> usize {
        self.b0.dim()
    }

    pub fn a0(&self) -> &SpdMatrix {
        &self.a0
    }

    pub fn b0(&self) -> &SpdMatrix {
        &self.b0
    }

    pub fn x0(&self) -> &SpdMatrix {
        &self.x0
    }

    pub fn y0(&self) -> &SpdMatrix {
        &self.y0
    }

    /// `A0 (x) B0`, materialized on first use.
    pub fn sigma0(&self) -> &DMatrix<f64> {
        self.sigma0.get_or_init(|| kron(&self.a0, &self.b0))
    }

    /// `X0 (x) Y0`, materialized on first use.
    pub fn theta0(&self) -> &DMatrix<f64> {
        self.theta0.get_or_init(|| kron(&self.x0, &self.y0))
    }

    pub fn sigma0_norm_sq(&self) -> f64 {
        matkit::kron_norm_sq(&self.a0, &self.b0)
    }

    pub fn theta0_norm_sq(&self) -> f64 {
        matkit::kron_norm_sq(&self.x0, &self.y0)
    }
}

#[derive(Debug, Clone)]
enum Repr {
    Dense(DMatrix<f64>),
    /// Each sample reshaped to a `p x f` matrix `Z` with `Z[i, k] = z[i*f + k]`.
    Samples(Vec<DMatrix<f64>>),
}

/// Sample covariance `S_n = (1/n) sum_t z_t z_t^T` over `pf`-dimensional samples.
///
/// Built from data, the covariance stays in factored form and the weighted
/// block sums used by the estimators are computed sample by sample; the dense
/// `pf x pf` matrix is only materialized when [`SampleCov::matrix`] is called.
#[derive(Debug, Clone)]
pub struct SampleCov {
    n: usize,
    p: usize,
    f: usize,
    repr: Repr,
    dense: OnceLock<DMatrix<f64>>,
}

impl SampleCov {
    /// Wraps a dense covariance (e.g. a population `Sigma0`) with a nominal sample count.
    pub fn from_matrix(s: DMatrix<f64>, n: usize, p: usize, f: usize) -> Result<Self> {
        if s.nrows() != p * f || s.ncols() != p * f {
            return Err(Error::DimensionMismatch(format!(
                "covariance is {}x{}, expected {d}x{d}",
                s.nrows(),
                s.ncols(),
                d = p * f
            )));
        }
        let (s, _) = matkit::symmetrize(s)?;
        Ok(SampleCov {
            n,
            p,
            f,
            repr: Repr::Dense(s),
            dense: OnceLock::new(),
        })
    }

    /// Builds the covariance of the rows of an `n x pf` data matrix, kept in factored form.
    pub fn from_data(data: &DMatrix<f64>, p: usize, f: usize) -> Result<Self> {
        let n = data.nrows();
        if n == 0 {
            return Err(Error::InvalidConfig("sample covariance needs n >= 1".into()));
        }
        if data.ncols() != p * f {
            return Err(Error::DimensionMismatch(format!(
                "data has {} columns, expected p*f = {}",
                data.ncols(),
                p * f
            )));
        }
        let samples = (0..n)
            .map(|t| DMatrix::from_fn(p, f, |i, k| data[(t, i * f + k)]))
            .collect();
        Ok(SampleCov {
            n,
            p,
            f,
            repr: Repr::Samples(samples),
            dense: OnceLock::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn dim(&self) -> usize {
        self.p * self.f
    }

    pub fn is_factored(&self) -> bool {
        matches!(self.repr, Repr::Samples(_))
    }

    /// The dense `pf x pf` covariance.
    pub fn matrix(&self) -> &DMatrix<f64> {
        match &self.repr {
            Repr::Dense(s) => s,
            Repr::Samples(zs) => self.dense.get_or_init(|| {
                let d = self.p * self.f;
                let mut s = DMatrix::zeros(d, d);
                for z in zs {
                    // z_t stacked row by row
                    let v = DMatrix::from_row_slice(d, 1, z.transpose().as_slice());
                    s.syger(1.0, &v.column(0), &v.column(0), 1.0);
                }
                s /= self.n as f64;
                s.fill_upper_triangle_with_lower_triangle();
                s
            }),
        }
    }

    pub fn blocks(&self) -> BlockView<'_> {
        BlockView::new(self.matrix(), self.p, self.f).expect("dimensions validated on construction")
    }

    pub fn trace(&self) -> f64 {
        match &self.repr {
            Repr::Dense(s) => s.trace(),
            Repr::Samples(zs) => zs.iter().map(|z| z.norm_squared()).sum::<f64>() / self.n as f64,
        }
    }

    /// `sum_{i,j} x[i,j] * S(j,i)`, an `f x f` matrix.
    pub fn weighted_block_sum(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (p, f) = (self.p, self.f);
        if x.nrows() != p || x.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix is {}x{}, expected {p}x{p}",
                x.nrows(),
                x.ncols()
            )));
        }
        let mut out = DMatrix::zeros(f, f);
        match &self.repr {
            Repr::Dense(s) => {
                for i in 0..p {
                    for j in 0..p {
                        let w = x[(i, j)];
                        if w != 0.0 {
                            out += s.view((j * f, i * f), (f, f)) * w;
                        }
                    }
                }
            }
            Repr::Samples(zs) => {
                // (1/n) sum_t Z_t^T X Z_t
                let mut xz = DMatrix::zeros(p, f);
                for z in zs {
                    xz.gemm(1.0, x, z, 0.0);
                    out.gemm_tr(1.0, z, &xz, 1.0);
                }
                out /= self.n as f64;
            }
        }
        Ok(symmetric_part(out))
    }

    /// `sum_{k,l} y[k,l] * Sbar(l,k)`, a `p x p` matrix.
    pub fn weighted_pblock_sum(&self, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let (p, f) = (self.p, self.f);
        if y.nrows() != f || y.ncols() != f {
            return Err(Error::DimensionMismatch(format!(
                "weight matrix is {}x{}, expected {f}x{f}",
                y.nrows(),
                y.ncols()
            )));
        }
        let mut out = DMatrix::zeros(p, p);
        match &self.repr {
            Repr::Dense(s) => {
                // Sbar(l,k)[i,j] = S[i*f + l, j*f + k]
                for i in 0..p {
                    for j in 0..p {
                        let blk = s.view((i * f, j * f), (f, f));
                        let mut acc = 0.0;
                        for k in 0..f {
                            for l in 0..f {
                                acc += y[(k, l)] * blk[(l, k)];
                            }
                        }
                        out[(i, j)] = acc;
                    }
                }
            }
            Repr::Samples(zs) => {
                // (1/n) sum_t Z_t Y Z_t^T
                let mut zy = DMatrix::zeros(p, f);
                for z in zs {
                    zy.gemm(1.0, z, y, 0.0);
                    out.gemm(1.0, &zy, &z.transpose(), 1.0);
                }
                out /= self.n as f64;
            }
        }
        Ok(symmetric_part(out))
    }
}

fn symmetric_part(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `(1/n) sum_t z_t z_t^T` over the rows of an `n x pf` data matrix.
pub fn sample_cov(data: &DMatrix<f64>, p: usize, f: usize) -> Result<SampleCov> {
    SampleCov::from_data(data, p, f)
}

/// Erdos-Renyi sparse precision: Bernoulli(`edge_prob`) entries (diagonal included),
/// symmetrized as `(C + C^T)/2`, then shifted so the smallest eigenvalue is `rho_floor`.
pub fn gen_er_precision(dim: usize, edge_prob: f64, rho_floor: f64, seed: u64) -> Result<SpdMatrix> {
    gen_er_precision_with(&mut rng_from_seed(seed), dim, edge_prob, rho_floor)
}

pub fn gen_er_precision_with(
    rng: &mut Rng,
    dim: usize,
    edge_prob: f64,
    rho_floor: f64,
) -> Result<SpdMatrix> {
    if dim == 0 {
        return Err(Error::InvalidConfig("dimension must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidConfig(format!(
            "edge probability {edge_prob} outside [0, 1]"
        )));
    }
    if rho_floor <= 0.0 {
        return Err(Error::InvalidConfig("rho_floor must be positive".into()));
    }
    let c = DMatrix::from_fn(dim, dim, |_, _| {
        if rng.random_bool(edge_prob) {
            1.0
        } else {
            0.0
        }
    });
    let c_sym = (&c + c.transpose()) * 0.5;
    Ok(shift_to_floor(c_sym, rho_floor))
}

/// Sparse precision with a random diagonal and on average `dim` symmetric
/// off-diagonal nonzeros (about `3*dim` nonzeros in total), shifted to a
/// smallest eigenvalue of 0.5.
pub fn gen_ex4_precision(dim: usize, seed: u64) -> Result<SpdMatrix> {
    gen_ex4_precision_with(&mut rng_from_seed(seed), dim)
}

pub fn gen_ex4_precision_with(rng: &mut Rng, dim: usize) -> Result<SpdMatrix> {
    if dim < 2 {
        return Err(Error::InvalidConfig("dimension must be at least 2".into()));
    }
    let mut c = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        c[(i, i)] = nonzero_uniform(rng);
    }
    // Each ordered off-diagonal position is drawn with probability 1/(dim-1)
    // (about dim placements); symmetry then makes the pair nonzero if either was drawn.
    let prob = 1.0 / (dim - 1) as f64;
    for j in 0..dim {
        for i in 0..j {
            let upper = rng.random_bool(prob);
            let lower = rng.random_bool(prob);
            if upper || lower {
                let v = nonzero_uniform(rng);
                c[(i, j)] = v;
                c[(j, i)] = v;
            }
        }
    }
    Ok(shift_to_floor(c, 0.5))
}

/// Dense precision `W W^T / dim + 0.1 I` with standard normal `W`.
pub fn gen_dense_precision_with(rng: &mut Rng, dim: usize) -> Result<SpdMatrix> {
    let w: DMatrix<f64> = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let m = &w * w.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.1;
    SpdMatrix::new(m)
}

fn nonzero_uniform(rng: &mut Rng) -> f64 {
    loop {
        let v: f64 = rng.random_range(-1.0..=1.0);
        if v != 0.0 {
            return v;
        }
    }
}

fn shift_to_floor(c: DMatrix<f64>, floor: f64) -> SpdMatrix {
    let dim = c.nrows();
    let rho = floor - matkit::min_eigenvalue(&c);
    let m = c + DMatrix::identity(dim, dim) * rho;
    // Exactly symmetric by construction and lambda_min = floor > 0.
    SpdMatrix::from_verified(m)
}

/// Draws `n` i.i.d. rows `z ~ N(0, A0 (x) B0)` as an `n x pf` matrix.
///
/// Each row is `vec` of `L_A G L_B^T` (row-major) for a `p x f` standard normal
/// `G`, which equals `(L_A (x) L_B) g` without forming the `pf x pf` factor.
pub fn sample_matrix_normal(model: &KroneckerModel, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    sample_matrix_normal_with(model, n, &mut rng_from_seed(seed))
}

pub fn sample_matrix_normal_with(
    model: &KroneckerModel,
    n: usize,
    rng: &mut Rng,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be at least 1".into()));
    }
    let (p, f) = (model.p(), model.f());
    let mut data = DMatrix::zeros(n, p * f);
    let mut g = DMatrix::zeros(p, f);
    let mut tmp = DMatrix::zeros(p, f);
    let mut z = DMatrix::zeros(p, f);
    for t in 0..n {
        for i in 0..p {
            for k in 0..f {
                g[(i, k)] = StandardNormal.sample(rng);
            }
        }
        tmp.gemm(1.0, &model.chol_a, &g, 0.0);
        z.gemm(1.0, &tmp, &model.chol_b.transpose(), 0.0);
        for i in 0..p {
            for k in 0..f {
                data[(t, i * f + k)] = z[(i, k)];
            }
        }
    }
    Ok(data)
}
