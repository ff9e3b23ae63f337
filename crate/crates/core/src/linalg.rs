//! Small dense linear algebra on block-structured trajectory vectors.
//!
//! Every stacked vector in this crate is a flat `[f64]` made of consecutive
//! blocks of the state dimension `m`. Covariances are block diagonal, the
//! mismatch Jacobian is block bidiagonal, and every normal-equation matrix the
//! solvers build is block tridiagonal and symmetric positive-definite, so a
//! block Cholesky factorization solves all of them in `O(N m^3)`.

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

/// A symmetric positive-definite matrix with its inverse and principal
/// square roots computed once from a symmetric eigendecomposition.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    sqrt: DMatrix<f64>,
    inv_sqrt: DMatrix<f64>,
}

impl SpdMatrix {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::NotPositiveDefinite(format!(
                "expected a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotPositiveDefinite("non-finite entry".into()));
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let n = matrix.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > SYMMETRY_TOL * scale {
                    return Err(Error::NotPositiveDefinite(format!(
                        "asymmetric entry ({i}, {j})"
                    )));
                }
            }
        }
        let symmetric = (&matrix + matrix.transpose()) * 0.5;
        let eig = SymmetricEigen::new(symmetric.clone());
        let min_eig = eig.eigenvalues.min();
        if min_eig <= 0.0 {
            return Err(Error::NotPositiveDefinite(format!(
                "smallest eigenvalue {min_eig:e} is not positive"
            )));
        }
        let v = &eig.eigenvectors;
        let spectral = |f: &dyn Fn(f64) -> f64| {
            let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
            v * d * v.transpose()
        };
        Ok(Self {
            inverse: spectral(&|l| 1.0 / l),
            sqrt: spectral(&f64::sqrt),
            inv_sqrt: spectral(&|l| 1.0 / l.sqrt()),
            matrix: symmetric,
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is SPD")
    }

    pub fn scaled_identity(dim: usize, variance: f64) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim) * variance)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Principal square root `C^{1/2}`.
    pub fn sqrt(&self) -> &DMatrix<f64> {
        &self.sqrt
    }

    /// Principal inverse square root `C^{-1/2}`.
    pub fn inv_sqrt(&self) -> &DMatrix<f64> {
        &self.inv_sqrt
    }
}

impl TryFrom<Vec<Vec<f64>>> for SpdMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::NotPositiveDefinite("ragged matrix rows".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat))
    }
}

impl From<SpdMatrix> for Vec<Vec<f64>> {
    fn from(m: SpdMatrix) -> Self {
        m.matrix
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }
}

/// Draws `C^{1/2} eta` with `eta` standard normal.
pub fn gaussian_sample<R: Rng + ?Sized>(rng: &mut R, cov: &SpdMatrix) -> DVector<f64> {
    let eta = DVector::from_iterator(cov.dim(), (0..cov.dim()).map(|_| rng.sample(StandardNormal)));
    cov.sqrt() * eta
}

fn block(v: &[f64], n: usize, m: usize) -> DVectorView<'_, f64> {
    DVectorView::from_slice(&v[n * m..(n + 1) * m], m)
}

/// Block-diagonal covariance over a stacked vector.
///
/// Blocks are drawn from a small palette; the common case is a single block
/// replicated over every step.
#[derive(Clone, Debug)]
pub struct BlockCovariance {
    palette: Vec<SpdMatrix>,
    assignment: Vec<usize>,
}

impl BlockCovariance {
    pub fn uniform(block: SpdMatrix, count: usize) -> Self {
        Self {
            palette: vec![block],
            assignment: vec![0; count],
        }
    }

    /// Per-block covariance where block `n` is `palette[assignment[n]]`.
    pub fn from_palette(palette: Vec<SpdMatrix>, assignment: Vec<usize>) -> Result<Self> {
        let dim = palette
            .first()
            .ok_or_else(|| Error::InvalidInput("empty covariance palette".into()))?
            .dim();
        if let Some(bad) = palette.iter().find(|p| p.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.dim(),
                context: "covariance palette block",
            });
        }
        if let Some(&bad) = assignment.iter().find(|&&a| a >= palette.len()) {
            return Err(Error::InvalidInput(format!(
                "palette index {bad} out of range"
            )));
        }
        Ok(Self {
            palette,
            assignment,
        })
    }

    pub fn block_dim(&self) -> usize {
        self.palette[0].dim()
    }

    /// Number of diagonal blocks.
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.palette.len() == 1
    }

    pub fn block(&self, n: usize) -> &SpdMatrix {
        if self.is_uniform() {
            &self.palette[0]
        } else {
            &self.palette[self.assignment[n]]
        }
    }

    fn check_len(&self, len: usize) -> Result<usize> {
        let m = self.block_dim();
        let ok = len.is_multiple_of(m) && (self.is_uniform() || len / m == self.len());
        if !ok {
            return Err(Error::DimensionMismatch {
                expected: self.len() * m,
                actual: len,
                context: "stacked vector against block covariance",
            });
        }
        Ok(len / m)
    }

    /// `v^T C^{-1} v`, accumulated block by block.
    pub fn weighted_sq_norm(&self, v: &[f64]) -> Result<f64> {
        let blocks = self.check_len(v.len())?;
        let m = self.block_dim();
        Ok((0..blocks)
            .map(|n| {
                let b = block(v, n, m);
                b.dot(&(self.block(n).inverse() * b))
            })
            .sum())
    }

    fn map_blocks(&self, v: &[f64], pick: fn(&SpdMatrix) -> &DMatrix<f64>) -> Result<Vec<f64>> {
        let blocks = self.check_len(v.len())?;
        let m = self.block_dim();
        let mut out = Vec::with_capacity(v.len());
        for n in 0..blocks {
            out.extend((pick(self.block(n)) * block(v, n, m)).iter());
        }
        Ok(out)
    }

    /// `C v`
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.map_blocks(v, SpdMatrix::matrix)
    }

    /// `C^{-1} v`
    pub fn apply_inverse(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.map_blocks(v, SpdMatrix::inverse)
    }

    /// `C^{-1/2} v`, the whitened vector.
    pub fn whiten(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.map_blocks(v, SpdMatrix::inv_sqrt)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.block_dim();
        let n = self.len();
        let mut out = DMatrix::zeros(n * m, n * m);
        for k in 0..n {
            out.view_mut((k * m, k * m), (m, m))
                .copy_from(self.block(k).matrix());
        }
        out
    }
}

/// Matrix with `N` block rows `[L_n, I]` placed at block columns `(n, n+1)`;
/// shape `mN x m(N+1)`. This is the Jacobian of the one-step mismatch, with
/// `L_n = -DF_n(u_n)`.
#[derive(Clone, Debug)]
pub struct BlockBidiagonal {
    dim: usize,
    lower: Vec<DMatrix<f64>>,
}

impl BlockBidiagonal {
    pub fn new(dim: usize, lower: Vec<DMatrix<f64>>) -> Result<Self> {
        if let Some(b) = lower.iter().find(|b| b.nrows() != dim || b.ncols() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: b.nrows().max(b.ncols()),
                context: "bidiagonal lower block",
            });
        }
        Ok(Self { dim, lower })
    }

    pub fn block_dim(&self) -> usize {
        self.dim
    }

    /// Number of block rows `N`.
    pub fn block_rows(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self, n: usize) -> &DMatrix<f64> {
        &self.lower[n]
    }

    /// `J x` for `x` of length `m(N+1)`.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim;
        let n_rows = self.block_rows();
        if x.len() != m * (n_rows + 1) {
            return Err(Error::DimensionMismatch {
                expected: m * (n_rows + 1),
                actual: x.len(),
                context: "bidiagonal apply",
            });
        }
        let mut out = Vec::with_capacity(m * n_rows);
        for n in 0..n_rows {
            let row = &self.lower[n] * block(x, n, m) + block(x, n + 1, m);
            out.extend(row.iter());
        }
        Ok(out)
    }

    /// `J^T y` for `y` of length `mN`.
    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>> {
        let m = self.dim;
        let n_rows = self.block_rows();
        if y.len() != m * n_rows {
            return Err(Error::DimensionMismatch {
                expected: m * n_rows,
                actual: y.len(),
                context: "bidiagonal transpose apply",
            });
        }
        let mut out = vec![0.0; m * (n_rows + 1)];
        for n in 0..n_rows {
            let yn = block(y, n, m);
            let t = self.lower[n].tr_mul(&yn);
            for i in 0..m {
                out[n * m + i] += t[i];
                out[(n + 1) * m + i] += yn[i];
            }
        }
        Ok(out)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let m = self.dim;
        let n_rows = self.block_rows();
        let mut out = DMatrix::zeros(m * n_rows, m * (n_rows + 1));
        for n in 0..n_rows {
            out.view_mut((n * m, n * m), (m, m)).copy_from(&self.lower[n]);
            out.view_mut((n * m, (n + 1) * m), (m, m))
                .fill_with_identity();
        }
        out
    }
}

/// Symmetric block-tridiagonal matrix stored as its diagonal blocks and the
/// blocks directly above the diagonal.
#[derive(Clone, Debug)]
pub struct BlockTridiagonal {
    diag: Vec<DMatrix<f64>>,
    upper: Vec<DMatrix<f64>>,
}

impl BlockTridiagonal {
    pub fn new(diag: Vec<DMatrix<f64>>, upper: Vec<DMatrix<f64>>) -> Result<Self> {
        if !diag.is_empty() && upper.len() + 1 != diag.len() {
            return Err(Error::DimensionMismatch {
                expected: diag.len().saturating_sub(1),
                actual: upper.len(),
                context: "tridiagonal off-diagonal count",
            });
        }
        Ok(Self { diag, upper })
    }

    pub fn blocks(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[DMatrix<f64>] {
        &self.diag
    }

    pub fn diag_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.diag
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let Some(first) = self.diag.first() else {
            return DMatrix::zeros(0, 0);
        };
        let m = first.nrows();
        let n = self.diag.len();
        let mut out = DMatrix::zeros(n * m, n * m);
        for k in 0..n {
            out.view_mut((k * m, k * m), (m, m)).copy_from(&self.diag[k]);
        }
        for (k, u) in self.upper.iter().enumerate() {
            out.view_mut((k * m, (k + 1) * m), (m, m)).copy_from(u);
            out.view_mut(((k + 1) * m, k * m), (m, m))
                .copy_from(&u.transpose());
        }
        out
    }

    /// Block Cholesky `S = L L^T` with `L` lower block bidiagonal.
    pub fn cholesky(&self) -> Result<BlockCholesky> {
        let mut diag: Vec<DMatrix<f64>> = Vec::with_capacity(self.diag.len());
        let mut sub: Vec<DMatrix<f64>> = Vec::with_capacity(self.upper.len());
        for (n, d) in self.diag.iter().enumerate() {
            let mut schur = d.clone();
            if n > 0 {
                // C_n^T = L_{n-1}^{-1} S_{n-1,n}
                let ct = diag[n - 1]
                    .solve_lower_triangular(&self.upper[n - 1])
                    .ok_or(Error::FactorizationFailed { block: n - 1 })?;
                schur -= ct.tr_mul(&ct);
                sub.push(ct.transpose());
            }
            let chol = Cholesky::new(schur).ok_or(Error::FactorizationFailed { block: n })?;
            diag.push(chol.unpack());
        }
        Ok(BlockCholesky { diag, sub })
    }
}

/// Factor of a [`BlockTridiagonal`]: diagonal blocks `L_n` (lower triangular)
/// and sub-diagonal blocks `C_n` at block position `(n, n-1)`.
#[derive(Clone, Debug)]
pub struct BlockCholesky {
    diag: Vec<DMatrix<f64>>,
    sub: Vec<DMatrix<f64>>,
}

impl BlockCholesky {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n_blocks = self.diag.len();
        if n_blocks == 0 {
            return if rhs.is_empty() {
                Ok(Vec::new())
            } else {
                Err(Error::DimensionMismatch {
                    expected: 0,
                    actual: rhs.len(),
                    context: "block Cholesky solve",
                })
            };
        }
        let m = self.diag[0].nrows();
        if rhs.len() != n_blocks * m {
            return Err(Error::DimensionMismatch {
                expected: n_blocks * m,
                actual: rhs.len(),
                context: "block Cholesky solve",
            });
        }
        let mut z: Vec<DVector<f64>> = Vec::with_capacity(n_blocks);
        for n in 0..n_blocks {
            let mut b = block(rhs, n, m).clone_owned();
            if n > 0 {
                b -= &self.sub[n - 1] * &z[n - 1];
            }
            if !self.diag[n].solve_lower_triangular_mut(&mut b) {
                return Err(Error::FactorizationFailed { block: n });
            }
            z.push(b);
        }
        for n in (0..n_blocks).rev() {
            if n + 1 < n_blocks {
                let next = self.sub[n].tr_mul(&z[n + 1]);
                z[n] -= next;
            }
            if !self.diag[n].tr_solve_lower_triangular_mut(&mut z[n]) {
                return Err(Error::FactorizationFailed { block: n });
            }
        }
        Ok(z.iter().flat_map(|b| b.iter().copied()).collect())
    }
}

/// Assembles `J Co J^T + alpha Cm` as a block-tridiagonal matrix of `N` blocks.
pub fn shifted_gram(
    jac: &BlockBidiagonal,
    co: &BlockCovariance,
    cm: &BlockCovariance,
    alpha: f64,
) -> Result<BlockTridiagonal> {
    let n_rows = jac.block_rows();
    let m = jac.block_dim();
    if co.block_dim() != m || (!co.is_uniform() && co.len() != n_rows + 1) {
        return Err(Error::DimensionMismatch {
            expected: n_rows + 1,
            actual: co.len(),
            context: "observation covariance blocks for shifted Gram",
        });
    }
    if cm.block_dim() != m || (!cm.is_uniform() && cm.len() != n_rows) {
        return Err(Error::DimensionMismatch {
            expected: n_rows,
            actual: cm.len(),
            context: "model covariance blocks for shifted Gram",
        });
    }
    let mut diag = Vec::with_capacity(n_rows);
    let mut upper = Vec::with_capacity(n_rows.saturating_sub(1));
    for n in 0..n_rows {
        let l = jac.lower(n);
        let p = co.block(n).matrix();
        let mut d = l * p * l.transpose() + co.block(n + 1).matrix();
        if alpha != 0.0 {
            d += cm.block(n).matrix() * alpha;
        }
        diag.push(d);
        if n + 1 < n_rows {
            upper.push(co.block(n + 1).matrix() * jac.lower(n + 1).transpose());
        }
    }
    BlockTridiagonal::new(diag, upper)
}

fn check_shifted_gram_args(jac: &BlockBidiagonal, alpha: f64, g: &[f64]) -> Result<()> {
    if !(alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
    }
    if g.len() != jac.block_rows() * jac.block_dim() {
        return Err(Error::DimensionMismatch {
            expected: jac.block_rows() * jac.block_dim(),
            actual: g.len(),
            context: "mismatch vector for shifted Gram solve",
        });
    }
    Ok(())
}

/// Regularized step `delta = -Co J^T (J Co J^T + alpha Cm)^{-1} g`, solved by
/// block-tridiagonal Cholesky.
pub fn solve_shifted_gram(
    jac: &BlockBidiagonal,
    co: &BlockCovariance,
    cm: &BlockCovariance,
    alpha: f64,
    g: &[f64],
) -> Result<Vec<f64>> {
    check_shifted_gram_args(jac, alpha, g)?;
    let lambda = shifted_gram(jac, co, cm, alpha)?.cholesky()?.solve(g)?;
    let mut delta = co.apply(&jac.apply_transpose(&lambda)?)?;
    delta.iter_mut().for_each(|d| *d = -*d);
    Ok(delta)
}

/// Same step as [`solve_shifted_gram`] through a dense Cholesky factorization
/// of the assembled Gram matrix. Intended for small problems and cross-checks.
pub fn solve_shifted_gram_dense(
    jac: &BlockBidiagonal,
    co: &BlockCovariance,
    cm: &BlockCovariance,
    alpha: f64,
    g: &[f64],
) -> Result<Vec<f64>> {
    check_shifted_gram_args(jac, alpha, g)?;
    let gram = shifted_gram(jac, co, cm, alpha)?.to_dense();
    let chol = Cholesky::<f64, Dyn>::new(gram).ok_or(Error::FactorizationFailed { block: 0 })?;
    let lambda = chol.solve(&DVector::from_column_slice(g));
    let mut delta = co.apply(&jac.apply_transpose(lambda.as_slice())?)?;
    delta.iter_mut().for_each(|d| *d = -*d);
    Ok(delta)
}
