//! Dense symmetric linear algebra shared by the rest of the crate.
//!
//! Everything here is deterministic: the eigensolver is Householder
//! tridiagonalization followed by implicit symmetric QR (nalgebra), with no
//! randomized sketching, so identical inputs give bit-identical outputs.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative floor below which an eigenvalue is treated as non-positive:
/// `PD_FLOOR * trace / dim`.
pub const PD_FLOOR: f64 = 1e-12;

/// A dense symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Wraps `m` after checking it is square, finite and symmetric to
    /// `1e-10 * (1 + max|m|)`.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension {
                context: "SymMatrix (columns)",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("matrix has non-finite entries"));
        }
        let scale = 1.0 + m.amax();
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::input(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Replaces `m` by `(m + m')/2`. For products that are symmetric in exact
    /// arithmetic but carry rounding asymmetry.
    pub fn symmetrize(mut m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "symmetrize needs a square matrix");
        let n = m.nrows();
        for j in 0..n {
            for i in (j + 1)..n {
                let v = 0.5 * (m[(i, j)] + m[(j, i)]);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(n: usize) -> Self {
        SymMatrix(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
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

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `self + ridge * I`.
    pub fn add_ridge(&self, ridge: f64) -> SymMatrix {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
        SymMatrix(m)
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues sorted descending.
///
/// Each eigenvector is sign-normalized so that its largest-magnitude entry
/// (first one on ties) is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomp {
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors as columns, in eigenvalue order.
    pub eigenvectors: DMatrix<f64>,
}

impl EigenDecomp {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `U diag(f(lambda)) U'`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> SymMatrix {
        let mut scaled = self.eigenvectors.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[k]);
        }
        SymMatrix::symmetrize(&scaled * self.eigenvectors.transpose())
    }

    pub fn reconstruct(&self) -> SymMatrix {
        self.map_spectrum(|l| l)
    }

    /// The leading `k` eigenvectors as an orthonormal `dim x k` block.
    pub fn leading(&self, k: usize) -> DMatrix<f64> {
        self.eigenvectors.columns(0, k.min(self.dim())).into_owned()
    }
}

/// Full symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eig(a: &SymMatrix) -> Result<EigenDecomp> {
    if a.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("sym_eig: non-finite entries"));
    }
    let n = a.dim();
    if n == 0 {
        return Ok(EigenDecomp {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = a.0.clone().symmetric_eigen();
    let (values, vectors) = refine_eigenpairs(&a.0, eig.eigenvalues, eig.eigenvectors);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        values[j]
            .partial_cmp(&values[i])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| values[i]));
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = vectors.column(src).into_owned();
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
        eigenvectors.set_column(dst, &col);
    }
    Ok(EigenDecomp {
        eigenvalues,
        eigenvectors,
    })
}

/// Residual, in units of `n * eps * max|a|`, above which an eigendecomposition
/// is refined.
const EIG_RESIDUAL_ULPS: f64 = 32.0;

/// The QR eigensolver can return mixed vectors for close eigenvalues. When any
/// pair has a large residual, finish with cyclic Jacobi sweeps on `V'AV`.
fn refine_eigenpairs(a: &DMatrix<f64>, values: DVector<f64>, vectors: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let av = a * &vectors;
    let worst = (0..n)
        .map(|k| (av.column(k) - vectors.column(k) * values[k]).norm())
        .fold(0.0, f64::max);
    if worst <= EIG_RESIDUAL_ULPS * n as f64 * f64::EPSILON * scale {
        return (values, vectors);
    }
    let mut b = SymMatrix::symmetrize(mul_tn(&vectors, &av)).into_inner();
    let mut v = vectors;
    for _ in 0..50 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let bpq = b[(p, q)];
                if bpq.abs() <= f64::EPSILON * scale {
                    continue;
                }
                rotated = true;
                let tau = (b[(q, q)] - b[(p, p)]) / (2.0 * bpq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate_columns(&mut b, p, q, c, s);
                rotate_rows(&mut b, p, q, c, s);
                rotate_columns(&mut v, p, q, c, s);
                b[(p, q)] = 0.0;
                b[(q, p)] = 0.0;
            }
        }
        if !rotated {
            break;
        }
    }
    (b.diagonal(), v)
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.nrows() {
        let (x, y) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = c * x - s * y;
        m[(k, q)] = s * x + c * y;
    }
}

fn rotate_rows(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..m.ncols() {
        let (x, y) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * x - s * y;
        m[(q, k)] = s * x + c * y;
    }
}

/// Smallest eigenvalue allowed by [`mat_power`] for a matrix of this trace.
pub fn pd_floor(a: &SymMatrix) -> f64 {
    (PD_FLOOR * a.trace() / a.dim().max(1) as f64).max(0.0)
}

/// `A^p` for symmetric positive definite `A`, via its eigendecomposition.
///
/// Fails rather than clamping if any eigenvalue is at or below [`pd_floor`].
pub fn mat_power(a: &SymMatrix, p: f64) -> Result<SymMatrix> {
    let eig = sym_eig(a)?;
    check_pd(&eig, pd_floor(a))?;
    Ok(eig.map_spectrum(|l| l.powf(p)))
}

pub(crate) fn check_pd(eig: &EigenDecomp, floor: f64) -> Result<()> {
    if let Some(&min) = eig.eigenvalues.as_slice().last() {
        if min <= floor {
            return Err(Error::Singular {
                eigenvalue: min,
                floor,
            });
        }
    }
    Ok(())
}

/// Solves `(A + ridge I) X = B` by Cholesky.
pub fn ridge_solve(a: &SymMatrix, b: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(Error::input(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if b.nrows() != a.dim() {
        return Err(Error::Dimension {
            context: "ridge_solve right-hand side",
            expected: a.dim(),
            found: b.nrows(),
        });
    }
    let chol = Cholesky::new(a.add_ridge(ridge).into_inner()).ok_or(Error::Indefinite { ridge })?;
    Ok(chol.solve(b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    // A^-1 = L^-T L^-1; the product runs through gemm.
    let l_inv = lower_inverse(&cholesky_lower(a)?)?;
    Ok(SymMatrix::symmetrize(mul_tn(&l_inv, &l_inv)).into_inner())
}

/// Lower Cholesky factor by 2x2 block recursion. Fails if `a` is not
/// numerically positive definite.
pub fn cholesky_lower(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n <= CHOL_BLOCK {
        return Cholesky::new(a.clone()).map(|c| c.l()).ok_or(Error::Indefinite { ridge: 0.0 });
    }
    let h = n / 2;
    let l11 = cholesky_lower(&a.view((0, 0), (h, h)).into_owned())?;
    // [A11 A21'; A21 A22] = [L11 0; L21 L22][L11' L21'; 0 L22']
    let l21 = a.view((h, 0), (n - h, h)) * lower_inverse(&l11)?.transpose();
    let mut schur = a.view((h, h), (n - h, n - h)).into_owned();
    schur.gemm(-1.0, &l21, &l21.transpose(), 1.0);
    let l22 = cholesky_lower(&schur)?;
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (h, h)).copy_from(&l11);
    out.view_mut((h, 0), (n - h, h)).copy_from(&l21);
    out.view_mut((h, h), (n - h, n - h)).copy_from(&l22);
    Ok(out)
}

/// Size below which [`cholesky_lower`] factors directly.
const CHOL_BLOCK: usize = 256;

/// Size below which [`lower_inverse`] solves directly.
const TRI_BLOCK: usize = 128;

/// Inverse of a lower-triangular matrix by 2x2 block recursion, so most of
/// the work is matrix products.
pub fn lower_inverse(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if n <= TRI_BLOCK {
        return l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::Indefinite { ridge: 0.0 });
    }
    let h = n / 2;
    let l11_inv = lower_inverse(&l.view((0, 0), (h, h)).into_owned())?;
    let l22_inv = lower_inverse(&l.view((h, h), (n - h, n - h)).into_owned())?;
    // [L11 0; L21 L22]^-1 = [L11^-1 0; -L22^-1 L21 L11^-1  L22^-1]
    let off = -(&l22_inv * (l.view((h, 0), (n - h, h)) * &l11_inv));
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (h, h)).copy_from(&l11_inv);
    out.view_mut((h, h), (n - h, n - h)).copy_from(&l22_inv);
    out.view_mut((h, 0), (n - h, h)).copy_from(&off);
    Ok(out)
}

/// Rows per block in [`mul_tn`].
const TN_BLOCK: usize = 2048;

/// `A' B`, through the blocked matrix product rather than column dot products.
pub fn mul_tn(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows(), "mul_tn: row counts differ");
    let n = a.nrows();
    let mut out = DMatrix::zeros(a.ncols(), b.ncols());
    let mut start = 0;
    while start < n {
        let len = TN_BLOCK.min(n - start);
        let at = a.rows(start, len).transpose();
        out.gemm(1.0, &at, &b.rows(start, len), 1.0);
        start += len;
    }
    out
}

/// `log det A` for symmetric positive definite `A`.
pub fn spd_log_det(a: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(a.clone()).ok_or(Error::Indefinite { ridge: 0.0 })?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// `(1/n) sum_i w_i x_i x_i'` over the rows `x_i` of `rows`.
pub fn weighted_gram(rows: &DMatrix<f64>, weights: &[f64]) -> SymMatrix {
    assert_eq!(rows.nrows(), weights.len());
    let n = rows.nrows().max(1) as f64;
    let mut scaled = rows.clone();
    for (i, &w) in weights.iter().enumerate() {
        let s = w.max(0.0).sqrt();
        scaled.row_mut(i).scale_mut(s);
    }
    let mut g = mul_tn(&scaled, &scaled);
    g /= n;
    SymMatrix::symmetrize(g)
}

/// Percentile `q` in `[0, 1]` by linear interpolation between order
/// statistics at position `q (n - 1)`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty list");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn row_norms(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sq = vec![0.0; m.nrows()];
    for col in m.column_iter() {
        for (acc, v) in sq.iter_mut().zip(col.iter()) {
            *acc += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}
