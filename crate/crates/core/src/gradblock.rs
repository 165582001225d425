//! Gradient-signature block of the design.
//!
//! Gradients are first residualized against the stabilized coordinate with
//! a shared ridge solve, so the block only carries what the cluster masses
//! do not already explain. The residuals are then clipped, unit-normalized,
//! PCA-whitened and rescaled so the block's mean squared norm matches the
//! cluster block's.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::coords::{StabilizedCoords, CLIP_PERCENTILE};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_lower, lower_inverse, mul_tn, percentile, ridge_solve, row_norms, sym_eig, SymMatrix};
use crate::metric::{BlockLayout, DesignMatrix};
use crate::rng::{Domain, SeedTree};

/// Ridge added to the covariance before whitening.
pub const WHITEN_RIDGE: f64 = 1e-4;

/// Output width of one projected block.
pub const JL_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientBlock {
    /// Residualized gradients, `N x p_g`.
    pub g_perp: DMatrix<f64>,
    /// Conditioned gradients, `N x p_g'`.
    pub g_tilde: DMatrix<f64>,
    /// Inverse-norm weights.
    pub q_tilde: Vec<f64>,
    /// Global factor applied after whitening to match the cluster block.
    pub trace_scale: f64,
    pub rho_g: f64,
    pub omega: f64,
    pub alpha: f64,
    pub epsilon: f64,
}

/// `G - Z (Z'Z + rho_g I)^-1 Z'G`.
pub fn residualize(gradients: &DMatrix<f64>, coords: &StabilizedCoords, rho_g: f64) -> Result<DMatrix<f64>> {
    if !(rho_g > 0.0) {
        return Err(Error::config(format!("rho_g must be > 0, got {rho_g}")));
    }
    let z = &coords.z_bar;
    if gradients.nrows() != z.nrows() {
        return Err(Error::Dimension {
            context: "gradient rows",
            expected: z.nrows(),
            found: gradients.nrows(),
        });
    }
    let coef = ridge_coefficients(z, gradients, rho_g)?;
    let mut g = gradients.clone();
    g.gemm(-1.0, z, &coef, 1.0);
    Ok(g)
}

/// `(Z'Z + rho I)^-1 Z'G`.
pub fn ridge_coefficients(z: &DMatrix<f64>, g: &DMatrix<f64>, rho: f64) -> Result<DMatrix<f64>> {
    let gram = SymMatrix::symmetrize(mul_tn(z, z));
    ridge_solve(&gram, &mul_tn(z, g), rho)
}

/// Conditioned gradients plus the factor that matched their trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioned {
    pub g_tilde: DMatrix<f64>,
    pub q_tilde: Vec<f64>,
    pub trace_scale: f64,
}

/// Clips, normalizes, whitens and trace-matches residual gradients, and
/// computes the inverse-norm weights from the pre-clip norms.
pub fn condition_gradients(g_perp: &DMatrix<f64>, v: &DesignMatrix, epsilon: f64, alpha: f64) -> Result<Conditioned> {
    if !(epsilon > 0.0) {
        return Err(Error::config(format!("epsilon must be > 0, got {epsilon}")));
    }
    if !(alpha >= 0.0) {
        return Err(Error::config(format!("alpha must be >= 0, got {alpha}")));
    }
    let n = g_perp.nrows();
    if v.n_instances() != n {
        return Err(Error::Dimension {
            context: "gradient rows against design",
            expected: v.n_instances(),
            found: n,
        });
    }
    let norms = row_norms(g_perp);
    let g_bar = norms.iter().sum::<f64>() / n as f64;
    if !(g_bar > 0.0) {
        return Err(Error::input("gradient block is all zero; nothing to whiten"));
    }
    let q_tilde: Vec<f64> = norms.iter().map(|&nm| (g_bar / nm.max(epsilon * g_bar)).powf(alpha)).collect();

    let tau = percentile(&norms, CLIP_PERCENTILE);
    let mut x = g_perp.clone();
    for (i, &nm) in norms.iter().enumerate() {
        if nm > tau {
            x.row_mut(i).scale_mut(tau / nm);
        }
    }
    for i in 0..n {
        let nm = x.row(i).norm();
        if nm > 0.0 {
            x.row_mut(i).unscale_mut(nm);
        }
    }

    for mut col in x.column_iter_mut() {
        let mean = col.sum() / n as f64;
        col.add_scalar_mut(-mean);
    }
    let cov = SymMatrix::symmetrize(mul_tn(&x, &x) / n as f64);
    let basis = match cholesky_whitener(&cov) {
        Some(b) => b,
        None => eigen_whitener(&cov)?,
    };
    drop(cov);
    let mut g_tilde = &x * basis;
    drop(x);

    let target = v.sq_norms().iter().sum::<f64>() / n as f64;
    let current = g_tilde.norm_squared() / n as f64;
    let trace_scale = (target / current).sqrt();
    g_tilde *= trace_scale;
    Ok(Conditioned {
        g_tilde,
        q_tilde,
        trace_scale,
    })
}

/// `L^-T` for `cov = L L'` when every eigenvalue clears the keep floor, so no
/// direction would be dropped. It differs from the eigenvector whitener by a
/// rotation, which leaves the log-det objective unchanged.
fn cholesky_whitener(cov: &SymMatrix) -> Option<DMatrix<f64>> {
    let floor = WHITEN_RIDGE * 1e-6;
    cholesky_lower(&cov.add_ridge(-floor).into_inner()).ok()?;
    let l = cholesky_lower(cov.as_matrix()).ok()?;
    Some(lower_inverse(&l).ok()?.transpose())
}

/// Eigenvectors scaled by `1/sqrt(lambda)`, keeping eigenvalues of the
/// ridged covariance above the ridge.
fn eigen_whitener(cov: &SymMatrix) -> Result<DMatrix<f64>> {
    let eig = sym_eig(&cov.add_ridge(WHITEN_RIDGE))?;
    let floor = WHITEN_RIDGE * (1.0 + 1e-6);
    let keep: Vec<usize> = (0..eig.dim()).filter(|&k| eig.eigenvalues[k] > floor).collect();
    if keep.is_empty() {
        return Err(Error::input("gradient block has no variance above the whitening ridge"));
    }
    let mut basis = DMatrix::zeros(eig.dim(), keep.len());
    for (c, &k) in keep.iter().enumerate() {
        let scale = 1.0 / (eig.eigenvalues[k] - WHITEN_RIDGE).sqrt();
        basis.set_column(c, &(eig.eigenvectors.column(k) * scale));
    }
    Ok(basis)
}

/// Appends `sqrt(q_i omega) g_i` to every design vector; `omega = 0` returns
/// the cluster block unchanged.
pub fn stack_design(v: &DesignMatrix, g_tilde: Option<&DMatrix<f64>>, q_tilde: &[f64], omega: f64) -> Result<DesignMatrix> {
    if !(omega >= 0.0) {
        return Err(Error::config(format!("omega must be >= 0, got {omega}")));
    }
    if omega == 0.0 {
        return Ok(v.clone());
    }
    let g = g_tilde.ok_or_else(|| Error::config("omega > 0 requires a gradient block"))?;
    let n = v.n_instances();
    if g.nrows() != n || q_tilde.len() != n {
        return Err(Error::Dimension {
            context: "gradient block rows",
            expected: n,
            found: g.nrows(),
        });
    }
    let f = v.dim();
    let pg = g.ncols();
    let mut cols = DMatrix::zeros(f + pg, n);
    cols.rows_mut(0, f).copy_from(v.columns());
    // Column-major g: walk it column by column for locality.
    for k in 0..pg {
        let gc = g.column(k);
        for i in 0..n {
            cols[(f + k, i)] = (q_tilde[i] * omega).sqrt() * gc[i];
        }
    }
    DesignMatrix::from_columns(
        cols,
        BlockLayout {
            sae: v.layout.sae,
            gradient: v.layout.gradient + pg,
        },
    )
}

/// Residualizes and conditions `gradients` in one call.
pub fn build_gradient_block(
    gradients: &DMatrix<f64>,
    coords: &StabilizedCoords,
    v: &DesignMatrix,
    rho_g: f64,
    epsilon: f64,
    alpha: f64,
    omega: f64,
) -> Result<GradientBlock> {
    let g_perp = residualize(gradients, coords, rho_g)?;
    let c = condition_gradients(&g_perp, v, epsilon, alpha)?;
    Ok(GradientBlock {
        g_perp,
        g_tilde: c.g_tilde,
        q_tilde: c.q_tilde,
        trace_scale: c.trace_scale,
        rho_g,
        omega,
        alpha,
        epsilon,
    })
}

/// Gaussian random projection of each column block of `x` down to
/// [`JL_DIM`] columns.
///
/// Block `b` uses a `width_b x 64` matrix with entries `N(0, 1) / 8`, drawn
/// row by row from stream `b` of the seed's projection domain.
pub fn jl_project(x: &DMatrix<f64>, blocks: &[usize], seed: u64) -> Result<DMatrix<f64>> {
    let total: usize = blocks.iter().sum();
    if total != x.ncols() {
        return Err(Error::Dimension {
            context: "projection block widths",
            expected: x.ncols(),
            found: total,
        });
    }
    if blocks.iter().any(|&w| w == 0) {
        return Err(Error::input("projection blocks must be non-empty"));
    }
    let tree = SeedTree::new(seed);
    let scale = 1.0 / (JL_DIM as f64).sqrt();
    let mut out = DMatrix::zeros(x.nrows(), JL_DIM * blocks.len());
    let mut start = 0;
    for (b, &width) in blocks.iter().enumerate() {
        let mut rng = tree.stream(Domain::JlBlock, b as u64);
        let mut proj = DMatrix::zeros(width, JL_DIM);
        for r in 0..width {
            for c in 0..JL_DIM {
                let z: f64 = StandardNormal.sample(&mut rng);
                proj[(r, c)] = z * scale;
            }
        }
        let part = x.columns(start, width) * proj;
        out.columns_mut(b * JL_DIM, JL_DIM).copy_from(&part);
        start += width;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::gaussian;
    use proptest::prelude::*;

    fn coords(z: DMatrix<f64>) -> StabilizedCoords {
        StabilizedCoords {
            z_bar: z,
            clip_threshold: f64::INFINITY,
            bucket_means: DMatrix::zeros(1, 1),
            success_axis: None,
        }
    }

    fn design(n: usize, f: usize, seed: u64) -> DesignMatrix {
        DesignMatrix::from_rows(&gaussian(n, f, seed))
    }

    #[test]
    fn whiteners_agree_up_to_rotation() {
        let x = gaussian(400, 12, 21) * DMatrix::from_fn(12, 12, |i, j| if i <= j { 1.0 } else { 0.3 });
        let cov = SymMatrix::symmetrize(mul_tn(&x, &x) / 400.0);
        let a = cholesky_whitener(&cov).unwrap();
        let b = eigen_whitener(&cov).unwrap();
        // Both whiten: W' C W = I.
        for w in [&a, &b] {
            let white = w.transpose() * cov.as_matrix() * w;
            assert!((white - DMatrix::identity(12, 12)).norm() < 1e-9);
        }
        // Same row Gram, so the same design geometry.
        let (ga, gb) = (&x * &a, &x * &b);
        let (ka, kb) = (&ga * ga.transpose(), &gb * gb.transpose());
        assert!((&ka - &kb).norm() <= 1e-8 * kb.norm());
    }

    #[test]
    fn rank_deficient_covariance_uses_eigen_path() {
        let base = gaussian(100, 3, 22);
        let x = DMatrix::from_fn(100, 5, |i, j| base[(i, j % 3)]);
        let cov = SymMatrix::symmetrize(mul_tn(&x, &x) / 100.0);
        assert!(cholesky_whitener(&cov).is_none());
        assert_eq!(eigen_whitener(&cov).unwrap().ncols(), 3);
    }

    #[test]
    fn orthogonal_gradients_pass_through() {
        let z = gaussian(50, 4, 1);
        let raw = gaussian(50, 6, 2);
        // G = (I - Z (Z'Z)^-1 Z') R
        let zt_z = z.tr_mul(&z);
        let proj = &z * zt_z.try_inverse().unwrap() * z.transpose();
        let g = (DMatrix::identity(50, 50) - proj) * raw;
        let gp = residualize(&g, &coords(z), 1e-3).unwrap();
        assert!((gp - &g).amax() < 1e-10);
    }

    #[test]
    fn column_space_gradients_vanish() {
        let z = gaussian(80, 5, 3);
        let g = &z * gaussian(5, 7, 4);
        let gp = residualize(&g, &coords(z), 1e-8).unwrap();
        assert!(gp.norm() <= 1e-4 * g.norm());
    }

    #[test]
    fn reconstruction() {
        let z = gaussian(40, 3, 5);
        let g = gaussian(40, 4, 6);
        let gp = residualize(&g, &coords(z.clone()), 0.01).unwrap();
        let coef = ridge_solve(&SymMatrix::symmetrize(z.tr_mul(&z)), &z.tr_mul(&g), 0.01).unwrap();
        assert!((gp + &z * coef - g).amax() < 1e-12);
    }

    #[test]
    fn refit_coefficients_vanish() {
        let z = gaussian(3000, 8, 7);
        let g = &z * gaussian(8, 6, 8) + gaussian(3000, 6, 9);
        let c = coords(z.clone());
        let before = ridge_coefficients(&z, &g, 1e-3).unwrap().norm();
        let gp = residualize(&g, &c, 1e-3).unwrap();
        let after = ridge_coefficients(&z, &gp, 1e-3).unwrap().norm();
        assert!(after <= 1e-6 * before, "{after} vs {before}");
    }

    #[test]
    fn row_count_mismatch() {
        let z = gaussian(10, 2, 1);
        assert!(matches!(
            residualize(&gaussian(9, 3, 1), &coords(z), 1e-3),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn conditioning_invariants() {
        let n = 600;
        let g = gaussian(n, 12, 10) * gaussian(12, 12, 11);
        let v = design(n, 6, 12);
        let c = condition_gradients(&g, &v, 1e-3, 1.0).unwrap();
        assert_eq!(c.g_tilde.ncols(), 12);
        let w = &c.g_tilde / c.trace_scale;
        let cov = w.tr_mul(&w) / n as f64;
        assert!((cov - DMatrix::<f64>::identity(12, 12)).amax() < 1e-6);
        let lhs = c.g_tilde.norm_squared() / n as f64;
        let rhs = v.sq_norms().iter().sum::<f64>() / n as f64;
        assert!((lhs - rhs).abs() <= 1e-8 * rhs);
    }

    #[test]
    fn rank_deficient_directions_are_dropped() {
        let n = 300;
        // rank 3 inside 8 columns
        let g = gaussian(n, 3, 13) * gaussian(3, 8, 14);
        let v = design(n, 4, 15);
        let c = condition_gradients(&g, &v, 1e-3, 1.0).unwrap();
        // unit normalization plus centering can leave at most rank 3
        assert!(c.g_tilde.ncols() <= 3, "{}", c.g_tilde.ncols());
    }

    #[test]
    fn inverse_norm_weights() {
        let mut g = gaussian(100, 5, 16);
        g.row_mut(7).fill(0.0);
        g.row_mut(8).scale_mut(1e-9);
        let v = design(100, 3, 17);
        let zero_alpha = condition_gradients(&g, &v, 1e-3, 0.0).unwrap();
        assert!(zero_alpha.q_tilde.iter().all(|&q| q == 1.0));
        let eps = 0.05;
        let alpha = 1.5;
        let c = condition_gradients(&g, &v, eps, alpha).unwrap();
        let expect = eps.powf(-alpha);
        assert!((c.q_tilde[7] - expect).abs() < 1e-9 * expect);
        assert!((c.q_tilde[8] - expect).abs() < 1e-9 * expect);

        // a row sitting exactly at the mean norm
        let norms = row_norms(&g);
        let mean = norms.iter().sum::<f64>() / 100.0;
        let mut h = g.clone();
        let n0 = norms[0];
        h.row_mut(0).scale_mut(mean / n0);
        let hn = row_norms(&h);
        let hmean = hn.iter().sum::<f64>() / 100.0;
        let target = hmean / hn[0];
        let ch = condition_gradients(&h, &v, eps, alpha).unwrap();
        assert!((ch.q_tilde[0] - target.powf(alpha)).abs() < 1e-12);
    }

    #[test]
    fn all_zero_is_an_error() {
        let v = design(20, 2, 18);
        assert!(matches!(
            condition_gradients(&DMatrix::zeros(20, 4), &v, 1e-3, 1.0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn stacking() {
        let v = design(30, 4, 19);
        let g = gaussian(30, 3, 20);
        let q: Vec<f64> = (0..30).map(|i| 0.5 + i as f64 / 30.0).collect();
        assert_eq!(stack_design(&v, Some(&g), &q, 0.0).unwrap(), v);
        assert_eq!(stack_design(&v, None, &q, 0.0).unwrap(), v);
        assert!(matches!(stack_design(&v, None, &q, 1.0), Err(Error::Config(_))));
        let ones = vec![1.0; 30];
        let phi = stack_design(&v, Some(&g), &ones, 1.0).unwrap();
        assert_eq!(phi.layout, BlockLayout { sae: 4, gradient: 3 });
        for i in 0..30 {
            for k in 0..3 {
                assert_eq!(phi.row(i)[4 + k], g[(i, k)]);
            }
        }
        let omega = 0.7;
        let phi = stack_design(&v, Some(&g), &q, omega).unwrap();
        for i in 0..30 {
            let lhs: f64 = phi.row(i).iter().map(|x| x * x).sum();
            let v2: f64 = v.row(i).iter().map(|x| x * x).sum();
            let rhs = v2 + q[i] * omega * g.row(i).norm_squared();
            assert!((lhs - rhs).abs() < 1e-12 * rhs.max(1.0));
        }
    }

    #[test]
    fn block_mass_budget() {
        let n = 400;
        let z = gaussian(n, 6, 21);
        let v = DesignMatrix::from_rows(&z);
        let g = gaussian(n, 10, 22);
        let block = build_gradient_block(&g, &coords(z), &v, 1e-3, 1e-3, 0.0, 1.0).unwrap();
        let phi = stack_design(&v, Some(&block.g_tilde), &block.q_tilde, 1.0).unwrap();
        let grad_mass: f64 = (0..n).map(|i| phi.row(i)[6..].iter().map(|x| x * x).sum::<f64>()).sum();
        let sae_mass: f64 = v.sq_norms().iter().sum();
        assert!((grad_mass - sae_mass).abs() <= 1e-8 * sae_mass);
    }

    #[test]
    fn deterministic() {
        let z = gaussian(200, 5, 23);
        let v = DesignMatrix::from_rows(&z);
        let g = gaussian(200, 9, 24);
        let a = build_gradient_block(&g, &coords(z.clone()), &v, 1e-3, 1e-3, 1.0, 1.0).unwrap();
        let b = build_gradient_block(&g, &coords(z), &v, 1e-3, 1e-3, 1.0, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn projection_layout_and_scale() {
        let x = gaussian(400, 300, 25);
        let a = jl_project(&x, &[100, 200], 7).unwrap();
        let b = jl_project(&x, &[100, 200], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), (400, 128));
        assert_ne!(a, jl_project(&x, &[100, 200], 8).unwrap());
        // squared norms are preserved on average
        let ratio = a.columns(0, 64).norm_squared() / x.columns(0, 100).norm_squared();
        assert!((ratio - 1.0).abs() < 0.25, "{ratio}");
        assert!(jl_project(&x, &[100, 100], 7).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn residual_does_not_grow(seed in 0u64..1000, rho_exp in -6i32..=-3) {
            let z = gaussian(120, 6, seed);
            let g = gaussian(120, 5, seed + 5000) + &z * gaussian(6, 5, seed + 9000);
            let gp = residualize(&g, &coords(z), 10f64.powi(rho_exp)).unwrap();
            prop_assert!(gp.norm() <= g.norm() + 1e-8);
        }
    }
}
