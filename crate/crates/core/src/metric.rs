//! The verifier-coupled coverage metric and the cluster-block design vectors.
//!
//! With `S_d = (1/N) sum_i d_i z_i z_i'` and `S_r` likewise with `r_i`, the
//! metric is the ridge-whitened quotient
//!
//! ```text
//! M = (S_r + rho I)^(-1/2) (S_d + rho I) (S_r + rho I)^(-1/2)
//! ```
//!
//! whose eigenpairs are the generalized eigenpairs of `(S_d + rho I, S_r + rho I)`:
//! large eigenvalues mark directions where difficulty-weighted mass exceeds
//! trainability-weighted mass. Before it is used in the design, `M` is
//! regularized as `U clip(L^eta, 1/c, c) U'` and rescaled to trace `F`.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::coords::StabilizedCoords;
use crate::error::{Error, Result};
use crate::linalg::{mat_power, sym_eig, weighted_gram, EigenDecomp, SymMatrix};
use crate::weights::VerifierWeights;

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMetric {
    pub sigma_d: SymMatrix,
    pub sigma_r: SymMatrix,
    /// `M` before regularization.
    pub m_raw: SymMatrix,
    /// Shrunk, clipped and trace-normalized `M`.
    pub m_reg: SymMatrix,
    /// Eigendecomposition of `m_raw`.
    pub eig: EigenDecomp,
    /// `m_reg^(1/2)`.
    pub m_reg_sqrt: SymMatrix,
    /// Factor applied to the clipped spectrum to reach trace `F`.
    pub trace_scale: f64,
    pub rho: f64,
    pub eta: f64,
    pub c: f64,
}

impl CoverageMetric {
    pub fn dim(&self) -> usize {
        self.m_raw.dim()
    }

    /// Replaces the regularized metric by the identity, keeping the raw
    /// quantities for diagnostics (the whitening ablation).
    pub fn with_identity_design(mut self) -> Self {
        let f = self.dim();
        self.m_reg = SymMatrix::identity(f);
        self.m_reg_sqrt = SymMatrix::identity(f);
        self.trace_scale = 1.0;
        self
    }

    /// Leading eigenvector of `m_raw`.
    pub fn top_direction(&self) -> DVector<f64> {
        self.eig.eigenvectors.column(0).into_owned()
    }

    /// Eigenvalues and the leading `top` eigenvectors of `m_raw` as text.
    pub fn dump_text(&self, top: usize) -> String {
        let mut out = String::new();
        writeln!(out, "# rho={:?} eta={:?} c={:?} trace_scale={:?}", self.rho, self.eta, self.c, self.trace_scale).unwrap();
        writeln!(out, "eigenvalues").unwrap();
        for (k, l) in self.eig.eigenvalues.iter().enumerate() {
            writeln!(out, "{k} {l:?}").unwrap();
        }
        for k in 0..top.min(self.dim()) {
            let col: Vec<String> = self.eig.eigenvectors.column(k).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "eigenvector {k} {}", col.join(" ")).unwrap();
        }
        out
    }
}

/// Builds the metric from stabilized coordinates and mean-one weights.
pub fn build_metric(coords: &StabilizedCoords, w: &VerifierWeights, rho: f64, eta: f64, c: f64) -> Result<CoverageMetric> {
    build_metric_from(coords, &w.d_tilde, &w.r_tilde, rho, eta, c)
}

/// As [`build_metric`] with explicit difficulty-side and trainability-side
/// row weights.
pub fn build_metric_from(
    coords: &StabilizedCoords,
    d_weights: &[f64],
    r_weights: &[f64],
    rho: f64,
    eta: f64,
    c: f64,
) -> Result<CoverageMetric> {
    if !(rho > 0.0) {
        return Err(Error::config(format!("rho must be > 0, got {rho}")));
    }
    if !(c >= 1.0) {
        return Err(Error::config(format!("c must be >= 1, got {c}")));
    }
    let n = coords.z_bar.nrows();
    for (name, w) in [("difficulty", d_weights), ("trainability", r_weights)] {
        if w.len() != n {
            return Err(Error::Dimension {
                context: if name == "difficulty" { "difficulty weights" } else { "trainability weights" },
                expected: n,
                found: w.len(),
            });
        }
    }
    let f = coords.z_bar.ncols();
    let sigma_d = weighted_gram(&coords.z_bar, d_weights);
    let sigma_r = weighted_gram(&coords.z_bar, r_weights);
    let whiten = mat_power(&sigma_r.add_ridge(rho), -0.5)?;
    let m_raw = SymMatrix::symmetrize(whiten.as_matrix() * sigma_d.add_ridge(rho).as_matrix() * whiten.as_matrix());
    let eig = sym_eig(&m_raw)?;
    crate::linalg::check_pd(&eig, crate::linalg::pd_floor(&m_raw))?;

    let shrink = |l: f64| l.powf(eta).clamp(1.0 / c, c);
    let clipped_trace: f64 = eig.eigenvalues.iter().map(|&l| shrink(l)).sum();
    let trace_scale = f as f64 / clipped_trace;
    let m_reg = eig.map_spectrum(|l| trace_scale * shrink(l));
    let m_reg_sqrt = eig.map_spectrum(|l| (trace_scale * shrink(l)).sqrt());
    Ok(CoverageMetric {
        sigma_d,
        sigma_r,
        m_raw,
        m_reg,
        eig,
        m_reg_sqrt,
        trace_scale,
        rho,
        eta,
        c,
    })
}

/// Which columns of a design belong to which block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    /// Leading columns from the cluster block.
    pub sae: usize,
    /// Trailing columns from the gradient block.
    pub gradient: usize,
}

/// Per-instance design vectors.
///
/// Stored one instance per column (`p x N`) so each vector is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: DMatrix<f64>,
    pub layout: BlockLayout,
}

impl DesignMatrix {
    /// From an `N x p` matrix whose rows are the design vectors.
    pub fn from_rows(rows: &DMatrix<f64>) -> Self {
        let p = rows.ncols();
        DesignMatrix {
            columns: rows.transpose(),
            layout: BlockLayout { sae: p, gradient: 0 },
        }
    }

    /// From a `p x N` matrix whose columns are the design vectors.
    pub fn from_columns(columns: DMatrix<f64>, layout: BlockLayout) -> Result<Self> {
        if layout.sae + layout.gradient != columns.nrows() {
            return Err(Error::Dimension {
                context: "design block layout",
                expected: columns.nrows(),
                found: layout.sae + layout.gradient,
            });
        }
        if columns.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("design has non-finite entries"));
        }
        Ok(DesignMatrix { columns, layout })
    }

    pub fn n_instances(&self) -> usize {
        self.columns.ncols()
    }

    /// Design dimension `p`.
    pub fn dim(&self) -> usize {
        self.columns.nrows()
    }

    /// Design vector of instance `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.columns.as_slice()[i * p..(i + 1) * p]
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn into_columns(self) -> DMatrix<f64> {
        self.columns
    }

    /// `N x p` copy with one design vector per row.
    pub fn to_rows(&self) -> DMatrix<f64> {
        self.columns.transpose()
    }

    pub fn sq_norms(&self) -> Vec<f64> {
        self.columns.column_iter().map(|c| c.norm_squared()).collect()
    }
}

/// Cluster-block design `v_i = sqrt(r_i) M_reg^(1/2) z_i`.
pub fn sae_design(coords: &StabilizedCoords, w: &VerifierWeights, metric: &CoverageMetric) -> Result<DesignMatrix> {
    sae_design_weighted(coords, &w.r_tilde, metric)
}

/// As [`sae_design`] with an explicit per-instance row weight in place of `r_i`.
pub fn sae_design_weighted(coords: &StabilizedCoords, row_weights: &[f64], metric: &CoverageMetric) -> Result<DesignMatrix> {
    let n = coords.z_bar.nrows();
    if row_weights.len() != n {
        return Err(Error::Dimension {
            context: "design row weights",
            expected: n,
            found: row_weights.len(),
        });
    }
    if metric.dim() != coords.z_bar.ncols() {
        return Err(Error::Dimension {
            context: "metric dimension",
            expected: coords.z_bar.ncols(),
            found: metric.dim(),
        });
    }
    if let Some(i) = row_weights.iter().position(|&w| !(w >= 0.0)) {
        return Err(Error::input(format!("row {i}: design weight must be >= 0")));
    }
    // M^(1/2) Z' gives one design vector per column.
    let mut cols = metric.m_reg_sqrt.as_matrix() * coords.z_bar.transpose();
    for (i, mut col) in cols.column_iter_mut().enumerate() {
        col *= row_weights[i].sqrt();
    }
    let f = cols.nrows();
    DesignMatrix::from_columns(cols, BlockLayout { sae: f, gradient: 0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighReport {
    pub lambda_1: f64,
    /// `|S_d w - lambda S_r w| / |S_d w|` with `w = S_r^(-1/2) u_1`.
    pub residual: f64,
    pub rayleigh_quotient: f64,
    /// `|rho(w) - lambda_1| / lambda_1`.
    pub quotient_error: f64,
}

impl RayleighReport {
    pub fn passes(&self) -> bool {
        self.residual <= 1e-6 && self.quotient_error <= 1e-8
    }
}

/// Checks that the top eigenpair of `m_raw` maps to a generalized eigenpair
/// of the ridge-regularized covariances.
pub fn rayleigh_check(metric: &CoverageMetric) -> Result<RayleighReport> {
    let u = metric.top_direction();
    rayleigh_check_direction(metric, &u, metric.eig.eigenvalues[0])
}

/// As [`rayleigh_check`] for an arbitrary candidate pair `(u, lambda)`.
pub fn rayleigh_check_direction(metric: &CoverageMetric, u: &DVector<f64>, lambda: f64) -> Result<RayleighReport> {
    let sd = metric.sigma_d.add_ridge(metric.rho);
    let sr = metric.sigma_r.add_ridge(metric.rho);
    let w = mat_power(&sr, -0.5)?.as_matrix() * u;
    let sd_w = sd.as_matrix() * &w;
    let sr_w = sr.as_matrix() * &w;
    let residual = (&sd_w - &sr_w * lambda).norm() / sd_w.norm().max(f64::MIN_POSITIVE);
    let rayleigh_quotient = w.dot(&sd_w) / w.dot(&sr_w);
    Ok(RayleighReport {
        lambda_1: lambda,
        residual,
        rayleigh_quotient,
        quotient_error: (rayleigh_quotient - lambda).abs() / lambda.abs().max(f64::MIN_POSITIVE),
    })
}

/// Dense `N x F` matrix of the design rows, for inspection dumps.
pub fn design_rows(design: &DesignMatrix) -> DMatrix<f64> {
    design.to_rows()
}
