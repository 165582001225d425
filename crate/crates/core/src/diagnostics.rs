//! Audits of a metric and a selection.
//!
//! - label shuffle: rebuild the metric with permuted success counts and
//!   compare its leading structure with the true one;
//! - surface regression: how much of the selection indicator is explained
//!   linearly by surface statistics;
//! - allocation: breadth and shift of the selected cluster-mass distribution;
//! - difficulty localization: success counts of the instances loading most
//!   on the leading metric direction.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::coords::{stabilize_with_order, StabilizedCoords};
use crate::error::{Error, Result};
use crate::metric::{build_metric, CoverageMetric};
use crate::pool::{InstancePool, PipelineConfig};
use crate::rng::{Domain, SeedTree};
use crate::select::SelectionResult;
use crate::weights::compute_weights;

/// Leading subspace dimension compared by the shuffle test.
pub const OVERLAP_DIM: usize = 10;

/// Additive floor on cluster shares before renormalizing.
pub const SHARE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShuffleOutcome {
    pub top_eigenvalue_true: f64,
    pub top_eigenvalue_shuffled: f64,
    pub subspace_overlap: f64,
}

/// Metric of `pool` under `cfg`.
pub fn metric_for(pool: &InstancePool, cfg: &PipelineConfig) -> Result<(StabilizedCoords, CoverageMetric)> {
    let w = compute_weights(&pool.success_counts, pool.rollouts)?;
    let coords = stabilize_with_order(pool, &cfg.stabilize_order);
    let metric = build_metric(&coords, &w, cfg.rho, cfg.eta, cfg.c)?;
    Ok((coords, metric))
}

/// Label-shuffle falsification with a uniformly random permutation.
pub fn shuffle_falsification(pool: &InstancePool, cfg: &PipelineConfig, seed: u64) -> Result<ShuffleOutcome> {
    let mut perm: Vec<usize> = (0..pool.n_instances()).collect();
    perm.shuffle(&mut SeedTree::new(seed).stream(Domain::LabelShuffle, 0));
    shuffle_falsification_with(pool, cfg, &perm)
}

/// As [`shuffle_falsification`] with success count `i` replaced by `s[perm[i]]`.
pub fn shuffle_falsification_with(pool: &InstancePool, cfg: &PipelineConfig, perm: &[usize]) -> Result<ShuffleOutcome> {
    if perm.len() != pool.n_instances() {
        return Err(Error::Dimension {
            context: "label permutation",
            expected: pool.n_instances(),
            found: perm.len(),
        });
    }
    let (_, truth) = metric_for(pool, cfg)?;
    let shuffled_s: Vec<u32> = perm.iter().map(|&j| pool.success_counts[j]).collect();
    let shuffled_pool = pool.with_success_counts(shuffled_s)?;
    let (_, shuffled) = metric_for(&shuffled_pool, cfg)?;
    let k = OVERLAP_DIM.min(truth.dim());
    Ok(ShuffleOutcome {
        top_eigenvalue_true: truth.eig.eigenvalues[0],
        top_eigenvalue_shuffled: shuffled.eig.eigenvalues[0],
        subspace_overlap: subspace_overlap(&truth.eig.leading(k), &shuffled.eig.leading(k)),
    })
}

/// `|U'V|_F^2 / k` for two `d x k` orthonormal bases.
pub fn subspace_overlap(u: &DMatrix<f64>, v: &DMatrix<f64>) -> f64 {
    let k = u.ncols().min(v.ncols());
    if k == 0 {
        return 0.0;
    }
    (u.tr_mul(v).norm_squared() / k as f64).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceRegression {
    pub r2: f64,
    /// Pearson correlation of each feature with the selection indicator.
    pub rho: Vec<(String, f64)>,
    /// Selected mean minus corpus mean, in feature units.
    pub delta: Vec<(String, f64)>,
    /// Features left out of the fit as constant or linearly dependent.
    pub dropped: Vec<String>,
}

/// OLS of the 0/1 selection indicator on standardized surface features plus
/// an intercept.
pub fn surface_regression(selected: &[usize], pool: &InstancePool) -> Result<SurfaceRegression> {
    let sf = pool
        .surface_features
        .as_ref()
        .ok_or_else(|| Error::input("pool has no surface features"))?;
    let n = pool.n_instances();
    let mut y = DVector::zeros(n);
    for &i in selected {
        if i >= n {
            return Err(Error::input(format!("selected index {i} out of range")));
        }
        y[i] = 1.0;
    }
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);
    let y_ss = yc.norm_squared();
    let n_sel = selected.len().max(1) as f64;

    let mut rho = Vec::new();
    let mut delta = Vec::new();
    let mut dropped = Vec::new();
    // Orthonormal basis, intercept first, grown by modified Gram-Schmidt.
    let mut basis: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0 / (n as f64).sqrt())];
    for (j, name) in sf.names.iter().enumerate() {
        let col = sf.values.column(j).into_owned();
        let mean = col.mean();
        let centered = col.add_scalar(-mean);
        let sd = (centered.norm_squared() / n as f64).sqrt();
        let sel_mean = selected.iter().map(|&i| col[i]).sum::<f64>() / n_sel;
        delta.push((name.clone(), sel_mean - mean));
        if !(sd > 0.0) || !sd.is_finite() {
            rho.push((name.clone(), 0.0));
            dropped.push(name.clone());
            continue;
        }
        let r = if y_ss > 0.0 {
            centered.dot(&yc) / (centered.norm() * y_ss.sqrt())
        } else {
            0.0
        };
        rho.push((name.clone(), r));
        let mut v = centered / sd;
        let before = v.norm();
        for b in &basis {
            let proj = b.dot(&v);
            v.axpy(-proj, b, 1.0);
        }
        let after = v.norm();
        if after <= 1e-10 * before {
            dropped.push(name.clone());
            continue;
        }
        basis.push(v / after);
    }
    let r2 = if y_ss > 0.0 {
        let mut fitted = DVector::zeros(n);
        for b in &basis {
            fitted.axpy(b.dot(&y), b, 1.0);
        }
        (1.0 - (&y - fitted).norm_squared() / y_ss).clamp(0.0, 1.0)
    } else {
        0.0
    };
    Ok(SurfaceRegression { r2, rho, delta, dropped })
}

/// Floored, normalized mean cluster-mass share of the given rows.
pub fn cluster_shares(pool: &InstancePool, rows: &[usize]) -> Result<Vec<f64>> {
    let f = pool.n_clusters();
    let mut q = vec![0.0; f];
    for &i in rows {
        if i >= pool.n_instances() {
            return Err(Error::input(format!("selected index {i} out of range")));
        }
        for (qf, m) in q.iter_mut().zip(pool.cluster_mass.row(i).iter()) {
            *qf += m;
        }
    }
    let total: f64 = q.iter().sum();
    if !(total > 0.0) {
        return Err(Error::input("selected rows carry no cluster mass"));
    }
    let floored: Vec<f64> = q.iter().map(|v| v / total + SHARE_FLOOR).collect();
    let z: f64 = floored.iter().sum();
    Ok(floored.into_iter().map(|v| v / z).collect())
}

/// `exp` of the entropy of a distribution.
pub fn effective_count(q: &[f64]) -> f64 {
    (-q.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()).exp()
}

/// `KL(p || q) + KL(q || p)`.
pub fn symmetric_kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| (a - b) * (a.ln() - b.ln())).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Allocation {
    pub n_eff: f64,
    pub sym_kl: f64,
}

/// Breadth and shift of the selection's cluster-mass distribution.
pub fn allocation_stats(selected: &[usize], pool: &InstancePool) -> Result<Allocation> {
    if selected.is_empty() {
        return Err(Error::input("allocation statistics need a non-empty selection"));
    }
    let q = cluster_shares(pool, selected)?;
    let all: Vec<usize> = (0..pool.n_instances()).collect();
    let q_bar = cluster_shares(pool, &all)?;
    Ok(Allocation {
        n_eff: effective_count(&q),
        sym_kl: symmetric_kl(&q, &q_bar),
    })
}

fn median(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median success count among the `top_m` rows loading most on `u_1`,
/// and over the whole pool.
pub fn difficulty_localization(metric: &CoverageMetric, coords: &StabilizedCoords, s: &[u32], top_m: usize) -> Result<(f64, f64)> {
    let n = coords.z_bar.nrows();
    if s.len() != n {
        return Err(Error::Dimension {
            context: "success counts",
            expected: n,
            found: s.len(),
        });
    }
    if top_m == 0 || top_m > n {
        return Err(Error::input(format!("top_m = {top_m} must lie in [1, {n}]")));
    }
    let proj = &coords.z_bar * metric.top_direction();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| proj[b].abs().total_cmp(&proj[a].abs()).then(a.cmp(&b)));
    let mut top: Vec<f64> = order[..top_m].iter().map(|&i| s[i] as f64).collect();
    let mut all: Vec<f64> = s.iter().map(|&v| v as f64).collect();
    Ok((median(&mut top), median(&mut all)))
}

/// Population variance of the per-pick marginal gains.
pub fn marginal_gain_variance(gains: &[f64]) -> f64 {
    if gains.is_empty() {
        return 0.0;
    }
    let n = gains.len() as f64;
    let mean = gains.iter().sum::<f64>() / n;
    gains.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub top_eigenvalue_true: f64,
    pub top_eigenvalue_shuffled: f64,
    pub subspace_overlap: f64,
    /// Absent when the pool has no surface features.
    pub surface_r2: Option<f64>,
    pub per_feature_rho: Vec<(String, f64)>,
    pub per_feature_delta: Vec<(String, f64)>,
    pub dropped_features: Vec<String>,
    pub n_eff_selected: f64,
    pub sym_kl: f64,
    pub median_success_top_proj: f64,
    pub median_success_corpus: f64,
    pub marginal_gain_variance: f64,
}

/// Runs every audit for `selection` on `pool`.
pub fn audit(
    pool: &InstancePool,
    cfg: &PipelineConfig,
    selection: &SelectionResult,
    coords: &StabilizedCoords,
    metric: &CoverageMetric,
) -> Result<AuditReport> {
    let shuffle = shuffle_falsification(pool, cfg, cfg.seed)?;
    let surface = match pool.surface_features {
        Some(_) => Some(surface_regression(&selection.indices, pool)?),
        None => None,
    };
    let alloc = allocation_stats(&selection.indices, pool)?;
    let top_m = 25.min(pool.n_instances());
    let (median_top, median_all) = difficulty_localization(metric, coords, &pool.success_counts, top_m)?;
    let (r2, rho, delta, dropped) = match surface {
        Some(s) => (Some(s.r2), s.rho, s.delta, s.dropped),
        None => (None, Vec::new(), Vec::new(), Vec::new()),
    };
    Ok(AuditReport {
        top_eigenvalue_true: shuffle.top_eigenvalue_true,
        top_eigenvalue_shuffled: shuffle.top_eigenvalue_shuffled,
        subspace_overlap: shuffle.subspace_overlap,
        surface_r2: r2,
        per_feature_rho: rho,
        per_feature_delta: delta,
        dropped_features: dropped,
        n_eff_selected: alloc.n_eff,
        sym_kl: alloc.sym_kl,
        median_success_top_proj: median_top,
        median_success_corpus: median_all,
        marginal_gain_variance: marginal_gain_variance(&selection.gains),
    })
}

impl AuditReport {
    /// One JSON object per line, one line per field.
    pub fn to_json_lines(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = value {
            for (k, v) in map {
                let mut one = serde_json::Map::new();
                one.insert(k, v);
                writeln!(out, "{}", serde_json::Value::Object(one)).unwrap();
            }
        }
        out
    }

    /// `name=value` lines; per-feature entries are `field.feature=value`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| writeln!(out, "{k}={v}").unwrap();
        kv("top_eigenvalue_true", format!("{:?}", self.top_eigenvalue_true));
        kv("top_eigenvalue_shuffled", format!("{:?}", self.top_eigenvalue_shuffled));
        kv("subspace_overlap", format!("{:?}", self.subspace_overlap));
        kv(
            "surface_r2",
            self.surface_r2.map_or_else(|| "none".to_string(), |v| format!("{v:?}")),
        );
        for (name, v) in &self.per_feature_rho {
            kv(&format!("per_feature_rho.{name}"), format!("{v:?}"));
        }
        for (name, v) in &self.per_feature_delta {
            kv(&format!("per_feature_delta.{name}"), format!("{v:?}"));
        }
        kv("dropped_features", self.dropped_features.join(","));
        kv("n_eff_selected", format!("{:?}", self.n_eff_selected));
        kv("sym_kl", format!("{:?}", self.sym_kl));
        kv("median_success_top_proj", format!("{:?}", self.median_success_top_proj));
        kv("median_success_corpus", format!("{:?}", self.median_success_corpus));
        kv("marginal_gain_variance", format!("{:?}", self.marginal_gain_variance));
        out
    }
}
