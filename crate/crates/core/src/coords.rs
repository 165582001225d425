//! Stabilization of raw cluster masses into the coordinate used by the metric.
//!
//! Three steps, applied by default in this order:
//!
//! 1. success-axis removal: center the rows, regress each column on the
//!    centered success count, and project every row off the unit vector of
//!    per-column slopes;
//! 2. row clip: rows whose norm exceeds the 99th percentile of row norms are
//!    rescaled down to it;
//! 3. bucket centering: rows are grouped by success count and each group's
//!    mean row is subtracted.
//!
//! All three steps are positively homogeneous, so scaling the input scales
//! the output by the same factor.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{percentile, row_norms};
use crate::pool::InstancePool;

pub const CLIP_PERCENTILE: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StabilizeStep {
    SuccessAxis,
    Clip,
    BucketCenter,
}

impl StabilizeStep {
    pub const DEFAULT_ORDER: [StabilizeStep; 3] =
        [StabilizeStep::SuccessAxis, StabilizeStep::Clip, StabilizeStep::BucketCenter];
}

impl fmt::Display for StabilizeStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StabilizeStep::SuccessAxis => "removal",
            StabilizeStep::Clip => "clip",
            StabilizeStep::BucketCenter => "center",
        })
    }
}

impl FromStr for StabilizeStep {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "removal" => Ok(StabilizeStep::SuccessAxis),
            "clip" => Ok(StabilizeStep::Clip),
            "center" => Ok(StabilizeStep::BucketCenter),
            other => Err(Error::config(format!(
                "unknown stabilization step {other:?} (expected removal, clip or center)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizedCoords {
    /// `N x F` stabilized coordinates.
    pub z_bar: DMatrix<f64>,
    /// Row-norm cutoff used by the clip step.
    pub clip_threshold: f64,
    /// `(G + 1) x F`; row `s` is the mean subtracted from bucket `s` (zero for
    /// empty buckets).
    pub bucket_means: DMatrix<f64>,
    /// Unit direction removed by the success-axis step, absent when the
    /// success counts are constant or uncorrelated with mass.
    pub success_axis: Option<DVector<f64>>,
}

/// Stabilizes `pool.cluster_mass` with the default step order.
pub fn stabilize(pool: &InstancePool) -> StabilizedCoords {
    stabilize_with_order(pool, &StabilizeStep::DEFAULT_ORDER)
}

pub fn stabilize_with_order(pool: &InstancePool, order: &[StabilizeStep]) -> StabilizedCoords {
    let mut z = pool.cluster_mass.clone();
    let mut clip_threshold = f64::INFINITY;
    let mut bucket_means = DMatrix::zeros(pool.rollouts as usize + 1, pool.n_clusters());
    let mut success_axis = None;
    for step in order {
        match step {
            StabilizeStep::SuccessAxis => success_axis = remove_success_axis(&mut z, &pool.success_counts),
            StabilizeStep::Clip => clip_threshold = clip_rows(&mut z, CLIP_PERCENTILE),
            StabilizeStep::BucketCenter => {
                bucket_means = center_buckets(&mut z, &pool.success_counts, pool.rollouts)
            }
        }
    }
    StabilizedCoords {
        z_bar: z,
        clip_threshold,
        bucket_means,
        success_axis,
    }
}

/// Centers the rows of `z` and projects them off the success axis. Returns the
/// axis, or `None` (leaving `z` untouched) when it is undefined.
pub fn remove_success_axis(z: &mut DMatrix<f64>, s: &[u32]) -> Option<DVector<f64>> {
    let n = z.nrows() as f64;
    let s_mean = s.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sc: Vec<f64> = s.iter().map(|&v| v as f64 - s_mean).collect();
    let ss: f64 = sc.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return None;
    }
    let mut centered = z.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let sc = DVector::from_vec(sc);
    let slopes = centered.tr_mul(&sc) / ss;
    let norm = slopes.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return None;
    }
    let axis = slopes / norm;
    let proj = &centered * &axis;
    centered.ger(-1.0, &proj, &axis, 1.0);
    *z = centered;
    Some(axis)
}

/// Rescales rows with norm above the `q`-percentile of row norms down to it.
/// Returns the threshold.
pub fn clip_rows(z: &mut DMatrix<f64>, q: f64) -> f64 {
    let norms = row_norms(z);
    let threshold = percentile(&norms, q);
    for (i, &nrm) in norms.iter().enumerate() {
        if nrm > threshold {
            let scale = threshold / nrm;
            z.row_mut(i).scale_mut(scale);
        }
    }
    threshold
}

/// Subtracts each success bucket's mean row. Returns the `(g + 1) x F` means.
pub fn center_buckets(z: &mut DMatrix<f64>, s: &[u32], g: u32) -> DMatrix<f64> {
    let buckets = g as usize + 1;
    let f = z.ncols();
    let mut sums = DMatrix::zeros(buckets, f);
    let mut counts = vec![0usize; buckets];
    for &b in s {
        counts[b as usize] += 1;
    }
    for j in 0..f {
        for (i, &b) in s.iter().enumerate() {
            sums[(b as usize, j)] += z[(i, j)];
        }
    }
    for (b, &c) in counts.iter().enumerate() {
        if c > 0 {
            sums.row_mut(b).scale_mut(1.0 / c as f64);
        }
    }
    for j in 0..f {
        for (i, &b) in s.iter().enumerate() {
            z[(i, j)] -= sums[(b as usize, j)];
        }
    }
    sums
}
