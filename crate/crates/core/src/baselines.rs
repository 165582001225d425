//! Reference selection strategies on the same design space.
//!
//! Every baseline returns exactly `k` distinct indices. Marginal gains are
//! reported against the log-det objective along the baseline's own order,
//! so results can be scored and compared with the greedy selectors.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashSet};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

use crate::coords::StabilizedCoords;
use crate::error::{Error, Result};
use crate::metric::{CoverageMetric, DesignMatrix};
use crate::rng::{Domain, SeedTree};
use crate::select::{GreedyRun, SelectionMode, SelectionResult};
use crate::weights::VerifierWeights;

/// Lloyd iterations for `kmeans_phi` unless overridden by the `iterations` param.
pub const KMEANS_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineName {
    Random,
    TopD,
    TopR,
    PointwiseDr,
    KmeansPhi,
    FacilityPhi,
    LeveragePhi,
    LessProxy,
}

impl BaselineName {
    pub const ALL: [BaselineName; 8] = [
        BaselineName::Random,
        BaselineName::TopD,
        BaselineName::TopR,
        BaselineName::PointwiseDr,
        BaselineName::KmeansPhi,
        BaselineName::FacilityPhi,
        BaselineName::LeveragePhi,
        BaselineName::LessProxy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BaselineName::Random => "random",
            BaselineName::TopD => "top_d",
            BaselineName::TopR => "top_r",
            BaselineName::PointwiseDr => "pointwise_dr",
            BaselineName::KmeansPhi => "kmeans_phi",
            BaselineName::FacilityPhi => "facility_phi",
            BaselineName::LeveragePhi => "leverage_phi",
            BaselineName::LessProxy => "less_proxy",
        }
    }
}

impl fmt::Display for BaselineName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineName::ALL
            .iter()
            .copied()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = BaselineName::ALL.iter().map(|b| b.as_str()).collect();
                Error::input(format!("unknown baseline {s:?} (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSpec {
    pub name: BaselineName,
    pub seed: u64,
    pub params: BTreeMap<String, f64>,
}

impl BaselineSpec {
    pub fn new(name: BaselineName, seed: u64) -> Self {
        BaselineSpec {
            name,
            seed,
            params: BTreeMap::new(),
        }
    }
}

/// Everything a baseline may look at.
#[derive(Debug, Clone, Copy)]
pub struct BaselineInputs<'a> {
    pub weights: &'a VerifierWeights,
    pub coords: &'a StabilizedCoords,
    pub design: &'a DesignMatrix,
    pub metric: &'a CoverageMetric,
    /// Ridge of the objective used to report gains.
    pub lambda: f64,
}

pub fn run_baseline(spec: &BaselineSpec, inputs: &BaselineInputs<'_>, k: usize) -> Result<SelectionResult> {
    let n = inputs.design.n_instances();
    if k == 0 || k > n {
        return Err(Error::input(format!("budget k = {k} must lie in [1, {n}]")));
    }
    if inputs.weights.len() != n || inputs.coords.z_bar.nrows() != n {
        return Err(Error::Dimension {
            context: "baseline inputs",
            expected: n,
            found: inputs.weights.len(),
        });
    }
    let w = inputs.weights;
    let indices = match spec.name {
        BaselineName::Random => {
            let mut rng = SeedTree::new(spec.seed).stream(Domain::RandomBaseline, 0);
            sample(&mut rng, n, k).into_vec()
        }
        BaselineName::TopD => top_k(&w.d_tilde, k),
        BaselineName::TopR => top_k(&w.r_tilde, k),
        BaselineName::PointwiseDr => {
            let dr: Vec<f64> = w.d_tilde.iter().zip(&w.r_tilde).map(|(d, r)| d * r).collect();
            top_k(&dr, k)
        }
        BaselineName::KmeansPhi => {
            let iters = spec.params.get("iterations").map_or(KMEANS_ITERATIONS, |&v| v as usize);
            kmeans_phi(inputs.design, k, iters, spec.seed)
        }
        BaselineName::FacilityPhi => facility_phi(inputs.design, k),
        BaselineName::LeveragePhi => top_k(&leverage_scores(inputs.design), k),
        BaselineName::LessProxy => top_k(&less_proxy_scores(inputs.coords, inputs.metric), k),
    };
    debug_assert_eq!(indices.iter().collect::<HashSet<_>>().len(), k);
    let mut run = GreedyRun::new(inputs.design, inputs.lambda, 0)?;
    for &i in &indices {
        run.add(i)?;
    }
    Ok(run.into_result(SelectionMode::Baseline(spec.name.to_string())))
}

/// Indices of the `k` largest scores, descending, ties to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Design vectors scaled to unit length, one per column; zero vectors stay zero.
pub fn unit_columns(design: &DesignMatrix) -> DMatrix<f64> {
    let mut x = design.columns().clone();
    for mut col in x.column_iter_mut() {
        let nm = col.norm();
        if nm > 0.0 {
            col /= nm;
        }
    }
    x
}

/// Spherical k-means with `k` centers, then the unselected instance nearest
/// each center in turn.
pub fn kmeans_phi(design: &DesignMatrix, k: usize, iterations: usize, seed: u64) -> Vec<usize> {
    let x = unit_columns(design);
    let n = x.ncols();
    let p = x.nrows();
    let mut rng = SeedTree::new(seed).stream(Domain::KMeans, 0);

    // Seeding: one random point, then repeatedly the point least similar to
    // every chosen center.
    let mut seeds = vec![rng.gen_range(0..n)];
    let mut best_sim: Vec<f64> = (0..n).map(|j| x.column(j).dot(&x.column(seeds[0]))).collect();
    let mut used = vec![false; n];
    used[seeds[0]] = true;
    while seeds.len() < k {
        let next = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| best_sim[a].total_cmp(&best_sim[b]).then(a.cmp(&b)))
            .expect("k <= n");
        used[next] = true;
        seeds.push(next);
        for j in 0..n {
            best_sim[j] = best_sim[j].max(x.column(j).dot(&x.column(next)));
        }
    }
    let mut centers = DMatrix::zeros(p, k);
    for (c, &s) in seeds.iter().enumerate() {
        centers.set_column(c, &x.column(s));
    }

    for _ in 0..iterations {
        let sims = centers.transpose() * &x;
        let (assign, nearest) = assign_points(&sims);
        let mut sums = DMatrix::zeros(p, k);
        let mut counts = vec![0usize; k];
        for j in 0..n {
            let c = assign[j];
            counts[c] += 1;
            let mut col = sums.column_mut(c);
            col += x.column(j);
        }
        // Empty clusters take the points least similar to their own center.
        let mut far: Vec<usize> = (0..n).collect();
        far.sort_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(a.cmp(&b)));
        let mut far = far.into_iter();
        for c in 0..k {
            if counts[c] == 0 {
                let j = far.next().expect("more points than centers");
                sums.set_column(c, &x.column(j));
            }
            let mut col = sums.column_mut(c);
            let nm = col.norm();
            if nm > 0.0 {
                col /= nm;
            }
        }
        centers = sums;
    }

    let sims = centers.transpose() * &x;
    let mut taken = vec![false; n];
    let mut picks = Vec::with_capacity(k);
    for c in 0..k {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if taken[j] {
                continue;
            }
            let s = sims[(c, j)];
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        let (j, _) = best.expect("k <= n");
        taken[j] = true;
        picks.push(j);
    }
    picks
}

/// Best center per point (ties to the lower center) and its similarity.
fn assign_points(sims: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let (k, n) = sims.shape();
    let mut assign = vec![0; n];
    let mut nearest = vec![f64::NEG_INFINITY; n];
    for j in 0..n {
        for c in 0..k {
            let s = sims[(c, j)];
            if s > nearest[j] {
                nearest[j] = s;
                assign[j] = c;
            }
        }
    }
    (assign, nearest)
}

#[derive(Debug, PartialEq)]
struct HeapEntry {
    gain: f64,
    index: usize,
    round: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then(other.index.cmp(&self.index))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy greedy maximization of `sum_j max(0, max_{i in S} cos(phi_i, phi_j))`.
pub fn facility_phi(design: &DesignMatrix, k: usize) -> Vec<usize> {
    let x = unit_columns(design);
    let n = x.ncols();
    let mut cover = vec![0.0f64; n];
    let gain_of = |i: usize, cover: &[f64]| -> f64 {
        let sims = x.tr_mul(&x.column(i));
        sims.iter().zip(cover).map(|(&s, &c)| (s - c).max(0.0)).sum()
    };

    let mut heap = BinaryHeap::with_capacity(n);
    const BLOCK: usize = 512;
    let mut start = 0;
    while start < n {
        let len = BLOCK.min(n - start);
        let sims = x.columns(start, len).transpose() * &x;
        for r in 0..len {
            let gain: f64 = sims.row(r).iter().map(|&s| s.max(0.0)).sum();
            heap.push(HeapEntry {
                gain,
                index: start + r,
                round: 0,
            });
        }
        start += len;
    }

    let mut picks = Vec::with_capacity(k);
    while picks.len() < k {
        let top = heap.pop().expect("k <= n");
        if top.round == picks.len() {
            let i = top.index;
            let sims = x.tr_mul(&x.column(i));
            for (c, &s) in cover.iter_mut().zip(sims.iter()) {
                *c = c.max(s);
            }
            picks.push(i);
        } else {
            heap.push(HeapEntry {
                gain: gain_of(top.index, &cover),
                index: top.index,
                round: picks.len(),
            });
        }
    }
    picks
}

/// Facility-location value of a subset under cosine similarity.
pub fn facility_value(design: &DesignMatrix, indices: &[usize]) -> f64 {
    let x = unit_columns(design);
    let n = x.ncols();
    let mut cover = vec![0.0f64; n];
    for &i in indices {
        let sims = x.tr_mul(&x.column(i));
        for (c, &s) in cover.iter_mut().zip(sims.iter()) {
            *c = c.max(s);
        }
    }
    cover.iter().sum()
}

/// Diagonal of the hat matrix of the `N x p` design, from a thin SVD.
pub fn leverage_scores(design: &DesignMatrix) -> Vec<f64> {
    let rows = design.to_rows();
    let (n, p) = rows.shape();
    let svd = rows.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = n.max(p) as f64 * f64::EPSILON * smax;
    let mut h = vec![0.0; n];
    for (c, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            for (hi, &uic) in h.iter_mut().zip(u.column(c).iter()) {
                *hi += uic * uic;
            }
        }
    }
    h
}

/// `|cos(z_i, u_1)|` with `u_1` the leading eigenvector of the raw metric.
pub fn less_proxy_scores(coords: &StabilizedCoords, metric: &CoverageMetric) -> Vec<f64> {
    let u: DVector<f64> = metric.top_direction();
    coords
        .z_bar
        .row_iter()
        .map(|z| {
            let nm = z.norm();
            if nm > 0.0 {
                (z.transpose().dot(&u) / (nm * u.norm())).abs()
            } else {
                0.0
            }
        })
        .collect()
}

/// `|A n B| / |A u B|`; two empty selections give 1.
pub fn jaccard(a: &SelectionResult, b: &SelectionResult) -> f64 {
    jaccard_indices(&a.indices, &b.indices)
}

pub fn jaccard_indices(a: &[usize], b: &[usize]) -> f64 {
    let sa: HashSet<usize> = a.iter().copied().collect();
    let sb: HashSet<usize> = b.iter().copied().collect();
    let union = sa.union(&sb).count();
    if union == 0 {
        return 1.0;
    }
    sa.intersection(&sb).count() as f64 / union as f64
}
