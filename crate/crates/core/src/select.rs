//! Greedy D-optimal subset selection.
//!
//! The objective is `J(S) = log det(lambda I + sum_{i in S} phi_i phi_i')`.
//! Adding `i` to `S` raises it by `log(1 + phi_i' A_S^-1 phi_i)`, so greedy
//! selection keeps `A^-1` current by rank-one downdates and tracks every
//! candidate's leverage `phi' A^-1 phi` incrementally: after a pick with
//! `u = A^-1 phi*` and `w = u / sqrt(1 + phi*'u)`, each leverage falls by
//! `(phi_i' w)^2`.
//!
//! The screened variant only refreshes the leverages of candidates outside a
//! top-`Q` queue every `R` picks, batching the deferred updates into one
//! matrix product.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::{spd_inverse, spd_log_det};
use crate::metric::DesignMatrix;

/// Default number of picks between exact re-inversions of `A`.
pub const DEFAULT_REINVERT_EVERY: usize = 512;

/// Largest number of subsets [`exhaustive_opt`] will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 2_000_000;

const DENOM_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SelectionMode {
    ExactGreedy,
    ScreenedGreedy,
    Exhaustive,
    Baseline(String),
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionMode::ExactGreedy => f.write_str("exact_greedy"),
            SelectionMode::ScreenedGreedy => f.write_str("screened_greedy"),
            SelectionMode::Exhaustive => f.write_str("exhaustive"),
            SelectionMode::Baseline(name) => write!(f, "baseline:{name}"),
        }
    }
}

impl FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "exact_greedy" | "exact" => Ok(SelectionMode::ExactGreedy),
            "screened_greedy" | "screened" => Ok(SelectionMode::ScreenedGreedy),
            "exhaustive" => Ok(SelectionMode::Exhaustive),
            other => match other.strip_prefix("baseline:") {
                Some(name) if !name.is_empty() => Ok(SelectionMode::Baseline(name.to_string())),
                _ => Err(Error::input(format!("unknown selection mode {other:?}"))),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Picked instances in pick order.
    pub indices: Vec<usize>,
    /// Marginal gain of each pick.
    pub gains: Vec<f64>,
    /// `J(S)`.
    pub objective: f64,
    pub mode: SelectionMode,
}

impl SelectionResult {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Tuning for the greedy selectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyOptions {
    /// Queue size; `None` scores every candidate every step.
    pub queue_q: Option<usize>,
    pub refresh_r: usize,
    /// Picks between exact re-inversions of `A`; 0 disables.
    pub reinvert_every: usize,
}

impl GreedyOptions {
    pub fn exact() -> Self {
        GreedyOptions {
            queue_q: None,
            refresh_r: usize::MAX,
            reinvert_every: DEFAULT_REINVERT_EVERY,
        }
    }

    pub fn screened(queue_q: usize, refresh_r: usize) -> Self {
        GreedyOptions {
            queue_q: Some(queue_q),
            refresh_r,
            reinvert_every: DEFAULT_REINVERT_EVERY,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Incremental state of a greedy run: the selected set and `A_S^-1`.
///
/// Besides driving the selectors, this lets other code add instances in a
/// chosen order and read off the resulting marginal gains.
#[derive(Debug, Clone)]
pub struct GreedyRun<'a> {
    design: &'a DesignMatrix,
    lambda: f64,
    /// Running `A^-1`; only the lower triangle is read or updated.
    a_inv: DMatrix<f64>,
    /// `lambda I + sum phi phi'` over picks up to `folded`.
    gram: DMatrix<f64>,
    folded: usize,
    reinvert_every: usize,
    selected: Vec<bool>,
    indices: Vec<usize>,
    gains: Vec<f64>,
    u: DVector<f64>,
}

impl<'a> GreedyRun<'a> {
    pub fn new(design: &'a DesignMatrix, lambda: f64, reinvert_every: usize) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::input(format!("lambda must be > 0, got {lambda}")));
        }
        let p = design.dim();
        Ok(GreedyRun {
            design,
            lambda,
            a_inv: DMatrix::identity(p, p) / lambda,
            gram: DMatrix::identity(p, p) * lambda,
            folded: 0,
            reinvert_every,
            selected: vec![false; design.n_instances()],
            indices: Vec::new(),
            gains: Vec::new(),
            u: DVector::zeros(p),
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn gains(&self) -> &[f64] {
        &self.gains
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.selected[i]
    }

    /// Current `A^-1` as maintained by the rank-one updates.
    pub fn inverse(&self) -> DMatrix<f64> {
        // Only the lower triangle is kept current.
        let mut full = self.a_inv.lower_triangle();
        full.fill_upper_triangle_with_lower_triangle();
        full
    }

    /// `A = lambda I + sum phi phi'` over the current selection, built fresh.
    pub fn gram(&self) -> DMatrix<f64> {
        let p = self.design.dim();
        let mut a = DMatrix::identity(p, p) * self.lambda;
        for &i in &self.indices {
            let phi = self.phi(i);
            a.ger(1.0, &phi, &phi, 1.0);
        }
        a
    }

    /// `J(S) = p log lambda + sum of gains`.
    pub fn objective(&self) -> f64 {
        empty_objective(self.design.dim(), self.lambda) + self.gains.iter().sum::<f64>()
    }

    /// `phi_i' A^-1 phi_i` against the current state.
    pub fn leverage(&self, i: usize) -> f64 {
        let phi = self.phi(i);
        let mut u = DVector::zeros(phi.len());
        u.sygemv(1.0, &self.a_inv, &phi, 0.0);
        phi.dot(&u)
    }

    /// Gain of adding `i` now, `log(1 + phi_i' A^-1 phi_i)`.
    pub fn marginal_gain(&self, i: usize) -> f64 {
        self.leverage(i).ln_1p()
    }

    /// Adds instance `i` and returns its marginal gain.
    pub fn add(&mut self, i: usize) -> Result<f64> {
        if i >= self.selected.len() {
            return Err(Error::input(format!("instance {i} out of range for {} instances", self.selected.len())));
        }
        if self.selected[i] {
            return Err(Error::input(format!("instance {i} already selected")));
        }
        let (gain, _) = self.push(i)?;
        Ok(gain)
    }

    fn phi(&self, i: usize) -> DVectorView<'a, f64> {
        DVectorView::from_slice(self.design.row(i), self.design.dim())
    }

    /// Rank-one update for pick `i`. Returns the gain and the scaled vector
    /// `A^-1 phi / sqrt(1 + phi' A^-1 phi)` taken before the update.
    fn push(&mut self, i: usize) -> Result<(f64, DVector<f64>)> {
        let phi = self.phi(i);
        self.u.sygemv(1.0, &self.a_inv, &phi, 0.0);
        let q = phi.dot(&self.u);
        let denom = 1.0 + q;
        if !(denom >= DENOM_FLOOR) {
            return Err(Error::NumericalCorruption {
                step: self.indices.len(),
                value: denom,
            });
        }
        self.a_inv.syger(-1.0 / denom, &self.u, &self.u, 1.0);
        let w = &self.u / denom.sqrt();
        let gain = q.ln_1p();
        self.selected[i] = true;
        self.indices.push(i);
        self.gains.push(gain);
        if self.reinvert_every > 0 && self.indices.len() % self.reinvert_every == 0 {
            self.reinvert()?;
        }
        Ok((gain, w))
    }

    /// Replaces the running inverse by a fresh Cholesky inverse of `A`.
    fn reinvert(&mut self) -> Result<()> {
        let pending = &self.indices[self.folded..];
        if !pending.is_empty() {
            let p = self.design.dim();
            let mut x = DMatrix::zeros(p, pending.len());
            for (c, &i) in pending.iter().enumerate() {
                x.column_mut(c).copy_from_slice(self.design.row(i));
            }
            self.gram.gemm(1.0, &x, &x.transpose(), 1.0);
            self.folded = self.indices.len();
        }
        self.a_inv = spd_inverse(&self.gram)?;
        Ok(())
    }

    pub fn into_result(self, mode: SelectionMode) -> SelectionResult {
        let objective = self.objective();
        SelectionResult {
            indices: self.indices,
            gains: self.gains,
            objective,
            mode,
        }
    }
}

/// `J(empty) = p log lambda`.
pub fn empty_objective(p: usize, lambda: f64) -> f64 {
    p as f64 * lambda.ln()
}

fn check_budget(design: &DesignMatrix, k: usize) -> Result<()> {
    let n = design.n_instances();
    if k == 0 {
        return Err(Error::input("budget k must be at least 1"));
    }
    if k > n {
        return Err(Error::input(format!("budget k = {k} exceeds pool size N = {n}")));
    }
    Ok(())
}

/// Greedy selection scanning every candidate at every step.
pub fn greedy_exact(design: &DesignMatrix, k: usize, lambda: f64) -> Result<SelectionResult> {
    greedy(design, k, lambda, &GreedyOptions::exact())
}

/// Greedy selection with a top-`queue_q` candidate queue rebuilt every
/// `refresh_r` picks.
pub fn greedy_screened(design: &DesignMatrix, k: usize, lambda: f64, queue_q: usize, refresh_r: usize) -> Result<SelectionResult> {
    greedy(design, k, lambda, &GreedyOptions::screened(queue_q, refresh_r))
}

/// Columns per block when syncing deferred leverage updates.
const SYNC_BLOCK: usize = 1024;

/// Shared greedy engine.
///
/// With `queue_q = None`, or a queue covering the whole pool, every
/// candidate's leverage is updated after every pick and the run is exact.
/// Otherwise candidates outside the queue receive their deferred updates at
/// each refresh. If the queue empties between refreshes it is rebuilt early.
pub fn greedy(design: &DesignMatrix, k: usize, lambda: f64, opts: &GreedyOptions) -> Result<SelectionResult> {
    check_budget(design, k)?;
    let n = design.n_instances();
    let p = design.dim();
    let (mode, q) = match opts.queue_q {
        None => (SelectionMode::ExactGreedy, n),
        Some(0) => return Err(Error::config("queue size must be at least 1")),
        Some(q) => (SelectionMode::ScreenedGreedy, q.min(n)),
    };
    if opts.refresh_r == 0 {
        return Err(Error::config("refresh interval must be at least 1"));
    }
    let full_queue = q >= n;
    let mut run = GreedyRun::new(design, lambda, opts.reinvert_every)?;
    let mut scores: Vec<f64> = (0..n).map(|i| dot(design.row(i), design.row(i)) / lambda).collect();

    // Queue members in ascending index order; membership flag per instance.
    let mut queue: Vec<usize> = (0..n).collect();
    let mut in_queue = vec![true; n];
    // Deferred update vectors, one column of length p each.
    let mut pending: Vec<f64> = Vec::new();

    for t in 0..k {
        let refresh = !full_queue && (t % opts.refresh_r == 0 || queue.is_empty());
        if refresh {
            sync_scores(design, &run.selected, &in_queue, &mut scores, &pending);
            pending.clear();
            queue = top_candidates(&scores, &run.selected, q);
            in_queue.iter_mut().for_each(|f| *f = false);
            for &i in &queue {
                in_queue[i] = true;
            }
        }

        let mut best: Option<(usize, f64)> = None;
        for &i in &queue {
            let s = scores[i];
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (pick, _) = best.expect("queue is non-empty while budget remains");
        let (_, w) = run.push(pick)?;
        queue.retain(|&i| i != pick);
        in_queue[pick] = false;

        let ws = w.as_slice();
        for &i in &queue {
            let a = dot(design.row(i), ws);
            scores[i] -= a * a;
        }
        if !full_queue {
            pending.extend_from_slice(ws);
        }
        debug_assert_eq!(pending.len() % p.max(1), 0);
    }
    Ok(run.into_result(mode))
}

/// Applies deferred updates to every unselected candidate outside the queue.
fn sync_scores(design: &DesignMatrix, selected: &[bool], in_queue: &[bool], scores: &mut [f64], pending: &[f64]) {
    let p = design.dim();
    if pending.is_empty() || p == 0 {
        return;
    }
    let m = pending.len() / p;
    let w = DMatrix::from_column_slice(p, m, pending);
    let n = design.n_instances();
    let mut start = 0;
    while start < n {
        let len = SYNC_BLOCK.min(n - start);
        let block = design.columns().columns(start, len);
        let prod = block.transpose() * &w;
        for j in 0..len {
            let i = start + j;
            if selected[i] || in_queue[i] {
                continue;
            }
            let mut drop = 0.0;
            for t in 0..m {
                let a = prod[(j, t)];
                drop += a * a;
            }
            scores[i] -= drop;
        }
        start += len;
    }
}

/// Top-`q` unselected candidates by score (ties to the lower index),
/// returned in ascending index order.
fn top_candidates(scores: &[f64], selected: &[bool], q: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len()).filter(|&i| !selected[i]).collect();
    let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if cand.len() > q {
        cand.select_nth_unstable_by(q - 1, by_score);
        cand.truncate(q);
    }
    cand.sort_unstable();
    cand
}

/// `n choose k`, saturating.
fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc.saturating_mul((n - j) as u128) / (j as u128 + 1);
        if acc > u128::MAX / 4 {
            return u128::MAX;
        }
    }
    acc
}

/// Exact maximizer of `J` over all size-`k` subsets, by enumeration.
///
/// The first maximizer in lexicographic order wins. Gains are reported along
/// the sorted indices.
pub fn exhaustive_opt(design: &DesignMatrix, k: usize, lambda: f64) -> Result<SelectionResult> {
    check_budget(design, k)?;
    if !(lambda > 0.0) {
        return Err(Error::input(format!("lambda must be > 0, got {lambda}")));
    }
    let n = design.n_instances();
    let count = binomial(n, k);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::input(format!(
            "exhaustive search over C({n}, {k}) = {count} subsets exceeds the limit of {EXHAUSTIVE_LIMIT}; shrink N or k"
        )));
    }
    let p = design.dim();
    // Pairwise inner products, shared by every subset.
    let kernel = design.columns().tr_mul(design.columns());
    let mut subset: Vec<usize> = (0..k).collect();
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut small = DMatrix::zeros(k, k);
    loop {
        let value = if k <= p {
            for a in 0..k {
                for b in 0..k {
                    small[(a, b)] = kernel[(subset[a], subset[b])] / lambda + if a == b { 1.0 } else { 0.0 };
                }
            }
            empty_objective(p, lambda) + spd_log_det(&small)?
        } else {
            score_subset(design, &subset, lambda)?
        };
        if best.as_ref().map_or(true, |(b, _)| value > *b) {
            best = Some((value, subset.clone()));
        }
        if !next_combination(&mut subset, n) {
            break;
        }
    }
    let (objective, indices) = best.expect("at least one subset");
    let mut run = GreedyRun::new(design, lambda, 0)?;
    for &i in &indices {
        run.add(i)?;
    }
    Ok(SelectionResult {
        gains: run.gains().to_vec(),
        indices,
        objective,
        mode: SelectionMode::Exhaustive,
    })
}

/// Advances `c` to the next `k`-combination of `0..n` in lexicographic order.
fn next_combination(c: &mut [usize], n: usize) -> bool {
    let k = c.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if c[i] < n - k + i {
            c[i] += 1;
            for j in i + 1..k {
                c[j] = c[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// `J(S)` by direct determinant evaluation.
///
/// Uses the `|S| x |S|` dual form `p log lambda + log det(I + Phi_S' Phi_S / lambda)`
/// when it is smaller than the `p x p` primal one.
pub fn score_subset(design: &DesignMatrix, indices: &[usize], lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::input(format!("lambda must be > 0, got {lambda}")));
    }
    let n = design.n_instances();
    let mut seen = vec![false; n];
    for &i in indices {
        if i >= n {
            return Err(Error::input(format!("index {i} out of range for {n} instances")));
        }
        if seen[i] {
            return Err(Error::input(format!("duplicate index {i} in subset")));
        }
        seen[i] = true;
    }
    let p = design.dim();
    let m = indices.len();
    if m == 0 {
        return Ok(empty_objective(p, lambda));
    }
    let mut x = DMatrix::zeros(p, m);
    for (c, &i) in indices.iter().enumerate() {
        x.column_mut(c).copy_from_slice(design.row(i));
    }
    if m <= p {
        let mut k = x.tr_mul(&x) / lambda;
        for d in 0..m {
            k[(d, d)] += 1.0;
        }
        Ok(empty_objective(p, lambda) + spd_log_det(&k)?)
    } else {
        let mut a = &x * x.transpose();
        for d in 0..p {
            a[(d, d)] += lambda;
        }
        spd_log_det(&a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::gaussian;
    use proptest::prelude::*;

    fn design(rows: &[&[f64]]) -> DesignMatrix {
        let p = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        DesignMatrix::from_rows(&DMatrix::from_row_slice(rows.len(), p, &flat))
    }

    fn random_design(n: usize, p: usize, seed: u64) -> DesignMatrix {
        DesignMatrix::from_rows(&gaussian(n, p, seed))
    }

    /// log det by LU, independent of the Cholesky paths above.
    fn oracle_objective(d: &DesignMatrix, s: &[usize], lambda: f64) -> f64 {
        let p = d.dim();
        let mut a = DMatrix::identity(p, p) * lambda;
        for &i in s {
            let v = DVector::from_column_slice(d.row(i));
            a += &v * v.transpose();
        }
        a.lu().determinant().ln()
    }

    #[test]
    fn orthogonal_unit_rows() {
        let d = design(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let r = greedy_exact(&d, 2, 1.0).unwrap();
        assert_eq!(r.indices, vec![0, 1]);
        for g in &r.gains {
            assert!((g - 2f64.ln()).abs() < 1e-12);
        }
        assert_eq!(r.mode, SelectionMode::ExactGreedy);
    }

    #[test]
    fn collinear_rows_larger_norm_wins() {
        let d = design(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let r = greedy_exact(&d, 1, 1.0).unwrap();
        assert_eq!(r.indices, vec![1]);
        assert!((r.gains[0] - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_direct_determinant() {
        for seed in 0..5 {
            let d = random_design(12, 4, seed);
            let r = greedy_exact(&d, 3, 0.7).unwrap();
            let direct = oracle_objective(&d, &r.indices, 0.7);
            assert!((r.objective - direct).abs() < 1e-9);
            assert!((score_subset(&d, &r.indices, 0.7).unwrap() - direct).abs() < 1e-9);
            let empty = empty_objective(4, 0.7);
            assert!((empty + r.gains.iter().sum::<f64>() - r.objective).abs() < 1e-6);
        }
    }

    #[test]
    fn budget_errors() {
        let d = random_design(5, 2, 1);
        assert!(matches!(greedy_exact(&d, 6, 1.0), Err(Error::Input(_))));
        assert!(matches!(greedy_exact(&d, 0, 1.0), Err(Error::Input(_))));
        assert!(greedy_exact(&d, 2, 0.0).is_err());
    }

    #[test]
    fn full_queue_is_bit_identical() {
        let d = random_design(300, 8, 2);
        let a = greedy_exact(&d, 40, 1.0).unwrap();
        let b = greedy_screened(&d, 40, 1.0, 300, 7).unwrap();
        let c = greedy_screened(&d, 40, 1.0, 5000, 1).unwrap();
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.gains, b.gains);
        assert_eq!(a.objective.to_bits(), c.objective.to_bits());
        assert_eq!(b.mode, SelectionMode::ScreenedGreedy);
    }

    #[test]
    fn unit_queue_refreshed_every_step_is_greedy() {
        let d = random_design(200, 6, 3);
        let a = greedy_exact(&d, 30, 1.0).unwrap();
        let b = greedy_screened(&d, 30, 1.0, 1, 1).unwrap();
        assert_eq!(a.indices, b.indices);
        for (x, y) in a.gains.iter().zip(&b.gains) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn queue_smaller_than_refresh_interval() {
        let d = random_design(100, 5, 4);
        let r = greedy_screened(&d, 20, 1.0, 3, 10).unwrap();
        let mut idx = r.indices.clone();
        idx.sort_unstable();
        idx.dedup();
        assert_eq!(idx.len(), 20);
    }

    #[test]
    fn screened_close_to_exact() {
        let d = random_design(1500, 16, 5);
        let e = greedy_exact(&d, 300, 1.0).unwrap();
        let s = greedy_screened(&d, 300, 1.0, 128, 32).unwrap();
        let base = empty_objective(16, 1.0);
        assert!(s.objective - base >= 0.999 * (e.objective - base));
    }

    #[test]
    fn sherman_morrison_tracks_fresh_inverse() {
        let d = random_design(400, 10, 6);
        let mut run = GreedyRun::new(&d, 1.0, 0).unwrap();
        for step in 1..=300 {
            let i = (0..400).filter(|&i| !run.is_selected(i)).max_by(|&a, &b| {
                run.leverage(a).total_cmp(&run.leverage(b)).then(b.cmp(&a))
            });
            run.add(i.unwrap()).unwrap();
            if step % 100 == 0 {
                let a = run.gram();
                let err = (run.inverse() * a - DMatrix::<f64>::identity(10, 10)).norm();
                assert!(err <= 1e-6, "step {step}: {err}");
            }
        }
    }

    #[test]
    fn reinversion_does_not_change_picks() {
        let d = random_design(500, 12, 7);
        let a = greedy(&d, 60, 1.0, &GreedyOptions { reinvert_every: 0, ..GreedyOptions::exact() }).unwrap();
        let b = greedy(&d, 60, 1.0, &GreedyOptions { reinvert_every: 7, ..GreedyOptions::exact() }).unwrap();
        assert_eq!(a.indices, b.indices);
        assert!((a.objective - b.objective).abs() < 1e-9);
    }

    #[test]
    fn zero_rows_gain_nothing() {
        let d = design(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let r = greedy_exact(&d, 2, 1.0).unwrap();
        assert_eq!(r.indices, vec![1, 0]);
        assert_eq!(r.gains[1], 0.0);
    }

    #[test]
    fn forced_adds_reject_repeats() {
        let d = random_design(4, 2, 8);
        let mut run = GreedyRun::new(&d, 1.0, 0).unwrap();
        run.add(2).unwrap();
        assert!(run.add(2).is_err());
        assert!(run.add(9).is_err());
    }

    #[test]
    fn exhaustive_full_set() {
        let d = random_design(6, 3, 9);
        let r = exhaustive_opt(&d, 6, 0.5).unwrap();
        assert_eq!(r.indices, vec![0, 1, 2, 3, 4, 5]);
        assert!((r.objective - oracle_objective(&d, &r.indices, 0.5)).abs() < 1e-9);
        assert_eq!(r.mode, SelectionMode::Exhaustive);
    }

    #[test]
    fn exhaustive_orthogonal_symmetry() {
        let d = design(&[&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, 0.0, 0.0], &[0.0, 0.0, 1.0, 0.0], &[0.0, 0.0, 0.0, 1.0]]);
        let lambda = 2.0;
        let r = exhaustive_opt(&d, 2, lambda).unwrap();
        assert_eq!(r.indices, vec![0, 1]);
        let expect = 4.0 * lambda.ln() + 2.0 * (1.0 + 1.0 / lambda).ln();
        assert!((r.objective - expect).abs() < 1e-12);
    }

    #[test]
    fn exhaustive_budget_enforced() {
        let d = random_design(60, 2, 10);
        match exhaustive_opt(&d, 10, 1.0) {
            Err(Error::Input(msg)) => assert!(msg.contains("shrink")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exhaustive_matches_brute_oracle() {
        let d = random_design(9, 3, 11);
        let r = exhaustive_opt(&d, 3, 1.0).unwrap();
        let mut best = f64::MIN;
        for a in 0..9 {
            for b in a + 1..9 {
                for c in b + 1..9 {
                    best = best.max(oracle_objective(&d, &[a, b, c], 1.0));
                }
            }
        }
        assert!((r.objective - best).abs() < 1e-9);
    }

    #[test]
    fn score_subset_cases() {
        let d = design(&[&[1.0, 0.0], &[0.0, 3.0], &[1.0, 1.0]]);
        assert!((score_subset(&d, &[], 2.0).unwrap() - 2.0 * 2f64.ln()).abs() < 1e-15);
        assert!((score_subset(&d, &[0], 1.0).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!(score_subset(&d, &[1, 1], 1.0).is_err());
        // primal branch (3 rows > p = 2)
        let all = score_subset(&d, &[0, 1, 2], 1.0).unwrap();
        assert!((all - oracle_objective(&d, &[0, 1, 2], 1.0)).abs() < 1e-12);
    }

    #[test]
    fn greedy_guarantee_small() {
        let bound = 1.0 - (-1.0f64).exp();
        for seed in 0..20 {
            let d = random_design(10, 3, 100 + seed);
            let g = greedy_exact(&d, 3, 1.0).unwrap();
            let o = exhaustive_opt(&d, 3, 1.0).unwrap();
            let base = empty_objective(3, 1.0);
            assert!(g.objective - base >= bound * (o.objective - base) - 1e-12);
            assert!(o.objective >= g.objective - 1e-12);
        }
    }

    #[test]
    fn mode_round_trip() {
        for m in [
            SelectionMode::ExactGreedy,
            SelectionMode::ScreenedGreedy,
            SelectionMode::Exhaustive,
            SelectionMode::Baseline("top_d".into()),
        ] {
            assert_eq!(m.to_string().parse::<SelectionMode>().unwrap(), m);
        }
        assert!("nope".parse::<SelectionMode>().is_err());
    }

    #[test]
    fn combinations_are_lexicographic() {
        let mut c = vec![0, 1];
        let mut all = vec![c.clone()];
        while next_combination(&mut c, 4) {
            all.push(c.clone());
        }
        assert_eq!(all, vec![vec![0, 1], vec![0, 2], vec![0, 3], vec![1, 2], vec![1, 3], vec![2, 3]]);
        assert_eq!(binomial(40309, 2), 40309 * 40308 / 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn diminishing_returns(seed in 0u64..10_000, s_len in 0usize..4, extra in 1usize..4, probe in 0usize..20) {
            let d = random_design(20, 5, seed);
            let t_len = s_len + extra;
            let order: Vec<usize> = (0..20).map(|j| (j * 7 + seed as usize) % 20).collect();
            let i = order[t_len + probe % (20 - t_len)];
            let mut rs = GreedyRun::new(&d, 1.0, 0).unwrap();
            let mut rt = GreedyRun::new(&d, 1.0, 0).unwrap();
            for &j in &order[..s_len] { rs.add(j).unwrap(); }
            for &j in &order[..t_len] { rt.add(j).unwrap(); }
            prop_assert!(rs.marginal_gain(i) >= rt.marginal_gain(i) - 1e-9);
        }

        #[test]
        fn greedy_invariants(seed in 0u64..10_000, k in 1usize..15) {
            let d = random_design(15, 4, seed);
            let r = greedy_exact(&d, k, 0.5).unwrap();
            let mut idx = r.indices.clone();
            idx.sort_unstable();
            idx.dedup();
            prop_assert_eq!(idx.len(), k);
            prop_assert!(r.gains.iter().all(|&g| g > -1e-12));
            prop_assert!(r.gains.windows(2).all(|w| w[0] >= w[1] - 1e-9));
            let again = greedy_exact(&d, k, 0.5).unwrap();
            prop_assert_eq!(&again, &r);
        }
    }
}
