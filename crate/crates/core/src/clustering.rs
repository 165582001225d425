//! Cluster basis over sparse latent activations, and the BatchTopK mask.
//!
//! Latents inside a firing-frequency band are embedded by two halves: a
//! presence half from their nearest co-activating neighbors, and a residual
//! half from the part of their activation mass those neighbors do not
//! predict. Spherical k-means on the embedding groups latents into `F`
//! clusters, and an instance's coordinate on cluster `f` is the summed
//! activation of its latents.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sym_eig, SymMatrix};
use crate::pool::{read_matrix, write_matrix};
use crate::rng::{Domain, SeedTree};

/// Sparse nonnegative `N x D` activation matrix, stored by latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentActivations {
    n_instances: usize,
    /// Per latent: `(instance, value)` sorted by instance, values > 0.
    columns: Vec<Vec<(usize, f64)>>,
}

impl LatentActivations {
    /// Builds from `(instance, latent, value)` triplets. Zero values are
    /// dropped; repeated coordinates are an error.
    pub fn from_triplets(n_instances: usize, n_latents: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut columns = vec![Vec::new(); n_latents];
        for (row, &(i, l, v)) in triplets.iter().enumerate() {
            if i >= n_instances || l >= n_latents {
                return Err(Error::input(format!(
                    "triplet {row}: ({i}, {l}) outside {n_instances} x {n_latents}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::NonFinite { block: "activations", row });
            }
            if v < 0.0 {
                return Err(Error::Negative {
                    block: "activations",
                    row,
                    value: v,
                });
            }
            if v > 0.0 {
                columns[l].push((i, v));
            }
        }
        for (l, col) in columns.iter_mut().enumerate() {
            col.sort_by_key(|&(i, _)| i);
            if let Some(w) = col.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::input(format!("repeated entry ({}, {l})", w[0].0)));
            }
        }
        Ok(LatentActivations { n_instances, columns })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Result<Self> {
        let mut t = Vec::new();
        for l in 0..m.ncols() {
            for i in 0..m.nrows() {
                if m[(i, l)] != 0.0 {
                    t.push((i, l, m[(i, l)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &t)
    }

    pub fn n_instances(&self) -> usize {
        self.n_instances
    }

    pub fn n_latents(&self) -> usize {
        self.columns.len()
    }

    pub fn nnz(&self) -> usize {
        self.columns.iter().map(Vec::len).sum()
    }

    /// Nonzero entries of latent `l`.
    pub fn column(&self, l: usize) -> &[(usize, f64)] {
        &self.columns[l]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_instances, self.n_latents());
        for (l, col) in self.columns.iter().enumerate() {
            for &(i, v) in col {
                m[(i, l)] = v;
            }
        }
        m
    }
}

/// Reads the sparse text format: a header line `N D nnz`, then `nnz` lines
/// `i l value`. Lines starting with `#` are ignored.
pub fn read_activations(path: &Path) -> Result<LatentActivations> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| perr(hline, format!("bad header: {e}")))?;
    if dims.len() != 3 {
        return Err(perr(hline, "header must be `N D nnz`".into()));
    }
    let mut triplets = Vec::with_capacity(dims[2]);
    for (lineno, line) in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(perr(lineno, "expected `i l value`".into()));
        }
        let i = parts[0].parse::<usize>().map_err(|e| perr(lineno, e.to_string()))?;
        let l = parts[1].parse::<usize>().map_err(|e| perr(lineno, e.to_string()))?;
        let v = parts[2].parse::<f64>().map_err(|e| perr(lineno, e.to_string()))?;
        triplets.push((i, l, v));
    }
    if triplets.len() != dims[2] {
        return Err(perr(hline, format!("header declares {} entries, found {}", dims[2], triplets.len())));
    }
    LatentActivations::from_triplets(dims[0], dims[1], &triplets)
}

pub fn write_activations(acts: &LatentActivations, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {} {}", acts.n_instances, acts.n_latents(), acts.nnz()).unwrap();
    for (l, col) in acts.columns.iter().enumerate() {
        for &(i, v) in col {
            writeln!(out, "{i} {l} {v:?}").unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Keeps the `B k` largest entries of the batch and zeros the rest.
///
/// Ties at the cutoff keep the entry earliest in `(row, column)` order.
pub fn batch_topk_mask(pre_acts: &DMatrix<f64>, k: usize) -> Result<DMatrix<f64>> {
    let (b, d) = pre_acts.shape();
    if k == 0 {
        return Err(Error::input("BatchTopK needs k >= 1"));
    }
    if k > d {
        return Err(Error::input(format!("BatchTopK k = {k} exceeds width {d}")));
    }
    let mut entries = Vec::new();
    for r in 0..b {
        for c in 0..d {
            let v = pre_acts[(r, c)];
            if !v.is_finite() {
                return Err(Error::NonFinite { block: "pre_acts", row: r });
            }
            if v < 0.0 {
                return Err(Error::Negative {
                    block: "pre_acts",
                    row: r,
                    value: v,
                });
            }
            if v > 0.0 {
                entries.push((v, r, c));
            }
        }
    }
    entries.sort_by(|x, y| y.0.total_cmp(&x.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut out = DMatrix::zeros(b, d);
    for &(v, r, c) in entries.iter().take(b * k) {
        out[(r, c)] = v;
    }
    Ok(out)
}

/// Latents whose firing rate `#{i : f_il > 0} / N` lies in `[min_freq, max_freq]`.
pub fn frequency_filter(acts: &LatentActivations, min_freq: f64, max_freq: f64) -> Result<Vec<usize>> {
    if !(0.0 <= min_freq && min_freq < max_freq && max_freq <= 1.0) {
        return Err(Error::config(format!("frequency band [{min_freq}, {max_freq}] is invalid")));
    }
    let n = acts.n_instances as f64;
    Ok((0..acts.n_latents())
        .filter(|&l| {
            let rate = acts.column(l).len() as f64 / n;
            rate >= min_freq && rate <= max_freq
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// One unit row per kept latent, `2 * half_dim` wide.
    pub rows: DMatrix<f64>,
    /// Positions (into `kept`) whose presence vector was zero.
    pub flagged: Vec<usize>,
}

/// Builds the presence-plus-residual embedding of the kept latents.
pub fn build_embedding(
    acts: &LatentActivations,
    kept: &[usize],
    n_neighbors: usize,
    half_dim: usize,
    ridge: f64,
) -> Result<Embedding> {
    let kk = kept.len();
    if kk == 0 {
        return Err(Error::input("no latents to embed"));
    }
    if n_neighbors >= kk {
        return Err(Error::input(format!("n_neighbors = {n_neighbors} must be below the {kk} kept latents")));
    }
    if half_dim == 0 {
        return Err(Error::input("embedding half dimension must be positive"));
    }
    let n = acts.n_instances();

    // Kept latents present on each instance.
    let mut present: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (a, &l) in kept.iter().enumerate() {
        for &(i, _) in acts.column(l) {
            present[i].push(a);
        }
    }
    let counts: Vec<f64> = kept.iter().map(|&l| acts.column(l).len() as f64).collect();

    // Sparse presence-similarity rows: self plus the nearest neighbors.
    let mut sim_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(kk);
    let mut co = vec![0.0f64; kk];
    for (a, &l) in kept.iter().enumerate() {
        co.iter_mut().for_each(|c| *c = 0.0);
        for &(i, _) in acts.column(l) {
            for &b in &present[i] {
                co[b] += 1.0;
            }
        }
        let mut cand: Vec<(usize, f64)> = (0..kk)
            .filter(|&b| b != a && co[b] > 0.0)
            .map(|b| (b, co[b] / (counts[a] * counts[b]).sqrt()))
            .collect();
        cand.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        cand.truncate(n_neighbors);
        let mut row = Vec::with_capacity(cand.len() + 1);
        if counts[a] > 0.0 {
            row.push((a, 1.0));
        }
        row.extend(cand);
        sim_rows.push(row);
    }
    let flagged: Vec<usize> = (0..kk).filter(|&a| sim_rows[a].is_empty()).collect();

    let mut sim = DMatrix::zeros(kk, kk);
    for (a, row) in sim_rows.iter().enumerate() {
        for &(b, v) in row {
            sim[(a, b)] = v;
        }
    }
    let presence = unit_rows(pca_scores(&sim, half_dim)?);

    // Residual half: the mass not explained by neighbor presence.
    let mut resid = DMatrix::zeros(kk, n);
    let mut x = vec![0.0f64; n];
    let mut r = vec![0.0f64; n];
    for (a, &l) in kept.iter().enumerate() {
        x.iter_mut().for_each(|v| *v = 0.0);
        r.iter_mut().for_each(|v| *v = 0.0);
        for &(i, v) in acts.column(l) {
            x[i] = v;
        }
        for &(b, w) in sim_rows[a].iter().filter(|&&(b, _)| b != a) {
            for &(i, _) in acts.column(kept[b]) {
                r[i] += w;
            }
        }
        let rx: f64 = r.iter().zip(&x).map(|(p, q)| p * q).sum();
        let rr: f64 = r.iter().map(|p| p * p).sum();
        let beta = rx / (rr + ridge);
        for i in 0..n {
            resid[(a, i)] = x[i] - beta * r[i];
        }
    }
    let residual = unit_rows(pca_scores(&resid, half_dim)?);

    let mut rows = DMatrix::zeros(kk, 2 * half_dim);
    rows.columns_mut(0, half_dim).copy_from(&presence);
    rows.columns_mut(half_dim, half_dim).copy_from(&residual);
    Ok(Embedding {
        rows: unit_rows(rows),
        flagged,
    })
}

/// Uncentered principal scores of the rows of `m` on its top `dim` axes,
/// zero padded when `m` has fewer axes.
fn pca_scores(m: &DMatrix<f64>, dim: usize) -> Result<DMatrix<f64>> {
    let rows = m.nrows();
    // Row-space eigenvectors of m m' scaled by the singular values are the
    // scores, whichever side is smaller.
    let gram = SymMatrix::symmetrize(m * m.transpose());
    let eig = sym_eig(&gram)?;
    let mut out = DMatrix::zeros(rows, dim);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    for k in 0..dim.min(rows) {
        let l = eig.eigenvalues[k];
        if l <= 1e-12 * top.max(f64::MIN_POSITIVE) {
            break;
        }
        out.set_column(k, &(eig.eigenvectors.column(k) * l.sqrt()));
    }
    Ok(out)
}

fn unit_rows(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        let nm = m.row(i).norm();
        if nm > 0.0 {
            m.row_mut(i).unscale_mut(nm);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// `F x dim` unit rows.
    pub centers: DMatrix<f64>,
    /// Cluster of each input row.
    pub labels: Vec<usize>,
}

/// Mean cosine between each row and its assigned center.
pub fn kmeans_objective(rows: &DMatrix<f64>, fit: &KMeansFit) -> f64 {
    let n = rows.nrows();
    (0..n).map(|i| rows.row(i).dot(&fit.centers.row(fit.labels[i]))).sum::<f64>() / n as f64
}

/// Spherical k-means on unit rows.
///
/// Centers are seeded with a random first row and then farthest-point
/// picks. When `batch` covers every row each iteration is a full Lloyd step;
/// otherwise each iteration processes one sampled mini-batch with
/// per-center learning rates `1 / count`.
pub fn spherical_kmeans(rows: &DMatrix<f64>, f: usize, iters: usize, batch: usize, seed: u64) -> Result<KMeansFit> {
    let (n, dim) = rows.shape();
    if f == 0 || f > n {
        return Err(Error::input(format!("cannot fit {f} clusters to {n} rows")));
    }
    if batch == 0 {
        return Err(Error::input("k-means batch must be positive"));
    }
    let tree = SeedTree::new(seed);
    let mut rng = tree.stream(Domain::KMeans, 1);
    let rows_t = rows.transpose();

    let first = rng.gen_range(0..n);
    let mut used = vec![false; n];
    used[first] = true;
    let mut chosen = vec![first];
    let mut best: Vec<f64> = (0..n).map(|j| rows.row(j).dot(&rows.row(first))).collect();
    while chosen.len() < f {
        let next = (0..n)
            .filter(|&j| !used[j])
            .min_by(|&a, &b| best[a].total_cmp(&best[b]).then(a.cmp(&b)))
            .expect("f <= n");
        used[next] = true;
        chosen.push(next);
        for j in 0..n {
            best[j] = best[j].max(rows.row(j).dot(&rows.row(next)));
        }
    }
    let mut centers = DMatrix::zeros(f, dim);
    for (c, &j) in chosen.iter().enumerate() {
        centers.set_row(c, &rows.row(j));
    }

    if batch >= n {
        for _ in 0..iters {
            let (labels, sims) = assign(&centers, &rows_t);
            let mut sums = DMatrix::zeros(f, dim);
            let mut counts = vec![0usize; f];
            for i in 0..n {
                counts[labels[i]] += 1;
                let mut r = sums.row_mut(labels[i]);
                r += rows.row(i);
            }
            reseed_empty(&mut sums, &counts, rows, &sims);
            centers = unit_rows(sums);
        }
    } else {
        let mut counts = vec![0usize; f];
        for it in 0..iters {
            let mut brng = tree.stream(Domain::KMeans, 2 + it as u64);
            let mut idx = sample(&mut brng, n, batch).into_vec();
            idx.sort_unstable();
            let mut sub = DMatrix::zeros(dim, idx.len());
            for (c, &i) in idx.iter().enumerate() {
                sub.set_column(c, &rows.row(i).transpose());
            }
            let (labels, sims) = assign(&centers, &sub);
            for (c, &i) in idx.iter().enumerate() {
                let k = labels[c];
                counts[k] += 1;
                let eta = 1.0 / counts[k] as f64;
                let updated = centers.row(k) * (1.0 - eta) + rows.row(i) * eta;
                centers.set_row(k, &updated);
                let nm = centers.row(k).norm();
                if nm > 0.0 {
                    centers.row_mut(k).unscale_mut(nm);
                }
            }
            // Centers that have never won a point move to the batch's worst-fit rows.
            let mut order: Vec<usize> = (0..idx.len()).collect();
            order.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)));
            let mut order = order.into_iter();
            for k in 0..f {
                if counts[k] == 0 {
                    if let Some(c) = order.next() {
                        centers.set_row(k, &rows.row(idx[c]));
                    }
                }
            }
        }
    }
    let (labels, _) = assign(&centers, &rows_t);
    Ok(KMeansFit { centers, labels })
}

/// Max-cosine assignment of the columns of `cols_t`, ties to the lower center.
fn assign(centers: &DMatrix<f64>, cols_t: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let sims = centers * cols_t;
    let m = cols_t.ncols();
    let mut labels = vec![0; m];
    let mut best = vec![f64::NEG_INFINITY; m];
    for j in 0..m {
        for c in 0..centers.nrows() {
            if sims[(c, j)] > best[j] {
                best[j] = sims[(c, j)];
                labels[j] = c;
            }
        }
    }
    (labels, best)
}

fn reseed_empty(sums: &mut DMatrix<f64>, counts: &[usize], rows: &DMatrix<f64>, sims: &[f64]) {
    if counts.iter().all(|&c| c > 0) {
        return;
    }
    let mut order: Vec<usize> = (0..rows.nrows()).collect();
    order.sort_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)));
    let mut order = order.into_iter();
    for (k, &c) in counts.iter().enumerate() {
        if c == 0 {
            let j = order.next().expect("more rows than clusters");
            sums.set_row(k, &rows.row(j));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub min_freq: f64,
    pub max_freq: f64,
    pub n_neighbors: usize,
    pub half_dim: usize,
    pub ridge: f64,
    pub n_clusters: usize,
    pub iters: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            min_freq: 0.01,
            max_freq: 0.80,
            n_neighbors: 32,
            half_dim: 64,
            ridge: 1e-3,
            n_clusters: 256,
            iters: 20,
            batch: 8192,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    /// Cluster per latent, `-1` outside the frequency band.
    pub labels: Vec<i64>,
    pub n_clusters: usize,
    /// `F x embed_dim` unit rows.
    pub centers: DMatrix<f64>,
    /// Embedding of the kept latents, in `kept` order. Empty after loading.
    pub embedding: DMatrix<f64>,
    pub kept: Vec<usize>,
}

/// Frequency filter, embedding and spherical k-means in one pass.
pub fn fit_cluster_model(acts: &LatentActivations, cfg: &ClusterConfig) -> Result<ClusterModel> {
    let kept = frequency_filter(acts, cfg.min_freq, cfg.max_freq)?;
    let emb = build_embedding(acts, &kept, cfg.n_neighbors, cfg.half_dim, cfg.ridge)?;
    let fit = spherical_kmeans(&emb.rows, cfg.n_clusters, cfg.iters, cfg.batch, cfg.seed)?;
    let mut labels = vec![-1i64; acts.n_latents()];
    for (a, &l) in kept.iter().enumerate() {
        labels[l] = fit.labels[a] as i64;
    }
    Ok(ClusterModel {
        labels,
        n_clusters: cfg.n_clusters,
        centers: fit.centers,
        embedding: emb.rows,
        kept,
    })
}

/// `m_if = sum of f_il over latents l in cluster f`.
pub fn cluster_mass(acts: &LatentActivations, model: &ClusterModel) -> Result<DMatrix<f64>> {
    if model.labels.len() != acts.n_latents() {
        return Err(Error::Dimension {
            context: "cluster labels",
            expected: acts.n_latents(),
            found: model.labels.len(),
        });
    }
    let mut m = DMatrix::zeros(acts.n_instances(), model.n_clusters);
    for (l, &label) in model.labels.iter().enumerate() {
        if label < 0 {
            continue;
        }
        let f = label as usize;
        if f >= model.n_clusters {
            return Err(Error::input(format!("latent {l} has label {label} >= {}", model.n_clusters)));
        }
        for &(i, v) in acts.column(l) {
            m[(i, f)] += v;
        }
    }
    Ok(m)
}

fn centers_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".centers.bin");
    PathBuf::from(s)
}

/// Writes labels as text (header `n_latents n_clusters`, one label per line)
/// and the centers next to it as `<path>.centers.bin`.
pub fn save_cluster_model(model: &ClusterModel, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {}", model.labels.len(), model.n_clusters).unwrap();
    for l in &model.labels {
        writeln!(out, "{l}").unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))?;
    write_matrix(&centers_path(path), &model.centers)
}

pub fn load_cluster_model(path: &Path) -> Result<ClusterModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| perr(1, format!("bad header: {e}")))?;
    if dims.len() != 2 {
        return Err(perr(1, "header must be `n_latents n_clusters`".into()));
    }
    let mut labels = Vec::with_capacity(dims[0]);
    for (n, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line.parse().map_err(|e| perr(n + 1, format!("{e}")))?;
        if v < -1 || v >= dims[1] as i64 {
            return Err(perr(n + 1, format!("label {v} outside [-1, {})", dims[1])));
        }
        labels.push(v);
    }
    if labels.len() != dims[0] {
        return Err(perr(1, format!("expected {} labels, found {}", dims[0], labels.len())));
    }
    let centers = read_matrix(&centers_path(path))?;
    let kept = (0..labels.len()).filter(|&l| labels[l] >= 0).collect();
    Ok(ClusterModel {
        labels,
        n_clusters: dims[1],
        embedding: DMatrix::zeros(0, centers.ncols()),
        centers,
        kept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::testutil::gaussian;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn topk_examples() {
        let x = DMatrix::from_row_slice(2, 3, &[5.0, 1.0, 0.0, 4.0, 3.0, 2.0]);
        let m = batch_topk_mask(&x, 1).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[5.0, 0.0, 0.0, 4.0, 0.0, 0.0]));
        let one = DMatrix::from_row_slice(1, 4, &[0.3, 2.0, 0.1, 9.0]);
        assert_eq!(batch_topk_mask(&one, 4).unwrap(), one);
        let flat = DMatrix::from_element(3, 3, 1.5);
        let m = batch_topk_mask(&flat, 1).unwrap();
        assert_eq!(m, DMatrix::from_row_slice(3, 3, &[1.5, 1.5, 1.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn topk_errors() {
        let x = DMatrix::from_element(2, 2, 1.0);
        assert!(batch_topk_mask(&x, 0).is_err());
        assert!(batch_topk_mask(&x, 3).is_err());
        let neg = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert!(matches!(batch_topk_mask(&neg, 1), Err(Error::Negative { .. })));
    }

    #[test]
    fn band_filter() {
        let n = 1000;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, 0, 1.0)); // always fires
        }
        for i in 0..10 {
            t.push((i, 1, 0.5)); // exactly 1%
        }
        let acts = LatentActivations::from_triplets(n, 3, &t).unwrap();
        assert_eq!(frequency_filter(&acts, 0.01, 0.8).unwrap(), vec![1]);
        assert!(frequency_filter(&acts, 0.5, 0.5).is_err());
    }

    fn random_acts(n: usize, d: usize, density: f64, seed: u64) -> LatentActivations {
        let mut rng = SeedTree::new(seed).stream(Domain::Test, 0);
        let mut t = Vec::new();
        for i in 0..n {
            for l in 0..d {
                if rng.gen::<f64>() < density {
                    t.push((i, l, rng.gen::<f64>() + 0.01));
                }
            }
        }
        LatentActivations::from_triplets(n, d, &t).unwrap()
    }

    #[test]
    fn embedding_rows_are_unit() {
        let acts = random_acts(200, 40, 0.1, 1);
        let kept: Vec<usize> = (0..40).collect();
        let e = build_embedding(&acts, &kept, 8, 6, 1e-3).unwrap();
        assert!(e.flagged.is_empty());
        for i in 0..40 {
            assert!((e.rows.row(i).norm() - 1.0).abs() < 1e-8);
        }
        assert!(build_embedding(&acts, &kept, 40, 6, 1e-3).is_err());
    }

    #[test]
    fn duplicate_latents_embed_identically() {
        let mut dense = random_acts(150, 20, 0.15, 2).to_dense();
        let c = dense.column(3).into_owned();
        dense.set_column(11, &c);
        let acts = LatentActivations::from_dense(&dense).unwrap();
        let kept: Vec<usize> = (0..20).collect();
        let e = build_embedding(&acts, &kept, 5, 4, 1e-3).unwrap();
        assert!((e.rows.row(3) - e.rows.row(11)).amax() < 1e-8);
    }

    #[test]
    fn disjoint_supports_are_orthogonal_in_presence_half() {
        // latents 0..10 fire on instances 0..100, latents 10..20 on 100..200
        let mut rng = SeedTree::new(3).stream(Domain::Test, 0);
        let mut t = Vec::new();
        for l in 0..20 {
            let base = if l < 10 { 0 } else { 100 };
            for i in base..base + 100 {
                if rng.gen::<f64>() < 0.3 {
                    t.push((i, l, 1.0 + rng.gen::<f64>()));
                }
            }
        }
        let acts = LatentActivations::from_triplets(200, 20, &t).unwrap();
        let kept: Vec<usize> = (0..20).collect();
        let h = 6;
        let e = build_embedding(&acts, &kept, 4, h, 1e-3).unwrap();
        for a in 0..10 {
            for b in 10..20 {
                let pa = e.rows.row(a).columns(0, h).into_owned();
                let pb = e.rows.row(b).columns(0, h).into_owned();
                let cos = pa.dot(&pb) / (pa.norm() * pb.norm());
                assert!(cos.abs() < 1e-6, "{a} {b} {cos}");
            }
        }
    }

    #[test]
    fn flagged_zero_presence() {
        let acts = LatentActivations::from_triplets(10, 3, &[(0, 0, 1.0), (1, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let e = build_embedding(&acts, &[0, 1, 2], 1, 2, 1e-3).unwrap();
        assert_eq!(e.flagged, vec![2]);
        assert_eq!(e.rows.row(2).norm(), 0.0);
    }

    fn unit_gaussian_rows(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        unit_rows(gaussian(n, d, seed))
    }

    #[test]
    fn kmeans_f_equals_rows() {
        let rows = unit_gaussian_rows(12, 5, 4);
        let fit = spherical_kmeans(&rows, 12, 5, 100, 0).unwrap();
        let mut l = fit.labels.clone();
        l.sort_unstable();
        l.dedup();
        assert_eq!(l.len(), 12);
        assert!((kmeans_objective(&rows, &fit) - 1.0).abs() < 1e-12);
        assert!(spherical_kmeans(&rows, 13, 5, 100, 0).is_err());
    }

    #[test]
    fn kmeans_recovers_antipodal_bundles() {
        let noise = gaussian(60, 4, 5);
        let mut rows = DMatrix::zeros(60, 4);
        for i in 0..60 {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            rows[(i, 0)] = sign;
            for j in 0..4 {
                rows[(i, j)] += 0.1 * noise[(i, j)];
            }
        }
        let rows = unit_rows(rows);
        for batch in [16, 1000] {
            let fit = spherical_kmeans(&rows, 2, 20, batch, 7).unwrap();
            for i in 0..60 {
                assert_eq!(fit.labels[i] == fit.labels[0], i % 2 == 0, "batch {batch}");
            }
            for c in 0..2 {
                assert!((fit.centers.row(c).norm() - 1.0).abs() < 1e-8);
            }
            assert_eq!(fit, spherical_kmeans(&rows, 2, 20, batch, 7).unwrap());
        }
    }

    #[test]
    fn full_batch_objective_is_monotone() {
        let rows = unit_gaussian_rows(80, 6, 6);
        let mut prev = f64::NEG_INFINITY;
        for it in 0..10 {
            let fit = spherical_kmeans(&rows, 5, it, 80, 3).unwrap();
            let obj = kmeans_objective(&rows, &fit);
            assert!(obj >= prev - 1e-12, "iteration {it}");
            prev = obj;
        }
    }

    #[test]
    fn mass_aggregation() {
        let acts = random_acts(30, 12, 0.3, 8);
        let dense = acts.to_dense();
        let model = |labels: Vec<i64>, f: usize| ClusterModel {
            kept: (0..labels.len()).filter(|&l| labels[l] >= 0).collect(),
            labels,
            n_clusters: f,
            centers: DMatrix::zeros(f, 2),
            embedding: DMatrix::zeros(0, 2),
        };
        let none = cluster_mass(&acts, &model(vec![-1; 12], 3)).unwrap();
        assert_eq!(none, DMatrix::zeros(30, 3));

        let perm: Vec<i64> = (0..12).map(|l| ((l * 5) % 12) as i64).collect();
        let m = cluster_mass(&acts, &model(perm.clone(), 12)).unwrap();
        for l in 0..12 {
            assert_eq!(m.column(perm[l] as usize), dense.column(l));
        }

        let labels: Vec<i64> = (0..12).map(|l| if l % 4 == 0 { -1 } else { (l % 3) as i64 }).collect();
        let m = cluster_mass(&acts, &model(labels.clone(), 3)).unwrap();
        for i in 0..30 {
            let kept: f64 = (0..12).filter(|&l| labels[l] >= 0).map(|l| dense[(i, l)]).sum();
            let all: f64 = dense.row(i).sum();
            assert!((m.row(i).sum() - kept).abs() < 1e-12);
            assert!(m.row(i).sum() <= all + 1e-12);
        }
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let acts = random_acts(50, 30, 0.2, 9);
        let p = dir.path().join("acts.txt");
        write_activations(&acts, &p).unwrap();
        assert_eq!(read_activations(&p).unwrap(), acts);

        let cfg = ClusterConfig {
            n_neighbors: 4,
            half_dim: 4,
            n_clusters: 5,
            ..ClusterConfig::default()
        };
        let model = fit_cluster_model(&acts, &cfg).unwrap();
        let mp = dir.path().join("model.txt");
        save_cluster_model(&model, &mp).unwrap();
        let back = load_cluster_model(&mp).unwrap();
        assert_eq!(back.labels, model.labels);
        assert_eq!(back.kept, model.kept);
        assert!((back.centers - &model.centers).amax() < 1e-6);
    }

    #[test]
    fn activation_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, "2 2 2\n0 0 1.0\n").unwrap();
        assert!(matches!(read_activations(&p), Err(Error::Parse { .. })));
        fs::write(&p, "2 2 1\n0 5 1.0\n").unwrap();
        assert!(read_activations(&p).is_err());
        fs::write(&p, "2 2 1\n0 1 -1.0\n").unwrap();
        assert!(matches!(read_activations(&p), Err(Error::Negative { .. })));
    }

    /// All `B k` largest entries by brute force: rank every positive entry
    /// against every other and keep those with fewer than `B k` entries ahead.
    fn brute_topk(x: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let (b, d) = x.shape();
        let mut out = DMatrix::zeros(b, d);
        for r in 0..b {
            for c in 0..d {
                let v = x[(r, c)];
                if v <= 0.0 {
                    continue;
                }
                let ahead = (0..b)
                    .flat_map(|r2| (0..d).map(move |c2| (r2, c2)))
                    .filter(|&(r2, c2)| {
                        let w = x[(r2, c2)];
                        w > v || (w == v && (r2, c2) < (r, c))
                    })
                    .count();
                if ahead < b * k {
                    out[(r, c)] = v;
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn topk_matches_brute_force(
            b in 1usize..5, d in 1usize..6, k_raw in 1usize..6,
            vals in proptest::collection::vec(0u8..5, 30)
        ) {
            let k = 1 + (k_raw - 1) % d;
            let x = DMatrix::from_fn(b, d, |r, c| vals[r * d + c] as f64 * 0.5);
            let m = batch_topk_mask(&x, k).unwrap();
            prop_assert_eq!(&m, &brute_topk(&x, k));
            let nnz = x.iter().filter(|&&v| v > 0.0).count();
            prop_assert_eq!(m.iter().filter(|&&v| v > 0.0).count(), nnz.min(b * k));
        }

        #[test]
        fn cluster_mass_conserves_kept(seed in 0u64..500, f in 1usize..5) {
            let acts = random_acts(15, 10, 0.3, seed);
            let labels: Vec<i64> = (0..10).map(|l| if (l as u64 + seed) % 3 == 0 { -1 } else { ((l as u64 * 7 + seed) % f as u64) as i64 }).collect();
            let model = ClusterModel {
                kept: (0..10).filter(|&l| labels[l] >= 0).collect(),
                labels: labels.clone(),
                n_clusters: f,
                centers: DMatrix::zeros(f, 1),
                embedding: DMatrix::zeros(0, 1),
            };
            let m = cluster_mass(&acts, &model).unwrap();
            let dense = acts.to_dense();
            for i in 0..15 {
                let kept: f64 = (0..10).filter(|&l| labels[l] >= 0).map(|l| dense[(i, l)]).sum();
                prop_assert!((m.row(i).sum() - kept).abs() <= 1e-12 * kept.max(1.0));
            }
        }
    }
}
