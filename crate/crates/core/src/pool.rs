//! Instance pools, pipeline configuration and their on-disk formats.
//!
//! A pool is described by a manifest of `key: value` lines naming sibling
//! data files. Dense blocks use the matrix format: two little-endian `u64`
//! dimensions (rows, cols) followed by `rows * cols` little-endian `f32`
//! values in row-major order. Success counts and instance ids are text, one
//! per line.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;

use crate::coords::StabilizeStep;
use crate::error::{Error, Result};
use crate::select::{SelectionMode, SelectionResult};

/// Named per-instance surface statistics (length, notation density, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceFeatures {
    pub names: Vec<String>,
    /// `N x S`.
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstancePool {
    /// Raw nonnegative cluster mass, `N x F`.
    pub cluster_mass: DMatrix<f64>,
    pub success_counts: Vec<u32>,
    /// Rollouts per instance, shared by the whole pool.
    pub rollouts: u32,
    /// Gradient signatures, `N x p_g`.
    pub gradients: Option<DMatrix<f64>>,
    pub surface_features: Option<SurfaceFeatures>,
    pub instance_ids: Vec<String>,
}

impl InstancePool {
    /// Builds a pool and checks every invariant.
    pub fn new(
        cluster_mass: DMatrix<f64>,
        success_counts: Vec<u32>,
        rollouts: u32,
        gradients: Option<DMatrix<f64>>,
        surface_features: Option<SurfaceFeatures>,
        instance_ids: Vec<String>,
    ) -> Result<Self> {
        let pool = InstancePool {
            cluster_mass,
            success_counts,
            rollouts,
            gradients,
            surface_features,
            instance_ids,
        };
        pool.validate()?;
        Ok(pool)
    }

    pub fn n_instances(&self) -> usize {
        self.cluster_mass.nrows()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_mass.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_instances();
        if n == 0 || self.n_clusters() == 0 {
            return Err(Error::input("pool needs at least one instance and one cluster"));
        }
        if self.rollouts == 0 {
            return Err(Error::input("rollouts must be positive"));
        }
        check_rows("success_counts", n, self.success_counts.len())?;
        check_rows("instance_ids", n, self.instance_ids.len())?;
        for (row, &s) in self.success_counts.iter().enumerate() {
            if s > self.rollouts {
                return Err(Error::OutOfRange {
                    block: "success_counts",
                    row,
                    value: s as i64,
                    max: self.rollouts,
                });
            }
        }
        check_matrix("cluster_mass", &self.cluster_mass, true)?;
        if let Some(g) = &self.gradients {
            check_rows("gradients", n, g.nrows())?;
            check_matrix("gradients", g, false)?;
        }
        if let Some(sf) = &self.surface_features {
            check_rows("surface_features", n, sf.values.nrows())?;
            if sf.names.len() != sf.values.ncols() {
                return Err(Error::Dimension {
                    context: "surface_feature_names",
                    expected: sf.values.ncols(),
                    found: sf.names.len(),
                });
            }
            check_matrix("surface_features", &sf.values, false)?;
        }
        let mut seen = HashSet::with_capacity(n);
        for (row, id) in self.instance_ids.iter().enumerate() {
            if id.is_empty() || id.contains(char::is_whitespace) || id.contains(',') {
                return Err(Error::input(format!("row {row}: instance id {id:?} must be non-empty without whitespace or commas")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::DuplicateId {
                    row,
                    id: id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Copy of the pool with different success counts (same rollouts).
    pub fn with_success_counts(&self, s: Vec<u32>) -> Result<Self> {
        let mut p = self.clone();
        p.success_counts = s;
        p.validate()?;
        Ok(p)
    }

    /// Row `perm[i]` of `self` becomes row `i` of the result.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(perm.len(), m.ncols(), |i, j| m[(perm[i], j)]);
        InstancePool {
            cluster_mass: pick(&self.cluster_mass),
            success_counts: perm.iter().map(|&i| self.success_counts[i]).collect(),
            rollouts: self.rollouts,
            gradients: self.gradients.as_ref().map(pick),
            surface_features: self.surface_features.as_ref().map(|sf| SurfaceFeatures {
                names: sf.names.clone(),
                values: pick(&sf.values),
            }),
            instance_ids: perm.iter().map(|&i| self.instance_ids[i].clone()).collect(),
        }
    }

    pub fn index_of(&self) -> HashMap<&str, usize> {
        self.instance_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }
}

fn check_rows(block: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Dimension {
            context: block,
            expected,
            found,
        });
    }
    Ok(())
}

fn check_matrix(block: &'static str, m: &DMatrix<f64>, nonnegative: bool) -> Result<()> {
    for j in 0..m.ncols() {
        for (row, &v) in m.column(j).iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite { block, row });
            }
            if nonnegative && v < 0.0 {
                return Err(Error::Negative { block, row, value: v });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Matrix and text block files

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut buf = Vec::with_capacity(16 + 4 * m.len());
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            buf.extend_from_slice(&(m[(i, j)] as f32).to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let parse_err = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        msg,
    };
    if bytes.len() < 16 {
        return Err(parse_err("matrix file shorter than its header".into()));
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| parse_err("matrix dimensions overflow".into()))?;
    if bytes.len() - 16 != expected {
        return Err(parse_err(format!(
            "{rows}x{cols} matrix needs {expected} data bytes, found {}",
            bytes.len() - 16
        )));
    }
    let data = &bytes[16..];
    Ok(DMatrix::from_fn(rows, cols, |i, j| {
        let k = 4 * (i * cols + j);
        f32::from_le_bytes(data[k..k + 4].try_into().unwrap()) as f64
    }))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn read_counts(path: &Path) -> Result<Vec<u32>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: i64 = line.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("not an integer: {line:?}"),
        })?;
        if v < 0 || v > u32::MAX as i64 {
            return Err(Error::OutOfRange {
                block: "success_counts",
                row: out.len(),
                value: v,
                max: 0,
            });
        }
        out.push(v as u32);
    }
    Ok(out)
}

/// Parses `key<sep>value` lines, skipping blanks and `#` comments.
pub(crate) fn parse_kv(path: &Path, text: &str, sep: char) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once(sep).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg: format!("expected `key{sep} value`"),
        })?;
        out.push((lineno + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Manifest

#[derive(Debug, Default)]
struct Manifest {
    n_instances: Option<usize>,
    n_clusters: Option<usize>,
    rollouts: Option<u32>,
    cluster_mass_file: Option<PathBuf>,
    success_counts_file: Option<PathBuf>,
    gradients_file: Option<PathBuf>,
    gradients_dim: Option<usize>,
    surface_features_file: Option<PathBuf>,
    surface_feature_names: Option<Vec<String>>,
    ids_file: Option<PathBuf>,
}

pub(crate) fn parse_num<T: std::str::FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("{key}: cannot parse {v:?}"),
    })
}

/// Loads and validates the pool described by `manifest_path`. Data file paths
/// are resolved relative to the manifest's directory.
pub fn load_pool(manifest_path: &Path) -> Result<InstancePool> {
    let text = read_text(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut m = Manifest::default();
    for (line, key, value) in parse_kv(manifest_path, &text, ':')? {
        let p = manifest_path;
        match key.as_str() {
            "n_instances" => m.n_instances = Some(parse_num(p, line, &key, &value)?),
            "n_clusters" => m.n_clusters = Some(parse_num(p, line, &key, &value)?),
            "rollouts" => m.rollouts = Some(parse_num(p, line, &key, &value)?),
            "gradients_dim" => m.gradients_dim = Some(parse_num(p, line, &key, &value)?),
            "cluster_mass_file" => m.cluster_mass_file = Some(base.join(value)),
            "success_counts_file" => m.success_counts_file = Some(base.join(value)),
            "gradients_file" => m.gradients_file = Some(base.join(value)),
            "surface_features_file" => m.surface_features_file = Some(base.join(value)),
            "ids_file" => m.ids_file = Some(base.join(value)),
            "surface_feature_names" => {
                m.surface_feature_names = Some(value.split(',').map(|s| s.trim().to_string()).collect())
            }
            _ => {
                return Err(Error::Parse {
                    path: p.to_path_buf(),
                    line,
                    msg: format!("unknown manifest key {key:?}"),
                })
            }
        }
    }
    let missing = |k: &str| Error::Parse {
        path: manifest_path.to_path_buf(),
        line: 0,
        msg: format!("manifest is missing required key {k:?}"),
    };
    let n = m.n_instances.ok_or_else(|| missing("n_instances"))?;
    let f = m.n_clusters.ok_or_else(|| missing("n_clusters"))?;
    let rollouts = m.rollouts.ok_or_else(|| missing("rollouts"))?;

    let cluster_mass = read_matrix(&m.cluster_mass_file.ok_or_else(|| missing("cluster_mass_file"))?)?;
    check_rows("cluster_mass", n, cluster_mass.nrows())?;
    if cluster_mass.ncols() != f {
        return Err(Error::Dimension {
            context: "cluster_mass columns",
            expected: f,
            found: cluster_mass.ncols(),
        });
    }
    let success_counts = read_counts(&m.success_counts_file.ok_or_else(|| missing("success_counts_file"))?)?;
    let instance_ids = read_lines(&m.ids_file.ok_or_else(|| missing("ids_file"))?)?;

    let gradients = match m.gradients_file {
        Some(path) => {
            let g = read_matrix(&path)?;
            if let Some(dim) = m.gradients_dim {
                if g.ncols() != dim {
                    return Err(Error::Dimension {
                        context: "gradients_dim",
                        expected: dim,
                        found: g.ncols(),
                    });
                }
            }
            Some(g)
        }
        None => None,
    };
    let surface_features = match m.surface_features_file {
        Some(path) => {
            let values = read_matrix(&path)?;
            let names = m
                .surface_feature_names
                .unwrap_or_else(|| (0..values.ncols()).map(|j| format!("feature_{j}")).collect());
            Some(SurfaceFeatures { names, values })
        }
        None => None,
    };
    InstancePool::new(cluster_mass, success_counts, rollouts, gradients, surface_features, instance_ids)
}

/// Writes `pool` as a manifest plus sibling data files named after the
/// manifest's stem.
pub fn save_pool(pool: &InstancePool, manifest_path: &Path) -> Result<()> {
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("pool")
        .to_string();
    let name = |suffix: &str| format!("{stem}.{suffix}");

    let mut manifest = String::new();
    writeln!(manifest, "n_instances: {}", pool.n_instances()).unwrap();
    writeln!(manifest, "n_clusters: {}", pool.n_clusters()).unwrap();
    writeln!(manifest, "rollouts: {}", pool.rollouts).unwrap();

    write_matrix(&dir.join(name("mass.bin")), &pool.cluster_mass)?;
    writeln!(manifest, "cluster_mass_file: {}", name("mass.bin")).unwrap();

    let counts: String = pool.success_counts.iter().map(|s| format!("{s}\n")).collect();
    write_text(&dir.join(name("counts.txt")), &counts)?;
    writeln!(manifest, "success_counts_file: {}", name("counts.txt")).unwrap();

    let ids: String = pool.instance_ids.iter().map(|s| format!("{s}\n")).collect();
    write_text(&dir.join(name("ids.txt")), &ids)?;
    writeln!(manifest, "ids_file: {}", name("ids.txt")).unwrap();

    if let Some(g) = &pool.gradients {
        write_matrix(&dir.join(name("grad.bin")), g)?;
        writeln!(manifest, "gradients_file: {}", name("grad.bin")).unwrap();
        writeln!(manifest, "gradients_dim: {}", g.ncols()).unwrap();
    }
    if let Some(sf) = &pool.surface_features {
        write_matrix(&dir.join(name("surface.bin")), &sf.values)?;
        writeln!(manifest, "surface_features_file: {}", name("surface.bin")).unwrap();
        writeln!(manifest, "surface_feature_names: {}", sf.names.join(",")).unwrap();
    }
    write_text(manifest_path, &manifest)
}

// ---------------------------------------------------------------------------
// Selection files

pub const SELECTION_HEADER: &str = "rank,instance_id,marginal_gain";

/// Writes one `rank,instance_id,marginal_gain` row per pick in selection order,
/// followed by an `objective=` footer. A leading `# mode=` comment records how
/// the selection was produced.
pub fn save_selection(result: &SelectionResult, pool: &InstancePool, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "# mode={}", result.mode).unwrap();
    writeln!(out, "{SELECTION_HEADER}").unwrap();
    for (rank, (&idx, gain)) in result.indices.iter().zip(&result.gains).enumerate() {
        let id = pool.instance_ids.get(idx).ok_or_else(|| {
            Error::input(format!("selection index {idx} outside pool of {}", pool.n_instances()))
        })?;
        writeln!(out, "{rank},{id},{gain:?}").unwrap();
    }
    writeln!(out, "objective={:?}", result.objective).unwrap();
    write_text(path, &out)
}

/// Reads a selection file, resolving instance ids against `pool`.
pub fn load_selection(path: &Path, pool: &InstancePool) -> Result<SelectionResult> {
    let text = read_text(path)?;
    let index = pool.index_of();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut mode = SelectionMode::ExactGreedy;
    let mut indices = Vec::new();
    let mut gains = Vec::new();
    let mut objective = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let lineno = lineno + 1;
        if line.is_empty() || line == SELECTION_HEADER {
            continue;
        }
        if let Some(m) = line.strip_prefix("# mode=") {
            mode = m.parse().map_err(|e: Error| err(lineno, e.to_string()))?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if let Some(v) = line.strip_prefix("objective=") {
            objective = Some(v.parse::<f64>().map_err(|_| err(lineno, format!("bad objective {v:?}")))?);
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(err(lineno, "expected rank,instance_id,marginal_gain".into()));
        }
        let rank: usize = fields[0].parse().map_err(|_| err(lineno, format!("bad rank {:?}", fields[0])))?;
        if rank != indices.len() {
            return Err(err(lineno, format!("rank {rank} out of order")));
        }
        let idx = *index
            .get(fields[1])
            .ok_or_else(|| err(lineno, format!("unknown instance id {:?}", fields[1])))?;
        let gain: f64 = fields[2].parse().map_err(|_| err(lineno, format!("bad gain {:?}", fields[2])))?;
        indices.push(idx);
        gains.push(gain);
    }
    let objective = objective.ok_or_else(|| err(0, "missing objective= footer".into()))?;
    Ok(SelectionResult {
        indices,
        gains,
        objective,
        mode,
    })
}

// ---------------------------------------------------------------------------
// Pipeline configuration

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Ridge added to both covariances before whitening.
    pub rho: f64,
    /// Spectral shrinkage exponent.
    pub eta: f64,
    /// Eigenvalue clip bound; spectrum is clipped to `[1/c, c]`.
    pub c: f64,
    /// Ridge for residualizing gradients against the cluster coordinate.
    pub rho_g: f64,
    /// Gradient block scale; 0 gives a cluster-only design.
    pub omega: f64,
    /// Inverse-norm exponent of the gradient row weight.
    pub alpha: f64,
    /// Relative floor on gradient norms in the row weight.
    pub epsilon: f64,
    /// D-optimal regularizer.
    pub lambda: f64,
    /// Explicit budget. When absent the budget is `round(budget_frac * N)`.
    pub budget_k: Option<usize>,
    pub budget_frac: f64,
    pub queue_q: usize,
    pub refresh_r: usize,
    /// Picks between exact re-inversions of the running Gram matrix; 0 disables.
    pub reinvert_every: usize,
    pub stabilize_order: [StabilizeStep; 3],
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rho: 0.1,
            eta: 0.5,
            c: 2.0,
            rho_g: 1e-3,
            omega: 1.0,
            alpha: 1.0,
            epsilon: 1e-3,
            lambda: 1.0,
            budget_k: None,
            budget_frac: 0.2,
            queue_q: 1024,
            refresh_r: 256,
            reinvert_every: 512,
            stabilize_order: StabilizeStep::DEFAULT_ORDER,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Checks parameter ranges that do not depend on the pool.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.rho > 0.0) {
            return bad("rho must be > 0");
        }
        if !(self.c >= 1.0) {
            return bad("c must be >= 1");
        }
        if !self.eta.is_finite() {
            return bad("eta must be finite");
        }
        if !(self.rho_g > 0.0) {
            return bad("rho_g must be > 0");
        }
        if !(self.omega >= 0.0) {
            return bad("omega must be >= 0");
        }
        if !(self.alpha >= 0.0) {
            return bad("alpha must be >= 0");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be > 0");
        }
        if !(self.budget_frac > 0.0 && self.budget_frac <= 1.0) {
            return bad("budget_frac must be in (0, 1]");
        }
        if self.budget_k == Some(0) {
            return bad("budget_k must be >= 1");
        }
        if self.queue_q == 0 || self.refresh_r == 0 {
            return bad("queue_q and refresh_r must be >= 1");
        }
        let mut order = self.stabilize_order.to_vec();
        order.sort();
        order.dedup();
        if order.len() != 3 {
            return bad("stabilize_order must list each step once");
        }
        Ok(())
    }

    /// Budget `K` for a pool of `n` instances; errors if it exceeds `n`.
    pub fn budget(&self, n: usize) -> Result<usize> {
        let k = match self.budget_k {
            Some(k) => k,
            None => ((self.budget_frac * n as f64).round() as usize).max(1),
        };
        if k == 0 || k > n {
            return Err(Error::config(format!("budget {k} must be in [1, {n}]")));
        }
        Ok(k)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (line, key, value) in parse_kv(path, text, '=')? {
            let p = path;
            match key.as_str() {
                "rho" => cfg.rho = parse_num(p, line, &key, &value)?,
                "eta" => cfg.eta = parse_num(p, line, &key, &value)?,
                "c" => cfg.c = parse_num(p, line, &key, &value)?,
                "rho_g" => cfg.rho_g = parse_num(p, line, &key, &value)?,
                "omega" => cfg.omega = parse_num(p, line, &key, &value)?,
                "alpha" => cfg.alpha = parse_num(p, line, &key, &value)?,
                "epsilon" => cfg.epsilon = parse_num(p, line, &key, &value)?,
                "lambda" => cfg.lambda = parse_num(p, line, &key, &value)?,
                "budget_k" => cfg.budget_k = Some(parse_num(p, line, &key, &value)?),
                "budget_frac" => cfg.budget_frac = parse_num(p, line, &key, &value)?,
                "queue_q" => cfg.queue_q = parse_num(p, line, &key, &value)?,
                "refresh_r" => cfg.refresh_r = parse_num(p, line, &key, &value)?,
                "reinvert_every" => cfg.reinvert_every = parse_num(p, line, &key, &value)?,
                "seed" => cfg.seed = parse_num(p, line, &key, &value)?,
                "stabilize_order" => {
                    let steps: Vec<StabilizeStep> = value
                        .split(',')
                        .map(|s| s.trim().parse())
                        .collect::<Result<_>>()
                        .map_err(|e| Error::Parse {
                            path: p.to_path_buf(),
                            line,
                            msg: e.to_string(),
                        })?;
                    cfg.stabilize_order = steps.try_into().map_err(|_| Error::Parse {
                        path: p.to_path_buf(),
                        line,
                        msg: "stabilize_order needs exactly three steps".into(),
                    })?;
                }
                _ => {
                    return Err(Error::Parse {
                        path: p.to_path_buf(),
                        line,
                        msg: format!("unknown config key {key:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    /// `key=value` text that [`PipelineConfig::parse`] reads back unchanged.
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        kv.insert("rho", format!("{:?}", self.rho));
        kv.insert("eta", format!("{:?}", self.eta));
        kv.insert("c", format!("{:?}", self.c));
        kv.insert("rho_g", format!("{:?}", self.rho_g));
        kv.insert("omega", format!("{:?}", self.omega));
        kv.insert("alpha", format!("{:?}", self.alpha));
        kv.insert("epsilon", format!("{:?}", self.epsilon));
        kv.insert("lambda", format!("{:?}", self.lambda));
        if let Some(k) = self.budget_k {
            kv.insert("budget_k", k.to_string());
        }
        kv.insert("budget_frac", format!("{:?}", self.budget_frac));
        kv.insert("queue_q", self.queue_q.to_string());
        kv.insert("refresh_r", self.refresh_r.to_string());
        kv.insert("reinvert_every", self.reinvert_every.to_string());
        kv.insert(
            "stabilize_order",
            self.stabilize_order.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","),
        );
        kv.insert("seed", self.seed.to_string());
        kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}
