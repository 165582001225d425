//! Synthetic pools with planted structure, and the end-to-end pipeline.
//!
//! Each synthetic instance is dominated by one of `f` prototype clusters.
//! Instances dominated by the first `n_hard_clusters` clusters are planted
//! hard: they succeed at `hard_success_rate`, except a `mid_hard_fraction`
//! of them that succeed half the time. Everything else succeeds at
//! `easy_success_rate`.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, WeightedIndex};

use crate::baselines::{jaccard_indices, run_baseline, BaselineInputs, BaselineName, BaselineSpec};
use crate::coords::{stabilize_with_order, StabilizedCoords};
use crate::diagnostics::{audit, AuditReport};
use crate::error::{Error, Result};
use crate::gradblock::{build_gradient_block, stack_design, GradientBlock};
use crate::metric::{build_metric_from, sae_design_weighted, CoverageMetric, DesignMatrix};
use crate::pool::{parse_kv, parse_num, read_text, InstancePool, PipelineConfig, SurfaceFeatures};
use crate::rng::{Domain, SeedTree};
use crate::select::{exhaustive_opt, greedy, score_subset, GreedyOptions, SelectionMode, SelectionResult};
use crate::weights::{compute_weights, VerifierWeights};

/// Names of the generated surface statistics.
pub const SURFACE_NAMES: [&str; 6] = [
    "characters",
    "words",
    "latex_density",
    "digit_density",
    "equation_count",
    "operator_density",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub f: usize,
    /// Rollouts per instance.
    pub g: u32,
    pub n_hard_clusters: usize,
    pub hard_success_rate: f64,
    pub easy_success_rate: f64,
    /// Share of planted-hard instances that succeed at rate 0.5 instead.
    pub mid_hard_fraction: f64,
    /// Minor clusters mixed into each instance.
    pub n_secondary: usize,
    /// Upper bound of the uniform mass on each minor cluster.
    pub secondary_mass: f64,
    /// Relative frequency of a planted-hard cluster as the dominant one.
    pub hard_cluster_weight: f64,
    /// Gradient width; 0 generates no gradients.
    pub grad_dim: usize,
    pub grad_shared_rank: usize,
    pub noise_scale: f64,
    pub surface: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 4000,
            f: 64,
            g: 8,
            n_hard_clusters: 4,
            hard_success_rate: 0.1,
            easy_success_rate: 0.9,
            mid_hard_fraction: 0.3,
            hard_cluster_weight: 0.3,
            n_secondary: 3,
            secondary_mass: 0.5,
            grad_dim: 0,
            grad_shared_rank: 0,
            noise_scale: 1.0,
            surface: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.n == 0 || self.f == 0 || self.g == 0 {
            return bad("n, f and g must be positive".into());
        }
        if self.n_hard_clusters > self.f {
            return bad(format!("n_hard_clusters = {} exceeds f = {}", self.n_hard_clusters, self.f));
        }
        for (name, r) in [("hard_success_rate", self.hard_success_rate), ("easy_success_rate", self.easy_success_rate)] {
            if !(r > 0.0 && r < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {r}"));
            }
        }
        if !(0.0..=1.0).contains(&self.mid_hard_fraction) {
            return bad("mid_hard_fraction must lie in [0, 1]".into());
        }
        if self.grad_shared_rank > 0 && self.grad_dim == 0 {
            return bad("grad_shared_rank needs grad_dim > 0".into());
        }
        if !(self.hard_cluster_weight > 0.0) || !self.hard_cluster_weight.is_finite() {
            return bad("hard_cluster_weight must be > 0".into());
        }
        if !(self.secondary_mass >= 0.0) || !self.secondary_mass.is_finite() {
            return bad("secondary_mass must be >= 0".into());
        }
        if !(self.noise_scale >= 0.0) {
            return bad("noise_scale must be >= 0".into());
        }
        Ok(())
    }

    /// Parses `key=value` lines; unknown keys are an error.
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut s = SynthSpec::default();
        for (line, key, value) in parse_kv(path, text, '=')? {
            let (p, k, v) = (path, key.as_str(), value.as_str());
            match k {
                "n" => s.n = parse_num(p, line, k, v)?,
                "f" => s.f = parse_num(p, line, k, v)?,
                "g" => s.g = parse_num(p, line, k, v)?,
                "n_hard_clusters" => s.n_hard_clusters = parse_num(p, line, k, v)?,
                "hard_success_rate" => s.hard_success_rate = parse_num(p, line, k, v)?,
                "easy_success_rate" => s.easy_success_rate = parse_num(p, line, k, v)?,
                "mid_hard_fraction" => s.mid_hard_fraction = parse_num(p, line, k, v)?,
                "n_secondary" => s.n_secondary = parse_num(p, line, k, v)?,
                "secondary_mass" => s.secondary_mass = parse_num(p, line, k, v)?,
                "hard_cluster_weight" => s.hard_cluster_weight = parse_num(p, line, k, v)?,
                "grad_dim" => s.grad_dim = parse_num(p, line, k, v)?,
                "grad_shared_rank" => s.grad_shared_rank = parse_num(p, line, k, v)?,
                "noise_scale" => s.noise_scale = parse_num(p, line, k, v)?,
                "surface" => s.surface = parse_num(p, line, k, v)?,
                "seed" => s.seed = parse_num(p, line, k, v)?,
                _ => {
                    return Err(Error::Parse {
                        path: p.to_path_buf(),
                        line,
                        msg: format!("unknown spec key {k:?}"),
                    })
                }
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }
}

/// Number of successes in `g` trials at rate `p`, by inverting the CDF at `u`.
pub fn binomial_inverse_cdf(g: u32, p: f64, u: f64) -> u32 {
    let q = 1.0 - p;
    let mut pmf = q.powi(g as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while u > cdf && k < g {
        pmf *= (g - k) as f64 / (k + 1) as f64 * p / q;
        k += 1;
        cdf += pmf;
    }
    k
}

fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// Generates a pool from `spec`. Instance `i` draws only from its own stream.
pub fn generate(spec: &SynthSpec) -> Result<InstancePool> {
    spec.validate()?;
    let tree = SeedTree::new(spec.seed);
    let (n, f) = (spec.n, spec.f);

    let w_shared: Option<DMatrix<f64>> = if spec.grad_shared_rank > 0 {
        let mut rng = tree.stream(Domain::SynthShared, 0);
        let r = spec.grad_shared_rank;
        let a: DMatrix<f64> = DMatrix::from_fn(f, r, |_, _| StandardNormal.sample(&mut rng));
        let b: DMatrix<f64> = DMatrix::from_fn(r, spec.grad_dim, |_, _| StandardNormal.sample(&mut rng));
        Some(a * b / (r as f64).sqrt())
    } else {
        None
    };

    let cluster_weights = (0..f).map(|c| if c < spec.n_hard_clusters { spec.hard_cluster_weight } else { 1.0 });
    let dominant_dist = WeightedIndex::new(cluster_weights).map_err(|e| Error::config(e.to_string()))?;
    let mut mass = DMatrix::zeros(n, f);
    let mut s = Vec::with_capacity(n);
    let mut noise = if spec.grad_dim > 0 {
        Some(DMatrix::zeros(n, spec.grad_dim))
    } else {
        None
    };
    let mut surface = DMatrix::zeros(n, SURFACE_NAMES.len());
    for i in 0..n {
        let mut rng = tree.stream(Domain::SynthInstance, i as u64);
        let dominant = dominant_dist.sample(&mut rng);
        mass[(i, dominant)] += rng.gen_range(2.0..4.0);
        for _ in 0..spec.n_secondary {
            let c = rng.gen_range(0..f);
            mass[(i, c)] += spec.secondary_mass * rng.gen::<f64>();
        }
        let p = if dominant < spec.n_hard_clusters {
            if rng.gen::<f64>() < spec.mid_hard_fraction {
                0.5
            } else {
                spec.hard_success_rate
            }
        } else {
            spec.easy_success_rate
        };
        s.push(binomial_inverse_cdf(spec.g, p, rng.gen()));
        if let Some(g) = noise.as_mut() {
            for k in 0..spec.grad_dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                g[(i, k)] = spec.noise_scale * z;
            }
        }

        let row = mass.row(i);
        let total: f64 = row.sum();
        let active = row.iter().filter(|&&v| v > 0.0).count() as f64;
        let e = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
        let chars = 400.0 * (1.0 + 0.1 * total) * (0.3 * e(&mut rng)).exp();
        surface[(i, 0)] = chars.round();
        surface[(i, 1)] = (chars / 5.5 * (0.1 * e(&mut rng)).exp()).round();
        surface[(i, 2)] = 0.02 * active + 0.05 * rng.gen::<f64>();
        surface[(i, 3)] = 0.2 * rng.gen::<f64>();
        surface[(i, 4)] = (1.0 + row.max() + 3.0 * rng.gen::<f64>()).floor();
        surface[(i, 5)] = 0.01 * total + 0.1 * rng.gen::<f64>();
    }
    mass.apply(|v| *v = round_f32(*v));
    surface.apply(|v| *v = round_f32(*v));

    let gradients = match (noise, w_shared) {
        (Some(mut g), Some(w)) => {
            g.gemm(1.0, &mass, &w, 1.0);
            g.apply(|v| *v = round_f32(*v));
            Some(g)
        }
        (Some(mut g), None) => {
            g.apply(|v| *v = round_f32(*v));
            Some(g)
        }
        _ => None,
    };
    let surface = spec.surface.then(|| SurfaceFeatures {
        names: SURFACE_NAMES.iter().map(|s| s.to_string()).collect(),
        values: surface,
    });
    let ids = (0..n).map(|i| format!("synth-{}-{i:06}", spec.seed)).collect();
    InstancePool::new(mass, s, spec.g, gradients, surface, ids)
}

/// Component-removal variants of the design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Difficulty against uniform trainability, rows weighted by difficulty.
    DifficultyOnly,
    /// Uniform difficulty against trainability.
    TrainabilityOnly,
    /// Regularized metric replaced by the identity.
    IdentityMetric,
    /// Gradient block dropped.
    SaeOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::DifficultyOnly,
        Variant::TrainabilityOnly,
        Variant::IdentityMetric,
        Variant::SaeOnly,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::DifficultyOnly => "d_only",
            Variant::TrainabilityOnly => "r_only",
            Variant::IdentityMetric => "identity_metric",
            Variant::SaeOnly => "sae_only",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .iter()
            .copied()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::input(format!("unknown variant {s:?}")))
    }
}

/// Everything built on the way to the design.
#[derive(Debug, Clone)]
pub struct DesignArtifacts {
    pub weights: VerifierWeights,
    pub coords: StabilizedCoords,
    pub metric: CoverageMetric,
    pub gradient: Option<GradientBlock>,
    pub design: DesignMatrix,
}

/// Weights, coordinates, metric, optional gradient block and design.
pub fn build_design(pool: &InstancePool, cfg: &PipelineConfig, variant: Variant) -> Result<DesignArtifacts> {
    cfg.validate()?;
    let weights = compute_weights(&pool.success_counts, pool.rollouts)?;
    let coords = stabilize_with_order(pool, &cfg.stabilize_order);
    let ones = vec![1.0; pool.n_instances()];
    let (d_side, r_side, row_w) = match variant {
        Variant::DifficultyOnly => (&weights.d_tilde, &ones, &weights.d_tilde),
        Variant::TrainabilityOnly => (&ones, &weights.r_tilde, &weights.r_tilde),
        _ => (&weights.d_tilde, &weights.r_tilde, &weights.r_tilde),
    };
    let mut metric = build_metric_from(&coords, d_side, r_side, cfg.rho, cfg.eta, cfg.c)?;
    if variant == Variant::IdentityMetric {
        metric = metric.with_identity_design();
    }
    let v = sae_design_weighted(&coords, row_w, &metric)?;
    let omega = if variant == Variant::SaeOnly { 0.0 } else { cfg.omega };
    let (design, gradient) = if omega > 0.0 {
        let g = pool
            .gradients
            .as_ref()
            .ok_or_else(|| Error::config("omega > 0 requires a gradient block; set omega=0 for cluster-only pools"))?;
        let block = build_gradient_block(g, &coords, &v, cfg.rho_g, cfg.epsilon, cfg.alpha, omega)?;
        let design = stack_design(&v, Some(&block.g_tilde), &block.q_tilde, omega)?;
        (design, Some(block))
    } else {
        (v, None)
    };
    Ok(DesignArtifacts {
        weights,
        coords,
        metric,
        gradient,
        design,
    })
}

/// Runs the selector named by `mode` with the configured queue settings.
pub fn select_design(design: &DesignMatrix, k: usize, cfg: &PipelineConfig, mode: &SelectionMode) -> Result<SelectionResult> {
    match mode {
        SelectionMode::ExactGreedy => greedy(
            design,
            k,
            cfg.lambda,
            &GreedyOptions {
                reinvert_every: cfg.reinvert_every,
                ..GreedyOptions::exact()
            },
        ),
        SelectionMode::ScreenedGreedy => greedy(
            design,
            k,
            cfg.lambda,
            &GreedyOptions {
                queue_q: Some(cfg.queue_q),
                refresh_r: cfg.refresh_r,
                reinvert_every: cfg.reinvert_every,
            },
        ),
        SelectionMode::Exhaustive => exhaustive_opt(design, k, cfg.lambda),
        SelectionMode::Baseline(name) => Err(Error::input(format!(
            "baseline {name:?} is not a selector mode; run it as a baseline"
        ))),
    }
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub artifacts: DesignArtifacts,
    pub selection: SelectionResult,
    pub report: AuditReport,
}

/// Full pipeline with the screened selector.
pub fn run_pipeline(pool: &InstancePool, cfg: &PipelineConfig) -> Result<(SelectionResult, AuditReport)> {
    let run = run_pipeline_with(pool, cfg, &SelectionMode::ScreenedGreedy, Variant::Full)?;
    Ok((run.selection, run.report))
}

pub fn run_pipeline_with(pool: &InstancePool, cfg: &PipelineConfig, mode: &SelectionMode, variant: Variant) -> Result<PipelineRun> {
    let artifacts = build_design(pool, cfg, variant)?;
    let k = cfg.budget(pool.n_instances())?;
    let selection = select_design(&artifacts.design, k, cfg, mode)?;
    let report = audit(pool, cfg, &selection, &artifacts.coords, &artifacts.metric)?;
    Ok(PipelineRun {
        artifacts,
        selection,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub budget_frac: f64,
    pub k: usize,
    pub method: String,
    /// Log-det of the selection on the full design.
    pub objective: f64,
    pub jaccard_with_irds: f64,
}

/// Objective per budget per method, all scored on the full design.
///
/// Greedy picks do not depend on the budget, so each greedy method runs once
/// at the largest budget and smaller budgets read its prefix.
pub fn sweep(pool: &InstancePool, cfg: &PipelineConfig, budgets: &[f64], baselines: &[BaselineName]) -> Result<Vec<SweepRow>> {
    if budgets.is_empty() {
        return Err(Error::input("no budgets to sweep"));
    }
    let n = pool.n_instances();
    let mut ks = Vec::new();
    for &b in budgets {
        let mut c = cfg.clone();
        c.budget_k = None;
        c.budget_frac = b;
        c.validate()?;
        ks.push(c.budget(n)?);
    }
    let k_max = *ks.iter().max().unwrap();
    let full = build_design(pool, cfg, Variant::Full)?;
    let mode = SelectionMode::ScreenedGreedy;
    let irds = select_design(&full.design, k_max, cfg, &mode)?;

    let mut greedy_runs: Vec<(String, Vec<usize>)> = vec![("irds".into(), irds.indices.clone())];
    for variant in [Variant::DifficultyOnly, Variant::TrainabilityOnly, Variant::IdentityMetric] {
        let art = build_design(pool, cfg, variant)?;
        let sel = select_design(&art.design, k_max, cfg, &mode)?;
        greedy_runs.push((variant.as_str().into(), sel.indices));
    }

    let inputs = BaselineInputs {
        weights: &full.weights,
        coords: &full.coords,
        design: &full.design,
        metric: &full.metric,
        lambda: cfg.lambda,
    };
    let mut rows = Vec::new();
    for (&b, &k) in budgets.iter().zip(&ks) {
        let irds_k = &irds.indices[..k];
        let mut push = |method: String, idx: &[usize]| -> Result<()> {
            rows.push(SweepRow {
                budget_frac: b,
                k,
                method,
                objective: score_subset(&full.design, idx, cfg.lambda)?,
                jaccard_with_irds: jaccard_indices(irds_k, idx),
            });
            Ok(())
        };
        for (name, idx) in &greedy_runs {
            push(name.clone(), &idx[..k])?;
        }
        for &name in baselines {
            let spec = BaselineSpec {
                name,
                seed: cfg.seed,
                params: BTreeMap::new(),
            };
            let sel = run_baseline(&spec, &inputs, k)?;
            push(name.to_string(), &sel.indices)?;
        }
    }
    Ok(rows)
}

/// Tab-separated sweep table with a header line.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("budget_frac\tk\tmethod\tobjective\tjaccard_with_irds\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.4}\n",
            r.budget_frac, r.k, r.method, r.objective, r.jaccard_with_irds
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradblock::residualize;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n: 400,
            f: 16,
            seed,
            ..SynthSpec::default()
        }
    }

    fn cluster_cfg() -> PipelineConfig {
        PipelineConfig {
            omega: 0.0,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn binomial_inverse_cdf_matches_pmf() {
        // Exact CDF table for g = 4, p = 0.3.
        let p: f64 = 0.3;
        let pmf: Vec<f64> = (0..=4)
            .map(|k| {
                let c = [1.0, 4.0, 6.0, 4.0, 1.0][k];
                c * p.powi(k as i32) * (1.0 - p).powi(4 - k as i32)
            })
            .collect();
        let mut cdf = 0.0;
        for (k, m) in pmf.iter().enumerate() {
            let lo = cdf;
            cdf += m;
            let mid = 0.5 * (lo + cdf);
            assert_eq!(binomial_inverse_cdf(4, p, mid), k as u32);
        }
        assert_eq!(binomial_inverse_cdf(8, 0.5, 0.0), 0);
        assert_eq!(binomial_inverse_cdf(8, 0.5, 1.0), 8);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate(&small_spec(3)).unwrap();
        let b = generate(&small_spec(3)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&small_spec(4)).unwrap());
        assert_eq!(a.surface_features.as_ref().unwrap().values.ncols(), 6);
        assert!(a.success_counts.iter().all(|&s| s <= 8));
    }

    #[test]
    fn invalid_specs() {
        for bad in [
            SynthSpec { n_hard_clusters: 17, ..small_spec(0) },
            SynthSpec { hard_success_rate: 0.0, ..small_spec(0) },
            SynthSpec { easy_success_rate: 1.0, ..small_spec(0) },
            SynthSpec { grad_shared_rank: 2, grad_dim: 0, ..small_spec(0) },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))));
        }
    }

    #[test]
    fn hard_clusters_fail_more() {
        let spec = small_spec(5);
        let pool = generate(&spec).unwrap();
        let (mut hard, mut easy) = (Vec::new(), Vec::new());
        for i in 0..pool.n_instances() {
            let row = pool.cluster_mass.row(i);
            let dom = (0..spec.f).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            let s = pool.success_counts[i] as f64;
            if dom < spec.n_hard_clusters { hard.push(s) } else { easy.push(s) }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&hard) < mean(&easy) - 2.0);
    }

    #[test]
    fn zero_shared_rank_has_nothing_to_remove() {
        let spec = SynthSpec {
            grad_dim: 12,
            grad_shared_rank: 0,
            noise_scale: 0.0,
            ..small_spec(6)
        };
        let pool = generate(&spec).unwrap();
        let g = pool.gradients.as_ref().unwrap();
        assert_eq!(g.norm(), 0.0);
        let coords = stabilize_with_order(&pool, &cfg_order());
        assert_eq!(residualize(g, &coords, 1e-3).unwrap().norm(), 0.0);
    }

    fn cfg_order() -> [crate::coords::StabilizeStep; 3] {
        crate::coords::StabilizeStep::DEFAULT_ORDER
    }

    #[test]
    fn spec_file_round_trip() {
        let text = "n = 50\nf = 5\nn_hard_clusters = 2\nseed = 9\ngrad_dim = 3\n";
        let spec = SynthSpec::parse(Path::new("spec.txt"), text).unwrap();
        assert_eq!((spec.n, spec.f, spec.n_hard_clusters, spec.seed, spec.grad_dim), (50, 5, 2, 9, 3));
        assert!(SynthSpec::parse(Path::new("spec.txt"), "bogus = 1\n").is_err());
    }

    #[test]
    fn cluster_only_pipeline() {
        let pool = generate(&small_spec(7)).unwrap();
        let (sel, report) = run_pipeline(&pool, &cluster_cfg()).unwrap();
        assert_eq!(sel.indices.len(), 80);
        assert_eq!(sel.mode, SelectionMode::ScreenedGreedy);
        assert!(report.surface_r2.is_some());
        let art = build_design(&pool, &cluster_cfg(), Variant::Full).unwrap();
        assert_eq!(art.design.dim(), 16);
        // default omega needs gradients
        assert!(matches!(
            run_pipeline(&pool, &PipelineConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gradient_pipeline() {
        let spec = SynthSpec {
            grad_dim: 24,
            grad_shared_rank: 3,
            ..small_spec(8)
        };
        let pool = generate(&spec).unwrap();
        let art = build_design(&pool, &PipelineConfig::default(), Variant::Full).unwrap();
        assert_eq!(art.design.layout.sae, 16);
        assert!(art.design.layout.gradient > 0);
        let sae = build_design(&pool, &PipelineConfig::default(), Variant::SaeOnly).unwrap();
        assert_eq!(sae.design.dim(), 16);
    }

    #[test]
    fn budgets_are_nested_in_exact_mode() {
        let pool = generate(&small_spec(9)).unwrap();
        let mut cfg = cluster_cfg();
        let mut runs = Vec::new();
        for frac in [0.1, 0.2] {
            cfg.budget_frac = frac;
            runs.push(run_pipeline_with(&pool, &cfg, &SelectionMode::ExactGreedy, Variant::Full).unwrap().selection);
        }
        assert_eq!(runs[0].indices[..], runs[1].indices[..runs[0].indices.len()]);
    }

    #[test]
    fn full_budget_scores_the_whole_pool() {
        let pool = generate(&SynthSpec { n: 60, f: 6, ..small_spec(10) }).unwrap();
        let cfg = PipelineConfig {
            budget_k: Some(60),
            ..cluster_cfg()
        };
        let run = run_pipeline_with(&pool, &cfg, &SelectionMode::ExactGreedy, Variant::Full).unwrap();
        let all: Vec<usize> = (0..60).collect();
        let direct = score_subset(&run.artifacts.design, &all, cfg.lambda).unwrap();
        assert!((run.selection.objective - direct).abs() < 1e-6);
    }

    #[test]
    fn sweep_rows() {
        let pool = generate(&small_spec(11)).unwrap();
        let rows = sweep(&pool, &cluster_cfg(), &[0.1, 0.2], &[BaselineName::Random, BaselineName::TopD]).unwrap();
        assert_eq!(rows.len(), 2 * 6);
        let irds: Vec<&SweepRow> = rows.iter().filter(|r| r.method == "irds").collect();
        assert_eq!(irds[0].jaccard_with_irds, 1.0);
        assert!(irds[1].objective > irds[0].objective);
        let table = sweep_table(&rows);
        assert_eq!(table.lines().count(), 13);
    }

    #[test]
    fn variant_names() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
        }
    }
}
