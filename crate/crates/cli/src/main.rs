use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use covsel::baselines::{jaccard_indices, run_baseline, BaselineInputs, BaselineName, BaselineSpec};
use covsel::clustering::{cluster_mass, fit_cluster_model, read_activations, save_cluster_model, ClusterConfig};
use covsel::diagnostics::{audit, metric_for, AuditReport};
use covsel::gradblock::jl_project;
use covsel::pool::{load_pool, load_selection, read_matrix, save_pool, save_selection, write_matrix};
use covsel::select::score_subset;
use covsel::synth::{build_design, generate, select_design, sweep, sweep_table, DesignArtifacts, SynthSpec, Variant};
use covsel::{InstancePool, PipelineConfig, SelectionMode};

#[derive(Parser)]
#[command(name = "covsel", version, about = "Verifier-weighted D-optimal data selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select a subset with the greedy D-optimal solver.
    Select(SelectArgs),
    /// Run one baseline selector on the same design.
    Baseline(BaselineArgs),
    /// Target log-det and Jaccard overlap for every method.
    Compare(CompareArgs),
    /// Cluster SAE latents and optionally emit per-instance cluster mass.
    Cluster(ClusterArgs),
    /// Diagnostics for an existing selection.
    Audit(AuditArgs),
    /// Generate a synthetic pool with planted structure.
    Synth(SynthArgs),
    /// Full pipeline: design, screened selection and audit.
    Pipeline(PipelineArgs),
    /// Objective per budget per method.
    Sweep(SweepArgs),
    /// Gaussian random projection of each column block to 64 dimensions.
    JlProject(JlArgs),
}

#[derive(Args)]
struct PoolArgs {
    /// Pool manifest.
    #[arg(long)]
    pool: PathBuf,
    /// key=value config; absent keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct BudgetArgs {
    /// Budget as a fraction of the pool.
    #[arg(long, conflicts_with = "budget_k")]
    budget_frac: Option<f64>,
    /// Budget as an instance count.
    #[arg(long)]
    budget_k: Option<usize>,
}

#[derive(Args)]
struct DumpArgs {
    /// Write the stabilized coordinates in the matrix format.
    #[arg(long)]
    dump_coords: Option<PathBuf>,
    /// Write metric eigenvalues and the top eigenvectors as text.
    #[arg(long)]
    dump_metric: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Screened,
    Exhaustive,
}

impl From<ModeArg> for SelectionMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Exact => SelectionMode::ExactGreedy,
            ModeArg::Screened => SelectionMode::ScreenedGreedy,
            ModeArg::Exhaustive => SelectionMode::Exhaustive,
        }
    }
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, value_enum, default_value = "screened")]
    mode: ModeArg,
    /// Selection output file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    dump: DumpArgs,
}

#[derive(Args)]
struct BaselineArgs {
    /// One of random, top_d, top_r, pointwise_dr, kmeans_phi, facility_phi, leverage_phi, less_proxy.
    #[arg(long)]
    name: String,
    #[command(flatten)]
    pool: PoolArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    /// Table output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClusterArgs {
    /// Sparse activation file.
    #[arg(long)]
    acts: PathBuf,
    /// Cluster model output.
    #[arg(long)]
    out: PathBuf,
    /// Per-instance cluster mass output, in the matrix format.
    #[arg(long)]
    mass_out: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    n_clusters: usize,
    #[arg(long, default_value_t = 0.01)]
    min_freq: f64,
    #[arg(long, default_value_t = 0.80)]
    max_freq: f64,
    #[arg(long, default_value_t = 32)]
    n_neighbors: usize,
    #[arg(long, default_value_t = 64)]
    half_dim: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
    #[arg(long, default_value_t = 8192)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

#[derive(Args)]
struct AuditArgs {
    #[command(flatten)]
    pool: PoolArgs,
    /// Selection file written by `select`, `baseline` or `pipeline`.
    #[arg(long)]
    selection: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Report format; json gives one JSON object per field per line.
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct SynthArgs {
    /// key=value generator spec; absent keys take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Manifest path; matrix files are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[command(flatten)]
    budget: BudgetArgs,
    #[arg(long, value_enum, default_value = "screened")]
    mode: ModeArg,
    #[arg(long)]
    out_selection: PathBuf,
    #[arg(long)]
    out_report: PathBuf,
    #[arg(long, value_enum)]
    format: Option<ReportFormat>,
    #[command(flatten)]
    dump: DumpArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    pool: PoolArgs,
    /// Comma-separated budget fractions.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3")]
    budgets: Vec<f64>,
    /// Comma-separated baselines to include; all when absent.
    #[arg(long, value_delimiter = ',')]
    baselines: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct JlArgs {
    /// Input matrix file, one row per instance.
    #[arg(long)]
    input: PathBuf,
    /// Comma-separated column widths of the blocks; one block when absent.
    #[arg(long, value_delimiter = ',')]
    blocks: Option<Vec<usize>>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>, budget: Option<&BudgetArgs>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(b) = budget {
        if let Some(k) = b.budget_k {
            cfg.budget_k = Some(k);
        }
        if let Some(f) = b.budget_frac {
            cfg.budget_k = None;
            cfg.budget_frac = f;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_inputs(args: &PoolArgs, budget: Option<&BudgetArgs>) -> Result<(InstancePool, PipelineConfig)> {
    let pool = load_pool(&args.pool).with_context(|| format!("loading pool {}", args.pool.display()))?;
    let cfg = load_config(args.config.as_deref(), budget)?;
    Ok((pool, cfg))
}

fn write_dumps(dump: &DumpArgs, art: &DesignArtifacts) -> Result<()> {
    if let Some(p) = &dump.dump_coords {
        write_matrix(p, &art.coords.z_bar)?;
    }
    if let Some(p) = &dump.dump_metric {
        fs::write(p, art.metric.dump_text(10)).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn report_format(explicit: Option<ReportFormat>, path: &Path) -> ReportFormat {
    explicit.unwrap_or_else(|| match path.extension().and_then(|e| e.to_str()) {
        Some("json" | "jsonl") => ReportFormat::Json,
        _ => ReportFormat::Text,
    })
}

fn baseline_inputs<'a>(art: &'a DesignArtifacts, cfg: &PipelineConfig) -> BaselineInputs<'a> {
    BaselineInputs {
        weights: &art.weights,
        coords: &art.coords,
        design: &art.design,
        metric: &art.metric,
        lambda: cfg.lambda,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Select(a) => {
            let (pool, cfg) = load_inputs(&a.pool, Some(&a.budget))?;
            let art = build_design(&pool, &cfg, Variant::Full)?;
            write_dumps(&a.dump, &art)?;
            let k = cfg.budget(pool.n_instances())?;
            let sel = select_design(&art.design, k, &cfg, &a.mode.into())?;
            save_selection(&sel, &pool, &a.out)?;
            eprintln!("selected {} of {}, objective {:.6}", sel.len(), pool.n_instances(), sel.objective);
        }
        Command::Baseline(a) => {
            let name: BaselineName = a.name.parse()?;
            let (pool, cfg) = load_inputs(&a.pool, Some(&a.budget))?;
            let art = build_design(&pool, &cfg, Variant::Full)?;
            let k = cfg.budget(pool.n_instances())?;
            let sel = run_baseline(&BaselineSpec::new(name, cfg.seed), &baseline_inputs(&art, &cfg), k)?;
            save_selection(&sel, &pool, &a.out)?;
            eprintln!("{name}: selected {}, objective {:.6}", sel.len(), sel.objective);
        }
        Command::Compare(a) => {
            let (pool, cfg) = load_inputs(&a.pool, Some(&a.budget))?;
            let art = build_design(&pool, &cfg, Variant::Full)?;
            let k = cfg.budget(pool.n_instances())?;
            let irds = select_design(&art.design, k, &cfg, &SelectionMode::ScreenedGreedy)?;
            let mut table = String::from("method\ttarget_logdet\tjaccard_with_irds\n");
            table.push_str(&format!("irds\t{:.6}\t{:.4}\n", irds.objective, 1.0));
            let inputs = baseline_inputs(&art, &cfg);
            for name in BaselineName::ALL {
                let sel = run_baseline(&BaselineSpec::new(name, cfg.seed), &inputs, k)?;
                let score = score_subset(&art.design, &sel.indices, cfg.lambda)?;
                table.push_str(&format!("{name}\t{score:.6}\t{:.4}\n", jaccard_indices(&irds.indices, &sel.indices)));
            }
            emit(a.out.as_deref(), &table)?;
        }
        Command::Cluster(a) => {
            let acts = read_activations(&a.acts)?;
            let cfg = ClusterConfig {
                min_freq: a.min_freq,
                max_freq: a.max_freq,
                n_neighbors: a.n_neighbors,
                half_dim: a.half_dim,
                n_clusters: a.n_clusters,
                iters: a.iters,
                batch: a.batch,
                seed: a.seed,
                ..ClusterConfig::default()
            };
            let model = fit_cluster_model(&acts, &cfg)?;
            save_cluster_model(&model, &a.out)?;
            if let Some(p) = &a.mass_out {
                write_matrix(p, &cluster_mass(&acts, &model)?)?;
            }
            eprintln!("clustered {} latents into {} clusters", model.kept.len(), model.n_clusters);
        }
        Command::Audit(a) => {
            let (pool, cfg) = load_inputs(&a.pool, None)?;
            let sel = load_selection(&a.selection, &pool)?;
            let (coords, metric) = metric_for(&pool, &cfg)?;
            let report = audit(&pool, &cfg, &sel, &coords, &metric)?;
            write_report(&a.report, report_format(a.format, &a.report), &report)?;
        }
        Command::Synth(a) => {
            let spec = match &a.spec {
                Some(p) => SynthSpec::load(p)?,
                None => SynthSpec::default(),
            };
            let pool = generate(&spec)?;
            save_pool(&pool, &a.out)?;
            eprintln!("wrote {} instances to {}", pool.n_instances(), a.out.display());
        }
        Command::Pipeline(a) => {
            let (pool, cfg) = load_inputs(&a.pool, Some(&a.budget))?;
            let art = build_design(&pool, &cfg, Variant::Full)?;
            write_dumps(&a.dump, &art)?;
            let k = cfg.budget(pool.n_instances())?;
            let sel = select_design(&art.design, k, &cfg, &a.mode.into())?;
            let report = audit(&pool, &cfg, &sel, &art.coords, &art.metric)?;
            save_selection(&sel, &pool, &a.out_selection)?;
            write_report(&a.out_report, report_format(a.format, &a.out_report), &report)?;
            eprintln!("selected {} of {}, objective {:.6}", sel.len(), pool.n_instances(), sel.objective);
        }
        Command::Sweep(a) => {
            let (pool, cfg) = load_inputs(&a.pool, None)?;
            let baselines = match &a.baselines {
                Some(names) => names.iter().map(|n| n.parse()).collect::<covsel::Result<Vec<BaselineName>>>()?,
                None => BaselineName::ALL.to_vec(),
            };
            let rows = sweep(&pool, &cfg, &a.budgets, &baselines)?;
            emit(a.out.as_deref(), &sweep_table(&rows))?;
        }
        Command::JlProject(a) => {
            let x = read_matrix(&a.input)?;
            let blocks = a.blocks.unwrap_or_else(|| vec![x.ncols()]);
            if blocks.iter().sum::<usize>() != x.ncols() {
                bail!("block widths sum to {} but the input has {} columns", blocks.iter().sum::<usize>(), x.ncols());
            }
            write_matrix(&a.out, &jl_project(&x, &blocks, a.seed)?)?;
        }
    }
    Ok(())
}

fn write_report(path: &Path, format: ReportFormat, report: &AuditReport) -> Result<()> {
    let text = match format {
        ReportFormat::Text => report.to_text(),
        ReportFormat::Json => report.to_json_lines(),
    };
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
