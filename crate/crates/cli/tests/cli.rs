use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn covsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_covsel")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = covsel(args);
    assert!(
        out.status.success(),
        "covsel {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic pool with gradients and surface features.
fn synth_pool(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("spec.txt");
    fs::write(&spec, "n = 300\nf = 12\nn_hard_clusters = 2\ngrad_dim = 16\ngrad_shared_rank = 2\nseed = 5\n").unwrap();
    let manifest = dir.join("pool.manifest");
    ok(&["synth", "--spec", p(&spec), "--out", p(&manifest)]);
    manifest
}

fn selection_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.starts_with("rank") && !l.starts_with("objective="))
        .map(|l| l.split(',').nth(1).unwrap().trim().to_string())
        .collect()
}

#[test]
fn select_writes_selection_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth_pool(dir.path());
    let out = dir.path().join("sel.csv");
    let coords = dir.path().join("coords.bin");
    let metric = dir.path().join("metric.txt");
    ok(&[
        "select",
        "--pool",
        p(&pool),
        "--budget-k",
        "40",
        "--mode",
        "exact",
        "--out",
        p(&out),
        "--dump-coords",
        p(&coords),
        "--dump-metric",
        p(&metric),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    assert_eq!(selection_rows(&out).len(), 40);
    assert!(text.lines().last().unwrap().starts_with("objective="));
    assert!(coords.exists());
    let m = fs::read_to_string(&metric).unwrap();
    assert!(m.contains("eigenvalues"));
    assert_eq!(m.lines().filter(|l| l.starts_with("eigenvector")).count(), 10);
}

#[test]
fn exact_budgets_are_nested() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth_pool(dir.path());
    let small = dir.path().join("a.csv");
    let large = dir.path().join("b.csv");
    ok(&["select", "--pool", p(&pool), "--budget-frac", "0.1", "--mode", "exact", "--out", p(&small)]);
    ok(&["select", "--pool", p(&pool), "--budget-frac", "0.2", "--mode", "exact", "--out", p(&large)]);
    let (a, b) = (selection_rows(&small), selection_rows(&large));
    assert_eq!(a.len(), 30);
    assert_eq!(a[..], b[..30]);
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth_pool(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "omega = 0\nbudget_k = 25\n").unwrap();
    let out = dir.path().join("sel.csv");
    ok(&["select", "--pool", p(&pool), "--config", p(&cfg), "--out", p(&out)]);
    assert_eq!(selection_rows(&out).len(), 25);

    fs::write(&cfg, "lambda = -1\n").unwrap();
    let bad = covsel(&["select", "--pool", p(&pool), "--config", p(&cfg), "--out", p(&out)]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("lambda"));
}

#[test]
fn pipeline_then_audit() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth_pool(dir.path());
    let sel = dir.path().join("sel.csv");
    let report = dir.path().join("report.jsonl");
    ok(&[
        "pipeline",
        "--pool",
        p(&pool),
        "--out-selection",
        p(&sel),
        "--out-report",
        p(&report),
    ]);
    let lines = fs::read_to_string(&report).unwrap();
    for field in ["top_eigenvalue_true", "subspace_overlap", "surface_r2", "n_eff_selected", "sym_kl"] {
        assert!(lines.contains(field), "{field} missing");
    }
    let text_report = dir.path().join("report.txt");
    ok(&["audit", "--pool", p(&pool), "--selection", p(&sel), "--report", p(&text_report)]);
    let text = fs::read_to_string(&text_report).unwrap();
    assert!(text.lines().any(|l| l.starts_with("median_success_top_proj=")));
}

#[test]
fn baseline_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth_pool(dir.path());
    let out = dir.path().join("rand.csv");
    ok(&["baseline", "--name", "random", "--pool", p(&pool), "--budget-k", "30", "--out", p(&out)]);
    assert_eq!(selection_rows(&out).len(), 30);
    assert!(fs::read_to_string(&out).unwrap().contains("# mode=baseline:random"));

    let table = ok(&["compare", "--pool", p(&pool), "--budget-k", "30"]);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method\ttarget_logdet\tjaccard_with_irds");
    assert_eq!(lines.len(), 1 + 1 + 8);

    let bad = covsel(&["baseline", "--name", "dpp", "--pool", p(&pool), "--out", p(&out)]);
    assert!(!bad.status.success());
}

#[test]
fn sweep_table() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth_pool(dir.path());
    let out = dir.path().join("sweep.tsv");
    ok(&[
        "sweep",
        "--pool",
        p(&pool),
        "--budgets",
        "0.1,0.2",
        "--baselines",
        "random,top_r",
        "--out",
        p(&out),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    // irds, three ablations and two baselines at two budgets
    assert_eq!(text.lines().count(), 1 + 2 * 6);
}

#[test]
fn cluster_from_sparse_activations() {
    let dir = tempfile::tempdir().unwrap();
    let acts = dir.path().join("acts.txt");
    // 40 instances, 12 latents; latents 0-5 fire on even rows, 6-11 on odd rows.
    let mut body = Vec::new();
    for i in 0..40 {
        for l in 0..6 {
            let latent = if i % 2 == 0 { l } else { l + 6 };
            body.push(format!("{i} {latent} {}", 1.0 + (i * 7 + l) as f64 % 3.0));
        }
    }
    fs::write(&acts, format!("40 12 {}\n{}\n", body.len(), body.join("\n"))).unwrap();
    let model = dir.path().join("model.txt");
    let mass = dir.path().join("mass.bin");
    ok(&[
        "cluster",
        "--acts",
        p(&acts),
        "--out",
        p(&model),
        "--mass-out",
        p(&mass),
        "--n-clusters",
        "2",
        "--n-neighbors",
        "4",
        "--half-dim",
        "4",
    ]);
    assert!(model.exists());
    assert!(mass.exists());
}

#[test]
fn jl_project_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth_pool(dir.path());
    let manifest = fs::read_to_string(&pool).unwrap();
    let grad_file = manifest
        .lines()
        .find_map(|l| l.strip_prefix("gradients_file"))
        .map(|v| v.trim_start_matches([' ', ':', '\t']).trim().to_string())
        .unwrap();
    let input = dir.path().join(grad_file);
    let out = dir.path().join("proj.bin");
    ok(&["jl-project", "--input", p(&input), "--blocks", "8,8", "--seed", "3", "--out", p(&out)]);
    assert!(out.exists());
    let bad = covsel(&["jl-project", "--input", p(&input), "--blocks", "8,7", "--seed", "3", "--out", p(&out)]);
    assert!(!bad.status.success());
}

#[test]
fn missing_pool_is_an_error() {
    let out = covsel(&["select", "--pool", "/nonexistent/pool.manifest", "--out", "/tmp/x.csv"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
