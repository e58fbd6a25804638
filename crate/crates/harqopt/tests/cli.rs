use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn harqopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_harqopt")).args(args).output().expect("run harqopt")
}

fn config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cmd: &str, cfg: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap()];
    args.extend_from_slice(extra);
    harqopt(&args)
}

const POLICY: &str = "snr_d_db = 3\nsnr_u_db = -10\nrhos_units = [12, 4, 4, 4]\nalphas = [0.5, 0.5, 0.5]\n";

#[test]
fn analyze_writes_one_row() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "a.toml", POLICY);
    let out = run("analyze", &cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains('\r'));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let header: Vec<&str> = lines[0].split(',').collect();
    let row: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(header.len(), row.len());
    let eta = header.iter().position(|h| *h == "throughput").unwrap();
    let value: f64 = row[eta].parse().unwrap();
    assert!(value > 0.0 && value < 1.33);
    assert!(row[eta].contains('e') && row[eta].split('e').next().unwrap().len() == 10);
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = config(&dir, "bad.toml", "epsilon = 1.5\n");
    let out = run("optimize", &bad, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("epsilon") && err.contains("(0, 1)"), "{err}");

    let unknown = config(&dir, "u.toml", "snr_d_db = 3\nsnr_dl = 3\n");
    let out = run("analyze", &unknown, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("accepted keys"));

    let out = run("analyze", &dir.path().join("missing.toml"), &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn infeasible_exits_3() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "i.toml",
        "snr_u_db = -30\nepsilon = 0.001\noptimizer.init = \"uniform\"\n",
    );
    let out = run("optimize", &cfg, &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_reproducible_across_worker_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "s.toml", &format!("{POLICY}mc.n_episodes = 50000\n"));
    let a = run("simulate", &cfg, &["--seed", "5", "--workers", "1"]);
    let b = run("simulate", &cfg, &["--seed", "5", "--workers", "3"]);
    let c = run("simulate", &cfg, &["--seed", "6", "--workers", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn validate_passes_and_tripwire_exits_4() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "v.toml", &format!("{POLICY}mc.n_episodes = 200000\n"));
    let out = run("validate", &cfg, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("quantity,index,analytic,monte_carlo,stderr,z,optimizer_model\n"));
    assert!(text.contains("p_fail_gaussian_gap,2,"));

    let strict = config(&dir, "t.toml", &format!("{POLICY}mc.n_episodes = 200000\nvalidate.z_limit = 1e-9\n"));
    let out = run("validate", &strict, &[]);
    assert_eq!(out.status.code(), Some(4));
    assert!(!out.stdout.is_empty());
}

#[test]
fn optimize_writes_solution_and_trace() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, "o.toml", "snr_u_db = -5\noptimizer.init = \"uniform\"\n");
    let out_path = dir.path().join("sol.csv");
    let out = run("optimize", &cfg, &["--out", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sol = std::fs::read_to_string(&out_path).unwrap();
    assert!(sol.lines().next().unwrap().contains("lambda_star"));
    let trace = std::fs::read_to_string(dir.path().join("sol.trace.csv")).unwrap();
    let values: Vec<f64> = trace.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(!values.is_empty());
    assert!(values.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn fig3_sweep_rows_in_order() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        "f.toml",
        "[sweep]\nkind = \"fig3\"\nvalues = [-15, -10, -5]\nalphas = [0.0, 0.5, 1.0]\n",
    );
    let a = run("sweep", &cfg, &["--workers", "3"]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let text = String::from_utf8(a.stdout.clone()).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.iter().map(|r| r[1]).collect::<Vec<_>>(), vec![-15.0, -10.0, -5.0]);
    for r in &rows {
        assert!(r[2] >= r[3] && r[3] >= r[4]);
    }
    assert_eq!(run("sweep", &cfg, &["--workers", "1"]).stdout, a.stdout);
}
