use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[geometry]
nh = 2
nz = 2
[integrator]
dt = 0.001
horizon = 0.1
[coupling]
upsilon = 0.05
inner_steps = 50
"#;

fn spe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spe")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(config: &Path, cmd: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    spe(&args)
}

fn table(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn certify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), "a.toml", "[noise]\nbeta = 3.8\n");
    let bad = write_config(dir.path(), "b.toml", "[noise]\nbeta = 3.4\n");
    let out = dir.path().join("out");
    assert_eq!(run(&good, "certify", &out, &[]).status.code(), Some(0));
    assert!(out.join("certificate.json").exists() && out.join("manifest.json").exists());
    assert_eq!(run(&bad, "certify", &out, &[]).status.code(), Some(2));
    let missing = dir.path().join("missing.toml");
    assert_eq!(run(&missing, "certify", &out, &[]).status.code(), Some(1));
    let unknown = write_config(dir.path(), "c.toml", "[noise]\nbta = 3.8\n");
    assert_eq!(run(&unknown, "certify", &out, &[]).status.code(), Some(1));
    assert_eq!(spe(&["certify"]).status.code(), Some(1));
}

#[test]
fn zero_horizon_writes_the_initial_row_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", &SMALL.replace("horizon = 0.1", "horizon = 0.0"));
    let out = dir.path().join("out");
    let o = run(&cfg, "simulate", &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = table(&out.join("trajectory.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "t");
    assert_eq!(rows[1][0], "0");
    // The default initial state is normalized to unit L2 norm.
    assert!((rows[1][1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace("horizon = 0.1", "horizon = 0.1\ncheckpoint_every = 40\nstride = 4");
    let cfg = write_config(dir.path(), "a.toml", &body);
    let full = dir.path().join("full");
    assert_eq!(run(&cfg, "simulate", &full, &[]).status.code(), Some(0));
    let ckpt = full.join("ckpt_0000000040.ckpt");
    assert!(ckpt.exists() && full.join("ckpt_0000000080.ckpt").exists());
    let resumed = dir.path().join("resumed");
    let o = run(&cfg, "simulate", &resumed, &["--resume", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(full.join("final.ckpt")).unwrap(), std::fs::read(resumed.join("final.ckpt")).unwrap());
    let a = table(&full.join("trajectory.csv"));
    let b = table(&resumed.join("trajectory.csv"));
    assert_eq!(a.len(), 1 + 26);
    assert_eq!(b.len(), 1 + 16);
    assert_eq!(&a[a.len() - 16..], &b[1..]);

    let other = write_config(dir.path(), "b.toml", &body.replace("[geometry]", "[noise]\nbeta = 3.9\n[geometry]"));
    let mismatch = dir.path().join("mismatch");
    assert_eq!(run(&other, "simulate", &mismatch, &["--resume", ckpt.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&other, "simulate", &mismatch, &["--resume", ckpt.to_str().unwrap(), "--force"]).status.code(), Some(0));
}

#[test]
fn blow_up_reports_the_last_finite_time() {
    let dir = tempfile::tempdir().unwrap();
    let body = "[geometry]\nnh = 2\nnz = 2\n[noise]\namplitude = 1000.0\n[integrator]\ndt = 0.2\nhorizon = 20.0\n[coupling]\nupsilon = 0.2\ninner_steps = 1\n[mixing]\nhorizon = 1.0\n[verify]\nhorizon = 1.0\n[initial]\nnorm = 1000.0\n";
    let cfg = write_config(dir.path(), "a.toml", body);
    let out = dir.path().join("out");
    let o = run(&cfg, "simulate", &out, &[]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("last finite time"), "{err}");
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("failure"));
}

#[test]
fn explicit_scheme_beyond_stability_is_rejected_at_load() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", &SMALL.replace("dt = 0.001", "dt = 0.001\nscheme = \"explicit_em\"").replace("[geometry]\nnh = 2", "[geometry]\nnh = 6"));
    assert_eq!(run(&cfg, "simulate", &dir.path().join("o"), &[]).status.code(), Some(1));
}

#[test]
fn infinite_delta_returns_after_one_grid_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", &format!("{SMALL}delta = \"infinite\"\nchains = 6\n"));
    let out = dir.path().join("out");
    let o = run(&cfg, "couple", &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("coupling.json")).unwrap()).unwrap();
    let taus = report["taus"].as_array().unwrap();
    assert_eq!(taus.len(), 6);
    for t in taus {
        assert_eq!(t["status"], "hit");
        assert_eq!(t["time"].as_f64().unwrap(), 0.05);
    }
    assert!(out.join("summary.csv").exists() && out.join("chains.jsonl").exists());
}

#[test]
fn shared_seeds_and_equal_states_give_a_flat_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let body = format!("{SMALL}[mixing]\ncount = 8\nhorizon = 0.05\nstride = 5\nshared_seeds = true\ninitial_a = {{ index = 3 }}\ninitial_b = {{ index = 3 }}\n");
    let cfg = write_config(dir.path(), "a.toml", &body);
    let out = dir.path().join("out");
    let o = run(&cfg, "mixing", &out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = table(&out.join("gaps.csv"));
    assert_eq!(rows.len(), 1 + 11);
    // Columns: t, max_gap, its SE, then one gap per observable.
    for r in &rows[1..] {
        assert_eq!(r[1].parse::<f64>().unwrap(), 0.0);
        assert!(r[3..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0), "{r:?}");
    }
}

#[test]
fn ensemble_outputs_do_not_depend_on_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", &format!("{SMALL}[ensemble]\ncount = 6\nrandom_initial = true\n"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, "simulate", &a, &["--workers", "1"]).status.code(), Some(0));
    assert_eq!(run(&cfg, "simulate", &b, &["--workers", "3"]).status.code(), Some(0));
    for id in 0..6 {
        let name = format!("trajectories/traj_{id:05}.csv");
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap());
    }
    let c = dir.path().join("c");
    assert_eq!(run(&cfg, "simulate", &c, &["--seed", "9"]).status.code(), Some(0));
    assert_ne!(std::fs::read(a.join("trajectories/traj_00000.csv")).unwrap(), std::fs::read(c.join("trajectories/traj_00000.csv")).unwrap());
}

#[test]
fn verify_passes_on_the_default_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "a.toml", "");
    let out = dir.path().join("out");
    let o = run(&cfg, "verify", &out, &[]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_eq!(o.status.code(), Some(0), "{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    assert!(!stdout.contains("FAIL"));
    assert!(out.join("verify.json").exists());
}
