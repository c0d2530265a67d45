use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn hamflow(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamflow")).args(args).current_dir(cwd).output().expect("spawn hamflow")
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = walk(dir).into_iter().map(|p| p.strip_prefix(dir).unwrap().display().to_string()).collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

const SMALL: &str = r#"
experiment = "completeness_table"
output = "out/table"

[numeric]
steps = 20
seed = 3
"#;

#[test]
fn list_prints_every_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let out = hamflow(&["list"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in [
        "completeness_table",
        "type2_bvp",
        "hamel_rigid_body",
        "adjoint_gradient",
        "diffusion_adjoint",
        "commutativity",
        "pontryagin_lqr",
        "accelopt_rate",
        "order_study",
        "noether_drift",
        "symplecticity_scan",
    ] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn run_writes_tables_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let out = hamflow(&["run", "c.toml", "--seed", "9"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(files_in(dir.path()), ["c.toml", "out/table.csv", "out/table.manifest.json", "out/table_summary.csv"]);
    let csv = fs::read_to_string(dir.path().join("out/table.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("boundary_type,min_singular_value,condition_estimate,threshold,verdict"));
    assert_eq!(lines.count(), 5);
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/table.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["experiment"], "completeness_table");
    assert!(manifest["created"].as_str().is_some_and(|s| s.contains('T')));
}

#[test]
fn out_flag_overrides_prefix() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.toml"), SMALL).unwrap();
    let out = hamflow(&["--out", "elsewhere/x", "run", "c.toml"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("elsewhere/x.csv").exists());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn csv_bodies_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"
experiment = "type2_bvp"

[numeric]
steps = 200
seed = 5

[params]
sweep_steps = 20
vw_steps = 20
variations = 5
"#;
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    for prefix in ["a/run", "b/run"] {
        assert!(hamflow(&["run", "c.toml", "--out", prefix], dir.path()).status.success());
    }
    for suffix in [".csv", "_trajectory.csv", "_virtual_work.csv", "_summary.csv"] {
        let a = fs::read(dir.path().join(format!("a/run{suffix}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b/run{suffix}"))).unwrap();
        assert_eq!(a, b, "{suffix}");
    }
    let other = hamflow(&["run", "c.toml", "--out", "c/run", "--seed", "6"], dir.path());
    assert!(other.status.success());
    let a = fs::read(dir.path().join("a/run_virtual_work.csv")).unwrap();
    let c = fs::read(dir.path().join("c/run_virtual_work.csv")).unwrap();
    assert_ne!(a, c, "seed must reach the random variations");
}

#[test]
fn config_errors_exit_one_without_files() {
    let cases = [
        ("malformed", "experiment = \"completeness_table\"\n[numeric\n"),
        ("unknown key", "experiment = \"completeness_table\"\nextra = 1\n"),
        ("unknown param", "experiment = \"completeness_table\"\n[params]\nalpha = 1.0\n"),
        ("unknown experiment", "experiment = \"nope\"\n"),
        ("negative step", "experiment = \"noether_drift\"\n[numeric]\nh = -0.01\n"),
        ("inconsistent grid", "experiment = \"noether_drift\"\n[numeric]\nh = 0.01\nsteps = 10\nt_final = 1.0\n"),
        ("unknown scheme", "experiment = \"completeness_table\"\n[params]\nscheme = \"rk4\"\n"),
        ("wrong type", "experiment = \"completeness_table\"\n[params]\na = \"one\"\n"),
    ];
    for (what, text) in cases {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("c.toml"), text).unwrap();
        let out = hamflow(&["run", "c.toml", "--out", "out/x"], dir.path());
        assert_eq!(out.status.code(), Some(1), "{what}");
        assert!(!out.stderr.is_empty(), "{what}");
        assert_eq!(files_in(dir.path()), ["c.toml"], "{what}");
    }
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hamflow(&["run", "missing.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(hamflow(&["run"], dir.path()).status.code(), Some(1));
    assert_eq!(hamflow(&["run", "x.toml", "--seed", "minus"], dir.path()).status.code(), Some(1));
    assert_eq!(hamflow(&["frobnicate"], dir.path()).status.code(), Some(1));
}

#[test]
fn no_convergence_exits_two_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "experiment = \"pontryagin_lqr\"\noutput = \"out/lqr\"\n[numeric]\nsteps = 50\n[params]\nmax_sweeps = 2\n";
    fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = hamflow(&["run", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no convergence"));
    assert_eq!(files_in(dir.path()), ["c.toml"]);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names = Vec::new();
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        let cfg = hamflow_cli::ExperimentConfig::parse(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(p.file_stem().unwrap().to_str().unwrap(), cfg.experiment);
        names.push(cfg.experiment);
    }
    names.sort();
    let mut registered: Vec<String> = hamflow_cli::REGISTRY.iter().map(|e| e.name.to_string()).collect();
    registered.sort();
    assert_eq!(names, registered);
}
