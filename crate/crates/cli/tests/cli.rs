//! Drives the `sotlab` binary end to end through temporary config files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn sotlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sotlab"))
        .args(args)
        .env_remove("SOTLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", config.to_str().unwrap(), "--output", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    sotlab(&args)
}

fn result_of(path: &Path) -> serde_json::Value {
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    doc["result"].clone()
}

const SIMULATE: &str = r#"
seed = 11

[experiment.simulate]
grid = { dim = 1, n = 4 }
mu = { dirac = 0 }
target = { poisson_jump = { nu0 = { dirac = 0 }, intensity = { constant = 2.0 }, jump = { translate = [0.5] } } }
policy = "replanning"
t0 = 0.5
horizon = 1.0
n_paths = 200
"#;

#[test]
fn identical_measures_are_at_distance_zero() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "w.toml",
        "[experiment.wasserstein]\ngrid = { dim = 2, n = 3 }\nmu = \"uniform\"\nnu = \"uniform\"\n",
    );
    let out = dir.path().join("w.json");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result_of(&out);
    assert_eq!(r["distance"].as_f64(), Some(0.0));
}

#[test]
fn deterministic_value_of_two_diracs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "d.toml",
        "[experiment.det-value]\ngrid = { dim = 1, n = 4 }\nmu = { dirac = 0 }\nnu = { dirac = 2 }\nt = 0.0\nhorizon = 1.0\n",
    );
    let out = dir.path().join("d.json");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = result_of(&out);
    // half a turn, quadratic cost with scale one half, unit horizon
    assert!((r["u_det"].as_f64().unwrap() - 0.125).abs() < 1e-15);
    assert!((r["du_dt"].as_f64().unwrap() - 0.125).abs() < 1e-15);
}

#[test]
fn simulate_output_is_reproducible_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SIMULATE);
    let outs: Vec<Vec<u8>> = [["--threads", "1"], ["--threads", "4"], ["--threads", "1"]]
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let out = dir.path().join(format!("s{i}.json"));
            let o = run(&cfg, &out, t);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            std::fs::read(&out).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[0], outs[2]);

    let other = dir.path().join("seeded.json");
    assert!(run(&cfg, &other, &["--seed", "12"]).status.success());
    assert_ne!(std::fs::read(&other).unwrap(), outs[0]);
}

#[test]
fn thread_count_is_read_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "s.toml", SIMULATE);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert!(run(&cfg, &a, &["--threads", "2"]).status.success());
    let o = Command::new(env!("CARGO_BIN_EXE_sotlab"))
        .args(["run", cfg.to_str().unwrap(), "--output", b.to_str().unwrap()])
        .env("SOTLAB_THREADS", "3")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn csv_outputs_end_with_a_metadata_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "b.toml",
        r#"
seed = 5

[experiment.blowup-probe]
grid = { dim = 1, n = 4 }
nu = { dirac = 0 }
jump = { translate = [0.5] }
intensity = 2.0
horizon = 1.0
t_list = [0.0, 0.5]
"#,
    );
    let out = dir.path().join("b.csv");
    let o = run(&cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,T_minus_t,epsilon,p_one_jump,lower_bound");
    // two start times times four default cutoffs
    assert_eq!(lines.len(), 1 + 8 + 1);
    let meta = lines.last().unwrap();
    assert!(meta.starts_with("# config_hash="), "{meta}");
    assert!(meta.ends_with(" seed=5"), "{meta}");
}

#[test]
fn malformed_configs_exit_with_one() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("x.json");
    let typo = write_config(dir.path(), "typo.toml", &SIMULATE.replace("n_paths", "npaths"));
    let o = run(&typo, &out, &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("npaths"));

    let bad_value = write_config(dir.path(), "neg.toml", &SIMULATE.replace("horizon = 1.0", "horizon = -1.0"));
    assert_eq!(run(&bad_value, &out, &[]).status.code(), Some(1));

    assert_eq!(run(&dir.path().join("missing.toml"), &out, &[]).status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn list_names_every_experiment() {
    let o = sotlab(&["list"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let names: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with(' '))
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(
        names,
        [
            "wasserstein",
            "det-value",
            "simulate",
            "gap-curve",
            "blowup-probe",
            "steering-check",
            "hjb-residual",
            "superdiff-test"
        ]
    );
    assert_eq!(sotlab(&["--list"]).stdout, text.as_bytes());
    let help = String::from_utf8(sotlab(&["--help"]).stdout).unwrap();
    assert!(help.contains("[experiment.superdiff-test]"));
}
