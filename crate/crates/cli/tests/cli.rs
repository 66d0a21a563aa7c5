use std::path::{Path, PathBuf};
use std::process::Command;

fn scratch(name: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("kgap-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

fn kgap(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_kgap")).args(args).env("RUST_LOG", "error").output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn selftest_exits_zero() {
    let d = scratch("selftest");
    let cfg = write_config(&d, "");
    let out = d.join("out");
    let o = kgap(&["selftest", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(&out);
    assert_eq!(m["status"], "ok");
    for check in serde_json::from_str::<serde_json::Value>(&std::fs::read_to_string(out.join("selftest.json")).unwrap()).unwrap()["checks"]
        .as_array()
        .unwrap()
    {
        assert_eq!(check["pass"], true, "{check}");
    }
}

#[test]
fn config_errors_exit_two() {
    let d = scratch("badcfg");
    let out = d.join("out");
    let out = out.to_str().unwrap();
    let hard = write_config(&d, "[kernel]\ngamma = 0.5\n");
    assert_eq!(kgap(&["assemble", "--config", &hard, "--out", out]).status.code(), Some(2));
    assert_eq!(manifest(Path::new(out))["status"], "config_error");
    let unknown = write_config(&d, "[grid]\nspacing = 1.0\n");
    assert_eq!(kgap(&["assemble", "--config", &unknown, "--out", out]).status.code(), Some(2));
    assert_eq!(kgap(&["frobnicate", "--config", &unknown, "--out", out]).status.code(), Some(2));
    let missing = d.join("absent.toml");
    assert_eq!(kgap(&["selftest", "--config", missing.to_str().unwrap(), "--out", out]).status.code(), Some(2));
}

const EQUILIBRIUM_TORUS: &str = r#"
[grid]
n_per_axis = 5
v_max = 4.0

[domain]
mode = "torus"
n_cells = 2

[time]
dt = 0.1
t_end = 2.0
initial = "equilibrium"
"#;

#[test]
fn equilibrium_energy_is_constant() {
    let d = scratch("equilibrium");
    let cfg = write_config(&d, EQUILIBRIUM_TORUS);
    let out = d.join("out");
    let o = kgap(&["evolve", "--config", &cfg, "--out", out.to_str().unwrap(), "--no-cache"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("energy_trace.csv")).unwrap();
    let e: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect();
    assert_eq!(e.len(), 21);
    for x in &e {
        assert!((x - e[0]).abs() <= 1e-10 * e[0], "{x} vs {}", e[0]);
    }
}

#[test]
fn reruns_are_bit_identical() {
    let d = scratch("rerun");
    let cfg = write_config(&d, &format!("seed = 11\n{}", EQUILIBRIUM_TORUS.replace("\"equilibrium\"", "{ random = { macro_share = 0.3 } }")));
    let a = d.join("a");
    let b = d.join("b");
    for dir in [&a, &b] {
        let o = kgap(&["evolve", "--config", &cfg, "--out", dir.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ma, mb) = (manifest(&a), manifest(&b));
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(ma["cache"], "miss");
    let again = kgap(&["evolve", "--config", &cfg, "--out", a.to_str().unwrap()]);
    assert_eq!(again.status.code(), Some(0));
    let mc = manifest(&a);
    assert_eq!(mc["cache"], "hit");
    assert_eq!(mc["outputs"], mb["outputs"]);
}

#[test]
fn default_sweep_has_one_row_per_v_max() {
    let d = scratch("sweep");
    let cfg = write_config(&d, "");
    let out = d.join("out");
    let o = kgap(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(rows, vec![4.0, 6.0, 8.0]);
}
