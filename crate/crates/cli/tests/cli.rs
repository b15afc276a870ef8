use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hmmv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hmmv")).args(args).output().unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name).display().to_string()
}

fn out(dir: &Path, sub: &str) -> String {
    dir.join(sub).display().to_string()
}

#[test]
fn run_writes_report_and_meta() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hmmv(&["run", "--scenario", &scenario("hmmv_wp.toml"), "--out", &out(tmp.path(), "r"), "--seed", "9"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = tmp.path().join("r");
    for f in ["report.json", "windows.csv", "quotas.csv", "migrations.csv", "run_meta.json", "scenario.toml"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 9);
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("run_meta.json")).unwrap()).unwrap();
    assert!(meta["wall_clock_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn run_is_deterministic_on_disk() {
    let tmp = tempfile::tempdir().unwrap();
    for sub in ["a", "b"] {
        let o = hmmv(&["run", "--scenario", &scenario("two_list.toml"), "--out", &out(tmp.path(), sub), "--format", "json"]);
        assert!(o.status.success());
    }
    let read = |s: &str| std::fs::read(tmp.path().join(s).join("report.json")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert!(!tmp.path().join("a/quotas.csv").exists());
}

#[test]
fn sweep_and_compare_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hmmv(&[
        "sweep",
        "--scenario",
        &scenario("hmmv_linux.toml"),
        "--out",
        &out(tmp.path(), "s"),
        "--param",
        "vms.0.trace.hotspot.hot_fraction",
        "--values",
        "0.1,0.3",
        "--jobs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sweep = std::fs::read_to_string(tmp.path().join("s/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 3);

    let o = hmmv(&[
        "compare",
        "--scenario",
        &scenario("hmmv_island.toml"),
        "--out",
        &out(tmp.path(), "c"),
        "--policies",
        "numa_b,hmmv_island,mm_cache",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rd = csv::Reader::from_path(tmp.path().join("c/compare.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    // Two VMs plus a geomean row per policy.
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().filter(|r| &r[1] == "numa_b").all(|r| &r[5] == "1"));
}

#[test]
fn gen_writes_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hmmv(&["gen", "--scenario", &scenario("hmmv_pool.toml"), "--out", &out(tmp.path(), "g")]);
    assert!(o.status.success());
    for vm in 0..3 {
        assert!(tmp.path().join(format!("g/vm{vm}.trace")).exists());
    }
}

#[test]
fn validation_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = hmmv(&["run", "--scenario", &scenario("hmmv_wp.toml"), "--out", &out(tmp.path(), "x"), "--policy", "lru"]);
    assert_eq!(o.status.code(), Some(2));
    let o = hmmv(&["run", "--scenario", &scenario("hmmv_wp.toml"), "--out", &out(tmp.path(), "x"), "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "policy = \"numa_b\"\nbogus = 1\nvms = []\n").unwrap();
    let o = hmmv(&["run", "--scenario", &bad.display().to_string(), "--out", &out(tmp.path(), "x")]);
    assert_eq!(o.status.code(), Some(2));
}
