use std::path::Path;

use hmmv_sim::harness::{
    emit_report, load_report, run_scenario, run_with_traces, Format, Policy, RunReport, Scenario, SCHEMA_VERSION,
};
use hmmv_sim::model::{AccessKind, CostModel, Tier};
use hmmv_sim::workload::Trace;

fn corpus() -> Vec<Scenario> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Scenario::load(p).unwrap()).collect()
}

fn one_vm(policy: &str, quota: u64, trace: &str) -> Scenario {
    Scenario::from_toml(&format!(
        r#"
        policy = "{policy}"
        [tracker]
        mws = 1_000_000
        [[vms]]
        mapped_pages = 1024
        initial_dram_quota = {quota}
        trace = {trace}
        "#
    ))
    .unwrap()
}

const UNIFORM_READS: &str =
    "{ uniform = { total_pages = 1024, read_ratio = 1.0, ops = 20_000, inter_access_gap = 1_000 } }";

#[test]
fn empty_trace_costs_nothing() {
    let sc = one_vm("hmmv_island", 512, UNIFORM_READS);
    let r = run_with_traces(&sc, &[Trace::default()]).unwrap();
    assert_eq!(r.vms[0].estimated_time_ns, 0);
    assert_eq!(r.vms[0].accesses, 0);
    assert_eq!(r.epochs_run, 0);
    r.check_closure().unwrap();
}

#[test]
fn all_dram_is_the_baseline() {
    let r = run_scenario(&one_vm("numa_b", 1024, UNIFORM_READS)).unwrap();
    assert_eq!(r.vms[0].slowdown_vs_dram, Some(1.0));
    assert_eq!(r.vms[0].tier_accesses, [20_000, 0]);
}

#[test]
fn all_nvm_reads_bounded_by_latency_ratio() {
    let r = run_scenario(&one_vm("numa_b", 0, UNIFORM_READS)).unwrap();
    let cost = CostModel::default();
    let bound = cost.access_latency(AccessKind::Read, Tier::Nvm) as f64 / cost.access_latency(AccessKind::Read, Tier::Dram) as f64;
    let s = r.vms[0].slowdown_vs_dram.unwrap();
    assert!(s > 1.0 && s <= bound + 1e-9, "slowdown {s}, bound {bound}");
    assert_eq!(r.vms[0].tier_accesses, [0, 20_000]);
}

#[test]
fn same_seed_same_report_other_seed_differs() {
    let sc = &corpus()[0];
    let a = run_scenario(sc).unwrap();
    assert_eq!(a, run_scenario(sc).unwrap());
    let mut other = sc.clone();
    other.seed += 1;
    assert_ne!(a, run_scenario(&other).unwrap());
}

#[test]
fn corpus_runs_close_and_never_beat_dram() {
    for sc in corpus() {
        let r = run_scenario(&sc).unwrap_or_else(|e| panic!("{}: {e}", sc.name));
        r.check_closure().unwrap_or_else(|e| panic!("{}: {e}", sc.name));
        for v in &r.vms {
            let s = v.slowdown_vs_dram.unwrap();
            assert!(s >= 1.0, "{} vm {}: slowdown {s}", sc.name, v.vm);
            assert_eq!(v.tier_accesses[0] + v.tier_accesses[1], v.accesses);
        }
        assert_eq!(r.epochs.len() as u64, r.epochs_run * r.vms.len() as u64, "{}", sc.name);
        assert_eq!(r.windows.len() as u64, r.windows_run * r.vms.len() as u64, "{}", sc.name);
    }
}

#[test]
fn migrating_policies_migrate() {
    for sc in corpus() {
        let r = run_scenario(&sc).unwrap();
        let moved: u64 = r.vms.iter().map(|v| v.bytes_migrated).sum();
        assert_eq!(moved > 0, sc.policy.migrates(), "{}: {moved} bytes", sc.name);
    }
}

#[test]
fn pool_conserves_dram() {
    let sc = corpus().into_iter().find(|s| s.policy == Policy::HmmvPool).unwrap();
    let r = run_scenario(&sc).unwrap();
    let total = sc.total_dram();
    for e in r.epochs.iter().filter(|e| e.vm == 0) {
        let quotas: u64 = r.epochs.iter().filter(|x| x.epoch == e.epoch).map(|x| x.dram_quota).sum();
        assert_eq!(quotas + e.pool_free_dram, total, "epoch {}", e.epoch);
    }
    assert!(r.epochs.iter().any(|e| e.dram_quota != sc.vms[e.vm as usize].initial_dram_quota));
}

#[test]
fn invalid_scenarios_are_validation_errors() {
    let mut sc = one_vm("hmmv_island", 512, UNIFORM_READS);
    sc.vms[0].initial_dram_quota = 4096;
    assert!(run_scenario(&sc).unwrap_err().is_validation());
    let sc = one_vm("hmmv_island", 512, UNIFORM_READS);
    assert!(run_with_traces(&sc, &[]).unwrap_err().is_validation());
    let bad = one_vm("hmmv_island", 512, "{ uniform = { total_pages = 4096, read_ratio = 1.0, ops = 10 } }");
    assert!(run_scenario(&bad).unwrap_err().is_validation());
}

fn emitted(r: &RunReport) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(r, dir.path(), &[Format::Json, Format::Csv]).unwrap();
    assert_eq!(files.len(), 4);
    dir
}

#[test]
fn json_round_trip() {
    let r = run_scenario(&corpus()[0]).unwrap();
    let dir = emitted(&r);
    assert_eq!(load_report(&dir.path().join("report.json")).unwrap(), r);
}

#[test]
fn csv_rows_and_schema_version() {
    let sc = corpus().into_iter().find(|s| s.policy == Policy::HmmvPool).unwrap();
    let r = run_scenario(&sc).unwrap();
    let dir = emitted(&r);
    let rows = |name: &str| -> Vec<csv::StringRecord> {
        let mut rd = csv::Reader::from_path(dir.path().join(name)).unwrap();
        assert_eq!(&rd.headers().unwrap()[0], "schema_version", "{name}");
        rd.records().map(|x| x.unwrap()).collect()
    };
    let quotas = rows("quotas.csv");
    assert_eq!(quotas.len() as u64, r.epochs_run * r.vms.len() as u64);
    assert_eq!(rows("windows.csv").len() as u64, r.windows_run * r.vms.len() as u64);
    assert_eq!(rows("migrations.csv").len(), r.migrations.len());
    for name in ["quotas.csv", "windows.csv", "migrations.csv"] {
        assert!(rows(name).iter().all(|row| row[0] == *SCHEMA_VERSION.to_string()));
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], SCHEMA_VERSION);
}
