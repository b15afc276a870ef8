//! Writes a report as one JSON document plus flat CSV series.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::migrator::Protocol;
use crate::model::{SimTime, Tier, VmId};

use super::report::{MoveKind, RunReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Format> {
        match s.trim() {
            "json" => Ok(Format::Json),
            "csv" => Ok(Format::Csv),
            other => Err(Error::Validation(format!("unknown output format {other:?}"))),
        }
    }
}

#[derive(Serialize)]
struct WindowRow {
    schema_version: u32,
    window: u64,
    end_ns: SimTime,
    vm: VmId,
    tracking: bool,
    gpt_pages_scanned: u64,
    pages_examined: u64,
    gpt_pages_touched: u64,
    observations: u64,
    scan_ns: u64,
}

#[derive(Serialize)]
struct QuotaRow {
    schema_version: u32,
    epoch: u64,
    end_ns: SimTime,
    vm: VmId,
    dram_quota: u64,
    dram_pages: u64,
    pool_free_dram: u64,
    pool_target: Option<u64>,
    bytes_migrated: u64,
    time_ns: u64,
    slowdown: Option<f64>,
    tracking: bool,
}

#[derive(Serialize)]
struct MigrationRow {
    schema_version: u32,
    vm: VmId,
    kind: MoveKind,
    protocol: Option<Protocol>,
    start: SimTime,
    end: SimTime,
    src: Tier,
    dst: Tier,
    pages: u64,
    dirty_recopied: u64,
    copy_ns: u64,
    bytes: u64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `report.json` and/or `windows.csv`, `quotas.csv`, and
/// `migrations.csv` into `dir`, creating it if needed. Returns the paths.
pub fn emit_report(report: &RunReport, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let v = report.schema_version;
    let mut out = Vec::new();
    if formats.contains(&Format::Json) {
        let p = dir.join("report.json");
        std::fs::write(&p, serde_json::to_string_pretty(report)?)?;
        out.push(p);
    }
    if formats.contains(&Format::Csv) {
        let p = dir.join("windows.csv");
        write_csv(
            &p,
            report.windows.iter().map(|w| WindowRow {
                schema_version: v,
                window: w.window,
                end_ns: w.end_ns,
                vm: w.vm,
                tracking: w.tracking,
                gpt_pages_scanned: w.gpt_pages_scanned,
                pages_examined: w.pages_examined,
                gpt_pages_touched: w.gpt_pages_touched,
                observations: w.observations,
                scan_ns: w.scan_ns,
            }),
        )?;
        out.push(p);
        let p = dir.join("quotas.csv");
        write_csv(
            &p,
            report.epochs.iter().map(|e| QuotaRow {
                schema_version: v,
                epoch: e.epoch,
                end_ns: e.end_ns,
                vm: e.vm,
                dram_quota: e.dram_quota,
                dram_pages: e.dram_pages,
                pool_free_dram: e.pool_free_dram,
                pool_target: e.pool_target,
                bytes_migrated: e.bytes_migrated,
                time_ns: e.time_ns,
                slowdown: e.slowdown,
                tracking: e.tracking,
            }),
        )?;
        out.push(p);
        let p = dir.join("migrations.csv");
        write_csv(
            &p,
            report.migrations.iter().map(|m| MigrationRow {
                schema_version: v,
                vm: m.vm,
                kind: m.kind,
                protocol: m.protocol,
                start: m.start,
                end: m.end,
                src: m.src,
                dst: m.dst,
                pages: m.pages,
                dirty_recopied: m.dirty_recopied,
                copy_ns: m.copy_ns,
                bytes: m.bytes,
            }),
        )?;
        out.push(p);
    }
    Ok(out)
}

/// Reads back a `report.json`.
pub fn load_report(path: &Path) -> Result<RunReport> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}
