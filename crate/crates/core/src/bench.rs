//! Throughput and overhead arithmetic, per-run reports, and JSON/CSV
//! emission.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nf::Scenario;
use crate::pkt::{MAX_FRAME_LEN, MIN_FRAME_LEN};
use crate::tee::{BufferMode, GateSnapshot};
use crate::topo::{Mode, RunResult};

/// Preamble (8) plus inter-frame gap (12) bytes per frame on the wire.
pub const WIRE_OVERHEAD_BYTES: usize = 20;

pub const CSV_COLUMNS: [&str; 13] = [
    "scenario",
    "topology",
    "mode",
    "frame_size",
    "mpps",
    "wire_gbps",
    "overhead_pct",
    "ecalls",
    "ocalls",
    "bytes_out",
    "bytes_in",
    "paging",
    "drops",
];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("wire throughput undefined for mpps={mpps}, frame size {frame_size}")]
    Domain { mpps: f64, frame_size: usize },
    #[error("overhead undefined for a vanilla rate of {0} MPPS")]
    DivisionDomain(f64),
    #[error("no vanilla run matches {scenario} {topology} at {frame_size} B")]
    MissingBaseline {
        scenario: String,
        topology: String,
        frame_size: usize,
    },
    #[error("report has no runs")]
    Empty,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Gbps on the wire for `mpps` frames of `frame_size` bytes.
pub fn wire_throughput(mpps: f64, frame_size: usize) -> Result<f64, BenchError> {
    if !(mpps >= 0.0 && mpps.is_finite()) || !(MIN_FRAME_LEN..=MAX_FRAME_LEN).contains(&frame_size) {
        return Err(BenchError::Domain { mpps, frame_size });
    }
    Ok(mpps * (frame_size + WIRE_OVERHEAD_BYTES) as f64 * 8.0 / 1000.0)
}

/// Percent of the vanilla rate lost by the trusted variant. Negative when
/// the trusted run was faster.
pub fn sgx_overhead(vanilla_mpps: f64, trusted_mpps: f64) -> Result<f64, BenchError> {
    if vanilla_mpps.is_nan() || vanilla_mpps <= 0.0 {
        return Err(BenchError::DivisionDomain(vanilla_mpps));
    }
    Ok(100.0 * (vanilla_mpps - trusted_mpps) / vanilla_mpps)
}

/// One published (MPPS, Gbps) cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaperCell {
    pub table: u8,
    pub column: &'static str,
    pub frame_size: usize,
    pub mpps: f64,
    pub gbps: f64,
}

const fn cell(table: u8, column: &'static str, frame_size: usize, mpps: f64, gbps: f64) -> PaperCell {
    PaperCell {
        table,
        column,
        frame_size,
        mpps,
        gbps,
    }
}

/// Every throughput cell of the published L2/L3 forwarding table (3) and
/// the two load-balancer tables (4: 0 and 5 servers, 5: 10 and 15 servers),
/// verbatim.
pub const PAPER_CELLS: [PaperCell; 64] = [
    cell(3, "L2 vanilla", 64, 21.80, 14.65),
    cell(3, "L2 trusted", 64, 21.33, 14.33),
    cell(3, "L3 vanilla", 64, 21.89, 14.71),
    cell(3, "L3 trusted", 64, 21.50, 14.45),
    cell(3, "L2 vanilla", 128, 21.34, 25.30),
    cell(3, "L2 trusted", 128, 20.95, 24.80),
    cell(3, "L3 vanilla", 128, 21.45, 25.30),
    cell(3, "L3 trusted", 128, 21.19, 25.09),
    cell(3, "L2 vanilla", 256, 13.75, 30.37),
    cell(3, "L2 trusted", 256, 13.75, 30.36),
    cell(3, "L3 vanilla", 256, 13.83, 30.54),
    cell(3, "L3 trusted", 256, 13.84, 30.56),
    cell(3, "L2 vanilla", 512, 8.67, 36.91),
    cell(3, "L2 trusted", 512, 8.68, 36.93),
    cell(3, "L3 vanilla", 512, 8.68, 36.93),
    cell(3, "L3 trusted", 512, 8.68, 36.93),
    cell(4, "0 servers vanilla", 64, 17.51, 11.76),
    cell(4, "0 servers trusted no copy", 64, 16.37, 11.00),
    cell(4, "0 servers trusted copy", 64, 15.73, 10.57),
    cell(4, "5 servers vanilla", 64, 16.51, 11.09),
    cell(4, "5 servers trusted no copy", 64, 11.88, 7.98),
    cell(4, "5 servers trusted copy", 64, 9.96, 6.69),
    cell(4, "0 servers vanilla", 128, 17.38, 20.58),
    cell(4, "0 servers trusted no copy", 128, 16.31, 19.31),
    cell(4, "0 servers trusted copy", 128, 15.68, 18.56),
    cell(4, "5 servers vanilla", 128, 16.39, 19.41),
    cell(4, "5 servers trusted no copy", 128, 11.83, 14.01),
    cell(4, "5 servers trusted copy", 128, 9.90, 11.72),
    cell(4, "0 servers vanilla", 256, 14.17, 31.29),
    cell(4, "0 servers trusted no copy", 256, 14.18, 31.30),
    cell(4, "0 servers trusted copy", 256, 14.18, 33.31),
    cell(4, "5 servers vanilla", 256, 14.17, 31.30),
    cell(4, "5 servers trusted no copy", 256, 11.79, 26.03),
    cell(4, "5 servers trusted copy", 256, 9.80, 21.65),
    cell(4, "0 servers vanilla", 512, 8.99, 38.26),
    cell(4, "0 servers trusted no copy", 512, 8.98, 38.23),
    cell(4, "0 servers trusted copy", 512, 8.98, 38.24),
    cell(4, "5 servers vanilla", 512, 8.99, 38.28),
    cell(4, "5 servers trusted no copy", 512, 8.99, 38.27),
    cell(4, "5 servers trusted copy", 512, 8.99, 38.27),
    cell(5, "10 servers vanilla", 64, 16.43, 11.04),
    cell(5, "10 servers trusted no copy", 64, 11.68, 7.85),
    cell(5, "10 servers trusted copy", 64, 9.74, 6.55),
    cell(5, "15 servers vanilla", 64, 16.37, 11.00),
    cell(5, "15 servers trusted no copy", 64, 11.56, 7.77),
    cell(5, "15 servers trusted copy", 64, 9.50, 6.38),
    cell(5, "10 servers vanilla", 128, 16.32, 19.33),
    cell(5, "10 servers trusted no copy", 128, 11.64, 13.79),
    cell(5, "10 servers trusted copy", 128, 9.69, 11.47),
    cell(5, "15 servers vanilla", 128, 16.30, 19.30),
    cell(5, "15 servers trusted no copy", 128, 11.52, 13.64),
    cell(5, "15 servers trusted copy", 128, 9.46, 11.20),
    cell(5, "10 servers vanilla", 256, 14.17, 31.30),
    cell(5, "10 servers trusted no copy", 256, 11.50, 25.40),
    cell(5, "10 servers trusted copy", 256, 9.64, 21.29),
    cell(5, "15 servers vanilla", 256, 14.17, 31.29),
    cell(5, "15 servers trusted no copy", 256, 11.46, 25.30),
    cell(5, "15 servers trusted copy", 256, 9.42, 20.81),
    cell(5, "10 servers vanilla", 512, 8.99, 38.30),
    cell(5, "10 servers trusted no copy", 512, 8.99, 38.30),
    cell(5, "10 servers trusted copy", 512, 8.99, 38.30),
    cell(5, "15 servers vanilla", 512, 8.99, 38.25),
    cell(5, "15 servers trusted no copy", 512, 8.98, 38.22),
    cell(5, "15 servers trusted copy", 512, 8.98, 38.23),
];

/// A vanilla/trusted MPPS pair with the overhead the text quotes for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuotedOverhead {
    pub what: &'static str,
    pub vanilla_mpps: f64,
    pub trusted_mpps: f64,
    pub quoted_pct: f64,
}

pub const QUOTED_OVERHEADS: [QuotedOverhead; 8] = [
    QuotedOverhead { what: "L2 64 B", vanilla_mpps: 21.80, trusted_mpps: 21.33, quoted_pct: 2.1 },
    QuotedOverhead { what: "L3 64 B", vanilla_mpps: 21.89, trusted_mpps: 21.50, quoted_pct: 1.8 },
    QuotedOverhead { what: "L2 128 B", vanilla_mpps: 21.34, trusted_mpps: 20.95, quoted_pct: 1.8 },
    QuotedOverhead { what: "L3 128 B", vanilla_mpps: 21.45, trusted_mpps: 21.19, quoted_pct: 1.2 },
    QuotedOverhead { what: "LB copy 64 B", vanilla_mpps: 17.51, trusted_mpps: 15.73, quoted_pct: 10.1 },
    QuotedOverhead { what: "LB no copy 64 B", vanilla_mpps: 17.51, trusted_mpps: 16.37, quoted_pct: 6.5 },
    QuotedOverhead { what: "LB copy 128 B", vanilla_mpps: 17.38, trusted_mpps: 15.68, quoted_pct: 9.7 },
    QuotedOverhead { what: "LB no copy 128 B", vanilla_mpps: 17.38, trusted_mpps: 16.31, quoted_pct: 6.2 },
];

/// Label used in the `mode` column: load-balancer runs carry their buffer
/// mode because copy and no-copy are distinct configurations.
pub fn mode_label(scenario: Scenario, mode: Mode, buffer_mode: BufferMode) -> String {
    match (mode, scenario) {
        (Mode::Vanilla, _) => "vanilla".into(),
        (Mode::Trusted, Scenario::LbServer) => match buffer_mode {
            BufferMode::TrustedCopy => "trusted-copy".into(),
            BufferMode::Untrusted => "trusted-nocopy".into(),
        },
        (Mode::Trusted, _) => "trusted".into(),
    }
}

/// One configuration's outcome, averaged over its repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub topology: String,
    pub mode: String,
    pub frame_size: usize,
    pub icv: bool,
    pub repetitions: usize,
    /// Measurement window per repetition.
    pub duration_s: f64,
    pub rx_frames: u64,
    pub tx_frames: u64,
    pub drops: BTreeMap<String, u64>,
    pub drops_total: u64,
    pub mpps: f64,
    pub mpps_samples: Vec<f64>,
    pub wire_gbps: f64,
    pub overhead_pct: Option<f64>,
    pub gate: GateSnapshot,
    pub oversubscribed: bool,
    pub workers: usize,
}

impl RunReport {
    /// Folds repetitions of one configuration. Counters are summed, the
    /// rate is the mean.
    pub fn from_runs(runs: &[RunResult], buffer_mode: BufferMode, icv: bool) -> Result<Self, BenchError> {
        let first = runs.first().ok_or(BenchError::Empty)?;
        let samples: Vec<f64> = runs.iter().map(RunResult::mpps).collect();
        let mpps = samples.iter().sum::<f64>() / samples.len() as f64;
        let mut drops = BTreeMap::new();
        for r in runs {
            for (reason, n) in &r.drops {
                *drops.entry(reason.as_str().to_string()).or_insert(0) += n;
            }
        }
        let mut topology = first.topology.clone();
        if first.scenario.is_encrypted() && !icv {
            topology.push_str(",no-icv");
        }
        Ok(RunReport {
            scenario: first.scenario,
            topology,
            mode: mode_label(first.scenario, first.mode, buffer_mode),
            frame_size: first.frame_size,
            icv,
            repetitions: runs.len(),
            duration_s: runs.iter().map(|r| r.window_secs).sum::<f64>() / runs.len() as f64,
            rx_frames: runs.iter().map(|r| r.rx_frames).sum(),
            tx_frames: runs.iter().map(|r| r.tx_frames).sum(),
            drops,
            drops_total: runs.iter().map(|r| r.drops_total).sum(),
            mpps,
            mpps_samples: samples,
            wire_gbps: wire_throughput(mpps, first.frame_size)?,
            overhead_pct: None,
            gate: runs.iter().map(|r| r.gate_total).sum(),
            oversubscribed: runs.iter().any(|r| r.oversubscribed),
            workers: first.workers,
        })
    }

    pub fn is_vanilla(&self) -> bool {
        self.mode == "vanilla"
    }

    pub fn conserved(&self) -> bool {
        self.rx_frames == self.tx_frames + self.drops_total
    }
}

/// Overhead of `report` against the matching vanilla row.
pub fn overhead_against(report: &RunReport, all: &[RunReport]) -> Result<f64, BenchError> {
    let base = all
        .iter()
        .find(|v| {
            v.is_vanilla()
                && v.scenario == report.scenario
                && v.topology == report.topology
                && v.frame_size == report.frame_size
        })
        .ok_or_else(|| BenchError::MissingBaseline {
            scenario: report.scenario.to_string(),
            topology: report.topology.clone(),
            frame_size: report.frame_size,
        })?;
    sgx_overhead(base.mpps, report.mpps)
}

/// Fills `overhead_pct` for every trusted row; rows without a vanilla match
/// keep an empty overhead and a warning is logged.
pub fn fill_overheads(reports: &mut [RunReport]) {
    let snapshot = reports.to_vec();
    for r in reports.iter_mut().filter(|r| !r.is_vanilla()) {
        match overhead_against(r, &snapshot) {
            Ok(o) => r.overhead_pct = Some(o),
            Err(e) => warn!("{e}; overhead left empty"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct HostInfo {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub aes_ni: bool,
    pub crate_version: String,
}

impl HostInfo {
    pub fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        let aes_ni = std::arch::is_x86_feature_detected!("aes");
        #[cfg(not(target_arch = "x86_64"))]
        let aes_ni = false;
        HostInfo {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            aes_ni,
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub host: HostInfo,
    pub config: serde_json::Value,
    pub runs: Vec<RunReport>,
}

/// CSV row in the fixed column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub scenario: String,
    pub topology: String,
    pub mode: String,
    pub frame_size: usize,
    pub mpps: String,
    pub wire_gbps: String,
    pub overhead_pct: String,
    pub ecalls: u64,
    pub ocalls: u64,
    pub bytes_out: u64,
    pub bytes_in: u64,
    pub paging: u64,
    pub drops: u64,
}

impl From<&RunReport> for CsvRow {
    fn from(r: &RunReport) -> Self {
        CsvRow {
            scenario: r.scenario.to_string(),
            topology: r.topology.clone(),
            mode: r.mode.clone(),
            frame_size: r.frame_size,
            mpps: format!("{:.2}", r.mpps),
            wire_gbps: format!("{:.2}", r.wire_gbps),
            overhead_pct: r.overhead_pct.map(|o| format!("{o:.2}")).unwrap_or_default(),
            ecalls: r.gate.ecalls,
            ocalls: r.gate.ocalls,
            bytes_out: r.gate.bytes_copied_out,
            bytes_in: r.gate.bytes_copied_in,
            paging: r.gate.paging_events,
            drops: r.drops_total,
        }
    }
}

pub fn write_csv(reports: &[RunReport], w: impl Write) -> Result<(), BenchError> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        out.serialize(CsvRow::from(r))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(r: impl io::Read) -> Result<Vec<CsvRow>, BenchError> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

/// Computes overheads, then writes `<stem>.json` and `<stem>.csv`.
/// Returns the two paths.
pub fn emit_report(
    mut runs: Vec<RunReport>,
    config: serde_json::Value,
    stem: &Path,
) -> Result<(Report, std::path::PathBuf, std::path::PathBuf), BenchError> {
    if runs.is_empty() {
        return Err(BenchError::Empty);
    }
    fill_overheads(&mut runs);
    let report = Report {
        host: HostInfo::detect(),
        config,
        runs,
    };
    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let json = stem.with_extension("json");
    let csv = stem.with_extension("csv");
    let mut jw = BufWriter::new(File::create(&json)?);
    serde_json::to_writer_pretty(&mut jw, &report)?;
    jw.write_all(b"\n")?;
    jw.flush()?;
    write_csv(&report.runs, BufWriter::new(File::create(&csv)?))?;
    Ok((report, json, csv))
}
