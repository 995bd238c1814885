//! Run configuration, matrix expansion and sequential execution.
//!
//! A [`RunConfig`] is built from defaults, an optional `key = value` file and
//! then command-line overrides, all through [`RunConfig::set`]. It expands
//! into one [`TopoConfig`] per (scenario, topology, frame size, mode) cell;
//! every cell is validated before the first one runs.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{self, BenchError, Report, RunReport};
use crate::nf::Scenario;
use crate::ring::{DEFAULT_BURST, DEFAULT_RING_CAPACITY};
use crate::tee::{BufferMode, DEFAULT_EPC_LIMIT};
use crate::topo::{self, Mode, RunLimit, TopoConfig, TopoError, TopologyKind};
use crate::traffic;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("{field}: {message}")]
    Config { field: String, message: String },
    #[error("{cell}: {source}")]
    Topology {
        cell: String,
        #[source]
        source: TopoError,
    },
    #[error(transparent)]
    Report(#[from] BenchError),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn config_err(field: &str, message: impl Into<String>) -> RunnerError {
    RunnerError::Config {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyChoice {
    Baseline,
    Parallel,
    Pipeline,
    Lb,
}

impl FromStr for TopologyChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(TopologyChoice::Baseline),
            "parallel" => Ok(TopologyChoice::Parallel),
            "pipeline" => Ok(TopologyChoice::Pipeline),
            "lb" | "load-balancer" => Ok(TopologyChoice::Lb),
            other => Err(format!("unknown topology '{other}' (baseline | parallel | pipeline | lb)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSel {
    Vanilla,
    Trusted,
    Both,
}

impl FromStr for ModeSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vanilla" => Ok(ModeSel::Vanilla),
            "trusted" => Ok(ModeSel::Trusted),
            "both" => Ok(ModeSel::Both),
            other => Err(format!("unknown mode '{other}' (vanilla | trusted | both)")),
        }
    }
}

/// Everything needed to reproduce a matrix of runs, seed included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub scenarios: Vec<Scenario>,
    /// `None` picks baseline, or parallel when more than one enclave count
    /// is requested; lb-server always uses the load-balancer topology.
    pub topology: Option<TopologyChoice>,
    pub enclaves: Vec<usize>,
    pub servers: Vec<usize>,
    pub stages: usize,
    pub sizes: Vec<usize>,
    pub mode: ModeSel,
    pub buffer_modes: Vec<BufferMode>,
    pub icv: bool,
    pub two_per_server: bool,
    pub batch: usize,
    pub ring_capacity: usize,
    pub epc_limit: u64,
    pub seed: u64,
    pub cardinality: u32,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub reps: usize,
    /// Admit exactly this many frames per repetition instead of running for
    /// a duration.
    pub frames: Option<u64>,
    pub workers: Option<usize>,
    pub oversubscribe: bool,
    pub latency_ns: u64,
    /// Report stem; `.json` and `.csv` are appended.
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenarios: vec![
                Scenario::L2Fwd,
                Scenario::L3Fwd,
                Scenario::L2FwdEnc,
                Scenario::L3FwdEnc,
                Scenario::LbServer,
            ],
            topology: None,
            enclaves: vec![1],
            servers: vec![0],
            stages: 2,
            sizes: vec![64, 128, 256, 512],
            mode: ModeSel::Both,
            buffer_modes: vec![BufferMode::TrustedCopy, BufferMode::Untrusted],
            icv: true,
            two_per_server: false,
            batch: DEFAULT_BURST,
            ring_capacity: DEFAULT_RING_CAPACITY,
            epc_limit: DEFAULT_EPC_LIMIT,
            seed: 1,
            cardinality: traffic::DEFAULT_CARDINALITY,
            duration_s: 10.0,
            warmup_s: 1.0,
            reps: 3,
            frames: None,
            workers: None,
            oversubscribe: false,
            latency_ns: 0,
            out: PathBuf::from("tdp-report"),
        }
    }
}

fn parse_one<T: FromStr>(field: &str, v: &str) -> Result<T, RunnerError>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| config_err(field, format!("cannot parse '{}': {e}", v.trim())))
}

fn parse_list<T: FromStr>(field: &str, v: &str) -> Result<Vec<T>, RunnerError>
where
    T::Err: std::fmt::Display,
{
    let items: Vec<T> = v
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_one(field, s))
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err(config_err(field, "empty list"));
    }
    Ok(items)
}

fn parse_bool(field: &str, v: &str) -> Result<bool, RunnerError> {
    match v.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(config_err(field, format!("expected a boolean, got '{other}'"))),
    }
}

/// Byte count with an optional K, M or G (binary) suffix.
fn parse_bytes(field: &str, v: &str) -> Result<u64, RunnerError> {
    let v = v.trim();
    let (num, mult) = match v.char_indices().last() {
        Some((i, 'K' | 'k')) => (&v[..i], 1u64 << 10),
        Some((i, 'M' | 'm')) => (&v[..i], 1 << 20),
        Some((i, 'G' | 'g')) => (&v[..i], 1 << 30),
        _ => (v, 1),
    };
    let n: u64 = parse_one(field, num)?;
    n.checked_mul(mult)
        .ok_or_else(|| config_err(field, format!("'{v}' overflows")))
}

impl RunConfig {
    /// Applies one `key = value` setting. Keys use the flag spelling without
    /// the leading dashes; underscores are accepted in place of dashes.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), RunnerError> {
        let key = key.trim().replace('_', "-");
        let k = key.as_str();
        match k {
            "scenario" | "scenarios" => self.scenarios = parse_list(k, value)?,
            "topology" => self.topology = Some(parse_one(k, value)?),
            "enclaves" => self.enclaves = parse_list(k, value)?,
            "servers" => self.servers = parse_list(k, value)?,
            "stages" => self.stages = parse_one(k, value)?,
            "sizes" => self.sizes = parse_list(k, value)?,
            "mode" => self.mode = parse_one(k, value)?,
            "buffer-mode" => self.buffer_modes = parse_list(k, value)?,
            "icv" => self.icv = parse_bool(k, value)?,
            "no-icv" => self.icv = !parse_bool(k, value)?,
            "two-enclaves-per-server" => self.two_per_server = parse_bool(k, value)?,
            "batch" => self.batch = parse_one(k, value)?,
            "ring-cap" => self.ring_capacity = parse_one(k, value)?,
            "epc-limit" => self.epc_limit = parse_bytes(k, value)?,
            "seed" => self.seed = parse_one(k, value)?,
            "cardinality" => self.cardinality = parse_one(k, value)?,
            "duration" => self.duration_s = parse_one(k, value)?,
            "warmup" => self.warmup_s = parse_one(k, value)?,
            "reps" => self.reps = parse_one(k, value)?,
            "frames" => self.frames = Some(parse_one(k, value)?),
            "workers" => self.workers = Some(parse_one(k, value)?),
            "oversubscribe" => self.oversubscribe = parse_bool(k, value)?,
            "latency-ns" => self.latency_ns = parse_one(k, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            _ => return Err(config_err(k, "unknown setting")),
        }
        Ok(())
    }

    /// Applies a flat `key = value` document. Blank lines and `#` comments
    /// are ignored.
    pub fn apply_str(&mut self, text: &str) -> Result<(), RunnerError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(&format!("line {}", n + 1), "expected key = value"))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), RunnerError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.apply_str(&text)
    }

    fn modes(&self) -> Vec<Mode> {
        match self.mode {
            ModeSel::Vanilla => vec![Mode::Vanilla],
            ModeSel::Trusted => vec![Mode::Trusted],
            ModeSel::Both => vec![Mode::Vanilla, Mode::Trusted],
        }
    }

    fn kinds(&self, scenario: Scenario) -> Result<Vec<TopologyKind>, RunnerError> {
        if scenario == Scenario::LbServer {
            if matches!(self.topology, Some(t) if t != TopologyChoice::Lb) {
                return Err(config_err("topology", "lb-server runs on the lb topology"));
            }
            return Ok(self
                .servers
                .iter()
                .map(|&servers| TopologyKind::LoadBalancer {
                    servers,
                    two_per_server: self.two_per_server,
                })
                .collect());
        }
        let choice = self.topology.unwrap_or(if self.enclaves.iter().any(|&n| n != 1) {
            TopologyChoice::Parallel
        } else {
            TopologyChoice::Baseline
        });
        Ok(match choice {
            TopologyChoice::Baseline => vec![TopologyKind::Baseline],
            TopologyChoice::Parallel => self
                .enclaves
                .iter()
                .map(|&enclaves| TopologyKind::Parallel { enclaves })
                .collect(),
            TopologyChoice::Pipeline => vec![TopologyKind::Pipeline { stages: self.stages }],
            TopologyChoice::Lb => {
                return Err(config_err("topology", format!("lb only applies to lb-server, not {scenario}")))
            }
        })
    }

    fn check_fields(&self) -> Result<(), RunnerError> {
        let nonempty = |field: &str, n: usize| {
            if n == 0 {
                Err(config_err(field, "empty list"))
            } else {
                Ok(())
            }
        };
        nonempty("scenario", self.scenarios.len())?;
        nonempty("sizes", self.sizes.len())?;
        nonempty("enclaves", self.enclaves.len())?;
        nonempty("servers", self.servers.len())?;
        nonempty("buffer-mode", self.buffer_modes.len())?;
        if let Some(s) = self
            .sizes
            .iter()
            .find(|&&s| !(traffic::MIN_SIZE..=traffic::MAX_SIZE).contains(&s))
        {
            return Err(config_err(
                "sizes",
                format!("{s} outside {}..={}", traffic::MIN_SIZE, traffic::MAX_SIZE),
            ));
        }
        if self.reps == 0 {
            return Err(config_err("reps", "must be at least 1"));
        }
        if self.frames.is_none() && !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(config_err("duration", "must be a positive number of seconds"));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s.is_finite()) {
            return Err(config_err("warmup", "must be a non-negative number of seconds"));
        }
        if self.frames == Some(0) {
            return Err(config_err("frames", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(config_err("workers", "must be at least 1"));
        }
        if self.cardinality == 0 {
            return Err(config_err("cardinality", "must be at least 1"));
        }
        Ok(())
    }

    /// Expands and validates the whole matrix. Trusted cells follow the
    /// vanilla cell they are compared against; buffer modes only multiply
    /// load-balancer cells since no other scenario makes lookup calls.
    pub fn matrix(&self) -> Result<Vec<TopoConfig>, RunnerError> {
        self.check_fields()?;
        let mut cells = Vec::new();
        for &scenario in &self.scenarios {
            for kind in self.kinds(scenario)? {
                for &size in &self.sizes {
                    for mode in self.modes() {
                        let buffer_modes: &[BufferMode] = match (mode, scenario) {
                            (Mode::Trusted, Scenario::LbServer) => &self.buffer_modes,
                            _ => &self.buffer_modes[..1],
                        };
                        for &bm in buffer_modes {
                            let mut c = TopoConfig::new(scenario, kind, mode, size);
                            c.buffer_mode = bm;
                            c.icv = self.icv;
                            c.burst = self.batch;
                            c.ring_capacity = self.ring_capacity;
                            c.epc_limit = self.epc_limit;
                            c.seed = self.seed;
                            c.cardinality = self.cardinality;
                            c.transition_latency_ns = self.latency_ns;
                            c.workers = self.workers;
                            c.oversubscribe = self.oversubscribe;
                            cells.push(c);
                        }
                    }
                }
            }
        }
        for c in &cells {
            c.validate().map_err(|e| field_error(&e))?;
            let needed = 1 + c.kind.processing_units();
            let available = c.workers.unwrap_or_else(topo::available_workers);
            if needed > available && !c.oversubscribe {
                return Err(config_err(
                    "workers",
                    format!(
                        "{} {} needs {needed} workers, {available} available (pass --oversubscribe to time-slice)",
                        c.scenario,
                        c.kind.describe()
                    ),
                ));
            }
        }
        Ok(cells)
    }

    pub fn limit(&self) -> RunLimit {
        match self.frames {
            Some(n) => RunLimit::Frames(n),
            None => RunLimit::Duration {
                warmup: Duration::from_secs_f64(self.warmup_s),
                measure: Duration::from_secs_f64(self.duration_s),
            },
        }
    }
}

/// Maps a topology validation message onto the flag it concerns.
fn field_error(e: &TopoError) -> RunnerError {
    let msg = e.to_string();
    let field = ["ring-cap", "batch", "epc-limit", "servers", "enclaves", "stages", "frame size"]
        .into_iter()
        .find(|f| msg.contains(f))
        .map_or("topology", |f| if f == "frame size" { "sizes" } else { f });
    config_err(field, msg)
}

fn cell_label(c: &TopoConfig) -> String {
    format!(
        "{} {} {} {}B",
        c.scenario,
        c.kind.describe(),
        bench::mode_label(c.scenario, c.mode, c.buffer_mode),
        c.frame_size
    )
}

/// Runs every repetition of one cell.
pub fn run_cell(cell: &TopoConfig, limit: RunLimit, reps: usize) -> Result<RunReport, RunnerError> {
    let mut results = Vec::with_capacity(reps);
    for rep in 0..reps {
        let dp = topo::build(cell).map_err(|source| RunnerError::Topology {
            cell: cell_label(cell),
            source,
        })?;
        let r = dp.run(limit);
        info!(
            "{} rep {}/{}: {:.3} Mpps, rx {} tx {} drops {}",
            cell_label(cell),
            rep + 1,
            reps,
            r.mpps(),
            r.rx_frames,
            r.tx_frames,
            r.drops_total
        );
        results.push(r);
    }
    Ok(RunReport::from_runs(&results, cell.buffer_mode, cell.icv)?)
}

/// Result of [`execute`].
#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub json: PathBuf,
    pub csv: PathBuf,
}

/// Validates, runs the matrix sequentially and writes the report files.
pub fn execute(cfg: &RunConfig) -> Result<Outcome, RunnerError> {
    let cells = cfg.matrix()?;
    info!("{} configurations x {} repetitions", cells.len(), cfg.reps);
    let limit = cfg.limit();
    let available = cfg.workers.unwrap_or_else(topo::available_workers);
    let over = cells
        .iter()
        .filter(|c| 1 + c.kind.processing_units() > available)
        .count();
    if over > 0 {
        warn!("{over} of {} configurations time-slice units on {available} worker(s); their rows are flagged", cells.len());
    }
    let mut rows = Vec::with_capacity(cells.len());
    for cell in &cells {
        rows.push(run_cell(cell, limit, cfg.reps)?);
    }
    let echo = serde_json::to_value(cfg).expect("config serialises");
    let (report, json, csv) = bench::emit_report(rows, echo, &cfg.out)?;
    Ok(Outcome { report, json, csv })
}
