use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use tdp_core::nf::Scenario;
use tdp_core::runner::{self, RunConfig};
use tdp_core::topo::{self, Mode, RunLimit, TopoConfig, TopologyKind};
use tdp_core::traffic;
use tdp_core::verify::{VerifyConfig, Verifier, SUITES};

#[derive(Parser)]
#[command(name = "tdp", version, about = "Emulated trusted dataplane scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario matrix and write a JSON and CSV report.
    Run(Box<RunArgs>),
    /// Run the oracle suites and print one pass/fail line each.
    Verify(VerifyArgs),
    /// Run one configuration and save every delivered frame to a capture file.
    Record(RecordArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenarios to run (l2fwd, l3fwd, l2fwd-enc, l3fwd-enc, lb-server);
    /// all of them when omitted.
    scenarios: Vec<String>,
    /// Comma-separated scenarios, same as the positional form.
    #[arg(long)]
    scenario: Option<String>,
    /// Flat `key = value` file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// baseline | parallel | pipeline | lb
    #[arg(long)]
    topology: Option<String>,
    /// Comma-separated enclave counts for the parallel topology.
    #[arg(long)]
    enclaves: Option<String>,
    /// Comma-separated backend counts for lb-server.
    #[arg(long)]
    servers: Option<String>,
    #[arg(long)]
    stages: Option<String>,
    /// Comma-separated frame sizes in bytes.
    #[arg(long)]
    sizes: Option<String>,
    /// vanilla | trusted | both
    #[arg(long)]
    mode: Option<String>,
    /// Comma-separated: trusted_copy, untrusted.
    #[arg(long = "buffer-mode")]
    buffer_mode: Option<String>,
    /// Disable ICV generation and verification on secure scenarios.
    #[arg(long = "no-icv")]
    no_icv: bool,
    #[arg(long = "two-enclaves-per-server")]
    two_enclaves_per_server: bool,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long = "ring-cap")]
    ring_cap: Option<String>,
    /// EPC budget in bytes; K, M and G suffixes are accepted.
    #[arg(long = "epc-limit")]
    epc_limit: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Measurement window per repetition, in seconds.
    #[arg(long)]
    duration: Option<String>,
    /// Warm-up excluded from the counters, in seconds.
    #[arg(long)]
    warmup: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    /// Admit exactly this many frames per repetition instead of a timed run.
    #[arg(long)]
    frames: Option<String>,
    #[arg(long)]
    cardinality: Option<String>,
    /// Worker budget; defaults to TDP_WORKERS or the host's parallelism.
    #[arg(long)]
    workers: Option<String>,
    /// Allow several units per worker when workers are short.
    #[arg(long)]
    oversubscribe: bool,
    /// Injected cost per ECALL/OCALL, in nanoseconds.
    #[arg(long = "latency-ns")]
    latency_ns: Option<String>,
    /// Report path stem; `.json` and `.csv` are appended.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn settings(&self) -> Vec<(&'static str, String)> {
        let mut s: Vec<(&'static str, String)> = [
            ("scenario", &self.scenario),
            ("topology", &self.topology),
            ("enclaves", &self.enclaves),
            ("servers", &self.servers),
            ("stages", &self.stages),
            ("sizes", &self.sizes),
            ("mode", &self.mode),
            ("buffer-mode", &self.buffer_mode),
            ("batch", &self.batch),
            ("ring-cap", &self.ring_cap),
            ("epc-limit", &self.epc_limit),
            ("seed", &self.seed),
            ("duration", &self.duration),
            ("warmup", &self.warmup),
            ("reps", &self.reps),
            ("frames", &self.frames),
            ("cardinality", &self.cardinality),
            ("workers", &self.workers),
            ("latency-ns", &self.latency_ns),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
        .collect();
        if !self.scenarios.is_empty() {
            s.push(("scenario", self.scenarios.join(",")));
        }
        for (flag, key) in [
            (self.no_icv, "no-icv"),
            (self.two_enclaves_per_server, "two-enclaves-per-server"),
            (self.oversubscribe, "oversubscribe"),
        ] {
            if flag {
                s.push((key, "true".into()));
            }
        }
        if let Some(out) = &self.out {
            s.push(("out", out.display().to_string()));
        }
        s
    }

    fn config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (k, v) in self.settings() {
            cfg.set(k, &v)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Comma-separated suite numbers; all when omitted.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    /// Refuse topologies that need more workers than available.
    #[arg(long = "no-oversubscribe")]
    no_oversubscribe: bool,
    /// Vanilla/trusted pairs per cell of the ordering suite.
    #[arg(long)]
    pairs: Option<usize>,
    /// Measurement window of the scaling suite, in seconds.
    #[arg(long)]
    measure: Option<f64>,
    /// Test hook: give trusted runs of the equivalence suite a wrong table entry.
    #[arg(long = "corrupt-table", hide = true)]
    corrupt_table: bool,
    /// Also write the results as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct RecordArgs {
    scenario: Scenario,
    /// baseline | parallel:N | pipeline:N | lb:N
    #[arg(long, default_value = "baseline")]
    topology: String,
    #[arg(long, default_value = "trusted")]
    mode: String,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 10_000)]
    frames: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    oversubscribe: bool,
    /// Capture file to write.
    #[arg(long)]
    out: PathBuf,
}

fn run(args: &RunArgs) -> Result<()> {
    let cfg = args.config()?;
    let outcome = runner::execute(&cfg)?;
    println!(
        "{:<10} {:<18} {:<15} {:>5} {:>8} {:>8} {:>9} {:>10}",
        "scenario", "topology", "mode", "size", "mpps", "gbps", "overhead", "drops"
    );
    for r in &outcome.report.runs {
        println!(
            "{:<10} {:<18} {:<15} {:>5} {:>8.2} {:>8.2} {:>9} {:>10}{}",
            r.scenario.to_string(),
            r.topology,
            r.mode,
            r.frame_size,
            r.mpps,
            r.wire_gbps,
            r.overhead_pct.map_or("-".into(), |o| format!("{o:.2}%")),
            r.drops_total,
            if r.oversubscribed { "  (oversubscribed)" } else { "" }
        );
    }
    println!("wrote {} and {}", outcome.json.display(), outcome.csv.display());
    if let Some(r) = outcome.report.runs.iter().find(|r| !r.conserved()) {
        bail!("{} {} {}: rx != tx + drops", r.scenario, r.topology, r.mode);
    }
    Ok(())
}

fn verify(args: &VerifyArgs) -> Result<bool> {
    let ids: Vec<u8> = match &args.suite {
        None => SUITES.iter().map(|s| s.0).collect(),
        Some(list) => list
            .split(',')
            .map(|s| {
                let id: u8 = s.trim().parse().with_context(|| format!("--suite: bad number '{s}'"))?;
                if !SUITES.iter().any(|x| x.0 == id) {
                    bail!("--suite: no suite {id} (1..={})", SUITES.len());
                }
                Ok(id)
            })
            .collect::<Result<_>>()?,
    };
    let mut cfg = VerifyConfig {
        seed: args.seed,
        workers: args.workers,
        oversubscribe: !args.no_oversubscribe,
        corrupt_tables: args.corrupt_table,
        ..VerifyConfig::default()
    };
    if let Some(p) = args.pairs {
        cfg.pairs = p;
    }
    if let Some(m) = args.measure {
        if !(m > 0.0 && m.is_finite()) {
            bail!("--measure: must be a positive number of seconds");
        }
        cfg.measure = Duration::from_secs_f64(m);
    }
    let mut v = Verifier::new(cfg);
    let mut results = v.run(&ids);
    results.sort_by_key(|r| r.id);
    for r in &results {
        println!("{}", r.line());
    }
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} suites passed", results.len());
    if let Some(path) = &args.json {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &results)?;
    }
    Ok(passed == results.len())
}

fn parse_kind(s: &str, scenario: Scenario) -> Result<TopologyKind> {
    let (name, n) = match s.split_once(':') {
        Some((name, n)) => (name, Some(n.parse::<usize>().with_context(|| format!("--topology: bad count '{n}'"))?)),
        None => (s, None),
    };
    Ok(match (name, n) {
        ("baseline", None) => TopologyKind::Baseline,
        ("parallel", n) => TopologyKind::Parallel { enclaves: n.unwrap_or(1) },
        ("pipeline", n) => TopologyKind::Pipeline { stages: n.unwrap_or(2) },
        ("lb", n) => TopologyKind::LoadBalancer {
            servers: n.unwrap_or(0),
            two_per_server: false,
        },
        _ => bail!("--topology: unknown '{s}' for {scenario}"),
    })
}

fn record(args: &RecordArgs) -> Result<()> {
    let mode = match args.mode.as_str() {
        "vanilla" => Mode::Vanilla,
        "trusted" => Mode::Trusted,
        other => bail!("--mode: expected vanilla or trusted, got '{other}'"),
    };
    let kind = parse_kind(&args.topology, args.scenario)?;
    let mut cfg = TopoConfig::new(args.scenario, kind, mode, args.size);
    cfg.seed = args.seed;
    cfg.capture = true;
    cfg.oversubscribe = args.oversubscribe;
    let result = topo::build(&cfg)?.run(RunLimit::Frames(args.frames));
    let frames = result.capture.unwrap_or_default();
    let f = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut w = BufWriter::new(f);
    let n = traffic::write_capture(&mut w, frames.iter().map(Vec::as_slice))?;
    drop(w);
    info!("rx {} tx {} drops {}", result.rx_frames, result.tx_frames, result.drops_total);
    println!(
        "{n} frames written to {}; rx {} drops {}",
        args.out.display(),
        result.rx_frames,
        result.drops_total
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(a) => run(a).map(|()| true),
        Command::Verify(a) => verify(a),
        Command::Record(a) => record(a).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
