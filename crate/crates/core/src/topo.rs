//! Running dataplanes: the I/O unit (generator + sink), processing units
//! (one per enclave), the rings between them and the workers that poll them.
//!
//! Four shapes are supported: a single enclave, `n` enclaves sharing the Rx
//! and Tx rings, a pipeline of attested stages, and the load balancer with
//! its backend servers. Each can run with enclaves or with no trust boundary
//! at all (vanilla).
//!
//! Buffers are credited: the I/O unit owns a pool no larger than any ring,
//! so in-flight frames can never overflow a ring and the generator is paced
//! purely by buffers coming back from the sink and from drops.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::debug;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Key128, KeyPair};
use crate::nf::{
    split_stages, server_tables_from, DropCounters, DropReason, DropTally, FlowTable, Gate, Instance,
    LpmTable, MacTable, NfChain, NfContext, OpKind, Scenario, ServerTable,
};
use crate::pkt::{FrameBuffer, Mbuf, TrustTag};
use crate::ring::{Ring, RingMode, DEFAULT_BURST, DEFAULT_RING_CAPACITY};
use crate::tee::{
    local_attest, measure, BufferMode, EnclaveConfig, GateSnapshot, Measurement, Platform,
    TeeError, DEFAULT_EPC_LIMIT,
};
use crate::traffic::{self, FrameSource, Layer, SinkCounters, TrafficError, TrafficSpec};

/// Environment variable capping the number of workers.
pub const WORKERS_ENV: &str = "TDP_WORKERS";
pub const CODE_IDENTITY: &str = concat!("tdp-nf/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum TopoError {
    #[error("topology needs {needed} workers but only {available} are available (enable oversubscription to time-slice)")]
    InsufficientWorkers { needed: usize, available: usize },
    #[error("enclave launch failed: {0}")]
    Launch(TeeError),
    #[error("attestation between stages {left} and {right} failed: {source}")]
    AttestationFailed {
        left: usize,
        right: usize,
        #[source]
        source: TeeError,
    },
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Vanilla,
    Trusted,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Vanilla => "vanilla",
            Mode::Trusted => "trusted",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Baseline,
    Parallel { enclaves: usize },
    Pipeline { stages: usize },
    LoadBalancer { servers: usize, two_per_server: bool },
}

impl TopologyKind {
    /// Short descriptor used in reports, e.g. `parallel(2)`.
    pub fn describe(&self) -> String {
        match *self {
            TopologyKind::Baseline => "baseline".into(),
            TopologyKind::Parallel { enclaves } => format!("parallel({enclaves})"),
            TopologyKind::Pipeline { stages } => format!("pipeline({stages})"),
            TopologyKind::LoadBalancer {
                servers,
                two_per_server,
            } => {
                if two_per_server {
                    format!("lb({servers}x2)")
                } else {
                    format!("lb({servers})")
                }
            }
        }
    }

    /// Processing units (enclaves, or their vanilla stand-ins).
    pub fn processing_units(&self) -> usize {
        match *self {
            TopologyKind::Baseline => 1,
            TopologyKind::Parallel { enclaves } => enclaves,
            TopologyKind::Pipeline { stages } => stages,
            TopologyKind::LoadBalancer {
                servers,
                two_per_server,
            } => 1 + servers * if two_per_server { 2 } else { 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoConfig {
    pub scenario: Scenario,
    pub kind: TopologyKind,
    pub mode: Mode,
    pub frame_size: usize,
    pub buffer_mode: BufferMode,
    pub icv: bool,
    pub burst: usize,
    pub ring_capacity: usize,
    pub epc_limit: u64,
    pub seed: u64,
    pub cardinality: u32,
    pub transition_latency_ns: u64,
    /// Worker budget; `None` reads [`WORKERS_ENV`] or the host's parallelism.
    pub workers: Option<usize>,
    pub oversubscribe: bool,
    /// Keep a copy of every delivered frame.
    pub capture: bool,
    /// Check payload markers at the sink (plain layers only).
    pub validate: bool,
    /// Test hook: flip a bit of this pipeline stage's measurement after launch.
    #[serde(skip)]
    pub corrupt_stage: Option<usize>,
    /// Test hook: trusted units get a lookup table with one wrong entry, for
    /// the first destination of the stream.
    #[serde(skip)]
    pub corrupt_table: bool,
}

impl TopoConfig {
    pub fn new(scenario: Scenario, kind: TopologyKind, mode: Mode, frame_size: usize) -> Self {
        TopoConfig {
            scenario,
            kind,
            mode,
            frame_size,
            buffer_mode: BufferMode::TrustedCopy,
            icv: true,
            burst: DEFAULT_BURST,
            ring_capacity: DEFAULT_RING_CAPACITY,
            epc_limit: DEFAULT_EPC_LIMIT,
            seed: 1,
            cardinality: traffic::DEFAULT_CARDINALITY,
            transition_latency_ns: 0,
            workers: None,
            oversubscribe: false,
            capture: false,
            validate: false,
            corrupt_stage: None,
            corrupt_table: false,
        }
    }

    pub fn traffic_spec(&self) -> TrafficSpec {
        TrafficSpec {
            layer: Layer::for_scenario(self.scenario),
            frame_size: self.frame_size,
            cardinality: self.cardinality,
            seed: self.seed,
            icv: self.icv,
        }
    }

    pub fn validate(&self) -> Result<(), TopoError> {
        let bad = |m: String| Err(TopoError::Invalid(m));
        if self.burst == 0 {
            return bad("batch must be at least 1".into());
        }
        if !self.ring_capacity.is_power_of_two() || self.ring_capacity < 2 {
            return bad(format!("ring-cap {} is not a power of two >= 2", self.ring_capacity));
        }
        if self.burst > self.ring_capacity {
            return bad(format!("batch {} exceeds ring-cap {}", self.burst, self.ring_capacity));
        }
        if self.epc_limit == 0 {
            return bad("epc-limit must be positive".into());
        }
        let is_lb = self.scenario == Scenario::LbServer;
        match self.kind {
            TopologyKind::LoadBalancer { servers, .. } => {
                if !is_lb {
                    return bad(format!("servers only apply to lb-server, not {}", self.scenario));
                }
                if servers > 255 {
                    return bad(format!("servers {servers} exceeds 255"));
                }
            }
            _ if is_lb => return bad("lb-server runs on the load-balancer topology".into()),
            TopologyKind::Parallel { enclaves: 0 } => return bad("enclaves must be at least 1".into()),
            TopologyKind::Pipeline { stages } => {
                let ops = self.scenario.ops().len();
                if stages == 0 || stages > ops {
                    return bad(format!("stages must be in 1..={ops} for {}", self.scenario));
                }
            }
            _ => {}
        }
        self.traffic_spec().validate()?;
        Ok(())
    }
}

/// Worker budget: `TDP_WORKERS` if set, else the host's parallelism.
pub fn available_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Deterministic traffic keys for a seed, so runs are reproducible.
pub fn traffic_keys(seed: u64) -> KeyPair {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6b65_7973);
    let mut e = [0u8; 16];
    let mut i = [0u8; 16];
    rng.fill_bytes(&mut e);
    rng.fill_bytes(&mut i);
    KeyPair {
        encryption: Key128::new(e),
        integrity: Key128::new(i),
    }
}

#[derive(Debug, Default)]
struct UnitCounters {
    rx: AtomicU64,
    tx: AtomicU64,
    dropped: AtomicU64,
    batches: AtomicU64,
}

/// What one processing unit did over a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitReport {
    pub name: String,
    pub trusted: bool,
    pub rx: u64,
    pub tx: u64,
    pub dropped: u64,
    /// Non-empty batches dequeued.
    pub batches: u64,
    pub gate: GateSnapshot,
    pub arena_used: u64,
}

enum Output {
    Ring(Arc<Ring<Mbuf>>),
    PerBackend(Vec<Arc<Ring<Mbuf>>>),
}

struct NfUnit {
    name: String,
    gate: Gate,
    chain: NfChain,
    input: Arc<Ring<Mbuf>>,
    output: Output,
    free: Arc<Ring<Mbuf>>,
    drops: Arc<DropCounters>,
    counters: Arc<UnitCounters>,
    burst: usize,
    batch: Vec<Mbuf>,
    dropped: Vec<Mbuf>,
    parts: Vec<Vec<Mbuf>>,
    tally: DropTally,
}

impl NfUnit {
    fn poll(&mut self) -> bool {
        let n = self.input.dequeue_batch(&mut self.batch, self.burst);
        if n == 0 {
            return false;
        }
        self.counters.rx.fetch_add(n as u64, Ordering::Relaxed);
        self.counters.batches.fetch_add(1, Ordering::Relaxed);
        if let Some(e) = self.gate.enclave() {
            let tag = TrustTag::Trusted(e.id());
            for f in &mut self.batch {
                f.trust_tag = tag;
            }
        }
        self.chain
            .run(&self.gate, &mut self.batch, &mut self.dropped, &mut self.tally)
            .expect("enclave stays launched while running");
        for f in &mut self.batch {
            f.trust_tag = TrustTag::Untrusted;
        }
        let mut sent = 0;
        match &self.output {
            Output::Ring(r) => {
                sent += r.enqueue_batch(&mut self.batch);
                for f in self.batch.drain(..) {
                    self.tally.add(DropReason::TxFull);
                    self.dropped.push(f);
                }
            }
            Output::PerBackend(rings) => {
                for f in self.batch.drain(..) {
                    let b = usize::from(f.meta.egress);
                    self.parts[b].push(f);
                }
                for (r, part) in rings.iter().zip(self.parts.iter_mut()) {
                    if part.is_empty() {
                        continue;
                    }
                    sent += r.enqueue_batch(part);
                    for f in part.drain(..) {
                        self.tally.add(DropReason::TxFull);
                        self.dropped.push(f);
                    }
                }
            }
        }
        self.counters.tx.fetch_add(sent as u64, Ordering::Relaxed);
        if !self.dropped.is_empty() {
            self.counters
                .dropped
                .fetch_add(self.dropped.len() as u64, Ordering::Relaxed);
            // Count before the buffers become visible to the I/O unit.
            self.drops.flush(&mut self.tally);
            for f in &mut self.dropped {
                f.trust_tag = TrustTag::Untrusted;
            }
            let back = self.free.enqueue_batch(&mut self.dropped);
            assert!(self.dropped.is_empty(), "free ring overflow after {back} returns");
        }
        true
    }

    fn report(&self) -> UnitReport {
        let (gate, arena_used) = match self.gate.enclave() {
            Some(e) => (e.stats().snapshot(), e.arena_used()),
            None => (GateSnapshot::default(), 0),
        };
        UnitReport {
            name: self.name.clone(),
            trusted: self.gate.is_trusted(),
            rx: self.counters.rx.load(Ordering::Relaxed),
            tx: self.counters.tx.load(Ordering::Relaxed),
            dropped: self.counters.dropped.load(Ordering::Relaxed),
            batches: self.counters.batches.load(Ordering::Relaxed),
            gate,
            arena_used,
        }
    }
}

/// Counters the I/O unit publishes for the coordinator.
#[derive(Debug, Default)]
struct IoShared {
    admitted: AtomicU64,
    delivered: AtomicU64,
    rx_rejected: AtomicU64,
    stop_generating: AtomicBool,
    done: AtomicBool,
}

struct IoUnit {
    source: FrameSource,
    limit: Option<u64>,
    free: Vec<Mbuf>,
    returns: Arc<Ring<Mbuf>>,
    rx: Arc<Ring<Mbuf>>,
    tx: Arc<Ring<Mbuf>>,
    staged: Vec<Mbuf>,
    out: Vec<Mbuf>,
    sink: traffic::Sink,
    shared: Arc<IoShared>,
    burst: usize,
    admitted: u64,
    /// Delivered frames by number of backend servers traversed.
    backend_hops: [u64; 4],
    per_backend: Vec<u64>,
}

impl IoUnit {
    fn poll(&mut self) -> bool {
        let mut progress = false;
        // Sink side.
        if self.tx.dequeue_batch(&mut self.out, self.burst) > 0 {
            for mut f in self.out.drain(..) {
                self.sink.absorb(f.as_slice());
                let hops = usize::from(f.meta.backend_hops).min(3);
                self.backend_hops[hops] += 1;
                if hops > 0 {
                    let b = usize::from(f.meta.last_backend);
                    if b >= self.per_backend.len() {
                        self.per_backend.resize(b + 1, 0);
                    }
                    self.per_backend[b] += 1;
                }
                f.reset();
                self.free.push(f);
            }
            self.shared.delivered.store(self.sink.frames(), Ordering::Release);
            progress = true;
        }
        if self.returns.dequeue_batch(&mut self.out, usize::MAX) > 0 {
            for mut f in self.out.drain(..) {
                f.reset();
                self.free.push(f);
            }
            progress = true;
        }
        // Generator side.
        let may_generate = !self.shared.stop_generating.load(Ordering::Relaxed);
        if may_generate && self.staged.len() < self.burst {
            let remaining = self.limit.map_or(u64::MAX, |l| l - self.source.generated());
            let want = (self.burst - self.staged.len()).min(self.free.len());
            let want = want.min(remaining.min(usize::MAX as u64) as usize);
            for _ in 0..want {
                let mut f = self.free.pop().expect("free buffer");
                self.source.next_into(&mut f);
                self.staged.push(f);
            }
        }
        if !self.staged.is_empty() {
            let offered = self.staged.len();
            let n = self.rx.enqueue_batch(&mut self.staged);
            if n < offered {
                self.shared
                    .rx_rejected
                    .fetch_add((offered - n) as u64, Ordering::Relaxed);
            }
            if n > 0 {
                self.admitted += n as u64;
                self.shared.admitted.store(self.admitted, Ordering::Release);
                progress = true;
            }
        }
        progress
    }
}

enum Unit {
    Io(Box<IoUnit>),
    Nf(Box<NfUnit>),
}

impl Unit {
    fn poll(&mut self) -> bool {
        match self {
            Unit::Io(u) => u.poll(),
            Unit::Nf(u) => u.poll(),
        }
    }
}

/// How long a run lasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunLimit {
    /// Admit exactly this many frames, then drain.
    Frames(u64),
    /// Generate continuously; counters for throughput are taken over
    /// `measure` after `warmup`.
    Duration { warmup: Duration, measure: Duration },
}

/// Everything a finished run produced.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub scenario: Scenario,
    pub topology: String,
    pub mode: Mode,
    pub frame_size: usize,
    /// Frames admitted into the Rx ring over the whole run.
    pub rx_frames: u64,
    /// Frames delivered to the sink over the whole run.
    pub tx_frames: u64,
    pub drops: Vec<(DropReason, u64)>,
    pub drops_total: u64,
    /// Offered frames refused by a full Rx ring (retried, never lost).
    pub rx_rejected: u64,
    /// Throughput window: delivered frames and seconds.
    pub window_frames: u64,
    pub window_secs: f64,
    pub sink: SinkCounters,
    pub units: Vec<UnitReport>,
    pub gate_total: GateSnapshot,
    pub workers: usize,
    pub oversubscribed: bool,
    pub backend_hops: [u64; 4],
    pub per_backend: Vec<u64>,
    #[serde(skip)]
    pub capture: Option<Vec<Vec<u8>>>,
}

impl RunResult {
    pub fn mpps(&self) -> f64 {
        if self.window_secs > 0.0 {
            self.window_frames as f64 / self.window_secs / 1e6
        } else {
            0.0
        }
    }

    pub fn drop_count(&self, reason: DropReason) -> u64 {
        self.drops
            .iter()
            .find(|(r, _)| *r == reason)
            .map_or(0, |(_, n)| *n)
    }

    /// `rx == tx + drops`.
    pub fn conserved(&self) -> bool {
        self.rx_frames == self.tx_frames + self.drops_total
    }
}

/// A built, not yet running dataplane.
pub struct Dataplane {
    config: TopoConfig,
    io: IoUnit,
    nfs: Vec<NfUnit>,
    drops: Arc<DropCounters>,
    workers: usize,
    oversubscribed: bool,
}

impl std::fmt::Debug for Dataplane {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dataplane")
            .field("topology", &self.config.kind.describe())
            .field("units", &self.nfs.iter().map(|u| u.name.as_str()).collect::<Vec<_>>())
            .field("workers", &self.workers)
            .finish()
    }
}

fn plan_workers(cfg: &TopoConfig) -> Result<(usize, bool), TopoError> {
    let needed = 1 + cfg.kind.processing_units();
    let available = cfg.workers.unwrap_or_else(available_workers);
    if needed <= available {
        return Ok((needed, false));
    }
    if !cfg.oversubscribe {
        return Err(TopoError::InsufficientWorkers { needed, available });
    }
    debug!(
        "oversubscribed: {needed} units time-sliced on {} worker(s)",
        available.max(1)
    );
    Ok((available.max(1), true))
}

struct Builder {
    cfg: TopoConfig,
    source: FrameSource,
    platform: Platform,
    ctx: NfContext,
    pool: usize,
    free: Arc<Ring<Mbuf>>,
    drops: Arc<DropCounters>,
    next_instance: u16,
}

type LbTables = (Arc<FlowTable>, Vec<Arc<ServerTable>>);

/// Most recently built tables and frame source. They are immutable and
/// fully determined by their key, so back-to-back builds of one workload
/// share them instead of rebuilding (and re-laying out) millions of entries.
struct TableCache {
    mac: Option<(u32, Arc<MacTable>)>,
    lpm: Option<(u32, Arc<LpmTable>)>,
    lb: Option<((u32, usize), Arc<LbTables>)>,
    source: Option<(TrafficSpec, FrameSource)>,
}

static TABLE_CACHE: Mutex<TableCache> = Mutex::new(TableCache {
    mac: None,
    lpm: None,
    lb: None,
    source: None,
});

fn cached<K: PartialEq + Copy, T>(slot: &mut Option<(K, Arc<T>)>, key: K, make: impl FnOnce() -> T) -> Arc<T> {
    match slot {
        Some((k, t)) if *k == key => Arc::clone(t),
        _ => {
            let t = Arc::new(make());
            *slot = Some((key, Arc::clone(&t)));
            t
        }
    }
}

impl Builder {
    fn new(cfg: &TopoConfig) -> Result<Self, TopoError> {
        cfg.validate()?;
        let spec = cfg.traffic_spec();
        let (mut mac_table, mut lpm, mut flow_table, mut server_tables) = (None, None, None, Vec::new());
        let mut cache = TABLE_CACHE.lock().unwrap_or_else(|e| e.into_inner());
        let card = spec.cardinality;
        match cfg.scenario {
            Scenario::L2Fwd | Scenario::L2FwdEnc => {
                mac_table = Some(cached(&mut cache.mac, card, || traffic::mac_table_for(&spec)));
            }
            Scenario::L3Fwd | Scenario::L3FwdEnc => {
                lpm = Some(cached(&mut cache.lpm, card, || traffic::lpm_for(&spec)));
            }
            Scenario::LbServer => {
                let servers = match cfg.kind {
                    TopologyKind::LoadBalancer { servers, .. } => servers,
                    _ => 0,
                };
                let (flows, tables) = cached(&mut cache.lb, (card, servers), || {
                    let flows = traffic::flow_table_for(&spec, servers);
                    let tables = if servers > 0 {
                        server_tables_from(&flows).into_iter().map(Arc::new).collect()
                    } else {
                        Vec::new()
                    };
                    (Arc::new(flows), tables)
                })
                .as_ref()
                .clone();
                flow_table = Some(flows);
                server_tables = tables;
            }
        }
        let source = match &cache.source {
            Some((s, src)) if *s == spec => src.fork(),
            _ => {
                let src = FrameSource::new(spec.clone(), Some(&traffic_keys(cfg.seed)))?;
                cache.source = Some((spec.clone(), src.fork()));
                src
            }
        };
        drop(cache);
        let mut ctx = NfContext {
            ports: Arc::new(traffic::port_macs()),
            mac_table,
            lpm,
            flow_table,
            server_tables,
            icv: cfg.icv,
            burst: cfg.burst,
        };
        if cfg.corrupt_table && cfg.mode == Mode::Trusted {
            corrupt_tables(&mut ctx, source.address_index(0));
        }
        let pool = cfg.ring_capacity;
        Ok(Builder {
            source,
            platform: Platform::new(traffic_keys(cfg.seed)),
            ctx,
            pool,
            free: Arc::new(Ring::new(
                "free",
                pool,
                RingMode::for_counts(cfg.kind.processing_units(), 1),
            )),
            drops: Arc::new(DropCounters::default()),
            next_instance: 0,
            cfg: cfg.clone(),
        })
    }

    fn ring(&self, name: &str, producers: usize, consumers: usize) -> Arc<Ring<Mbuf>> {
        Arc::new(Ring::new(
            name,
            self.cfg.ring_capacity,
            RingMode::for_counts(producers, consumers),
        ))
    }

    fn enclave_config(&self, ops: &[OpKind], backend: Option<u16>) -> EnclaveConfig {
        let mut c = EnclaveConfig::new(self.cfg.scenario.name(), CODE_IDENTITY);
        // Stage logic and its parameters are part of the identity.
        let mut bytes = format!("ops={ops:?};icv={};burst={}", self.cfg.icv, self.cfg.burst);
        if let Some(b) = backend {
            bytes.push_str(&format!(";backend={b}"));
        }
        c.config_bytes = bytes.into_bytes();
        c.epc_limit = self.cfg.epc_limit;
        c.buffer_mode = self.cfg.buffer_mode;
        c.transition_latency = Duration::from_nanos(self.cfg.transition_latency_ns);
        c
    }

    /// Launches (or, in vanilla mode, stands in for) one processing unit.
    fn gate(&mut self, ops: &[OpKind], backend: Option<u16>) -> Result<(Gate, Option<Measurement>), TopoError> {
        match self.cfg.mode {
            Mode::Vanilla => Ok((Gate::Vanilla(traffic_keys(self.cfg.seed)), None)),
            Mode::Trusted => {
                let c = self.enclave_config(ops, backend);
                let expected = measure(&c);
                let e = self.platform.launch(&c, &expected).map_err(TopoError::Launch)?;
                Ok((Gate::Enclave(e), Some(expected)))
            }
        }
    }

    fn unit(
        &mut self,
        name: String,
        mut gate: Gate,
        ops: &[OpKind],
        instance: Instance,
        input: Arc<Ring<Mbuf>>,
        output: Output,
    ) -> NfUnit {
        let chain = NfChain::build(ops, &mut gate, &self.ctx, instance);
        let parts = match &output {
            Output::PerBackend(r) => (0..r.len()).map(|_| Vec::with_capacity(self.cfg.burst)).collect(),
            Output::Ring(_) => Vec::new(),
        };
        NfUnit {
            name,
            gate,
            chain,
            input,
            output,
            free: Arc::clone(&self.free),
            drops: Arc::clone(&self.drops),
            counters: Arc::default(),
            burst: self.cfg.burst,
            batch: Vec::with_capacity(self.cfg.burst),
            dropped: Vec::with_capacity(self.cfg.burst),
            parts,
            tally: DropTally::default(),
        }
    }

    fn instance(&mut self, backend: u16) -> Instance {
        let i = Instance {
            index: self.next_instance,
            backend,
        };
        self.next_instance += 1;
        i
    }

    fn finish(self, rx: Arc<Ring<Mbuf>>, tx: Arc<Ring<Mbuf>>, nfs: Vec<NfUnit>, limit_workers: (usize, bool)) -> Result<Dataplane, TopoError> {
        let source = self.source;
        let free: Vec<Mbuf> = (0..self.pool as u32).map(FrameBuffer::new).collect();
        let io = IoUnit {
            source,
            limit: None,
            free,
            returns: self.free,
            rx,
            tx,
            staged: Vec::with_capacity(self.cfg.burst),
            out: Vec::with_capacity(self.cfg.ring_capacity),
            sink: traffic::Sink::new(self.cfg.validate, self.cfg.capture),
            shared: Arc::default(),
            burst: self.cfg.burst,
            admitted: 0,
            backend_hops: [0; 4],
            per_backend: Vec::new(),
        };
        Ok(Dataplane {
            config: self.cfg,
            io,
            nfs,
            drops: self.drops,
            workers: limit_workers.0,
            oversubscribed: limit_workers.1,
        })
    }
}

/// Rewrites the entry for address `index` in whichever table the scenario
/// uses.
fn corrupt_tables(ctx: &mut NfContext, index: u32) {
    let ip = traffic::DST_IP_BASE + index;
    if let Some(t) = &mut ctx.mac_table {
        let mac = crate::pkt::MacAddr::from_u64(traffic::DST_MAC_BASE + u64::from(index));
        Arc::make_mut(t).insert(mac, 0).expect("existing key");
    }
    if let Some(t) = &mut ctx.lpm {
        let hop = crate::nf::NextHop {
            port: traffic::EGRESS_PORT,
            mac: crate::pkt::MacAddr([0x0e, 0xba, 0xd0, 0, 0, 0]),
        };
        Arc::make_mut(t).insert(ip, 32, hop).expect("valid prefix");
    }
    if let Some(t) = &mut ctx.flow_table {
        let t = Arc::make_mut(t);
        let b = t.classify(ip);
        let n = t.backends();
        t.insert(ip, ((usize::from(b) + 1) % n) as u8).expect("backend in range");
    }
}

/// Builds whichever topology `cfg.kind` names.
pub fn build(cfg: &TopoConfig) -> Result<Dataplane, TopoError> {
    match cfg.kind {
        TopologyKind::Baseline => build_baseline(cfg),
        TopologyKind::Parallel { enclaves } => build_parallel(cfg, enclaves),
        TopologyKind::Pipeline { stages } => build_pipeline(cfg, stages),
        TopologyKind::LoadBalancer { servers, .. } => build_lb_topology(cfg, servers),
    }
}

/// One enclave between the Rx and Tx rings.
pub fn build_baseline(cfg: &TopoConfig) -> Result<Dataplane, TopoError> {
    let mut cfg = cfg.clone();
    cfg.kind = TopologyKind::Baseline;
    build_parallel_inner(&cfg, 1)
}

/// `n` enclaves with identical logic sharing the Rx and Tx rings.
pub fn build_parallel(cfg: &TopoConfig, enclaves: usize) -> Result<Dataplane, TopoError> {
    let mut cfg = cfg.clone();
    cfg.kind = TopologyKind::Parallel { enclaves };
    build_parallel_inner(&cfg, enclaves)
}

fn build_parallel_inner(cfg: &TopoConfig, n: usize) -> Result<Dataplane, TopoError> {
    let mut b = Builder::new(cfg)?;
    let workers = plan_workers(cfg)?;
    let rx = b.ring("rx", 1, n);
    let tx = b.ring("tx", n, 1);
    let ops = cfg.scenario.ops();
    let mut nfs = Vec::with_capacity(n);
    let mut measurement = None;
    for j in 0..n {
        let (gate, m) = b.gate(ops, None)?;
        // Parallel enclaves implement the same logic: one identity.
        if let (Some(prev), Some(m)) = (measurement, m) {
            debug_assert_eq!(prev, m);
        }
        measurement = m;
        let inst = b.instance(0);
        nfs.push(b.unit(format!("enclave{j}"), gate, ops, inst, Arc::clone(&rx), Output::Ring(Arc::clone(&tx))));
    }
    b.finish(rx, tx, nfs, workers)
}

/// The scenario's op sequence split across `stages` enclaves joined by SPSC
/// rings. Adjacent stages attest each other before any traffic flows.
pub fn build_pipeline(cfg: &TopoConfig, stages: usize) -> Result<Dataplane, TopoError> {
    let mut cfg = cfg.clone();
    cfg.kind = TopologyKind::Pipeline { stages };
    let mut b = Builder::new(&cfg)?;
    let workers = plan_workers(&cfg)?;
    let parts = split_stages(cfg.scenario.ops(), stages);
    let rx = b.ring("rx", 1, 1);
    let tx = b.ring("tx", 1, 1);
    let mut gates = Vec::with_capacity(stages);
    for (i, ops) in parts.iter().enumerate() {
        let (mut gate, expected) = b.gate(ops, None)?;
        if cfg.corrupt_stage == Some(i) {
            if let Some(e) = gate.enclave_mut() {
                e.corrupt_measurement(0);
            }
        }
        gates.push((gate, expected));
    }
    if cfg.mode == Mode::Trusted {
        let mut rng = ChaCha8Rng::from_entropy();
        for i in 1..stages {
            let (left, right) = (&gates[i - 1], &gates[i]);
            let (Some(a), Some(b_)) = (left.0.enclave(), right.0.enclave()) else {
                unreachable!("trusted stages have enclaves")
            };
            local_attest(a, b_, left.1.as_ref().unwrap(), right.1.as_ref().unwrap(), &mut rng).map_err(
                |source| TopoError::AttestationFailed {
                    left: i - 1,
                    right: i,
                    source,
                },
            )?;
            debug!("stages {} and {i} attested", i - 1);
        }
    }
    let mut nfs = Vec::with_capacity(stages);
    let mut input = Arc::clone(&rx);
    // Only the last stage seals, so every stage shares instance 0.
    let inst = b.instance(0);
    for (i, ((gate, _), ops)) in gates.into_iter().zip(parts).enumerate() {
        let out = if i + 1 == stages {
            Arc::clone(&tx)
        } else {
            b.ring(&format!("stage{i}-{}", i + 1), 1, 1)
        };
        nfs.push(b.unit(format!("stage{i}"), gate, ops, inst, input, Output::Ring(Arc::clone(&out))));
        input = out;
    }
    b.finish(rx, tx, nfs, workers)
}

/// Load balancer plus `servers` backends, one ring per backend. With the
/// two-enclave option each backend runs two enclaves on its ring.
pub fn build_lb_topology(cfg: &TopoConfig, servers: usize) -> Result<Dataplane, TopoError> {
    let mut cfg = cfg.clone();
    let two = matches!(cfg.kind, TopologyKind::LoadBalancer { two_per_server: true, .. });
    cfg.kind = TopologyKind::LoadBalancer {
        servers,
        two_per_server: two,
    };
    let mut b = Builder::new(&cfg)?;
    let workers = plan_workers(&cfg)?;
    let per = if two { 2 } else { 1 };
    let rx = b.ring("rx", 1, 1);
    let tx = b.ring("tx", if servers == 0 { 1 } else { servers * per }, 1);
    let lb_ops = [OpKind::LbClassify];
    let (gate, _) = b.gate(&lb_ops, None)?;
    let inst = b.instance(0);
    let mut nfs = Vec::with_capacity(1 + servers * per);
    if servers == 0 {
        nfs.push(b.unit("lb".into(), gate, &lb_ops, inst, Arc::clone(&rx), Output::Ring(Arc::clone(&tx))));
        return b.finish(rx, tx, nfs, workers);
    }
    let rings: Vec<_> = (0..servers).map(|s| b.ring(&format!("backend{s}"), 1, per)).collect();
    nfs.push(b.unit("lb".into(), gate, &lb_ops, inst, Arc::clone(&rx), Output::PerBackend(rings.clone())));
    let srv_ops = [OpKind::ServerFilter];
    for (s, ring) in rings.iter().enumerate() {
        for k in 0..per {
            let (gate, _) = b.gate(&srv_ops, Some(s as u16))?;
            let inst = b.instance(s as u16);
            nfs.push(b.unit(
                format!("server{s}.{k}"),
                gate,
                &srv_ops,
                inst,
                Arc::clone(ring),
                Output::Ring(Arc::clone(&tx)),
            ));
        }
    }
    b.finish(rx, tx, nfs, workers)
}

impl Dataplane {
    pub fn config(&self) -> &TopoConfig {
        &self.config
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_oversubscribed(&self) -> bool {
        self.oversubscribed
    }

    /// Measurements of the launched enclaves, in unit order.
    pub fn measurements(&self) -> Vec<Measurement> {
        self.nfs
            .iter()
            .filter_map(|u| u.gate.enclave().map(|e| e.measurement()))
            .collect()
    }

    pub fn unit_names(&self) -> Vec<String> {
        self.nfs.iter().map(|u| u.name.clone()).collect()
    }

    /// Starts the workers, runs until `limit` is reached, drains every ring
    /// and returns the counters.
    pub fn run(mut self, limit: RunLimit) -> RunResult {
        if let RunLimit::Frames(n) = limit {
            self.io.limit = Some(n);
        }
        let shared = Arc::clone(&self.io.shared);
        let drops = Arc::clone(&self.drops);
        let enclave_stats: Vec<_> = self
            .nfs
            .iter()
            .filter_map(|u| u.gate.enclave().map(|e| e.stats()))
            .collect();
        let n_workers = self.workers;
        let mut lanes: Vec<Vec<Unit>> = (0..n_workers).map(|_| Vec::new()).collect();
        lanes[0].push(Unit::Io(Box::new(self.io)));
        for (j, u) in self.nfs.into_iter().enumerate() {
            lanes[(j + 1) % n_workers].push(Unit::Nf(Box::new(u)));
        }
        let in_flight = |s: &IoShared| {
            s.admitted.load(Ordering::Acquire) - s.delivered.load(Ordering::Acquire) - drops.total()
        };
        let (window_frames, window_secs, units) = thread::scope(|scope| {
            let handles: Vec<_> = lanes
                .into_iter()
                .enumerate()
                .map(|(w, mut units)| {
                    let shared = Arc::clone(&shared);
                    thread::Builder::new()
                        .name(format!("tdp-worker{w}"))
                        .spawn_scoped(scope, move || {
                            worker_loop(&mut units, &shared);
                            units
                        })
                        .expect("spawn worker")
                })
                .collect();
            let (frames, secs) = match limit {
                RunLimit::Frames(n) => {
                    let start = Instant::now();
                    while !(shared.admitted.load(Ordering::Acquire) == n && in_flight(&shared) == 0) {
                        thread::sleep(Duration::from_micros(200));
                    }
                    (shared.delivered.load(Ordering::Acquire), start.elapsed().as_secs_f64())
                }
                RunLimit::Duration { warmup, measure } => {
                    thread::sleep(warmup);
                    let t0 = Instant::now();
                    let d0 = shared.delivered.load(Ordering::Acquire);
                    thread::sleep(measure);
                    let d1 = shared.delivered.load(Ordering::Acquire);
                    let secs = t0.elapsed().as_secs_f64();
                    shared.stop_generating.store(true, Ordering::Release);
                    // Let staged frames get admitted, then drain.
                    let mut stable = 0;
                    let mut last = u64::MAX;
                    while stable < 3 {
                        thread::sleep(Duration::from_micros(500));
                        let a = shared.admitted.load(Ordering::Acquire);
                        if in_flight(&shared) == 0 && a == last {
                            stable += 1;
                        } else {
                            stable = 0;
                        }
                        last = a;
                    }
                    (d1 - d0, secs)
                }
            };
            shared.done.store(true, Ordering::Release);
            let units: Vec<Unit> = handles
                .into_iter()
                .flat_map(|h| h.join().expect("worker panicked"))
                .collect();
            (frames, secs, units)
        });

        let mut io = None;
        let mut reports = Vec::new();
        for u in units {
            match u {
                Unit::Io(u) => io = Some(u),
                Unit::Nf(u) => reports.push(u.report()),
            }
        }
        reports.sort_by_key(|r| unit_order(&r.name));
        let mut io = io.expect("I/O unit");
        let gate_total = enclave_stats.iter().map(|s| s.snapshot()).sum();
        let tally = drops.snapshot();
        let capture = io.sink.take_capture();
        let cfg = &self.config;
        RunResult {
            scenario: cfg.scenario,
            topology: cfg.kind.describe(),
            mode: cfg.mode,
            frame_size: cfg.frame_size,
            rx_frames: io.admitted,
            tx_frames: io.sink.frames(),
            drops: tally.iter().filter(|(_, n)| *n > 0).collect(),
            drops_total: tally.total(),
            rx_rejected: shared.rx_rejected.load(Ordering::Relaxed),
            window_frames,
            window_secs,
            sink: io.sink.counters(),
            units: reports,
            gate_total,
            workers: self.workers,
            oversubscribed: self.oversubscribed,
            backend_hops: io.backend_hops,
            per_backend: io.per_backend,
            capture,
        }
    }
}

/// Sort key keeping units in construction order (lb, servers by index).
fn unit_order(name: &str) -> (u8, usize, usize) {
    let digits = |s: &str| s.parse::<usize>().unwrap_or(0);
    if name == "lb" {
        return (0, 0, 0);
    }
    for (rank, prefix) in [(1, "enclave"), (1, "stage"), (2, "server")] {
        if let Some(rest) = name.strip_prefix(prefix) {
            let (a, b) = rest.split_once('.').unwrap_or((rest, "0"));
            return (rank, digits(a), digits(b));
        }
    }
    (3, 0, 0)
}

fn worker_loop(units: &mut [Unit], shared: &IoShared) {
    let mut idle = 0u32;
    loop {
        let mut progress = false;
        for u in units.iter_mut() {
            progress |= u.poll();
        }
        if progress {
            idle = 0;
            continue;
        }
        if shared.done.load(Ordering::Acquire) {
            return;
        }
        idle += 1;
        if idle < 16 {
            std::hint::spin_loop();
        } else {
            thread::yield_now();
        }
    }
}
