//! Functional and performance oracle suites, one per acceptance criterion.
//!
//! Every suite returns a [`SuiteResult`] carrying a pass flag, a detail line
//! and its wall time against its time budget. Reference values come from
//! code that does not share logic with the dataplane: straight-line frame
//! rewriting, a linear-scan route search, and recomputed counters.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{sgx_overhead, wire_throughput, PAPER_CELLS, QUOTED_OVERHEADS};
use crate::nf::{
    DropReason, DropTally, Gate, Instance, LpmTable, NextHop, NfChain, NfContext, Scenario,
};
use crate::pkt::secure::{ESP_HDR_LEN, ICV_LEN, L2_HDR_LEN};
use crate::pkt::{FrameBuffer, MacAddr, Mbuf, ETH_HDR_LEN};
use crate::tee::{measure, BufferMode, EnclaveConfig, Platform};
use crate::topo::{self, Mode, RunLimit, RunResult, TopoConfig, TopoError, TopologyKind};
use crate::traffic::{self, FrameSource, Layer, TrafficSpec};

/// Identifier and short name of every suite, in criterion order.
pub const SUITES: [(u8, &str); 10] = [
    (1, "wire-throughput formula"),
    (2, "overhead formula"),
    (3, "semantic equivalence"),
    (4, "tamper soundness"),
    (5, "lpm oracle"),
    (6, "copy/transition accounting"),
    (7, "scaling direction"),
    (8, "overhead ordering"),
    (9, "conservation"),
    (10, "attestation gate"),
];

const BUDGETS: [Option<Duration>; 10] = [
    Some(Duration::from_secs(1)),
    Some(Duration::from_secs(1)),
    Some(Duration::from_secs(30)),
    Some(Duration::from_secs(30)),
    Some(Duration::from_secs(5)),
    Some(Duration::from_secs(60)),
    Some(Duration::from_secs(120)),
    Some(Duration::from_secs(120)),
    None,
    Some(Duration::from_secs(1)),
];

pub const WIRE_TOLERANCE: f64 = 0.01;
pub const OVERHEAD_TOLERANCE_PP: f64 = 0.15;
pub const EQUIVALENCE_FRAMES: u64 = 100_000;
pub const RANDOM_CORRUPTIONS: usize = 10_000;
pub const LPM_PREFIXES: usize = 1_000;
pub const LPM_LOOKUPS: usize = 10_000;
pub const ACCOUNTING_FRAMES: u64 = 1_000_000;
pub const ACCOUNTING_SERVERS: usize = 5;
pub const SCALING_MIN_CORES: usize = 4;
pub const SCALING_MIN_RATIO: f64 = 1.5;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Option<Duration>,
}

impl SuiteResult {
    pub fn line(&self) -> String {
        let budget = self
            .budget
            .map_or(String::new(), |b| format!(" / {:.0?}", b));
        format!(
            "AC{:<2} {} {} ({:.2?}{budget}): {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.elapsed,
            self.detail
        )
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub workers: Option<usize>,
    /// Time-slice topologies that need more workers than the host offers.
    pub oversubscribe: bool,
    /// Test hook: trusted runs of the equivalence suite get a wrong table
    /// entry.
    pub corrupt_tables: bool,
    pub warmup: Duration,
    pub measure: Duration,
    /// Interleaved repetitions per throughput configuration.
    pub reps: usize,
    /// Vanilla/trusted pairs per cell of the ordering suite, and the
    /// windows used for each half of a pair.
    pub pairs: usize,
    pub pair_warmup: Duration,
    pub pair_measure: Duration,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 1,
            workers: None,
            oversubscribe: true,
            corrupt_tables: false,
            warmup: Duration::from_millis(300),
            measure: Duration::from_secs(1),
            reps: 3,
            pairs: 100,
            pair_warmup: Duration::from_millis(15),
            pair_measure: Duration::from_millis(50),
        }
    }
}

/// Conservation record of one dataplane run.
#[derive(Debug, Clone)]
struct RunTally {
    label: String,
    rx: u64,
    tx: u64,
    drops: u64,
}

/// Runs suites and remembers every dataplane run for the conservation
/// suite.
#[derive(Debug)]
pub struct Verifier {
    cfg: VerifyConfig,
    runs: Vec<RunTally>,
}

type Check = (bool, String);

impl Verifier {
    pub fn new(cfg: VerifyConfig) -> Self {
        Verifier { cfg, runs: Vec::new() }
    }

    /// Runs the given suites in order. Conservation is moved last so it
    /// sees every run made by the others.
    pub fn run(&mut self, ids: &[u8]) -> Vec<SuiteResult> {
        let mut order: Vec<u8> = ids.to_vec();
        order.sort_by_key(|&i| (i == 9, i));
        order.dedup();
        order.into_iter().map(|id| self.run_suite(id)).collect()
    }

    pub fn run_all(&mut self) -> Vec<SuiteResult> {
        let ids: Vec<u8> = SUITES.iter().map(|s| s.0).collect();
        self.run(&ids)
    }

    pub fn run_suite(&mut self, id: u8) -> SuiteResult {
        let (_, name) = *SUITES
            .iter()
            .find(|s| s.0 == id)
            .unwrap_or_else(|| panic!("no suite {id}"));
        let budget = BUDGETS[usize::from(id - 1)];
        let start = Instant::now();
        let (ok, mut detail) = match id {
            1 => wire_suite(),
            2 => overhead_suite(),
            3 => self.equivalence_suite(),
            4 => self.tamper_suite(),
            5 => self.lpm_suite(),
            6 => self.accounting_suite(),
            7 => self.scaling_suite(),
            8 => self.ordering_suite(),
            9 => self.conservation_suite(),
            10 => self.attestation_suite(),
            _ => unreachable!(),
        };
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed <= b);
        if !in_time {
            detail.push_str("; over time budget");
        }
        SuiteResult {
            id,
            name,
            passed: ok && in_time,
            detail,
            elapsed,
            budget,
        }
    }

    fn topo(&self, scenario: Scenario, kind: TopologyKind, mode: Mode, size: usize) -> TopoConfig {
        let mut c = TopoConfig::new(scenario, kind, mode, size);
        c.seed = self.cfg.seed;
        c.workers = self.cfg.workers;
        c.oversubscribe = self.cfg.oversubscribe;
        c
    }

    fn execute(&mut self, cfg: &TopoConfig, limit: RunLimit) -> Result<RunResult, TopoError> {
        let r = topo::build(cfg)?.run(limit);
        self.runs.push(RunTally {
            label: format!("{} {} {} {}B", r.scenario, r.topology, r.mode, r.frame_size),
            rx: r.rx_frames,
            tx: r.tx_frames,
            drops: r.drops.iter().map(|(_, n)| n).sum(),
        });
        Ok(r)
    }

    fn equivalence_suite(&mut self) -> Check {
        let mut notes = Vec::new();
        let mut ok = true;
        for scenario in [Scenario::L2Fwd, Scenario::L3Fwd] {
            match self.equivalence_for(scenario) {
                Ok((pass, note)) => {
                    ok &= pass;
                    notes.push(format!("{scenario}: {note}"));
                }
                Err(e) => {
                    ok = false;
                    notes.push(format!("{scenario}: {e}"));
                }
            }
        }
        (ok, notes.join("; "))
    }

    fn equivalence_for(&mut self, scenario: Scenario) -> Result<Check, TopoError> {
        let limit = RunLimit::Frames(EQUIVALENCE_FRAMES);
        let run = |v: &mut Self, kind, mode| -> Result<RunResult, TopoError> {
            let mut c = v.topo(scenario, kind, mode, 64);
            c.capture = true;
            c.corrupt_table = v.cfg.corrupt_tables;
            v.execute(&c, limit)
        };
        let vanilla = run(self, TopologyKind::Baseline, Mode::Vanilla)?;
        let trusted = run(self, TopologyKind::Baseline, Mode::Trusted)?;
        let par = TopologyKind::Parallel { enclaves: 2 };
        let trusted_par = run(self, par, Mode::Trusted)?;
        let vanilla_par = run(self, par, Mode::Vanilla)?;

        let reference = vanilla.capture.clone().unwrap_or_default();
        let expected = oracle_stream(scenario, &self.topo(scenario, TopologyKind::Baseline, Mode::Vanilla, 64));
        let mut fails = Vec::new();
        if reference != expected {
            fails.push(format!(
                "vanilla differs from reference model at frame {}",
                first_difference(&reference, &expected)
            ));
        }
        if trusted.capture.as_deref() != Some(&reference[..]) {
            fails.push(format!(
                "trusted baseline ordered stream differs at frame {}",
                first_difference(trusted.capture.as_deref().unwrap_or(&[]), &reference)
            ));
        }
        let want = multiset(&reference);
        for (r, what) in [(&trusted_par, "trusted"), (&vanilla_par, "vanilla")] {
            if multiset(r.capture.as_deref().unwrap_or(&[])) != want {
                fails.push(format!("{what} parallel(2) multiset differs"));
            }
        }
        for r in [&trusted, &trusted_par, &vanilla_par] {
            if r.drops != vanilla.drops {
                fails.push(format!("{} {} drop tally differs", r.topology, r.mode));
            }
        }
        if fails.is_empty() {
            Ok((
                true,
                format!("{} frames identical across 4 runs and the reference model", reference.len()),
            ))
        } else {
            Ok((false, fails.join(", ")))
        }
    }

    fn tamper_suite(&mut self) -> Check {
        let mut notes = Vec::new();
        let mut ok = true;
        for layer in [Layer::SecureL2, Layer::SecureL3] {
            let (pass, note) = self.tamper_for(layer);
            ok &= pass;
            notes.push(note);
        }
        (ok, notes.join("; "))
    }

    fn tamper_for(&self, layer: Layer) -> Check {
        let scenario = match layer {
            Layer::SecureL2 => Scenario::L2FwdEnc,
            _ => Scenario::L3FwdEnc,
        };
        let mut spec = TrafficSpec::new(layer, 64, self.cfg.seed);
        spec.cardinality = 1_024;
        let keys = topo::traffic_keys(self.cfg.seed);
        let source = FrameSource::new(spec.clone(), Some(&keys)).expect("valid spec");
        let frame = source.frame(0);
        // Bits covered by the ICV plus the ICV itself; the outer EtherType
        // only selects the parser and the L3 outer header is not covered.
        let covered: Vec<usize> = match layer {
            Layer::SecureL2 => (0..12).chain(ETH_HDR_LEN..frame.len()).collect(),
            _ => (ETH_HDR_LEN..frame.len()).collect(),
        };
        let ct_icv_start = match layer {
            Layer::SecureL2 => L2_HDR_LEN,
            _ => ETH_HDR_LEN + ESP_HDR_LEN,
        };
        debug_assert!(frame.len() >= ct_icv_start + ICV_LEN);

        let ctx = NfContext {
            ports: Arc::new(traffic::port_macs()),
            mac_table: (layer == Layer::SecureL2).then(|| Arc::new(traffic::mac_table_for(&spec))),
            lpm: (layer == Layer::SecureL3).then(|| Arc::new(traffic::lpm_for(&spec))),
            flow_table: None,
            server_tables: Vec::new(),
            icv: true,
            burst: 32,
        };
        let ecfg = EnclaveConfig::new(scenario.name(), topo::CODE_IDENTITY);
        let mut platform = Platform::new(keys);
        let mut gate = Gate::Enclave(platform.launch(&ecfg, &measure(&ecfg)).expect("launch"));
        let mut chain = NfChain::build(scenario.ops(), &mut gate, &ctx, Instance { index: 0, backend: 0 });

        let mut tampered: Vec<Vec<u8>> = Vec::new();
        for &byte in &covered {
            for bit in 0..8 {
                let mut f = frame.clone();
                f[byte] ^= 1 << bit;
                tampered.push(f);
            }
        }
        let exhaustive = tampered.len();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x7a3e);
        let nbits = covered.len() * 8;
        for _ in 0..RANDOM_CORRUPTIONS {
            let k = rng.gen_range(2..=16);
            let mut f = frame.clone();
            for pos in rand::seq::index::sample(&mut rng, nbits, k) {
                f[covered[pos / 8]] ^= 1 << (pos % 8);
            }
            tampered.push(f);
        }

        let mut tally = DropTally::default();
        let mut dropped: Vec<Mbuf> = Vec::new();
        let mut forward = |frames: &[Vec<u8>], tally: &mut DropTally| -> usize {
            let mut burst: Vec<Mbuf> = frames
                .iter()
                .map(|f| FrameBuffer::from_bytes(0, f).expect("frame fits"))
                .collect();
            chain.run(&gate, &mut burst, &mut dropped, tally).expect("chain runs");
            dropped.clear();
            burst.len()
        };
        let control_before = forward(std::slice::from_ref(&frame), &mut tally);
        let mut forwarded = 0;
        for chunk in tampered.chunks(32) {
            forwarded += forward(chunk, &mut tally);
        }
        let tamper_drops = tally.get(DropReason::Tamper);
        let other_drops = tally.total() - tamper_drops;
        let control_after = forward(std::slice::from_ref(&frame), &mut tally);
        let ok = forwarded == 0
            && tamper_drops == tampered.len() as u64
            && other_drops == 0
            && control_before == 1
            && control_after == 1;
        (
            ok,
            format!(
                "{}: {exhaustive} single-bit + {RANDOM_CORRUPTIONS} multi-bit on a {}-byte frame, forwarded {forwarded}, tamper drops {tamper_drops}, other drops {other_drops}, intact frame forwarded {}/2",
                scenario,
                frame.len(),
                control_before + control_after
            ),
        )
    }

    fn lpm_suite(&mut self) -> Check {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x1b3);
        let mut table = LpmTable::new();
        // (masked prefix, len) -> route id; later inserts replace earlier.
        let mut routes: Vec<(u32, u8, u64)> = Vec::new();
        for id in 0..LPM_PREFIXES as u64 {
            // Mostly /8../32 with a few short prefixes, so lookups see both
            // hits and misses.
            let len: u8 = if id % 100 == 0 {
                rng.gen_range(4..=7)
            } else {
                rng.gen_range(8..=32)
            };
            let prefix: u32 = rng.gen();
            let hop = NextHop {
                port: (id % 2) as u16,
                mac: MacAddr::from_u64(0x0e00_0000_0000 + id),
            };
            table.insert(prefix, len, hop).expect("valid length");
            let masked = prefix & mask(len);
            match routes.iter_mut().find(|r| r.0 == masked && r.1 == len) {
                Some(r) => r.2 = id,
                None => routes.push((masked, len, id)),
            }
        }
        let mut hits = 0;
        let mut mismatches = 0;
        for i in 0..LPM_LOOKUPS {
            let addr: u32 = if i % 2 == 0 {
                rng.gen()
            } else {
                let (p, len, _) = routes[rng.gen_range(0..routes.len())];
                p | (rng.gen::<u32>() & !mask(len))
            };
            let want = routes
                .iter()
                .filter(|(p, len, _)| addr & mask(*len) == *p)
                .max_by_key(|(_, len, _)| *len)
                .map(|&(_, _, id)| MacAddr::from_u64(0x0e00_0000_0000 + id));
            let got = table.lookup_hop(addr).map(|h| h.mac);
            hits += usize::from(want.is_some());
            mismatches += usize::from(got != want);
        }
        (
            mismatches == 0,
            format!(
                "{LPM_LOOKUPS} lookups over {} distinct prefixes, {hits} hits, {} misses, {mismatches} mismatches",
                routes.len(),
                LPM_LOOKUPS - hits
            ),
        )
    }

    fn accounting_suite(&mut self) -> Check {
        let kind = TopologyKind::LoadBalancer {
            servers: ACCOUNTING_SERVERS,
            two_per_server: false,
        };
        let mut c = self.topo(Scenario::LbServer, kind, Mode::Trusted, 64);
        c.buffer_mode = BufferMode::TrustedCopy;
        let r = match self.execute(&c, RunLimit::Frames(ACCOUNTING_FRAMES)) {
            Ok(r) => r,
            Err(e) => return (false, e.to_string()),
        };
        let mut fails = Vec::new();
        let n = ACCOUNTING_FRAMES;
        if r.rx_frames != n {
            fails.push(format!("admitted {} != {n}", r.rx_frames));
        }
        let Some(lb) = r.units.iter().find(|u| u.name == "lb") else {
            return (false, "no lb unit".into());
        };
        if lb.gate.bytes_copied_out != 4 * n || lb.gate.bytes_copied_in != n {
            fails.push(format!(
                "lb copied out {} in {}, want {} and {n}",
                lb.gate.bytes_copied_out,
                lb.gate.bytes_copied_in,
                4 * n
            ));
        }
        let servers: Vec<_> = r.units.iter().filter(|u| u.name.starts_with("server")).collect();
        let processed: u64 = servers.iter().map(|u| u.rx).sum();
        let out: u64 = servers.iter().map(|u| u.gate.bytes_copied_out).sum();
        let inn: u64 = servers.iter().map(|u| u.gate.bytes_copied_in).sum();
        if servers.len() != ACCOUNTING_SERVERS {
            fails.push(format!("{} server units", servers.len()));
        }
        if out != 4 * processed || inn != 4 * processed {
            fails.push(format!("servers copied out {out} in {inn} for {processed} packets"));
        }
        for u in servers.iter().copied().chain(std::iter::once(lb)) {
            if u.gate.bytes_copied_out != 4 * u.rx && u.name != "lb" {
                fails.push(format!("{} copied {} for {} packets", u.name, u.gate.bytes_copied_out, u.rx));
            }
            if u.gate.ocalls != u.batches {
                fails.push(format!("{} ocalls {} != batches {}", u.name, u.gate.ocalls, u.batches));
            }
        }
        let ocalls: u64 = r.units.iter().map(|u| u.gate.ocalls).sum();
        let note = format!(
            "lb out/in {}/{}, servers {processed} pkts out/in {out}/{inn}, ocalls {ocalls}{}",
            lb.gate.bytes_copied_out,
            lb.gate.bytes_copied_in,
            if r.oversubscribed { ", oversubscribed" } else { "" }
        );
        if fails.is_empty() {
            (true, note)
        } else {
            (false, format!("{note}; {}", fails.join(", ")))
        }
    }

    /// Median MPPS per configuration, repetitions interleaved so slow drift
    /// on the host hits every configuration alike.
    fn measure(&mut self, cfgs: &[TopoConfig]) -> Result<Vec<f64>, TopoError> {
        let limit = RunLimit::Duration {
            warmup: self.cfg.warmup,
            measure: self.cfg.measure,
        };
        let mut samples = vec![Vec::new(); cfgs.len()];
        for _ in 0..self.cfg.reps.max(1) {
            for (c, s) in cfgs.iter().zip(samples.iter_mut()) {
                s.push(self.execute(c, limit)?.mpps());
            }
        }
        Ok(samples.into_iter().map(median).collect())
    }

    fn scaling_suite(&mut self) -> Check {
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        let enc = |v: &Self, kind, icv| {
            let mut c = v.topo(Scenario::L2FwdEnc, kind, Mode::Trusted, 64);
            c.icv = icv;
            c
        };
        let cfgs = [
            enc(self, TopologyKind::Parallel { enclaves: 1 }, true),
            enc(self, TopologyKind::Parallel { enclaves: 2 }, true),
            enc(self, TopologyKind::Baseline, false),
        ];
        let m = match self.measure(&cfgs) {
            Ok(m) => m,
            Err(e) => return (false, e.to_string()),
        };
        let scale = m[1] / m[0];
        let no_icv = m[2] / m[0];
        let enough_cores = cores >= SCALING_MIN_CORES;
        let ok = enough_cores && scale >= SCALING_MIN_RATIO && no_icv >= SCALING_MIN_RATIO;
        let mut note = format!(
            "host cores {cores}; 1 enclave {:.3} Mpps, 2 enclaves {:.3} Mpps ({scale:.2}x); no-icv {:.3} Mpps ({no_icv:.2}x); need >= {SCALING_MIN_RATIO}x each",
            m[0], m[1], m[2]
        );
        if !enough_cores {
            let _ = write!(note, " on >= {SCALING_MIN_CORES} cores, host cannot host dedicated workers");
        }
        (ok, note)
    }

    /// Median over pairs of the overhead of each trusted run against the
    /// vanilla run next to it. Cells are visited round-robin and the order
    /// inside a pair alternates, so drift on the host lands on every cell
    /// and on both modes alike.
    fn paired_overheads(&mut self, cells: &[(TopoConfig, TopoConfig)]) -> Result<Vec<f64>, TopoError> {
        let limit = RunLimit::Duration {
            warmup: self.cfg.pair_warmup,
            measure: self.cfg.pair_measure,
        };
        let mut samples = vec![Vec::new(); cells.len()];
        for round in 0..self.cfg.pairs.max(1) {
            for ((v, t), s) in cells.iter().zip(samples.iter_mut()) {
                let (vm, tm) = if round % 2 == 0 {
                    let vm = self.execute(v, limit)?.mpps();
                    (vm, self.execute(t, limit)?.mpps())
                } else {
                    let tm = self.execute(t, limit)?.mpps();
                    (self.execute(v, limit)?.mpps(), tm)
                };
                s.push(sgx_overhead(vm, tm).unwrap_or(f64::NAN));
            }
        }
        Ok(samples.into_iter().map(median).collect())
    }

    fn ordering_suite(&mut self) -> Check {
        const SIZES: [usize; 2] = [64, 128];
        let lb = TopologyKind::LoadBalancer {
            servers: 0,
            two_per_server: false,
        };
        let mut cells = Vec::new();
        for size in SIZES {
            for (s, k) in [
                (Scenario::L2Fwd, TopologyKind::Baseline),
                (Scenario::L3Fwd, TopologyKind::Baseline),
                (Scenario::LbServer, lb),
            ] {
                let mut t = self.topo(s, k, Mode::Trusted, size);
                t.buffer_mode = BufferMode::TrustedCopy;
                cells.push((self.topo(s, k, Mode::Vanilla, size), t));
            }
        }
        let o = match self.paired_overheads(&cells) {
            Ok(o) => o,
            Err(e) => return (false, e.to_string()),
        };
        let mut ok = true;
        let mut notes = Vec::new();
        for (size, o) in SIZES.iter().zip(o.chunks(3)) {
            let pass = o[0] < o[2] && o[1] < o[2];
            ok &= pass;
            notes.push(format!(
                "{size}B median overhead l2fwd {:.2}% l3fwd {:.2}% lb-copy {:.2}%{}",
                o[0],
                o[1],
                o[2],
                if pass { "" } else { " (order violated)" }
            ));
        }
        notes.push(format!("{} pairs per cell", self.cfg.pairs));
        (ok, notes.join("; "))
    }

    fn conservation_suite(&mut self) -> Check {
        if self.runs.is_empty() {
            self.conservation_matrix();
        }
        let broken: Vec<&RunTally> = self.runs.iter().filter(|r| r.rx != r.tx + r.drops).collect();
        let frames: u64 = self.runs.iter().map(|r| r.rx).sum();
        if broken.is_empty() {
            (true, format!("{} runs, {frames} frames, rx == tx + drops in all", self.runs.len()))
        } else {
            let list: Vec<String> = broken
                .iter()
                .map(|r| format!("{} rx {} tx {} drops {}", r.label, r.rx, r.tx, r.drops))
                .collect();
            (false, format!("{} of {} runs broken: {}", broken.len(), self.runs.len(), list.join(", ")))
        }
    }

    /// Short runs of every scenario and topology, used when conservation is
    /// requested on its own.
    fn conservation_matrix(&mut self) {
        let limit = RunLimit::Frames(20_000);
        let lb = |servers, two_per_server| TopologyKind::LoadBalancer { servers, two_per_server };
        let mut cfgs = Vec::new();
        for s in [Scenario::L2Fwd, Scenario::L3Fwd, Scenario::L2FwdEnc, Scenario::L3FwdEnc] {
            for k in [
                TopologyKind::Baseline,
                TopologyKind::Parallel { enclaves: 2 },
                TopologyKind::Pipeline { stages: 2 },
            ] {
                for m in [Mode::Vanilla, Mode::Trusted] {
                    cfgs.push(self.topo(s, k, m, 64));
                }
            }
        }
        for k in [lb(0, false), lb(3, false), lb(2, true)] {
            for bm in [BufferMode::TrustedCopy, BufferMode::Untrusted] {
                let mut c = self.topo(Scenario::LbServer, k, Mode::Trusted, 128);
                c.buffer_mode = bm;
                cfgs.push(c);
            }
            cfgs.push(self.topo(Scenario::LbServer, k, Mode::Vanilla, 128));
        }
        for c in &mut cfgs {
            c.cardinality = 50_000;
        }
        for c in cfgs {
            if let Err(e) = self.execute(&c, limit) {
                self.runs.push(RunTally {
                    label: format!("{} {}: {e}", c.scenario, c.kind.describe()),
                    rx: 1,
                    tx: 0,
                    drops: 0,
                });
            }
        }
    }

    fn attestation_suite(&mut self) -> Check {
        let kind = TopologyKind::Pipeline { stages: 3 };
        let mut c = self.topo(Scenario::L2FwdEnc, kind, Mode::Trusted, 64);
        c.cardinality = 4_096;
        let honest = match self.execute(&c, RunLimit::Frames(1_000)) {
            Ok(r) => r.tx_frames,
            Err(e) => return (false, format!("honest pipeline failed: {e}")),
        };
        let mut outcomes = Vec::new();
        let mut ok = honest == 1_000;
        for stage in 0..3 {
            c.corrupt_stage = Some(stage);
            match topo::build(&c) {
                Err(TopoError::AttestationFailed { left, right, .. }) => {
                    outcomes.push(format!("stage {stage}: refused ({left}<->{right}), 0 frames"));
                }
                Err(e) => {
                    ok = false;
                    outcomes.push(format!("stage {stage}: unexpected error {e}"));
                }
                Ok(dp) => {
                    ok = false;
                    let r = dp.run(RunLimit::Frames(1_000));
                    outcomes.push(format!("stage {stage}: started and forwarded {}", r.tx_frames));
                }
            }
        }
        (ok, format!("honest pipeline forwarded {honest}/1000; {}", outcomes.join(", ")))
    }
}

fn wire_suite() -> Check {
    let mut worst = (0.0f64, 0usize);
    let mut fails = Vec::new();
    for (i, c) in PAPER_CELLS.iter().enumerate() {
        let g = wire_throughput(c.mpps, c.frame_size).unwrap_or(f64::NAN);
        let rel = (g - c.gbps).abs() / c.gbps;
        if rel > worst.0 || rel.is_nan() {
            worst = (rel, i);
        }
        if rel.is_nan() || rel > WIRE_TOLERANCE {
            fails.push(format!(
                "table {} {} {}B: {:.2} Mpps -> {g:.2} Gbps vs published {:.2} ({:.1}%)",
                c.table,
                c.column,
                c.frame_size,
                c.mpps,
                c.gbps,
                rel * 100.0
            ));
        }
    }
    let ok = fails.is_empty();
    let mut note = format!(
        "{}/{} cells within {:.0}%",
        PAPER_CELLS.len() - fails.len(),
        PAPER_CELLS.len(),
        WIRE_TOLERANCE * 100.0
    );
    if !ok {
        let _ = write!(note, "; {}", fails.join("; "));
    }
    (ok, note)
}

fn overhead_suite() -> Check {
    let mut fails = Vec::new();
    for q in QUOTED_OVERHEADS.iter() {
        let exact = sgx_overhead(q.vanilla_mpps, q.trusted_mpps).unwrap_or(f64::NAN);
        let oracle = 100.0 * (q.vanilla_mpps - q.trusted_mpps) / q.vanilla_mpps;
        if !((exact - oracle).abs() < 1e-9 && (exact - q.quoted_pct).abs() <= OVERHEAD_TOLERANCE_PP) {
            fails.push(format!("{}: {exact:.2}% vs quoted {}%", q.what, q.quoted_pct));
        }
    }
    let n = QUOTED_OVERHEADS.len();
    if fails.is_empty() {
        (true, format!("{n}/{n} quoted overheads within {OVERHEAD_TOLERANCE_PP} pp"))
    } else {
        (false, fails.join("; "))
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn multiset(frames: &[Vec<u8>]) -> HashMap<&[u8], usize> {
    let mut m = HashMap::new();
    for f in frames {
        *m.entry(f.as_slice()).or_insert(0) += 1;
    }
    m
}

fn first_difference(a: &[Vec<u8>], b: &[Vec<u8>]) -> usize {
    a.iter().zip(b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()))
}

fn ones_complement(header: &[u8]) -> u16 {
    let mut sum: u32 = header
        .chunks(2)
        .map(|w| u32::from(u16::from_be_bytes([w[0], *w.get(1).unwrap_or(&0)])))
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Expected output of a plain forwarding run, written without the
/// dataplane's ops: for L2 the source MAC becomes the egress port's MAC;
/// for L3 the longest matching route is found by scanning every route,
/// TTL drops by one with a fully recomputed checksum, and both MACs are
/// rewritten.
fn oracle_stream(scenario: Scenario, cfg: &TopoConfig) -> Vec<Vec<u8>> {
    let spec = cfg.traffic_spec();
    let source = FrameSource::new(spec.clone(), None).expect("valid spec");
    let ports = traffic::port_macs();
    let mut routes_by_len: BTreeMap<u8, HashMap<u32, NextHop>> = BTreeMap::new();
    let mut macs = None;
    match scenario {
        Scenario::L2Fwd => macs = Some(traffic::mac_table_for(&spec)),
        Scenario::L3Fwd => {
            for (p, len, hop) in traffic::lpm_for(&spec).routes() {
                routes_by_len.entry(len).or_default().insert(p, *hop);
            }
        }
        _ => unreachable!("plain scenarios only"),
    }
    let mut out = Vec::with_capacity(EQUIVALENCE_FRAMES as usize);
    for k in 0..EQUIVALENCE_FRAMES {
        let mut f = source.frame(k);
        match scenario {
            Scenario::L2Fwd => {
                let dst = MacAddr(f[0..6].try_into().expect("6 bytes"));
                let Some(port) = macs.as_ref().and_then(|t| t.lookup(&dst)) else {
                    continue;
                };
                let Some(src) = ports.get(port) else { continue };
                f[6..12].copy_from_slice(&src.0);
            }
            _ => {
                let ip = ETH_HDR_LEN;
                let dst = u32::from_be_bytes(f[ip + 16..ip + 20].try_into().expect("4 bytes"));
                let hop = routes_by_len
                    .iter()
                    .rev()
                    .find_map(|(&len, m)| m.get(&(dst & mask(len))).copied());
                let Some(hop) = hop else { continue };
                if f[ip + 8] <= 1 {
                    continue;
                }
                let Some(src) = ports.get(hop.port) else { continue };
                f[ip + 8] -= 1;
                f[ip + 10..ip + 12].fill(0);
                let c = ones_complement(&f[ip..ip + 20]);
                f[ip + 10..ip + 12].copy_from_slice(&c.to_be_bytes());
                f[0..6].copy_from_slice(&hop.mac.0);
                f[6..12].copy_from_slice(&src.0);
            }
        }
        out.push(f);
    }
    out
}
