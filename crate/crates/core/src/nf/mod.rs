//! The network functions: plain and encrypted L2/L3 forwarding, the load
//! balancer and its backend servers.
//!
//! Each function is a sequence of [`Op`]s run over a burst. An op either
//! touches frames one at a time (sanity checks, lookups, rewrites, crypto)
//! or the whole burst at once (the lookups delegated through an OCALL).
//! Pipelines split the same op sequence across enclaves, so composition
//! stays equal to the single-enclave function by construction.

pub mod lpm;
pub mod tables;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::crypto::{KeyPair, SecurityAssociation};
use crate::pkt::secure::{self, SecureError};
use crate::pkt::{
    checksum_update, sanity_check_l2, sanity_check_l3, FrameBuffer, MacAddr, Mbuf, SanityReject,
    ETH_HDR_LEN,
};
use crate::tee::{BufferMode, Enclave, LookupBuffers, TeeError};
use crate::util::mix64;

pub use lpm::{LpmTable, NextHop};
pub use tables::{
    server_tables_from, FlowTable, MacTable, PortMacs, ServerTable, TableError, MAC_TABLE_CAPACITY,
};

/// Why a frame was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    Runt,
    Oversize,
    Truncated,
    NotIpv4,
    BadVersion,
    BadIhl,
    BadChecksum,
    TtlExpired,
    BadTotalLength,
    MacMiss,
    RouteMiss,
    Tamper,
    Malformed,
    Filtered,
    TxFull,
}

impl DropReason {
    pub const ALL: [DropReason; 15] = [
        DropReason::Runt,
        DropReason::Oversize,
        DropReason::Truncated,
        DropReason::NotIpv4,
        DropReason::BadVersion,
        DropReason::BadIhl,
        DropReason::BadChecksum,
        DropReason::TtlExpired,
        DropReason::BadTotalLength,
        DropReason::MacMiss,
        DropReason::RouteMiss,
        DropReason::Tamper,
        DropReason::Malformed,
        DropReason::Filtered,
        DropReason::TxFull,
    ];
    pub const COUNT: usize = Self::ALL.len();

    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Runt => "runt",
            DropReason::Oversize => "oversize",
            DropReason::Truncated => "truncated",
            DropReason::NotIpv4 => "not_ipv4",
            DropReason::BadVersion => "bad_version",
            DropReason::BadIhl => "bad_ihl",
            DropReason::BadChecksum => "bad_checksum",
            DropReason::TtlExpired => "ttl_expired",
            DropReason::BadTotalLength => "bad_total_length",
            DropReason::MacMiss => "mac_miss",
            DropReason::RouteMiss => "route_miss",
            DropReason::Tamper => "tamper",
            DropReason::Malformed => "malformed",
            DropReason::Filtered => "filtered",
            DropReason::TxFull => "tx_full",
        }
    }
}

impl From<SanityReject> for DropReason {
    fn from(r: SanityReject) -> Self {
        match r {
            SanityReject::Runt => DropReason::Runt,
            SanityReject::Oversize => DropReason::Oversize,
            SanityReject::Truncated => DropReason::Truncated,
            SanityReject::NotIpv4 => DropReason::NotIpv4,
            SanityReject::BadVersion => DropReason::BadVersion,
            SanityReject::BadIhl => DropReason::BadIhl,
            SanityReject::BadChecksum => DropReason::BadChecksum,
            SanityReject::TtlExpired => DropReason::TtlExpired,
            SanityReject::BadTotalLength => DropReason::BadTotalLength,
        }
    }
}

impl From<SecureError> for DropReason {
    fn from(e: SecureError) -> Self {
        match e {
            SecureError::IcvMismatch => DropReason::Tamper,
            _ => DropReason::Malformed,
        }
    }
}

/// Per-worker drop tally, flushed into [`DropCounters`] once per burst.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DropTally([u64; DropReason::COUNT]);

impl DropTally {
    pub fn add(&mut self, reason: DropReason) {
        self.0[reason as usize] += 1;
    }

    pub fn get(&self, reason: DropReason) -> u64 {
        self.0[reason as usize]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn clear(&mut self) {
        self.0 = [0; DropReason::COUNT];
    }

    pub fn iter(&self) -> impl Iterator<Item = (DropReason, u64)> + '_ {
        DropReason::ALL.iter().map(|&r| (r, self.0[r as usize]))
    }
}

/// Shared drop counters for a whole dataplane.
#[derive(Debug, Default)]
pub struct DropCounters([AtomicU64; DropReason::COUNT]);

impl DropCounters {
    pub fn flush(&self, tally: &mut DropTally) {
        for (i, n) in tally.0.iter().enumerate() {
            if *n > 0 {
                self.0[i].fetch_add(*n, Ordering::Relaxed);
            }
        }
        tally.clear();
    }

    pub fn snapshot(&self) -> DropTally {
        let mut t = DropTally::default();
        for (i, c) in self.0.iter().enumerate() {
            t.0[i] = c.load(Ordering::Relaxed);
        }
        t
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|c| c.load(Ordering::Relaxed)).sum()
    }
}

/// Where a function runs: inside an emulated enclave, or directly with no
/// boundary (the vanilla baseline).
#[derive(Debug)]
pub enum Gate {
    Vanilla(KeyPair),
    Enclave(Enclave),
}

impl Gate {
    pub fn enclave(&self) -> Option<&Enclave> {
        match self {
            Gate::Enclave(e) => Some(e),
            Gate::Vanilla(_) => None,
        }
    }

    pub fn enclave_mut(&mut self) -> Option<&mut Enclave> {
        match self {
            Gate::Enclave(e) => Some(e),
            Gate::Vanilla(_) => None,
        }
    }

    pub fn is_trusted(&self) -> bool {
        matches!(self, Gate::Enclave(_))
    }

    /// Charges trusted memory when running in an enclave.
    pub fn place(&mut self, bytes: u64) {
        if let Gate::Enclave(e) = self {
            if bytes > 0 {
                e.arena_alloc(bytes);
            }
        }
    }

    pub fn security_association(&mut self) -> SecurityAssociation {
        match self {
            Gate::Enclave(e) => e.security_association(),
            Gate::Vanilla(keys) => SecurityAssociation::new(keys),
        }
    }

    pub fn buffer_mode(&self) -> BufferMode {
        match self {
            Gate::Enclave(e) => e.buffer_mode(),
            Gate::Vanilla(_) => BufferMode::Untrusted,
        }
    }

    /// Runs a delegated lookup: one OCALL in an enclave, a plain call
    /// otherwise.
    pub fn lookup<K: Copy + Default, R: Copy + Default>(
        &self,
        bufs: &mut LookupBuffers<K, R>,
        lookup: impl FnOnce(&[K], &mut [R]),
    ) -> Result<(), TeeError> {
        match self {
            Gate::Enclave(e) => e.ocall_lookup(bufs, lookup),
            Gate::Vanilla(_) => {
                bufs.direct(lookup);
                Ok(())
            }
        }
    }
}

/// Keys plus the per-sender counter used when (re)sealing frames.
#[derive(Debug)]
pub struct CryptoCtx {
    sa: SecurityAssociation,
    sender: u32,
    next_pn: u32,
    icv: bool,
}

impl CryptoCtx {
    pub fn new(gate: &mut Gate, sender: u32, icv: bool) -> Self {
        CryptoCtx {
            sa: gate.security_association(),
            sender,
            next_pn: 1,
            icv,
        }
    }

    fn take_pn(&mut self) -> u32 {
        let pn = self.next_pn;
        self.next_pn = self.next_pn.wrapping_add(1).max(1);
        pn
    }

    pub fn sender(&self) -> u32 {
        self.sender
    }

    pub fn icv_enabled(&self) -> bool {
        self.icv
    }
}

/// Stateless description of one processing step; instantiated per enclave.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    SanityL2,
    SanityL3,
    MacLookup,
    MacRewrite,
    LpmLookup,
    L3Rewrite,
    DecryptL2,
    VerifyL2,
    SealL2,
    DecryptL3,
    VerifyL3,
    SealL3,
    LbClassify,
    ServerFilter,
}

/// Shared, immutable tables and knobs a function is built from.
#[derive(Debug, Clone)]
pub struct NfContext {
    pub ports: Arc<PortMacs>,
    pub mac_table: Option<Arc<MacTable>>,
    pub lpm: Option<Arc<LpmTable>>,
    pub flow_table: Option<Arc<FlowTable>>,
    pub server_tables: Vec<Arc<ServerTable>>,
    pub icv: bool,
    pub burst: usize,
}

/// Which instance an op belongs to: drives crypto sender ids and the
/// server table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Instance {
    /// Globally unique per processing enclave within a run.
    pub index: u16,
    /// Backend index for server ops.
    pub backend: u16,
}

/// Sender id of frames sealed by a processing instance. Id 1 belongs to the
/// traffic generator.
pub fn instance_sender(index: u16) -> u32 {
    0x8000 | u32::from(index)
}

pub struct LbState {
    table: Arc<FlowTable>,
    bufs: LookupBuffers<u32, u8>,
}

pub struct ServerState {
    backend: u16,
    table: Arc<ServerTable>,
    bufs: LookupBuffers<u32, u32>,
}

pub enum Op {
    SanityL2,
    SanityL3,
    MacLookup(Arc<MacTable>),
    MacRewrite(Arc<PortMacs>),
    LpmLookup(Arc<LpmTable>),
    L3Rewrite(Arc<LpmTable>, Arc<PortMacs>),
    DecryptL2(Arc<CryptoState>),
    VerifyL2(Arc<CryptoState>),
    SealL2(CryptoCtx),
    DecryptL3(Arc<CryptoState>),
    VerifyL3(Arc<CryptoState>),
    SealL3(CryptoCtx),
    LbClassify(Box<LbState>),
    ServerFilter(Box<ServerState>),
}

/// Receive-side crypto state (no counters).
#[derive(Debug)]
pub struct CryptoState {
    sa: SecurityAssociation,
    icv: bool,
}

impl std::fmt::Debug for Op {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Op::SanityL2 => "SanityL2",
            Op::SanityL3 => "SanityL3",
            Op::MacLookup(_) => "MacLookup",
            Op::MacRewrite(_) => "MacRewrite",
            Op::LpmLookup(_) => "LpmLookup",
            Op::L3Rewrite(..) => "L3Rewrite",
            Op::DecryptL2(_) => "DecryptL2",
            Op::VerifyL2(_) => "VerifyL2",
            Op::SealL2(_) => "SealL2",
            Op::DecryptL3(_) => "DecryptL3",
            Op::VerifyL3(_) => "VerifyL3",
            Op::SealL3(_) => "SealL3",
            Op::LbClassify(_) => "LbClassify",
            Op::ServerFilter(_) => "ServerFilter",
        })
    }
}

fn required<T>(t: &Option<Arc<T>>, what: &str) -> Arc<T> {
    Arc::clone(t.as_ref().unwrap_or_else(|| panic!("{what} not built for this scenario")))
}

impl Op {
    /// Builds an op for `gate`, placing its tables and keys in the gate's
    /// arena. Receive-side crypto shares one association across ops of the
    /// same instance via `rx`.
    pub fn build(
        kind: OpKind,
        gate: &mut Gate,
        ctx: &NfContext,
        instance: Instance,
        rx: &mut Option<Arc<CryptoState>>,
    ) -> Op {
        let mut rx_state = |gate: &mut Gate| {
            Arc::clone(rx.get_or_insert_with(|| {
                Arc::new(CryptoState {
                    sa: gate.security_association(),
                    icv: ctx.icv,
                })
            }))
        };
        match kind {
            OpKind::SanityL2 => Op::SanityL2,
            OpKind::SanityL3 => Op::SanityL3,
            OpKind::MacLookup => {
                let t = required(&ctx.mac_table, "MAC table");
                gate.place(t.footprint_bytes());
                Op::MacLookup(t)
            }
            OpKind::MacRewrite => Op::MacRewrite(Arc::clone(&ctx.ports)),
            OpKind::LpmLookup => {
                let t = required(&ctx.lpm, "LPM table");
                gate.place(t.footprint_bytes());
                Op::LpmLookup(t)
            }
            OpKind::L3Rewrite => Op::L3Rewrite(required(&ctx.lpm, "LPM table"), Arc::clone(&ctx.ports)),
            OpKind::DecryptL2 => Op::DecryptL2(rx_state(gate)),
            OpKind::VerifyL2 => Op::VerifyL2(rx_state(gate)),
            OpKind::DecryptL3 => Op::DecryptL3(rx_state(gate)),
            OpKind::VerifyL3 => Op::VerifyL3(rx_state(gate)),
            OpKind::SealL2 => Op::SealL2(CryptoCtx::new(gate, instance_sender(instance.index), ctx.icv)),
            OpKind::SealL3 => Op::SealL3(CryptoCtx::new(gate, instance_sender(instance.index), ctx.icv)),
            OpKind::LbClassify => {
                let table = required(&ctx.flow_table, "flow table");
                // The table is enclave state; its lookup runs outside.
                gate.place(table.footprint_bytes());
                let bufs = LookupBuffers::new(gate.buffer_mode(), ctx.burst);
                gate.place(bufs.trusted_bytes());
                Op::LbClassify(Box::new(LbState { table, bufs }))
            }
            OpKind::ServerFilter => {
                let table = Arc::clone(
                    ctx.server_tables
                        .get(usize::from(instance.backend))
                        .expect("server table for backend"),
                );
                gate.place(table.footprint_bytes());
                let bufs = LookupBuffers::new(gate.buffer_mode(), ctx.burst);
                gate.place(bufs.trusted_bytes());
                Op::ServerFilter(Box::new(ServerState {
                    backend: instance.backend,
                    table,
                    bufs,
                }))
            }
        }
    }

    fn apply_frame(&mut self, f: &mut FrameBuffer) -> Result<(), DropReason> {
        match self {
            Op::SanityL2 => sanity_check_l2(f.as_slice()).map_err(DropReason::from),
            Op::SanityL3 => sanity_check_l3(f.as_slice()).map_err(DropReason::from),
            Op::MacLookup(table) => {
                let b = f.as_slice();
                if b.len() < ETH_HDR_LEN {
                    return Err(DropReason::Truncated);
                }
                let dst = MacAddr([b[0], b[1], b[2], b[3], b[4], b[5]]);
                let port = table.lookup(&dst).ok_or(DropReason::MacMiss)?;
                f.meta.egress = port;
                Ok(())
            }
            Op::MacRewrite(ports) => {
                let mac = ports.get(f.meta.egress).ok_or(DropReason::MacMiss)?;
                f.as_mut_slice()[6..12].copy_from_slice(&mac.0);
                Ok(())
            }
            Op::LpmLookup(table) => {
                let b = f.as_slice();
                if b.len() < ETH_HDR_LEN + 20 {
                    return Err(DropReason::Truncated);
                }
                let dst = u32::from_be_bytes([b[30], b[31], b[32], b[33]]);
                let hop = table.lookup(dst).ok_or(DropReason::RouteMiss)?;
                f.meta.next_hop = hop;
                f.meta.egress = table.next_hop(hop).port;
                Ok(())
            }
            Op::L3Rewrite(table, ports) => {
                let hop = *table.next_hop(f.meta.next_hop);
                let egress_mac = ports.get(hop.port).ok_or(DropReason::RouteMiss)?;
                let b = f.as_mut_slice();
                if b.len() < ETH_HDR_LEN + 20 {
                    return Err(DropReason::Truncated);
                }
                let ip = &mut b[ETH_HDR_LEN..];
                if ip[8] <= 1 {
                    // Would leave with TTL 0.
                    return Err(DropReason::TtlExpired);
                }
                let old = u16::from_be_bytes([ip[8], ip[9]]);
                ip[8] -= 1;
                let new = u16::from_be_bytes([ip[8], ip[9]]);
                let csum = checksum_update(u16::from_be_bytes([ip[10], ip[11]]), old, new);
                ip[10..12].copy_from_slice(&csum.to_be_bytes());
                b[0..6].copy_from_slice(&hop.mac.0);
                b[6..12].copy_from_slice(&egress_mac.0);
                Ok(())
            }
            Op::DecryptL2(st) => secure::decrypt_l2(f, &st.sa).map_err(DropReason::from),
            Op::VerifyL2(st) => secure::verify_strip_l2(f, &st.sa, st.icv).map_err(DropReason::from),
            Op::SealL2(ctx) => {
                let pn = ctx.take_pn();
                secure::seal_l2(f, &ctx.sa, ctx.sender as u16, pn, ctx.icv).map_err(DropReason::from)
            }
            Op::DecryptL3(st) => secure::decrypt_l3(f, &st.sa).map_err(DropReason::from),
            Op::VerifyL3(st) => secure::verify_strip_l3(f, &st.sa, st.icv).map_err(DropReason::from),
            Op::SealL3(ctx) => {
                let seq = ctx.take_pn();
                secure::seal_l3(f, &ctx.sa, ctx.sender, seq, ctx.icv).map_err(DropReason::from)
            }
            Op::LbClassify(_) | Op::ServerFilter(_) => unreachable!("burst op"),
        }
    }

    fn apply_burst(
        &mut self,
        gate: &Gate,
        burst: &mut Vec<Mbuf>,
        keep: &mut Vec<Mbuf>,
        dropped: &mut Vec<Mbuf>,
        tally: &mut DropTally,
    ) -> Result<(), TeeError> {
        match self {
            Op::LbClassify(st) => {
                // Key extraction inside the enclave; malformed frames never
                // reach the lookup.
                keep.clear();
                for f in burst.drain(..) {
                    if f.len() >= ETH_HDR_LEN + 20 {
                        keep.push(f);
                    } else {
                        tally.add(DropReason::Malformed);
                        dropped.push(f);
                    }
                }
                std::mem::swap(burst, keep);
                if burst.is_empty() {
                    return Ok(());
                }
                let keys = st.bufs.keys_mut(burst.len());
                for (k, f) in keys.iter_mut().zip(burst.iter()) {
                    *k = dst_ip(f);
                }
                let table = &st.table;
                gate.lookup(&mut st.bufs, |keys, out| table.classify_into(keys, out))?;
                for (f, &b) in burst.iter_mut().zip(st.bufs.results()) {
                    f.meta.egress = u16::from(b);
                }
                Ok(())
            }
            Op::ServerFilter(st) => {
                keep.clear();
                for f in burst.drain(..) {
                    if f.len() >= ETH_HDR_LEN + 20 {
                        keep.push(f);
                    } else {
                        tally.add(DropReason::Malformed);
                        dropped.push(f);
                    }
                }
                std::mem::swap(burst, keep);
                if burst.is_empty() {
                    return Ok(());
                }
                let keys = st.bufs.keys_mut(burst.len());
                for (k, f) in keys.iter_mut().zip(burst.iter()) {
                    *k = dst_ip(f);
                }
                let table = &st.table;
                gate.lookup(&mut st.bufs, |keys, out| table.lookup_into(keys, out))?;
                keep.clear();
                for (f, &r) in burst.drain(..).zip(st.bufs.results()) {
                    if r == ServerTable::MISS {
                        tally.add(DropReason::Filtered);
                        dropped.push(f);
                    } else {
                        let mut f = f;
                        f.meta.backend_hops = f.meta.backend_hops.saturating_add(1);
                        f.meta.last_backend = st.backend;
                        keep.push(f);
                    }
                }
                std::mem::swap(burst, keep);
                Ok(())
            }
            _ => {
                keep.clear();
                for mut f in burst.drain(..) {
                    match self.apply_frame(&mut f) {
                        Ok(()) => keep.push(f),
                        Err(r) => {
                            tally.add(r);
                            dropped.push(f);
                        }
                    }
                }
                std::mem::swap(burst, keep);
                Ok(())
            }
        }
    }
}

fn dst_ip(f: &FrameBuffer) -> u32 {
    let b = f.as_slice();
    u32::from_be_bytes([b[30], b[31], b[32], b[33]])
}

/// Fallback backend for destinations missing from the flow table.
pub fn fallback_backend(dst_ip: u32, n_backends: usize) -> u8 {
    (mix64(u64::from(dst_ip)) % n_backends.max(1) as u64) as u8
}

/// An ordered list of ops bound to one gate.
pub struct NfChain {
    ops: Vec<Op>,
    keep: Vec<Mbuf>,
}

impl std::fmt::Debug for NfChain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(&self.ops).finish()
    }
}

impl NfChain {
    pub fn build(kinds: &[OpKind], gate: &mut Gate, ctx: &NfContext, instance: Instance) -> Self {
        let mut rx = None;
        let ops = kinds
            .iter()
            .map(|&k| Op::build(k, gate, ctx, instance, &mut rx))
            .collect();
        NfChain {
            ops,
            keep: Vec::with_capacity(ctx.burst),
        }
    }

    /// Runs every op over `burst`; survivors stay in `burst`, drops are
    /// appended to `dropped` and counted in `tally`.
    pub fn run(
        &mut self,
        gate: &Gate,
        burst: &mut Vec<Mbuf>,
        dropped: &mut Vec<Mbuf>,
        tally: &mut DropTally,
    ) -> Result<(), TeeError> {
        for op in &mut self.ops {
            if burst.is_empty() {
                break;
            }
            op.apply_burst(gate, burst, &mut self.keep, dropped, tally)?;
        }
        Ok(())
    }
}

/// The scenarios the harness knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "l2fwd")]
    L2Fwd,
    #[serde(rename = "l3fwd")]
    L3Fwd,
    #[serde(rename = "l2fwd-enc")]
    L2FwdEnc,
    #[serde(rename = "l3fwd-enc")]
    L3FwdEnc,
    #[serde(rename = "lb-server")]
    LbServer,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::L2Fwd,
        Scenario::L3Fwd,
        Scenario::L2FwdEnc,
        Scenario::L3FwdEnc,
        Scenario::LbServer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::L2Fwd => "l2fwd",
            Scenario::L3Fwd => "l3fwd",
            Scenario::L2FwdEnc => "l2fwd-enc",
            Scenario::L3FwdEnc => "l3fwd-enc",
            Scenario::LbServer => "lb-server",
        }
    }

    pub fn is_encrypted(self) -> bool {
        matches!(self, Scenario::L2FwdEnc | Scenario::L3FwdEnc)
    }

    /// Op sequence of the forwarding scenarios. The load balancer is wired
    /// separately (LB op, then per-backend server ops).
    pub fn ops(self) -> &'static [OpKind] {
        use OpKind::*;
        match self {
            Scenario::L2Fwd => &[SanityL2, MacLookup, MacRewrite],
            Scenario::L3Fwd => &[SanityL3, LpmLookup, L3Rewrite],
            Scenario::L2FwdEnc => &[DecryptL2, VerifyL2, SanityL2, MacLookup, MacRewrite, SealL2],
            Scenario::L3FwdEnc => &[DecryptL3, VerifyL3, SanityL3, LpmLookup, L3Rewrite, SealL3],
            Scenario::LbServer => &[LbClassify],
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| {
                format!("unknown scenario '{s}' (l2fwd | l3fwd | l2fwd-enc | l3fwd-enc | lb-server)")
            })
    }
}

/// Splits `ops` into `stages` contiguous, near-equal groups.
pub fn split_stages(ops: &[OpKind], stages: usize) -> Vec<&[OpKind]> {
    assert!(stages >= 1 && stages <= ops.len(), "cannot split {} ops into {stages} stages", ops.len());
    (0..stages)
        .map(|i| &ops[i * ops.len() / stages..(i + 1) * ops.len() / stages])
        .collect()
}

#[cfg(test)]
mod tests;
