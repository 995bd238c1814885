//! Emulated enclave boundary.
//!
//! An [`Enclave`] is a measured processing unit with a trusted arena, keys
//! that never leave it, and a call gate that counts every transition and
//! every byte copied across the boundary. Isolation is API discipline: the
//! only way to obtain an `Enclave` is [`Platform::launch`], and key material
//! is reachable only through trusted-side constructors.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::crypto::{cmac, Key128, KeyPair, SecurityAssociation};
use crate::pkt::EnclaveId;

pub const PAGE_SIZE: u64 = 4096;
/// EPC size of the reference platform.
pub const DEFAULT_EPC_LIMIT: u64 = 128 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeeError {
    #[error("enclave measurement mismatch: expected {expected}, computed {actual}")]
    MeasurementMismatch {
        expected: Measurement,
        actual: Measurement,
    },
    #[error("enclave {0:?} is not launched")]
    NotLaunched(EnclaveId),
    #[error("local attestation failed: {0}")]
    AttestationFailed(String),
    #[error("arena limit must be positive")]
    EmptyArena,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Measurement(pub [u8; 32]);

impl fmt::Display for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        f.write_str("..")
    }
}

impl fmt::Debug for Measurement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Measurement({self})")
    }
}

/// How lookup keys and results cross the boundary on an OCALL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferMode {
    /// Buffers live in the arena and are copied out and back on every call.
    TrustedCopy,
    /// Buffers live in untrusted memory; nothing is copied.
    Untrusted,
}

impl BufferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BufferMode::TrustedCopy => "trusted_copy",
            BufferMode::Untrusted => "untrusted",
        }
    }
}

impl std::str::FromStr for BufferMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "trusted_copy" => Ok(BufferMode::TrustedCopy),
            "untrusted" => Ok(BufferMode::Untrusted),
            other => Err(format!("unknown buffer mode '{other}' (trusted_copy | untrusted)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnclaveConfig {
    pub scenario: String,
    pub config_bytes: Vec<u8>,
    pub code_identity: String,
    pub epc_limit: u64,
    pub buffer_mode: BufferMode,
    pub transition_latency: Duration,
}

impl EnclaveConfig {
    pub fn new(scenario: &str, code_identity: &str) -> Self {
        EnclaveConfig {
            scenario: scenario.to_string(),
            config_bytes: Vec::new(),
            code_identity: code_identity.to_string(),
            epc_limit: DEFAULT_EPC_LIMIT,
            buffer_mode: BufferMode::TrustedCopy,
            transition_latency: Duration::ZERO,
        }
    }
}

/// SHA-256 over the length-prefixed scenario name, config bytes and code
/// identity.
pub fn measure(config: &EnclaveConfig) -> Measurement {
    let mut h = Sha256::new();
    for part in [
        config.scenario.as_bytes(),
        config.config_bytes.as_slice(),
        config.code_identity.as_bytes(),
    ] {
        h.update((part.len() as u64).to_be_bytes());
        h.update(part);
    }
    Measurement(h.finalize().into())
}

/// Boundary counters. Atomic so the bench side can read them while the
/// owning worker runs.
#[derive(Debug, Default)]
pub struct CallGateStats {
    ecalls: AtomicU64,
    ocalls: AtomicU64,
    bytes_copied_in: AtomicU64,
    bytes_copied_out: AtomicU64,
    paging_events: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateSnapshot {
    pub ecalls: u64,
    pub ocalls: u64,
    pub bytes_copied_in: u64,
    pub bytes_copied_out: u64,
    pub paging_events: u64,
}

impl std::ops::Add for GateSnapshot {
    type Output = GateSnapshot;

    fn add(self, o: GateSnapshot) -> GateSnapshot {
        GateSnapshot {
            ecalls: self.ecalls + o.ecalls,
            ocalls: self.ocalls + o.ocalls,
            bytes_copied_in: self.bytes_copied_in + o.bytes_copied_in,
            bytes_copied_out: self.bytes_copied_out + o.bytes_copied_out,
            paging_events: self.paging_events + o.paging_events,
        }
    }
}

impl std::iter::Sum for GateSnapshot {
    fn sum<I: Iterator<Item = GateSnapshot>>(iter: I) -> Self {
        iter.fold(GateSnapshot::default(), |a, b| a + b)
    }
}

impl CallGateStats {
    pub fn snapshot(&self) -> GateSnapshot {
        GateSnapshot {
            ecalls: self.ecalls.load(Ordering::Relaxed),
            ocalls: self.ocalls.load(Ordering::Relaxed),
            bytes_copied_in: self.bytes_copied_in.load(Ordering::Relaxed),
            bytes_copied_out: self.bytes_copied_out.load(Ordering::Relaxed),
            paging_events: self.paging_events.load(Ordering::Relaxed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArenaAlloc {
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug)]
struct Arena {
    used: u64,
    limit: u64,
}

/// Run-scoped secrets held by the launcher: the provisioning key used for
/// attestation and the traffic keys handed to enclaves at launch.
pub struct Platform {
    provisioning: Key128,
    traffic_keys: KeyPair,
    next_id: u32,
}

impl fmt::Debug for Platform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Platform").field("next_id", &self.next_id).finish()
    }
}

impl Platform {
    /// Fresh random provisioning key; traffic keys come from the caller so
    /// that seeded workloads stay reproducible.
    pub fn new(traffic_keys: KeyPair) -> Self {
        let mut p = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut p);
        Platform {
            provisioning: Key128::new(p),
            traffic_keys,
            next_id: 1,
        }
    }

    /// Verifies the measurement (the remote-attestation stand-in), counts the
    /// single initialisation ECALL and provisions keys into the arena.
    pub fn launch(
        &mut self,
        config: &EnclaveConfig,
        expected: &Measurement,
    ) -> Result<Enclave, TeeError> {
        if config.epc_limit == 0 {
            return Err(TeeError::EmptyArena);
        }
        let actual = measure(config);
        if actual != *expected {
            return Err(TeeError::MeasurementMismatch {
                expected: *expected,
                actual,
            });
        }
        let id = EnclaveId(self.next_id);
        self.next_id += 1;
        let mut enclave = Enclave {
            id,
            measurement: actual,
            arena: Arena {
                used: 0,
                limit: config.epc_limit,
            },
            keys: self.traffic_keys.clone(),
            provisioning: self.provisioning.clone(),
            stats: Arc::new(CallGateStats::default()),
            buffer_mode: config.buffer_mode,
            latency: config.transition_latency,
            launched: true,
        };
        enclave.transition();
        enclave.stats.ecalls.fetch_add(1, Ordering::Relaxed);
        enclave.arena_alloc(2 * crate::crypto::KEY_LEN as u64 + 16);
        Ok(enclave)
    }
}

pub struct Enclave {
    id: EnclaveId,
    measurement: Measurement,
    arena: Arena,
    keys: KeyPair,
    provisioning: Key128,
    stats: Arc<CallGateStats>,
    buffer_mode: BufferMode,
    latency: Duration,
    launched: bool,
}

impl fmt::Debug for Enclave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Enclave")
            .field("id", &self.id)
            .field("measurement", &self.measurement)
            .field("arena_used", &self.arena.used)
            .field("arena_limit", &self.arena.limit)
            .field("buffer_mode", &self.buffer_mode)
            .finish_non_exhaustive()
    }
}

impl Enclave {
    pub fn id(&self) -> EnclaveId {
        self.id
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn buffer_mode(&self) -> BufferMode {
        self.buffer_mode
    }

    pub fn stats(&self) -> Arc<CallGateStats> {
        Arc::clone(&self.stats)
    }

    pub fn arena_used(&self) -> u64 {
        self.arena.used
    }

    pub fn arena_limit(&self) -> u64 {
        self.arena.limit
    }

    pub fn is_launched(&self) -> bool {
        self.launched
    }

    /// Tears the enclave down; further gate calls fail with `NotLaunched`.
    pub fn destroy(&mut self) {
        self.launched = false;
    }

    /// Reserves trusted memory. Allocation past the EPC limit succeeds but
    /// counts one paging event per 4 KiB page of excess.
    pub fn arena_alloc(&mut self, bytes: u64) -> ArenaAlloc {
        assert!(bytes > 0, "zero-byte arena allocation");
        let offset = self.arena.used;
        let before_excess = offset.saturating_sub(self.arena.limit);
        self.arena.used += bytes;
        let after_excess = self.arena.used.saturating_sub(self.arena.limit);
        let pages = after_excess.div_ceil(PAGE_SIZE) - before_excess.div_ceil(PAGE_SIZE);
        if pages > 0 {
            self.stats.paging_events.fetch_add(pages, Ordering::Relaxed);
        }
        ArenaAlloc { offset, len: bytes }
    }

    /// Cipher state for the traffic keys; lives inside the trusted logic that
    /// requested it and is accounted against the arena.
    pub fn security_association(&mut self) -> SecurityAssociation {
        self.arena_alloc(std::mem::size_of::<SecurityAssociation>() as u64);
        SecurityAssociation::new(&self.keys)
    }

    fn transition(&self) {
        if !self.latency.is_zero() {
            let until = Instant::now() + self.latency;
            while Instant::now() < until {
                std::hint::spin_loop();
            }
        }
    }

    /// Generic OCALL: leaves the enclave, runs `relay` on the untrusted side
    /// and returns. `copy_out`/`copy_in` are the byte counts of the buffers
    /// marshalled across; they are only charged in trusted-copy mode.
    pub fn ocall<R>(
        &self,
        copy_out: u64,
        copy_in: u64,
        relay: impl FnOnce() -> R,
    ) -> Result<R, TeeError> {
        if !self.launched {
            return Err(TeeError::NotLaunched(self.id));
        }
        self.stats.ocalls.fetch_add(1, Ordering::Relaxed);
        if self.buffer_mode == BufferMode::TrustedCopy {
            self.stats.bytes_copied_out.fetch_add(copy_out, Ordering::Relaxed);
            self.stats.bytes_copied_in.fetch_add(copy_in, Ordering::Relaxed);
        }
        self.transition();
        let r = relay();
        self.transition();
        Ok(r)
    }

    /// OCALL that hands a key buffer to an untrusted lookup and brings the
    /// result buffer back.
    ///
    /// In trusted-copy mode the keys are copied from the trusted buffer into
    /// a freshly allocated untrusted one, range-checked, and the results are
    /// copied back. In untrusted mode the enclave already wrote its keys into
    /// untrusted memory and reads the results in place.
    pub fn ocall_lookup<K: Copy + Default, R: Copy + Default>(
        &self,
        bufs: &mut LookupBuffers<K, R>,
        lookup: impl FnOnce(&[K], &mut [R]),
    ) -> Result<(), TeeError> {
        let n = bufs.len;
        let key_bytes = (n * std::mem::size_of::<K>()) as u64;
        let result_bytes = (n * std::mem::size_of::<R>()) as u64;
        match self.buffer_mode {
            BufferMode::TrustedCopy => {
                let trusted_keys = &bufs.trusted_keys[..n];
                let trusted_results = &mut bufs.trusted_results[..n];
                self.ocall(key_bytes, result_bytes, || {
                    // Marshalling allocates on the untrusted side per call.
                    let outside_keys: Vec<K> = trusted_keys.to_vec();
                    let mut outside_results = vec![R::default(); n];
                    assert_eq!(outside_keys.len(), n, "key buffer outside bounds");
                    lookup(&outside_keys, &mut outside_results);
                    assert_eq!(outside_results.len(), n, "result buffer outside bounds");
                    trusted_results.copy_from_slice(&outside_results);
                })
            }
            BufferMode::Untrusted => {
                let keys = &bufs.untrusted_keys[..n];
                let results = &mut bufs.untrusted_results[..n];
                self.ocall(key_bytes, result_bytes, || lookup(keys, results))
            }
        }
    }

    /// Attestation report over this enclave's measurement and `nonce`.
    pub fn report(&self, nonce: [u8; 16]) -> AttestationReport {
        let mac = cmac(&self.provisioning, &[&self.measurement.0, &nonce]);
        AttestationReport {
            enclave_measurement: self.measurement,
            nonce,
            mac,
        }
    }

    /// Recomputes the report MAC under this platform's provisioning key.
    pub fn verify_report(&self, report: &AttestationReport) -> bool {
        let expect = cmac(
            &self.provisioning,
            &[&report.enclave_measurement.0, &report.nonce],
        );
        crate::util::ct_eq(&expect, &report.mac)
    }

    fn channel_key(&self, a: &AttestationReport, b: &AttestationReport) -> Key128 {
        Key128::new(cmac(
            &self.provisioning,
            &[
                &a.enclave_measurement.0,
                &b.enclave_measurement.0,
                &a.nonce,
                &b.nonce,
            ],
        ))
    }

    /// Test hook: pretend the enclave binary differs from what its peers
    /// expect by flipping one measurement bit.
    pub fn corrupt_measurement(&mut self, bit: usize) {
        self.measurement.0[(bit / 8) % 32] ^= 1 << (bit % 8);
    }
}

/// Key/result buffers for [`Enclave::ocall_lookup`]. Which pair is used
/// depends on the enclave's buffer mode; [`LookupBuffers::keys_mut`] and
/// [`LookupBuffers::results`] pick the right one.
#[derive(Debug, Clone)]
pub struct LookupBuffers<K, R> {
    mode: BufferMode,
    len: usize,
    trusted_keys: Vec<K>,
    trusted_results: Vec<R>,
    untrusted_keys: Vec<K>,
    untrusted_results: Vec<R>,
}

impl<K: Copy + Default, R: Copy + Default> LookupBuffers<K, R> {
    pub fn new(mode: BufferMode, capacity: usize) -> Self {
        LookupBuffers {
            mode,
            len: 0,
            trusted_keys: vec![K::default(); capacity],
            trusted_results: vec![R::default(); capacity],
            untrusted_keys: vec![K::default(); capacity],
            untrusted_results: vec![R::default(); capacity],
        }
    }

    /// Trusted-side footprint for arena accounting.
    pub fn trusted_bytes(&self) -> u64 {
        match self.mode {
            BufferMode::TrustedCopy => {
                (self.trusted_keys.len() * (std::mem::size_of::<K>() + std::mem::size_of::<R>()))
                    as u64
            }
            BufferMode::Untrusted => 0,
        }
    }

    /// Prepares `n` key slots and returns them for filling.
    pub fn keys_mut(&mut self, n: usize) -> &mut [K] {
        if n > self.trusted_keys.len() {
            self.trusted_keys.resize(n, K::default());
            self.trusted_results.resize(n, R::default());
            self.untrusted_keys.resize(n, K::default());
            self.untrusted_results.resize(n, R::default());
        }
        self.len = n;
        match self.mode {
            BufferMode::TrustedCopy => &mut self.trusted_keys[..n],
            BufferMode::Untrusted => &mut self.untrusted_keys[..n],
        }
    }

    pub fn results(&self) -> &[R] {
        match self.mode {
            BufferMode::TrustedCopy => &self.trusted_results[..self.len],
            BufferMode::Untrusted => &self.untrusted_results[..self.len],
        }
    }

    /// Runs the lookup with no boundary at all (vanilla mode).
    pub fn direct(&mut self, lookup: impl FnOnce(&[K], &mut [R])) {
        let n = self.len;
        match self.mode {
            BufferMode::TrustedCopy => lookup(&self.trusted_keys[..n], &mut self.trusted_results[..n]),
            BufferMode::Untrusted => {
                lookup(&self.untrusted_keys[..n], &mut self.untrusted_results[..n])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttestationReport {
    pub enclave_measurement: Measurement,
    pub nonce: [u8; 16],
    pub mac: [u8; 16],
}

/// Mutual local attestation of two enclaves on the same platform.
///
/// Each side produces a report over a fresh nonce; each verifies the other's
/// MAC and that the peer's measurement is the one it expects. Both then
/// derive `CMAC(provisioning, m_a | m_b | n_a | n_b)`.
pub fn local_attest(
    a: &Enclave,
    b: &Enclave,
    expected_a: &Measurement,
    expected_b: &Measurement,
    rng: &mut impl RngCore,
) -> Result<Key128, TeeError> {
    local_attest_with(a, b, expected_a, expected_b, rng, |_| {})
}

/// [`local_attest`] with a hook that may alter reports in flight.
pub fn local_attest_with(
    a: &Enclave,
    b: &Enclave,
    expected_a: &Measurement,
    expected_b: &Measurement,
    rng: &mut impl RngCore,
    mut in_flight: impl FnMut(&mut AttestationReport),
) -> Result<Key128, TeeError> {
    for e in [a, b] {
        if !e.launched {
            return Err(TeeError::NotLaunched(e.id));
        }
    }
    let mut nonce_a = [0u8; 16];
    let mut nonce_b = [0u8; 16];
    rng.fill_bytes(&mut nonce_a);
    rng.fill_bytes(&mut nonce_b);
    let mut report_a = a.report(nonce_a);
    let mut report_b = b.report(nonce_b);
    in_flight(&mut report_a);
    in_flight(&mut report_b);

    if !b.verify_report(&report_a) {
        return Err(TeeError::AttestationFailed(format!(
            "enclave {:?} rejected report MAC of {:?}",
            b.id, a.id
        )));
    }
    if report_a.enclave_measurement != *expected_a {
        return Err(TeeError::AttestationFailed(format!(
            "enclave {:?} has measurement {}, peer expected {}",
            a.id, report_a.enclave_measurement, expected_a
        )));
    }
    if !a.verify_report(&report_b) {
        return Err(TeeError::AttestationFailed(format!(
            "enclave {:?} rejected report MAC of {:?}",
            a.id, b.id
        )));
    }
    if report_b.enclave_measurement != *expected_b {
        return Err(TeeError::AttestationFailed(format!(
            "enclave {:?} has measurement {}, peer expected {}",
            b.id, report_b.enclave_measurement, expected_b
        )));
    }
    let key_a = a.channel_key(&report_a, &report_b);
    let key_b = b.channel_key(&report_a, &report_b);
    debug_assert_eq!(key_a, key_b);
    Ok(key_a)
}

/// Derivation used by [`local_attest`], exposed for nonce-sensitivity checks.
pub fn derive_channel_key(
    enclave: &Enclave,
    measurement_a: &Measurement,
    measurement_b: &Measurement,
    nonce_a: &[u8; 16],
    nonce_b: &[u8; 16],
) -> Key128 {
    Key128::new(cmac(
        &enclave.provisioning,
        &[&measurement_a.0, &measurement_b.0, nonce_a, nonce_b],
    ))
}
