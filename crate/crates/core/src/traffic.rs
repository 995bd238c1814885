//! Deterministic synthetic workload, the sink that counts what comes out of
//! a dataplane, and a small capture format for replaying frame streams.
//!
//! Frame `k` of a stream depends only on the spec and `k`. Addresses are
//! enumerated, not sampled: destination `i` is `10.0.0.0 + i` and
//! `02:00:00:00:00:00 + i`, sources use `172.16.0.0 + i` and
//! `06:00:00:00:00:00 + i`. A seeded affine permutation decides the order in
//! which the address set is visited, so the first `cardinality` frames of a
//! stream touch every address exactly once.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{KeyPair, SecurityAssociation};
use crate::nf::{FlowTable, LpmTable, MacTable, NextHop, PortMacs, Scenario};
use crate::pkt::secure::{seal_l2, seal_l3};
use crate::pkt::{
    EthernetHeader, FrameBuffer, Ipv4Header, MacAddr, BUF_CAPACITY, ETHERTYPE_IPV4, ETH_HDR_LEN,
    IPV4_HDR_LEN, MIN_FRAME_LEN,
};

pub const DEFAULT_CARDINALITY: u32 = 1_000_000;
pub const MIN_SIZE: usize = MIN_FRAME_LEN;
pub const MAX_SIZE: usize = 1500;

pub const DST_IP_BASE: u32 = 0x0a00_0000;
pub const SRC_IP_BASE: u32 = 0xac10_0000;
pub const DST_MAC_BASE: u64 = 0x0200_0000_0000;
pub const SRC_MAC_BASE: u64 = 0x0600_0000_0000;

/// Generator port 0 and the application's ports 0 (in) and 1 (out).
pub const GEN_PORT0_MAC: MacAddr = MacAddr([0x0c, 0, 0, 0, 0, 0]);
pub const APP_PORT0_MAC: MacAddr = MacAddr([0x0a, 0, 0, 0, 0, 0]);
pub const APP_PORT1_MAC: MacAddr = MacAddr([0x0a, 0, 0, 0, 0, 1]);
pub const EGRESS_PORT: u16 = 1;

/// Sender id / SPI of generated secure frames.
pub const GENERATOR_SENDER: u16 = 1;

/// Secure streams replay a pool of pre-sealed frames of at most this many
/// frames or bytes.
pub const SECURE_POOL_FRAMES: usize = 65_536;
pub const SECURE_POOL_BYTES: usize = 32 << 20;

/// Bytes at the start of the IPv4 payload holding the frame's sequence number.
const MARKER_LEN: usize = 8;
const PAYLOAD_AT: usize = ETH_HDR_LEN + IPV4_HDR_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layer {
    L2,
    L3,
    SecureL2,
    SecureL3,
}

impl Layer {
    pub fn for_scenario(s: Scenario) -> Layer {
        match s {
            Scenario::L2Fwd => Layer::L2,
            Scenario::L3Fwd | Scenario::LbServer => Layer::L3,
            Scenario::L2FwdEnc => Layer::SecureL2,
            Scenario::L3FwdEnc => Layer::SecureL3,
        }
    }

    pub fn is_secure(self) -> bool {
        matches!(self, Layer::SecureL2 | Layer::SecureL3)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrafficError {
    #[error("frame size {0} outside {MIN_SIZE}..={MAX_SIZE}")]
    FrameSize(usize),
    #[error("address cardinality must be in 1..=2^24, got {0}")]
    Cardinality(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficSpec {
    pub layer: Layer,
    pub frame_size: usize,
    pub cardinality: u32,
    pub seed: u64,
    /// Whether secure frames carry an ICV.
    pub icv: bool,
}

impl TrafficSpec {
    pub fn new(layer: Layer, frame_size: usize, seed: u64) -> Self {
        TrafficSpec {
            layer,
            frame_size,
            cardinality: DEFAULT_CARDINALITY,
            seed,
            icv: true,
        }
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(MIN_SIZE..=MAX_SIZE).contains(&self.frame_size) {
            return Err(TrafficError::FrameSize(self.frame_size));
        }
        if self.cardinality == 0 || self.cardinality > 1 << 24 {
            return Err(TrafficError::Cardinality(self.cardinality));
        }
        Ok(())
    }

    /// Number of distinct frames before a secure stream starts replaying.
    pub fn secure_pool_len(&self) -> usize {
        SECURE_POOL_FRAMES.min(SECURE_POOL_BYTES / (self.frame_size + 64))
    }
}

/// Visit order over `0..n`: `i -> (a*i + b) mod n` with `gcd(a, n) == 1`.
#[derive(Debug, Clone, Copy)]
struct Permutation {
    n: u64,
    a: u64,
    b: u64,
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Permutation {
    fn new(n: u32, seed: u64) -> Self {
        let n = u64::from(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut a, b) = (rng.gen_range(1..=n.max(1)), rng.gen_range(0..n.max(1)));
        while gcd(a, n) != 1 {
            a = a % n + 1;
        }
        Permutation { n, a, b }
    }

    #[inline]
    fn apply(&self, i: u64) -> u32 {
        ((self.a * (i % self.n) + self.b) % self.n) as u32
    }
}

/// Produces the frames of one [`TrafficSpec`].
pub struct FrameSource {
    spec: TrafficSpec,
    perm: Permutation,
    template: Vec<u8>,
    pool: Option<Arc<Vec<Vec<u8>>>>,
    next: u64,
}

impl std::fmt::Debug for FrameSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameSource")
            .field("spec", &self.spec)
            .field("next", &self.next)
            .finish()
    }
}

impl FrameSource {
    /// Secure layers need the run's traffic keys to pre-seal their pool.
    pub fn new(spec: TrafficSpec, keys: Option<&KeyPair>) -> Result<Self, TrafficError> {
        spec.validate()?;
        let perm = Permutation::new(spec.cardinality, spec.seed);
        let mut src = FrameSource {
            template: template(spec.frame_size),
            perm,
            pool: None,
            next: 0,
            spec,
        };
        if src.spec.layer.is_secure() {
            let keys = keys.expect("secure traffic needs keys");
            let sa = SecurityAssociation::new(keys);
            let n = src.spec.secure_pool_len();
            let mut buf = FrameBuffer::new(0);
            let pool = (0..n as u64)
                .map(|k| {
                    src.write_plain(k, &mut buf);
                    let pn = (k + 1) as u32;
                    match src.spec.layer {
                        Layer::SecureL2 => seal_l2(&mut buf, &sa, GENERATOR_SENDER, pn, src.spec.icv),
                        _ => seal_l3(&mut buf, &sa, u32::from(GENERATOR_SENDER), pn, src.spec.icv),
                    }
                    .expect("generated frame fits");
                    buf.as_slice().to_vec()
                })
                .collect();
            src.pool = Some(Arc::new(pool));
        }
        Ok(src)
    }

    /// Same stream, sharing an already sealed pool.
    pub fn fork(&self) -> Self {
        FrameSource {
            spec: self.spec.clone(),
            perm: self.perm,
            template: self.template.clone(),
            pool: self.pool.clone(),
            next: 0,
        }
    }

    pub fn spec(&self) -> &TrafficSpec {
        &self.spec
    }

    pub fn generated(&self) -> u64 {
        self.next
    }

    /// Address index used by frame `k`.
    pub fn address_index(&self, k: u64) -> u32 {
        self.perm.apply(k)
    }

    /// Writes frame `k` of the stream into `buf`.
    pub fn write_frame(&self, k: u64, buf: &mut FrameBuffer) {
        match &self.pool {
            Some(pool) => {
                let f = &pool[(k % pool.len() as u64) as usize];
                buf.fill(f).expect("pool frame fits");
            }
            None => self.write_plain(k, buf),
        }
    }

    /// Writes the next frame and advances.
    pub fn next_into(&mut self, buf: &mut FrameBuffer) {
        self.write_frame(self.next, buf);
        self.next += 1;
    }

    pub fn frame(&self, k: u64) -> Vec<u8> {
        let mut b = FrameBuffer::new(0);
        self.write_frame(k, &mut b);
        b.as_slice().to_vec()
    }

    fn write_plain(&self, k: u64, buf: &mut FrameBuffer) {
        let i = self.perm.apply(k);
        buf.fill(&self.template).expect("template fits");
        let b = buf.as_mut_slice();
        let (dst_mac, src_mac) = match self.spec.layer {
            Layer::L2 | Layer::SecureL2 => (
                MacAddr::from_u64(DST_MAC_BASE + u64::from(i)),
                MacAddr::from_u64(SRC_MAC_BASE + u64::from(i)),
            ),
            Layer::L3 | Layer::SecureL3 => (APP_PORT0_MAC, GEN_PORT0_MAC),
        };
        b[0..6].copy_from_slice(&dst_mac.0);
        b[6..12].copy_from_slice(&src_mac.0);
        let mut ip = Ipv4Header::parse(&b[ETH_HDR_LEN..]).expect("template header");
        ip.identification = k as u16;
        ip.src = (SRC_IP_BASE + i).to_be_bytes();
        ip.dst = (DST_IP_BASE + i).to_be_bytes();
        ip.write_with_checksum(&mut b[ETH_HDR_LEN..]);
        write_payload(&mut b[PAYLOAD_AT..], k);
    }
}

fn template(size: usize) -> Vec<u8> {
    let mut f = vec![0u8; size];
    EthernetHeader {
        dst: APP_PORT0_MAC,
        src: GEN_PORT0_MAC,
        ethertype: ETHERTYPE_IPV4,
    }
    .write(&mut f);
    Ipv4Header {
        tos: 0,
        total_length: (size - ETH_HDR_LEN) as u16,
        identification: 0,
        flags_fragment: 0x4000,
        ttl: 64,
        protocol: 17,
        checksum: 0,
        src: [0; 4],
        dst: [0; 4],
    }
    .write_with_checksum(&mut f[ETH_HDR_LEN..]);
    f
}

fn write_payload(p: &mut [u8], k: u64) {
    p[..MARKER_LEN].copy_from_slice(&k.to_be_bytes());
    let seed = k as u8;
    for (j, b) in p[MARKER_LEN..].iter_mut().enumerate() {
        *b = seed.wrapping_add(j as u8);
    }
}

/// Sequence number of a plain generated frame, if its payload is intact.
pub fn payload_marker(frame: &[u8]) -> Option<u64> {
    let p = frame.get(PAYLOAD_AT..)?;
    if p.len() < MARKER_LEN {
        return None;
    }
    let k = u64::from_be_bytes(p[..MARKER_LEN].try_into().ok()?);
    let seed = k as u8;
    p[MARKER_LEN..]
        .iter()
        .enumerate()
        .all(|(j, &b)| b == seed.wrapping_add(j as u8))
        .then_some(k)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SinkCounters {
    pub frames: u64,
    pub bytes: u64,
    pub size_histogram: BTreeMap<usize, u64>,
    /// Frames whose payload marker failed validation (when enabled).
    pub bad_markers: u64,
}

/// Counts frames leaving the dataplane, optionally keeping copies.
#[derive(Debug)]
pub struct Sink {
    frames: u64,
    bytes: u64,
    histogram: Vec<u64>,
    bad_markers: u64,
    validate: bool,
    capture: Option<Vec<Vec<u8>>>,
}

impl Default for Sink {
    fn default() -> Self {
        Sink::new(false, false)
    }
}

impl Sink {
    pub fn new(validate: bool, capture: bool) -> Self {
        Sink {
            frames: 0,
            bytes: 0,
            histogram: vec![0; BUF_CAPACITY + 1],
            bad_markers: 0,
            validate,
            capture: capture.then(Vec::new),
        }
    }

    #[inline]
    pub fn absorb(&mut self, frame: &[u8]) {
        self.frames += 1;
        self.bytes += frame.len() as u64;
        self.histogram[frame.len().min(BUF_CAPACITY)] += 1;
        if self.validate && payload_marker(frame).is_none() {
            self.bad_markers += 1;
        }
        if let Some(cap) = &mut self.capture {
            cap.push(frame.to_vec());
        }
    }

    pub fn frames(&self) -> u64 {
        self.frames
    }

    pub fn counters(&self) -> SinkCounters {
        SinkCounters {
            frames: self.frames,
            bytes: self.bytes,
            size_histogram: self
                .histogram
                .iter()
                .enumerate()
                .filter(|(_, &n)| n > 0)
                .map(|(len, &n)| (len, n))
                .collect(),
            bad_markers: self.bad_markers,
        }
    }

    pub fn take_capture(&mut self) -> Option<Vec<Vec<u8>>> {
        self.capture.take()
    }
}

/// MAC table mapping every generated destination MAC to the egress port.
pub fn mac_table_for(spec: &TrafficSpec) -> MacTable {
    let mut t = MacTable::with_capacity(spec.cardinality as usize);
    for i in 0..u64::from(spec.cardinality) {
        t.insert(MacAddr::from_u64(DST_MAC_BASE + i), EGRESS_PORT)
            .expect("cardinality within table capacity");
    }
    t
}

/// Routes covering the generated destinations: 10/8 plus a /16 for every
/// 2^16 block in use and a /24 for every 16th /24 in use, each with its own
/// next-hop MAC so longer prefixes are visible in the output.
pub fn lpm_for(spec: &TrafficSpec) -> LpmTable {
    let mut t = LpmTable::new();
    let hop = |n: u64| NextHop {
        port: EGRESS_PORT,
        mac: MacAddr::from_u64(0x0e00_0000_0000 + n),
    };
    t.insert(DST_IP_BASE, 8, hop(0)).expect("valid prefix");
    let last = DST_IP_BASE + spec.cardinality - 1;
    for block in (DST_IP_BASE >> 16)..=(last >> 16) {
        t.insert(block << 16, 16, hop(u64::from(block & 0xff) + 1)).expect("valid prefix");
    }
    for net in ((DST_IP_BASE >> 8)..=(last >> 8)).step_by(16) {
        t.insert(net << 8, 24, hop(0x1_0000 + u64::from(net & 0xffff))).expect("valid prefix");
    }
    t
}

/// Flow table assigning destination `i` to backend `i mod n`.
pub fn flow_table_for(spec: &TrafficSpec, backends: usize) -> FlowTable {
    let n = backends.max(1);
    let mut t = FlowTable::new(n, spec.cardinality as usize);
    for i in 0..spec.cardinality {
        t.insert(DST_IP_BASE + i, (i as usize % n) as u8).expect("backend in range");
    }
    t
}

pub fn port_macs() -> PortMacs {
    PortMacs::new(vec![APP_PORT0_MAC, APP_PORT1_MAC])
}

pub const CAPTURE_MAGIC: &[u8; 4] = b"TDPC";
pub const CAPTURE_VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a capture file (bad magic)")]
    BadMagic,
    #[error("unsupported capture version {0}")]
    BadVersion(u16),
    #[error("frame of {0} bytes does not fit a u16 length")]
    FrameTooLong(usize),
    #[error("capture truncated inside a frame")]
    Truncated,
}

/// Writes `frames` as: magic, version (u16), then u16 length + bytes per
/// frame, all big-endian.
pub fn write_capture<'a>(
    mut w: impl Write,
    frames: impl IntoIterator<Item = &'a [u8]>,
) -> Result<u64, CaptureError> {
    w.write_all(CAPTURE_MAGIC)?;
    w.write_all(&CAPTURE_VERSION.to_be_bytes())?;
    let mut n = 0;
    for f in frames {
        let len = u16::try_from(f.len()).map_err(|_| CaptureError::FrameTooLong(f.len()))?;
        w.write_all(&len.to_be_bytes())?;
        w.write_all(f)?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn read_capture(mut r: impl Read) -> Result<Vec<Vec<u8>>, CaptureError> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => CaptureError::BadMagic,
        _ => CaptureError::Io(e),
    })?;
    if &head[..4] != CAPTURE_MAGIC {
        return Err(CaptureError::BadMagic);
    }
    let version = u16::from_be_bytes([head[4], head[5]]);
    if version != CAPTURE_VERSION {
        return Err(CaptureError::BadVersion(version));
    }
    let mut frames = Vec::new();
    loop {
        let mut len = [0u8; 2];
        match r.read(&mut len[..1])? {
            0 => return Ok(frames),
            _ => r.read_exact(&mut len[1..]).map_err(|_| CaptureError::Truncated)?,
        }
        let mut f = vec![0u8; usize::from(u16::from_be_bytes(len))];
        r.read_exact(&mut f).map_err(|_| CaptureError::Truncated)?;
        frames.push(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Key128;
    use crate::pkt::secure::{open_l2, open_l3};
    use crate::pkt::{ipv4_checksum_valid, sanity_check_l3};
    use proptest::prelude::*;

    fn keys() -> KeyPair {
        KeyPair {
            encryption: Key128::new([1; 16]),
            integrity: Key128::new([2; 16]),
        }
    }

    #[test]
    fn first_cardinality_frames_cover_every_destination() {
        let src = FrameSource::new(TrafficSpec::new(Layer::L3, 64, 1), None).unwrap();
        let mut seen = vec![false; DEFAULT_CARDINALITY as usize];
        let mut buf = FrameBuffer::new(0);
        for k in 0..u64::from(DEFAULT_CARDINALITY) {
            src.write_frame(k, &mut buf);
            let b = buf.as_slice();
            let dst = u32::from_be_bytes([b[30], b[31], b[32], b[33]]);
            let i = (dst - DST_IP_BASE) as usize;
            assert!(!seen[i], "destination {i} repeated");
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn same_seed_same_stream_different_seed_different_order() {
        for layer in [Layer::L2, Layer::L3, Layer::SecureL2, Layer::SecureL3] {
            let mut spec = TrafficSpec::new(layer, 128, 7);
            spec.cardinality = 5000;
            let a = FrameSource::new(spec.clone(), Some(&keys())).unwrap();
            let b = FrameSource::new(spec.clone(), Some(&keys())).unwrap();
            for k in 0..3000 {
                assert_eq!(a.frame(k), b.frame(k));
            }
            spec.seed = 8;
            let c = FrameSource::new(spec, Some(&keys())).unwrap();
            assert!((0..100).any(|k| a.frame(k) != c.frame(k)));
        }
    }

    #[test]
    fn plain_frames_are_valid_and_marked() {
        for size in [64, 65, 512, 1500] {
            let mut spec = TrafficSpec::new(Layer::L3, size, 3);
            spec.cardinality = 1000;
            let src = FrameSource::new(spec, None).unwrap();
            for k in [0, 1, 999, 12345] {
                let f = src.frame(k);
                assert_eq!(f.len(), size);
                assert_eq!(sanity_check_l3(&f), Ok(()));
                assert!(ipv4_checksum_valid(&f[14..34]));
                assert_eq!(payload_marker(&f), Some(k));
                assert_eq!(&f[..6], &APP_PORT0_MAC.0);
                assert_eq!(&f[6..12], &GEN_PORT0_MAC.0);
            }
        }
    }

    #[test]
    fn secure_frames_open_under_run_keys() {
        let sa = SecurityAssociation::new(&keys());
        for layer in [Layer::SecureL2, Layer::SecureL3] {
            let mut spec = TrafficSpec::new(layer, 64, 1);
            spec.cardinality = 10_000;
            let src = FrameSource::new(spec, Some(&keys())).unwrap();
            let mut buf = FrameBuffer::new(0);
            for k in 0..2000 {
                src.write_frame(k, &mut buf);
                let r = match layer {
                    Layer::SecureL2 => open_l2(&mut buf, &sa, true).map_err(|e| e.to_string()),
                    _ => open_l3(&mut buf, &sa, true).map_err(|e| e.to_string()),
                };
                assert_eq!(r, Ok(()), "frame {k}");
                assert_eq!(buf.len(), 64);
                assert_eq!(payload_marker(buf.as_slice()), Some(k));
            }
        }
    }

    #[test]
    fn harness_tables_cover_all_addresses() {
        let mut spec = TrafficSpec::new(Layer::L3, 64, 1);
        spec.cardinality = 200_000;
        let lpm = lpm_for(&spec);
        let macs = mac_table_for(&spec);
        let flows = flow_table_for(&spec, 5);
        for i in 0..spec.cardinality {
            assert!(lpm.lookup(DST_IP_BASE + i).is_some());
            assert_eq!(macs.lookup(&MacAddr::from_u64(DST_MAC_BASE + u64::from(i))), Some(EGRESS_PORT));
            assert_eq!(flows.get(DST_IP_BASE + i), Some((i % 5) as u8));
        }
        assert_eq!(flows.len(), 200_000);
    }

    #[test]
    fn default_flow_table_has_a_million_entries_and_fills_every_backend() {
        let spec = TrafficSpec::new(Layer::L3, 64, 1);
        for n in [1usize, 5, 16] {
            let flows = flow_table_for(&spec, n);
            assert_eq!(flows.len(), 1_000_000);
            let mut per = vec![0u64; n];
            for (_, b) in flows.iter() {
                per[usize::from(b)] += 1;
            }
            assert!(per.iter().all(|&c| c > 0));
        }
    }

    #[test]
    fn sink_counts_frames_and_bytes() {
        let mut s = Sink::new(true, true);
        assert_eq!(s.counters().frames, 0);
        let mut spec = TrafficSpec::new(Layer::L2, 64, 1);
        spec.cardinality = 100;
        let src = FrameSource::new(spec, None).unwrap();
        let mut total = 0;
        for k in 0..100 {
            let f = src.frame(k);
            total += f.len() as u64;
            s.absorb(&f);
        }
        s.absorb(&[0u8; 70]);
        assert_eq!(s.counters().frames, 101);
        assert_eq!(s.counters().bytes, total + 70);
        assert_eq!(s.counters().bad_markers, 1);
        assert_eq!(s.counters().size_histogram[&64], 100);
        assert_eq!(s.take_capture().unwrap().len(), 101);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(TrafficSpec::new(Layer::L2, 63, 0).validate().is_err());
        assert!(TrafficSpec::new(Layer::L2, 1501, 0).validate().is_err());
        let mut s = TrafficSpec::new(Layer::L2, 64, 0);
        s.cardinality = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn capture_round_trip_and_errors() {
        let frames = vec![vec![1u8, 2, 3], vec![], vec![9u8; 1500]];
        let mut bytes = Vec::new();
        write_capture(&mut bytes, frames.iter().map(|f| f.as_slice())).unwrap();
        assert_eq!(&bytes[..6], b"TDPC\x00\x01");
        assert_eq!(&bytes[6..8], &[0, 3]);
        assert_eq!(read_capture(&bytes[..]).unwrap(), frames);
        assert!(matches!(read_capture(&b"XXXX\x00\x01"[..]), Err(CaptureError::BadMagic)));
        assert!(matches!(read_capture(&b"TDPC\x00\x02"[..]), Err(CaptureError::BadVersion(2))));
        assert!(matches!(read_capture(&bytes[..bytes.len() - 1]), Err(CaptureError::Truncated)));
    }

    proptest! {
        #[test]
        fn permutation_is_a_bijection(n in 1u32..5000, seed in any::<u64>()) {
            let p = Permutation::new(n, seed);
            let mut seen = vec![false; n as usize];
            for i in 0..u64::from(n) {
                let v = p.apply(i) as usize;
                prop_assert!(!seen[v]);
                seen[v] = true;
            }
        }
    }
}
