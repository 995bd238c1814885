//! Frame buffers, Ethernet/IPv4 headers and the sanity checks applied
//! before any lookup.
//!
//! All multi-byte fields are big-endian on the wire.

pub mod secure;

use std::fmt;

use thiserror::Error;

pub const ETH_HDR_LEN: usize = 14;
pub const IPV4_HDR_LEN: usize = 20;
pub const MIN_FRAME_LEN: usize = 64;
pub const MAX_FRAME_LEN: usize = 1518;
/// Room for a maximum frame plus secure-format overhead.
pub const BUF_CAPACITY: usize = 2048;

pub const ETHERTYPE_IPV4: u16 = 0x0800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum PktError {
    #[error("buffer too short: need {need} bytes, have {have}")]
    TooShort { need: usize, have: usize },
    #[error("length {0} exceeds buffer capacity")]
    TooLong(usize),
    #[error("unsupported IPv4 header (version {version}, ihl {ihl})")]
    UnsupportedIpv4 { version: u8, ihl: u8 },
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct MacAddr(pub [u8; 6]);

impl MacAddr {
    pub const BROADCAST: MacAddr = MacAddr([0xff; 6]);

    pub fn from_u64(v: u64) -> Self {
        let b = v.to_be_bytes();
        MacAddr([b[2], b[3], b[4], b[5], b[6], b[7]])
    }

    pub fn to_u64(self) -> u64 {
        let m = self.0;
        u64::from_be_bytes([0, 0, m[0], m[1], m[2], m[3], m[4], m[5]])
    }
}

impl fmt::Debug for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for MacAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let m = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            m[0], m[1], m[2], m[3], m[4], m[5]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EnclaveId(pub u32);

/// Which side of the trust boundary currently owns a buffer's contents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrustTag {
    #[default]
    Untrusted,
    Trusted(EnclaveId),
}

/// Per-frame scratch set by processing stages and read by later ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FrameMeta {
    /// Output port (L2/L3) or backend index (load balancer).
    pub egress: u16,
    /// Index into the router's next-hop table.
    pub next_hop: u32,
    /// Number of backend servers the frame passed through.
    pub backend_hops: u8,
    pub last_backend: u16,
}

/// Fixed-capacity packet buffer. Buffers are boxed and their ownership moves
/// through rings; `handle` identifies the buffer for its whole lifetime.
#[derive(Clone)]
pub struct FrameBuffer {
    handle: u32,
    data: [u8; BUF_CAPACITY],
    len: usize,
    pub rx_port: u16,
    pub trust_tag: TrustTag,
    pub meta: FrameMeta,
}

impl fmt::Debug for FrameBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FrameBuffer")
            .field("handle", &self.handle)
            .field("len", &self.len)
            .field("rx_port", &self.rx_port)
            .field("trust_tag", &self.trust_tag)
            .finish()
    }
}

/// Owned buffer handle as it circulates through rings.
pub type Mbuf = Box<FrameBuffer>;

impl FrameBuffer {
    pub fn new(handle: u32) -> Mbuf {
        Box::new(FrameBuffer {
            handle,
            data: [0; BUF_CAPACITY],
            len: 0,
            rx_port: 0,
            trust_tag: TrustTag::Untrusted,
            meta: FrameMeta::default(),
        })
    }

    pub fn from_bytes(handle: u32, bytes: &[u8]) -> Result<Mbuf, PktError> {
        let mut buf = Self::new(handle);
        buf.fill(bytes)?;
        Ok(buf)
    }

    pub fn handle(&self) -> u32 {
        self.handle
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub const fn capacity(&self) -> usize {
        BUF_CAPACITY
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data[..self.len]
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.data[..self.len]
    }

    /// The whole backing store, including bytes past `len`.
    pub fn raw_mut(&mut self) -> &mut [u8; BUF_CAPACITY] {
        &mut self.data
    }

    pub fn set_len(&mut self, len: usize) -> Result<(), PktError> {
        if len > BUF_CAPACITY {
            return Err(PktError::TooLong(len));
        }
        self.len = len;
        Ok(())
    }

    pub fn fill(&mut self, bytes: &[u8]) -> Result<(), PktError> {
        if bytes.len() > BUF_CAPACITY {
            return Err(PktError::TooLong(bytes.len()));
        }
        self.data[..bytes.len()].copy_from_slice(bytes);
        self.len = bytes.len();
        Ok(())
    }

    /// Clears per-run metadata before the buffer is reused.
    pub fn reset(&mut self) {
        self.len = 0;
        self.rx_port = 0;
        self.trust_tag = TrustTag::Untrusted;
        self.meta = FrameMeta::default();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EthernetHeader {
    pub dst: MacAddr,
    pub src: MacAddr,
    pub ethertype: u16,
}

impl EthernetHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self, PktError> {
        if bytes.len() < ETH_HDR_LEN {
            return Err(PktError::TooShort {
                need: ETH_HDR_LEN,
                have: bytes.len(),
            });
        }
        let mut dst = [0u8; 6];
        let mut src = [0u8; 6];
        dst.copy_from_slice(&bytes[0..6]);
        src.copy_from_slice(&bytes[6..12]);
        Ok(EthernetHeader {
            dst: MacAddr(dst),
            src: MacAddr(src),
            ethertype: u16::from_be_bytes([bytes[12], bytes[13]]),
        })
    }

    pub fn write(&self, out: &mut [u8]) {
        out[0..6].copy_from_slice(&self.dst.0);
        out[6..12].copy_from_slice(&self.src.0);
        out[12..14].copy_from_slice(&self.ethertype.to_be_bytes());
    }

    pub fn to_bytes(&self) -> [u8; ETH_HDR_LEN] {
        let mut out = [0u8; ETH_HDR_LEN];
        self.write(&mut out);
        out
    }
}

pub fn parse_ethernet(buf: &FrameBuffer) -> Result<EthernetHeader, PktError> {
    EthernetHeader::parse(buf.as_slice())
}

/// Option-less IPv4 header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ipv4Header {
    pub tos: u8,
    pub total_length: u16,
    pub identification: u16,
    pub flags_fragment: u16,
    pub ttl: u8,
    pub protocol: u8,
    pub checksum: u16,
    pub src: [u8; 4],
    pub dst: [u8; 4],
}

impl Ipv4Header {
    pub const VERSION: u8 = 4;
    pub const IHL: u8 = 5;

    pub fn parse(bytes: &[u8]) -> Result<Self, PktError> {
        if bytes.len() < IPV4_HDR_LEN {
            return Err(PktError::TooShort {
                need: IPV4_HDR_LEN,
                have: bytes.len(),
            });
        }
        let version = bytes[0] >> 4;
        let ihl = bytes[0] & 0x0f;
        if version != Self::VERSION || ihl != Self::IHL {
            return Err(PktError::UnsupportedIpv4 { version, ihl });
        }
        let be16 = |i: usize| u16::from_be_bytes([bytes[i], bytes[i + 1]]);
        Ok(Ipv4Header {
            tos: bytes[1],
            total_length: be16(2),
            identification: be16(4),
            flags_fragment: be16(6),
            ttl: bytes[8],
            protocol: bytes[9],
            checksum: be16(10),
            src: [bytes[12], bytes[13], bytes[14], bytes[15]],
            dst: [bytes[16], bytes[17], bytes[18], bytes[19]],
        })
    }

    pub fn write(&self, out: &mut [u8]) {
        out[0] = (Self::VERSION << 4) | Self::IHL;
        out[1] = self.tos;
        out[2..4].copy_from_slice(&self.total_length.to_be_bytes());
        out[4..6].copy_from_slice(&self.identification.to_be_bytes());
        out[6..8].copy_from_slice(&self.flags_fragment.to_be_bytes());
        out[8] = self.ttl;
        out[9] = self.protocol;
        out[10..12].copy_from_slice(&self.checksum.to_be_bytes());
        out[12..16].copy_from_slice(&self.src);
        out[16..20].copy_from_slice(&self.dst);
    }

    pub fn to_bytes(&self) -> [u8; IPV4_HDR_LEN] {
        let mut out = [0u8; IPV4_HDR_LEN];
        self.write(&mut out);
        out
    }

    /// Writes the header with a freshly computed checksum.
    pub fn write_with_checksum(&mut self, out: &mut [u8]) {
        self.checksum = 0;
        self.write(out);
        self.checksum = ipv4_checksum(&out[..IPV4_HDR_LEN]);
        out[10..12].copy_from_slice(&self.checksum.to_be_bytes());
    }

    pub fn dst_u32(&self) -> u32 {
        u32::from_be_bytes(self.dst)
    }
}

fn ones_complement_sum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for pair in bytes.chunks(2) {
        let word = if pair.len() == 2 {
            u16::from_be_bytes([pair[0], pair[1]])
        } else {
            u16::from_be_bytes([pair[0], 0])
        };
        sum += u32::from(word);
    }
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    sum as u16
}

/// Internet checksum of a header whose checksum field is zero.
pub fn ipv4_checksum(header: &[u8]) -> u16 {
    !ones_complement_sum(header)
}

/// True when the folded sum over the header (checksum included) is 0xFFFF.
pub fn ipv4_checksum_valid(header: &[u8]) -> bool {
    ones_complement_sum(header) == 0xffff
}

/// Incremental checksum update after one 16-bit header word changes
/// (`HC' = ~(~HC + ~m + m')`).
pub fn checksum_update(checksum: u16, old_word: u16, new_word: u16) -> u16 {
    let mut sum = u32::from(!checksum) + u32::from(!old_word) + u32::from(new_word);
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SanityReject {
    Runt,
    Oversize,
    Truncated,
    NotIpv4,
    BadVersion,
    BadIhl,
    BadChecksum,
    TtlExpired,
    BadTotalLength,
}

pub fn sanity_check_l2(frame: &[u8]) -> Result<(), SanityReject> {
    if frame.len() < ETH_HDR_LEN {
        return Err(SanityReject::Truncated);
    }
    if frame.len() < MIN_FRAME_LEN {
        return Err(SanityReject::Runt);
    }
    if frame.len() > MAX_FRAME_LEN {
        return Err(SanityReject::Oversize);
    }
    Ok(())
}

pub fn sanity_check_l3(frame: &[u8]) -> Result<(), SanityReject> {
    sanity_check_l2(frame)?;
    if u16::from_be_bytes([frame[12], frame[13]]) != ETHERTYPE_IPV4 {
        return Err(SanityReject::NotIpv4);
    }
    let ip = &frame[ETH_HDR_LEN..];
    if ip.len() < IPV4_HDR_LEN {
        return Err(SanityReject::Truncated);
    }
    if ip[0] >> 4 != 4 {
        return Err(SanityReject::BadVersion);
    }
    if ip[0] & 0x0f != 5 {
        return Err(SanityReject::BadIhl);
    }
    if !ipv4_checksum_valid(&ip[..IPV4_HDR_LEN]) {
        return Err(SanityReject::BadChecksum);
    }
    if ip[8] == 0 {
        return Err(SanityReject::TtlExpired);
    }
    let total = usize::from(u16::from_be_bytes([ip[2], ip[3]]));
    // Trailing Ethernet padding is allowed; a packet longer than its frame is not.
    if total < IPV4_HDR_LEN || total > ip.len() {
        return Err(SanityReject::BadTotalLength);
    }
    Ok(())
}
