//! Secure L2 frame and secure L3 packet layouts.
//!
//! Secure L2 frame:
//!
//! ```text
//! | dst 6 | src 6 | 0x88E5 2 | flags 1 | sender 2 | packet number 4 | ciphertext .. | icv 16 |
//! ```
//!
//! The ciphertext covers the original frame from its EtherType onwards. The
//! ICV is a CMAC over the 21 header bytes followed by the plaintext.
//!
//! Secure L3 packet, carried after a 14-byte Ethernet header with EtherType
//! 0x88B5:
//!
//! ```text
//! | spi 4 | sequence 4 | ciphertext (inner IPv4 packet) .. | icv 16 |
//! ```
//!
//! The ICV is a CMAC over spi, sequence and the plaintext inner packet.
//!
//! Decapsulation is split into an in-place decrypt and a verify-and-strip
//! step so pipeline stages can run them on different enclaves.

use thiserror::Error;

use super::{
    EthernetHeader, FrameBuffer, MacAddr, ETHERTYPE_IPV4, ETH_HDR_LEN, IPV4_HDR_LEN,
};
use crate::crypto::{SecurityAssociation, TAG_LEN};

pub const ETHERTYPE_SECURE_L2: u16 = 0x88E5;
pub const ETHERTYPE_SECURE_L3: u16 = 0x88B5;

pub const SECTAG_LEN: usize = 7;
pub const ICV_LEN: usize = TAG_LEN;
pub const ESP_HDR_LEN: usize = 8;

/// Outer header plus tag, i.e. the bytes preceding the ciphertext.
pub const L2_HDR_LEN: usize = ETH_HDR_LEN + SECTAG_LEN;
/// Bytes a secure L2 frame adds on top of its ciphertext.
pub const L2_OVERHEAD: usize = ETH_HDR_LEN + SECTAG_LEN + ICV_LEN;
/// Bytes a secure L3 packet adds on top of its ciphertext.
pub const L3_OVERHEAD: usize = ESP_HDR_LEN + ICV_LEN;

/// Frame has been encrypted.
pub const FLAG_ENCRYPTED: u8 = 0x08;
/// ICV field carries a valid tag (cleared when integrity is disabled).
pub const FLAG_ICV: u8 = 0x04;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SecureError {
    #[error("not a secure frame (ethertype {0:#06x})")]
    WrongEthertype(u16),
    #[error("secure frame truncated")]
    Truncated,
    #[error("frame too large to encapsulate")]
    TooLarge,
    #[error("integrity check failed")]
    IcvMismatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecTag {
    pub flags: u8,
    pub sender: u16,
    pub packet_number: u32,
}

impl SecTag {
    pub fn parse(bytes: &[u8]) -> Self {
        SecTag {
            flags: bytes[0],
            sender: u16::from_be_bytes([bytes[1], bytes[2]]),
            packet_number: u32::from_be_bytes([bytes[3], bytes[4], bytes[5], bytes[6]]),
        }
    }

    pub fn write(&self, out: &mut [u8]) {
        out[0] = self.flags;
        out[1..3].copy_from_slice(&self.sender.to_be_bytes());
        out[3..7].copy_from_slice(&self.packet_number.to_be_bytes());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EspHeader {
    pub spi: u32,
    pub sequence: u32,
}

impl EspHeader {
    pub fn parse(bytes: &[u8]) -> Self {
        EspHeader {
            spi: u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
            sequence: u32::from_be_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]),
        }
    }

    pub fn write(&self, out: &mut [u8]) {
        out[0..4].copy_from_slice(&self.spi.to_be_bytes());
        out[4..8].copy_from_slice(&self.sequence.to_be_bytes());
    }
}

/// Turns a plain Ethernet frame into a secure L2 frame in place.
///
/// With `with_icv == false` the ICV field is zero and [`FLAG_ICV`] is clear.
pub fn seal_l2(
    buf: &mut FrameBuffer,
    sa: &SecurityAssociation,
    sender: u16,
    packet_number: u32,
    with_icv: bool,
) -> Result<(), SecureError> {
    let plain_len = buf.len();
    if plain_len < ETH_HDR_LEN {
        return Err(SecureError::Truncated);
    }
    let body_len = plain_len - 12;
    let total = L2_HDR_LEN + body_len + ICV_LEN;
    if total > buf.capacity() {
        return Err(SecureError::TooLarge);
    }
    let raw = buf.raw_mut();
    // Shift ethertype + payload right to make room for the tag.
    raw.copy_within(12..plain_len, L2_HDR_LEN);
    raw[12..14].copy_from_slice(&ETHERTYPE_SECURE_L2.to_be_bytes());
    let tag = SecTag {
        flags: FLAG_ENCRYPTED | if with_icv { FLAG_ICV } else { 0 },
        sender,
        packet_number,
    };
    tag.write(&mut raw[ETH_HDR_LEN..L2_HDR_LEN]);
    let icv_at = L2_HDR_LEN + body_len;
    if with_icv {
        let icv = sa.icv(&[&raw[..icv_at]]);
        raw[icv_at..total].copy_from_slice(&icv);
    } else {
        raw[icv_at..total].fill(0);
    }
    sa.apply_keystream(u32::from(sender), packet_number, &mut raw[L2_HDR_LEN..icv_at]);
    buf.set_len(total).map_err(|_| SecureError::TooLarge)
}

/// Decrypts the ciphertext of a secure L2 frame in place. The layout is kept
/// so [`verify_strip_l2`] can check the ICV afterwards.
pub fn decrypt_l2(buf: &mut FrameBuffer, sa: &SecurityAssociation) -> Result<(), SecureError> {
    let len = buf.len();
    let bytes = buf.as_mut_slice();
    if len < ETH_HDR_LEN {
        return Err(SecureError::Truncated);
    }
    let ethertype = u16::from_be_bytes([bytes[12], bytes[13]]);
    if ethertype != ETHERTYPE_SECURE_L2 {
        return Err(SecureError::WrongEthertype(ethertype));
    }
    // Ciphertext must hold at least the inner EtherType.
    if len < L2_OVERHEAD + 2 {
        return Err(SecureError::Truncated);
    }
    let tag = SecTag::parse(&bytes[ETH_HDR_LEN..L2_HDR_LEN]);
    sa.apply_keystream(
        u32::from(tag.sender),
        tag.packet_number,
        &mut bytes[L2_HDR_LEN..len - ICV_LEN],
    );
    Ok(())
}

/// Checks the ICV of a decrypted secure L2 frame (when `verify`) and rewrites
/// the buffer into the original plain frame.
pub fn verify_strip_l2(
    buf: &mut FrameBuffer,
    sa: &SecurityAssociation,
    verify: bool,
) -> Result<(), SecureError> {
    let len = buf.len();
    if len < L2_OVERHEAD + 2 {
        return Err(SecureError::Truncated);
    }
    let icv_at = len - ICV_LEN;
    if verify {
        let bytes = buf.as_slice();
        if !sa.verify_icv(&[&bytes[..icv_at]], &bytes[icv_at..]) {
            return Err(SecureError::IcvMismatch);
        }
    }
    let raw = buf.raw_mut();
    raw.copy_within(L2_HDR_LEN..icv_at, 12);
    let plain_len = 12 + icv_at - L2_HDR_LEN;
    buf.set_len(plain_len).map_err(|_| SecureError::Truncated)
}

/// Full secure L2 decapsulation: decrypt, verify, strip.
pub fn open_l2(buf: &mut FrameBuffer, sa: &SecurityAssociation, verify: bool) -> Result<(), SecureError> {
    decrypt_l2(buf, sa)?;
    verify_strip_l2(buf, sa, verify)
}

/// Wraps the IPv4 packet of a plain frame into a secure L3 packet in place.
/// The Ethernet addresses are kept; the EtherType becomes
/// [`ETHERTYPE_SECURE_L3`]. Trailing Ethernet padding is not carried.
pub fn seal_l3(
    buf: &mut FrameBuffer,
    sa: &SecurityAssociation,
    spi: u32,
    sequence: u32,
    with_icv: bool,
) -> Result<(), SecureError> {
    let len = buf.len();
    if len < ETH_HDR_LEN + IPV4_HDR_LEN {
        return Err(SecureError::Truncated);
    }
    let inner_len = {
        let b = buf.as_slice();
        usize::from(u16::from_be_bytes([b[16], b[17]])).clamp(IPV4_HDR_LEN, len - ETH_HDR_LEN)
    };
    let ct_at = ETH_HDR_LEN + ESP_HDR_LEN;
    let icv_at = ct_at + inner_len;
    let total = icv_at + ICV_LEN;
    if total > buf.capacity() {
        return Err(SecureError::TooLarge);
    }
    let raw = buf.raw_mut();
    raw.copy_within(ETH_HDR_LEN..ETH_HDR_LEN + inner_len, ct_at);
    raw[12..14].copy_from_slice(&ETHERTYPE_SECURE_L3.to_be_bytes());
    EspHeader { spi, sequence }.write(&mut raw[ETH_HDR_LEN..ct_at]);
    if with_icv {
        let icv = sa.icv(&[&raw[ETH_HDR_LEN..icv_at]]);
        raw[icv_at..total].copy_from_slice(&icv);
    } else {
        raw[icv_at..total].fill(0);
    }
    sa.apply_keystream(spi, sequence, &mut raw[ct_at..icv_at]);
    buf.set_len(total).map_err(|_| SecureError::TooLarge)
}

pub fn decrypt_l3(buf: &mut FrameBuffer, sa: &SecurityAssociation) -> Result<(), SecureError> {
    let len = buf.len();
    let bytes = buf.as_mut_slice();
    if len < ETH_HDR_LEN {
        return Err(SecureError::Truncated);
    }
    let ethertype = u16::from_be_bytes([bytes[12], bytes[13]]);
    if ethertype != ETHERTYPE_SECURE_L3 {
        return Err(SecureError::WrongEthertype(ethertype));
    }
    if len < ETH_HDR_LEN + L3_OVERHEAD + IPV4_HDR_LEN {
        return Err(SecureError::Truncated);
    }
    let esp = EspHeader::parse(&bytes[ETH_HDR_LEN..]);
    sa.apply_keystream(
        esp.spi,
        esp.sequence,
        &mut bytes[ETH_HDR_LEN + ESP_HDR_LEN..len - ICV_LEN],
    );
    Ok(())
}

pub fn verify_strip_l3(
    buf: &mut FrameBuffer,
    sa: &SecurityAssociation,
    verify: bool,
) -> Result<(), SecureError> {
    let len = buf.len();
    if len < ETH_HDR_LEN + L3_OVERHEAD + IPV4_HDR_LEN {
        return Err(SecureError::Truncated);
    }
    let icv_at = len - ICV_LEN;
    if verify {
        let bytes = buf.as_slice();
        if !sa.verify_icv(&[&bytes[ETH_HDR_LEN..icv_at]], &bytes[icv_at..]) {
            return Err(SecureError::IcvMismatch);
        }
    }
    let raw = buf.raw_mut();
    raw.copy_within(ETH_HDR_LEN + ESP_HDR_LEN..icv_at, ETH_HDR_LEN);
    raw[12..14].copy_from_slice(&ETHERTYPE_IPV4.to_be_bytes());
    let plain_len = icv_at - ESP_HDR_LEN;
    buf.set_len(plain_len).map_err(|_| SecureError::Truncated)
}

pub fn open_l3(buf: &mut FrameBuffer, sa: &SecurityAssociation, verify: bool) -> Result<(), SecureError> {
    decrypt_l3(buf, sa)?;
    verify_strip_l3(buf, sa, verify)
}

/// Source MAC of a secure frame, readable without keys.
pub fn outer_src(bytes: &[u8]) -> Option<MacAddr> {
    EthernetHeader::parse(bytes).ok().map(|h| h.src)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{Key128, KeyPair};
    use crate::pkt::test_frames::ipv4_frame;
    use proptest::prelude::*;

    fn sa() -> SecurityAssociation {
        SecurityAssociation::new(&KeyPair {
            encryption: Key128::new([1; 16]),
            integrity: Key128::new([2; 16]),
        })
    }

    #[test]
    fn l2_layout_and_overhead() {
        let plain = ipv4_frame(64, [10, 0, 0, 9], 64);
        let mut buf = FrameBuffer::from_bytes(0, &plain).unwrap();
        seal_l2(&mut buf, &sa(), 0x0102, 0x0a0b0c0d, true).unwrap();
        let b = buf.as_slice();
        let ciphertext_len = plain.len() - 12;
        assert_eq!(b.len(), L2_OVERHEAD + ciphertext_len);
        assert_eq!(L2_OVERHEAD, 14 + 7 + 16);
        assert_eq!(&b[..12], &plain[..12]);
        assert_eq!(&b[12..14], &[0x88, 0xe5]);
        assert_eq!(b[14], FLAG_ENCRYPTED | FLAG_ICV);
        assert_eq!(&b[15..17], &[0x01, 0x02]);
        assert_eq!(&b[17..21], &[0x0a, 0x0b, 0x0c, 0x0d]);
        assert_ne!(&b[21..21 + ciphertext_len], &plain[12..]);
    }

    #[test]
    fn l2_icv_covers_header_and_plaintext() {
        let plain = ipv4_frame(80, [10, 0, 0, 9], 64);
        let mut buf = FrameBuffer::from_bytes(0, &plain).unwrap();
        let s = sa();
        seal_l2(&mut buf, &s, 7, 99, true).unwrap();
        decrypt_l2(&mut buf, &s).unwrap();
        let b = buf.as_slice();
        let icv_at = b.len() - ICV_LEN;
        let mut expected_input = b[..L2_HDR_LEN].to_vec();
        expected_input.extend_from_slice(&plain[12..]);
        assert_eq!(&b[..icv_at], &expected_input[..]);
        assert_eq!(&b[icv_at..], &s.icv(&[&expected_input]));
    }

    #[test]
    fn l3_layout_and_overhead() {
        let plain = ipv4_frame(100, [10, 0, 0, 9], 64);
        let mut buf = FrameBuffer::from_bytes(0, &plain).unwrap();
        let s = sa();
        seal_l3(&mut buf, &s, 0xdeadbeef, 5, true).unwrap();
        let b = buf.as_slice();
        let inner = plain.len() - ETH_HDR_LEN;
        assert_eq!(b.len() - ETH_HDR_LEN, L3_OVERHEAD + inner);
        assert_eq!(&b[12..14], &[0x88, 0xb5]);
        assert_eq!(&b[14..18], &[0xde, 0xad, 0xbe, 0xef]);
        assert_eq!(&b[18..22], &[0, 0, 0, 5]);
        decrypt_l3(&mut buf, &s).unwrap();
        let b = buf.as_slice();
        let mut mac_input = vec![0xde, 0xad, 0xbe, 0xef, 0, 0, 0, 5];
        mac_input.extend_from_slice(&plain[ETH_HDR_LEN..]);
        assert_eq!(&b[b.len() - ICV_LEN..], &s.icv(&[&mac_input]));
    }

    #[test]
    fn wrong_ethertype_rejected() {
        let plain = ipv4_frame(64, [10, 0, 0, 9], 64);
        let mut buf = FrameBuffer::from_bytes(0, &plain).unwrap();
        assert_eq!(decrypt_l2(&mut buf, &sa()), Err(SecureError::WrongEthertype(0x0800)));
        assert_eq!(decrypt_l3(&mut buf, &sa()), Err(SecureError::WrongEthertype(0x0800)));
    }

    #[test]
    fn no_icv_mode_zeroes_tag_and_skips_verification() {
        let plain = ipv4_frame(64, [10, 0, 0, 9], 64);
        let mut buf = FrameBuffer::from_bytes(0, &plain).unwrap();
        let s = sa();
        seal_l2(&mut buf, &s, 1, 1, false).unwrap();
        assert_eq!(buf.as_slice()[14], FLAG_ENCRYPTED);
        let len = buf.len();
        assert!(buf.as_slice()[len - ICV_LEN..].iter().all(|&b| b == 0));
        open_l2(&mut buf, &s, false).unwrap();
        assert_eq!(buf.as_slice(), &plain[..]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn l2_round_trip(payload_len in 46usize..=1472, sender in any::<u16>(), pn in any::<u32>(), seed in any::<u8>()) {
            let mut plain = ipv4_frame(ETH_HDR_LEN + payload_len, [10, 0, 0, seed], 64);
            for (i, b) in plain.iter_mut().skip(34).enumerate() { *b = seed.wrapping_add(i as u8); }
            let s = sa();
            let mut buf = FrameBuffer::from_bytes(0, &plain).unwrap();
            seal_l2(&mut buf, &s, sender, pn, true).unwrap();
            open_l2(&mut buf, &s, true).unwrap();
            prop_assert_eq!(buf.as_slice(), &plain[..]);
        }

        #[test]
        fn l3_round_trip(payload_len in 46usize..=1472, spi in any::<u32>(), seq in any::<u32>()) {
            let plain = ipv4_frame(ETH_HDR_LEN + payload_len, [10, 9, 8, 7], 64);
            let s = sa();
            let mut buf = FrameBuffer::from_bytes(0, &plain).unwrap();
            seal_l3(&mut buf, &s, spi, seq, true).unwrap();
            open_l3(&mut buf, &s, true).unwrap();
            prop_assert_eq!(buf.as_slice(), &plain[..]);
        }
    }
}
