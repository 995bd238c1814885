//! AES-128 primitives used by the secure frame formats and attestation:
//! CTR-mode keystream for confidentiality, CMAC for integrity tags.

use std::fmt;

use aes::cipher::{KeyInit, StreamCipher};
use aes::Aes128;
use cmac::{Cmac, Mac};
use ctr::cipher::InnerIvInit;

pub const KEY_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

type Aes128Ctr = ctr::Ctr32BE<Aes128>;
type Aes128CtrCore = ctr::CtrCore<Aes128, ctr::flavors::Ctr32BE>;

/// 128-bit secret. Debug output is redacted.
#[derive(Clone, PartialEq, Eq)]
pub struct Key128([u8; KEY_LEN]);

impl Key128 {
    pub const fn new(bytes: [u8; KEY_LEN]) -> Self {
        Key128(bytes)
    }

    pub(crate) fn expose(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl fmt::Debug for Key128 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Key128(..)")
    }
}

/// Encryption key plus integrity key for one security association.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyPair {
    pub encryption: Key128,
    pub integrity: Key128,
}

/// Keyed cipher state for one security association. Key schedules are
/// expanded once; per-frame work only clones the expanded state.
#[derive(Clone)]
pub struct SecurityAssociation {
    block: Aes128,
    mac: Cmac<Aes128>,
}

impl fmt::Debug for SecurityAssociation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecurityAssociation(..)")
    }
}

impl SecurityAssociation {
    pub fn new(keys: &KeyPair) -> Self {
        SecurityAssociation {
            block: Aes128::new(keys.encryption.expose().into()),
            mac: <Cmac<Aes128> as KeyInit>::new(keys.integrity.expose().into()),
        }
    }

    /// XORs the CTR keystream for `(sender, sequence)` into `data`.
    ///
    /// Counter block layout: sender (4) | sequence (4) | zero (4) | block counter (4).
    pub fn apply_keystream(&self, sender: u32, sequence: u32, data: &mut [u8]) {
        let mut iv = [0u8; 16];
        iv[0..4].copy_from_slice(&sender.to_be_bytes());
        iv[4..8].copy_from_slice(&sequence.to_be_bytes());
        let mut stream =
            Aes128Ctr::from_core(Aes128CtrCore::inner_iv_init(self.block.clone(), &iv.into()));
        stream.apply_keystream(data);
    }

    pub fn icv(&self, parts: &[&[u8]]) -> [u8; TAG_LEN] {
        let mut mac = self.mac.clone();
        for part in parts {
            mac.update(part);
        }
        mac.finalize().into_bytes().into()
    }

    /// Constant-time tag comparison.
    pub fn verify_icv(&self, parts: &[&[u8]], tag: &[u8]) -> bool {
        let mut mac = self.mac.clone();
        for part in parts {
            mac.update(part);
        }
        mac.verify_slice(tag).is_ok()
    }
}

/// One-shot AES-CMAC over the concatenation of `parts`.
pub fn cmac(key: &Key128, parts: &[&[u8]]) -> [u8; TAG_LEN] {
    let mut mac = <Cmac<Aes128> as KeyInit>::new(key.expose().into());
    for part in parts {
        mac.update(part);
    }
    mac.finalize().into_bytes().into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex16(s: &str) -> [u8; 16] {
        let mut out = [0u8; 16];
        for (i, b) in out.iter_mut().enumerate() {
            *b = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).unwrap();
        }
        out
    }

    // RFC 4493 test vectors.
    #[test]
    fn cmac_matches_rfc4493() {
        let key = Key128::new(hex16("2b7e151628aed2a6abf7158809cf4f3c"));
        assert_eq!(cmac(&key, &[]), hex16("bb1d6929e95937287fa37d129b756746"));
        let m = hex16("6bc1bee22e409f96e93d7e117393172a");
        assert_eq!(cmac(&key, &[&m]), hex16("070a16b46b4d4144f79bdd9dd04a287c"));
        // Split input must give the same tag as contiguous input.
        assert_eq!(cmac(&key, &[&m[..5], &m[5..]]), hex16("070a16b46b4d4144f79bdd9dd04a287c"));
    }

    #[test]
    fn keystream_is_involutive_and_nonce_dependent() {
        let keys = KeyPair {
            encryption: Key128::new([7; 16]),
            integrity: Key128::new([9; 16]),
        };
        let sa = SecurityAssociation::new(&keys);
        let plain: Vec<u8> = (0..100u8).collect();
        let mut buf = plain.clone();
        sa.apply_keystream(1, 42, &mut buf);
        assert_ne!(buf, plain);
        let mut other = plain.clone();
        sa.apply_keystream(1, 43, &mut other);
        assert_ne!(buf, other);
        sa.apply_keystream(1, 42, &mut buf);
        assert_eq!(buf, plain);
    }

    #[test]
    fn key_debug_is_redacted() {
        let k = Key128::new([0xAB; 16]);
        assert!(!format!("{k:?}").contains("171"));
        assert!(!format!("{k:?}").to_lowercase().contains("ab"));
    }
}
