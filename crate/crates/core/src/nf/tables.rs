//! Exact-match tables: MAC switching table, load-balancer flow table and the
//! per-backend server membership tables.

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::pkt::MacAddr;

pub const MAC_TABLE_CAPACITY: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum TableError {
    #[error("table full ({0} entries)")]
    Full(usize),
    #[error("backend index {index} out of range for {backends} backends")]
    BadBackend { index: u8, backends: usize },
}

/// Approximate heap bytes of a hash map: buckets plus one control byte each.
fn map_bytes<E>(capacity: usize) -> u64 {
    (capacity * (std::mem::size_of::<E>() + 1)) as u64
}

/// MAC address to output port.
#[derive(Debug, Clone, Default)]
pub struct MacTable {
    map: FxHashMap<MacAddr, u16>,
}

impl MacTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        MacTable {
            map: FxHashMap::with_capacity_and_hasher(n.min(MAC_TABLE_CAPACITY), Default::default()),
        }
    }

    /// Inserts or overwrites; a new key beyond capacity is refused.
    pub fn insert(&mut self, mac: MacAddr, port: u16) -> Result<(), TableError> {
        if self.map.len() >= MAC_TABLE_CAPACITY && !self.map.contains_key(&mac) {
            return Err(TableError::Full(MAC_TABLE_CAPACITY));
        }
        self.map.insert(mac, port);
        Ok(())
    }

    #[inline]
    pub fn lookup(&self, mac: &MacAddr) -> Option<u16> {
        self.map.get(mac).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn footprint_bytes(&self) -> u64 {
        map_bytes::<(MacAddr, u16)>(self.map.capacity())
    }
}

/// Port index to the MAC address of that port.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PortMacs(Vec<MacAddr>);

impl PortMacs {
    pub fn new(macs: Vec<MacAddr>) -> Self {
        PortMacs(macs)
    }

    #[inline]
    pub fn get(&self, port: u16) -> Option<MacAddr> {
        self.0.get(usize::from(port)).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Destination IPv4 address to backend index.
#[derive(Debug, Clone)]
pub struct FlowTable {
    map: FxHashMap<u32, u8>,
    backends: usize,
}

impl FlowTable {
    pub fn new(backends: usize, capacity: usize) -> Self {
        FlowTable {
            map: FxHashMap::with_capacity_and_hasher(capacity, Default::default()),
            backends,
        }
    }

    pub fn backends(&self) -> usize {
        self.backends
    }

    pub fn insert(&mut self, dst_ip: u32, backend: u8) -> Result<(), TableError> {
        if usize::from(backend) >= self.backends.max(1) {
            return Err(TableError::BadBackend {
                index: backend,
                backends: self.backends,
            });
        }
        self.map.insert(dst_ip, backend);
        Ok(())
    }

    pub fn get(&self, dst_ip: u32) -> Option<u8> {
        self.map.get(&dst_ip).copied()
    }

    /// Table hit, or the hash fallback for unknown destinations.
    #[inline]
    pub fn classify(&self, dst_ip: u32) -> u8 {
        match self.map.get(&dst_ip) {
            Some(&b) => b,
            None => super::fallback_backend(dst_ip, self.backends),
        }
    }

    pub fn classify_into(&self, keys: &[u32], out: &mut [u8]) {
        for (k, o) in keys.iter().zip(out.iter_mut()) {
            *o = self.classify(*k);
        }
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn footprint_bytes(&self) -> u64 {
        map_bytes::<(u32, u8)>(self.map.capacity())
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u8)> + '_ {
        self.map.iter().map(|(&k, &v)| (k, v))
    }
}

/// Destination addresses a backend server accepts.
#[derive(Debug, Clone, Default)]
pub struct ServerTable {
    set: FxHashSet<u32>,
}

impl ServerTable {
    /// Result word for a non-member. Members echo their address back.
    pub const MISS: u32 = u32::MAX;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, dst_ip: u32) {
        self.set.insert(dst_ip);
    }

    pub fn contains(&self, dst_ip: u32) -> bool {
        self.set.contains(&dst_ip)
    }

    #[inline]
    pub fn lookup(&self, dst_ip: u32) -> u32 {
        if dst_ip != Self::MISS && self.set.contains(&dst_ip) {
            dst_ip
        } else {
            Self::MISS
        }
    }

    pub fn lookup_into(&self, keys: &[u32], out: &mut [u32]) {
        for (k, o) in keys.iter().zip(out.iter_mut()) {
            *o = self.lookup(*k);
        }
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn footprint_bytes(&self) -> u64 {
        map_bytes::<u32>(self.set.capacity())
    }
}

/// Builds one server table per backend from the flow table's assignment.
pub fn server_tables_from(flows: &FlowTable) -> Vec<ServerTable> {
    let mut out = vec![ServerTable::new(); flows.backends()];
    for (ip, b) in flows.iter() {
        out[usize::from(b)].insert(ip);
    }
    out
}
