//! IPv4 longest-prefix-match table: a 16-8-8 multibit trie with controlled
//! prefix expansion. Every slot remembers the length of the prefix that
//! filled it so shorter prefixes never overwrite longer ones.

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::pkt::MacAddr;

const NONE: u32 = u32::MAX;
const STRIDES: [u8; 3] = [16, 8, 8];
const LEVEL_START: [u8; 3] = [0, 16, 24];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NextHop {
    pub port: u16,
    pub mac: MacAddr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum LpmError {
    #[error("prefix length {0} exceeds 32")]
    BadLength(u8),
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    hop: u32,
    depth: u8,
    child: u32,
}

const EMPTY: Slot = Slot {
    hop: NONE,
    depth: 0,
    child: NONE,
};

#[derive(Debug, Clone)]
pub struct LpmTable {
    root: Vec<Slot>,
    groups: Vec<[Slot; 256]>,
    hops: Vec<NextHop>,
    routes: FxHashMap<(u32, u8), u32>,
}

impl Default for LpmTable {
    fn default() -> Self {
        Self::new()
    }
}

fn mask(len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        u32::MAX << (32 - u32::from(len))
    }
}

impl LpmTable {
    pub fn new() -> Self {
        LpmTable {
            root: vec![EMPTY; 1 << 16],
            groups: Vec::new(),
            hops: Vec::new(),
            routes: FxHashMap::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }

    /// Adds or replaces the route for `prefix/len`. Host bits are ignored.
    pub fn insert(&mut self, prefix: u32, len: u8, hop: NextHop) -> Result<(), LpmError> {
        if len > 32 {
            return Err(LpmError::BadLength(len));
        }
        let prefix = prefix & mask(len);
        let hop_idx = match self.routes.get(&(prefix, len)) {
            Some(&idx) => {
                self.hops[idx as usize] = hop;
                return Ok(());
            }
            None => {
                self.hops.push(hop);
                (self.hops.len() - 1) as u32
            }
        };
        self.routes.insert((prefix, len), hop_idx);
        self.insert_level(None, 0, prefix, len, hop_idx);
        Ok(())
    }

    fn slot_mut(&mut self, group: Option<u32>, idx: usize) -> &mut Slot {
        match group {
            None => &mut self.root[idx],
            Some(g) => &mut self.groups[g as usize][idx],
        }
    }

    fn insert_level(&mut self, group: Option<u32>, level: usize, prefix: u32, len: u8, hop: u32) {
        let start = LEVEL_START[level];
        let stride = STRIDES[level];
        let end = start + stride;
        let index = ((prefix << start) >> (32 - u32::from(stride))) as usize;
        if len <= end {
            let span = 1usize << (end - len.max(start));
            let base = index & !(span - 1);
            for i in base..base + span {
                self.cover(group, i, hop, len);
            }
        } else {
            let slot = *self.slot_mut(group, index);
            let child = if slot.child == NONE {
                let fill = Slot {
                    hop: slot.hop,
                    depth: slot.depth,
                    child: NONE,
                };
                self.groups.push([fill; 256]);
                let id = (self.groups.len() - 1) as u32;
                self.slot_mut(group, index).child = id;
                id
            } else {
                slot.child
            };
            self.insert_level(Some(child), level + 1, prefix, len, hop);
        }
    }

    /// Applies a prefix of length `len` to one slot and everything below it
    /// that is not already covered by a longer prefix.
    fn cover(&mut self, group: Option<u32>, idx: usize, hop: u32, len: u8) {
        let slot = self.slot_mut(group, idx);
        if slot.depth > len {
            return;
        }
        slot.hop = hop;
        slot.depth = len;
        let child = slot.child;
        if child != NONE {
            for i in 0..256 {
                self.cover(Some(child), i, hop, len);
            }
        }
    }

    fn lookup_index(&self, addr: u32) -> Option<u32> {
        let mut slot = self.root[(addr >> 16) as usize];
        if slot.child != NONE {
            slot = self.groups[slot.child as usize][((addr >> 8) & 0xff) as usize];
            if slot.child != NONE {
                slot = self.groups[slot.child as usize][(addr & 0xff) as usize];
            }
        }
        (slot.hop != NONE).then_some(slot.hop)
    }

    /// Index of the longest matching route's next hop.
    pub fn lookup(&self, addr: u32) -> Option<u32> {
        self.lookup_index(addr)
    }

    pub fn next_hop(&self, index: u32) -> &NextHop {
        &self.hops[index as usize]
    }

    pub fn lookup_hop(&self, addr: u32) -> Option<&NextHop> {
        self.lookup_index(addr).map(|i| &self.hops[i as usize])
    }

    /// Installed routes as `(prefix, len, next hop)`.
    pub fn routes(&self) -> impl Iterator<Item = (u32, u8, &NextHop)> {
        self.routes
            .iter()
            .map(|(&(p, l), &h)| (p, l, &self.hops[h as usize]))
    }

    pub fn footprint_bytes(&self) -> u64 {
        let slot = std::mem::size_of::<Slot>() as u64;
        slot * (self.root.len() as u64 + 256 * self.groups.len() as u64)
            + (self.hops.len() * std::mem::size_of::<NextHop>()) as u64
    }
}
