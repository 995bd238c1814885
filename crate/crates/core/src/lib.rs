//! Emulated trusted dataplane.
//!
//! Network functions run inside emulated enclaves ([`tee`]) that exchange
//! packet buffers with untrusted I/O through lock-free batch rings
//! ([`ring`]). [`topo`] wires the baseline, parallel, pipeline and
//! load-balancer designs; [`traffic`] drives them and [`bench`] turns the
//! counters into reports.

pub mod bench;
pub mod crypto;
pub mod nf;
pub mod pkt;
pub mod ring;
pub mod runner;
pub mod tee;
pub mod topo;
pub mod traffic;
pub mod verify;
mod util;
