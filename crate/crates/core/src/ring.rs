//! Bounded lock-free FIFO with burst enqueue/dequeue.
//!
//! Head/tail pairs on each side follow the classic two-phase scheme: a side
//! first reserves a contiguous range by moving its head (plain store for a
//! single party, CAS for many), copies, then publishes by moving its tail
//! once every earlier reservation on that side has been published.
//!
//! Enqueue is partial: a burst is accepted up to the free space and the
//! rejected suffix stays with the caller.

use std::cell::UnsafeCell;
use std::fmt;
use std::mem::MaybeUninit;
use std::sync::atomic::{AtomicUsize, Ordering};

use crossbeam_utils::{Backoff, CachePadded};

pub const DEFAULT_RING_CAPACITY: usize = 1024;
pub const DEFAULT_BURST: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RingMode {
    /// Single producer, single consumer.
    Spsc,
    /// Many producers, single consumer.
    Mpsc,
    /// Single producer, many consumers.
    Spmc,
}

impl RingMode {
    pub fn for_counts(producers: usize, consumers: usize) -> Self {
        match (producers > 1, consumers > 1) {
            (false, false) => RingMode::Spsc,
            (true, false) => RingMode::Mpsc,
            (false, true) => RingMode::Spmc,
            (true, true) => panic!("ring with many producers and many consumers is not supported"),
        }
    }

    fn multi_producer(self) -> bool {
        matches!(self, RingMode::Mpsc)
    }

    fn multi_consumer(self) -> bool {
        matches!(self, RingMode::Spmc)
    }
}

struct HeadTail {
    head: AtomicUsize,
    tail: AtomicUsize,
    #[cfg(debug_assertions)]
    busy: AtomicUsize,
}

impl HeadTail {
    fn new() -> Self {
        HeadTail {
            head: AtomicUsize::new(0),
            tail: AtomicUsize::new(0),
            #[cfg(debug_assertions)]
            busy: AtomicUsize::new(0),
        }
    }
}

/// Catches two threads inside a single-party side at once.
struct SoloGuard<'a> {
    #[cfg(debug_assertions)]
    flag: Option<&'a AtomicUsize>,
    #[cfg(not(debug_assertions))]
    _p: std::marker::PhantomData<&'a ()>,
}

impl<'a> SoloGuard<'a> {
    #[allow(unused_variables)]
    fn enter(side: &'a HeadTail, multi: bool, what: &str) -> Self {
        #[cfg(debug_assertions)]
        {
            if multi {
                return SoloGuard { flag: None };
            }
            if side.busy.swap(1, Ordering::Acquire) != 0 {
                panic!("ring mode violation: concurrent {what} on a single-{what} ring");
            }
            SoloGuard {
                flag: Some(&side.busy),
            }
        }
        #[cfg(not(debug_assertions))]
        SoloGuard {
            _p: std::marker::PhantomData,
        }
    }
}

#[cfg(debug_assertions)]
impl Drop for SoloGuard<'_> {
    fn drop(&mut self) {
        if let Some(flag) = self.flag {
            flag.store(0, Ordering::Release);
        }
    }
}

pub struct Ring<T> {
    name: String,
    mode: RingMode,
    mask: usize,
    prod: CachePadded<HeadTail>,
    cons: CachePadded<HeadTail>,
    slots: Box<[UnsafeCell<MaybeUninit<T>>]>,
}

// Slots are only touched by the party that reserved them; publication goes
// through the release/acquire tail stores.
unsafe impl<T: Send> Send for Ring<T> {}
unsafe impl<T: Send> Sync for Ring<T> {}

impl<T> fmt::Debug for Ring<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ring")
            .field("name", &self.name)
            .field("mode", &self.mode)
            .field("capacity", &self.capacity())
            .field("len", &self.len())
            .finish()
    }
}

impl<T> Ring<T> {
    /// `capacity` must be a power of two.
    pub fn new(name: impl Into<String>, capacity: usize, mode: RingMode) -> Self {
        assert!(
            capacity.is_power_of_two(),
            "ring capacity must be a power of two, got {capacity}"
        );
        let slots = (0..capacity)
            .map(|_| UnsafeCell::new(MaybeUninit::uninit()))
            .collect();
        Ring {
            name: name.into(),
            mode,
            mask: capacity - 1,
            prod: CachePadded::new(HeadTail::new()),
            cons: CachePadded::new(HeadTail::new()),
            slots,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn mode(&self) -> RingMode {
        self.mode
    }

    pub fn capacity(&self) -> usize {
        self.mask + 1
    }

    /// Snapshot of published entries; exact only when the ring is quiescent.
    pub fn len(&self) -> usize {
        let prod_tail = self.prod.tail.load(Ordering::Acquire);
        let cons_tail = self.cons.tail.load(Ordering::Acquire);
        prod_tail.wrapping_sub(cons_tail).min(self.capacity())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn reserve(
        &self,
        side: &HeadTail,
        other_tail: &AtomicUsize,
        multi: bool,
        wanted: usize,
        producer: bool,
    ) -> (usize, usize) {
        let capacity = self.capacity();
        let mut head = side.head.load(Ordering::Relaxed);
        loop {
            let other = other_tail.load(Ordering::Acquire);
            let available = if producer {
                capacity - head.wrapping_sub(other)
            } else {
                other.wrapping_sub(head)
            };
            let n = wanted.min(available);
            if n == 0 {
                return (head, 0);
            }
            let next = head.wrapping_add(n);
            if !multi {
                side.head.store(next, Ordering::Relaxed);
                return (head, n);
            }
            match side
                .head
                .compare_exchange_weak(head, next, Ordering::Relaxed, Ordering::Relaxed)
            {
                Ok(_) => return (head, n),
                Err(actual) => head = actual,
            }
        }
    }

    fn publish(side: &HeadTail, multi: bool, start: usize, n: usize) {
        if multi {
            // Earlier reservations on this side must publish first.
            let backoff = Backoff::new();
            while side.tail.load(Ordering::Relaxed) != start {
                backoff.snooze();
            }
        }
        side.tail.store(start.wrapping_add(n), Ordering::Release);
    }

    /// Moves up to the free space from the front of `items` into the ring and
    /// returns how many were taken. Rejected items stay in `items`, in order.
    pub fn enqueue_batch(&self, items: &mut Vec<T>) -> usize {
        if items.is_empty() {
            return 0;
        }
        let multi = self.mode.multi_producer();
        let _solo = SoloGuard::enter(&self.prod, multi, "producer");
        let (start, n) = self.reserve(&self.prod, &self.cons.tail, multi, items.len(), true);
        if n == 0 {
            return 0;
        }
        for (i, item) in items.drain(..n).enumerate() {
            let slot = &self.slots[start.wrapping_add(i) & self.mask];
            unsafe { (*slot.get()).write(item) };
        }
        Self::publish(&self.prod, multi, start, n);
        n
    }

    /// Single-item enqueue; returns the item back when the ring is full.
    pub fn enqueue(&self, item: T) -> Result<(), T> {
        let mut one = vec![item];
        if self.enqueue_batch(&mut one) == 1 {
            Ok(())
        } else {
            Err(one.pop().expect("rejected item"))
        }
    }

    /// Appends up to `max` items to `out` in FIFO order; returns the count.
    pub fn dequeue_batch(&self, out: &mut Vec<T>, max: usize) -> usize {
        if max == 0 {
            return 0;
        }
        let multi = self.mode.multi_consumer();
        let _solo = SoloGuard::enter(&self.cons, multi, "consumer");
        let (start, n) = self.reserve(&self.cons, &self.prod.tail, multi, max, false);
        if n == 0 {
            return 0;
        }
        out.reserve(n);
        for i in 0..n {
            let slot = &self.slots[start.wrapping_add(i) & self.mask];
            out.push(unsafe { (*slot.get()).assume_init_read() });
        }
        Self::publish(&self.cons, multi, start, n);
        n
    }

    pub fn dequeue(&self) -> Option<T> {
        let mut out = Vec::with_capacity(1);
        self.dequeue_batch(&mut out, 1);
        out.pop()
    }
}

impl<T> Drop for Ring<T> {
    fn drop(&mut self) {
        let mut rest = Vec::new();
        let head = *self.cons.tail.get_mut();
        let tail = *self.prod.tail.get_mut();
        let mut i = head;
        while i != tail {
            let slot = &self.slots[i & self.mask];
            rest.push(unsafe { (*slot.get()).assume_init_read() });
            i = i.wrapping_add(1);
        }
        drop(rest);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;
    use std::sync::Arc;

    #[test]
    fn empty_ring_full_burst_accepted() {
        let ring = Ring::new("t", 8, RingMode::Spsc);
        let mut items = vec![1, 2, 3, 4];
        assert_eq!(ring.enqueue_batch(&mut items), 4);
        assert!(items.is_empty());
        assert_eq!(ring.len(), 4);
    }

    #[test]
    fn partial_enqueue_leaves_suffix_with_caller() {
        let ring = Ring::new("t", 8, RingMode::Spsc);
        let mut fill: Vec<u32> = (0..7).collect();
        assert_eq!(ring.enqueue_batch(&mut fill), 7);
        let mut items = vec![100, 101, 102, 103];
        assert_eq!(ring.enqueue_batch(&mut items), 1);
        assert_eq!(items, vec![101, 102, 103]);
        assert_eq!(ring.len(), 8);
        assert_eq!(ring.enqueue(5), Err(5));
    }

    #[test]
    fn dequeue_empty_and_fifo() {
        let ring = Ring::new("t", 8, RingMode::Spsc);
        let mut out = Vec::new();
        assert_eq!(ring.dequeue_batch(&mut out, 8), 0);
        assert!(out.is_empty());
        let mut items = vec![10, 20, 30];
        ring.enqueue_batch(&mut items);
        assert_eq!(ring.dequeue_batch(&mut out, 8), 3);
        assert_eq!(out, vec![10, 20, 30]);
        assert!(ring.is_empty());
    }

    #[test]
    fn wraps_around_many_times() {
        let ring = Ring::new("t", 4, RingMode::Spsc);
        let mut out = Vec::new();
        for round in 0..1000u32 {
            let mut items = vec![round * 3, round * 3 + 1, round * 3 + 2];
            assert_eq!(ring.enqueue_batch(&mut items), 3);
            out.clear();
            assert_eq!(ring.dequeue_batch(&mut out, 3), 3);
            assert_eq!(out, vec![round * 3, round * 3 + 1, round * 3 + 2]);
        }
    }

    #[test]
    fn drop_releases_remaining_items() {
        let marker = Arc::new(());
        {
            let ring = Ring::new("t", 8, RingMode::Spsc);
            let mut items: Vec<_> = (0..5).map(|_| Arc::clone(&marker)).collect();
            ring.enqueue_batch(&mut items);
            assert_eq!(Arc::strong_count(&marker), 6);
        }
        assert_eq!(Arc::strong_count(&marker), 1);
    }

    #[test]
    #[should_panic(expected = "power of two")]
    fn rejects_non_power_of_two() {
        let _ = Ring::<u8>::new("t", 12, RingMode::Spsc);
    }

    #[test]
    fn mode_from_counts() {
        assert_eq!(RingMode::for_counts(1, 1), RingMode::Spsc);
        assert_eq!(RingMode::for_counts(3, 1), RingMode::Mpsc);
        assert_eq!(RingMode::for_counts(1, 2), RingMode::Spmc);
    }

    #[test]
    fn spsc_stress_no_loss_no_duplication() {
        const N: u64 = 10_000_000;
        let ring = Arc::new(Ring::new("stress", 1024, RingMode::Spsc));
        let producer = {
            let ring = Arc::clone(&ring);
            std::thread::spawn(move || {
                let mut next = 0u64;
                let mut burst = Vec::with_capacity(32);
                while next < N {
                    while burst.len() < 32 && next < N {
                        burst.push(next);
                        next += 1;
                    }
                    if ring.enqueue_batch(&mut burst) == 0 {
                        std::thread::yield_now();
                    }
                }
                while !burst.is_empty() {
                    if ring.enqueue_batch(&mut burst) == 0 {
                        std::thread::yield_now();
                    }
                }
            })
        };
        let mut expected = 0u64;
        let mut out = Vec::with_capacity(64);
        while expected < N {
            out.clear();
            if ring.dequeue_batch(&mut out, 64) == 0 {
                std::thread::yield_now();
                continue;
            }
            for &v in &out {
                assert_eq!(v, expected, "handle lost, duplicated or reordered");
                expected += 1;
            }
        }
        producer.join().unwrap();
        assert!(ring.is_empty());
    }

    #[test]
    fn mpsc_preserves_per_producer_order() {
        const PER: u64 = 200_000;
        let ring = Arc::new(Ring::new("mpsc", 256, RingMode::Mpsc));
        let producers: Vec<_> = (0..3u64)
            .map(|p| {
                let ring = Arc::clone(&ring);
                std::thread::spawn(move || {
                    let mut i = 0;
                    let mut burst = Vec::new();
                    while i < PER || !burst.is_empty() {
                        while burst.len() < 8 && i < PER {
                            burst.push((p << 32) | i);
                            i += 1;
                        }
                        if ring.enqueue_batch(&mut burst) == 0 {
                            std::thread::yield_now();
                        }
                    }
                })
            })
            .collect();
        let mut next = [0u64; 3];
        let mut seen = 0;
        let mut out = Vec::new();
        while seen < 3 * PER {
            out.clear();
            if ring.dequeue_batch(&mut out, 32) == 0 {
                std::thread::yield_now();
            }
            for &v in &out {
                let p = (v >> 32) as usize;
                assert_eq!(v & 0xffff_ffff, next[p]);
                next[p] += 1;
                seen += 1;
            }
        }
        for p in producers {
            p.join().unwrap();
        }
    }

    #[test]
    fn spmc_delivers_each_item_once() {
        const N: usize = 300_000;
        let ring = Arc::new(Ring::new("spmc", 256, RingMode::Spmc));
        let done = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let consumers: Vec<_> = (0..3)
            .map(|_| {
                let ring = Arc::clone(&ring);
                let done = Arc::clone(&done);
                std::thread::spawn(move || {
                    let mut got = Vec::new();
                    let mut out = Vec::new();
                    loop {
                        out.clear();
                        if ring.dequeue_batch(&mut out, 16) == 0 {
                            if done.load(Ordering::Acquire) && ring.is_empty() {
                                break;
                            }
                            std::thread::yield_now();
                        }
                        // FIFO within what one consumer sees.
                        assert!(out.windows(2).all(|w| w[0] < w[1]));
                        got.extend_from_slice(&out);
                    }
                    got
                })
            })
            .collect();
        let mut items: Vec<usize> = Vec::new();
        let mut next = 0;
        while next < N || !items.is_empty() {
            while items.len() < 32 && next < N {
                items.push(next);
                next += 1;
            }
            if ring.enqueue_batch(&mut items) == 0 {
                std::thread::yield_now();
            }
        }
        done.store(true, Ordering::Release);
        let mut all: Vec<usize> = consumers.into_iter().flat_map(|c| c.join().unwrap()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..N).collect::<Vec<_>>());
    }

    #[cfg(debug_assertions)]
    #[test]
    fn spsc_concurrent_producers_detected_in_debug() {
        let ring = Ring::<u8>::new("t", 8, RingMode::Spsc);
        let _held = SoloGuard::enter(&ring.prod, false, "producer");
        let r = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
            let mut v = vec![1u8];
            ring.enqueue_batch(&mut v);
        }));
        assert!(r.is_err());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Enq(usize),
        Deq(usize),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![(1usize..40).prop_map(Op::Enq), (1usize..40).prop_map(Op::Deq)]
    }

    proptest! {
        // Ring against a VecDeque model: partial acceptance, FIFO, conservation.
        #[test]
        fn matches_queue_model(ops in proptest::collection::vec(op(), 1..200)) {
            let ring = Ring::new("model", 32, RingMode::Spsc);
            let mut model = VecDeque::new();
            let mut next = 0u32;
            let (mut accepted, mut dequeued) = (0usize, 0usize);
            for op in ops {
                match op {
                    Op::Enq(n) => {
                        let mut items: Vec<u32> = (next..next + n as u32).collect();
                        next += n as u32;
                        let k = ring.enqueue_batch(&mut items);
                        let free = 32 - model.len();
                        prop_assert_eq!(k, n.min(free));
                        prop_assert_eq!(items.len(), n - k);
                        for v in next - n as u32..next - n as u32 + k as u32 { model.push_back(v); }
                        accepted += k;
                    }
                    Op::Deq(max) => {
                        let mut out = Vec::new();
                        let k = ring.dequeue_batch(&mut out, max);
                        let expect: Vec<u32> = (0..k.min(model.len())).map(|_| model.pop_front().unwrap()).collect();
                        prop_assert_eq!(out, expect);
                        dequeued += k;
                    }
                }
                prop_assert!(ring.len() <= ring.capacity());
                prop_assert_eq!(accepted, dequeued + ring.len());
            }
        }
    }
}
