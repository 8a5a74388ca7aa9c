//! High-throughput streaming datastructures.
//!
//! [`StreamFifo`] is a linked FIFO of individually allocated nodes: the
//! producer writes at the head, the consumer reads at the tail, and both may
//! run concurrently. There is no contiguous backing store, so a push never
//! reallocates or copies previously stored elements — per-op cost stays flat
//! regardless of occupancy, unlike a growable array.
//!
//! [`RingBuffer`] models the fixed-length overwrite buffer of a kernel frame
//! path: a put into a full buffer overwrites the oldest unread slot and
//! reports the evicted frame id.

use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

/// What a bounded FIFO does when a push would exceed `max_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowPolicy {
    /// Evict the oldest element to make room (keeps the freshest data).
    #[default]
    DropOldest,
    /// Refuse the incoming element.
    DropNewest,
}

/// Outcome of a push against a bounded FIFO.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Stored,
    /// Stored, but the oldest element was evicted to make room.
    DroppedOldest,
    /// The incoming element was refused.
    DroppedNewest,
}

struct FifoNode<T> {
    value: Option<T>,
    next: AtomicPtr<FifoNode<T>>,
}

impl<T> FifoNode<T> {
    fn new(value: Option<T>) -> *mut Self {
        Box::into_raw(Box::new(FifoNode {
            value,
            next: AtomicPtr::new(ptr::null_mut()),
        }))
    }
}

struct FifoShared<T> {
    /// Consumer end: the dummy node whose `next` is the oldest live element.
    /// Locked by the reader, and by the writer only on bounded overflow.
    tail: Mutex<*mut FifoNode<T>>,
    len: AtomicUsize,
    dropped_oldest: AtomicU64,
    dropped_newest: AtomicU64,
    max_len: Option<usize>,
    policy: OverflowPolicy,
}

unsafe impl<T: Send> Send for FifoShared<T> {}
unsafe impl<T: Send> Sync for FifoShared<T> {}

impl<T> Drop for FifoShared<T> {
    fn drop(&mut self) {
        let mut node = *self.tail.lock().unwrap();
        while !node.is_null() {
            let boxed = unsafe { Box::from_raw(node) };
            node = boxed.next.load(Ordering::Relaxed);
        }
    }
}

/// Create a stream FIFO, returning its single-writer and single-reader
/// handles. `max_len = None` gives the unbounded capture-path variant.
pub fn stream_fifo<T>(
    max_len: Option<usize>,
    policy: OverflowPolicy,
) -> (FifoWriter<T>, FifoReader<T>) {
    let dummy = FifoNode::new(None);
    let shared = Arc::new(FifoShared {
        tail: Mutex::new(dummy),
        len: AtomicUsize::new(0),
        dropped_oldest: AtomicU64::new(0),
        dropped_newest: AtomicU64::new(0),
        max_len,
        policy,
    });
    (
        FifoWriter {
            shared: shared.clone(),
            head: dummy,
        },
        FifoReader { shared },
    )
}

/// The producer half of a [`stream_fifo`]. Not clonable: exactly one writer.
pub struct FifoWriter<T> {
    shared: Arc<FifoShared<T>>,
    /// Producer-owned pointer to the newest node; only ever touched here.
    head: *mut FifoNode<T>,
}

unsafe impl<T: Send> Send for FifoWriter<T> {}

impl<T> FifoWriter<T> {
    /// Append at the head. O(1); allocates one node, never touches stored
    /// elements. On the unbounded variant this is lock-free.
    pub fn push_head(&mut self, value: T) -> PushOutcome {
        let mut outcome = PushOutcome::Stored;
        if let Some(max) = self.shared.max_len {
            if self.shared.len.load(Ordering::Acquire) >= max {
                match self.shared.policy {
                    OverflowPolicy::DropNewest => {
                        self.shared.dropped_newest.fetch_add(1, Ordering::Relaxed);
                        return PushOutcome::DroppedNewest;
                    }
                    OverflowPolicy::DropOldest => {
                        if pop_from(&self.shared).is_some() {
                            self.shared.dropped_oldest.fetch_add(1, Ordering::Relaxed);
                            outcome = PushOutcome::DroppedOldest;
                        }
                    }
                }
            }
        }
        let node = FifoNode::new(Some(value));
        // Count before linking: a node must never be poppable while len
        // still excludes it, or the reader's decrement could underflow.
        self.shared.len.fetch_add(1, Ordering::AcqRel);
        unsafe {
            (*self.head).next.store(node, Ordering::Release);
        }
        self.head = node;
        outcome
    }

    pub fn len(&self) -> usize {
        self.shared.len.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped_oldest(&self) -> u64 {
        self.shared.dropped_oldest.load(Ordering::Relaxed)
    }

    pub fn dropped_newest(&self) -> u64 {
        self.shared.dropped_newest.load(Ordering::Relaxed)
    }
}

/// The consumer half of a [`stream_fifo`]. Not clonable: exactly one reader.
pub struct FifoReader<T> {
    shared: Arc<FifoShared<T>>,
}

impl<T> FifoReader<T> {
    /// Remove and return the oldest element, or `None` when empty. O(1).
    pub fn pop_tail(&self) -> Option<T> {
        pop_from(&self.shared)
    }

    /// Remove up to `limit` oldest elements, in insertion order, as one
    /// batch under a single lock acquisition.
    pub fn drain_batch(&self, limit: usize) -> Vec<T> {
        assert!(limit >= 1, "drain_batch limit must be >= 1");
        let mut out = Vec::new();
        let mut tail = self.shared.tail.lock().unwrap();
        while out.len() < limit {
            let next = unsafe { (**tail).next.load(Ordering::Acquire) };
            if next.is_null() {
                break;
            }
            let value = unsafe { (*next).value.take().expect("live node holds a value") };
            let old = *tail;
            *tail = next;
            drop(unsafe { Box::from_raw(old) });
            self.shared.len.fetch_sub(1, Ordering::AcqRel);
            out.push(value);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.shared.len.load(Ordering::Acquire)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn pop_from<T>(shared: &FifoShared<T>) -> Option<T> {
    let mut tail = shared.tail.lock().unwrap();
    let next = unsafe { (**tail).next.load(Ordering::Acquire) };
    if next.is_null() {
        return None;
    }
    let value = unsafe { (*next).value.take().expect("live node holds a value") };
    let old = *tail;
    *tail = next;
    drop(unsafe { Box::from_raw(old) });
    shared.len.fetch_sub(1, Ordering::AcqRel);
    Some(value)
}

/// Fixed-capacity overwrite ring. Frames get sequential 1-based ids at put
/// time; putting into a full ring overwrites the oldest unread frame and
/// returns its id so the caller can account for the loss.
pub struct RingBuffer<T> {
    inner: Mutex<RingInner<T>>,
}

struct RingInner<T> {
    slots: Vec<Option<(u64, T)>>,
    read_pos: usize,
    write_pos: usize,
    occupied: usize,
    next_id: u64,
    evictions: u64,
    puts: u64,
}

impl<T> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        RingBuffer {
            inner: Mutex::new(RingInner {
                slots: (0..capacity).map(|_| None).collect(),
                read_pos: 0,
                write_pos: 0,
                occupied: 0,
                next_id: 1,
                evictions: 0,
                puts: 0,
            }),
        }
    }

    /// Store a frame; returns the id of the frame it overwrote, if any.
    pub fn ring_put(&self, frame: T) -> Option<u64> {
        let mut g = self.inner.lock().unwrap();
        let capacity = g.slots.len();
        let mut evicted = None;
        if g.occupied == capacity {
            let rp = g.read_pos;
            let (id, _) = g.slots[rp].take().expect("full slot");
            evicted = Some(id);
            g.read_pos = (rp + 1) % capacity;
            g.occupied -= 1;
            g.evictions += 1;
        }
        let id = g.next_id;
        g.next_id += 1;
        g.puts += 1;
        let wp = g.write_pos;
        g.slots[wp] = Some((id, frame));
        g.write_pos = (wp + 1) % capacity;
        g.occupied += 1;
        evicted
    }

    /// Take the oldest unread frame.
    pub fn ring_get(&self) -> Option<(u64, T)> {
        let mut g = self.inner.lock().unwrap();
        if g.occupied == 0 {
            return None;
        }
        let rp = g.read_pos;
        let item = g.slots[rp].take().expect("occupied slot");
        g.read_pos = (rp + 1) % g.slots.len();
        g.occupied -= 1;
        Some(item)
    }

    pub fn occupied(&self) -> usize {
        self.inner.lock().unwrap().occupied
    }

    pub fn evictions(&self) -> u64 {
        self.inner.lock().unwrap().evictions
    }

    pub fn puts(&self) -> u64 {
        self.inner.lock().unwrap().puts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use bytes::Bytes;

    #[test]
    fn fifo_pop_order_matches_push_order() {
        let (mut w, r) = stream_fifo(None, OverflowPolicy::DropOldest);
        for x in ["a", "b", "c"] {
            w.push_head(x);
        }
        assert_eq!(r.pop_tail(), Some("a"));
        assert_eq!(r.pop_tail(), Some("b"));
        assert_eq!(r.pop_tail(), Some("c"));
        assert_eq!(r.pop_tail(), None);
    }

    #[test]
    fn fifo_pop_on_empty_is_none() {
        let (_w, r) = stream_fifo::<u32>(None, OverflowPolicy::DropOldest);
        assert_eq!(r.pop_tail(), None);
    }

    #[test]
    fn bounded_drop_oldest_keeps_freshest() {
        let (mut w, r) = stream_fifo(Some(2), OverflowPolicy::DropOldest);
        assert_eq!(w.push_head("a"), PushOutcome::Stored);
        assert_eq!(w.push_head("b"), PushOutcome::Stored);
        assert_eq!(w.push_head("c"), PushOutcome::DroppedOldest);
        assert_eq!(r.pop_tail(), Some("b"));
        assert_eq!(r.pop_tail(), Some("c"));
        assert_eq!(r.pop_tail(), None);
        assert_eq!(w.dropped_oldest(), 1);
    }

    #[test]
    fn bounded_drop_newest_refuses_push() {
        let (mut w, r) = stream_fifo(Some(2), OverflowPolicy::DropNewest);
        w.push_head(1);
        w.push_head(2);
        assert_eq!(w.push_head(3), PushOutcome::DroppedNewest);
        assert_eq!(r.drain_batch(10), vec![1, 2]);
        assert_eq!(w.dropped_newest(), 1);
    }

    #[test]
    fn drain_batch_respects_limit_and_order() {
        let (mut w, r) = stream_fifo(None, OverflowPolicy::DropOldest);
        for i in 0..5 {
            w.push_head(i);
        }
        assert_eq!(r.drain_batch(3), vec![0, 1, 2]);
        assert_eq!(r.len(), 2);
        assert_eq!(r.drain_batch(10), vec![3, 4]);
        assert!(r.is_empty());
    }

    #[test]
    fn payload_bytes_are_not_copied_through_the_fifo() {
        let payload = Bytes::from(vec![7u8; 4096]);
        let before = payload.as_ptr();
        let (mut w, r) = stream_fifo(None, OverflowPolicy::DropOldest);
        w.push_head(payload);
        let back = r.pop_tail().unwrap();
        assert_eq!(back.as_ptr(), before);
    }

    #[test]
    fn concurrent_writer_reader_sees_exact_sequence() {
        let (mut w, r) = stream_fifo(None, OverflowPolicy::DropOldest);
        const N: u64 = 200_000;
        let writer = std::thread::spawn(move || {
            for i in 0..N {
                w.push_head(i);
            }
        });
        let mut seen = 0u64;
        let mut done_writer = false;
        loop {
            match r.pop_tail() {
                Some(v) => {
                    assert_eq!(v, seen, "gap or reorder at {seen}");
                    seen += 1;
                }
                None => {
                    if done_writer {
                        break;
                    }
                    if writer.is_finished() {
                        done_writer = true;
                    }
                    std::hint::spin_loop();
                }
            }
        }
        writer.join().unwrap();
        assert_eq!(seen, N);
    }

    #[test]
    fn ring_thirteenth_put_evicts_frame_one() {
        let ring = RingBuffer::new(12);
        for i in 0..12 {
            assert_eq!(ring.ring_put(i), None);
        }
        assert_eq!(ring.ring_put(12), Some(1));
        assert_eq!(ring.evictions(), 1);
    }

    #[test]
    fn ring_put_then_get_round_trips() {
        let ring = RingBuffer::new(4);
        assert_eq!(ring.ring_put("frame"), None);
        let (id, frame) = ring.ring_get().unwrap();
        assert_eq!((id, frame), (1, "frame"));
        assert_eq!(ring.ring_get(), None);
    }

    #[test]
    fn ring_keeping_up_never_evicts() {
        let ring = RingBuffer::new(3);
        for _ in 0..100 {
            assert_eq!(ring.ring_put(0u8), None);
            assert!(ring.ring_get().is_some());
        }
        assert_eq!(ring.evictions(), 0);
        // Distinct frames ever readable = puts - evictions.
        assert_eq!(ring.puts() - ring.evictions(), 100);
    }
}
