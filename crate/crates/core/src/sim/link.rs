use std::collections::VecDeque;

use crate::time::Nanos;

/// Latency target the default queue limit is calibrated to.
pub const DEFAULT_PLATEAU: Nanos = 98_000;

/// Serialization time of `size` bytes at `capacity` bit/s, rounded up.
pub fn serialization(size: u32, capacity: u64) -> Nanos {
    (size as u128 * 8_000_000_000).div_ceil(capacity as u128) as Nanos
}

/// Queue limit in bytes that makes a saturated link's latency plateau
/// `plateau` ns, counting one serialization for the frame itself.
pub fn calibrated_queue_limit(capacity: u64, plateau: Nanos, frame_size: u32) -> u64 {
    let bytes = capacity as u128 * plateau as u128 / 8_000_000_000;
    (bytes as u64).saturating_sub(frame_size as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedFrame {
    /// Source departure time.
    pub sent: Nanos,
    pub source: usize,
    pub size: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Enqueue {
    /// The link was idle; the frame departs at the given time.
    Started(Nanos),
    Queued,
    /// Tail drop: the queue limit would be exceeded.
    Dropped,
}

/// Rate-limited FIFO with a byte-bounded queue. The frame in service does
/// not count against the limit.
#[derive(Debug, Clone)]
pub struct EgressLink {
    pub capacity: u64,
    pub queue_limit: u64,
    queue: VecDeque<QueuedFrame>,
    queued_bytes: u64,
    in_service: Option<QueuedFrame>,
}

impl EgressLink {
    pub fn new(capacity: u64, queue_limit: u64) -> Self {
        assert!(capacity > 0, "link capacity must be positive");
        EgressLink { capacity, queue_limit, queue: VecDeque::new(), queued_bytes: 0, in_service: None }
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_busy(&self) -> bool {
        self.in_service.is_some()
    }

    pub fn enqueue(&mut self, f: QueuedFrame, now: Nanos) -> Enqueue {
        if self.in_service.is_none() {
            self.in_service = Some(f);
            return Enqueue::Started(now + serialization(f.size, self.capacity));
        }
        if self.queued_bytes + f.size as u64 > self.queue_limit {
            return Enqueue::Dropped;
        }
        self.queued_bytes += f.size as u64;
        self.queue.push_back(f);
        Enqueue::Queued
    }

    /// Completes the frame in service and starts the next one, returning
    /// the finished frame and the next departure time.
    pub fn depart(&mut self, now: Nanos) -> (QueuedFrame, Option<Nanos>) {
        let done = self.in_service.take().expect("departure from an idle link");
        let next = self.queue.pop_front().map(|f| {
            self.queued_bytes -= f.size as u64;
            self.in_service = Some(f);
            now + serialization(f.size, self.capacity)
        });
        (done, next)
    }
}
