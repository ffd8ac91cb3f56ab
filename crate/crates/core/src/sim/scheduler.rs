use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("event scheduled at {at} but the clock is already at {now}")]
    PastEvent { at: SimTime, now: SimTime },
    #[error("run horizon {t_end} is before the clock {now}")]
    PastHorizon { t_end: SimTime, now: SimTime },
}

/// Identifies a scheduled event; doubles as its tie-break sequence number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventHandle(u64);

impl EventHandle {
    pub fn seq(self) -> u64 {
        self.0
    }
}

struct Entry<E> {
    // Event times are never negative, so the bit pattern of the f64 orders
    // like the value itself. Two u64s rather than a u128 keep the entry
    // 8-byte aligned.
    key: (u64, u64),
    payload: E,
}

impl<E> Entry<E> {
    fn new(at: SimTime, seq: u64, payload: E) -> Self {
        let bits = (at.as_secs() + 0.0).to_bits();
        Entry { key: (bits, seq), payload }
    }

    fn at(&self) -> SimTime {
        SimTime::from_secs(f64::from_bits(self.key.0))
    }

    fn seq(&self) -> u64 {
        self.key.1
    }
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// BinaryHeap is a max-heap; invert so the earliest (at, seq) pops first.
impl<E> Ord for Entry<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        other.key.cmp(&self.key)
    }
}

/// Time-ordered event queue with cancellation.
///
/// Events at equal times are dispatched in insertion order. Cancelled
/// events stay in the heap and are skipped when they reach the top.
pub struct Scheduler<E> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<E>>,
    // One bit per sequence number, set once the event is dispatched or cancelled.
    settled: Vec<u64>,
    live: usize,
    dispatched: u64,
}

impl<E> Default for Scheduler<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Scheduler<E> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            settled: Vec::new(),
            live: 0,
            dispatched: 0,
        }
    }

    fn is_settled(&self, seq: u64) -> bool {
        let word = (seq / 64) as usize;
        self.settled.get(word).is_none_or(|w| w & (1 << (seq % 64)) != 0)
    }

    // Marks `seq` settled; false when it already was or was never issued.
    fn settle(&mut self, seq: u64) -> bool {
        if seq >= self.next_seq || self.is_settled(seq) {
            return false;
        }
        self.settled[(seq / 64) as usize] |= 1 << (seq % 64);
        self.live -= 1;
        true
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    /// Number of events still waiting to fire (cancelled ones excluded).
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    /// Total events dispatched since construction.
    pub fn dispatched(&self) -> u64 {
        self.dispatched
    }

    pub fn schedule(&mut self, at: SimTime, payload: E) -> Result<EventHandle, SimError> {
        if at < self.now || at.as_secs().is_nan() {
            return Err(SimError::PastEvent { at, now: self.now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        if seq.is_multiple_of(64) {
            self.settled.push(0);
        }
        self.heap.push(Entry::new(at, seq, payload));
        self.live += 1;
        Ok(EventHandle(seq))
    }

    pub fn schedule_in(&mut self, delay: f64, payload: E) -> Result<EventHandle, SimError> {
        self.schedule(self.now + delay, payload)
    }

    /// Returns true only if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.settle(handle.0)
    }

    pub fn is_pending(&self, handle: EventHandle) -> bool {
        handle.0 < self.next_seq && !self.is_settled(handle.0)
    }

    /// Pops the next live event with `fire_at <= t_end`, advancing the clock to it.
    pub fn pop_next(&mut self, t_end: SimTime) -> Option<(SimTime, EventHandle, E)> {
        while let Some(top) = self.heap.peek() {
            if top.at() > t_end {
                return None;
            }
            let entry = self.heap.pop().expect("peeked");
            let (at, seq, payload) = (entry.at(), entry.seq(), entry.payload);
            if !self.settle(seq) {
                continue;
            }
            self.now = at;
            self.dispatched += 1;
            return Some((at, EventHandle(seq), payload));
        }
        None
    }

    /// Moves the clock forward to `t_end` without dispatching anything.
    pub fn advance_to(&mut self, t_end: SimTime) -> Result<(), SimError> {
        if t_end < self.now {
            return Err(SimError::PastHorizon { t_end, now: self.now });
        }
        self.now = t_end;
        Ok(())
    }

    /// Dispatches every event with `fire_at <= t_end` in (time, seq) order and
    /// leaves the clock at `t_end`. The handler may schedule further events.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> Result<u64, SimError>
    where
        F: FnMut(&mut Self, SimTime, E),
    {
        if t_end < self.now {
            return Err(SimError::PastHorizon { t_end, now: self.now });
        }
        let mut count = 0;
        while let Some((at, _, payload)) = self.pop_next(t_end) {
            handler(self, at, payload);
            count += 1;
        }
        self.now = t_end;
        Ok(count)
    }
}
