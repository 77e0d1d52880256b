use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::{RngStreams, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("event at {ts} is in the past (clock is {clock})")]
    PastEvent { ts: Timestamp, clock: Timestamp },
}

/// A scheduled event. `seq` is assigned by the kernel in schedule order and
/// breaks ties between events at the same timestamp.
#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub ts: Timestamp,
    pub seq: u64,
    pub target: String,
    pub kind: String,
    pub payload: P,
}

struct Queued<P>(SimEvent<P>);

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        (self.0.ts, self.0.seq) == (other.0.ts, other.0.seq)
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; invert so the smallest (ts, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.0.ts, other.0.seq).cmp(&(self.0.ts, self.0.seq))
    }
}

pub struct Kernel<P> {
    clock: Timestamp,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    rng: RngStreams,
}

impl<P> Kernel<P> {
    pub fn new(seed: u64) -> Self {
        Kernel {
            clock: Timestamp::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            rng: RngStreams::new(seed),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.clock
    }

    pub fn seed(&self) -> u64 {
        self.rng.seed()
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Enqueues an event and returns the sequence number it was given.
    pub fn schedule(
        &mut self,
        ts: Timestamp,
        target: impl Into<String>,
        kind: impl Into<String>,
        payload: P,
    ) -> Result<u64, SimError> {
        if ts < self.clock {
            return Err(SimError::PastEvent {
                ts,
                clock: self.clock,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued(SimEvent {
            ts,
            seq,
            target: target.into(),
            kind: kind.into(),
            payload,
        }));
        Ok(seq)
    }

    /// Schedules `delay_ms` after the current clock. Never fails.
    pub fn schedule_in(
        &mut self,
        delay_ms: u64,
        target: impl Into<String>,
        kind: impl Into<String>,
        payload: P,
    ) -> u64 {
        let ts = self.clock + delay_ms;
        self.schedule(ts, target, kind, payload)
            .expect("relative schedule is never in the past")
    }

    /// Pops the next event with `ts <= t_end` and advances the clock to it.
    pub fn pop_due(&mut self, t_end: Timestamp) -> Option<SimEvent<P>> {
        match self.queue.peek() {
            Some(q) if q.0.ts <= t_end => {}
            _ => return None,
        }
        let ev = self.queue.pop()?.0;
        self.clock = ev.ts;
        Some(ev)
    }

    /// Moves the clock forward to `t` if it is behind.
    pub fn advance_to(&mut self, t: Timestamp) {
        if t > self.clock {
            self.clock = t;
        }
    }

    /// Dispatches every event with `ts <= t_end` in `(ts, seq)` order, then
    /// sets the clock to `t_end`. The handler may schedule further events;
    /// those are dispatched in the same call if they fall inside the bound.
    pub fn run_until<F>(&mut self, t_end: Timestamp, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        let mut count = 0;
        while let Some(ev) = self.pop_due(t_end) {
            handler(self, ev);
            count += 1;
        }
        self.advance_to(t_end);
        count
    }

    pub fn rng_next(&mut self, stream: &str) -> u64 {
        self.rng.next(stream)
    }
}
