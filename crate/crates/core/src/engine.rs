//! Discrete-event kernel: a picosecond clock, a `(when, seq)`-ordered event
//! queue and a run loop.
//!
//! The engine is generic over the event payload. Components schedule plain
//! values (usually an enum) and the owner of the engine dispatches them,
//! either by popping events one at a time with [`Engine::pop_until`] or by
//! handing a [`Handler`] to [`Engine::run_until`].

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt;
use std::ops::{Add, AddAssign, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulation time in picoseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tick(pub u64);

pub const TICKS_PER_NS: u64 = 1000;

impl Tick {
    pub const ZERO: Tick = Tick(0);
    pub const MAX: Tick = Tick(u64::MAX);

    pub const fn from_ps(ps: u64) -> Self {
        Tick(ps)
    }

    pub const fn from_ns(ns: u64) -> Self {
        Tick(ns * TICKS_PER_NS)
    }

    pub const fn from_us(us: u64) -> Self {
        Tick(us * 1000 * TICKS_PER_NS)
    }

    /// Rounds to the nearest picosecond. Negative and non-finite inputs map
    /// to zero; callers validate sign before converting.
    pub fn from_ns_f64(ns: f64) -> Self {
        if !ns.is_finite() || ns <= 0.0 {
            return Tick(0);
        }
        Tick((ns * TICKS_PER_NS as f64).round() as u64)
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 / TICKS_PER_NS as f64
    }

    pub fn saturating_sub(self, rhs: Tick) -> Tick {
        Tick(self.0.saturating_sub(rhs.0))
    }

    pub fn half(self) -> Tick {
        Tick(self.0 / 2)
    }
}

impl Add for Tick {
    type Output = Tick;
    fn add(self, rhs: Tick) -> Tick {
        Tick(self.0 + rhs.0)
    }
}

impl AddAssign for Tick {
    fn add_assign(&mut self, rhs: Tick) {
        self.0 += rhs.0;
    }
}

impl Sub for Tick {
    type Output = Tick;
    fn sub(self, rhs: Tick) -> Tick {
        Tick(self.0 - rhs.0)
    }
}

impl Mul<u64> for Tick {
    type Output = Tick;
    fn mul(self, rhs: u64) -> Tick {
        Tick(self.0 * rhs)
    }
}

impl fmt::Display for Tick {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ps", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("engine halted at {0}; no further events may be scheduled")]
    Halted(Tick),
}

/// Identifies a scheduled event for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

/// Receives events popped by [`Engine::run_until`].
pub trait Handler<E> {
    fn handle(&mut self, engine: &mut Engine<E>, event: E);
}

impl<E, F> Handler<E> for F
where
    F: FnMut(&mut Engine<E>, E),
{
    fn handle(&mut self, engine: &mut Engine<E>, event: E) {
        self(engine, event)
    }
}

pub struct Engine<E> {
    now: Tick,
    next_seq: u64,
    queue: BinaryHeap<Reverse<(Tick, u64)>>,
    // Payloads live outside the heap so cancellation is a map removal; heap
    // entries whose payload is gone are skipped when popped.
    pending: HashMap<u64, E>,
    halted: bool,
    fired: u64,
}

impl<E> Default for Engine<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> Engine<E> {
    pub fn new() -> Self {
        Engine {
            now: Tick::ZERO,
            next_seq: 0,
            queue: BinaryHeap::new(),
            pending: HashMap::new(),
            halted: false,
            fired: 0,
        }
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    /// Number of events executed so far.
    pub fn fired(&self) -> u64 {
        self.fired
    }

    /// Number of live (not cancelled, not yet fired) events.
    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn is_halted(&self) -> bool {
        self.halted
    }

    /// Stops the engine; later `schedule` calls are rejected.
    pub fn halt(&mut self) {
        self.halted = true;
    }

    pub fn schedule(&mut self, delay: Tick, event: E) -> Result<EventHandle, EngineError> {
        self.schedule_at(self.now + delay, event)
    }

    /// Schedules at an absolute time, clamped to `now`.
    pub fn schedule_at(&mut self, when: Tick, event: E) -> Result<EventHandle, EngineError> {
        if self.halted {
            return Err(EngineError::Halted(self.now));
        }
        let when = when.max(self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse((when, seq)));
        self.pending.insert(seq, event);
        Ok(EventHandle(seq))
    }

    /// Returns true if the event was removed before firing.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        self.pending.remove(&handle.0).is_some()
    }

    /// Pops the next live event with `when <= limit`, advancing the clock to
    /// it. When none is left the clock advances to `limit`.
    pub fn pop_until(&mut self, limit: Tick) -> Option<(Tick, E)> {
        while let Some(&Reverse((when, seq))) = self.queue.peek() {
            if when > limit {
                break;
            }
            self.queue.pop();
            if let Some(event) = self.pending.remove(&seq) {
                debug_assert!(when >= self.now);
                self.now = when;
                self.fired += 1;
                return Some((when, event));
            }
        }
        if limit > self.now && limit != Tick::MAX {
            self.now = limit;
        }
        None
    }

    /// Time of the next live event, if any.
    pub fn peek_time(&mut self) -> Option<Tick> {
        while let Some(&Reverse((when, seq))) = self.queue.peek() {
            if self.pending.contains_key(&seq) {
                return Some(when);
            }
            self.queue.pop();
        }
        None
    }

    pub fn run_until<H: Handler<E>>(&mut self, limit: Tick, handler: &mut H) -> Tick {
        while let Some((_, event)) = self.pop_until(limit) {
            handler.handle(self, event);
        }
        self.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Log = Vec<(Tick, &'static str)>;

    #[test]
    fn same_tick_events_run_in_insertion_order() {
        let mut engine: Engine<&'static str> = Engine::new();
        engine.schedule(Tick(0), "a").unwrap();
        engine.schedule(Tick(0), "b").unwrap();
        let mut log: Log = Vec::new();
        engine.run_until(Tick(10), &mut |e: &mut Engine<&'static str>, ev| log.push((e.now(), ev)));
        assert_eq!(log, vec![(Tick(0), "a"), (Tick(0), "b")]);
    }

    #[test]
    fn delay_is_relative_to_now() {
        let mut engine: Engine<u32> = Engine::new();
        engine.run_until(Tick(100), &mut |_: &mut Engine<u32>, _| {});
        assert_eq!(engine.now(), Tick(100));
        engine.schedule(Tick(50), 1).unwrap();
        let mut at = None;
        engine.run_until(Tick(1000), &mut |e: &mut Engine<u32>, _| at = Some(e.now()));
        assert_eq!(at, Some(Tick(150)));
    }

    #[test]
    fn empty_queue_advances_to_limit() {
        let mut engine: Engine<()> = Engine::new();
        let end = engine.run_until(Tick(1_000_000_000), &mut |_: &mut Engine<()>, _| {});
        assert_eq!(end, Tick(1_000_000_000));
        assert_eq!(engine.fired(), 0);
    }

    #[test]
    fn events_past_limit_stay_queued() {
        let mut engine: Engine<()> = Engine::new();
        engine.schedule(Tick(500), ()).unwrap();
        let end = engine.run_until(Tick(400), &mut |_: &mut Engine<()>, _| {});
        assert_eq!(end, Tick(400));
        assert_eq!(engine.fired(), 0);
        assert_eq!(engine.pending(), 1);
    }

    #[test]
    fn periodic_chain_fires_floor_limit_over_period_plus_one() {
        for (period, limit) in [(7u64, 100u64), (10, 100), (1, 0), (3, 2), (250, 10_000)] {
            let mut engine: Engine<()> = Engine::new();
            engine.schedule(Tick(0), ()).unwrap();
            let mut count = 0u64;
            engine.run_until(Tick(limit), &mut |e: &mut Engine<()>, _| {
                count += 1;
                e.schedule(Tick(period), ()).unwrap();
            });
            assert_eq!(count, limit / period + 1, "period {period} limit {limit}");
        }
    }

    #[test]
    fn cancel_semantics() {
        let mut engine: Engine<&'static str> = Engine::new();
        let h = engine.schedule(Tick(10), "x").unwrap();
        assert!(engine.cancel(h));
        assert!(!engine.cancel(h));
        let mut log = Vec::new();
        engine.run_until(Tick(20), &mut |_: &mut Engine<&'static str>, ev| log.push(ev));
        assert!(log.is_empty());

        let h = engine.schedule(Tick(1), "y").unwrap();
        engine.run_until(Tick(30), &mut |_: &mut Engine<&'static str>, _| {});
        assert!(!engine.cancel(h), "already fired");
    }

    #[test]
    fn cancel_then_reschedule_fires_once() {
        let mut engine: Engine<&'static str> = Engine::new();
        let h = engine.schedule(Tick(5), "act").unwrap();
        engine.cancel(h);
        engine.schedule(Tick(8), "act").unwrap();
        let mut log: Log = Vec::new();
        engine.run_until(Tick(100), &mut |e: &mut Engine<&'static str>, ev| log.push((e.now(), ev)));
        assert_eq!(log, vec![(Tick(8), "act")]);
    }

    #[test]
    fn halted_engine_rejects_schedule() {
        let mut engine: Engine<()> = Engine::new();
        engine.halt();
        assert_eq!(engine.schedule(Tick(1), ()), Err(EngineError::Halted(Tick(0))));
    }

    #[test]
    fn tick_conversions() {
        assert_eq!(Tick::from_ns(1), Tick(1000));
        assert_eq!(Tick::from_ns_f64(0.3), Tick(300));
        assert_eq!(Tick::from_ns_f64(68.5), Tick(68_500));
        assert_eq!(Tick(61_500).as_ns(), 61.5);
    }
}
