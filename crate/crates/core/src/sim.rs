//! Deterministic discrete-event engine.
//!
//! Virtual time is kept in integer microseconds. Events with equal
//! timestamps are delivered in insertion order, and cancellation is lazy:
//! a cancelled entry stays in the heap and is skipped when popped.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::io::{self, Write};
use std::ops::{Add, AddAssign, Sub};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub type NodeId = usize;

/// Virtual time (or a span of it) in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Rounds to the nearest microsecond. Negative and NaN inputs clamp to zero.
    pub fn from_secs_f64(s: f64) -> Self {
        if !(s > 0.0) {
            return SimTime::ZERO;
        }
        SimTime((s * 1e6).round() as u64)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        Self::from_secs_f64(ms / 1e3)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn saturating_sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(rhs.0))
    }

    pub fn times(self, k: u64) -> SimTime {
        SimTime(self.0 * k)
    }
}

impl Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl AddAssign for SimTime {
    fn add_assign(&mut self, rhs: SimTime) {
        self.0 += rhs.0;
    }
}

impl Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 - rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    FrameStart,
    FrameEnd,
    Wakeup,
    TimerFire,
    SlotBoundary,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::FrameStart => "frame-start",
            EventKind::FrameEnd => "frame-end",
            EventKind::Wakeup => "wakeup",
            EventKind::TimerFire => "timer-fire",
            EventKind::SlotBoundary => "slot-boundary",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event<P> {
    pub time: SimTime,
    pub node: NodeId,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> Event<P> {
    pub fn new(time: SimTime, node: NodeId, kind: EventKind, payload: P) -> Self {
        Event { time, node, kind, payload }
    }
}

/// Returned by [`Scheduler::schedule`]; pass to [`Scheduler::cancel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

struct Entry<P> {
    seq: u64,
    event: Event<P>,
}

impl<P> PartialEq for Entry<P> {
    fn eq(&self, other: &Self) -> bool {
        self.seq == other.seq
    }
}

impl<P> Eq for Entry<P> {}

impl<P> PartialOrd for Entry<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Entry<P> {
    // BinaryHeap is a max-heap; invert so the earliest (time, seq) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.event.time, other.seq).cmp(&(self.event.time, self.seq))
    }
}

/// One delivered event as it appears in a trace dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub time_us: u64,
    pub node: NodeId,
    pub kind: EventKind,
    pub detail: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.time_us, self.node, self.kind, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventTrace {
    pub records: Vec<TraceRecord>,
}

impl EventTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Tab-separated dump, one line per delivered event.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            writeln!(out, "{r}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("trace is utf-8")
    }
}

/// Predicate over delivered events.
pub type StopWhen<'a, P> = Box<dyn FnMut(&Event<P>) -> bool + 'a>;

/// When [`Scheduler::run_until`] should stop.
pub enum Stop<'a, P> {
    /// Deliver every event with `time <= horizon`.
    Horizon(SimTime),
    /// Stop right after delivering an event for which the predicate holds.
    When(StopWhen<'a, P>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOutcome {
    pub delivered: u64,
    /// The queue drained before the stop condition was met.
    pub starved: bool,
}

pub struct Scheduler<P> {
    now: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Entry<P>>,
    cancelled: HashSet<u64>,
    trace: Option<EventTrace>,
}

impl<P> Default for Scheduler<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> Scheduler<P> {
    pub fn new() -> Self {
        Scheduler {
            now: SimTime::ZERO,
            next_seq: 0,
            heap: BinaryHeap::new(),
            cancelled: HashSet::new(),
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(EventTrace::default());
        self
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.heap.len() - self.cancelled.len()
    }

    pub fn schedule(&mut self, event: Event<P>) -> Result<EventHandle, SimError> {
        if event.time < self.now {
            return Err(SimError::ScheduledInPast {
                at_us: event.time.as_micros(),
                now_us: self.now.as_micros(),
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry { seq, event });
        Ok(EventHandle(seq))
    }

    /// Returns true if the event was still pending.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        if handle.0 >= self.next_seq {
            return false;
        }
        let live = self.heap.iter().any(|e| e.seq == handle.0);
        live && self.cancelled.insert(handle.0)
    }

    /// Time of the next live event without removing it.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(top) = self.heap.peek() {
            if self.cancelled.remove(&top.seq) {
                self.heap.pop();
                continue;
            }
            return Some(top.event.time);
        }
        None
    }

    /// Pops the next live event and advances the clock to it.
    pub fn pop(&mut self) -> Option<Event<P>> {
        self.peek_time()?;
        let entry = self.heap.pop()?;
        self.now = entry.event.time;
        Some(entry.event)
    }

    pub fn take_trace(&mut self) -> Option<EventTrace> {
        self.trace.take()
    }

    pub fn trace(&self) -> Option<&EventTrace> {
        self.trace.as_ref()
    }
}

impl<P: fmt::Display> Scheduler<P> {
    pub fn record(&mut self, event: &Event<P>) {
        if let Some(trace) = self.trace.as_mut() {
            trace.records.push(TraceRecord {
                time_us: event.time.as_micros(),
                node: event.node,
                kind: event.kind,
                detail: event.payload.to_string(),
            });
        }
    }

    /// Drives the queue, handing each delivered event to `handler`, which may
    /// schedule or cancel further events.
    pub fn run_until<F>(&mut self, mut stop: Stop<'_, P>, mut handler: F) -> RunOutcome
    where
        F: FnMut(&mut Scheduler<P>, &Event<P>),
    {
        let mut delivered = 0;
        loop {
            let Some(t) = self.peek_time() else {
                return RunOutcome { delivered, starved: true };
            };
            if let Stop::Horizon(h) = stop {
                if t > h {
                    return RunOutcome { delivered, starved: false };
                }
            }
            let ev = self.pop().expect("peeked a live event");
            self.record(&ev);
            delivered += 1;
            handler(self, &ev);
            if let Stop::When(pred) = &mut stop {
                if pred(&ev) {
                    return RunOutcome { delivered, starved: false };
                }
            }
        }
    }
}

/// What an RNG stream is used for. Each (node, purpose) pair gets its own
/// independent sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Loss,
    Backoff,
    Phase,
    Schedule,
    Start,
    Arrivals,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Loss => 1,
            Purpose::Backoff => 2,
            Purpose::Phase => 3,
            Purpose::Schedule => 4,
            Purpose::Start => 5,
            Purpose::Arrivals => 6,
        }
    }
}

/// SplitMix64 finalizer, used to derive independent seeds.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for replication `index` under `master`. Depends only on the pair, so
/// growing the replication count leaves earlier replications untouched.
pub fn replication_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

pub struct RngStream {
    node: NodeId,
    purpose: Purpose,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(master_seed: u64, node: NodeId, purpose: Purpose) -> Self {
        let seed = mix64(mix64(master_seed ^ mix64(node as u64)) ^ purpose.tag());
        RngStream {
            node,
            purpose,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn id(&self) -> (NodeId, Purpose) {
        (self.node, self.purpose)
    }

    /// Uniform in [0, 1).
    pub fn draw_uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p >= 1.0 {
            return true;
        }
        self.draw_uniform() < p
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.random_range(0..n)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

/// Lazily created per-(node, purpose) streams for one simulation instance.
pub struct Streams {
    master: u64,
    streams: Vec<RngStream>,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Streams { master, streams: Vec::new() }
    }

    pub fn get(&mut self, node: NodeId, purpose: Purpose) -> &mut RngStream {
        let idx = match self.streams.iter().position(|s| s.id() == (node, purpose)) {
            Some(i) => i,
            None => {
                self.streams.push(RngStream::new(self.master, node, purpose));
                self.streams.len() - 1
            }
        };
        &mut self.streams[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, tag: &'static str) -> Event<&'static str> {
        Event::new(SimTime::from_micros(t), 0, EventKind::Wakeup, tag)
    }

    #[test]
    fn event_at_zero_fires() {
        let mut s = Scheduler::new().with_trace();
        s.schedule(ev(0, "w")).unwrap();
        let out = s.run_until(Stop::Horizon(SimTime::from_secs_f64(1.0)), |_, _| {});
        assert_eq!(out.delivered, 1);
        assert_eq!(s.trace().unwrap().records[0].time_us, 0);
    }

    #[test]
    fn equal_times_fire_in_insertion_order() {
        let mut s = Scheduler::new();
        s.schedule(ev(1_000_000, "A")).unwrap();
        s.schedule(ev(1_000_000, "B")).unwrap();
        assert_eq!(s.pop().unwrap().payload, "A");
        assert_eq!(s.pop().unwrap().payload, "B");
    }

    #[test]
    fn cancelled_event_is_never_delivered() {
        let mut s = Scheduler::new();
        let h = s.schedule(ev(5, "gone")).unwrap();
        s.schedule(ev(6, "kept")).unwrap();
        assert!(s.cancel(h));
        assert!(!s.cancel(h));
        let mut seen = Vec::new();
        s.run_until(Stop::Horizon(SimTime::MAX), |_, e| seen.push(e.payload));
        assert_eq!(seen, vec!["kept"]);
    }

    #[test]
    fn scheduling_in_the_past_is_an_error() {
        let mut s = Scheduler::new();
        s.schedule(ev(10, "a")).unwrap();
        s.pop();
        assert!(matches!(s.schedule(ev(9, "late")), Err(SimError::ScheduledInPast { .. })));
    }

    #[test]
    fn horizon_zero_leaves_clock_at_zero() {
        let mut s = Scheduler::new().with_trace();
        s.schedule(ev(1_000_000, "x")).unwrap();
        let out = s.run_until(Stop::Horizon(SimTime::ZERO), |_, _| {});
        assert_eq!(out.delivered, 0);
        assert!(!out.starved);
        assert!(s.trace().unwrap().is_empty());
        assert_eq!(s.now(), SimTime::ZERO);
    }

    #[test]
    fn empty_queue_reports_starved() {
        let mut s: Scheduler<&str> = Scheduler::new();
        let out = s.run_until(Stop::When(Box::new(|_| false)), |_, _| {});
        assert!(out.starved);
    }

    #[test]
    fn predicate_stops_after_matching_event() {
        let mut s = Scheduler::new();
        for (t, tag) in [(1, "a"), (2, "done"), (3, "c")] {
            s.schedule(ev(t, tag)).unwrap();
        }
        let out = s.run_until(Stop::When(Box::new(|e| e.payload == "done")), |_, _| {});
        assert_eq!(out.delivered, 2);
        assert_eq!(s.pending(), 1);
    }

    #[test]
    fn handler_can_schedule_follow_ups() {
        let mut s = Scheduler::new().with_trace();
        s.schedule(ev(0, "tick")).unwrap();
        s.run_until(Stop::Horizon(SimTime::from_micros(40)), |q, e| {
            q.schedule(Event::new(e.time + SimTime::from_micros(10), 0, EventKind::Wakeup, "tick"))
                .unwrap();
        });
        let times: Vec<u64> = s.trace().unwrap().records.iter().map(|r| r.time_us).collect();
        assert_eq!(times, vec![0, 10, 20, 30, 40]);
    }

    #[test]
    fn trace_line_format() {
        let r = TraceRecord {
            time_us: 15,
            node: 2,
            kind: EventKind::FrameEnd,
            detail: "f3.1".into(),
        };
        assert_eq!(r.to_string(), "15\t2\tframe-end\tf3.1");
    }

    #[test]
    fn golden_first_draw() {
        // Captured once from ChaCha12 seeded through `mix64`; guards against
        // silent changes to seeding or the generator.
        let mut s = RngStream::new(42, 0, Purpose::Loss);
        let first = s.draw_uniform();
        assert_eq!(first.to_bits(), GOLDEN_FIRST_DRAW_BITS, "first draw = {first}");
    }

    const GOLDEN_FIRST_DRAW_BITS: u64 = 4593266347170931944;

    #[test]
    fn streams_are_independent() {
        let mut a = RngStream::new(7, 1, Purpose::Loss);
        let solo: Vec<f64> = (0..10).map(|_| a.draw_uniform()).collect();

        let mut streams = Streams::new(7);
        let mut mixed = Vec::new();
        for _ in 0..10 {
            mixed.push(streams.get(1, Purpose::Loss).draw_uniform());
            streams.get(2, Purpose::Loss).draw_uniform();
            streams.get(1, Purpose::Backoff).draw_uniform();
        }
        assert_eq!(solo, mixed);
    }

    #[test]
    fn uniform_mean_smoke() {
        let mut s = RngStream::new(2024, 3, Purpose::Phase);
        let n = 100_000;
        let mean = (0..n).map(|_| s.draw_uniform()).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn replication_seeds_are_stable_and_distinct() {
        assert_eq!(replication_seed(1, 5), replication_seed(1, 5));
        assert_ne!(replication_seed(1, 5), replication_seed(1, 6));
        assert_ne!(replication_seed(1, 5), replication_seed(2, 5));
    }
}
