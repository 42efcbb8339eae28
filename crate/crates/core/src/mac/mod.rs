//! Shared handshake driver for the link layers.
//!
//! Nodes form a chain `0..=hops`: the DTLS client is node 0, the server is
//! node `hops`, and everything in between forwards. A link layer implements
//! [`Mac`]; the driver owns the event queue, the two endpoint state machines,
//! per-node queues and energy accounting.

pub mod beacon;
pub mod tsch;
pub mod xmac;

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::dtls::{Direction, FlightPlan, FrameRef, HandshakeState, RetransmitPolicy, Role, TimeoutOutcome};
use crate::energy::{EnergyLedger, RadioTimeline};
use crate::error::ModelError;
use crate::sim::{Event, EventHandle, EventKind, EventTrace, NodeId, Purpose, RngStream, Scheduler, SimTime, Streams};

/// Give up on a run that has not finished this long after it started.
const RUN_LIMIT: SimTime = SimTime::from_millis(20_000_000);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Frame {
    pub id: u64,
    pub msg: FrameRef,
    pub dir: Direction,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{} {} f{}.{}", self.id, self.dir.as_str(), self.msg.flight, self.msg.index)
    }
}

pub fn dir_index(dir: Direction) -> usize {
    match dir {
        Direction::ClientToServer => 0,
        Direction::ServerToClient => 1,
    }
}

#[derive(Debug, Clone)]
pub enum Payload<M> {
    /// The client hands its first flight to the link layer.
    Start,
    Timer(Role),
    /// Response frames leave the endpoint after the processing delay.
    Emit(Role, Vec<FrameRef>),
    Mac(M),
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Client => "client",
        Role::Server => "server",
    }
}

impl<M: fmt::Display> fmt::Display for Payload<M> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payload::Start => f.write_str("handshake-start"),
            Payload::Timer(r) => write!(f, "dtls-timer {}", role_name(*r)),
            Payload::Emit(r, frames) => {
                write!(f, "emit {}", role_name(*r))?;
                for m in frames {
                    write!(f, " f{}.{}", m.flight, m.index)?;
                }
                Ok(())
            }
            Payload::Mac(m) => m.fmt(f),
        }
    }
}

/// What a run measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// Full handshake; ends when the client has processed the final flight.
    Handshake,
    /// Ends at the first delivery of any frame at the server. Used with a
    /// one-frame plan to measure single-frame latency.
    FirstDelivery,
}

#[derive(Debug, Clone)]
pub struct DriverConfig {
    pub hops: usize,
    /// Per-link delivery ratio; link `i` joins nodes `i` and `i + 1`.
    pub pdr: Vec<f64>,
    pub plan: Arc<FlightPlan>,
    pub policy: RetransmitPolicy,
    /// CPU time per received DTLS message; also delays the response.
    pub processing: SimTime,
    pub workload: Workload,
    pub trace: bool,
}

impl DriverConfig {
    pub fn new(hops: usize, pdr: f64) -> Self {
        DriverConfig {
            hops,
            pdr: vec![pdr; hops],
            plan: Arc::new(FlightPlan::default_psk()),
            policy: RetransmitPolicy::default(),
            processing: SimTime::from_millis(10),
            workload: Workload::Handshake,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.hops == 0 {
            return Err(ModelError::NoHops);
        }
        if self.pdr.len() != self.hops {
            return Err(ModelError::param("pdr", format!("{} values for {} hops", self.pdr.len(), self.hops)));
        }
        for &p in &self.pdr {
            if !(p > 0.0 && p <= 1.0) {
                return Err(ModelError::Pdr(p));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters {
    /// Link-layer data transmissions, including relays and retries.
    pub frames_transmitted: u64,
    /// Flights resent on DTLS timer expiry.
    pub dtls_retransmissions: u64,
    /// Flights resent because the peer repeated its previous flight.
    pub duplicate_resends: u64,
    /// Frames abandoned by the link layer.
    pub mac_drops: u64,
    pub anomalies: u64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub completed: bool,
    pub start: SimTime,
    pub end: SimTime,
    pub counters: Counters,
    pub ledger: EnergyLedger,
    pub trace: Option<EventTrace>,
}

impl RunResult {
    /// Seconds from start to completion, or `None` for a failed run.
    pub fn duration(&self) -> Option<f64> {
        self.completed.then(|| (self.end - self.start).as_secs_f64())
    }
}

pub trait Mac {
    type Ev: fmt::Display;

    /// Instant at which the first frame is handed to the link layer.
    fn start_time(&mut self, net: &mut Net<Self::Ev>) -> SimTime;
    /// Schedules periodic activity (wakeups, beacons). Called before start.
    fn init(&mut self, net: &mut Net<Self::Ev>);
    /// `node` may have a frame to send.
    fn kick(&mut self, net: &mut Net<Self::Ev>, node: NodeId);
    fn on_event(&mut self, net: &mut Net<Self::Ev>, node: NodeId, ev: Self::Ev);
    /// Last chance to adjust the ledger, which already covers the window.
    fn settle(&mut self, _ledger: &mut EnergyLedger, _window: SimTime) {}
}

pub struct Net<M> {
    sched: Scheduler<Payload<M>>,
    pub hops: usize,
    pdr: Vec<f64>,
    streams: Streams,
    pub radio: RadioTimeline,
    queues: Vec<[VecDeque<(u64, Frame)>; 2]>,
    endpoints: [HandshakeState; 2],
    timers: [Option<(EventHandle, SimTime)>; 2],
    kicks: Vec<NodeId>,
    processing: SimTime,
    workload: Workload,
    pub counters: Counters,
    start: SimTime,
    finished: Option<(bool, SimTime)>,
    next_id: u64,
}

impl<M: fmt::Display> Net<M> {
    pub fn new(cfg: &DriverConfig, seed: u64) -> Self {
        let sched = if cfg.trace { Scheduler::new().with_trace() } else { Scheduler::new() };
        let n = cfg.hops + 1;
        Net {
            sched,
            hops: cfg.hops,
            pdr: cfg.pdr.clone(),
            streams: Streams::new(seed),
            radio: RadioTimeline::new(n),
            queues: (0..n).map(|_| [VecDeque::new(), VecDeque::new()]).collect(),
            endpoints: [
                HandshakeState::client(cfg.plan.clone(), cfg.policy),
                HandshakeState::server(cfg.plan.clone(), cfg.policy),
            ],
            timers: [None, None],
            kicks: Vec::new(),
            processing: cfg.processing,
            workload: cfg.workload,
            counters: Counters::default(),
            start: SimTime::ZERO,
            finished: None,
            next_id: 0,
        }
    }

    pub fn nodes(&self) -> usize {
        self.hops + 1
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    pub fn rng(&mut self, node: NodeId, purpose: Purpose) -> &mut RngStream {
        self.streams.get(node, purpose)
    }

    /// Schedules a MAC event. Link layers only ever look forward in time.
    pub fn at(&mut self, time: SimTime, node: NodeId, kind: EventKind, ev: M) -> EventHandle {
        self.sched
            .schedule(Event::new(time, node, kind, Payload::Mac(ev)))
            .expect("link layer scheduled an event in the past")
    }

    pub fn cancel(&mut self, h: EventHandle) -> bool {
        self.sched.cancel(h)
    }

    pub fn next_hop(&self, node: NodeId, dir: Direction) -> NodeId {
        match dir {
            Direction::ClientToServer => node + 1,
            Direction::ServerToClient => node - 1,
        }
    }

    pub fn pdr(&self, a: NodeId, b: NodeId) -> f64 {
        self.pdr[a.min(b)]
    }

    pub fn neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> {
        let last = self.hops;
        [node.checked_sub(1), (node < last).then_some(node + 1)].into_iter().flatten()
    }

    /// Loss draw for a reception at `rx` from `tx`.
    pub fn survives(&mut self, tx: NodeId, rx: NodeId) -> bool {
        let p = self.pdr(tx, rx);
        self.streams.get(rx, Purpose::Loss).bernoulli(p)
    }

    /// Oldest queued frame at `node` across both directions.
    pub fn head(&self, node: NodeId) -> Option<Frame> {
        let [a, b] = &self.queues[node];
        match (a.front(), b.front()) {
            (Some(x), Some(y)) => Some(if x.0 <= y.0 { x.1 } else { y.1 }),
            (Some(x), None) | (None, Some(x)) => Some(x.1),
            (None, None) => None,
        }
    }

    pub fn head_dir(&self, node: NodeId, dir: Direction) -> Option<Frame> {
        self.queues[node][dir_index(dir)].front().map(|e| e.1)
    }

    /// Removes `frame` from the front of its queue.
    pub fn pop(&mut self, node: NodeId, frame: Frame) {
        let q = &mut self.queues[node][dir_index(frame.dir)];
        debug_assert_eq!(q.front().map(|e| e.1.id), Some(frame.id));
        q.pop_front();
    }

    pub fn queued(&self, node: NodeId) -> usize {
        self.queues[node][0].len() + self.queues[node][1].len()
    }

    fn enqueue(&mut self, node: NodeId, frame: Frame) {
        let seq = self.next_id;
        self.next_id += 1;
        self.queues[node][dir_index(frame.dir)].push_back((seq, frame));
        self.kicks.push(node);
    }

    fn emit(&mut self, role: Role, msgs: &[FrameRef]) {
        let node = self.endpoint_node(role);
        let dir = match role {
            Role::Client => Direction::ClientToServer,
            Role::Server => Direction::ServerToClient,
        };
        for &msg in msgs {
            // A copy still waiting in the local queue already covers a
            // retransmission of the same message.
            if self.queues[node][dir_index(dir)].iter().any(|(_, f)| f.msg == msg) {
                continue;
            }
            let id = self.next_id;
            self.enqueue(node, Frame { id, msg, dir });
        }
    }

    fn endpoint_node(&self, role: Role) -> NodeId {
        match role {
            Role::Client => 0,
            Role::Server => self.hops,
        }
    }

    fn role_at(&self, node: NodeId) -> Option<Role> {
        if node == 0 {
            Some(Role::Client)
        } else if node == self.hops {
            Some(Role::Server)
        } else {
            None
        }
    }

    /// Reports that the link layer abandoned `frame`.
    pub fn drop_frame(&mut self, frame: Frame) {
        self.counters.mac_drops += 1;
        log::trace!("drop {frame}");
    }

    /// Hands a successfully received frame to `node`: relays forward it,
    /// endpoints feed it to their handshake state.
    pub fn deliver(&mut self, node: NodeId, frame: Frame) {
        let now = self.now();
        let Some(role) = self.role_at(node).filter(|r| *r != frame.dir.sender()) else {
            self.enqueue(node, frame);
            return;
        };
        if self.workload == Workload::FirstDelivery && role == Role::Server {
            self.finish(true, now);
            return;
        }
        let i = role as usize;
        let hs = &mut self.endpoints[i];
        let before = (hs.anomalies(), hs.duplicate_resends());
        let out = hs.on_frame_delivered(now, frame.msg);
        let after = (hs.anomalies(), hs.duplicate_resends());
        let complete = hs.is_complete();
        self.counters.anomalies += u64::from(after.0 - before.0);
        self.counters.duplicate_resends += u64::from(after.1 - before.1);
        self.radio.add_cpu(node, self.processing);
        if !out.is_empty() {
            let t = now + self.processing;
            self.sched
                .schedule(Event::new(t, node, EventKind::TimerFire, Payload::Emit(role, out)))
                .expect("processing delay is non-negative");
        }
        self.sync_timer(role);
        if role == Role::Client && complete && self.workload == Workload::Handshake {
            self.finish(true, now + self.processing);
        }
    }

    fn sync_timer(&mut self, role: Role) {
        let i = role as usize;
        let want = self.endpoints[i].deadline();
        if self.timers[i].map(|t| t.1) == want {
            return;
        }
        if let Some((h, _)) = self.timers[i].take() {
            self.sched.cancel(h);
        }
        if let Some(d) = want {
            let node = self.endpoint_node(role);
            let h = self
                .sched
                .schedule(Event::new(d, node, EventKind::TimerFire, Payload::Timer(role)))
                .expect("timer deadlines lie ahead");
            self.timers[i] = Some((h, d));
        }
    }

    fn on_timer(&mut self, role: Role) {
        let i = role as usize;
        self.timers[i] = None;
        let now = self.now();
        match self.endpoints[i].on_timeout(now) {
            TimeoutOutcome::Ignored => {}
            TimeoutOutcome::Resend { frames, .. } => {
                self.counters.dtls_retransmissions += 1;
                self.emit(role, &frames);
            }
            TimeoutOutcome::Failed => self.finish(false, now),
        }
        self.sync_timer(role);
    }

    /// Opens the energy window and emits the first flight.
    fn begin(&mut self) {
        let t0 = self.now();
        self.start = t0;
        self.radio.reset_window(t0);
        let first = self.endpoints[0].start(t0);
        self.emit(Role::Client, &first);
        self.sync_timer(Role::Client);
    }

    fn finish(&mut self, ok: bool, at: SimTime) {
        if self.finished.is_none() {
            self.finished = Some((ok, at));
        }
    }

    pub fn is_finished(&self) -> bool {
        self.finished.is_some()
    }

    pub fn start(&self) -> SimTime {
        self.start
    }

    pub fn client(&self) -> &HandshakeState {
        &self.endpoints[0]
    }

    pub fn server(&self) -> &HandshakeState {
        &self.endpoints[1]
    }
}

/// Runs one replication of `cfg` over `mac`.
pub fn run<X: Mac>(mac: &mut X, cfg: &DriverConfig, seed: u64) -> Result<RunResult, ModelError> {
    cfg.validate()?;
    let mut net: Net<X::Ev> = Net::new(cfg, seed);
    let t0 = mac.start_time(&mut net);
    mac.init(&mut net);

    net.sched
        .schedule(Event::new(t0, 0, EventKind::Wakeup, Payload::Start))
        .expect("start lies ahead of the empty queue");

    let limit = t0 + RUN_LIMIT;
    while net.finished.is_none() {
        match peek_time(&mut net) {
            Some(t) if t <= limit => step(mac, &mut net),
            _ => {
                let now = net.now();
                net.finish(false, now);
            }
        }
    }

    let (completed, end) = net.finished.expect("loop exits only when finished");
    let end = end.max(net.now());
    let radio = std::mem::replace(&mut net.radio, RadioTimeline::new(0));
    let mut ledger = radio.finalize(end);
    mac.settle(&mut ledger, end - t0);
    let end = if completed { net.finished.unwrap().1 } else { end };
    Ok(RunResult {
        completed,
        start: t0,
        end,
        counters: net.counters,
        ledger,
        trace: net.sched.take_trace(),
    })
}

fn peek_time<M: fmt::Display>(net: &mut Net<M>) -> Option<SimTime> {
    net.sched.peek_time()
}

fn step<X: Mac>(mac: &mut X, net: &mut Net<X::Ev>) {
    let Some(ev) = net.sched.pop() else { return };
    net.sched.record(&ev);
    match ev.payload {
        Payload::Start => net.begin(),
        Payload::Timer(role) => net.on_timer(role),
        Payload::Emit(role, frames) => net.emit(role, &frames),
        Payload::Mac(m) => mac.on_event(net, ev.node, m),
    }
    drain_kicks(mac, net);
}

fn drain_kicks<X: Mac>(mac: &mut X, net: &mut Net<X::Ev>) {
    while !net.kicks.is_empty() && net.finished.is_none() {
        let kicks = std::mem::take(&mut net.kicks);
        for node in kicks {
            mac.kick(net, node);
        }
    }
}

/// On-air intervals per node, for carrier sense and collision checks.
#[derive(Debug, Clone, Default)]
pub struct Airspace {
    busy: Vec<Vec<(u64, SimTime, SimTime)>>,
    next_key: u64,
}

/// Intervals that ended this long before a new one began are forgotten.
const AIR_MEMORY: SimTime = SimTime::from_millis(10_000);

impl Airspace {
    pub fn new(nodes: usize) -> Self {
        Airspace { busy: vec![Vec::new(); nodes], next_key: 0 }
    }

    /// Marks `node` on air over `[from, to)`; returns a key for `truncate`.
    pub fn occupy(&mut self, node: NodeId, from: SimTime, to: SimTime) -> u64 {
        let key = self.next_key;
        self.next_key += 1;
        let v = &mut self.busy[node];
        v.retain(|&(_, _, e)| e + AIR_MEMORY > from);
        v.push((key, from, to));
        key
    }

    /// Ends an open interval early.
    pub fn truncate(&mut self, node: NodeId, key: u64, at: SimTime) {
        if let Some(iv) = self.busy[node].iter_mut().find(|iv| iv.0 == key) {
            iv.2 = iv.2.min(at).max(iv.1);
        }
    }

    pub fn overlaps(&self, node: NodeId, from: SimTime, to: SimTime) -> bool {
        self.busy[node].iter().any(|&(_, a, b)| a < to && b > from)
    }

    pub fn on_air(&self, node: NodeId, at: SimTime) -> bool {
        self.busy[node].iter().any(|&(_, a, b)| a <= at && b > at)
    }

    /// A reception at `rx` of `tx`'s transmission over `[from, to)` is lost
    /// if `rx` itself or any other neighbor of `rx` was on air meanwhile.
    pub fn collides(&self, rx: NodeId, tx: NodeId, from: SimTime, to: SimTime) -> bool {
        self.collides_except(rx, tx, from, to, None)
    }

    /// As [`Airspace::collides`], ignoring the interval with key `skip`.
    pub fn collides_except(&self, rx: NodeId, tx: NodeId, from: SimTime, to: SimTime, skip: Option<u64>) -> bool {
        let last = self.busy.len() - 1;
        let others = [rx.checked_sub(1), (rx < last).then_some(rx + 1), Some(rx)];
        others.into_iter().flatten().filter(|&n| n != tx).any(|n| {
            self.busy[n]
                .iter()
                .any(|&(k, a, b)| Some(k) != skip && a < to && b > from)
        })
    }
}
