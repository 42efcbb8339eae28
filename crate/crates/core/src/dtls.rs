//! DTLS 1.2 PSK handshake as flights of link-layer frames.
//!
//! Frames carry no handshake bytes, only their position in the flight plan.
//! Each endpoint is a pure state machine: deliveries and timer expiries go in,
//! frames to transmit come out. The caller owns the clock and the event queue.

use std::collections::{HashSet, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::sim::SimTime;

/// Record-layer header bytes.
pub const RECORD_HEADER_BYTES: u32 = 13;
/// AES_CCM_8 explicit nonce.
pub const CCM8_NONCE_BYTES: u32 = 8;
/// AES_CCM_8 authentication tag.
pub const CCM8_TAG_BYTES: u32 = 8;
/// Link-layer payload available in one IEEE 802.15.4 frame.
pub const LINK_PAYLOAD_BYTES: u32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordOverhead {
    pub header_bytes: u32,
    pub cipher_expansion_bytes: u32,
}

impl RecordOverhead {
    pub const PSK_AES_CCM_8: RecordOverhead = RecordOverhead {
        header_bytes: RECORD_HEADER_BYTES,
        cipher_expansion_bytes: CCM8_NONCE_BYTES + CCM8_TAG_BYTES,
    };

    pub fn total(&self) -> u32 {
        self.header_bytes + self.cipher_expansion_bytes
    }

    /// Share of a full link-layer payload consumed by the overhead.
    pub fn link_payload_fraction(&self) -> f64 {
        self.total() as f64 / LINK_PAYLOAD_BYTES as f64
    }
}

/// Size on the wire of a protected datagram carrying `payload_bytes`.
pub fn datagram_overhead(payload_bytes: u32) -> u32 {
    payload_bytes + RecordOverhead::PSK_AES_CCM_8.total()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "c2s")]
    ClientToServer,
    #[serde(rename = "s2c")]
    ServerToClient,
}

impl Direction {
    pub fn sender(self) -> Role {
        match self {
            Direction::ClientToServer => Role::Client,
            Direction::ServerToClient => Role::Server,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::ClientToServer => "c2s",
            Direction::ServerToClient => "s2c",
        }
    }

    pub fn reverse(self) -> Direction {
        match self {
            Direction::ClientToServer => Direction::ServerToClient,
            Direction::ServerToClient => Direction::ClientToServer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Client,
    Server,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "FlightRepr")]
pub struct Flight {
    pub direction: Direction,
    pub frames: u32,
    pub label: String,
}

/// Accepted spellings of a flight: `["c2s", 1]` or an object.
#[derive(Deserialize)]
#[serde(untagged)]
enum FlightRepr {
    Pair(Direction, u32),
    Full(FlightFields),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FlightFields {
    direction: Direction,
    frames: u32,
    #[serde(default)]
    label: String,
}

impl From<FlightRepr> for Flight {
    fn from(r: FlightRepr) -> Self {
        match r {
            FlightRepr::Pair(direction, frames) => Flight { direction, frames, label: String::new() },
            FlightRepr::Full(f) => Flight { direction: f.direction, frames: f.frames, label: f.label },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Flight>", into = "Vec<Flight>")]
pub struct FlightPlan {
    flights: Vec<Flight>,
}

impl TryFrom<Vec<Flight>> for FlightPlan {
    type Error = ModelError;
    fn try_from(flights: Vec<Flight>) -> Result<Self, ModelError> {
        FlightPlan::new(flights)
    }
}

impl From<FlightPlan> for Vec<Flight> {
    fn from(p: FlightPlan) -> Self {
        p.flights
    }
}

impl Default for FlightPlan {
    fn default() -> Self {
        Self::default_psk()
    }
}

impl FlightPlan {
    pub fn new(flights: Vec<Flight>) -> Result<Self, ModelError> {
        let bad = |m: &str| Err(ModelError::FlightPlan(m.to_string()));
        if flights.len() < 2 {
            return bad("need at least two flights");
        }
        if flights[0].direction != Direction::ClientToServer {
            return bad("first flight must be client-to-server");
        }
        if flights.last().map(|f| f.direction) != Some(Direction::ServerToClient) {
            return bad("last flight must be server-to-client");
        }
        if flights.windows(2).any(|w| w[0].direction == w[1].direction) {
            return bad("flight directions must alternate");
        }
        if flights.iter().any(|f| f.frames == 0) {
            return bad("every flight needs at least one frame");
        }
        Ok(FlightPlan { flights })
    }

    /// The six-flight PSK handshake, frames [1, 1, 1, 2, 3, 2].
    pub fn default_psk() -> Self {
        let f = |d, n, l: &str| Flight { direction: d, frames: n, label: l.to_string() };
        use Direction::*;
        FlightPlan::new(vec![
            f(ClientToServer, 1, "ClientHello"),
            f(ServerToClient, 1, "HelloVerifyRequest"),
            f(ClientToServer, 1, "ClientHello+cookie"),
            f(ServerToClient, 2, "ServerHello+ServerHelloDone"),
            f(ClientToServer, 3, "ClientKeyExchange+ChangeCipherSpec+Finished"),
            f(ServerToClient, 2, "ChangeCipherSpec+Finished"),
        ])
        .expect("default plan is valid")
    }

    /// Alternating plan starting client-to-server, with generic labels.
    pub fn from_counts(counts: &[u32]) -> Result<Self, ModelError> {
        let flights = counts
            .iter()
            .enumerate()
            .map(|(i, &n)| Flight {
                direction: if i % 2 == 0 { Direction::ClientToServer } else { Direction::ServerToClient },
                frames: n,
                label: format!("flight{}", i + 1),
            })
            .collect();
        FlightPlan::new(flights)
    }

    pub fn flights(&self) -> &[Flight] {
        &self.flights
    }

    pub fn len(&self) -> usize {
        self.flights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flights.is_empty()
    }

    pub fn total_frames(&self) -> u32 {
        self.flights.iter().map(|f| f.frames).sum()
    }

    pub fn frames_in(&self, flight: usize) -> u32 {
        self.flights[flight].frames
    }

    pub fn counts(&self) -> Vec<u32> {
        self.flights.iter().map(|f| f.frames).collect()
    }

    pub fn last_index(&self) -> usize {
        self.flights.len() - 1
    }

    pub fn frames_of(&self, flight: usize) -> Vec<FrameRef> {
        (0..self.frames_in(flight)).map(|index| FrameRef { flight, index }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameRef {
    pub flight: usize,
    pub index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backoff {
    #[default]
    Doubling,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetransmitPolicy {
    pub initial: SimTime,
    pub max: SimTime,
    pub max_retransmissions: u32,
    pub backoff: Backoff,
}

impl Default for RetransmitPolicy {
    fn default() -> Self {
        RetransmitPolicy {
            initial: SimTime::from_millis(2_000),
            max: SimTime::from_millis(60_000),
            max_retransmissions: 7,
            backoff: Backoff::Doubling,
        }
    }
}

impl RetransmitPolicy {
    /// Timeout in force after `attempt` retransmissions.
    pub fn timeout_for(&self, attempt: u32) -> SimTime {
        let t = match self.backoff {
            Backoff::Flat => self.initial,
            Backoff::Doubling => {
                let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
                SimTime::from_micros(self.initial.as_micros().saturating_mul(factor))
            }
        };
        t.min(self.max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetransmitTimer {
    pub deadline: SimTime,
    pub timeout: SimTime,
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimeoutOutcome {
    /// Timer not armed, not yet due, or the handshake is over.
    Ignored,
    Resend { frames: Vec<FrameRef>, next_deadline: SimTime },
    Failed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandshakeState {
    role: Role,
    plan: Arc<FlightPlan>,
    policy: RetransmitPolicy,
    /// Index of the peer flight this endpoint is waiting for.
    expected: usize,
    received: Vec<bool>,
    last_sent: Option<usize>,
    dup_seen: Vec<bool>,
    timer: Option<RetransmitTimer>,
    attempt: u32,
    complete: bool,
    failed: bool,
    anomalies: u32,
    timeouts: u32,
    duplicate_resends: u32,
}

impl HandshakeState {
    pub fn new(role: Role, plan: Arc<FlightPlan>, policy: RetransmitPolicy) -> Self {
        let expected = match role {
            Role::Server => 0,
            Role::Client => 1,
        };
        let received = vec![false; plan.frames_in(expected) as usize];
        HandshakeState {
            role,
            plan,
            policy,
            expected,
            received,
            last_sent: None,
            dup_seen: Vec::new(),
            timer: None,
            attempt: 0,
            complete: false,
            failed: false,
            anomalies: 0,
            timeouts: 0,
            duplicate_resends: 0,
        }
    }

    pub fn client(plan: Arc<FlightPlan>, policy: RetransmitPolicy) -> Self {
        Self::new(Role::Client, plan, policy)
    }

    pub fn server(plan: Arc<FlightPlan>, policy: RetransmitPolicy) -> Self {
        Self::new(Role::Server, plan, policy)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn plan(&self) -> &FlightPlan {
        &self.plan
    }

    pub fn current_flight(&self) -> usize {
        self.expected
    }

    pub fn frames_received_in_flight(&self) -> usize {
        self.received.iter().filter(|&&r| r).count()
    }

    pub fn last_sent(&self) -> Option<usize> {
        self.last_sent
    }

    pub fn timer(&self) -> Option<RetransmitTimer> {
        self.timer
    }

    pub fn deadline(&self) -> Option<SimTime> {
        self.timer.map(|t| t.deadline)
    }

    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn is_failed(&self) -> bool {
        self.failed
    }

    pub fn is_done(&self) -> bool {
        self.complete || self.failed
    }

    pub fn anomalies(&self) -> u32 {
        self.anomalies
    }

    pub fn timeouts(&self) -> u32 {
        self.timeouts
    }

    pub fn duplicate_resends(&self) -> u32 {
        self.duplicate_resends
    }

    fn sender_of(&self, flight: usize) -> Role {
        self.plan.flights()[flight].direction.sender()
    }

    /// The server answers the first ClientHello without keeping state, so its
    /// cookie flight is never retransmitted on a timer. Nobody arms a timer
    /// after the final flight.
    fn arms_timer(&self, flight: usize) -> bool {
        flight != self.plan.last_index() && !(self.role == Role::Server && flight == 1)
    }

    fn arm(&mut self, now: SimTime) {
        let timeout = self.policy.timeout_for(self.attempt);
        self.timer = Some(RetransmitTimer { deadline: now + timeout, timeout, attempt: self.attempt });
    }

    fn send_flight(&mut self, flight: usize, now: SimTime) -> Vec<FrameRef> {
        self.last_sent = Some(flight);
        self.attempt = 0;
        self.dup_seen = vec![false; self.plan.frames_in(flight.saturating_sub(1)) as usize];
        self.expected = flight + 1;
        if flight == self.plan.last_index() {
            self.complete = true;
            self.timer = None;
            self.received.clear();
        } else {
            self.received = vec![false; self.plan.frames_in(self.expected) as usize];
            if self.arms_timer(flight) {
                self.arm(now);
            } else {
                self.timer = None;
            }
        }
        self.plan.frames_of(flight)
    }

    /// Client only: emits the first flight and arms the timer.
    pub fn start(&mut self, now: SimTime) -> Vec<FrameRef> {
        assert_eq!(self.role, Role::Client, "only the client opens a handshake");
        if self.last_sent.is_some() || self.is_done() {
            return Vec::new();
        }
        let frames = self.send_flight(0, now);
        self.expected = 1;
        frames
    }

    /// Handles one frame from the peer. Returns the frames to transmit in
    /// response (possibly none).
    pub fn on_frame_delivered(&mut self, now: SimTime, frame: FrameRef) -> Vec<FrameRef> {
        if self.failed {
            return Vec::new();
        }
        if frame.flight >= self.plan.len()
            || frame.index >= self.plan.frames_in(frame.flight)
            || self.sender_of(frame.flight) == self.role
        {
            self.anomalies += 1;
            return Vec::new();
        }

        if !self.complete && frame.flight == self.expected {
            let slot = &mut self.received[frame.index as usize];
            if *slot {
                return Vec::new();
            }
            *slot = true;
            if !self.received.iter().all(|&r| r) {
                return Vec::new();
            }
            // Whole successor flight in hand: our last flight is acknowledged.
            self.timer = None;
            if self.expected == self.plan.last_index() {
                self.complete = true;
                self.expected = self.plan.len();
                self.received.clear();
                return Vec::new();
            }
            return self.send_flight(self.expected + 1, now);
        }

        if let Some(ls) = self.last_sent {
            if ls >= 1 && frame.flight == ls - 1 {
                // Peer retransmitted the flight we already answered: it lost
                // ours. One resend per round of duplicates.
                let i = frame.index as usize;
                if self.dup_seen[i] || self.dup_seen.iter().all(|&s| !s) {
                    self.dup_seen.iter_mut().for_each(|s| *s = false);
                    self.dup_seen[i] = true;
                    self.duplicate_resends += 1;
                    return self.plan.frames_of(ls);
                }
                self.dup_seen[i] = true;
                return Vec::new();
            }
        }

        if frame.flight < self.expected {
            return Vec::new();
        }
        self.anomalies += 1;
        Vec::new()
    }

    pub fn on_timeout(&mut self, now: SimTime) -> TimeoutOutcome {
        if self.is_done() {
            return TimeoutOutcome::Ignored;
        }
        let Some(timer) = self.timer else {
            return TimeoutOutcome::Ignored;
        };
        if now < timer.deadline {
            return TimeoutOutcome::Ignored;
        }
        let Some(flight) = self.last_sent else {
            return TimeoutOutcome::Ignored;
        };
        if self.attempt >= self.policy.max_retransmissions {
            self.failed = true;
            self.timer = None;
            return TimeoutOutcome::Failed;
        }
        self.attempt += 1;
        self.timeouts += 1;
        self.arm(now);
        TimeoutOutcome::Resend {
            frames: self.plan.frames_of(flight),
            next_deadline: self.timer.expect("just armed").deadline,
        }
    }

    /// Ordering key used to check that state never moves backwards.
    pub fn progress(&self) -> (u8, usize, usize) {
        let done = u8::from(self.is_done());
        (done, self.expected, self.frames_received_in_flight())
    }

    #[cfg(test)]
    pub(crate) fn force_attempt(&mut self, attempt: u32, now: SimTime) {
        self.attempt = attempt;
        self.arm(now);
    }
}

/// Outcome of delivering every emitted frame in order, with no loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LosslessExchange {
    pub client_complete: bool,
    pub server_complete: bool,
    /// Frames put on the wire by both endpoints.
    pub frames: u32,
    pub timeouts: u32,
}

pub fn lossless_exchange(plan: &FlightPlan) -> LosslessExchange {
    let plan = Arc::new(plan.clone());
    let p = RetransmitPolicy::default();
    let mut client = HandshakeState::client(plan.clone(), p);
    let mut server = HandshakeState::server(plan.clone(), p);
    let mut wire: VecDeque<FrameRef> = client.start(SimTime::ZERO).into();
    let mut frames = wire.len() as u32;
    let mut t = SimTime::ZERO;
    while let Some(f) = wire.pop_front() {
        t += SimTime::from_millis(1);
        let out = match plan.flights()[f.flight].direction {
            Direction::ClientToServer => server.on_frame_delivered(t, f),
            Direction::ServerToClient => client.on_frame_delivered(t, f),
        };
        frames += out.len() as u32;
        wire.extend(out);
    }
    LosslessExchange {
        client_complete: client.is_complete() && client.timer().is_none(),
        server_complete: server.is_complete() && server.timer().is_none(),
        frames,
        timeouts: client.timeouts() + server.timeouts(),
    }
}

/// Result of enumerating every reachable endpoint state.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Exploration {
    pub states: usize,
    pub transitions: usize,
    /// Human-readable descriptions of broken properties; empty when sound.
    pub violations: Vec<String>,
}

/// Breadth-first search over every state reachable by one endpoint when fed
/// every possible peer frame and every timer expiry. Checks that progress
/// never regresses, that completion and failure absorb, and that only frames
/// from flights the peer cannot have sent yet count as anomalies.
pub fn explore_state_space(plan: &FlightPlan, policy: RetransmitPolicy, role: Role) -> Exploration {
    let plan = Arc::new(plan.clone());
    let mut init = HandshakeState::new(role, plan.clone(), policy);
    if role == Role::Client {
        init.start(SimTime::ZERO);
    }
    let peer_frames: Vec<FrameRef> = (0..plan.len())
        .filter(|&i| plan.flights()[i].direction.sender() != role)
        .flat_map(|i| plan.frames_of(i))
        .collect();
    // Counters grow without bound; the key keeps only protocol state.
    let key = |s: &HandshakeState| {
        format!("{:?}", (s.expected, &s.received, s.last_sent, &s.dup_seen, s.timer, s.attempt, s.complete, s.failed))
    };
    let mut out = Exploration::default();
    let mut seen = HashSet::new();
    let mut queue = VecDeque::from([init]);
    let t = SimTime::from_secs_f64(1_000.0);
    while let Some(s) = queue.pop_front() {
        if !seen.insert(key(&s)) {
            continue;
        }
        let mut check = |ok: bool, what: &dyn Fn() -> String| {
            if !ok {
                out.violations.push(what());
            }
        };
        for &f in &peer_frames {
            let mut next = s.clone();
            next.on_frame_delivered(t, f);
            check(next.progress() >= s.progress(), &|| format!("regression on {f:?} from {s:?}"));
            if s.is_done() {
                let same = next.is_complete() == s.is_complete()
                    && next.is_failed() == s.is_failed()
                    && next.current_flight() == s.current_flight();
                check(same, &|| format!("terminal state left on {f:?} from {s:?}"));
            }
            if next.anomalies() != s.anomalies() {
                let future = f.flight > s.expected && !s.is_complete() && next.progress() == s.progress();
                check(future, &|| format!("{f:?} flagged in {s:?}"));
            }
            out.transitions += 1;
            queue.push_back(next);
        }
        if let Some(d) = s.deadline() {
            let mut next = s.clone();
            next.on_timeout(d);
            check(next.progress() >= s.progress(), &|| format!("regression on timeout from {s:?}"));
            out.transitions += 1;
            queue.push_back(next);
        }
        if s.is_complete() {
            let quiet = s.timer().is_none() && (s.current_flight() > plan.last_index() || s.role() == Role::Server);
            check(quiet, &|| format!("complete but active: {s:?}"));
        }
    }
    out.states = seen.len();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn secs(s: f64) -> SimTime {
        SimTime::from_secs_f64(s)
    }

    fn pair() -> (HandshakeState, HandshakeState) {
        let plan = Arc::new(FlightPlan::default_psk());
        let p = RetransmitPolicy::default();
        (HandshakeState::client(plan.clone(), p), HandshakeState::server(plan, p))
    }

    #[test]
    fn default_plan_shape() {
        let plan = FlightPlan::default_psk();
        assert_eq!(plan.len(), 6);
        assert_eq!(plan.total_frames(), 10);
        assert_eq!(plan.counts(), vec![1, 1, 1, 2, 3, 2]);
        assert_eq!(plan.flights()[0].direction, Direction::ClientToServer);
        assert_eq!(plan.flights()[1].direction, Direction::ServerToClient);
    }

    #[test]
    fn custom_plan_accepted() {
        let plan = FlightPlan::from_counts(&[1, 1, 1, 3, 3, 2]).unwrap();
        assert_eq!(plan.total_frames(), 11);
    }

    #[test]
    fn invalid_plans_rejected() {
        assert!(FlightPlan::from_counts(&[1, 1, 1]).is_err()); // ends client-to-server
        assert!(FlightPlan::from_counts(&[1, 0]).is_err());
        assert!(FlightPlan::from_counts(&[1]).is_err());
        let same = vec![
            Flight { direction: Direction::ClientToServer, frames: 1, label: "a".into() },
            Flight { direction: Direction::ClientToServer, frames: 1, label: "b".into() },
            Flight { direction: Direction::ServerToClient, frames: 1, label: "c".into() },
        ];
        assert!(FlightPlan::new(same).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let plan: FlightPlan =
            serde_json::from_str(r#"[{"direction":"c2s","frames":1,"label":"a"},{"direction":"s2c","frames":2,"label":"b"}]"#)
                .unwrap();
        assert_eq!(plan.counts(), vec![1, 2]);
        assert!(serde_json::from_str::<FlightPlan>(r#"[{"direction":"s2c","frames":1,"label":"a"}]"#).is_err());
    }

    #[test]
    fn overhead_arithmetic() {
        assert_eq!(datagram_overhead(0), 29);
        assert_eq!(datagram_overhead(1), 30);
        assert_eq!(datagram_overhead(98), 127);
        let frac = RecordOverhead::PSK_AES_CCM_8.link_payload_fraction();
        assert!((frac * 100.0 - 22.8).abs() < 0.05, "{frac}");
    }

    #[test]
    fn server_answers_client_hello_with_cookie_flight() {
        let (_, mut server) = pair();
        let out = server.on_frame_delivered(SimTime::ZERO, FrameRef { flight: 0, index: 0 });
        assert_eq!(out, vec![FrameRef { flight: 1, index: 0 }]);
        // Stateless cookie exchange: no timer yet.
        assert!(server.timer().is_none());
    }

    #[test]
    fn duplicate_hello_verify_triggers_resend_of_flight_three() {
        let (mut client, _) = pair();
        client.start(SimTime::ZERO);
        let f3 = client.on_frame_delivered(secs(0.1), FrameRef { flight: 1, index: 0 });
        assert_eq!(f3, vec![FrameRef { flight: 2, index: 0 }]);
        let before = client.progress();
        let again = client.on_frame_delivered(secs(0.2), FrameRef { flight: 1, index: 0 });
        assert_eq!(again, f3);
        assert_eq!(client.progress(), before);
    }

    #[test]
    fn flight_completion_needs_every_frame() {
        let (mut client, _) = pair();
        client.start(SimTime::ZERO);
        client.on_frame_delivered(secs(0.1), FrameRef { flight: 1, index: 0 });
        assert!(client.on_frame_delivered(secs(0.2), FrameRef { flight: 3, index: 0 }).is_empty());
        let f5 = client.on_frame_delivered(secs(0.3), FrameRef { flight: 3, index: 1 });
        assert_eq!(f5.len(), 3);
        assert!(f5.iter().all(|f| f.flight == 4));
    }

    #[test]
    fn timeout_doubles_from_two_seconds() {
        let (mut client, _) = pair();
        client.start(SimTime::ZERO);
        assert_eq!(client.deadline(), Some(secs(2.0)));
        match client.on_timeout(secs(2.0)) {
            TimeoutOutcome::Resend { frames, next_deadline } => {
                assert_eq!(frames, vec![FrameRef { flight: 0, index: 0 }]);
                assert_eq!(next_deadline, secs(6.0));
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(client.attempt(), 1);
    }

    #[test]
    fn early_timeout_is_ignored() {
        let (mut client, _) = pair();
        client.start(SimTime::ZERO);
        assert_eq!(client.on_timeout(secs(1.0)), TimeoutOutcome::Ignored);
    }

    #[test]
    fn retry_exhaustion_fails() {
        let (mut client, _) = pair();
        client.start(SimTime::ZERO);
        client.force_attempt(7, SimTime::ZERO);
        let t = client.deadline().unwrap();
        assert_eq!(client.on_timeout(t), TimeoutOutcome::Failed);
        assert!(client.is_failed());
        assert!(client.timer().is_none());
        // Absorbing.
        let snapshot = client.clone();
        client.on_frame_delivered(t, FrameRef { flight: 1, index: 0 });
        assert_eq!(client.on_timeout(t + secs(100.0)), TimeoutOutcome::Ignored);
        assert_eq!(client, snapshot);
    }

    #[test]
    fn timeout_cap_reached_at_attempt_five() {
        let p = RetransmitPolicy::default();
        let expected = [2.0, 4.0, 8.0, 16.0, 32.0, 60.0, 60.0, 60.0];
        for (k, e) in expected.iter().enumerate() {
            assert_eq!(p.timeout_for(k as u32), secs(*e), "attempt {k}");
        }
        let flat = RetransmitPolicy { backoff: Backoff::Flat, ..p };
        assert_eq!(flat.timeout_for(4), secs(2.0));
    }

    #[test]
    fn repeated_timeouts_have_increasing_deadlines() {
        let (mut client, _) = pair();
        client.start(SimTime::ZERO);
        let mut last = client.deadline().unwrap();
        let mut fails = 0;
        for _ in 0..20 {
            match client.on_timeout(last) {
                TimeoutOutcome::Resend { next_deadline, .. } => {
                    assert!(next_deadline > last);
                    last = next_deadline;
                }
                TimeoutOutcome::Failed => fails += 1,
                TimeoutOutcome::Ignored => {}
            }
        }
        assert_eq!(fails, 1);
        assert_eq!(client.timeouts(), 7);
    }

    #[test]
    fn future_flight_is_an_anomaly() {
        let (_, mut server) = pair();
        server.on_frame_delivered(SimTime::ZERO, FrameRef { flight: 4, index: 0 });
        assert_eq!(server.anomalies(), 1);
        assert_eq!(server.current_flight(), 0);
    }

    #[test]
    fn lossless_exchange_sends_exactly_plan_total() {
        let x = lossless_exchange(&FlightPlan::default_psk());
        assert!(x.client_complete && x.server_complete);
        assert_eq!(x.frames, 10);
        assert_eq!(x.timeouts, 0);
    }

    fn explore(role: Role) -> usize {
        let policy = RetransmitPolicy { max_retransmissions: 2, ..Default::default() };
        let report = explore_state_space(&FlightPlan::default_psk(), policy, role);
        assert!(report.violations.is_empty(), "{:?}", report.violations);
        report.states
    }

    #[test]
    fn exhaustive_client_states_never_regress() {
        assert!(explore(Role::Client) > 10);
    }

    #[test]
    fn exhaustive_server_states_never_regress() {
        assert!(explore(Role::Server) > 10);
    }
}
