//! Preamble sampling in the X-MAC style.
//!
//! Every node wakes once per check interval and listens just long enough to
//! catch one strobe. A sender repeats short addressed strobes for at most one
//! check interval plus one strobe period. With early ACK the addressed
//! receiver answers a strobe and the data frame follows in the next strobe
//! slot. Data frames are never acknowledged, so a lost data frame is only
//! recovered by the DTLS timer.

use std::fmt;

use super::{Airspace, Frame, Mac, Net};
use crate::energy::{EnergyLedger, PowerState};
use crate::error::ModelError;
use crate::sim::{EventHandle, EventKind, NodeId, Purpose, SimTime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreambleConfig {
    pub check_interval: SimTime,
    pub strobe: SimTime,
    pub strobe_gap: SimTime,
    pub data_airtime: SimTime,
    pub early_ack: bool,
    pub ack_airtime: SimTime,
    /// The sender flags more queued frames for the same receiver, which
    /// then stays awake for the next strobe instead of sleeping.
    pub pending_bit: bool,
}

impl PreambleConfig {
    pub fn with_ci_ms(ci_ms: u64) -> Self {
        PreambleConfig { check_interval: SimTime::from_millis(ci_ms), ..Default::default() }
    }

    pub fn strobe_period(&self) -> SimTime {
        self.strobe + self.strobe_gap
    }

    /// Listening time per wakeup: long enough to hear one whole strobe.
    pub fn check_duration(&self) -> SimTime {
        self.strobe_period() + self.strobe
    }

    /// Strobes in a full train; the last one starts no later than one check
    /// interval after the first.
    pub fn max_strobes(&self) -> u64 {
        self.check_interval.as_micros() / self.strobe_period().as_micros() + 1
    }

    /// Full train length, at most one check interval plus one strobe period.
    pub fn train_length(&self) -> SimTime {
        self.strobe_period().times(self.max_strobes())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let zero = SimTime::ZERO;
        if self.check_interval == zero {
            return Err(ModelError::param("ci_ms", "must be positive"));
        }
        if self.strobe == zero || self.strobe_gap == zero || self.data_airtime == zero || self.ack_airtime == zero {
            return Err(ModelError::param("airtime", "all airtimes must be positive"));
        }
        if self.early_ack && self.ack_airtime > self.strobe_gap {
            return Err(ModelError::param("ack_ms", "strobe ACK must fit in the gap between strobes"));
        }
        if self.check_duration() + self.data_airtime >= self.check_interval {
            return Err(ModelError::param("ci_ms", "check interval too short for the airtimes"));
        }
        Ok(())
    }
}

impl Default for PreambleConfig {
    fn default() -> Self {
        PreambleConfig {
            check_interval: SimTime::from_millis(500),
            strobe: SimTime::from_micros(500),
            strobe_gap: SimTime::from_micros(500),
            data_airtime: SimTime::from_micros(4_300),
            early_ack: true,
            ack_airtime: SimTime::from_micros(350),
            pending_bit: true,
        }
    }
}

/// Expected time from handing one frame to the link layer until it is
/// received over a single hop, when every lost data frame costs one flat
/// retransmission timeout.
pub fn expected_unicast_latency(cfg: &PreambleConfig, pdr: f64, retry_timeout: SimTime) -> Result<f64, ModelError> {
    if pdr == 0.0 {
        return Err(ModelError::Unbounded);
    }
    if !(pdr > 0.0 && pdr <= 1.0) {
        return Err(ModelError::Pdr(pdr));
    }
    let p = cfg.strobe_period().as_secs_f64();
    let d = cfg.data_airtime.as_secs_f64();
    let attempt = if cfg.early_ack {
        // A receiver waking at uniform offset u joins at strobe ceil(u/P),
        // which averages CI/2 + P/2; every strobe and its ACK must then both
        // survive before data goes out.
        let last = (cfg.max_strobes() - 1) as f64;
        (last + 1.0) * p / 2.0 + p / (pdr * pdr) + d
    } else {
        cfg.train_length().as_secs_f64() + d
    };
    Ok(attempt + (1.0 / pdr - 1.0) * retry_timeout.as_secs_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum XmacEv {
    Wake,
    CheckEnd,
    Retry,
    StrobeEnd { tx: NodeId, k: u64 },
    TrainEnd,
    DataEnd,
}

impl fmt::Display for XmacEv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            XmacEv::Wake => f.write_str("wake"),
            XmacEv::CheckEnd => f.write_str("check-end"),
            XmacEv::Retry => f.write_str("cca-retry"),
            XmacEv::StrobeEnd { tx, k } => write!(f, "strobe-end from={tx} k={k}"),
            XmacEv::TrainEnd => f.write_str("train-end"),
            XmacEv::DataEnd => f.write_str("data-end"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Activity {
    Idle,
    Sending,
    Receiving(NodeId),
}

#[derive(Debug, Clone)]
struct Train {
    to: NodeId,
    frame: Frame,
    start: SimTime,
    air: u64,
    end: Option<EventHandle>,
    locked: bool,
    heard: bool,
    strobes_sent: u64,
    data_start: Option<SimTime>,
}

pub struct Xmac {
    cfg: PreambleConfig,
    activity: Vec<Activity>,
    checking: Vec<bool>,
    backoff: Vec<bool>,
    trains: Vec<Option<Train>>,
    air: Airspace,
    ack_tx: Vec<SimTime>,
}

impl Xmac {
    pub fn new(cfg: PreambleConfig, hops: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        let n = hops + 1;
        Ok(Xmac {
            cfg,
            activity: vec![Activity::Idle; n],
            checking: vec![false; n],
            backoff: vec![false; n],
            trains: vec![None; n],
            air: Airspace::new(n),
            ack_tx: vec![SimTime::ZERO; n],
        })
    }

    fn strobe_start(&self, train: &Train, k: u64) -> SimTime {
        train.start + self.cfg.strobe_period().times(k)
    }

    fn lock(&mut self, net: &mut Net<XmacEv>, rx: NodeId, tx: NodeId, k: u64) {
        let train = self.trains[tx].as_mut().expect("locking onto a live train");
        train.locked = true;
        self.activity[rx] = Activity::Receiving(tx);
        self.checking[rx] = false;
        let now = net.now();
        net.radio.set(rx, PowerState::Listen, now);
        let t = train.start + self.cfg.strobe_period().times(k) + self.cfg.strobe;
        net.at(t, rx, EventKind::FrameEnd, XmacEv::StrobeEnd { tx, k });
    }

    fn release(&mut self, net: &mut Net<XmacEv>, node: NodeId) {
        self.activity[node] = Activity::Idle;
        let now = net.now();
        net.radio.set(node, PowerState::Sleep, now);
    }

    fn start_data(&mut self, net: &mut Net<XmacEv>, tx: NodeId, at: SimTime) {
        let d = self.cfg.data_airtime;
        let train = self.trains[tx].as_mut().expect("data follows a train");
        train.data_start = Some(at);
        self.air.occupy(tx, at, at + d);
        net.at(at + d, tx, EventKind::FrameEnd, XmacEv::DataEnd);
    }

    fn on_wake(&mut self, net: &mut Net<XmacEv>, node: NodeId) {
        let now = net.now();
        net.at(now + self.cfg.check_interval, node, EventKind::Wakeup, XmacEv::Wake);
        if self.activity[node] != Activity::Idle {
            return;
        }
        let pending = net
            .neighbors(node)
            .filter_map(|n| self.trains[n].as_ref().map(|t| (n, t)))
            .filter(|(_, t)| t.to == node && !t.locked && t.data_start.is_none())
            .min_by_key(|(_, t)| t.start)
            .map(|(n, t)| (n, t.start));
        if let Some((tx, start)) = pending {
            let p = self.cfg.strobe_period().as_micros();
            let k = (now - start).as_micros().div_ceil(p);
            if k < self.cfg.max_strobes() {
                self.lock(net, node, tx, k);
                return;
            }
        }
        self.checking[node] = true;
        net.radio.set(node, PowerState::Listen, now);
        net.at(now + self.cfg.check_duration(), node, EventKind::Wakeup, XmacEv::CheckEnd);
    }

    fn on_strobe_end(&mut self, net: &mut Net<XmacEv>, rx: NodeId, tx: NodeId, k: u64) {
        let Some(train) = self.trains[tx].clone() else { return };
        if train.to != rx || !train.locked || self.activity[rx] != Activity::Receiving(tx) {
            return;
        }
        let now = net.now();
        let a = self.strobe_start(&train, k);
        let ok = net.survives(tx, rx) && !self.air.collides(rx, tx, a, a + self.cfg.strobe);
        if ok && self.cfg.early_ack {
            let ack = self.cfg.ack_airtime;
            self.air.occupy(rx, now, now + ack);
            self.ack_tx[rx] += ack;
            // The sender listens in the gap; its own train does not count.
            let heard = net.survives(rx, tx) && !self.air.collides_except(tx, rx, now, now + ack, Some(train.air));
            if heard {
                let t = self.trains[tx].as_mut().expect("checked above");
                t.strobes_sent = k + 1;
                t.heard = true;
                if let Some(h) = t.end.take() {
                    net.cancel(h);
                }
                self.air.truncate(tx, train.air, now);
                let data_at = self.strobe_start(&train, k + 1);
                self.start_data(net, tx, data_at);
                return;
            }
        } else if ok {
            self.trains[tx].as_mut().expect("checked above").heard = true;
            return;
        }
        if k + 1 < self.cfg.max_strobes() {
            let t = self.strobe_start(&train, k + 1) + self.cfg.strobe;
            net.at(t, rx, EventKind::FrameEnd, XmacEv::StrobeEnd { tx, k: k + 1 });
        }
    }

    fn on_train_end(&mut self, net: &mut Net<XmacEv>, tx: NodeId) {
        let Some(train) = self.trains[tx].as_mut() else { return };
        train.end = None;
        train.strobes_sent = self.cfg.max_strobes();
        if !self.cfg.early_ack {
            let now = net.now();
            self.start_data(net, tx, now);
            return;
        }
        // No ACK within the bound: give up on this frame.
        let train = self.trains[tx].take().expect("checked above");
        let on_air = self.cfg.strobe.times(train.strobes_sent);
        let now = net.now();
        net.radio.set_split(tx, PowerState::Sleep, now, on_air);
        self.activity[tx] = Activity::Idle;
        net.drop_frame(train.frame);
        if self.activity[train.to] == Activity::Receiving(tx) {
            self.release(net, train.to);
            self.kick(net, train.to);
        }
        self.kick(net, tx);
    }

    fn on_data_end(&mut self, net: &mut Net<XmacEv>, tx: NodeId) {
        let train = self.trains[tx].take().expect("data end without a train");
        let now = net.now();
        let start = train.data_start.expect("data was started");
        let rx = train.to;
        net.counters.frames_transmitted += 1;
        let on_air = self.cfg.strobe.times(train.strobes_sent) + self.cfg.data_airtime;
        net.radio.set_split(tx, PowerState::Sleep, now, on_air);
        self.activity[tx] = Activity::Idle;
        let listening = self.activity[rx] == Activity::Receiving(tx);
        let ok = listening
            && train.heard
            && net.survives(tx, rx)
            && !self.air.collides(rx, tx, start, now);
        let more = net.head(tx).is_some_and(|f| net.next_hop(tx, f.dir) == rx);
        if listening && ok && more && self.cfg.pending_bit {
            self.activity[rx] = Activity::Idle;
            self.checking[rx] = true;
            net.at(now + self.cfg.check_duration(), rx, EventKind::Wakeup, XmacEv::CheckEnd);
        } else if listening {
            self.release(net, rx);
        }
        if ok {
            net.deliver(rx, train.frame);
        }
        self.kick(net, tx);
        self.kick(net, rx);
    }

    fn channel_busy(&self, net: &Net<XmacEv>, node: NodeId, now: SimTime) -> bool {
        self.air.on_air(node, now) || net.neighbors(node).any(|n| self.air.on_air(n, now))
    }
}

impl Mac for Xmac {
    type Ev = XmacEv;

    fn start_time(&mut self, _net: &mut Net<XmacEv>) -> SimTime {
        // Receiver phases are random, so a fixed start is uniformly placed
        // relative to them.
        self.cfg.check_interval.times(2)
    }

    fn init(&mut self, net: &mut Net<XmacEv>) {
        let ci = self.cfg.check_interval.as_micros();
        for node in 0..net.nodes() {
            let phase = net.rng(node, Purpose::Phase).below(ci);
            net.at(SimTime::from_micros(phase), node, EventKind::Wakeup, XmacEv::Wake);
        }
    }

    fn kick(&mut self, net: &mut Net<XmacEv>, node: NodeId) {
        if self.activity[node] != Activity::Idle || self.backoff[node] {
            return;
        }
        let Some(frame) = net.head(node) else { return };
        let now = net.now();
        if self.channel_busy(net, node, now) {
            self.backoff[node] = true;
            let slots = 1 + net.rng(node, Purpose::Backoff).below(8);
            net.at(now + self.cfg.strobe_period().times(slots), node, EventKind::TimerFire, XmacEv::Retry);
            return;
        }
        net.pop(node, frame);
        let to = net.next_hop(node, frame.dir);
        let len = self.cfg.train_length();
        let air = self.air.occupy(node, now, now + len);
        let end = net.at(now + len, node, EventKind::FrameEnd, XmacEv::TrainEnd);
        self.activity[node] = Activity::Sending;
        self.checking[node] = false;
        net.radio.set(node, PowerState::Transmit, now);
        self.trains[node] = Some(Train {
            to,
            frame,
            start: now,
            air,
            end: Some(end),
            locked: false,
            heard: false,
            strobes_sent: 0,
            data_start: None,
        });
        if self.activity[to] == Activity::Idle && self.checking[to] {
            // The receiver is already sampling the channel.
            self.lock(net, to, node, 0);
        }
    }

    fn on_event(&mut self, net: &mut Net<XmacEv>, node: NodeId, ev: XmacEv) {
        match ev {
            XmacEv::Wake => self.on_wake(net, node),
            XmacEv::CheckEnd => {
                if self.checking[node] && self.activity[node] == Activity::Idle {
                    self.checking[node] = false;
                    let now = net.now();
                    net.radio.set(node, PowerState::Sleep, now);
                }
            }
            XmacEv::Retry => {
                self.backoff[node] = false;
                self.kick(net, node);
            }
            XmacEv::StrobeEnd { tx, k } => self.on_strobe_end(net, node, tx, k),
            XmacEv::TrainEnd => self.on_train_end(net, node),
            XmacEv::DataEnd => self.on_data_end(net, node),
        }
    }

    fn settle(&mut self, ledger: &mut EnergyLedger, _window: SimTime) {
        for (node, &t) in self.ack_tx.iter().enumerate() {
            ledger.transfer(node, PowerState::Listen, PowerState::Transmit, t);
        }
    }
}
