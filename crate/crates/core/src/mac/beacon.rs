//! Beacon-enabled 802.15.4 over a chain of cluster heads.
//!
//! Each cluster head beacons once per beacon interval and opens a contention
//! access period (CAP) during which its members and itself listen. Frames go
//! out with slotted CSMA/CA inside the CAP of the cluster that owns the link,
//! are acknowledged at the link layer, and wait for the next CAP when the
//! whole exchange would not fit before the CAP ends.

use std::fmt;

use super::{Airspace, Frame, Mac, Net};
use crate::energy::{EnergyLedger, PowerState};
use crate::error::ModelError;
use crate::sim::{EventKind, NodeId, Purpose, SimTime};

/// Base superframe duration, 15.36 ms.
pub const BASE_SUPERFRAME: SimTime = SimTime::from_micros(15_360);

/// Beacon interval and CAP length for beacon order `bo` and superframe
/// order `so`.
pub fn superframe_params(bo: u8, so: u8) -> Result<(SimTime, SimTime), ModelError> {
    if bo > 14 {
        return Err(ModelError::BeaconOrder(bo));
    }
    if so > bo {
        return Err(ModelError::SuperframeOrder { bo, so });
    }
    Ok((BASE_SUPERFRAME.times(1 << bo), BASE_SUPERFRAME.times(1 << so)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeaconConfig {
    pub beacon_interval: SimTime,
    pub cap: SimTime,
    pub min_be: u32,
    pub max_be: u32,
    pub max_backoffs: u32,
    pub max_frame_retries: u32,
    pub backoff_unit: SimTime,
    pub data_airtime: SimTime,
    pub ack_airtime: SimTime,
    pub turnaround: SimTime,
    pub beacon_airtime: SimTime,
}

impl BeaconConfig {
    pub fn from_orders(bo: u8, so: u8) -> Result<Self, ModelError> {
        let (bi, cap) = superframe_params(bo, so)?;
        Ok(BeaconConfig { beacon_interval: bi, cap, ..Default::default() })
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.cap == SimTime::ZERO || self.cap > self.beacon_interval {
            return Err(ModelError::param("cap_ms", "CAP must be positive and no longer than the beacon interval"));
        }
        if self.min_be > self.max_be {
            return Err(ModelError::param("min_be", "must not exceed max_be"));
        }
        if self.backoff_unit == SimTime::ZERO {
            return Err(ModelError::param("backoff_unit", "must be positive"));
        }
        if self.beacon_airtime + self.exchange() > self.cap {
            return Err(ModelError::param("cap_ms", "CAP too short for one frame exchange"));
        }
        Ok(())
    }

    /// Two CCAs, the data frame, turnaround and the ACK.
    fn exchange(&self) -> SimTime {
        self.backoff_unit.times(2) + self.data_airtime + self.turnaround + self.ack_airtime
    }
}

impl Default for BeaconConfig {
    fn default() -> Self {
        BeaconConfig {
            beacon_interval: SimTime::from_micros(983_040),
            cap: SimTime::from_micros(61_440),
            min_be: 3,
            max_be: 5,
            max_backoffs: 4,
            max_frame_retries: 3,
            backoff_unit: SimTime::from_micros(320),
            data_airtime: SimTime::from_micros(4_300),
            ack_airtime: SimTime::from_micros(350),
            turnaround: SimTime::from_micros(192),
            beacon_airtime: SimTime::from_micros(608),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeaconEv {
    Beacon { cluster: usize },
    CapEnd { cluster: usize },
    /// End of the two CCAs; transmit if the channel stayed clear.
    CcaEnd,
    TxEnd,
    AckEnd { acked: bool },
}

impl fmt::Display for BeaconEv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BeaconEv::Beacon { cluster } => write!(f, "beacon cluster={cluster}"),
            BeaconEv::CapEnd { cluster } => write!(f, "cap-end cluster={cluster}"),
            BeaconEv::CcaEnd => f.write_str("cca-end"),
            BeaconEv::TxEnd => f.write_str("tx-end"),
            BeaconEv::AckEnd { acked } => write!(f, "ack-end acked={acked}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Cluster {
    head: NodeId,
    offset: SimTime,
    members: Vec<NodeId>,
    cap_start: SimTime,
    cap_end: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    /// Waiting for the owning cluster's next CAP.
    Deferred,
    Backoff,
    Transmitting,
    AwaitAck,
}

#[derive(Debug, Clone, Copy)]
struct Attempt {
    frame: Frame,
    to: NodeId,
    cluster: usize,
    nb: u32,
    be: u32,
    retries: u32,
    tx_start: SimTime,
    phase: Phase,
}

pub struct BeaconMac {
    cfg: BeaconConfig,
    clusters: Vec<Cluster>,
    /// Cluster that owns hop `i`.
    link_cluster: Vec<usize>,
    attempts: Vec<Option<Attempt>>,
    delivered: Vec<Vec<u64>>,
    air: Airspace,
    extra_tx: Vec<SimTime>,
    phase: SimTime,
}

impl BeaconMac {
    pub fn new(cfg: BeaconConfig, hops: usize) -> Result<Self, ModelError> {
        cfg.validate()?;
        if hops == 0 {
            return Err(ModelError::NoHops);
        }
        // Single hop: the server is the root. Otherwise the root is the last
        // relay, the server hangs off it, and every relay heads a cluster.
        let coord = |i: usize| if hops == 1 { 1 } else { (i + 1).min(hops - 1) };
        let root = coord(hops - 1);
        let mut heads: Vec<NodeId> = (0..hops).map(coord).collect();
        heads.sort_unstable_by(|a, b| b.cmp(a));
        heads.dedup();
        let n = heads.len() as u64;
        let clusters: Vec<Cluster> = heads
            .iter()
            .map(|&h| {
                let idx = (root - h) as u64;
                let mut members: Vec<NodeId> = (0..hops)
                    .filter(|&i| coord(i) == h)
                    .flat_map(|i| [i, i + 1])
                    .collect();
                members.sort_unstable();
                members.dedup();
                Cluster {
                    head: h,
                    offset: SimTime::from_micros(cfg.beacon_interval.as_micros() * idx / n),
                    members,
                    cap_start: SimTime::ZERO,
                    cap_end: SimTime::ZERO,
                }
            })
            .collect();
        let link_cluster = (0..hops)
            .map(|i| heads.iter().position(|&h| h == coord(i)).expect("every link has a head"))
            .collect();
        Ok(BeaconMac {
            cfg,
            clusters,
            link_cluster,
            attempts: vec![None; hops + 1],
            delivered: vec![Vec::new(); hops + 1],
            air: Airspace::new(hops + 1),
            extra_tx: vec![SimTime::ZERO; hops + 1],
            phase: SimTime::ZERO,
        })
    }

    pub fn cluster_heads(&self) -> Vec<NodeId> {
        self.clusters.iter().map(|c| c.head).collect()
    }

    fn cap_open(&self, cluster: usize, at: SimTime) -> bool {
        let c = &self.clusters[cluster];
        at >= c.cap_start && at < c.cap_end
    }

    fn refresh(&self, net: &mut Net<BeaconEv>, node: NodeId) {
        let now = net.now();
        if let Some(a) = self.attempts[node] {
            match a.phase {
                Phase::Transmitting => return net.radio.set(node, PowerState::Transmit, now),
                Phase::AwaitAck => return net.radio.set(node, PowerState::Listen, now),
                _ => {}
            }
        }
        let awake = self
            .clusters
            .iter()
            .enumerate()
            .any(|(i, c)| c.members.contains(&node) && self.cap_open(i, now));
        let state = if awake { PowerState::Listen } else { PowerState::Sleep };
        net.radio.set(node, state, now);
    }

    /// Draws a backoff and schedules the CCA, or defers to the next CAP if
    /// the exchange would cross the end of this one.
    fn backoff(&mut self, net: &mut Net<BeaconEv>, node: NodeId) {
        let mut a = self.attempts[node].expect("backing off an attempt");
        let now = net.now();
        if !self.cap_open(a.cluster, now) {
            a.phase = Phase::Deferred;
            self.attempts[node] = Some(a);
            return;
        }
        let c = &self.clusters[a.cluster];
        let unit = self.cfg.backoff_unit.as_micros();
        let earliest = now.max(c.cap_start + self.cfg.beacon_airtime);
        let since = (earliest - c.cap_start).as_micros().div_ceil(unit) * unit;
        let periods = net.rng(node, Purpose::Backoff).below(1 << a.be);
        let cca = c.cap_start + SimTime::from_micros(since + periods * unit);
        let end = cca + self.cfg.exchange();
        if end > c.cap_end {
            a.phase = Phase::Deferred;
            self.attempts[node] = Some(a);
            return;
        }
        a.phase = Phase::Backoff;
        self.attempts[node] = Some(a);
        net.at(cca + self.cfg.backoff_unit.times(2), node, EventKind::TimerFire, BeaconEv::CcaEnd);
    }

    fn start(&mut self, net: &mut Net<BeaconEv>, node: NodeId, mut a: Attempt) {
        a.nb = 0;
        a.be = self.cfg.min_be;
        self.attempts[node] = Some(a);
        self.backoff(net, node);
    }

    fn finish_attempt(&mut self, net: &mut Net<BeaconEv>, node: NodeId) {
        self.attempts[node] = None;
        self.refresh(net, node);
        self.kick(net, node);
    }

    fn on_cca_end(&mut self, net: &mut Net<BeaconEv>, node: NodeId) {
        let mut a = self.attempts[node].expect("CCA for a live attempt");
        let now = net.now();
        let from = now - self.cfg.backoff_unit.times(2);
        let busy = self.air.overlaps(node, from, now) || net.neighbors(node).any(|n| self.air.overlaps(n, from, now));
        if busy {
            a.nb += 1;
            a.be = (a.be + 1).min(self.cfg.max_be);
            self.attempts[node] = Some(a);
            if a.nb > self.cfg.max_backoffs {
                net.drop_frame(a.frame);
                return self.finish_attempt(net, node);
            }
            return self.backoff(net, node);
        }
        a.phase = Phase::Transmitting;
        a.tx_start = now;
        self.attempts[node] = Some(a);
        self.air.occupy(node, now, now + self.cfg.data_airtime);
        self.refresh(net, node);
        net.at(now + self.cfg.data_airtime, node, EventKind::FrameEnd, BeaconEv::TxEnd);
    }

    fn on_tx_end(&mut self, net: &mut Net<BeaconEv>, node: NodeId) {
        let mut a = self.attempts[node].expect("tx end for a live attempt");
        let now = net.now();
        net.counters.frames_transmitted += 1;
        let rx = a.to;
        let ok = net.survives(node, rx) && !self.air.collides(rx, node, a.tx_start, now);
        a.phase = Phase::AwaitAck;
        self.attempts[node] = Some(a);
        self.refresh(net, node);
        let ack_start = now + self.cfg.turnaround;
        let ack_end = ack_start + self.cfg.ack_airtime;
        let mut acked = false;
        if ok {
            self.air.occupy(rx, ack_start, ack_end);
            self.extra_tx[rx] += self.cfg.ack_airtime;
            acked = net.survives(rx, node);
            if !self.delivered[rx].contains(&a.frame.id) {
                self.delivered[rx].push(a.frame.id);
                net.deliver(rx, a.frame);
            }
        }
        net.at(ack_end, node, EventKind::FrameEnd, BeaconEv::AckEnd { acked });
    }

    fn on_ack_end(&mut self, net: &mut Net<BeaconEv>, node: NodeId, acked: bool) {
        let mut a = self.attempts[node].expect("ack end for a live attempt");
        let now = net.now();
        let rx = a.to;
        let heard = acked && !self.air.collides(node, rx, now - self.cfg.ack_airtime, now);
        if heard {
            return self.finish_attempt(net, node);
        }
        a.retries += 1;
        if a.retries > self.cfg.max_frame_retries {
            net.drop_frame(a.frame);
            return self.finish_attempt(net, node);
        }
        self.start(net, node, a);
        self.refresh(net, node);
    }

    fn on_beacon(&mut self, net: &mut Net<BeaconEv>, cluster: usize) {
        let now = net.now();
        let head = self.clusters[cluster].head;
        let c = &mut self.clusters[cluster];
        c.cap_start = now;
        c.cap_end = now + self.cfg.cap;
        let members = c.members.clone();
        self.air.occupy(head, now, now + self.cfg.beacon_airtime);
        self.extra_tx[head] += self.cfg.beacon_airtime;
        net.at(now + self.cfg.cap, head, EventKind::SlotBoundary, BeaconEv::CapEnd { cluster });
        net.at(now + self.cfg.beacon_interval, head, EventKind::SlotBoundary, BeaconEv::Beacon { cluster });
        for &m in &members {
            self.refresh(net, m);
        }
        for &m in &members {
            match self.attempts[m] {
                Some(a) if a.phase == Phase::Deferred && a.cluster == cluster => self.start(net, m, a),
                None => self.kick(net, m),
                _ => {}
            }
        }
    }
}

impl Mac for BeaconMac {
    type Ev = BeaconEv;

    fn start_time(&mut self, net: &mut Net<BeaconEv>) -> SimTime {
        let bi = self.cfg.beacon_interval.as_micros();
        self.phase = SimTime::from_micros(net.rng(0, Purpose::Phase).below(bi));
        self.cfg.beacon_interval.times(2)
    }

    fn init(&mut self, net: &mut Net<BeaconEv>) {
        for (i, c) in self.clusters.iter().enumerate() {
            net.at(self.phase + c.offset, c.head, EventKind::SlotBoundary, BeaconEv::Beacon { cluster: i });
        }
    }

    fn kick(&mut self, net: &mut Net<BeaconEv>, node: NodeId) {
        if self.attempts[node].is_some() {
            return;
        }
        let Some(frame) = net.head(node) else { return };
        net.pop(node, frame);
        let to = net.next_hop(node, frame.dir);
        let cluster = self.link_cluster[node.min(to)];
        let a = Attempt {
            frame,
            to,
            cluster,
            nb: 0,
            be: self.cfg.min_be,
            retries: 0,
            tx_start: SimTime::ZERO,
            phase: Phase::Deferred,
        };
        self.start(net, node, a);
    }

    fn on_event(&mut self, net: &mut Net<BeaconEv>, node: NodeId, ev: BeaconEv) {
        match ev {
            BeaconEv::Beacon { cluster } => self.on_beacon(net, cluster),
            BeaconEv::CapEnd { cluster } => {
                let members = self.clusters[cluster].members.clone();
                for m in members {
                    self.refresh(net, m);
                }
            }
            BeaconEv::CcaEnd => self.on_cca_end(net, node),
            BeaconEv::TxEnd => self.on_tx_end(net, node),
            BeaconEv::AckEnd { acked } => self.on_ack_end(net, node, acked),
        }
    }

    fn settle(&mut self, ledger: &mut EnergyLedger, _window: SimTime) {
        for (node, &t) in self.extra_tx.iter().enumerate() {
            ledger.transfer(node, PowerState::Listen, PowerState::Transmit, t);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::{run, DriverConfig};

    #[test]
    fn superframe_examples() {
        let ms = |t: SimTime| t.as_secs_f64() * 1000.0;
        let (bi, cap) = superframe_params(6, 2).unwrap();
        assert!((ms(bi) - 983.04).abs() < 1e-9 && (ms(cap) - 61.44).abs() < 1e-9);
        let (bi, cap) = superframe_params(5, 2).unwrap();
        assert!((ms(bi) - 491.52).abs() < 1e-9 && (ms(cap) - 61.44).abs() < 1e-9);
        let (bi, cap) = superframe_params(0, 0).unwrap();
        assert_eq!((bi, cap), (BASE_SUPERFRAME, BASE_SUPERFRAME));
        assert_eq!(superframe_params(3, 4), Err(ModelError::SuperframeOrder { bo: 3, so: 4 }));
        assert_eq!(superframe_params(15, 4), Err(ModelError::BeaconOrder(15)));
    }

    #[test]
    fn tree_shapes() {
        let m = BeaconMac::new(BeaconConfig::default(), 1).unwrap();
        assert_eq!(m.cluster_heads(), vec![1]);
        let m = BeaconMac::new(BeaconConfig::default(), 2).unwrap();
        assert_eq!(m.cluster_heads(), vec![1]);
        let m = BeaconMac::new(BeaconConfig::default(), 4).unwrap();
        assert_eq!(m.cluster_heads(), vec![3, 2, 1]);
        assert_eq!(m.link_cluster, vec![2, 1, 0, 0]);
    }

    fn traced(hops: usize, bo: u8, so: u8, seed: u64) -> crate::mac::RunResult {
        let mut cfg = DriverConfig::new(hops, 1.0);
        cfg.trace = true;
        let mut mac = BeaconMac::new(BeaconConfig::from_orders(bo, so).unwrap(), hops).unwrap();
        run(&mut mac, &cfg, seed).unwrap()
    }

    #[test]
    fn transmissions_stay_inside_the_cap() {
        let cfg = BeaconConfig::from_orders(5, 2).unwrap();
        for hops in 1..=3 {
            let res = traced(hops, 5, 2, 4);
            assert!(res.completed);
            let recs = &res.trace.unwrap().records;
            // Track the latest beacon per head and check every frame end.
            let mut last_beacon = std::collections::HashMap::new();
            for r in recs {
                if r.detail.starts_with("beacon") {
                    last_beacon.insert(r.detail.clone(), r.time_us);
                }
                if r.detail == "tx-end" {
                    let start = r.time_us - cfg.data_airtime.as_micros();
                    let inside = last_beacon.values().any(|&b| start >= b && r.time_us + 1_000 <= b + cfg.cap.as_micros());
                    assert!(inside, "frame at {} outside every CAP", r.time_us);
                }
            }
        }
    }

    #[test]
    fn beacons_are_periodic() {
        let res = traced(3, 4, 2, 8);
        let bi = BeaconConfig::from_orders(4, 2).unwrap().beacon_interval.as_micros();
        for cluster in 0..2 {
            let tag = format!("beacon cluster={cluster}");
            let times: Vec<u64> =
                res.trace.as_ref().unwrap().records.iter().filter(|r| r.detail == tag).map(|r| r.time_us).collect();
            assert!(times.len() > 3);
            assert!(times.windows(2).all(|w| w[1] - w[0] == bi));
        }
    }

    #[test]
    fn leaf_is_awake_exactly_during_caps() {
        let cfg = BeaconConfig::from_orders(6, 2).unwrap();
        for seed in 0..5 {
            let res = traced(1, 6, 2, seed);
            assert!(res.completed);
            // The run stops at the final receive, which happens inside a CAP,
            // and the window then extends by the processing time.
            let tail = DriverConfig::new(1, 1.0).processing.as_micros();
            let (from, to) = (res.start.as_micros(), res.end.as_micros() - tail);
            let cap = cfg.cap.as_micros();
            let expected: u64 = res
                .trace
                .as_ref()
                .unwrap()
                .records
                .iter()
                .filter(|r| r.detail.starts_with("beacon"))
                .map(|r| (r.time_us + cap).min(to).saturating_sub(r.time_us.max(from)))
                .sum::<u64>()
                + tail;
            let on = res.ledger.node(0).time(PowerState::Listen) + res.ledger.node(0).time(PowerState::Transmit);
            assert_eq!(on.as_micros(), expected);
        }
    }

    #[test]
    fn ledger_partitions_time() {
        let res = traced(2, 6, 2, 1);
        let window = res.end - res.start;
        for n in 0..3 {
            assert_eq!(res.ledger.node(n).radio_total(), window);
            assert_eq!(res.ledger.node(n).cpu_total(), window);
        }
    }
}
