//! TSCH: slotted time, repeating slotframes, dedicated cells per directed
//! link, link-layer ACK inside the timeslot. A failed cell is retried at the
//! link's next cell without limit.

use std::fmt;

use rand::seq::index;
use rand::RngCore;

use super::{dir_index, Mac, Net};
use crate::dtls::Direction;
use crate::energy::{EnergyLedger, PowerState};
use crate::error::ModelError;
use crate::sim::{EventKind, NodeId, Purpose, RngStream, SimTime};

#[derive(Debug, Clone, PartialEq)]
pub struct TschConfig {
    pub slotframe: u32,
    /// Cells per slotframe for each hop, used in both directions.
    pub cells: Vec<u32>,
    pub slot: SimTime,
    pub data_airtime: SimTime,
    pub ack_airtime: SimTime,
    /// Receiver listening in a cell that carries no frame.
    pub idle_listen: SimTime,
}

impl TschConfig {
    pub fn new(slotframe: u32, cells: u32, hops: usize) -> Self {
        TschConfig {
            slotframe,
            cells: vec![cells; hops],
            slot: SimTime::from_millis(10),
            data_airtime: SimTime::from_micros(4_300),
            ack_airtime: SimTime::from_micros(350),
            idle_listen: SimTime::from_micros(2_200),
        }
    }

    fn link_demand(&self) -> Vec<u32> {
        self.cells.iter().flat_map(|&c| [c, c]).collect()
    }
}

/// Directed link id: hop `h` towards the server is `2h`, back is `2h + 1`.
pub fn link_id(hop: usize, dir: Direction) -> usize {
    2 * hop + dir_index(dir)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TschSchedule {
    slotframe: u32,
    links: Vec<Vec<u32>>,
}

impl TschSchedule {
    pub fn slotframe(&self) -> u32 {
        self.slotframe
    }

    pub fn cells(&self, link: usize) -> &[u32] {
        &self.links[link]
    }

    pub fn links(&self) -> usize {
        self.links.len()
    }

    /// Link that owns `offset`, if any.
    pub fn owner(&self, offset: u32) -> Option<usize> {
        self.links.iter().position(|c| c.contains(&offset))
    }

    /// First absolute slot number `>= from` that belongs to `link`.
    pub fn next_cell(&self, link: usize, from: u64) -> u64 {
        let l = u64::from(self.slotframe);
        let here = from % l;
        let wait = self.links[link]
            .iter()
            .map(|&o| (u64::from(o) + l - here) % l)
            .min()
            .expect("every link has at least one cell");
        from + wait
    }
}

/// Places each link's cells at slot offsets drawn uniformly without
/// replacement, so no offset serves two links.
pub fn build_uniform_schedule(slotframe: u32, cells_per_link: &[u32], seed: u64) -> Result<TschSchedule, ModelError> {
    if slotframe == 0 {
        return Err(ModelError::param("l", "slotframe length must be positive"));
    }
    if cells_per_link.contains(&0) {
        return Err(ModelError::param("c", "every link needs at least one cell"));
    }
    let demand: u64 = cells_per_link.iter().map(|&c| u64::from(c)).sum();
    if demand > u64::from(slotframe) {
        return Err(ModelError::InfeasibleSchedule { demand, length: u64::from(slotframe) });
    }
    let mut rng = RngStream::new(seed, 0, Purpose::Schedule);
    let picks = index::sample(rng.rng_mut(), slotframe as usize, demand as usize).into_vec();
    let mut it = picks.into_iter();
    let links = cells_per_link
        .iter()
        .map(|&c| {
            let mut v: Vec<u32> = it.by_ref().take(c as usize).map(|o| o as u32).collect();
            v.sort_unstable();
            v
        })
        .collect();
    Ok(TschSchedule { slotframe, links })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellEnd {
    pub link: usize,
    pub asn: u64,
}

impl fmt::Display for CellEnd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cell link={} asn={}", self.link, self.asn)
    }
}

pub struct Tsch {
    cfg: TschConfig,
    schedule: Option<TschSchedule>,
    /// A cell is already booked for the link's head frame.
    booked: Vec<bool>,
    tx: Vec<SimTime>,
    listen: Vec<SimTime>,
    busy_rx_cells: Vec<u64>,
}

impl Tsch {
    pub fn new(cfg: TschConfig) -> Result<Self, ModelError> {
        if cfg.slot.as_micros() == 0 {
            return Err(ModelError::param("slot_ms", "must be positive"));
        }
        let airtime = cfg.data_airtime + cfg.ack_airtime;
        if airtime > cfg.slot || cfg.idle_listen > cfg.slot {
            return Err(ModelError::param("slot_ms", "frame and ACK must fit in one timeslot"));
        }
        let demand: u64 = cfg.link_demand().iter().map(|&c| u64::from(c)).sum();
        if cfg.cells.contains(&0) {
            return Err(ModelError::param("c", "every link needs at least one cell"));
        }
        if demand > u64::from(cfg.slotframe) {
            return Err(ModelError::InfeasibleSchedule { demand, length: u64::from(cfg.slotframe) });
        }
        let n = cfg.cells.len() + 1;
        Ok(Tsch {
            booked: vec![false; 2 * cfg.cells.len()],
            tx: vec![SimTime::ZERO; n],
            listen: vec![SimTime::ZERO; n],
            busy_rx_cells: vec![0; n],
            schedule: None,
            cfg,
        })
    }

    pub fn schedule(&self) -> Option<&TschSchedule> {
        self.schedule.as_ref()
    }

    fn period(&self) -> SimTime {
        self.cfg.slot.times(u64::from(self.cfg.slotframe))
    }

    fn book(&mut self, net: &mut Net<CellEnd>, node: NodeId, dir: Direction) {
        if net.head_dir(node, dir).is_none() {
            return;
        }
        let hop = match dir {
            Direction::ClientToServer => node,
            Direction::ServerToClient => node - 1,
        };
        let link = link_id(hop, dir);
        if self.booked[link] {
            return;
        }
        let slot = self.cfg.slot.as_micros();
        let from = net.now().as_micros().div_ceil(slot);
        let asn = self.schedule.as_ref().expect("built at start").next_cell(link, from);
        self.booked[link] = true;
        net.at(SimTime::from_micros((asn + 1) * slot), node, EventKind::FrameEnd, CellEnd { link, asn });
    }
}

impl Mac for Tsch {
    type Ev = CellEnd;

    fn start_time(&mut self, net: &mut Net<CellEnd>) -> SimTime {
        let seed = net.rng(0, Purpose::Schedule).rng_mut().next_u64();
        let sched = build_uniform_schedule(self.cfg.slotframe, &self.cfg.link_demand(), seed)
            .expect("demand checked in Tsch::new");
        self.schedule = Some(sched);
        // Ready at a uniform instant within the second slotframe.
        let period = self.period().as_micros();
        let phase = net.rng(0, Purpose::Start).below(period);
        SimTime::from_micros(period + phase)
    }

    fn init(&mut self, _net: &mut Net<CellEnd>) {}

    fn kick(&mut self, net: &mut Net<CellEnd>, node: NodeId) {
        self.book(net, node, Direction::ClientToServer);
        self.book(net, node, Direction::ServerToClient);
    }

    fn on_event(&mut self, net: &mut Net<CellEnd>, node: NodeId, ev: CellEnd) {
        let dir = if ev.link.is_multiple_of(2) { Direction::ClientToServer } else { Direction::ServerToClient };
        self.booked[ev.link] = false;
        let Some(frame) = net.head_dir(node, dir) else {
            return;
        };
        let rx = net.next_hop(node, dir);
        net.counters.frames_transmitted += 1;
        let (d, a) = (self.cfg.data_airtime, self.cfg.ack_airtime);
        self.tx[node] += d;
        self.listen[rx] += d;
        self.busy_rx_cells[rx] += 1;
        if net.survives(node, rx) {
            self.tx[rx] += a;
            self.listen[node] += a;
            net.pop(node, frame);
            net.deliver(rx, frame);
        } else {
            // No ACK: the sender listens out the ACK window and retries.
            self.listen[node] += a;
        }
        self.book(net, node, dir);
    }

    fn settle(&mut self, ledger: &mut EnergyLedger, window: SimTime) {
        let Some(sched) = &self.schedule else { return };
        let frames = window.as_micros() as f64 / self.period().as_micros() as f64;
        for node in 0..self.tx.len() {
            let mut rx_cells = 0u64;
            for (link, cells) in sched.links.iter().enumerate() {
                let hop = link / 2;
                let receiver = if link % 2 == 0 { hop + 1 } else { hop };
                if receiver == node {
                    rx_cells += cells.len() as u64;
                }
            }
            let scheduled = (frames * rx_cells as f64).floor() as u64;
            let idle = scheduled.saturating_sub(self.busy_rx_cells[node]);
            let listen = self.listen[node] + self.cfg.idle_listen.times(idle);
            ledger.transfer(node, PowerState::Sleep, PowerState::Transmit, self.tx[node]);
            ledger.transfer(node, PowerState::Sleep, PowerState::Listen, listen);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dtls::{Backoff, FlightPlan, RetransmitPolicy};
    use crate::mac::{run, DriverConfig, Workload};

    #[test]
    fn single_link_single_cell() {
        let s = build_uniform_schedule(101, &[1], 7).unwrap();
        assert_eq!(s.cells(0).len(), 1);
        assert!(s.cells(0)[0] < 101);
    }

    #[test]
    fn four_hop_chain_offsets_distinct() {
        let s = build_uniform_schedule(101, &[1; 4], 3).unwrap();
        let mut all: Vec<u32> = (0..4).flat_map(|l| s.cells(l).to_vec()).collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn infeasible_demand_rejected() {
        assert_eq!(
            build_uniform_schedule(5, &[3, 3], 1),
            Err(ModelError::InfeasibleSchedule { demand: 6, length: 5 })
        );
    }

    #[test]
    fn offsets_are_uniform() {
        // Chi-square over 10 bins of a 101-slot frame, 10^4 seeds.
        let bins = 10usize;
        let mut hist = vec![0f64; bins];
        let n = 10_000;
        for seed in 0..n {
            let s = build_uniform_schedule(100, &[1], seed).unwrap();
            hist[s.cells(0)[0] as usize * bins / 100] += 1.0;
        }
        let expect = n as f64 / bins as f64;
        let chi2: f64 = hist.iter().map(|h| (h - expect).powi(2) / expect).sum();
        // 95th percentile of chi-square with 9 degrees of freedom.
        assert!(chi2 < 16.919, "chi2 = {chi2}");
    }

    #[test]
    fn next_cell_wraps() {
        let s = TschSchedule { slotframe: 10, links: vec![vec![2, 7]] };
        assert_eq!(s.next_cell(0, 0), 2);
        assert_eq!(s.next_cell(0, 2), 2);
        assert_eq!(s.next_cell(0, 3), 7);
        assert_eq!(s.next_cell(0, 8), 12);
    }

    fn probe(l: u32, c: u32, pdr: f64, reps: u64) -> f64 {
        let mut cfg = DriverConfig::new(1, pdr);
        cfg.plan = Arc::new(FlightPlan::from_counts(&[1, 1]).unwrap());
        cfg.policy = RetransmitPolicy { backoff: Backoff::Flat, initial: SimTime::from_millis(1_000_000), ..Default::default() };
        cfg.processing = SimTime::ZERO;
        cfg.workload = Workload::FirstDelivery;
        let total: f64 = (0..reps)
            .map(|seed| {
                let mut mac = Tsch::new(TschConfig::new(l, c, 1)).unwrap();
                run(&mut mac, &cfg, seed).unwrap().duration().unwrap()
            })
            .sum();
        total / reps as f64 / 0.010
    }

    #[test]
    fn single_frame_latency_tracks_slot_model() {
        for l in [101, 1001] {
            for c in 1..=3 {
                let slots = probe(l, c, 1.0, 2_000);
                let model = 1.0 + f64::from(l) / f64::from(c + 1);
                assert!((slots / model - 1.0).abs() < 0.05, "L={l} C={c}: {slots} vs {model}");
            }
        }
    }

    #[test]
    fn lossy_link_retries_at_next_cell() {
        // Uniform wait for the first cell, then a full slotframe per retry.
        let slots = probe(101, 1, 0.5, 4_000);
        let oracle = 101.0 / 2.0 + 1.0 + (1.0 / 0.5 - 1.0) * 101.0;
        assert!((slots / oracle - 1.0).abs() < 0.05, "{slots} vs {oracle}");
    }

    #[test]
    fn backlogged_link_delivers_one_slotframe_apart() {
        let mut cfg = DriverConfig::new(1, 1.0);
        cfg.trace = true;
        cfg.plan = Arc::new(FlightPlan::from_counts(&[3, 1]).unwrap());
        cfg.workload = Workload::Handshake;
        let mut mac = Tsch::new(TschConfig::new(101, 1, 1)).unwrap();
        let res = run(&mut mac, &cfg, 9).unwrap();
        let times: Vec<u64> = res
            .trace
            .unwrap()
            .records
            .iter()
            .filter(|r| r.detail.starts_with("cell link=0"))
            .map(|r| r.time_us)
            .collect();
        assert_eq!(times.len(), 3);
        assert_eq!(times[1] - times[0], 1_010_000);
        assert_eq!(times[2] - times[1], 1_010_000);
    }
}
