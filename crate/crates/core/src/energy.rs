//! Time-in-state accounting and conversion to energy.
//!
//! Radio states partition each node's time, and so do the two CPU states.
//! Times are kept in integer microseconds so the partition is exact.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::sim::{NodeId, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PowerState {
    Transmit,
    Listen,
    Sleep,
    CpuActive,
    CpuLpm,
}

impl PowerState {
    pub const ALL: [PowerState; 5] =
        [PowerState::Transmit, PowerState::Listen, PowerState::Sleep, PowerState::CpuActive, PowerState::CpuLpm];

    pub fn is_radio(self) -> bool {
        matches!(self, PowerState::Transmit | PowerState::Listen | PowerState::Sleep)
    }

    fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            PowerState::Transmit => "transmit",
            PowerState::Listen => "listen",
            PowerState::Sleep => "sleep",
            PowerState::CpuActive => "cpu-active",
            PowerState::CpuLpm => "cpu-lpm",
        }
    }
}

impl fmt::Display for PowerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PowerState {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, ModelError> {
        Ok(match s {
            "transmit" | "tx" => PowerState::Transmit,
            "listen" | "receive" | "rx" => PowerState::Listen,
            "sleep" => PowerState::Sleep,
            "cpu-active" | "cpu_active" => PowerState::CpuActive,
            "cpu-lpm" | "cpu_lpm" => PowerState::CpuLpm,
            other => return Err(ModelError::UnknownState(other.to_string())),
        })
    }
}

/// Supply voltage and per-state current draw. Defaults are CC2520-class
/// figures, illustrative only.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioPowerProfile {
    pub voltage: f64,
    pub tx_ma: Option<f64>,
    pub rx_ma: Option<f64>,
    pub sleep_ma: Option<f64>,
    pub cpu_active_ma: Option<f64>,
    pub cpu_lpm_ma: Option<f64>,
}

impl Default for RadioPowerProfile {
    fn default() -> Self {
        RadioPowerProfile {
            voltage: 2.8,
            tx_ma: Some(25.8),
            rx_ma: Some(18.5),
            sleep_ma: Some(0.001),
            cpu_active_ma: Some(2.0),
            cpu_lpm_ma: Some(0.002),
        }
    }
}

impl RadioPowerProfile {
    pub fn current_ma(&self, state: PowerState) -> Result<f64, ModelError> {
        let v = match state {
            PowerState::Transmit => self.tx_ma,
            PowerState::Listen => self.rx_ma,
            PowerState::Sleep => self.sleep_ma,
            PowerState::CpuActive => self.cpu_active_ma,
            PowerState::CpuLpm => self.cpu_lpm_ma,
        };
        v.ok_or(ModelError::MissingProfileEntry(state.name()))
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.voltage > 0.0) {
            return Err(ModelError::param("voltage", "must be positive"));
        }
        for s in PowerState::ALL {
            if let Ok(i) = self.current_ma(s) {
                if !(i >= 0.0) {
                    return Err(ModelError::param("current", format!("{s} current must be >= 0")));
                }
            }
        }
        if let (Ok(tx), Ok(rx), Ok(sl)) = (
            self.current_ma(PowerState::Transmit),
            self.current_ma(PowerState::Listen),
            self.current_ma(PowerState::Sleep),
        ) {
            if tx <= sl || rx <= sl {
                return Err(ModelError::param("current", "transmit and receive must exceed sleep"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeLedger {
    micros: [u64; 5],
}

impl NodeLedger {
    pub fn time(&self, state: PowerState) -> SimTime {
        SimTime::from_micros(self.micros[state.slot()])
    }

    pub fn radio_total(&self) -> SimTime {
        SimTime::from_micros(self.micros[0] + self.micros[1] + self.micros[2])
    }

    pub fn cpu_total(&self) -> SimTime {
        SimTime::from_micros(self.micros[3] + self.micros[4])
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnergyLedger {
    nodes: Vec<NodeLedger>,
}

impl EnergyLedger {
    pub fn new(nodes: usize) -> Self {
        EnergyLedger { nodes: vec![NodeLedger::default(); nodes] }
    }

    fn node_mut(&mut self, node: NodeId) -> &mut NodeLedger {
        if node >= self.nodes.len() {
            self.nodes.resize(node + 1, NodeLedger::default());
        }
        &mut self.nodes[node]
    }

    pub fn add(&mut self, node: NodeId, state: PowerState, dt: SimTime) {
        self.node_mut(node).micros[state.slot()] += dt.as_micros();
    }

    /// Moves up to `dt` from one state to another of the same partition.
    pub fn transfer(&mut self, node: NodeId, from: PowerState, to: PowerState, dt: SimTime) -> SimTime {
        debug_assert_eq!(from.is_radio(), to.is_radio());
        let n = self.node_mut(node);
        let moved = dt.as_micros().min(n.micros[from.slot()]);
        n.micros[from.slot()] -= moved;
        n.micros[to.slot()] += moved;
        SimTime::from_micros(moved)
    }

    /// Seconds-based entry point; `state` is a name such as "listen".
    pub fn accumulate(&mut self, node: NodeId, state: &str, dt_secs: f64) -> Result<(), ModelError> {
        let state: PowerState = state.parse()?;
        if !(dt_secs >= 0.0) {
            return Err(ModelError::param("dt", "must be >= 0"));
        }
        self.add(node, state, SimTime::from_secs_f64(dt_secs));
        Ok(())
    }

    pub fn node(&self, node: NodeId) -> NodeLedger {
        self.nodes.get(node).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn seconds(&self, node: NodeId, state: PowerState) -> f64 {
        self.node(node).time(state).as_secs_f64()
    }

    pub fn clear(&mut self) {
        self.nodes.iter_mut().for_each(|n| *n = NodeLedger::default());
    }
}

/// Energy consumed by `node`, in millijoules.
pub fn energy_mj(ledger: &EnergyLedger, profile: &RadioPowerProfile, node: NodeId) -> Result<f64, ModelError> {
    let n = ledger.node(node);
    let mut mj = 0.0;
    for s in PowerState::ALL {
        let t = n.time(s).as_secs_f64();
        if t > 0.0 {
            mj += t * profile.current_ma(s)? * profile.voltage;
        }
    }
    // seconds * mA * V = mJ
    Ok(mj)
}

/// Fraction of a battery of `battery_j` joules used by `energy_mj`.
pub fn battery_fraction(energy_mj: f64, battery_j: f64) -> f64 {
    assert!(battery_j > 0.0, "battery capacity must be positive");
    energy_mj / (1000.0 * battery_j)
}

/// Per-node radio state with contiguous accounting into an [`EnergyLedger`].
#[derive(Debug, Clone)]
pub struct RadioTimeline {
    state: Vec<(PowerState, SimTime)>,
    cpu_active: Vec<SimTime>,
    origin: SimTime,
    pub ledger: EnergyLedger,
}

impl RadioTimeline {
    pub fn new(nodes: usize) -> Self {
        RadioTimeline {
            state: vec![(PowerState::Sleep, SimTime::ZERO); nodes],
            cpu_active: vec![SimTime::ZERO; nodes],
            origin: SimTime::ZERO,
            ledger: EnergyLedger::new(nodes),
        }
    }

    pub fn state(&self, node: NodeId) -> PowerState {
        self.state[node].0
    }

    pub fn set(&mut self, node: NodeId, to: PowerState, now: SimTime) {
        debug_assert!(to.is_radio());
        let (from, since) = self.state[node];
        if from == to {
            return;
        }
        let since = since.max(self.origin);
        if now > since {
            self.ledger.add(node, from, now - since);
        }
        self.state[node] = (to, now.max(since));
    }

    /// Closes a transmit stretch of which only `on_air` was spent
    /// transmitting; the remainder (gaps between strobes) is listening.
    pub fn set_split(&mut self, node: NodeId, to: PowerState, now: SimTime, on_air: SimTime) {
        let (from, since) = self.state[node];
        let since = since.max(self.origin);
        if from == PowerState::Transmit && now > since {
            let span = now - since;
            let tx = on_air.min(span);
            self.ledger.add(node, PowerState::Transmit, tx);
            self.ledger.add(node, PowerState::Listen, span - tx);
            self.state[node] = (to, now);
        } else {
            self.set(node, to, now);
        }
    }

    pub fn add_cpu(&mut self, node: NodeId, dt: SimTime) {
        self.cpu_active[node] += dt;
    }

    /// Discards everything accounted so far and restarts at `now`.
    pub fn reset_window(&mut self, now: SimTime) {
        self.ledger.clear();
        self.cpu_active.iter_mut().for_each(|c| *c = SimTime::ZERO);
        self.origin = now;
        for s in &mut self.state {
            s.1 = s.1.max(now);
        }
    }

    /// Flushes open states up to `now` and fills the CPU columns so both
    /// partitions sum to the window length.
    pub fn finalize(mut self, now: SimTime) -> EnergyLedger {
        for node in 0..self.state.len() {
            let (s, since) = self.state[node];
            let since = since.max(self.origin);
            if now > since {
                self.ledger.add(node, s, now - since);
            }
            let window = now.saturating_sub(self.origin);
            let active = self.cpu_active[node].min(window);
            self.ledger.add(node, PowerState::CpuActive, active);
            self.ledger.add(node, PowerState::CpuLpm, window - active);
        }
        self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accumulate_is_additive() {
        let mut l = EnergyLedger::new(1);
        l.accumulate(0, "listen", 1.0).unwrap();
        l.accumulate(0, "listen", 1.0).unwrap();
        assert_eq!(l.seconds(0, PowerState::Listen), 2.0);
        let before = l.clone();
        l.accumulate(0, "sleep", 0.0).unwrap();
        assert_eq!(l, before);
    }

    #[test]
    fn unknown_state_and_negative_dt_rejected() {
        let mut l = EnergyLedger::new(1);
        assert!(matches!(l.accumulate(0, "warp", 1.0), Err(ModelError::UnknownState(_))));
        assert!(l.accumulate(0, "listen", -1.0).is_err());
    }

    #[test]
    fn energy_arithmetic() {
        let mut l = EnergyLedger::new(1);
        l.accumulate(0, "transmit", 1.0).unwrap();
        let p = RadioPowerProfile { tx_ma: Some(20.0), ..Default::default() };
        assert!((energy_mj(&l, &p, 0).unwrap() - 56.0).abs() < 1e-9);
    }

    #[test]
    fn zero_current_gives_zero_energy() {
        let mut l = EnergyLedger::new(1);
        l.accumulate(0, "sleep", 100.0).unwrap();
        let p = RadioPowerProfile { sleep_ma: Some(0.0), ..Default::default() };
        assert_eq!(energy_mj(&l, &p, 0).unwrap(), 0.0);
    }

    #[test]
    fn missing_profile_entry_rejected() {
        let mut l = EnergyLedger::new(1);
        l.accumulate(0, "cpu-active", 1.0).unwrap();
        let p = RadioPowerProfile { cpu_active_ma: None, ..Default::default() };
        assert!(matches!(energy_mj(&l, &p, 0), Err(ModelError::MissingProfileEntry("cpu-active"))));
    }

    #[test]
    fn battery_fraction_values() {
        let f = battery_fraction(29.05, 201.6);
        assert!((f * 100.0 - 0.0144).abs() < 0.0001, "{f}");
        assert_eq!(battery_fraction(0.0, 3.0), 0.0);
        assert_eq!(battery_fraction(1000.0, 1.0), 1.0);
    }

    #[test]
    fn profile_validation() {
        assert!(RadioPowerProfile::default().validate().is_ok());
        let bad = RadioPowerProfile { tx_ma: Some(0.0), ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn timeline_partitions_time() {
        let ms = SimTime::from_millis;
        let mut t = RadioTimeline::new(2);
        t.set(0, PowerState::Listen, ms(10));
        t.set(0, PowerState::Transmit, ms(15));
        t.set_split(0, PowerState::Sleep, ms(25), ms(4));
        t.add_cpu(0, ms(3));
        t.set(1, PowerState::Listen, ms(50));
        let l = t.finalize(ms(100));
        for node in 0..2 {
            assert_eq!(l.node(node).radio_total(), ms(100));
            assert_eq!(l.node(node).cpu_total(), ms(100));
        }
        assert_eq!(l.node(0).time(PowerState::Transmit), ms(4));
        assert_eq!(l.node(0).time(PowerState::Listen), ms(11));
        assert_eq!(l.node(1).time(PowerState::Listen), ms(50));
    }

    #[test]
    fn reset_window_restarts_accounting() {
        let ms = SimTime::from_millis;
        let mut t = RadioTimeline::new(1);
        t.set(0, PowerState::Listen, ms(0));
        t.reset_window(ms(40));
        t.set(0, PowerState::Sleep, ms(50));
        let l = t.finalize(ms(60));
        assert_eq!(l.node(0).time(PowerState::Listen), ms(10));
        assert_eq!(l.node(0).radio_total(), ms(20));
    }

    #[test]
    fn energy_monotone_in_state_time() {
        let p = RadioPowerProfile::default();
        let mut l = EnergyLedger::new(1);
        let mut prev = 0.0;
        for s in PowerState::ALL {
            l.accumulate(0, s.name(), 0.5).unwrap();
            let e = energy_mj(&l, &p, 0).unwrap();
            assert!(e > prev);
            prev = e;
        }
    }
}
