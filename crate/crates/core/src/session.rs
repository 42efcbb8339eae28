//! DTLS server session slots and finite-source blocking.
//!
//! The blocking simulation is a continuous-time Markov chain: each idle
//! client attempts a session at rate lambda, each open session closes at
//! rate mu, and an attempt that finds all `r` slots taken is rejected.

use log::warn;
use rand_distr::{Distribution, Exp};

use crate::error::ModelError;
use crate::sim::{NodeId, Purpose, RngStream};
use crate::stats;

/// Session slots that fit in `ram_budget_bytes`.
pub fn max_sessions(ram_budget_bytes: u64, per_session_bytes: u64) -> u64 {
    assert!(per_session_bytes > 0, "per-session size must be positive");
    ram_budget_bytes / per_session_bytes
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientPopulation {
    pub n: u32,
    /// Session attempt rate of one idle client, 1/s.
    pub lambda: f64,
    /// Session termination rate, 1/s.
    pub mu: f64,
}

impl ClientPopulation {
    pub fn with_load(n: u32, rho: f64) -> Self {
        ClientPopulation { n, lambda: rho, mu: 1.0 }
    }

    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }
}

/// Fixed-size slot table that rejects arrivals when full.
#[derive(Debug, Clone)]
pub struct SlotServer {
    r: usize,
    occupied: Vec<(NodeId, f64)>,
}

impl SlotServer {
    pub fn new(r: usize) -> Self {
        SlotServer { r, occupied: Vec::with_capacity(r) }
    }

    pub fn capacity(&self) -> usize {
        self.r
    }

    pub fn busy(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_full(&self) -> bool {
        self.occupied.len() >= self.r
    }

    /// Admits `client` until `release_at`, or returns false without touching
    /// the table.
    pub fn try_admit(&mut self, client: NodeId, release_at: f64) -> bool {
        if self.is_full() {
            return false;
        }
        self.occupied.push((client, release_at));
        true
    }

    pub fn release(&mut self, client: NodeId) -> bool {
        match self.occupied.iter().position(|&(c, _)| c == client) {
            Some(i) => {
                self.occupied.swap_remove(i);
                true
            }
            None => false,
        }
    }

    /// Session with the earliest release time.
    pub fn next_release(&self) -> Option<(NodeId, f64)> {
        self.occupied.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn sessions(&self) -> &[(NodeId, f64)] {
        &self.occupied
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// 95% half-width from batch means; `None` with fewer than two batches.
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockingEstimate {
    /// Fraction of arrivals that were rejected.
    pub call: Estimate,
    /// Fraction of time every slot was busy.
    pub time: Estimate,
    pub arrivals: u64,
    pub blocked: u64,
    /// Fewer than 10^4 arrivals were observed.
    pub short_run: bool,
}

pub const MIN_ARRIVALS: u64 = 10_000;
const BATCHES: usize = 50;

/// Simulates the finite-source loss system for `horizon` seconds.
pub fn simulate_blocking(
    pop: ClientPopulation,
    r: u32,
    horizon: f64,
    seed: u64,
) -> Result<BlockingEstimate, ModelError> {
    if pop.n == 0 {
        return Err(ModelError::param("n", "population must be non-empty"));
    }
    if !(pop.lambda > 0.0) || !(pop.mu > 0.0) {
        return Err(ModelError::param("rate", "lambda and mu must be positive"));
    }
    if !(horizon > 0.0) {
        return Err(ModelError::param("horizon", "must be positive"));
    }

    let mut rng = RngStream::new(seed, 0, Purpose::Arrivals);
    let mut server = SlotServer::new(r as usize);
    let n = pop.n as usize;
    let mut active = vec![false; n];

    let batch_len = horizon / BATCHES as f64;
    let mut batch_arrivals = vec![0u64; BATCHES];
    let mut batch_blocked = vec![0u64; BATCHES];
    let mut batch_full_time = vec![0f64; BATCHES];

    let mut t = 0.0;
    let (mut arrivals, mut blocked) = (0u64, 0u64);
    let holding = Exp::new(pop.mu).expect("positive mu");
    while t < horizon {
        let idle = n - server.busy();
        let next_arrival = if idle > 0 {
            t + Exp::new(idle as f64 * pop.lambda).expect("positive rate").sample(rng.rng_mut())
        } else {
            f64::INFINITY
        };
        let next_release = server.next_release();
        let next = next_release.map_or(next_arrival, |(_, at)| at.min(next_arrival));
        let end = next.min(horizon);
        if server.is_full() {
            credit_interval(&mut batch_full_time, batch_len, t, end);
        }
        t = next;
        if t >= horizon {
            break;
        }
        match next_release {
            Some((client, at)) if at <= next_arrival => {
                active[client] = false;
                server.release(client);
            }
            _ => {
                let b = ((t / batch_len) as usize).min(BATCHES - 1);
                let client = nth_matching(&active, false, rng.below(idle as u64) as usize);
                arrivals += 1;
                batch_arrivals[b] += 1;
                if server.try_admit(client, t + holding.sample(rng.rng_mut())) {
                    active[client] = true;
                } else {
                    blocked += 1;
                    batch_blocked[b] += 1;
                }
            }
        }
    }

    let short_run = arrivals < MIN_ARRIVALS;
    if short_run {
        warn!("blocking simulation saw only {arrivals} arrivals; extend the horizon for >= {MIN_ARRIVALS}");
    }

    let call_batches: Vec<f64> = batch_arrivals
        .iter()
        .zip(&batch_blocked)
        .filter(|(a, _)| **a > 0)
        .map(|(a, b)| *b as f64 / *a as f64)
        .collect();
    let time_batches: Vec<f64> = batch_full_time.iter().map(|x| x / batch_len).collect();

    let call = Estimate {
        value: if arrivals > 0 { blocked as f64 / arrivals as f64 } else { 0.0 },
        ci95: stats::ci95_half_width(&call_batches),
    };
    let time = Estimate {
        value: batch_full_time.iter().sum::<f64>() / horizon,
        ci95: stats::ci95_half_width(&time_batches),
    };
    Ok(BlockingEstimate { call, time, arrivals, blocked, short_run })
}

fn nth_matching(flags: &[bool], want: bool, k: usize) -> usize {
    flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f == want)
        .nth(k)
        .map(|(i, _)| i)
        .expect("index within matching count")
}

fn credit_interval(bins: &mut [f64], width: f64, mut from: f64, to: f64) {
    while from < to {
        let b = ((from / width) as usize).min(bins.len() - 1);
        let edge = if b == bins.len() - 1 { to } else { ((b + 1) as f64 * width).min(to) };
        bins[b] += edge - from;
        from = edge;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{engset_call_congestion, engset_time_congestion, EngsetQuery};

    #[test]
    fn slot_arithmetic() {
        assert_eq!(max_sessions(1200, 400), 3);
        assert_eq!(max_sessions(0, 400), 0);
        assert_eq!(max_sessions(2000, 400), 5);
    }

    #[test]
    fn full_server_rejects_without_mutation() {
        let mut s = SlotServer::new(2);
        assert!(s.try_admit(1, 5.0));
        assert!(s.try_admit(2, 6.0));
        let before = s.sessions().to_vec();
        assert!(!s.try_admit(3, 7.0));
        assert_eq!(s.sessions(), &before[..]);
        assert!(s.release(1));
        assert!(!s.release(1));
        assert!(s.try_admit(3, 7.0));
    }

    #[test]
    fn empty_population_rejected() {
        assert!(simulate_blocking(ClientPopulation::with_load(0, 0.5), 3, 100.0, 1).is_err());
    }

    #[test]
    fn no_blocking_when_slots_cover_population() {
        let est = simulate_blocking(ClientPopulation::with_load(4, 2.0), 4, 5_000.0, 3).unwrap();
        assert_eq!(est.blocked, 0);
        assert!(est.arrivals > 0);
    }

    #[test]
    fn matches_engset_at_reference_point() {
        let pop = ClientPopulation::with_load(5, 0.5);
        let est = simulate_blocking(pop, 3, 20_000.0, 11).unwrap();
        assert!(est.arrivals >= MIN_ARRIVALS, "{}", est.arrivals);
        let q = EngsetQuery::new(5, 3, 0.5);
        let call = engset_call_congestion(q).unwrap();
        let time = engset_time_congestion(q).unwrap();
        assert!((est.call.value - call).abs() <= est.call.ci95.unwrap(), "{est:?}");
        assert!((est.time.value - time).abs() <= est.time.ci95.unwrap(), "{est:?}");
        assert!(est.time.value > est.call.value);
    }

    #[test]
    fn heavy_load_saturates() {
        let est = simulate_blocking(ClientPopulation::with_load(5, 50.0), 3, 500.0, 5).unwrap();
        assert!(est.time.value > 0.95, "{est:?}");
    }

    #[test]
    fn short_horizon_is_flagged() {
        let est = simulate_blocking(ClientPopulation::with_load(5, 0.5), 3, 10.0, 5).unwrap();
        assert!(est.short_run);
    }

    #[test]
    fn interval_crediting_spans_bins() {
        let mut bins = vec![0.0; 4];
        credit_interval(&mut bins, 1.0, 0.5, 2.25);
        assert_eq!(bins, vec![0.5, 1.0, 0.25, 0.0]);
    }
}
