//! Closed-form latency and blocking models.

use crate::error::ModelError;

/// One hop of a TSCH path: dedicated cells per slotframe and delivery ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hop {
    pub cells: u32,
    pub pdr: f64,
}

impl Hop {
    pub fn new(cells: u32, pdr: f64) -> Self {
        Hop { cells, pdr }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TschLatencyQuery {
    pub slotframe: u32,
    pub hops: Vec<Hop>,
    pub frames: u32,
    pub slot_secs: f64,
}

impl TschLatencyQuery {
    pub fn new(slotframe: u32, hops: Vec<Hop>) -> Self {
        TschLatencyQuery { slotframe, hops, frames: 10, slot_secs: 0.010 }
    }

    pub fn uniform(slotframe: u32, cells: u32, pdr: f64, hops: usize) -> Self {
        Self::new(slotframe, vec![Hop::new(cells, pdr); hops])
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.slotframe == 0 {
            return Err(ModelError::param("l", "slotframe length must be >= 1"));
        }
        if self.frames == 0 {
            return Err(ModelError::param("frames", "must be >= 1"));
        }
        if !(self.slot_secs > 0.0) {
            return Err(ModelError::param("slot", "must be positive"));
        }
        if self.hops.is_empty() {
            return Err(ModelError::NoHops);
        }
        for h in &self.hops {
            check_hop(*h)?;
        }
        Ok(())
    }

    /// The uniform-phase derivation assumes the slotframe is much longer
    /// than the cell count on every hop. Flags hops with L < 10 C.
    pub fn model_valid(&self) -> bool {
        self.hops.iter().all(|h| self.slotframe >= 10 * h.cells)
    }
}

fn check_hop(h: Hop) -> Result<(), ModelError> {
    if h.cells == 0 {
        return Err(ModelError::param("c", "cells per link must be >= 1"));
    }
    if !(h.pdr > 0.0 && h.pdr <= 1.0) {
        return Err(ModelError::Pdr(h.pdr));
    }
    Ok(())
}

/// Expected single-hop latency in timeslots: queueing until the next of `c`
/// uniformly placed cells, plus the transmission slot, inflated by 1/P for
/// link-layer retries.
pub fn tsch_single_hop_slots(l: u32, c: u32, p: f64) -> Result<f64, ModelError> {
    check_hop(Hop::new(c, p))?;
    if l == 0 {
        return Err(ModelError::param("l", "slotframe length must be >= 1"));
    }
    Ok((1.0 + l as f64 / (c as f64 + 1.0)) / p)
}

/// Sum of per-hop latencies along a path, in timeslots.
pub fn tsch_multi_hop_slots(l: u32, hops: &[Hop]) -> Result<f64, ModelError> {
    if hops.is_empty() {
        return Err(ModelError::NoHops);
    }
    hops.iter().map(|h| tsch_single_hop_slots(l, h.cells, h.pdr)).sum()
}

/// Expected handshake duration in seconds.
pub fn tsch_handshake_duration(q: &TschLatencyQuery) -> Result<f64, ModelError> {
    q.validate()?;
    Ok(q.frames as f64 * tsch_multi_hop_slots(q.slotframe, &q.hops)? * q.slot_secs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngsetQuery {
    /// Number of sources (clients).
    pub n: u32,
    /// Number of servers (session slots).
    pub r: u32,
    /// Offered load per idle source, lambda / mu.
    pub rho: f64,
}

impl EngsetQuery {
    pub fn new(n: u32, r: u32, rho: f64) -> Self {
        EngsetQuery { n, r, rho }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return Err(ModelError::param("n", "need at least one source"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(ModelError::param("rho", "must be positive and finite"));
        }
        Ok(())
    }
}

/// Terms C(n, k) rho^k for k = 0..=min(r, n), computed by recurrence to
/// avoid overflowing factorials.
fn binomial_terms(n: u32, r: u32, rho: f64) -> Vec<f64> {
    let top = r.min(n);
    let mut terms = Vec::with_capacity(top as usize + 1);
    let mut t = 1.0;
    terms.push(t);
    for k in 1..=top {
        t *= (n - k + 1) as f64 / k as f64 * rho;
        terms.push(t);
    }
    terms
}

fn engset(n: u32, r: u32, rho: f64) -> f64 {
    if r > n {
        return 0.0;
    }
    let terms = binomial_terms(n, r, rho);
    let total: f64 = terms.iter().sum();
    terms[r as usize] / total
}

/// Fraction of time all `r` slots are busy with `n` sources. For r >= n it
/// is the probability that every source is active at once.
pub fn engset_time_congestion(q: EngsetQuery) -> Result<f64, ModelError> {
    q.validate()?;
    if q.r >= q.n {
        let p_active = q.rho / (1.0 + q.rho);
        return Ok(p_active.powi(q.n as i32));
    }
    Ok(engset(q.n, q.r, q.rho))
}

/// Fraction of arrivals that find every slot busy: the time congestion seen
/// by the other n - 1 sources.
pub fn engset_call_congestion(q: EngsetQuery) -> Result<f64, ModelError> {
    q.validate()?;
    if q.r >= q.n {
        return Ok(0.0);
    }
    Ok(engset(q.n - 1, q.r, q.rho))
}

/// Rows of handshake durations for `slotframes` x `columns`, where a column
/// is either a cell count (single hop) or a hop count (one cell per link).
pub fn tsch_single_hop_table(slotframes: &[u32], cells: &[u32]) -> Result<Vec<Vec<f64>>, ModelError> {
    slotframes
        .iter()
        .map(|&l| {
            cells
                .iter()
                .map(|&c| tsch_handshake_duration(&TschLatencyQuery::uniform(l, c, 1.0, 1)))
                .collect()
        })
        .collect()
}

pub fn tsch_multi_hop_table(slotframes: &[u32], hops: &[usize]) -> Result<Vec<Vec<f64>>, ModelError> {
    slotframes
        .iter()
        .map(|&l| {
            hops.iter()
                .map(|&h| tsch_handshake_duration(&TschLatencyQuery::uniform(l, 1, 1.0, h)))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn single_hop_slots() {
        assert_eq!(tsch_single_hop_slots(101, 1, 1.0).unwrap(), 51.5);
        assert_eq!(tsch_single_hop_slots(101, 3, 1.0).unwrap(), 26.25);
        assert_eq!(tsch_single_hop_slots(101, 1, 0.5).unwrap(), 103.0);
        assert!(tsch_single_hop_slots(101, 1, 0.0).is_err());
        assert!(tsch_single_hop_slots(101, 0, 1.0).is_err());
    }

    #[test]
    fn multi_hop_slots() {
        let h = Hop::new(1, 1.0);
        assert_eq!(tsch_multi_hop_slots(101, &[h, h]).unwrap(), 103.0);
        assert_eq!(tsch_multi_hop_slots(1001, &[h; 4]).unwrap(), 2006.0);
        assert!(matches!(tsch_multi_hop_slots(101, &[]), Err(ModelError::NoHops)));
    }

    #[test]
    fn handshake_duration_rows() {
        let d = |l, c, h| tsch_handshake_duration(&TschLatencyQuery::uniform(l, c, 1.0, h)).unwrap();
        assert!(close(d(101, 2, 1), 3.467, 0.0005));
        assert!(close(d(1001, 3, 1), 25.125, 1e-9));
        assert!(close(d(101, 1, 3), 15.45, 1e-9));
    }

    #[test]
    fn validity_flag() {
        assert!(TschLatencyQuery::uniform(101, 3, 1.0, 1).model_valid());
        assert!(!TschLatencyQuery::uniform(20, 3, 1.0, 1).model_valid());
    }

    /// Engset by direct summation with explicit binomial coefficients.
    fn engset_direct(n: u32, r: u32, rho: f64) -> f64 {
        fn choose(n: u32, k: u32) -> f64 {
            (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
        }
        let num = choose(n, r) * rho.powi(r as i32);
        let den: f64 = (0..=r).map(|k| choose(n, k) * rho.powi(k as i32)).sum();
        num / den
    }

    #[test]
    fn engset_anchor_values() {
        let t = engset_time_congestion(EngsetQuery::new(5, 3, 0.5)).unwrap();
        assert!(close(t, 1.25 / 7.25, 1e-12), "{t}");
        let c = engset_call_congestion(EngsetQuery::new(5, 3, 0.5)).unwrap();
        assert!(close(c, 0.10, 1e-12), "{c}");
        let one = engset_time_congestion(EngsetQuery::new(1, 1, 0.5)).unwrap();
        assert!(close(one, 1.0 / 3.0, 1e-12));
        assert_eq!(engset_call_congestion(EngsetQuery::new(3, 3, 0.7)).unwrap(), 0.0);
        let light = engset_time_congestion(EngsetQuery::new(5, 3, 1e-6)).unwrap();
        assert!(light < 1e-15);
    }

    #[test]
    fn engset_rejects_degenerate() {
        assert!(engset_time_congestion(EngsetQuery::new(0, 1, 0.5)).is_err());
        assert!(engset_time_congestion(EngsetQuery::new(3, 1, 0.0)).is_err());
    }

    proptest! {
        #[test]
        fn single_hop_monotonicity(l in 2u32..5000, c in 1u32..20, p in 0.01f64..1.0) {
            let base = tsch_single_hop_slots(l, c, p).unwrap();
            prop_assert!(tsch_single_hop_slots(l, c + 1, p).unwrap() < base);
            prop_assert!(tsch_single_hop_slots(l + 1, c, p).unwrap() > base);
            let ideal = tsch_single_hop_slots(l, c, 1.0).unwrap();
            prop_assert!(close(base * p, ideal, 1e-9 * ideal));
        }

        #[test]
        fn multi_hop_reduces_to_single(l in 1u32..5000, c in 1u32..20, p in 0.01f64..1.0) {
            prop_assert_eq!(
                tsch_multi_hop_slots(l, &[Hop::new(c, p)]).unwrap(),
                tsch_single_hop_slots(l, c, p).unwrap()
            );
        }

        #[test]
        fn engset_matches_direct_sum(n in 1u32..40, r in 0u32..40, rho in 0.01f64..5.0) {
            prop_assume!(r < n);
            let fast = engset_time_congestion(EngsetQuery::new(n, r, rho)).unwrap();
            let direct = engset_direct(n, r, rho);
            prop_assert!(close(fast, direct, 1e-9 * direct.max(1e-12)));
        }

        #[test]
        fn engset_bounds_and_monotonicity(n in 2u32..30, r in 0u32..30, rho in 0.01f64..5.0) {
            let q = EngsetQuery::new(n, r, rho);
            let t = engset_time_congestion(q).unwrap();
            let c = engset_call_congestion(q).unwrap();
            prop_assert!((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&c));
            let eps = 1e-12;
            let more_rho = EngsetQuery::new(n, r, rho * 1.1);
            prop_assert!(engset_time_congestion(more_rho).unwrap() + eps >= t);
            prop_assert!(engset_call_congestion(more_rho).unwrap() + eps >= c);
            // With r >= n nobody is ever blocked and "all busy" means all n
            // sources active, which shrinks as n grows.
            if r < n {
                let more_n = EngsetQuery::new(n + 1, r, rho);
                prop_assert!(engset_time_congestion(more_n).unwrap() + eps >= t);
                prop_assert!(engset_call_congestion(more_n).unwrap() + eps >= c);
            }
            let more_r = EngsetQuery::new(n, r + 1, rho);
            prop_assert!(engset_time_congestion(more_r).unwrap() <= t + eps);
            prop_assert!(engset_call_congestion(more_r).unwrap() <= c + eps);
        }

        #[test]
        fn call_congestion_is_time_congestion_of_one_fewer(n in 2u32..30, r in 0u32..30, rho in 0.01f64..5.0) {
            prop_assume!(r < n - 1);
            let c = engset_call_congestion(EngsetQuery::new(n, r, rho)).unwrap();
            let t = engset_time_congestion(EngsetQuery::new(n - 1, r, rho)).unwrap();
            prop_assert!(close(c, t, 1e-12));
        }
    }
}
