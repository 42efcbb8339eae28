//! The ten acceptance criteria, evaluated at their pinned tolerances.

use std::fmt;

use crate::analytic::{engset_call_congestion, engset_time_congestion, tsch_multi_hop_table, tsch_single_hop_table};
use crate::analytic::EngsetQuery;
use crate::dtls::{explore_state_space, lossless_exchange, FlightPlan, RetransmitPolicy, Role};
use crate::energy::battery_fraction;
use crate::error::ScenarioError;
use crate::mac::RunResult;
use crate::runner::{self, SimSummary, TABLE_CELLS, TABLE_HOPS, TABLE_SLOTFRAMES};
use crate::scenario::{Mode, ScenarioConfig};
use crate::session::{simulate_blocking, ClientPopulation, MIN_ARRIVALS};
use crate::stats::linear_fit;

pub const SINGLE_HOP_TABLE: [[f64; 3]; 2] = [[5.15, 3.467, 2.625], [50.15, 33.467, 25.125]];
pub const MULTI_HOP_TABLE: [[f64; 3]; 2] = [[10.3, 15.45, 20.6], [100.3, 150.45, 200.6]];
pub const TABLE_TOL: f64 = 0.001;
pub const CONVERGENCE_TOL: f64 = 0.05;
pub const PREAMBLE_CIS: [u64; 4] = [125, 250, 500, 1000];
pub const PREAMBLE_ENVELOPE: (f64, f64) = (1.0, 50.0);
pub const BEACON_ENVELOPE: (f64, f64) = (1.88, 16.6);
pub const ENVELOPE_SLACK: f64 = 0.25;
pub const CROSS_MODE_TOL: f64 = 0.25;
/// Multi-hop beacon runs with a beacon interval above this use a long DTLS
/// retransmission timeout, as the measurements they mirror did.
pub const LONG_TIMEOUT_ABOVE_BI_MS: f64 = 250.0;
pub const LONG_TIMEOUT_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub id: u8,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "criterion {:>2} {tag} {}: {}", self.id, self.name, self.detail)
    }
}

fn verdict(id: u8, name: &'static str, passed: bool, detail: String) -> Verdict {
    Verdict { id, name, passed, detail }
}

/// Runs simulations once and shares them between criteria.
#[derive(Default)]
pub struct Suite {
    replications: Option<u32>,
    partition_violations: usize,
    runs_checked: usize,
    preamble: Option<PreambleResults>,
    beacon: Option<Vec<(u8, u8, usize, SimSummary)>>,
}

struct PreambleResults {
    by_ci: Vec<SimSummary>,
    lossy: SimSummary,
    by_hops: Vec<SimSummary>,
}

impl Suite {
    pub fn new() -> Self {
        Suite::default()
    }

    /// Overrides every replication count; for quick smoke runs only.
    pub fn with_replications(n: u32) -> Self {
        Suite { replications: Some(n), ..Suite::default() }
    }

    pub fn run_all(&mut self) -> Result<Vec<Verdict>, ScenarioError> {
        Ok(vec![
            self.table_one(),
            self.table_two(),
            self.tsch_convergence()?,
            self.engset_anchor()?,
            self.preamble_trends()?,
            self.beacon_trends()?,
            self.cross_mode()?,
            self.determinism()?,
            self.energy_properties()?,
            self.dtls_oracle(),
        ])
    }

    fn reps(&self, default: u32) -> u32 {
        self.replications.unwrap_or(default)
    }

    /// Simulates one point and checks the time partition of every run.
    fn simulate(&mut self, cfg: &ScenarioConfig) -> Result<SimSummary, ScenarioError> {
        let runs = runner::replicate(cfg)?;
        self.runs_checked += runs.len();
        self.partition_violations += runs.iter().filter(|r| !partition_holds(r)).count();
        runner::summarize(cfg, &runs)
    }

    pub fn table_one(&self) -> Verdict {
        let got = tsch_single_hop_table(&TABLE_SLOTFRAMES, &TABLE_CELLS).unwrap_or_default();
        table_verdict(1, "single-hop TSCH table", &got, &SINGLE_HOP_TABLE)
    }

    pub fn table_two(&self) -> Verdict {
        let got = tsch_multi_hop_table(&TABLE_SLOTFRAMES, &TABLE_HOPS).unwrap_or_default();
        table_verdict(2, "multi-hop TSCH table", &got, &MULTI_HOP_TABLE)
    }

    pub fn tsch_convergence(&mut self) -> Result<Verdict, ScenarioError> {
        let mut points = Vec::new();
        for (li, &l) in TABLE_SLOTFRAMES.iter().enumerate() {
            for (ci, &c) in TABLE_CELLS.iter().enumerate() {
                points.push((l, c, 1usize, SINGLE_HOP_TABLE[li][ci]));
            }
            for (hi, &h) in TABLE_HOPS.iter().enumerate() {
                points.push((l, 1, h, MULTI_HOP_TABLE[li][hi]));
            }
        }
        let mut errs = Vec::new();
        let mut within = 0;
        for &(l, c, h, expect) in &points {
            let mut cfg = ScenarioConfig::new(Mode::Tsch);
            cfg.slotframe = Some(l);
            cfg.cells = Some(crate::scenario::PerHop::Uniform(c));
            cfg.hops = Some(h);
            cfg.replications = Some(self.reps(1000));
            let s = self.simulate(&cfg)?;
            let err = (s.duration.mean - expect) / expect;
            if err.abs() <= CONVERGENCE_TOL {
                within += 1;
            }
            errs.push(format!("L{l}/C{c}/H{h} {:.2}s {:+.0}%", s.duration.mean, err * 100.0));
        }
        let passed = within == points.len();
        Ok(verdict(3, "TSCH simulation matches closed form", passed, format!("{within}/{} within 5%: {}", points.len(), errs.join(", "))))
    }

    pub fn engset_anchor(&mut self) -> Result<Verdict, ScenarioError> {
        let q = EngsetQuery::new(5, 3, 0.5);
        let time = engset_time_congestion(q)?;
        let call = engset_call_congestion(q)?;
        let anchor = (time - 0.1724).abs() <= 0.0005;
        let horizon = runner::default_horizon(5, 3, 0.5);
        let est = simulate_blocking(ClientPopulation::with_load(5, 0.5), 3, horizon, crate::scenario::DEFAULT_SEED)?;
        let inside = |e: &crate::session::Estimate, exact: f64| e.ci95.is_some_and(|h| (e.value - exact).abs() <= h);
        let time_ok = inside(&est.time, time);
        let call_ok = inside(&est.call, call);
        let enough = est.arrivals >= MIN_ARRIVALS;
        Ok(verdict(
            4,
            "Engset anchor and simulation",
            anchor && time_ok && call_ok && enough,
            format!(
                "E(5,3,0.5)={time:.5}; sim time {:.4}+-{:.4} vs {time:.4}, call {:.4}+-{:.4} vs {call:.4}, {} arrivals",
                est.time.value,
                est.time.ci95.unwrap_or(f64::NAN),
                est.call.value,
                est.call.ci95.unwrap_or(f64::NAN),
                est.arrivals
            ),
        ))
    }

    fn preamble_results(&mut self) -> Result<&PreambleResults, ScenarioError> {
        if self.preamble.is_none() {
            let reps = self.reps(1000);
            let point = |ci: u64, pdr: f64, hops: usize| {
                let mut c = ScenarioConfig::new(Mode::Preamble);
                c.ci_ms = Some(ci);
                c.pdr = Some(crate::scenario::Pdr::Uniform(pdr));
                c.hops = Some(hops);
                c.replications = Some(reps);
                c
            };
            let mut by_ci = Vec::new();
            for ci in PREAMBLE_CIS {
                by_ci.push(self.simulate(&point(ci, 1.0, 1))?);
            }
            let lossy = self.simulate(&point(500, 0.9, 1))?;
            let mut by_hops = vec![by_ci[2].clone()];
            for h in 2..=4 {
                by_hops.push(self.simulate(&point(500, 1.0, h))?);
            }
            self.preamble = Some(PreambleResults { by_ci, lossy, by_hops });
        }
        Ok(self.preamble.as_ref().expect("just filled"))
    }

    pub fn preamble_trends(&mut self) -> Result<Verdict, ScenarioError> {
        let p = self.preamble_results()?;
        let cis: Vec<f64> = PREAMBLE_CIS.iter().map(|&c| c as f64).collect();
        let d_ci: Vec<f64> = p.by_ci.iter().map(|s| s.duration.mean).collect();
        let r2_ci = linear_fit(&cis, &d_ci).map_or(f64::NAN, |f| f.r_squared);
        let ratio = p.lossy.duration.mean / p.by_ci[2].duration.mean;
        let hops: Vec<f64> = (1..=4).map(f64::from).collect();
        let d_h: Vec<f64> = p.by_hops.iter().map(|s| s.duration.mean).collect();
        let r2_h = linear_fit(&hops, &d_h).map_or(f64::NAN, |f| f.r_squared);
        let all: Vec<f64> = d_ci.iter().chain([&p.lossy.duration.mean]).chain(&d_h[1..]).copied().collect();
        let (lo, hi) = PREAMBLE_ENVELOPE;
        let outside: Vec<String> = all.iter().filter(|&&d| !(lo..=hi).contains(&d)).map(|d| format!("{d:.3}")).collect();
        let a = r2_ci >= 0.99;
        let b = (2.0..=4.0).contains(&ratio);
        let c = outside.is_empty();
        let d = r2_h >= 0.95;
        let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
        Ok(verdict(
            5,
            "preamble-sampling trends",
            a && b && c && d,
            format!(
                "(a) CI fit R2={r2_ci:.4} [{}] {}; (b) lossy ratio {ratio:.2} {}; (c) {} {}; (d) hop fit R2={r2_h:.4} [{}] {}",
                fmt(&d_ci),
                ok(a),
                ok(b),
                if c { "all means in 1-50 s".to_string() } else { format!("outside 1-50 s: {}", outside.join(", ")) },
                ok(c),
                fmt(&d_h),
                ok(d)
            ),
        ))
    }

    fn beacon_results(&mut self) -> Result<&[(u8, u8, usize, SimSummary)], ScenarioError> {
        if self.beacon.is_none() {
            let reps = self.reps(500);
            let mut out = Vec::new();
            for hops in 1..=4usize {
                for bo in 4..=8u8 {
                    for so in [2u8, 3] {
                        let mut c = ScenarioConfig::new(Mode::Beacon);
                        c.bo = Some(bo);
                        c.so = Some(so);
                        c.hops = Some(hops);
                        c.replications = Some(reps);
                        let bi_ms = c.beacon_config()?.beacon_interval.as_secs_f64() * 1e3;
                        if hops > 1 && bi_ms > LONG_TIMEOUT_ABOVE_BI_MS {
                            let mut d = c.dtls();
                            d.initial_timeout_ms = LONG_TIMEOUT_MS;
                            d.max_timeout_ms = d.max_timeout_ms.max(LONG_TIMEOUT_MS);
                            c.dtls = Some(d);
                        }
                        let s = self.simulate(&c)?;
                        out.push((bo, so, hops, s));
                    }
                }
            }
            self.beacon = Some(out);
        }
        Ok(self.beacon.as_deref().expect("just filled"))
    }

    pub fn beacon_trends(&mut self) -> Result<Verdict, ScenarioError> {
        let grid = self.beacon_results()?;
        let mean = |bo: u8, so: u8, h: usize| {
            grid.iter().find(|g| g.0 == bo && g.1 == so && g.2 == h).map_or(f64::NAN, |g| g.3.duration.mean)
        };
        let mut breaks = Vec::new();
        for bo in 4..=8u8 {
            if !(mean(bo, 3, 1) <= mean(bo, 2, 1)) {
                breaks.push(format!("CAP up at BO={bo}"));
            }
        }
        for so in [2u8, 3] {
            for bo in 4..8u8 {
                if !(mean(bo + 1, so, 1) >= mean(bo, so, 1)) {
                    breaks.push(format!("BI up at SO={so} BO={bo}"));
                }
            }
        }
        let (lo, hi) = (BEACON_ENVELOPE.0 * (1.0 - ENVELOPE_SLACK), BEACON_ENVELOPE.1 * (1.0 + ENVELOPE_SLACK));
        let multi: Vec<&(u8, u8, usize, SimSummary)> = grid.iter().filter(|g| g.2 > 1).collect();
        let outside: Vec<String> = multi
            .iter()
            .filter(|g| !(lo..=hi).contains(&g.3.duration.mean))
            .map(|g| format!("BO{}/SO{}/H{}={:.2}", g.0, g.1, g.2, g.3.duration.mean))
            .collect();
        let a = breaks.is_empty();
        let b = outside.is_empty();
        let single: Vec<String> = grid.iter().filter(|g| g.2 == 1).map(|g| format!("{:.2}", g.3.duration.mean)).collect();
        Ok(verdict(
            6,
            "beacon-enabled trends",
            a && b,
            format!(
                "(a) single-hop means [{}] {} {}; (b) {}/{} multi-hop means in {lo:.2}-{hi:.2} s {}{}",
                single.join("/"),
                if a { "monotone".to_string() } else { breaks.join(", ") },
                ok(a),
                multi.len() - outside.len(),
                multi.len(),
                ok(b),
                if b { String::new() } else { format!(", outside: {}", outside.join(" ")) }
            ),
        ))
    }

    pub fn cross_mode(&mut self) -> Result<Verdict, ScenarioError> {
        let grid = self.beacon_results()?;
        let mean = |bo: u8| grid.iter().find(|g| g.0 == bo && g.1 == 2 && g.2 == 1).map_or(f64::NAN, |g| g.3.duration.mean);
        let pairs = [(6u8, SINGLE_HOP_TABLE[0][0]), (5u8, SINGLE_HOP_TABLE[0][2])];
        let mut parts = Vec::new();
        let mut passed = true;
        for (bo, tsch) in pairs {
            let m = mean(bo);
            let err = (m - tsch) / tsch;
            let good = err.abs() <= CROSS_MODE_TOL;
            passed &= good;
            parts.push(format!("BO={bo} SO=2 {m:.3} s vs {tsch} s ({:+.0}%) {}", err * 100.0, ok(good)));
        }
        Ok(verdict(7, "beacon and TSCH correspondence", passed, parts.join("; ")))
    }

    pub fn determinism(&mut self) -> Result<Verdict, ScenarioError> {
        let configs = [
            r#"{"mode": "preamble", "replications": 20, "pdr": 0.9, "sweep": {"hops": [1, 2]}}"#,
            r#"{"mode": "beacon", "bo": 5, "so": 2, "replications": 20, "hops": 2}"#,
            r#"{"mode": "tsch", "replications": 20, "l": 101, "c": 2, "pdr": 0.8}"#,
            r#"{"mode": "engset", "n": 5, "r": 3, "rho": 0.5, "replications": 2}"#,
            r#"{"mode": "analytic", "table": "tsch-multi-hop"}"#,
        ];
        let mut mismatches = Vec::new();
        for text in configs {
            let cfg = ScenarioConfig::from_json(text)?;
            let render = || -> Result<Vec<u8>, ScenarioError> {
                let mut out = Vec::new();
                runner::write_csv(&runner::run_scenario(&cfg)?, &mut out)?;
                Ok(out)
            };
            if render()? != render()? {
                mismatches.push(format!("{} csv", cfg.mode.as_str()));
            }
            if matches!(cfg.mode, Mode::Preamble | Mode::Beacon | Mode::Tsch) {
                let point = &cfg.points()?[0];
                for rep in 0..3 {
                    let a = runner::trace(point, rep)?.to_text();
                    let b = runner::trace(point, rep)?.to_text();
                    if a != b || a.is_empty() {
                        mismatches.push(format!("{} trace {rep}", cfg.mode.as_str()));
                    }
                }
            }
        }
        let passed = mismatches.is_empty();
        let detail = if passed {
            format!("{} scenarios gave identical CSV and traces on rerun", configs.len())
        } else {
            format!("differences in {}", mismatches.join(", "))
        };
        Ok(verdict(8, "determinism", passed, detail))
    }

    pub fn energy_properties(&mut self) -> Result<Verdict, ScenarioError> {
        let p = self.preamble_results()?;
        let cis: Vec<f64> = PREAMBLE_CIS.iter().map(|&c| c as f64).collect();
        let e: Vec<f64> = p.by_ci.iter().map(|s| s.client_energy.mean).collect();
        let r2 = linear_fit(&cis, &e).map_or(f64::NAN, |f| f.r_squared);
        let pct = battery_fraction(29.05, 201.6) * 100.0;
        let partition = self.partition_violations == 0 && self.runs_checked > 0;
        let fit = r2 >= 0.95;
        let battery = (pct - 0.0144).abs() <= 0.0001;
        Ok(verdict(
            9,
            "energy accounting",
            partition && fit && battery,
            format!(
                "time partition held on {}/{} runs {}; client energy vs CI R2={r2:.4} [{}] mJ {}; battery share {pct:.5}% {}",
                self.runs_checked - self.partition_violations,
                self.runs_checked,
                ok(partition),
                e.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join("/"),
                ok(fit),
                ok(battery)
            ),
        ))
    }

    pub fn dtls_oracle(&self) -> Verdict {
        let plan = FlightPlan::default_psk();
        let policy = RetransmitPolicy::default();
        let client = explore_state_space(&plan, policy, Role::Client);
        let server = explore_state_space(&plan, policy, Role::Server);
        let x = lossless_exchange(&plan);
        let sound = client.violations.is_empty() && server.violations.is_empty();
        let ten = x.frames == 10 && x.client_complete && x.server_complete && x.timeouts == 0;
        let first = client.violations.first().or(server.violations.first()).cloned().unwrap_or_default();
        verdict(
            10,
            "DTLS state machine",
            sound && ten,
            format!(
                "{} client and {} server states, {} transitions, {} violations{}; lossless exchange sent {} frames",
                client.states,
                server.states,
                client.transitions + server.transitions,
                client.violations.len() + server.violations.len(),
                if first.is_empty() { String::new() } else { format!(" (first: {first})") },
                x.frames
            ),
        )
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// Radio and CPU time each sum to the accounting window on every node.
pub fn partition_holds(r: &RunResult) -> bool {
    let window = r.end - r.start;
    (0..r.ledger.len()).all(|n| {
        let node = r.ledger.node(n);
        node.radio_total() == window && node.cpu_total() == window
    })
}

fn table_verdict(id: u8, name: &'static str, got: &[Vec<f64>], want: &[[f64; 3]; 2]) -> Verdict {
    let mut worst = 0.0f64;
    let mut cells = Vec::new();
    for (gr, wr) in got.iter().zip(want) {
        for (g, w) in gr.iter().zip(wr) {
            worst = worst.max((g - w).abs());
            cells.push(format!("{g:.3}"));
        }
    }
    let passed = cells.len() == 6 && worst <= TABLE_TOL;
    verdict(id, name, passed, format!("[{}] max error {worst:.2e} s", cells.join(", ")))
}
