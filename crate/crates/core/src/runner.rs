//! Replicated runs, sweeps and report output.

use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::analytic::{
    engset_call_congestion, engset_time_congestion, tsch_handshake_duration, tsch_multi_hop_table,
    tsch_single_hop_table, EngsetQuery, Hop, TschLatencyQuery,
};
use crate::energy::energy_mj;
use crate::error::ScenarioError;
use crate::mac::beacon::BeaconMac;
use crate::mac::tsch::Tsch;
use crate::mac::xmac::Xmac;
use crate::mac::{run, DriverConfig, RunResult};
use crate::scenario::{AnalyticTable, Mode, PerHop, ScenarioConfig};
use crate::session::{simulate_blocking, ClientPopulation};
use crate::sim::{replication_seed, EventTrace};
use crate::stats::{self, RunStats};

pub const TABLE_SLOTFRAMES: [u32; 2] = [101, 1001];
pub const TABLE_CELLS: [u32; 3] = [1, 2, 3];
pub const TABLE_HOPS: [usize; 3] = [2, 3, 4];

/// One report value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(u64),
    /// Printed with a fixed number of decimals.
    Num(f64, usize),
    Missing,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            Cell::Num(v, d) if v.is_finite() => format!("{v:.d$}"),
            Cell::Num(..) | Cell::Missing => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Int(i) => Value::from(*i),
            Cell::Num(v, _) if v.is_finite() => {
                let rounded: f64 = self.render().parse().expect("rendered number parses");
                Value::from(rounded)
            }
            Cell::Num(..) | Cell::Missing => Value::Null,
        }
    }
}

fn opt(v: Option<f64>, decimals: usize) -> Cell {
    v.map_or(Cell::Missing, |v| Cell::Num(v, decimals))
}

/// One output line: ordered (column, value) pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Row {
    pub cells: Vec<(String, Cell)>,
}

impl Row {
    fn push(&mut self, name: &str, cell: Cell) -> &mut Self {
        self.cells.push((name.to_string(), cell));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Cell> {
        self.cells.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    /// Numeric value of a column, unrounded.
    pub fn num(&self, name: &str) -> Option<f64> {
        match self.get(name)? {
            Cell::Num(v, _) => Some(*v),
            Cell::Int(i) => Some(*i as f64),
            _ => None,
        }
    }

    pub fn columns(&self) -> Vec<&str> {
        self.cells.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn to_json(&self) -> Map<String, Value> {
        self.cells.iter().map(|(n, c)| (n.clone(), c.to_json())).collect()
    }
}

/// Duration, energy and counter statistics for one simulated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSummary {
    pub duration: RunStats,
    pub client_energy: RunStats,
    pub server_energy: RunStats,
    pub frames: RunStats,
    pub dtls_retransmissions: RunStats,
    pub mac_drops: RunStats,
}

impl SimSummary {
    pub fn stats(&self) -> Vec<RunStats> {
        vec![
            self.duration.clone(),
            self.client_energy.clone(),
            self.server_energy.clone(),
            self.frames.clone(),
            self.dtls_retransmissions.clone(),
            self.mac_drops.clone(),
        ]
    }
}

/// Runs replication `index` of a simulated configuration.
pub fn run_replication(cfg: &ScenarioConfig, drv: &DriverConfig, index: u64) -> Result<RunResult, ScenarioError> {
    let seed = replication_seed(cfg.seed(), index);
    let hops = cfg.hops();
    let res = match cfg.mode {
        Mode::Preamble => run(&mut Xmac::new(cfg.preamble_config()?, hops)?, drv, seed)?,
        Mode::Beacon => run(&mut BeaconMac::new(cfg.beacon_config()?, hops)?, drv, seed)?,
        Mode::Tsch => run(&mut Tsch::new(cfg.tsch_config()?)?, drv, seed)?,
        Mode::Engset | Mode::Analytic => {
            return Err(ScenarioError::invalid("mode", format!("{} is not a link-layer simulation", cfg.mode.as_str())))
        }
    };
    Ok(res)
}

/// All replications of one point, in replication order.
pub fn replicate(cfg: &ScenarioConfig) -> Result<Vec<RunResult>, ScenarioError> {
    let drv = cfg.driver_config()?;
    (0..cfg.replications() as u64).into_par_iter().map(|i| run_replication(cfg, &drv, i)).collect()
}

pub fn summarize(cfg: &ScenarioConfig, runs: &[RunResult]) -> Result<SimSummary, ScenarioError> {
    let profile = cfg.energy();
    let server = cfg.hops();
    let done: Vec<&RunResult> = runs.iter().filter(|r| r.completed).collect();
    let failures = runs.len() - done.len();
    let durations: Vec<f64> = done.iter().filter_map(|r| r.duration()).collect();
    let mut client = Vec::with_capacity(done.len());
    let mut srv = Vec::with_capacity(done.len());
    for r in &done {
        client.push(energy_mj(&r.ledger, &profile, 0)?);
        srv.push(energy_mj(&r.ledger, &profile, server)?);
    }
    let counter = |f: fn(&RunResult) -> u64| runs.iter().map(|r| f(r) as f64).collect::<Vec<_>>();
    Ok(SimSummary {
        duration: RunStats::from_samples("duration_s", &durations, failures),
        client_energy: RunStats::from_samples("client_energy_mj", &client, failures),
        server_energy: RunStats::from_samples("server_energy_mj", &srv, failures),
        frames: RunStats::from_samples("frames", &counter(|r| r.counters.frames_transmitted), 0),
        dtls_retransmissions: RunStats::from_samples("dtls_retransmissions", &counter(|r| r.counters.dtls_retransmissions), 0),
        mac_drops: RunStats::from_samples("mac_drops", &counter(|r| r.counters.mac_drops), 0),
    })
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<SimSummary, ScenarioError> {
    summarize(cfg, &replicate(cfg)?)
}

/// Replication `index` of `cfg` with event tracing on.
pub fn trace(cfg: &ScenarioConfig, index: u64) -> Result<EventTrace, ScenarioError> {
    let mut drv = cfg.driver_config()?;
    drv.trace = true;
    let res = run_replication(cfg, &drv, index)?;
    Ok(res.trace.unwrap_or_default())
}

/// Every point of the scenario, expanded into report rows.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<Row>, ScenarioError> {
    let mut rows = Vec::new();
    for point in cfg.points()? {
        rows.extend(run_point(&point)?);
    }
    if let Some(first) = rows.first() {
        let cols = first.columns();
        if rows.iter().any(|r| r.columns() != cols) {
            return Err(ScenarioError::invalid("sweep", "points produce different columns"));
        }
    }
    Ok(rows)
}

/// Like [`run_scenario`] on a dedicated pool of `threads` workers.
pub fn run_scenario_parallel(cfg: &ScenarioConfig, threads: usize) -> Result<Vec<Row>, ScenarioError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ScenarioError::invalid("parallel", e.to_string()))?;
    pool.install(|| run_scenario(cfg))
}

pub fn run_point(cfg: &ScenarioConfig) -> Result<Vec<Row>, ScenarioError> {
    match cfg.mode {
        Mode::Preamble | Mode::Beacon | Mode::Tsch => Ok(vec![sim_row(cfg, &simulate(cfg)?)?]),
        Mode::Engset => Ok(vec![engset_row(cfg)?]),
        Mode::Analytic => analytic_rows(cfg),
    }
}

fn head(cfg: &ScenarioConfig) -> Row {
    let mut row = Row::default();
    row.push("name", Cell::Text(cfg.name.clone().unwrap_or_default()));
    row.push("mode", Cell::Text(cfg.mode.as_str().to_string()));
    row
}

fn sim_row(cfg: &ScenarioConfig, s: &SimSummary) -> Result<Row, ScenarioError> {
    let mut row = head(cfg);
    row.push("hops", Cell::Int(cfg.hops() as u64));
    row.push("pdr", Cell::Text(cfg.pdr().label()));
    match cfg.mode {
        Mode::Preamble => {
            let p = cfg.preamble_config()?;
            row.push("ci_ms", Cell::Int(p.check_interval.as_micros() / 1000));
            row.push("early_ack", Cell::Text(p.early_ack.to_string()));
        }
        Mode::Beacon => {
            let b = cfg.beacon_config()?;
            row.push("bo", cfg.bo.map_or(Cell::Missing, |v| Cell::Int(v.into())));
            row.push("so", cfg.so.map_or(Cell::Missing, |v| Cell::Int(v.into())));
            row.push("bi_ms", Cell::Num(b.beacon_interval.as_secs_f64() * 1e3, 2));
            row.push("cap_ms", Cell::Num(b.cap.as_secs_f64() * 1e3, 2));
        }
        _ => {
            row.push("l", Cell::Int(cfg.slotframe().into()));
            row.push("c", Cell::Text(cfg.cells.clone().unwrap_or(PerHop::Uniform(1)).label()));
        }
    }
    row.push("replications", Cell::Int(cfg.replications().into()));
    row.push("seed", Cell::Int(cfg.seed()));
    row.push("duration_s", Cell::Num(s.duration.mean, 3));
    row.push("duration_ci95_s", opt(s.duration.ci95, 3));
    row.push("completed", Cell::Int(s.duration.n as u64));
    row.push("failures", Cell::Int(s.duration.failures as u64));
    row.push("client_energy_mj", Cell::Num(s.client_energy.mean, 3));
    row.push("client_energy_ci95_mj", opt(s.client_energy.ci95, 3));
    row.push("server_energy_mj", Cell::Num(s.server_energy.mean, 3));
    row.push("frames", Cell::Num(s.frames.mean, 3));
    row.push("dtls_retransmissions", Cell::Num(s.dtls_retransmissions.mean, 3));
    row.push("mac_drops", Cell::Num(s.mac_drops.mean, 3));
    if cfg.mode == Mode::Tsch {
        row.push("analytic_s", opt(tsch_analytic(cfg).ok(), 3));
    }
    Ok(row)
}

fn tsch_analytic(cfg: &ScenarioConfig) -> Result<f64, ScenarioError> {
    let pdr = cfg.pdr().per_link(cfg.hops());
    let hops = cfg.cells().into_iter().zip(pdr).map(|(c, p)| Hop::new(c, p)).collect();
    Ok(tsch_handshake_duration(&TschLatencyQuery::new(cfg.slotframe(), hops))?)
}

/// Default simulated time: about 2 * 10^4 arrivals when n - r clients idle.
pub fn default_horizon(n: u32, r: u32, rho: f64) -> f64 {
    2e4 / (rho * n.saturating_sub(r).max(1) as f64)
}

fn engset_row(cfg: &ScenarioConfig) -> Result<Row, ScenarioError> {
    let (n, r, rho) = (cfg.n.unwrap_or(0), cfg.r.unwrap_or(0), cfg.rho.unwrap_or(0.0));
    let q = EngsetQuery::new(n, r, rho);
    let horizon = cfg.horizon_s.unwrap_or_else(|| default_horizon(n, r, rho));
    let reps = cfg.replications() as u64;
    let ests = (0..reps)
        .into_par_iter()
        .map(|i| simulate_blocking(ClientPopulation::with_load(n, rho), r, horizon, replication_seed(cfg.seed(), i)))
        .collect::<Result<Vec<_>, _>>()?;
    let call: Vec<f64> = ests.iter().map(|e| e.call.value).collect();
    let time: Vec<f64> = ests.iter().map(|e| e.time.value).collect();
    // Across-seed spread when there are several seeds, batch means otherwise.
    let (call_ci, time_ci) = if ests.len() > 1 {
        (stats::ci95_half_width(&call), stats::ci95_half_width(&time))
    } else {
        (ests[0].call.ci95, ests[0].time.ci95)
    };
    let mut row = head(cfg);
    row.push("n", Cell::Int(n.into()));
    row.push("r", Cell::Int(r.into()));
    row.push("rho", Cell::Num(rho, 4));
    row.push("horizon_s", Cell::Num(horizon, 1));
    row.push("replications", Cell::Int(reps));
    row.push("seed", Cell::Int(cfg.seed()));
    row.push("time_congestion", Cell::Num(engset_time_congestion(q)?, 6));
    row.push("time_congestion_sim", opt(stats::mean(&time), 6));
    row.push("time_congestion_ci95", opt(time_ci, 6));
    row.push("call_congestion", Cell::Num(engset_call_congestion(q)?, 6));
    row.push("call_congestion_sim", opt(stats::mean(&call), 6));
    row.push("call_congestion_ci95", opt(call_ci, 6));
    row.push("arrivals", Cell::Int(ests.iter().map(|e| e.arrivals).sum()));
    Ok(row)
}

fn analytic_rows(cfg: &ScenarioConfig) -> Result<Vec<Row>, ScenarioError> {
    let table = cfg.table.ok_or_else(|| ScenarioError::invalid("table", "required in analytic mode"))?;
    let grid = |columns: Vec<String>, values: Vec<Vec<f64>>| {
        TABLE_SLOTFRAMES
            .iter()
            .zip(values)
            .map(|(&l, vals)| {
                let mut row = head(cfg);
                row.push("l", Cell::Int(l.into()));
                for (c, v) in columns.iter().zip(vals) {
                    row.push(c, Cell::Num(v, 3));
                }
                row
            })
            .collect()
    };
    Ok(match table {
        AnalyticTable::TschSingleHop => grid(
            TABLE_CELLS.iter().map(|c| format!("c{c}_s")).collect(),
            tsch_single_hop_table(&TABLE_SLOTFRAMES, &TABLE_CELLS)?,
        ),
        AnalyticTable::TschMultiHop => grid(
            TABLE_HOPS.iter().map(|h| format!("h{h}_s")).collect(),
            tsch_multi_hop_table(&TABLE_SLOTFRAMES, &TABLE_HOPS)?,
        ),
        AnalyticTable::Point => {
            let mut row = head(cfg);
            row.push("l", Cell::Int(cfg.slotframe().into()));
            row.push("c", Cell::Text(cfg.cells.clone().unwrap_or(PerHop::Uniform(1)).label()));
            row.push("hops", Cell::Int(cfg.hops() as u64));
            row.push("pdr", Cell::Text(cfg.pdr().label()));
            row.push("duration_s", Cell::Num(tsch_analytic(cfg)?, 3));
            vec![row]
        }
    })
}

pub fn write_csv<W: Write>(rows: &[Row], out: W) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(out);
    if let Some(first) = rows.first() {
        w.write_record(first.columns())?;
    }
    for row in rows {
        w.write_record(row.cells.iter().map(|(_, c)| c.render()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_jsonl<W: Write>(rows: &[Row], mut out: W) -> Result<(), ScenarioError> {
    for row in rows {
        serde_json::to_writer(&mut out, &row.to_json())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<Map<String, Value>>, ScenarioError> {
    let mut rows = Vec::new();
    for line in input.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            rows.push(serde_json::from_str(&line)?);
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(json: &str) -> ScenarioConfig {
        ScenarioConfig::from_json(json).unwrap()
    }

    #[test]
    fn durations_print_with_three_decimals() {
        assert_eq!(Cell::Num(5.15, 3).render(), "5.150");
        assert_eq!(Cell::Num(f64::NAN, 3).render(), "");
        assert_eq!(Cell::Missing.render(), "");
    }

    #[test]
    fn table_one_replica() {
        let rows = run_scenario(&cfg(r#"{"mode": "analytic", "table": "tsch-single-hop"}"#)).unwrap();
        let mut out = Vec::new();
        write_csv(&rows, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "name,mode,l,c1_s,c2_s,c3_s\n,analytic,101,5.150,3.467,2.625\n,analytic,1001,50.150,33.467,25.125\n"
        );
    }

    #[test]
    fn table_two_replica() {
        let rows = run_scenario(&cfg(r#"{"mode": "analytic", "table": "tsch-multi-hop"}"#)).unwrap();
        let got: Vec<Vec<String>> =
            rows.iter().map(|r| r.cells[3..].iter().map(|(_, c)| c.render()).collect()).collect();
        assert_eq!(got, vec![vec!["10.300", "15.450", "20.600"], vec!["100.300", "150.450", "200.600"]]);
    }

    #[test]
    fn single_replication_has_no_interval() {
        let rows = run_scenario(&cfg(r#"{"mode": "tsch", "replications": 1}"#)).unwrap();
        assert_eq!(rows[0].get("duration_ci95_s"), Some(&Cell::Missing));
        assert_eq!(rows[0].num("completed"), Some(1.0));
    }

    #[test]
    fn jsonl_round_trips() {
        let rows = run_scenario(&cfg(r#"{"mode": "preamble", "replications": 5, "sweep": {"ci_ms": [125, 250]}}"#))
            .unwrap();
        let mut out = Vec::new();
        write_jsonl(&rows, &mut out).unwrap();
        let back = read_jsonl(out.as_slice()).unwrap();
        assert_eq!(back, rows.iter().map(Row::to_json).collect::<Vec<_>>());
    }

    #[test]
    fn output_is_independent_of_thread_count() {
        let c = cfg(r#"{"mode": "beacon", "bo": 4, "so": 2, "replications": 20, "sweep": {"hops": [1, 2]}}"#);
        let render = |rows: Vec<Row>| {
            let mut out = Vec::new();
            write_csv(&rows, &mut out).unwrap();
            out
        };
        let one = render(run_scenario_parallel(&c, 1).unwrap());
        let four = render(run_scenario_parallel(&c, 4).unwrap());
        assert_eq!(one, four);
    }

    #[test]
    fn engset_row_matches_closed_form() {
        let rows = run_scenario(&cfg(r#"{"mode": "engset", "n": 5, "r": 3, "rho": 0.5, "replications": 2}"#)).unwrap();
        let r = &rows[0];
        assert!((r.num("time_congestion").unwrap() - 0.172414).abs() < 1e-6);
        let sim = r.num("time_congestion_sim").unwrap();
        assert!((sim - 0.1724).abs() < 0.02, "{sim}");
        assert!(r.num("arrivals").unwrap() >= 2e4);
    }

    #[test]
    fn link_modes_reject_trace_of_analytic() {
        let e = trace(&cfg(r#"{"mode": "analytic", "table": "point"}"#), 0).unwrap_err();
        assert!(matches!(e, ScenarioError::Invalid { .. }));
    }
}
