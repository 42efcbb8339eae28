//! Scenario files: one JSON document describes one scenario or a sweep.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dtls::{Backoff, FlightPlan, RetransmitPolicy};
use crate::energy::RadioPowerProfile;
use crate::error::{ModelError, ScenarioError};
use crate::mac::beacon::{superframe_params, BeaconConfig};
use crate::mac::tsch::TschConfig;
use crate::mac::xmac::PreambleConfig;
use crate::mac::DriverConfig;
use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Preamble,
    Beacon,
    Tsch,
    Engset,
    Analytic,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Preamble => "preamble",
            Mode::Beacon => "beacon",
            Mode::Tsch => "tsch",
            Mode::Engset => "engset",
            Mode::Analytic => "analytic",
        }
    }

    pub fn default_replications(self) -> u32 {
        match self {
            Mode::Beacon => 500,
            Mode::Engset => 10,
            Mode::Analytic => 1,
            Mode::Preamble | Mode::Tsch => 1000,
        }
    }

    /// Keys a config of this mode may set, besides `mode`, `name` and `sweep`.
    fn keys(self) -> &'static [&'static str] {
        match self {
            Mode::Preamble => &[
                "hops", "pdr", "replications", "seed", "dtls", "energy", "ci_ms", "early_ack", "strobe_ms",
                "strobe_gap_ms", "data_ms", "ack_ms",
            ],
            Mode::Beacon => &["hops", "pdr", "replications", "seed", "dtls", "energy", "bo", "so", "bi_ms", "cap_ms"],
            Mode::Tsch => &["hops", "pdr", "replications", "seed", "dtls", "energy", "l", "c", "slot_ms"],
            Mode::Engset => &["replications", "seed", "n", "r", "rho", "horizon_s"],
            Mode::Analytic => &["hops", "pdr", "l", "c", "table"],
        }
    }
}

/// Which closed-form result an analytic scenario produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyticTable {
    /// Handshake duration for L in {101, 1001} by C in {1, 2, 3}.
    TschSingleHop,
    /// Handshake duration for L in {101, 1001} by H in {2, 3, 4} at C = 1.
    TschMultiHop,
    /// A single configuration taken from `l`, `c`, `hops`, `pdr`.
    Point,
}

/// A value given once for every hop or as a per-hop list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerHop<T> {
    Uniform(T),
    PerLink(Vec<T>),
}

impl<T: Clone + ToString> PerHop<T> {
    pub fn per_link(&self, hops: usize) -> Vec<T> {
        match self {
            PerHop::Uniform(p) => vec![p.clone(); hops],
            PerHop::PerLink(v) => v.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            PerHop::Uniform(p) => p.to_string(),
            PerHop::PerLink(v) => v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";"),
        }
    }
}

pub type Pdr = PerHop<f64>;

impl Default for Pdr {
    fn default() -> Self {
        PerHop::Uniform(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DtlsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flights: Option<FlightPlan>,
    pub initial_timeout_ms: u64,
    pub max_timeout_ms: u64,
    pub max_retransmissions: u32,
    pub backoff: Backoff,
    /// CPU time spent on each received DTLS message.
    pub processing_ms: f64,
}

impl Default for DtlsConfig {
    fn default() -> Self {
        let p = RetransmitPolicy::default();
        DtlsConfig {
            flights: None,
            initial_timeout_ms: p.initial.as_micros() / 1000,
            max_timeout_ms: p.max.as_micros() / 1000,
            max_retransmissions: p.max_retransmissions,
            backoff: p.backoff,
            processing_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hops: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdr: Option<Pdr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replications: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub early_ack: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bo: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub so: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bi_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strobe_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strobe_gap_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ack_ms: Option<f64>,
    /// TSCH slotframe length in slots.
    #[serde(rename = "l", default, skip_serializing_if = "Option::is_none")]
    pub slotframe: Option<u32>,
    /// TSCH cells per slotframe, for every hop or per hop.
    #[serde(rename = "c", default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<PerHop<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<AnalyticTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dtls: Option<DtlsConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<RadioPowerProfile>,
    /// Parameter name to list of values; points run in lexicographic key
    /// order with the first key varying slowest.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sweep: BTreeMap<String, Vec<Value>>,
}

pub const DEFAULT_SEED: u64 = 1;

impl ScenarioConfig {
    pub fn new(mode: Mode) -> Self {
        ScenarioConfig {
            mode,
            name: None,
            hops: None,
            pdr: None,
            replications: None,
            seed: None,
            ci_ms: None,
            early_ack: None,
            bo: None,
            so: None,
            bi_ms: None,
            cap_ms: None,
            strobe_ms: None,
            strobe_gap_ms: None,
            data_ms: None,
            ack_ms: None,
            slotframe: None,
            cells: None,
            slot_ms: None,
            n: None,
            r: None,
            rho: None,
            horizon_s: None,
            table: None,
            dtls: None,
            energy: None,
            sweep: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| ScenarioError::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn hops(&self) -> usize {
        self.hops.unwrap_or(1)
    }

    pub fn replications(&self) -> u32 {
        self.replications.unwrap_or(self.mode.default_replications())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn pdr(&self) -> Pdr {
        self.pdr.clone().unwrap_or_default()
    }

    pub fn dtls(&self) -> DtlsConfig {
        self.dtls.clone().unwrap_or_default()
    }

    pub fn energy(&self) -> RadioPowerProfile {
        self.energy.unwrap_or_default()
    }

    /// Checks that every set key belongs to the mode and that values are in
    /// range.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let allowed = self.mode.keys();
        let value = serde_json::to_value(self)?;
        for key in value.as_object().expect("config serializes to an object").keys() {
            if !matches!(key.as_str(), "mode" | "name" | "sweep") && !allowed.contains(&key.as_str()) {
                return Err(ScenarioError::invalid(key, format!("not a {} parameter", self.mode.as_str())));
            }
        }
        for key in self.sweep.keys() {
            let top = key.split('.').next().unwrap_or(key);
            if !allowed.contains(&top) {
                return Err(ScenarioError::invalid(format!("sweep.{key}"), "unknown parameter"));
            }
        }
        for (key, values) in &self.sweep {
            if values.is_empty() {
                return Err(ScenarioError::invalid(format!("sweep.{key}"), "empty value list"));
            }
        }
        if self.replications == Some(0) {
            return Err(ScenarioError::invalid("replications", "must be at least 1"));
        }
        if self.sweep.is_empty() {
            self.check_point()?;
        }
        Ok(())
    }

    /// Range checks for a resolved point.
    fn check_point(&self) -> Result<(), ScenarioError> {
        match self.mode {
            Mode::Preamble | Mode::Beacon | Mode::Tsch => {
                self.driver_config()?.validate()?;
                self.energy().validate()?;
                match self.mode {
                    Mode::Preamble => self.preamble_config()?.validate()?,
                    Mode::Beacon => self.beacon_config()?.validate()?,
                    _ => {
                        crate::mac::tsch::Tsch::new(self.tsch_config()?)?;
                    }
                }
            }
            Mode::Engset => {
                for key in ["n", "r", "rho"] {
                    let missing = match key {
                        "n" => self.n.is_none(),
                        "r" => self.r.is_none(),
                        _ => self.rho.is_none(),
                    };
                    if missing {
                        return Err(ScenarioError::invalid(key, "required in engset mode"));
                    }
                }
                crate::analytic::EngsetQuery::new(self.n.unwrap_or(0), self.r.unwrap_or(0), self.rho.unwrap_or(0.0))
                    .validate()?;
                if let Some(h) = self.horizon_s {
                    if !(h > 0.0) {
                        return Err(ScenarioError::invalid("horizon_s", "must be positive"));
                    }
                }
            }
            Mode::Analytic => {
                if self.table.is_none() {
                    return Err(ScenarioError::invalid("table", "required in analytic mode"));
                }
            }
        }
        Ok(())
    }

    /// Expands the sweep into resolved points in stable order. An empty
    /// sweep yields the base config.
    pub fn points(&self) -> Result<Vec<ScenarioConfig>, ScenarioError> {
        let mut base = serde_json::to_value(self)?;
        base.as_object_mut().expect("object").remove("sweep");
        let mut points = vec![base];
        for (key, values) in &self.sweep {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for p in &points {
                for v in values {
                    let mut q = p.clone();
                    set_path(&mut q, key, v.clone());
                    next.push(q);
                }
            }
            points = next;
        }
        points
            .into_iter()
            .map(|v| {
                let text = v.to_string();
                let cfg = ScenarioConfig::from_json(&text)?;
                Ok(cfg)
            })
            .collect()
    }

    pub fn driver_config(&self) -> Result<DriverConfig, ScenarioError> {
        let hops = self.hops();
        let d = self.dtls();
        let mut cfg = DriverConfig::new(hops, 1.0);
        cfg.pdr = self.pdr().per_link(hops);
        if let Some(plan) = d.flights {
            cfg.plan = Arc::new(plan);
        }
        if !(d.processing_ms >= 0.0) {
            return Err(ScenarioError::invalid("dtls.processing_ms", "must be non-negative"));
        }
        if d.initial_timeout_ms == 0 || d.max_timeout_ms < d.initial_timeout_ms {
            return Err(ScenarioError::invalid("dtls.initial_timeout_ms", "must be positive and not above max_timeout_ms"));
        }
        cfg.processing = SimTime::from_millis_f64(d.processing_ms);
        cfg.policy = RetransmitPolicy {
            initial: SimTime::from_millis(d.initial_timeout_ms),
            max: SimTime::from_millis(d.max_timeout_ms),
            max_retransmissions: d.max_retransmissions,
            backoff: d.backoff,
        };
        Ok(cfg)
    }

    pub fn preamble_config(&self) -> Result<PreambleConfig, ScenarioError> {
        let mut c = PreambleConfig::with_ci_ms(self.ci_ms.unwrap_or(500));
        if let Some(e) = self.early_ack {
            c.early_ack = e;
        }
        if let Some(v) = self.strobe_ms {
            c.strobe = positive_ms("strobe_ms", v)?;
        }
        if let Some(v) = self.strobe_gap_ms {
            c.strobe_gap = positive_ms("strobe_gap_ms", v)?;
        }
        if let Some(v) = self.data_ms {
            c.data_airtime = positive_ms("data_ms", v)?;
        }
        if let Some(v) = self.ack_ms {
            c.ack_airtime = positive_ms("ack_ms", v)?;
        }
        Ok(c)
    }

    pub fn beacon_config(&self) -> Result<BeaconConfig, ScenarioError> {
        let mut c = BeaconConfig::default();
        if self.bo.is_some() || self.so.is_some() {
            if self.bi_ms.is_some() || self.cap_ms.is_some() {
                return Err(ScenarioError::invalid("bi_ms", "give either bo/so or bi_ms/cap_ms"));
            }
            let (bi, cap) = superframe_params(self.bo.unwrap_or(6), self.so.unwrap_or(2))?;
            c.beacon_interval = bi;
            c.cap = cap;
        }
        if let Some(bi) = self.bi_ms {
            c.beacon_interval = positive_ms("bi_ms", bi)?;
        }
        if let Some(cap) = self.cap_ms {
            c.cap = positive_ms("cap_ms", cap)?;
        }
        Ok(c)
    }

    pub fn slotframe(&self) -> u32 {
        self.slotframe.unwrap_or(101)
    }

    pub fn cells(&self) -> Vec<u32> {
        self.cells.clone().unwrap_or(PerHop::Uniform(1)).per_link(self.hops())
    }

    pub fn tsch_config(&self) -> Result<TschConfig, ScenarioError> {
        let mut c = TschConfig::new(self.slotframe(), 1, self.hops());
        c.cells = self.cells();
        if c.cells.len() != self.hops() {
            return Err(ScenarioError::invalid("c", format!("{} values for {} hops", c.cells.len(), self.hops())));
        }
        if let Some(v) = self.slot_ms {
            c.slot = positive_ms("slot_ms", v)?;
        }
        Ok(c)
    }
}

fn positive_ms(field: &'static str, ms: f64) -> Result<SimTime, ScenarioError> {
    if !(ms > 0.0) || !ms.is_finite() {
        return Err(ModelError::param(field, "must be positive").into());
    }
    Ok(SimTime::from_millis_f64(ms))
}

/// Sets `a.b.c` inside a JSON object, creating intermediate objects.
fn set_path(root: &mut Value, path: &str, v: Value) {
    let mut cur = root;
    let mut parts = path.split('.').peekable();
    while let Some(part) = parts.next() {
        let obj = cur.as_object_mut().expect("config paths traverse objects");
        if parts.peek().is_none() {
            obj.insert(part.to_string(), v);
            return;
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
    }
}
