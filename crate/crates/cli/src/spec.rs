//! Experiment specification files (TOML).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use mcrelay_core::model::{default_two_hop_config, us, ProtocolConfig, ProtocolKind};
use mcrelay_core::sim::{Engine, SimConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ThresholdSweep,
    IntervalSweep,
    CompareProtocols,
    ValidatePhysics,
    SingleRun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EngineSelection {
    Analytics,
    Simulation,
    #[default]
    Both,
}

impl EngineSelection {
    pub fn analytics(self) -> bool {
        self != EngineSelection::Simulation
    }

    pub fn simulation(self) -> bool {
        self != EngineSelection::Analytics
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRange {
    pub start: f64,
    pub stop: f64,
    #[serde(default = "one")]
    pub step: f64,
}

fn one() -> f64 {
    1.0
}

/// Settings of the physics validation suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsSection {
    #[serde(default = "default_walkers")]
    pub walkers: u64,
    /// Realizations of the count-statistics check.
    #[serde(default = "default_count")]
    pub realizations: usize,
    /// Information bits of the count-statistics check.
    #[serde(default = "default_pattern_length")]
    pub length: usize,
    /// Fault injection: scales the walkers' diffusion coefficient.
    #[serde(default = "one")]
    pub diffusion_scale: f64,
}

fn default_walkers() -> u64 {
    1_000_000
}

fn default_count() -> usize {
    10_000
}

fn default_pattern_length() -> usize {
    10
}

impl Default for PhysicsSection {
    fn default() -> Self {
        Self {
            walkers: default_walkers(),
            realizations: default_count(),
            length: default_pattern_length(),
            diffusion_scale: 1.0,
        }
    }
}

/// Protocol name accepted in any case and punctuation (`fd-adp`, `FDAdp`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Protocol(pub ProtocolKind);

impl Serialize for Protocol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.0.name())
    }
}

impl<'de> Deserialize<'de> for Protocol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ProtocolKind::from_str(&s).map(Protocol).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub protocols: Vec<Protocol>,
    #[serde(default)]
    pub engine: EngineSelection,
    #[serde(default)]
    pub seed: u64,
    /// Source sequences averaged by the analytics.
    #[serde(default = "default_count")]
    pub sequences: usize,
    /// Simulated realizations.
    #[serde(default = "default_count")]
    pub realizations: usize,
    #[serde(default)]
    pub sim_engine: Engine,
    /// Swept thresholds, or the search grid for optimal thresholds.
    #[serde(default)]
    pub thresholds: Vec<f64>,
    pub threshold_range: Option<ThresholdRange>,
    /// T_B values in microseconds; defaults to 400.
    #[serde(default)]
    pub bit_intervals_us: Vec<f64>,
    pub samples: Option<usize>,
    pub sample_spacing_us: Option<f64>,
    /// Information bits per sequence.
    pub length: Option<usize>,
    pub p1: Option<f64>,
    /// Simulation time step in microseconds; defaults to the sample spacing.
    pub dt_us: Option<f64>,
    /// Per-bit error breakdown in JSON output.
    #[serde(default)]
    pub per_bit: bool,
    /// single-run: realizations whose per-sample counts are dumped.
    #[serde(default)]
    pub trace_realizations: usize,
    #[serde(default)]
    pub physics: PhysicsSection,
    pub output: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Every problem found in a specification.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub Vec<String>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid experiment specification: {}", self.0.join("; "))
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(vec![e.to_string().trim().to_string()]))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("specs serialize")
    }

    pub fn threshold_grid(&self) -> Vec<f64> {
        let mut grid = self.thresholds.clone();
        if let Some(r) = self.threshold_range {
            if r.step > 0.0 && r.stop >= r.start {
                let n = ((r.stop - r.start) / r.step + 1e-9).floor() as usize;
                grid.extend((0..=n).map(|i| r.start + i as f64 * r.step));
            }
        }
        grid
    }

    pub fn bit_intervals(&self) -> Vec<f64> {
        if self.bit_intervals_us.is_empty() {
            vec![400.0]
        } else {
            self.bit_intervals_us.clone()
        }
    }

    pub fn protocol_kinds(&self) -> Vec<ProtocolKind> {
        self.protocols.iter().map(|p| p.0).collect()
    }

    /// Reference configuration of `kind` with this spec's overrides and bit
    /// interval `tb_us`.
    pub fn protocol_config(&self, kind: ProtocolKind, tb_us: f64) -> ProtocolConfig {
        let mut cfg = default_two_hop_config(kind);
        let m = &mut cfg.modulation;
        m.bit_interval = us(tb_us);
        if let Some(s) = self.samples {
            m.samples = s;
        }
        if let Some(t0) = self.sample_spacing_us {
            m.sample_spacing = us(t0);
        }
        if let Some(l) = self.length {
            m.length = l;
        }
        if let Some(p1) = self.p1 {
            m.p1 = p1;
        }
        cfg
    }

    pub fn sim_config(&self, kind: ProtocolKind, tb_us: f64) -> SimConfig {
        let mut sim = SimConfig::new(self.protocol_config(kind, tb_us));
        sim.realizations = self.realizations;
        sim.master_seed = self.seed;
        sim.engine = self.sim_engine;
        sim.dt = self.dt_us.map(us);
        sim
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let sweeping = self.kind != ExperimentKind::ValidatePhysics;
        if sweeping && self.protocols.is_empty() {
            v.push("protocols: at least one protocol is required".to_string());
        }
        let grid = self.threshold_grid();
        if let Some(r) = self.threshold_range {
            if !(r.step > 0.0) || r.stop < r.start {
                v.push(format!("threshold_range: needs step > 0 and stop >= start (got {r:?})"));
            }
        }
        if sweeping && grid.is_empty() {
            v.push("thresholds: grid is empty".to_string());
        }
        if self.kind == ExperimentKind::SingleRun && grid.len() > 1 {
            v.push(format!("thresholds: single-run takes one threshold (got {})", grid.len()));
        }
        if self.trace_realizations > 0 && (self.kind != ExperimentKind::SingleRun || !self.engine.simulation()) {
            v.push("trace_realizations: only for single-run with the simulation engine".to_string());
        }
        if let Some(x) = grid.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
            v.push(format!("thresholds: {x} is not a finite non-negative number"));
        }
        if self.bit_intervals_us.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            v.push("bit_intervals_us: values must be positive".to_string());
        }
        if self.engine.analytics() && self.sequences == 0 {
            v.push("sequences: must be >= 1 for the analytics engine".to_string());
        }
        if self.engine.simulation() && self.realizations == 0 {
            v.push("realizations: must be >= 1 for the simulation engine".to_string());
        }
        if let Some(dt) = self.dt_us {
            if !(dt.is_finite() && dt > 0.0) {
                v.push(format!("dt_us: must be positive (got {dt})"));
            }
        }
        let ph = &self.physics;
        if self.kind == ExperimentKind::ValidatePhysics {
            if ph.walkers == 0 || ph.realizations < 2 || ph.length == 0 {
                v.push("physics: walkers >= 1, realizations >= 2 and length >= 1 are required".to_string());
            }
            if !(ph.diffusion_scale.is_finite() && ph.diffusion_scale > 0.0) {
                v.push("physics.diffusion_scale: must be positive".to_string());
            }
        }
        if sweeping {
            for kind in self.protocol_kinds() {
                for tb in self.bit_intervals() {
                    let checked = if self.engine.simulation() {
                        self.sim_config(kind, tb).validate()
                    } else {
                        self.protocol_config(kind, tb).validate()
                    };
                    if let Err(e) = checked {
                        v.push(format!("{kind} at T_B = {tb} us: {e}"));
                    }
                }
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(v))
        }
    }
}

pub const PRESETS: [&str; 3] = ["distinct-species", "same-species", "hd-vs-fd1"];

/// Ready-made experiments at desk scale.
pub fn preset(name: &str) -> Option<ExperimentSpec> {
    let base = |kind, protocols: &[ProtocolKind]| ExperimentSpec {
        kind,
        protocols: protocols.iter().map(|&p| Protocol(p)).collect(),
        engine: EngineSelection::Both,
        seed: 1,
        sequences: 10_000,
        realizations: 10_000,
        sim_engine: Engine::Sparse,
        thresholds: Vec::new(),
        threshold_range: Some(ThresholdRange { start: 1.0, stop: 40.0, step: 1.0 }),
        bit_intervals_us: Vec::new(),
        samples: Some(5),
        sample_spacing_us: Some(20.0),
        length: Some(50),
        p1: Some(0.5),
        dt_us: None,
        per_bit: false,
        trace_realizations: 0,
        physics: PhysicsSection::default(),
        output: None,
        format: None,
    };
    use ProtocolKind::*;
    match name {
        "distinct-species" => Some(ExperimentSpec {
            bit_intervals_us: vec![200.0, 400.0],
            ..base(ExperimentKind::ThresholdSweep, &[Fd1, Baseline])
        }),
        "same-species" => Some(ExperimentSpec {
            bit_intervals_us: vec![400.0],
            threshold_range: Some(ThresholdRange { start: 1.0, stop: 60.0, step: 1.0 }),
            ..base(ExperimentKind::ThresholdSweep, &[Fd2, Hd, FdAdp, Baseline])
        }),
        "hd-vs-fd1" => Some(ExperimentSpec {
            bit_intervals_us: vec![200.0, 300.0, 400.0, 500.0, 600.0],
            samples: Some(10),
            sample_spacing_us: Some(10.0),
            threshold_range: Some(ThresholdRange { start: 1.0, stop: 60.0, step: 1.0 }),
            ..base(ExperimentKind::IntervalSweep, &[Fd1, Hd])
        }),
        _ => None,
    }
}
