//! Sampling schedules, per-link lag weights and expected counts.
//!
//! A lag weight `w[k]` is the expected number of samples in which one
//! molecule, emitted `k` intervals before the current one, is seen by the
//! receiver: `w[k] = Σ_m P_ob(k·T_B + m·t0)`. Multiplying by the emission
//! count and summing over the transmitted bits gives the Poisson mean of the
//! receiver's weighted sum.

use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModulationConfig, NodeId, ProtocolConfig, ProtocolKind, SpeciesId, Topology};
use crate::physics::{observation_probability, self_observation_probability};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSchedule {
    pub samples: usize,
    pub spacing: f64,
    pub bit_interval: f64,
}

impl SampleSchedule {
    pub fn new(samples: usize, spacing: f64, bit_interval: f64) -> Result<Self> {
        if samples == 0 || !(spacing > 0.0) || !(bit_interval > 0.0) {
            return Err(Error::Domain(format!(
                "schedule needs samples >= 1 and positive times (M = {samples}, t0 = {spacing}, T_B = {bit_interval})"
            )));
        }
        if samples as f64 * spacing > bit_interval * (1.0 + 1e-12) {
            return Err(Error::Domain(format!(
                "{samples} samples spaced {spacing} s do not fit in {bit_interval} s"
            )));
        }
        Ok(Self { samples, spacing, bit_interval })
    }

    pub fn from_modulation(m: &ModulationConfig) -> Self {
        Self { samples: m.samples, spacing: m.sample_spacing, bit_interval: m.bit_interval }
    }

    /// Offset of sample `m` (1-based) from the start of its interval.
    pub fn offset(&self, m: usize) -> f64 {
        m as f64 * self.spacing
    }

    /// Absolute time of sample `m` (1-based) in interval `interval` (0-based).
    pub fn sample_time(&self, interval: usize, m: usize) -> f64 {
        interval as f64 * self.bit_interval + self.offset(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Kernel {
    /// Uniform-concentration observation of a distant sphere.
    Uniform { volume: f64, distance: f64 },
    /// Emitter at the observer's own center.
    SelfObservation { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub tx: NodeId,
    pub rx: NodeId,
    pub species: SpeciesId,
    pub diffusion: f64,
    pub kernel: Kernel,
}

impl Link {
    pub fn between(topology: &Topology, tx: NodeId, rx: NodeId, species: SpeciesId) -> Result<Self> {
        let missing = |id| Error::Usage(format!("topology has no node {id:?}"));
        let t = topology.node(tx).ok_or_else(|| missing(tx))?;
        let r = topology.node(rx).ok_or_else(|| missing(rx))?;
        if r.radius <= 0.0 {
            return Err(Error::Usage(format!("node {rx:?} is not an observer")));
        }
        let kernel = if tx == rx {
            Kernel::SelfObservation { radius: r.radius }
        } else {
            Kernel::Uniform { volume: r.volume(), distance: t.position.distance(r.position) }
        };
        Ok(Self { tx, rx, species, diffusion: topology.diffusion(species), kernel })
    }

    pub fn is_self(&self) -> bool {
        matches!(self.kernel, Kernel::SelfObservation { .. })
    }

    /// Observation probability of one molecule `t` seconds after emission.
    pub fn probability(&self, t: f64) -> Result<f64> {
        let p = match self.kernel {
            Kernel::Uniform { volume, distance } => observation_probability(volume, self.diffusion, distance, t)?,
            Kernel::SelfObservation { radius } => self_observation_probability(radius, self.diffusion, t)?,
        };
        Ok(p.value())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagWeightTable {
    pub link: Link,
    weights: Vec<f64>,
}

impl LagWeightTable {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Zero past the end of the table.
    pub fn weight(&self, lag: usize) -> f64 {
        self.weights.get(lag).copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn is_self(&self) -> bool {
        self.link.is_self()
    }

    /// Drops interference older than `depth` intervals.
    pub fn truncated(mut self, depth: usize) -> Self {
        for w in self.weights.iter_mut().skip(depth.max(1)) {
            *w = 0.0;
        }
        self
    }
}

pub fn build_lag_weights(link: Link, schedule: &SampleSchedule, lags: usize) -> Result<LagWeightTable> {
    if lags == 0 {
        return Err(Error::Usage("lag table needs at least one entry".into()));
    }
    let weights = (0..lags)
        .map(|k| (1..=schedule.samples).map(|m| link.probability(schedule.sample_time(k, m))).sum())
        .collect::<Result<Vec<f64>>>()?;
    Ok(LagWeightTable { link, weights })
}

/// Expected molecule count, always the sum of its per-link parts.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct CompositeMean(f64);

impl CompositeMean {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl Add for CompositeMean {
    type Output = CompositeMean;
    fn add(self, o: CompositeMean) -> CompositeMean {
        CompositeMean(self.0 + o.0)
    }
}

/// `n · Σ_{i≤j} tx_bits[i] · w[j−i]` for interval `j`.
pub fn cumulative_mean(tx_bits: &[bool], n: u64, table: &LagWeightTable, j: usize) -> Result<CompositeMean> {
    if j >= tx_bits.len() {
        return Err(Error::OutOfRange { index: j, limit: tx_bits.len() });
    }
    let sum: f64 = tx_bits[..=j]
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| table.weight(j - i))
        .sum();
    Ok(CompositeMean(n as f64 * sum))
}

/// Lag tables needed by one protocol. Links absent from the protocol are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTables {
    pub source_relay: Option<LagWeightTable>,
    pub relay_self: Option<LagWeightTable>,
    pub source_destination: Option<LagWeightTable>,
    pub relay_destination: Option<LagWeightTable>,
}

impl LinkTables {
    /// Tables of `lags` entries for every link the protocol uses.
    pub fn build(cfg: &ProtocolConfig, lags: usize) -> Result<Self> {
        let topo = &cfg.topology;
        let schedule = SampleSchedule::from_modulation(&cfg.modulation);
        let table = |tx, rx, sp| Link::between(topo, tx, rx, sp).and_then(|l| build_lag_weights(l, &schedule, lags));
        let relay = cfg.kind.has_relay();
        Ok(Self {
            source_relay: relay.then(|| table(NodeId::S, NodeId::R, topo.hop1)).transpose()?,
            relay_self: cfg
                .kind
                .has_self_interference()
                .then(|| table(NodeId::R, NodeId::R, topo.hop1))
                .transpose()?,
            source_destination: (topo.destination_species() == topo.hop1)
                .then(|| table(NodeId::S, NodeId::D, topo.hop1))
                .transpose()?,
            relay_destination: relay.then(|| table(NodeId::R, NodeId::D, topo.hop2)).transpose()?,
        })
    }

    pub fn with_memory_depth(self, depth: usize) -> Self {
        let cut = |t: Option<LagWeightTable>| t.map(|t| t.truncated(depth));
        Self {
            source_relay: cut(self.source_relay),
            relay_self: cut(self.relay_self),
            source_destination: cut(self.source_destination),
            relay_destination: cut(self.relay_destination),
        }
    }
}

fn part(bits: &[bool], n: u64, table: Option<&LagWeightTable>, j: usize) -> Result<CompositeMean> {
    match table {
        Some(t) => cumulative_mean(bits, n, t, j),
        None => Ok(CompositeMean::default()),
    }
}

/// Expected relay count in interval `j`: source signal plus the relay's own
/// emissions when it detects the species it transmits.
pub fn relay_received_mean(
    source_tx: &[bool],
    relay_tx: &[bool],
    tables: &LinkTables,
    cfg: &ProtocolConfig,
    j: usize,
) -> Result<CompositeMean> {
    if cfg.kind == ProtocolKind::Baseline {
        return Err(Error::Usage("baseline has no relay".into()));
    }
    let m = &cfg.modulation;
    let from_source = part(source_tx, m.source_molecules, tables.source_relay.as_ref(), j)?;
    let from_self = match &tables.relay_self {
        Some(t) => cumulative_mean(relay_tx, m.relay_molecules, t, j)?,
        None => CompositeMean::default(),
    };
    Ok(from_source + from_self)
}

/// Expected destination count in interval `j`: relayed signal plus direct
/// source leakage when both hops share a species.
pub fn destination_received_mean(
    source_tx: &[bool],
    relay_tx: &[bool],
    tables: &LinkTables,
    cfg: &ProtocolConfig,
    j: usize,
) -> Result<CompositeMean> {
    let m = &cfg.modulation;
    let direct = part(source_tx, m.source_molecules, tables.source_destination.as_ref(), j)?;
    let relayed = match &tables.relay_destination {
        Some(t) => cumulative_mean(relay_tx, m.relay_molecules, t, j)?,
        None => CompositeMean::default(),
    };
    Ok(direct + relayed)
}
