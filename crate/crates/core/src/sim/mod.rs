//! Particle-based simulation of whole transmissions.
//!
//! A realization draws the source bits, then the molecule counts of every
//! source emission. Relay emissions depend on relay decisions, so their
//! counts are drawn on demand and cached per interval. Several threshold
//! lanes can then be evaluated on the same molecules: each lane runs the
//! detectors on the shared counts plus the relay emissions it made.

mod batch;
pub mod particles;
pub mod validation;

use serde::{Deserialize, Serialize};

use crate::analytics::{random_bits, AdaptiveLag, AnalyticModel, ThresholdPair};
use crate::error::{Error, Result, Violation};
use crate::model::{ErrorStats, ProtocolConfig};
use crate::protocol::BitTimeline;
use crate::seed::{Purpose, SeedKey};
use crate::stats::{indexed_fold, ErrorAccumulator};
use batch::{sample_batch, Emitter, Layout, Observer, Sampler};

const RELAY: usize = 0;
const DESTINATION: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    /// Tracks only molecules that are observed at least once.
    #[default]
    Sparse,
    /// Tracks every molecule in steps of `dt`.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub protocol: ProtocolConfig,
    /// Time step of the direct engine; defaults to the sample spacing.
    pub dt: Option<f64>,
    pub realizations: usize,
    pub master_seed: u64,
    /// Keep per-sample counts in each result.
    pub trace: bool,
    pub engine: Engine,
    /// Direct engine only: drop molecules farther than this many diffusion
    /// lengths from every observer. Off by default.
    pub cull: Option<f64>,
    /// Fixed information bits instead of random ones.
    pub source_bits: Option<Vec<bool>>,
    /// Forced relay decisions, one per information bit.
    pub relay_override: Option<Vec<bool>>,
    pub adaptive_lag: AdaptiveLag,
}

impl SimConfig {
    pub fn new(protocol: ProtocolConfig) -> Self {
        Self {
            protocol,
            dt: None,
            realizations: 10_000,
            master_seed: 0,
            trace: false,
            engine: Engine::default(),
            cull: None,
            source_bits: None,
            relay_override: None,
            adaptive_lag: AdaptiveLag::default(),
        }
    }

    pub fn step(&self) -> f64 {
        self.dt.unwrap_or(self.protocol.modulation.sample_spacing)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = match self.protocol.validate() {
            Ok(()) => Vec::new(),
            Err(Error::InvalidConfig(v)) => v,
            Err(e) => return Err(e),
        };
        let t0 = self.protocol.modulation.sample_spacing;
        let dt = self.step();
        if !(dt.is_finite() && dt > 0.0) {
            v.push(Violation::new("dt", dt, "must be positive and finite"));
        } else if t0 > 0.0 {
            let ratio = t0 / dt;
            if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) || ratio.round() < 1.0 {
                v.push(Violation::new("dt", dt, "sample spacing must be an integer multiple of dt"));
            }
        }
        if self.realizations == 0 {
            v.push(Violation::new("realizations", self.realizations, "must be >= 1"));
        }
        if let Some(c) = self.cull {
            if !(c.is_finite() && c > 0.0) {
                v.push(Violation::new("cull", c, "must be positive and finite"));
            }
        }
        let len = self.protocol.modulation.length;
        if let Some(b) = &self.source_bits {
            if b.len() != len {
                v.push(Violation::new("source_bits", b.len(), format!("length must equal L = {len}")));
            }
        }
        if let Some(r) = &self.relay_override {
            if !self.protocol.kind.has_relay() {
                v.push(Violation::new("relay_override", r.len(), "protocol has no relay"));
            } else if r.len() != len {
                v.push(Violation::new("relay_override", r.len(), format!("length must equal L = {len}")));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalCounts {
    pub interval: usize,
    /// One count per sample.
    pub counts: Vec<u32>,
}

/// Per-sample counts in every interval where each node detects.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountTrace {
    pub relay: Vec<IntervalCounts>,
    pub destination: Vec<IntervalCounts>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealizationResult {
    pub source_bits: Vec<bool>,
    /// Empty without a relay.
    pub relay_detected: Vec<bool>,
    pub destination_detected: Vec<bool>,
    pub errors: Vec<bool>,
    pub trace: Option<CountTrace>,
}

/// Prepared simulation: layout, emitters and the analytic tables used for
/// adaptive thresholds.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimConfig,
    model: AnalyticModel,
    layout: Layout,
    source: Emitter,
    relay: Option<Emitter>,
    sampler: Sampler,
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        cfg.validate()?;
        let p = &cfg.protocol;
        let model = AnalyticModel::new(p)?.with_adaptive_lag(cfg.adaptive_lag);
        let schedule = &model.schedule;
        let topo = &p.topology;
        let k_total = schedule.intervals();
        let mut relay_detects = vec![false; k_total];
        schedule.relay_detect_intervals().for_each(|j| relay_detects[j] = true);
        let mut dest_detects = vec![false; k_total];
        schedule.destination_intervals().for_each(|j| dest_detects[j] = true);
        let relay_node = topo.relay.as_ref();
        let observers = vec![
            Observer {
                center: relay_node.map_or(topo.source.position, |r| r.position),
                radius: relay_node.map_or(0.0, |r| r.radius),
                detects: relay_detects,
            },
            Observer { center: topo.destination.position, radius: topo.destination.radius, detects: dest_detects },
        ];
        let layout = Layout {
            intervals: k_total,
            samples: p.modulation.samples,
            spacing: p.modulation.sample_spacing,
            bit_interval: p.modulation.bit_interval,
            observers,
        };
        let seen_by = |species| {
            let mut v = Vec::new();
            if relay_node.is_some() && topo.hop1 == species {
                v.push(RELAY);
            }
            if topo.destination_species() == species {
                v.push(DESTINATION);
            }
            v
        };
        let source = layout.emitter(
            topo.source.position,
            topo.hop1,
            p.modulation.source_molecules,
            topo.diffusion(topo.hop1),
            seen_by(topo.hop1),
        );
        let relay = relay_node.map(|r| {
            layout.emitter(r.position, topo.hop2, p.modulation.relay_molecules, topo.diffusion(topo.hop2), seen_by(topo.hop2))
        });
        let sampler = match cfg.engine {
            Engine::Sparse => Sampler::Sparse,
            Engine::Direct => Sampler::Direct { dt: cfg.step(), cull: cfg.cull },
        };
        Ok(Self { cfg: cfg.clone(), model, layout, source, relay, sampler })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// Runs realization `index` once per threshold lane on common molecules.
    pub fn run_lanes(&self, index: u64, lanes: &[ThresholdPair]) -> Result<Vec<RealizationResult>> {
        let p = &self.cfg.protocol;
        let schedule = &self.model.schedule;
        let k_total = schedule.intervals();
        let key = SeedKey::derive(self.cfg.master_seed, Purpose::Realizations, index);
        let bits = match &self.cfg.source_bits {
            Some(b) => b.clone(),
            None => random_bits(&mut key.rng(0), p.modulation.length, p.modulation.p1),
        };
        let timeline = BitTimeline::new(schedule, bits.clone())?;
        let mut base = vec![0u32; self.layout.len()];
        for (e, &tx) in timeline.source_tx.iter().enumerate() {
            if tx {
                let c = sample_batch(&self.layout, &self.source, e, self.sampler, &mut key.rng(1 + e as u64));
                base.iter_mut().zip(&c).for_each(|(a, b)| *a += b);
            }
        }
        let source_part = self.model.source_part(&bits)?;
        let mut relay_cache: Vec<Option<Vec<u32>>> = vec![None; k_total];
        let m = self.layout.samples;
        let total = |counts: &[u32], j: usize, obs: usize| -> u32 {
            (1..=m).map(|s| counts[self.layout.index(j, s, obs)]).sum()
        };
        let mut out = Vec::with_capacity(lanes.len());
        for (lane, &xi) in lanes.iter().enumerate() {
            let mut counts = base.clone();
            let mut tl = timeline.clone();
            let mut ctx = self.model.context(&source_part, xi);
            for action in &schedule.actions {
                let j = action.interval;
                if let Some(k) = action.relay_detects {
                    let decided = match &self.cfg.relay_override {
                        Some(forced) => forced[k],
                        None => total(&counts, j, RELAY) as f64 >= ctx.relay_threshold(k)?,
                    };
                    tl.record_relay(schedule, k, decided)?;
                    ctx.record_relay_decision(k, decided)?;
                    if decided {
                        let e = schedule.bit(k).relay_emit.expect("relay protocols forward every bit");
                        let em = self.relay.as_ref().expect("relay emitter");
                        let batch = relay_cache[e].get_or_insert_with(|| {
                            sample_batch(&self.layout, em, e, self.sampler, &mut key.rng(1 + (k_total + e) as u64))
                        });
                        counts.iter_mut().zip(batch.iter()).for_each(|(a, b)| *a += b);
                    }
                }
                if let Some(k) = action.destination_detects {
                    let decided = total(&counts, j, DESTINATION) as f64 >= xi.destination;
                    tl.record_destination(k, decided)?;
                }
            }
            let trace = (self.cfg.trace && lane == 0).then(|| {
                let pick = |obs: usize, intervals: Vec<usize>| {
                    intervals
                        .into_iter()
                        .map(|j| IntervalCounts {
                            interval: j,
                            counts: (1..=m).map(|s| counts[self.layout.index(j, s, obs)]).collect(),
                        })
                        .collect()
                };
                CountTrace {
                    relay: pick(RELAY, schedule.relay_detect_intervals().collect()),
                    destination: pick(DESTINATION, schedule.destination_intervals().collect()),
                }
            });
            let errors = tl.errors();
            out.push(RealizationResult {
                source_bits: tl.source_bits,
                relay_detected: tl.relay_detected.into_iter().flatten().collect(),
                destination_detected: tl.destination_detected.into_iter().map(|d| d.unwrap_or(false)).collect(),
                errors,
                trace,
            });
        }
        Ok(out)
    }

    pub fn run_realization(&self, index: u64) -> Result<RealizationResult> {
        let xi = ThresholdPair::from_config(&self.cfg.protocol);
        Ok(self.run_lanes(index, &[xi])?.remove(0))
    }

    /// Error statistics per lane over `cfg.realizations` realizations.
    pub fn estimate_lanes(&self, lanes: &[ThresholdPair]) -> Result<Vec<ErrorStats>> {
        if lanes.is_empty() {
            return Err(Error::Usage("no thresholds to evaluate".into()));
        }
        let len = self.cfg.protocol.modulation.length;
        let init = || -> Result<Vec<ErrorAccumulator>> { Ok(vec![ErrorAccumulator::new(len); lanes.len()]) };
        let work = |state: &mut Result<Vec<ErrorAccumulator>>, idx: usize| {
            let Ok(accs) = state else { return };
            match self.run_lanes(idx as u64, lanes) {
                Ok(results) => {
                    for (acc, r) in accs.iter_mut().zip(&results) {
                        let row: Vec<f64> = r.errors.iter().map(|&e| if e { 1.0 } else { 0.0 }).collect();
                        acc.push(&row);
                    }
                }
                Err(e) => *state = Err(e),
            }
        };
        let merge = |total: &mut Result<Vec<ErrorAccumulator>>, part: Result<Vec<ErrorAccumulator>>| match (
            total.as_mut(),
            part,
        ) {
            (Ok(t), Ok(p)) => t.iter_mut().zip(&p).for_each(|(a, b)| a.merge(b)),
            (Ok(_), Err(e)) => *total = Err(e),
            (Err(_), _) => {}
        };
        let accs = indexed_fold(self.cfg.realizations, init, work, merge)?;
        Ok(accs.iter().map(ErrorAccumulator::finish).collect())
    }
}

/// Realization `index` of `cfg`. Identical inputs give identical results.
pub fn run_realization(cfg: &SimConfig, index: u64) -> Result<RealizationResult> {
    Simulator::new(cfg)?.run_realization(index)
}

pub fn estimate_error(cfg: &SimConfig) -> Result<ErrorStats> {
    let xi = ThresholdPair::from_config(&cfg.protocol);
    Ok(estimate_error_sweep(cfg, &[xi])?.remove(0))
}

/// Error statistics for every threshold pair, evaluated on common
/// realizations.
pub fn estimate_error_sweep(cfg: &SimConfig, lanes: &[ThresholdPair]) -> Result<Vec<ErrorStats>> {
    Simulator::new(cfg)?.estimate_lanes(lanes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_two_hop_config, us, ProtocolKind};
    use crate::model::NodeId;

    fn cfg(kind: ProtocolKind, len: usize, xi: f64) -> SimConfig {
        let mut p = default_two_hop_config(kind).with_threshold(xi);
        p.modulation.length = len;
        p.modulation.bit_interval = us(400.0);
        let mut c = SimConfig::new(p);
        c.realizations = 200;
        c.master_seed = 17;
        c
    }

    #[test]
    fn identical_seed_identical_result() {
        for engine in [Engine::Sparse, Engine::Direct] {
            let mut c = cfg(ProtocolKind::FdAdp, 4, 12.0);
            c.engine = engine;
            c.trace = true;
            let a = run_realization(&c, 3).unwrap();
            assert_eq!(a, run_realization(&c, 3).unwrap());
            assert_eq!(a.errors.len(), 4);
            assert_eq!(a.relay_detected.len(), 4);
            assert_ne!(a, run_realization(&c, 4).unwrap());
        }
    }

    #[test]
    fn silent_emitters_miss_exactly_the_ones() {
        for kind in ProtocolKind::ALL {
            let mut c = cfg(kind, 12, 1.0);
            c.protocol.modulation.source_molecules = 0;
            c.protocol.modulation.relay_molecules = 0;
            for i in 0..20 {
                let r = run_realization(&c, i).unwrap();
                assert!(r.destination_detected.iter().all(|d| !d));
                assert_eq!(r.errors, r.source_bits);
            }
        }
    }

    #[test]
    fn fd1_relay_never_hears_itself() {
        let mut c = cfg(ProtocolKind::Fd1, 6, 5.0);
        c.source_bits = Some(vec![false; 6]);
        c.relay_override = Some(vec![true; 6]);
        c.trace = true;
        for i in 0..20 {
            let t = run_realization(&c, i).unwrap().trace.unwrap();
            assert!(t.relay.iter().all(|ic| ic.counts.iter().all(|&x| x == 0)));
            assert!(t.destination.iter().skip(1).any(|ic| ic.counts.iter().any(|&x| x > 0)));
        }
        c.protocol = default_two_hop_config(ProtocolKind::Fd2).with_threshold(5.0);
        c.protocol.modulation.length = 6;
        let hears = (0..20).any(|i| {
            let t = run_realization(&c, i).unwrap().trace.unwrap();
            t.relay.iter().skip(1).any(|ic| ic.counts.iter().any(|&x| x > 0))
        });
        assert!(hears);
    }

    #[test]
    fn lanes_match_single_runs() {
        let c = cfg(ProtocolKind::Fd2, 5, 10.0);
        let sim = Simulator::new(&c).unwrap();
        let lanes = [ThresholdPair::uniform(6.0), ThresholdPair::uniform(20.0)];
        let both = sim.run_lanes(2, &lanes).unwrap();
        for (lane, r) in lanes.iter().zip(&both) {
            let mut single = c.clone();
            single.protocol = single.protocol.with_threshold(lane.relay);
            assert_eq!(&run_realization(&single, 2).unwrap(), r);
        }
    }

    #[test]
    fn estimates_are_deterministic_across_threads() {
        let c = cfg(ProtocolKind::Fd1, 8, 10.0);
        let a = estimate_error(&c).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| estimate_error(&c).unwrap());
        assert_eq!(a, b);
        assert_eq!(a.num_realizations, 200);
        let mut one = c.clone();
        one.realizations = 1;
        let s = estimate_error(&one).unwrap();
        assert!(s.per_bit_error.iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn sparse_and_direct_agree_on_error() {
        let mut c = cfg(ProtocolKind::Baseline, 4, 6.0);
        c.realizations = 600;
        let sparse = estimate_error(&c).unwrap();
        c.engine = Engine::Direct;
        c.cull = Some(6.0);
        let direct = estimate_error(&c).unwrap();
        let se = (sparse.std_error.powi(2) + direct.std_error.powi(2)).sqrt();
        assert!((sparse.average_error - direct.average_error).abs() < 4.0 * se + 1e-9, "{sparse:?} {direct:?}");
    }

    #[test]
    fn self_interference_emerges() {
        let mut p = default_two_hop_config(ProtocolKind::Fd2);
        p.modulation.length = 3;
        p.modulation.bit_interval = us(400.0);
        let cells = validation::poisson_moments(&p, &[false; 3], Some(&[true; 3]), 2000, 8).unwrap();
        let relay: Vec<_> = cells.iter().filter(|c| c.node == NodeId::R).collect();
        assert!(relay.iter().filter(|c| c.interval >= 1).all(|c| c.expected > 1.0));
        for c in relay {
            assert!(c.mean_ok, "{c:?}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = cfg(ProtocolKind::Baseline, 4, 6.0);
        c.realizations = 0;
        c.dt = Some(us(7.0));
        c.relay_override = Some(vec![true; 4]);
        c.source_bits = Some(vec![true; 3]);
        match Simulator::new(&c) {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("{other:?}"),
        }
        let mut ok = cfg(ProtocolKind::Fd1, 2, 6.0);
        ok.dt = Some(us(5.0));
        assert!(ok.validate().is_ok());
    }
}
