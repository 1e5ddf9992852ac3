//! Monte Carlo checks of the closed-form physics and of the counting
//! statistics produced by the simulator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::particles::{brownian_step, count_in_sphere, emit, MoleculePool};
use super::{SimConfig, Simulator};
use crate::error::Result;
use crate::link::{destination_received_mean, relay_received_mean, Link, LinkTables, SampleSchedule};
use crate::model::{nm, us, NodeId, ProtocolConfig, SpeciesId, Vec3, REFERENCE_DIFFUSION};
use crate::physics::{observation_probability, self_observation_probability};
use crate::protocol::{build_schedule, BitTimeline};
use crate::seed::{Purpose, SeedKey};
use crate::stats::indexed_fold;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    /// Standard error of `observed`; zero for deterministic checks.
    pub sigma: f64,
    /// `|observed - expected|`.
    pub deviation: f64,
    /// Largest accepted deviation.
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, observed: f64, expected: f64, sigma: f64, tolerance: f64) -> Self {
        let deviation = (observed - expected).abs();
        Self {
            name: name.into(),
            observed,
            expected,
            sigma,
            deviation,
            tolerance,
            passed: deviation <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsOptions {
    pub walkers: u64,
    pub master_seed: u64,
    /// Multiplies the diffusion coefficient used by the walkers only; 1 for
    /// a faithful run. Any other value is a deliberate fault.
    pub diffusion_scale: f64,
    /// Steps each walker takes to reach the observation time.
    pub steps: usize,
}

impl Default for PhysicsOptions {
    fn default() -> Self {
        Self { walkers: 1_000_000, master_seed: 0, diffusion_scale: 1.0, steps: 4 }
    }
}

/// Walkers released at `from` that lie in the ball at time `t`.
fn walkers_inside(opts: &PhysicsOptions, stream: u64, from: Vec3, center: Vec3, radius: f64, t: f64) -> u64 {
    let d = REFERENCE_DIFFUSION * opts.diffusion_scale;
    let per_chunk = 100_000u64;
    let chunks = opts.walkers.div_ceil(per_chunk) as usize;
    indexed_fold(
        chunks,
        || 0u64,
        |acc, c| {
            let n = per_chunk.min(opts.walkers - c as u64 * per_chunk);
            let mut rng = SeedKey::derive(opts.master_seed, Purpose::Validation, stream).rng(c as u64);
            let mut pool = MoleculePool::new();
            emit(&mut pool, from, SpeciesId::A1, n, 0.0);
            let dt = t / opts.steps as f64;
            for _ in 0..opts.steps {
                brownian_step(&mut pool, [d, d], dt, &mut rng);
            }
            *acc += count_in_sphere(&pool, SpeciesId::A1, center, radius);
        },
        |a, b| *a += b,
    )
}

fn binomial_check(name: &str, hits: u64, n: u64, p: f64) -> Check {
    let se = (p * (1.0 - p) / n as f64).sqrt();
    Check::new(name, hits as f64 / n as f64, p, se, 3.0 * se)
}

/// Uniform-concentration observation probability at 300 nm, 20 µs.
pub fn uniform_observation_check(opts: &PhysicsOptions) -> Result<Check> {
    let (a, dist, t) = (nm(45.0), nm(300.0), us(20.0));
    let volume = 4.0 / 3.0 * PI * a.powi(3);
    let p = observation_probability(volume, REFERENCE_DIFFUSION, dist, t)?.value();
    let hits = walkers_inside(opts, 1, Vec3::ZERO, Vec3::new(dist, 0.0, 0.0), a, t);
    Ok(binomial_check("observation probability, 300 nm, 20 us", hits, opts.walkers, p))
}

/// Self-observation probability of a 45 nm sphere at 20 µs.
pub fn self_observation_check(opts: &PhysicsOptions) -> Result<Check> {
    let (a, t) = (nm(45.0), us(20.0));
    let p = self_observation_probability(a, REFERENCE_DIFFUSION, t)?.value();
    let hits = walkers_inside(opts, 2, Vec3::ZERO, Vec3::ZERO, a, t);
    Ok(binomial_check("self-observation probability, 45 nm, 20 us", hits, opts.walkers, p))
}

/// Self-observation closed form against Simpson integration of the
/// Gaussian kernel over the sphere.
pub fn radial_integration_check() -> Result<Check> {
    let (a, d, t) = (nm(45.0), REFERENCE_DIFFUSION, us(20.0));
    let closed = self_observation_probability(a, d, t)?.value();
    let n = 4000;
    let h = a / n as f64;
    let f = |r: f64| 4.0 * PI * r * r * (4.0 * PI * d * t).powf(-1.5) * (-r * r / (4.0 * d * t)).exp();
    let mut sum = f(0.0) + f(a);
    for i in 1..n {
        sum += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    Ok(Check::new("self-observation vs radial integration", sum * h / 3.0, closed, 0.0, 1e-6))
}

/// Per-axis displacement variance after several steps, relative to `2 D t`.
pub fn brownian_variance_check(opts: &PhysicsOptions) -> Check {
    let d = REFERENCE_DIFFUSION * opts.diffusion_scale;
    let dt = us(5.0);
    let steps = opts.steps.max(1);
    let per_chunk = 100_000u64;
    let chunks = opts.walkers.div_ceil(per_chunk) as usize;
    let (sum, sq, count) = indexed_fold(
        chunks,
        || (0.0, 0.0, 0u64),
        |acc, c| {
            let n = per_chunk.min(opts.walkers - c as u64 * per_chunk);
            let mut rng = SeedKey::derive(opts.master_seed, Purpose::Validation, 3).rng(c as u64);
            let mut pool = MoleculePool::new();
            emit(&mut pool, Vec3::ZERO, SpeciesId::A1, n, 0.0);
            for _ in 0..steps {
                brownian_step(&mut pool, [d, d], dt, &mut rng);
            }
            for m in pool.iter() {
                acc.0 += m.position.x;
                acc.1 += m.position.x * m.position.x;
            }
            acc.2 += n;
        },
        |a, b| {
            a.0 += b.0;
            a.1 += b.1;
            a.2 += b.2;
        },
    );
    let n = count as f64;
    let var = sq / n - (sum / n).powi(2);
    let expected = 2.0 * REFERENCE_DIFFUSION * steps as f64 * dt;
    Check::new("displacement variance / 2Dt", var / expected, 1.0, (2.0 / n).sqrt(), 0.01)
}

pub fn physics_suite(opts: &PhysicsOptions) -> Result<Vec<Check>> {
    Ok(vec![
        uniform_observation_check(opts)?,
        self_observation_check(opts)?,
        radial_integration_check()?,
        brownian_variance_check(opts),
    ])
}

/// Moments of one per-sample count over many realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCell {
    pub node: NodeId,
    pub interval: usize,
    /// 1-based sample index; `None` for the interval total.
    pub sample: Option<usize>,
    pub mean: f64,
    pub variance: f64,
    /// Link-model mean.
    pub expected: f64,
    pub std_error: f64,
    pub mean_ok: bool,
    pub ratio_ok: bool,
}

impl MomentCell {
    pub fn var_ratio(&self) -> f64 {
        self.variance / self.mean
    }

    pub fn passed(&self) -> bool {
        self.mean_ok && self.ratio_ok
    }
}

/// Expected per-sample count at `node` in interval `j`, sample `m`, from the
/// link model.
fn link_mean(cfg: &ProtocolConfig, tl: &BitTimeline, node: NodeId, j: usize, m: usize) -> Result<f64> {
    let topo = &cfg.topology;
    let sched = SampleSchedule::from_modulation(&cfg.modulation);
    let t = sched.sample_time(j, m);
    let mut total = 0.0;
    let mut add = |tx: NodeId, species: SpeciesId, emissions: &[bool], n: u64| -> Result<()> {
        let link = Link::between(topo, tx, node, species)?;
        for (i, _) in emissions.iter().enumerate().take(j + 1).filter(|(_, &b)| b) {
            total += n as f64 * link.probability(t - i as f64 * cfg.modulation.bit_interval)?;
        }
        Ok(())
    };
    let counted = if node == NodeId::R { topo.hop1 } else { topo.destination_species() };
    if counted == topo.hop1 {
        add(NodeId::S, topo.hop1, &tl.source_tx, cfg.modulation.source_molecules)?;
    }
    if topo.relay.is_some() && counted == topo.hop2 {
        add(NodeId::R, topo.hop2, &tl.relay_tx, cfg.modulation.relay_molecules)?;
    }
    Ok(total)
}

/// Simulates `realizations` transmissions of the fixed `bits` with the
/// relay forced to forward `relay` (when it exists) and compares counts with
/// the link model, both per sample and for the interval total the detector
/// sums: mean within 3 standard errors and variance/mean in `[0.9, 1.1]`.
/// Cells whose expected mean is zero only need an all-zero observation.
pub fn poisson_moments(
    cfg: &ProtocolConfig,
    bits: &[bool],
    relay: Option<&[bool]>,
    realizations: usize,
    master_seed: u64,
) -> Result<Vec<MomentCell>> {
    let mut sim = SimConfig::new(cfg.clone());
    sim.realizations = realizations;
    sim.master_seed = master_seed;
    sim.trace = true;
    sim.source_bits = Some(bits.to_vec());
    sim.relay_override = relay.map(<[bool]>::to_vec);
    let simulator = Simulator::new(&sim)?;
    let sched = build_schedule(cfg.kind, cfg.modulation.length)?;
    let mut tl = BitTimeline::new(&sched, bits.to_vec())?;
    if let Some(r) = relay {
        for (k, &b) in r.iter().enumerate() {
            tl.record_relay(&sched, k, b)?;
        }
    }
    let tables = LinkTables::build(cfg, sched.intervals())?;
    let mut cells: Vec<(NodeId, usize)> = sched.relay_detect_intervals().map(|j| (NodeId::R, j)).collect();
    cells.extend(sched.destination_intervals().map(|j| (NodeId::D, j)));
    let samples = cfg.modulation.samples;
    let row = samples + 1;
    let width = cells.len() * row;
    let sums = indexed_fold(
        realizations,
        || -> Result<Vec<[f64; 2]>> { Ok(vec![[0.0; 2]; width]) },
        |state, idx| {
            let Ok(acc) = state else { return };
            let trace = match simulator.run_realization(idx as u64) {
                Ok(r) => r.trace.expect("trace requested"),
                Err(e) => {
                    *state = Err(e);
                    return;
                }
            };
            for (slots, ic) in acc.chunks_mut(row).zip(trace.relay.iter().chain(&trace.destination)) {
                let push = |slot: &mut [f64; 2], c: f64| {
                    slot[0] += c;
                    slot[1] += c * c;
                };
                for (slot, &c) in slots.iter_mut().zip(&ic.counts) {
                    push(slot, c as f64);
                }
                push(&mut slots[samples], ic.counts.iter().sum::<u32>() as f64);
            }
        },
        |total, part| match (total.as_mut(), part) {
            (Ok(t), Ok(p)) => t.iter_mut().zip(&p).for_each(|(a, b)| {
                a[0] += b[0];
                a[1] += b[1];
            }),
            (Ok(_), Err(e)) => *total = Err(e),
            (Err(_), _) => {}
        },
    )?;
    let n = realizations as f64;
    let mut out = Vec::with_capacity(width);
    for (ci, &(node, interval)) in cells.iter().enumerate() {
        for m in 1..=row {
            let [s, s2] = sums[ci * row + m - 1];
            let (sample, expected) = if m <= samples {
                (Some(m), link_mean(cfg, &tl, node, interval, m)?)
            } else {
                let composite = match node {
                    NodeId::R => relay_received_mean(&tl.source_tx, &tl.relay_tx, &tables, cfg, interval)?,
                    _ => destination_received_mean(&tl.source_tx, &tl.relay_tx, &tables, cfg, interval)?,
                };
                (None, composite.value())
            };
            let mean = s / n;
            let variance = if realizations > 1 { (s2 - s * s / n) / (n - 1.0) } else { 0.0 };
            let std_error = (variance / n).sqrt();
            let (mean_ok, ratio_ok) = if expected == 0.0 {
                (s == 0.0, s == 0.0)
            } else {
                ((mean - expected).abs() <= 3.0 * std_error, (0.9..=1.1).contains(&(variance / mean)))
            };
            out.push(MomentCell { node, interval, sample, mean, variance, expected, std_error, mean_ok, ratio_ok });
        }
    }
    Ok(out)
}
