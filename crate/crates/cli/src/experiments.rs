//! Experiment runners. Engines run in parallel; rows come out in spec order.

use anyhow::{Context, Result};
use mcrelay_core::analytics::{
    argmin_threshold, expected_error_sweep, random_bits, search_model, AnalyticModel, AnalyticsOptions, ThresholdPair,
};
use mcrelay_core::model::{ErrorStats, ProtocolConfig, ProtocolKind};
use mcrelay_core::seed::{Purpose, SeedKey};
use mcrelay_core::sim::validation::{physics_suite, poisson_moments, Check, MomentCell, PhysicsOptions};
use mcrelay_core::sim::{RealizationResult, Simulator};
use serde::{Deserialize, Serialize};

use crate::spec::{ExperimentKind, ExperimentSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerBit {
    pub analytics: Option<Vec<f64>>,
    pub simulation: Option<Vec<f64>>,
}

/// One protocol at one (T_B, threshold) point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub protocol: String,
    pub bit_interval_us: f64,
    /// Common relay/destination threshold; the fixed part for FD-Adp.
    pub threshold: f64,
    pub analytics_error: Option<f64>,
    pub analytics_ci_halfwidth: Option<f64>,
    pub simulation_error: Option<f64>,
    pub simulation_ci_halfwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_bit: Option<PerBit>,
}

impl SweepRow {
    fn new(kind: ProtocolKind, tb: f64, threshold: f64, analytics: Option<&ErrorStats>, sim: Option<&ErrorStats>, per_bit: bool) -> Self {
        Self {
            protocol: kind.name().to_string(),
            bit_interval_us: tb,
            threshold,
            analytics_error: analytics.map(|s| s.average_error),
            analytics_ci_halfwidth: analytics.map(|s| s.ci_halfwidth),
            simulation_error: sim.map(|s| s.average_error),
            simulation_ci_halfwidth: sim.map(|s| s.ci_halfwidth),
            per_bit: per_bit.then(|| PerBit {
                analytics: analytics.map(|s| s.per_bit_error.clone()),
                simulation: sim.map(|s| s.per_bit_error.clone()),
            }),
        }
    }
}

/// Count moments of one protocol with fixed source bits and the relay
/// forced to forward them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountMoments {
    pub protocol: String,
    pub source_bits: Vec<bool>,
    pub cells: Vec<MomentCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsReport {
    pub checks: Vec<Check>,
    pub moments: Vec<CountMoments>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// The spec as run, with overrides applied.
    pub spec: ExperimentSpec,
    pub seed: u64,
    /// Every protocol configuration evaluated, SI units.
    pub configs: Vec<ProtocolConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rows: Option<Vec<SweepRow>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub physics: Option<PhysicsReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub traces: Option<Vec<RealizationResult>>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.physics.as_ref().map_or(true, |p| p.passed)
    }
}

pub fn run(spec: &ExperimentSpec, progress: &dyn Fn(&str)) -> Result<Report> {
    spec.validate()?;
    let mut echo = spec.clone();
    echo.output = None;
    echo.format = None;
    let mut report = Report { spec: echo, seed: spec.seed, configs: Vec::new(), rows: None, physics: None, traces: None };
    if spec.kind == ExperimentKind::ValidatePhysics {
        report.physics = Some(validate_physics(spec, progress)?);
        return Ok(report);
    }
    let mut rows = Vec::new();
    for kind in spec.protocol_kinds() {
        for tb in spec.bit_intervals() {
            progress(&format!("{kind} at T_B = {tb} us"));
            report.configs.push(spec.protocol_config(kind, tb));
            let point = || -> Result<Vec<SweepRow>> {
                match spec.kind {
                    ExperimentKind::ThresholdSweep | ExperimentKind::SingleRun => threshold_sweep(spec, kind, tb),
                    _ => optimal_point(spec, kind, tb).map(|r| vec![r]),
                }
            };
            rows.extend(point().with_context(|| format!("{kind} at T_B = {tb} us"))?);
        }
    }
    if spec.trace_realizations > 0 {
        let mut traces = Vec::new();
        for kind in spec.protocol_kinds() {
            for tb in spec.bit_intervals() {
                traces.extend(count_traces(spec, kind, tb)?);
            }
        }
        report.traces = Some(traces);
    }
    report.rows = Some(rows);
    Ok(report)
}

fn lanes(grid: &[f64]) -> Vec<ThresholdPair> {
    grid.iter().map(|&x| ThresholdPair::uniform(x)).collect()
}

fn analytics_sweep(spec: &ExperimentSpec, kind: ProtocolKind, tb: f64, grid: &[f64]) -> Result<Vec<ErrorStats>> {
    let model = AnalyticModel::new(&spec.protocol_config(kind, tb))?;
    Ok(expected_error_sweep(&model, &lanes(grid), spec.sequences, spec.seed, &AnalyticsOptions::default())?)
}

fn simulation_sweep(spec: &ExperimentSpec, kind: ProtocolKind, tb: f64, grid: &[f64]) -> Result<Vec<ErrorStats>> {
    let sim = Simulator::new(&spec.sim_config(kind, tb))?;
    Ok(sim.estimate_lanes(&lanes(grid))?)
}

pub fn threshold_sweep(spec: &ExperimentSpec, kind: ProtocolKind, tb: f64) -> Result<Vec<SweepRow>> {
    let grid = spec.threshold_grid();
    let analytics = spec.engine.analytics().then(|| analytics_sweep(spec, kind, tb, &grid)).transpose()?;
    let sim = spec.engine.simulation().then(|| simulation_sweep(spec, kind, tb, &grid)).transpose()?;
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            SweepRow::new(kind, tb, x, analytics.as_ref().map(|a| &a[i]), sim.as_ref().map(|s| &s[i]), spec.per_bit)
        })
        .collect())
}

/// Optimal threshold from the analytics (or from the simulation when it
/// runs alone), with the selected engines evaluated there.
pub fn optimal_point(spec: &ExperimentSpec, kind: ProtocolKind, tb: f64) -> Result<SweepRow> {
    let grid = spec.threshold_grid();
    if spec.engine.analytics() {
        let model = AnalyticModel::new(&spec.protocol_config(kind, tb))?;
        let search = search_model(&model, &grid, spec.sequences, spec.seed, &AnalyticsOptions::default())?;
        let sim = spec
            .engine
            .simulation()
            .then(|| simulation_sweep(spec, kind, tb, &[search.best_threshold]))
            .transpose()?;
        let sim = sim.as_ref().map(|s| &s[0]);
        return Ok(SweepRow::new(kind, tb, search.best_threshold, Some(&search.best), sim, spec.per_bit));
    }
    let stats = simulation_sweep(spec, kind, tb, &grid)?;
    let curve: Vec<(f64, f64)> = grid.iter().zip(&stats).map(|(&x, s)| (x, s.average_error)).collect();
    let (best, _) = argmin_threshold(&curve).expect("grid is not empty");
    let idx = grid.iter().position(|&x| x == best).expect("argmin is a grid point");
    Ok(SweepRow::new(kind, tb, best, None, Some(&stats[idx]), spec.per_bit))
}

fn count_traces(spec: &ExperimentSpec, kind: ProtocolKind, tb: f64) -> Result<Vec<RealizationResult>> {
    let mut cfg = spec.sim_config(kind, tb);
    cfg.trace = true;
    let threshold = spec.threshold_grid()[0];
    cfg.protocol = cfg.protocol.with_threshold(threshold);
    let sim = Simulator::new(&cfg)?;
    (0..spec.trace_realizations as u64).map(|i| Ok(sim.run_realization(i)?)).collect()
}

/// Protocols whose count statistics are checked by `validate-physics`.
pub const MOMENT_PROTOCOLS: [ProtocolKind; 4] =
    [ProtocolKind::Fd1, ProtocolKind::Fd2, ProtocolKind::Hd, ProtocolKind::Baseline];

/// Fixed information bits of the count-statistics check.
pub fn moment_bits(seed: u64, length: usize) -> Vec<bool> {
    random_bits(&mut SeedKey::derive(seed, Purpose::Validation, u64::MAX).rng(0), length, 0.5)
}

fn moment_checks(protocol: ProtocolKind, cells: &[MomentCell]) -> Vec<Check> {
    let mut out = Vec::new();
    for c in cells.iter().filter(|c| c.sample.is_none()) {
        let at = format!("counts {protocol} {:?}[{}]", c.node, c.interval);
        out.push(Check {
            name: format!("{at} mean"),
            observed: c.mean,
            expected: c.expected,
            sigma: c.std_error,
            deviation: (c.mean - c.expected).abs(),
            tolerance: 3.0 * c.std_error,
            passed: c.mean_ok,
        });
        let ratio = if c.mean > 0.0 { c.var_ratio() } else { 1.0 };
        out.push(Check {
            name: format!("{at} variance/mean"),
            observed: ratio,
            expected: 1.0,
            sigma: 0.0,
            deviation: (ratio - 1.0).abs(),
            tolerance: 0.1,
            passed: c.ratio_ok,
        });
    }
    out
}

pub fn validate_physics(spec: &ExperimentSpec, progress: &dyn Fn(&str)) -> Result<PhysicsReport> {
    let ph = &spec.physics;
    let opts = PhysicsOptions {
        walkers: ph.walkers,
        master_seed: spec.seed,
        diffusion_scale: ph.diffusion_scale,
        ..PhysicsOptions::default()
    };
    progress(&format!("single-molecule checks with {} walkers", ph.walkers));
    let mut checks = physics_suite(&opts)?;
    let mut moments = Vec::new();
    let bits = moment_bits(spec.seed, ph.length);
    let tb = spec.bit_intervals()[0];
    for kind in MOMENT_PROTOCOLS {
        progress(&format!("count statistics for {kind} over {} realizations", ph.realizations));
        let mut cfg = spec.protocol_config(kind, tb);
        cfg.modulation.length = ph.length;
        let relay = kind.has_relay().then_some(bits.as_slice());
        let cells = poisson_moments(&cfg, &bits, relay, ph.realizations, spec.seed)
            .with_context(|| format!("count statistics for {kind}"))?;
        checks.extend(moment_checks(kind, &cells));
        moments.push(CountMoments { protocol: kind.name().to_string(), source_bits: bits.clone(), cells });
    }
    let passed = checks.iter().all(|c| c.passed);
    Ok(PhysicsReport { checks, moments, passed })
}
