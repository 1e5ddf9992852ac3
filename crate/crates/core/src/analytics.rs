//! Expected error probabilities from Poisson statistics.
//!
//! For every information bit the relay and destination counts are Poisson
//! with means given by the lag tables. The two-hop error combines both hops
//! over the four (source bit, relay correct) cases. Relay decisions on
//! earlier bits are drawn by a biased coin whose bias is the relay's own
//! error probability given the history so far, so one source sequence
//! yields one realization of the relay history. Sweeps share source sequences and coin
//! tosses across thresholds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkTables;
use crate::model::{ErrorStats, ProtocolConfig, ProtocolKind};
use crate::physics::poisson_cdf_below;
use crate::protocol::{build_schedule, BitSlots, Schedule};
use crate::seed::{Purpose, SeedKey};
use crate::stats::{indexed_fold, ErrorAccumulator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    pub relay: f64,
    pub destination: f64,
}

impl ThresholdPair {
    /// Same threshold at relay and destination.
    pub fn uniform(xi: f64) -> Self {
        Self { relay: xi, destination: xi }
    }

    pub fn from_config(cfg: &ProtocolConfig) -> Self {
        Self { relay: cfg.xi_r, destination: cfg.xi_d }
    }
}

/// Which relay emissions feed the varying part of the adaptive threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum AdaptiveLag {
    /// Expected self-interference actually present in the relay's samples:
    /// every emission up to and including the current interval, at its
    /// true age.
    #[default]
    Physical,
    /// Detected bit `i` weighted as if emitted in its detection interval,
    /// so the most recent emission is seen one interval older than it is.
    Literal,
}

/// Bias of the coin that draws relay decisions on earlier bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RelayCoin {
    /// Miss probability when the source bit is 1, false-alarm probability
    /// when it is 0. Relay histories then follow the detector's own law.
    #[default]
    Conditional,
    /// Bit-averaged relay error `P1·miss + P0·false alarm` regardless of the
    /// source bit.
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hop {
    Relay,
    Destination,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticModel {
    pub cfg: ProtocolConfig,
    pub schedule: Schedule,
    pub tables: LinkTables,
    pub adaptive_lag: AdaptiveLag,
    pub coin: RelayCoin,
}

impl AnalyticModel {
    pub fn new(cfg: &ProtocolConfig) -> Result<Self> {
        cfg.validate()?;
        let schedule = build_schedule(cfg.kind, cfg.modulation.length)?;
        let tables = LinkTables::build(cfg, schedule.intervals())?;
        Ok(Self {
            cfg: cfg.clone(),
            schedule,
            tables,
            adaptive_lag: AdaptiveLag::default(),
            coin: RelayCoin::default(),
        })
    }

    pub fn with_memory_depth(mut self, depth: usize) -> Self {
        self.tables = self.tables.with_memory_depth(depth);
        self
    }

    pub fn with_adaptive_lag(mut self, lag: AdaptiveLag) -> Self {
        self.adaptive_lag = lag;
        self
    }

    pub fn with_relay_coin(mut self, coin: RelayCoin) -> Self {
        self.coin = coin;
        self
    }

    pub fn length(&self) -> usize {
        self.schedule.length
    }

    /// Source-side means for one information sequence; shared by every
    /// threshold and relay realization.
    pub fn source_part(&self, bits: &[bool]) -> Result<SourcePart> {
        let len = self.length();
        if bits.len() != len {
            return Err(Error::Usage(format!("expected {len} source bits, got {}", bits.len())));
        }
        let k_total = self.schedule.intervals();
        let mut tx = vec![false; k_total];
        for (b, slots) in bits.iter().zip(self.schedule.bits()) {
            tx[slots.source] = *b;
        }
        let n_s = self.cfg.modulation.source_molecules as f64;
        let mut relay_hist = vec![0.0; len];
        let mut dest_other = vec![0.0; len];
        let mut dest_own = vec![0.0; len];
        for (k, slots) in self.schedule.bits().iter().enumerate() {
            if let (Some(sr), Some(a)) = (&self.tables.source_relay, slots.relay_detect) {
                relay_hist[k] = n_s * (0..a).filter(|&i| tx[i]).map(|i| sr.weight(a - i)).sum::<f64>();
            }
            if let Some(sd) = &self.tables.source_destination {
                let d = slots.destination;
                dest_other[k] = n_s
                    * (0..=d)
                        .filter(|&i| tx[i] && i != slots.source)
                        .map(|i| sd.weight(d - i))
                        .sum::<f64>();
                dest_own[k] = n_s * sd.weight(d - slots.source);
            }
        }
        let relay_own = self.tables.source_relay.as_ref().map_or(0.0, |t| n_s * t.weight(0));
        Ok(SourcePart { bits: bits.to_vec(), tx, relay_hist, relay_own, dest_other, dest_own })
    }

    pub fn context<'a>(&'a self, source: &'a SourcePart, xi: ThresholdPair) -> DecisionContext<'a> {
        let k_total = self.schedule.intervals();
        DecisionContext {
            model: self,
            source,
            xi,
            relay_tx: vec![false; k_total],
            relay_detected: vec![None; self.length()],
            self_at: vec![0.0; k_total],
            literal_at: vec![0.0; k_total],
            relay_dest_at: vec![0.0; k_total],
            next: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourcePart {
    pub bits: Vec<bool>,
    /// Per-interval source emissions.
    pub tx: Vec<bool>,
    /// Relay mean from earlier source bits, at each bit's detection interval.
    relay_hist: Vec<f64>,
    /// Relay mean added by the current bit when it is a 1.
    relay_own: f64,
    /// Direct source leakage at the destination from all other source bits.
    dest_other: Vec<f64>,
    /// Direct leakage added by the current bit when it is a 1.
    dest_own: Vec<f64>,
}

/// State of one relay-history realization for one source sequence and
/// threshold pair. Bits must be resolved in order.
#[derive(Debug, Clone)]
pub struct DecisionContext<'a> {
    model: &'a AnalyticModel,
    source: &'a SourcePart,
    xi: ThresholdPair,
    relay_tx: Vec<bool>,
    relay_detected: Vec<Option<bool>>,
    /// Relay self-interference mean per interval from recorded emissions.
    self_at: Vec<f64>,
    literal_at: Vec<f64>,
    relay_dest_at: Vec<f64>,
    next: usize,
}

impl<'a> DecisionContext<'a> {
    pub fn relay_detected(&self) -> &[Option<bool>] {
        &self.relay_detected
    }

    pub fn relay_tx(&self) -> &[bool] {
        &self.relay_tx
    }

    fn slots(&self, k: usize) -> Result<BitSlots> {
        let len = self.model.length();
        if k >= len {
            return Err(Error::OutOfRange { index: k, limit: len });
        }
        Ok(self.model.schedule.bit(k))
    }

    fn relay_slots(&self, k: usize) -> Result<(usize, usize, usize)> {
        let s = self.slots(k)?;
        match (s.relay_detect, s.relay_emit) {
            (Some(a), Some(e)) => Ok((a, e, s.destination)),
            _ => Err(Error::Usage(format!("{} has no relay", self.model.cfg.kind))),
        }
    }

    /// Expected relay count for bit `k` given the source bit.
    pub fn relay_mean(&self, k: usize, source_bit: bool) -> Result<f64> {
        let (a, _, _) = self.relay_slots(k)?;
        let own = if source_bit { self.source.relay_own } else { 0.0 };
        Ok(self.source.relay_hist[k] + own + self.self_at[a])
    }

    /// Expected destination count for bit `k` given the source bit and the
    /// relay's forwarded bit (ignored without a relay).
    pub fn dest_mean(&self, k: usize, source_bit: bool, relay_bit: bool) -> Result<f64> {
        let s = self.slots(k)?;
        let mut m = self.source.dest_other[k];
        if source_bit {
            m += self.source.dest_own[k];
        }
        if let (Some(rd), Some(e)) = (&self.model.tables.relay_destination, s.relay_emit) {
            m += self.relay_dest_at[s.destination];
            if relay_bit {
                m += self.model.cfg.modulation.relay_molecules as f64 * rd.weight(s.destination - e);
            }
        }
        Ok(m)
    }

    /// Fixed part plus the expected self-interference given the relay's
    /// detected history.
    pub fn adaptive_threshold(&self, k: usize) -> Result<f64> {
        let (a, _, _) = self.relay_slots(k)?;
        let varying = match self.model.adaptive_lag {
            AdaptiveLag::Physical => self.self_at[a],
            AdaptiveLag::Literal => self.literal_at[a],
        };
        Ok(self.xi.relay + varying)
    }

    pub fn relay_threshold(&self, k: usize) -> Result<f64> {
        if self.model.cfg.kind == ProtocolKind::FdAdp {
            self.adaptive_threshold(k)
        } else {
            self.relay_slots(k)?;
            Ok(self.xi.relay)
        }
    }

    /// `(Pr(miss | 1), Pr(false alarm | 0))` at the relay.
    pub fn relay_tails(&self, k: usize) -> Result<(f64, f64)> {
        let thr = self.relay_threshold(k)?;
        let miss = poisson_cdf_below(self.relay_mean(k, true)?, thr)?;
        let fa = 1.0 - poisson_cdf_below(self.relay_mean(k, false)?, thr)?;
        Ok((miss, fa))
    }

    /// One-hop error of bit `k`. At the destination of a two-hop protocol
    /// the relay is taken to forward the source bit correctly.
    pub fn single_hop_error(&self, k: usize, hop: Hop) -> Result<f64> {
        let m = &self.model.cfg.modulation;
        let (miss, fa) = match hop {
            Hop::Relay => self.relay_tails(k)?,
            Hop::Destination => {
                let xi = self.xi.destination;
                (
                    poisson_cdf_below(self.dest_mean(k, true, true)?, xi)?,
                    1.0 - poisson_cdf_below(self.dest_mean(k, false, false)?, xi)?,
                )
            }
        };
        Ok(m.p1 * miss + m.p0() * fa)
    }

    /// End-to-end error probability of bit `k` given the history so far.
    pub fn two_hop_error(&self, k: usize) -> Result<f64> {
        if !self.model.cfg.kind.has_relay() {
            return self.single_hop_error(k, Hop::Destination);
        }
        let (miss, fa) = self.relay_tails(k)?;
        let xi = self.xi.destination;
        let mut below = [[0.0; 2]; 2];
        for (b, row) in below.iter_mut().enumerate() {
            for (r, cell) in row.iter_mut().enumerate() {
                *cell = poisson_cdf_below(self.dest_mean(k, b == 1, r == 1)?, xi)?;
            }
        }
        Ok(two_hop_combine(self.model.cfg.modulation.p1, miss, fa, below))
    }

    /// Stores the relay's decision on bit `k` and its forwarded emission.
    pub fn record_relay_decision(&mut self, k: usize, detected: bool) -> Result<()> {
        let (a, e, _) = self.relay_slots(k)?;
        if k != self.next {
            return Err(Error::Usage(format!("relay decisions must be recorded in order (expected bit {}, got {k})", self.next)));
        }
        self.next += 1;
        self.relay_detected[k] = Some(detected);
        self.relay_tx[e] = detected;
        if !detected {
            return Ok(());
        }
        let n_r = self.model.cfg.modulation.relay_molecules as f64;
        let tables = &self.model.tables;
        if let Some(rr) = &tables.relay_self {
            for j in e..self.self_at.len() {
                self.self_at[j] += n_r * rr.weight(j - e);
            }
            for j in a + 1..self.literal_at.len() {
                self.literal_at[j] += n_r * rr.weight(j - a);
            }
        }
        if let Some(rd) = &tables.relay_destination {
            for j in e..self.relay_dest_at.len() {
                self.relay_dest_at[j] += n_r * rd.weight(j - e);
            }
        }
        Ok(())
    }

    /// Average relay error probability for bit `k`.
    pub fn relay_error_probability(&self, k: usize) -> Result<f64> {
        self.single_hop_error(k, Hop::Relay)
    }

    /// Probability that the relay's decision on bit `k` differs from the
    /// source bit, per the model's [`RelayCoin`].
    pub fn relay_flip_probability(&self, k: usize) -> Result<f64> {
        match self.model.coin {
            RelayCoin::Averaged => self.relay_error_probability(k),
            RelayCoin::Conditional => {
                let (miss, fa) = self.relay_tails(k)?;
                Ok(if self.source.bits[k] { miss } else { fa })
            }
        }
    }

    /// Coin-toss relay decision from a uniform draw `u`; recorded and returned.
    pub fn relay_decision_from_uniform(&mut self, k: usize, u: f64) -> Result<bool> {
        let pe1 = self.relay_flip_probability(k)?;
        let bit = coin_toss_decision(pe1, self.source.bits[k], u);
        self.record_relay_decision(k, bit)?;
        Ok(bit)
    }

    pub fn sample_relay_decision<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) -> Result<bool> {
        let u: f64 = rng.gen();
        self.relay_decision_from_uniform(k, u)
    }
}

/// `|λ − source_bit|` with `λ = 1` iff `u < pe1`.
pub fn coin_toss_decision(pe1: f64, source_bit: bool, u: f64) -> bool {
    (u < pe1) ^ source_bit
}

/// Four-term two-hop error. `below[b][r]` is the probability that the
/// destination count stays under its threshold when the source sent `b` and
/// the relay forwarded `r`.
pub fn two_hop_combine(p1: f64, relay_miss: f64, relay_false_alarm: f64, below: [[f64; 2]; 2]) -> f64 {
    let p0 = 1.0 - p1;
    let e = p1 * relay_miss * below[1][0]
        + p0 * relay_false_alarm * (1.0 - below[0][1])
        + p1 * (1.0 - relay_miss) * below[1][1]
        + p0 * (1.0 - relay_false_alarm) * (1.0 - below[0][0]);
    e.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticsOptions {
    /// Coin-toss relay histories averaged per source sequence.
    pub relay_realizations: usize,
}

impl Default for AnalyticsOptions {
    fn default() -> Self {
        Self { relay_realizations: 1 }
    }
}

/// Draws `len` i.i.d. bits with `Pr(1) = p1`.
pub fn random_bits<R: Rng + ?Sized>(rng: &mut R, len: usize, p1: f64) -> Vec<bool> {
    (0..len).map(|_| rng.gen::<f64>() < p1).collect()
}

/// Per-bit error values of one sequence, one row per threshold pair.
fn sequence_errors(
    model: &AnalyticModel,
    source: &SourcePart,
    lanes: &[ThresholdPair],
    uniforms: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    let len = model.length();
    let reps = uniforms.len().max(1);
    let relay = model.cfg.kind.has_relay();
    lanes
        .iter()
        .map(|&xi| {
            let mut row = vec![0.0; len];
            for rep in 0..reps {
                let mut ctx = model.context(source, xi);
                for (k, cell) in row.iter_mut().enumerate() {
                    *cell += ctx.two_hop_error(k)?;
                    if relay {
                        ctx.relay_decision_from_uniform(k, uniforms[rep][k])?;
                    }
                }
                if !relay {
                    break;
                }
            }
            let div = if relay { reps as f64 } else { 1.0 };
            row.iter_mut().for_each(|x| *x /= div);
            Ok(row)
        })
        .collect()
}

/// Monte Carlo expected error for every threshold pair, with common source
/// sequences and coin tosses across pairs.
pub fn expected_error_sweep(
    model: &AnalyticModel,
    lanes: &[ThresholdPair],
    n_sequences: usize,
    master_seed: u64,
    opts: &AnalyticsOptions,
) -> Result<Vec<ErrorStats>> {
    if n_sequences == 0 {
        return Err(Error::Usage("number of sequences must be >= 1".into()));
    }
    if lanes.is_empty() {
        return Err(Error::Usage("no thresholds to evaluate".into()));
    }
    let len = model.length();
    let p1 = model.cfg.modulation.p1;
    let reps = opts.relay_realizations.max(1);
    let init = || -> Result<Vec<ErrorAccumulator>> { Ok(vec![ErrorAccumulator::new(len); lanes.len()]) };
    let work = |state: &mut Result<Vec<ErrorAccumulator>>, idx: usize| {
        let Ok(accs) = state else { return };
        let key = SeedKey::derive(master_seed, Purpose::Sequences, idx as u64);
        let bits = random_bits(&mut key.rng(0), len, p1);
        let mut coins = key.rng(1);
        let uniforms: Vec<Vec<f64>> = (0..reps).map(|_| (0..len).map(|_| coins.gen()).collect()).collect();
        let rows = model.source_part(&bits).and_then(|src| sequence_errors(model, &src, lanes, &uniforms));
        match rows {
            Ok(rows) => accs.iter_mut().zip(&rows).for_each(|(acc, row)| acc.push(row)),
            Err(e) => *state = Err(e),
        }
    };
    let merge = |total: &mut Result<Vec<ErrorAccumulator>>, part: Result<Vec<ErrorAccumulator>>| match (total.as_mut(), part) {
        (Ok(t), Ok(p)) => t.iter_mut().zip(&p).for_each(|(a, b)| a.merge(b)),
        (Ok(_), Err(e)) => *total = Err(e),
        (Err(_), _) => {}
    };
    let accs = indexed_fold(n_sequences, init, work, merge)?;
    Ok(accs.iter().map(ErrorAccumulator::finish).collect())
}

/// Expected error of `cfg` at its own thresholds.
pub fn expected_error_stats(cfg: &ProtocolConfig, n_sequences: usize, master_seed: u64) -> Result<ErrorStats> {
    expected_error_stats_with(cfg, n_sequences, master_seed, &AnalyticsOptions::default())
}

pub fn expected_error_stats_with(
    cfg: &ProtocolConfig,
    n_sequences: usize,
    master_seed: u64,
    opts: &AnalyticsOptions,
) -> Result<ErrorStats> {
    let model = AnalyticModel::new(cfg)?;
    let mut stats = expected_error_sweep(&model, &[ThresholdPair::from_config(cfg)], n_sequences, master_seed, opts)?;
    Ok(stats.remove(0))
}

/// Exact expectation of the per-bit error over every source sequence and
/// every coin-toss relay history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactError {
    pub per_bit_error: Vec<f64>,
    pub average_error: f64,
}

/// Largest sequence length accepted by the enumeration.
pub const MAX_ENUMERATION_LENGTH: usize = 12;

pub fn exhaustive_error(model: &AnalyticModel, xi: ThresholdPair) -> Result<ExactError> {
    let len = model.length();
    if len > MAX_ENUMERATION_LENGTH {
        return Err(Error::Usage(format!("enumeration limited to L <= {MAX_ENUMERATION_LENGTH}, got {len}")));
    }
    let p1 = model.cfg.modulation.p1;
    let mut per_bit = vec![0.0; len];
    for code in 0u32..(1 << len) {
        let bits: Vec<bool> = (0..len).map(|k| code >> k & 1 == 1).collect();
        let weight: f64 = bits.iter().map(|&b| if b { p1 } else { 1.0 - p1 }).product();
        if weight == 0.0 {
            continue;
        }
        for (acc, e) in per_bit.iter_mut().zip(exhaustive_given_source(model, xi, &bits)?) {
            *acc += weight * e;
        }
    }
    let average_error = per_bit.iter().sum::<f64>() / len as f64;
    Ok(ExactError { per_bit_error: per_bit, average_error })
}

/// Per-bit error for a fixed source sequence, averaged exactly over all
/// relay histories weighted by their coin-toss probabilities.
pub fn exhaustive_given_source(model: &AnalyticModel, xi: ThresholdPair, bits: &[bool]) -> Result<Vec<f64>> {
    let source = model.source_part(bits)?;
    let mut per_bit = vec![0.0; bits.len()];
    let ctx = model.context(&source, xi);
    if model.cfg.kind.has_relay() {
        descend(ctx, 0, 1.0, &mut per_bit)?;
    } else {
        for (k, cell) in per_bit.iter_mut().enumerate() {
            *cell = ctx.two_hop_error(k)?;
        }
    }
    Ok(per_bit)
}

fn descend(ctx: DecisionContext<'_>, k: usize, weight: f64, out: &mut [f64]) -> Result<()> {
    if k == out.len() {
        return Ok(());
    }
    out[k] += weight * ctx.two_hop_error(k)?;
    let pe1 = ctx.relay_flip_probability(k)?;
    let src = ctx.source.bits[k];
    for (flip, p) in [(false, 1.0 - pe1), (true, pe1)] {
        if p > 0.0 {
            let mut next = ctx.clone();
            next.record_relay_decision(k, src ^ flip)?;
            descend(next, k + 1, weight * p, out)?;
        }
    }
    Ok(())
}

/// Lowest point of a curve; ties go to the smaller threshold.
pub fn argmin_threshold(curve: &[(f64, f64)]) -> Option<(f64, f64)> {
    curve.iter().copied().fold(None, |best, (x, e)| match best {
        Some((bx, be)) if be < e || (be == e && bx <= x) => Some((bx, be)),
        _ => Some((x, e)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSearch {
    pub best_threshold: f64,
    pub best: ErrorStats,
    /// Every evaluated (threshold, statistics) pair in grid order.
    pub curve: Vec<(f64, ErrorStats)>,
}

/// Grid search over a common relay/destination threshold (the fixed part
/// for FD-Adp), with common random numbers across grid points.
pub fn optimal_threshold_search(
    cfg: &ProtocolConfig,
    grid: &[f64],
    n_sequences: usize,
    master_seed: u64,
) -> Result<ThresholdSearch> {
    let model = AnalyticModel::new(cfg)?;
    search_model(&model, grid, n_sequences, master_seed, &AnalyticsOptions::default())
}

pub fn search_model(
    model: &AnalyticModel,
    grid: &[f64],
    n_sequences: usize,
    master_seed: u64,
    opts: &AnalyticsOptions,
) -> Result<ThresholdSearch> {
    if grid.is_empty() {
        return Err(Error::Usage("threshold grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::Usage(format!("threshold {bad} must be finite and >= 0")));
    }
    let lanes: Vec<ThresholdPair> = grid.iter().map(|&x| ThresholdPair::uniform(x)).collect();
    let stats = expected_error_sweep(model, &lanes, n_sequences, master_seed, opts)?;
    let points: Vec<(f64, f64)> = grid.iter().zip(&stats).map(|(&x, s)| (x, s.average_error)).collect();
    let (best_threshold, _) = argmin_threshold(&points).expect("non-empty grid");
    let idx = grid.iter().position(|&x| x == best_threshold).expect("argmin is a grid point");
    Ok(ThresholdSearch {
        best_threshold,
        best: stats[idx].clone(),
        curve: grid.iter().copied().zip(stats).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{default_two_hop_config, us};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(kind: ProtocolKind, len: usize) -> AnalyticModel {
        let mut cfg = default_two_hop_config(kind);
        cfg.modulation.length = len;
        AnalyticModel::new(&cfg).unwrap()
    }

    #[test]
    fn first_bit_reference() {
        // high-precision direct summation
        let m = model(ProtocolKind::Fd1, 3);
        let src = m.source_part(&[true, false, true]).unwrap();
        let ctx = m.context(&src, ThresholdPair::uniform(20.0));
        assert_relative_eq!(ctx.relay_mean(0, true).unwrap(), 19.643301697826214, max_relative = 1e-12);
        assert_relative_eq!(ctx.single_hop_error(0, Hop::Relay).unwrap(), 0.25109816132751156, max_relative = 1e-11);
    }

    #[test]
    fn degenerate_thresholds() {
        for kind in ProtocolKind::ALL {
            let mut cfg = default_two_hop_config(kind);
            cfg.modulation.length = 4;
            cfg.modulation.p1 = 0.3;
            cfg.modulation.source_molecules = 0;
            cfg.modulation.relay_molecules = 0;
            let m = AnalyticModel::new(&cfg).unwrap();
            let src = m.source_part(&[true, false, true, true]).unwrap();
            let mut ctx = m.context(&src, ThresholdPair::uniform(3.0));
            for k in 0..4 {
                assert_eq!(ctx.two_hop_error(k).unwrap(), 0.3);
                if kind.has_relay() {
                    assert_eq!(ctx.single_hop_error(k, Hop::Relay).unwrap(), 0.3);
                    ctx.relay_decision_from_uniform(k, 0.5).unwrap();
                }
            }
            let cfg = default_two_hop_config(kind);
            let m = AnalyticModel::new(&cfg).unwrap();
            let bits: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
            let src = m.source_part(&bits).unwrap();
            let ctx = m.context(&src, ThresholdPair::uniform(0.0));
            assert_eq!(ctx.single_hop_error(0, Hop::Destination).unwrap(), 0.5);
            if kind.has_relay() {
                assert_eq!(ctx.single_hop_error(0, Hop::Relay).unwrap(), 0.5);
            }
        }
    }

    #[test]
    fn adaptive_threshold_examples() {
        let m = model(ProtocolKind::FdAdp, 4);
        let rr = m.tables.relay_self.as_ref().unwrap().clone();
        let src = m.source_part(&[true, true, false, false]).unwrap();
        let xi = 7.0;
        let mut ctx = m.context(&src, ThresholdPair::uniform(xi));
        assert_eq!(ctx.adaptive_threshold(0).unwrap(), xi);
        ctx.record_relay_decision(0, false).unwrap();
        assert_eq!(ctx.adaptive_threshold(1).unwrap(), xi);

        // the forwarded bit sits in the relay's own samples at lag 0
        let mut ctx = m.context(&src, ThresholdPair::uniform(xi));
        ctx.record_relay_decision(0, true).unwrap();
        assert_relative_eq!(ctx.adaptive_threshold(1).unwrap(), xi + 5000.0 * rr.weight(0), max_relative = 1e-14);
        ctx.record_relay_decision(1, true).unwrap();
        assert_relative_eq!(
            ctx.adaptive_threshold(2).unwrap(),
            xi + 5000.0 * (rr.weight(0) + rr.weight(1)),
            max_relative = 1e-14
        );
        assert_eq!(ctx.relay_threshold(2).unwrap(), ctx.adaptive_threshold(2).unwrap());
        assert_relative_eq!(ctx.relay_mean(2, false).unwrap() - src.relay_hist[2], ctx.adaptive_threshold(2).unwrap() - xi);

        let lit = model(ProtocolKind::FdAdp, 4).with_adaptive_lag(AdaptiveLag::Literal);
        let mut ctx = lit.context(&src, ThresholdPair::uniform(xi));
        ctx.record_relay_decision(0, true).unwrap();
        assert_relative_eq!(ctx.adaptive_threshold(1).unwrap(), xi + 5000.0 * rr.weight(1), max_relative = 1e-14);
        ctx.record_relay_decision(1, true).unwrap();
        assert_relative_eq!(
            ctx.adaptive_threshold(2).unwrap(),
            xi + 5000.0 * (rr.weight(1) + rr.weight(2)),
            max_relative = 1e-14
        );
    }

    #[test]
    fn fixed_threshold_kinds_ignore_history() {
        let m = model(ProtocolKind::Fd2, 3);
        let src = m.source_part(&[true, true, true]).unwrap();
        let mut ctx = m.context(&src, ThresholdPair::uniform(9.0));
        ctx.record_relay_decision(0, true).unwrap();
        assert_eq!(ctx.relay_threshold(1).unwrap(), 9.0);
        assert!(ctx.record_relay_decision(2, true).is_err());
    }

    #[test]
    fn half_duplex_means_use_interleaved_slots() {
        let m = model(ProtocolKind::Hd, 3);
        let sr = m.tables.source_relay.as_ref().unwrap();
        let rr = m.tables.relay_self.as_ref().unwrap();
        let rd = m.tables.relay_destination.as_ref().unwrap();
        let sd = m.tables.source_destination.as_ref().unwrap();
        let src = m.source_part(&[true, false, true]).unwrap();
        let mut ctx = m.context(&src, ThresholdPair::uniform(5.0));
        ctx.record_relay_decision(0, true).unwrap();
        ctx.record_relay_decision(1, false).unwrap();
        // bit 2: detected in interval 4, relay emitted bit 0 in interval 1
        let want = 5000.0 * (sr.weight(4) + sr.weight(0) + rr.weight(3));
        assert_relative_eq!(ctx.relay_mean(2, true).unwrap(), want, max_relative = 1e-13);
        let want_d = 5000.0 * (sd.weight(5) + sd.weight(1) + rd.weight(4) + rd.weight(0));
        assert_relative_eq!(ctx.dest_mean(2, true, true).unwrap(), want_d, max_relative = 1e-13);
    }

    #[test]
    fn eq_combination_matches_xor_logic() {
        for code in 0..64u32 {
            let bit = |i: u32| (code >> i & 1) as f64;
            let (miss, fa) = (bit(0), bit(1));
            let below = [[bit(2), bit(3)], [bit(4), bit(5)]];
            for p1 in [0.0, 0.3, 1.0] {
                let got = two_hop_combine(p1, miss, fa, below);
                let err = |b: usize| {
                    let relay_wrong = if b == 1 { miss } else { fa } == 1.0;
                    let r = if relay_wrong { 1 - b } else { b };
                    let dest_decides_one = below[b][r] == 0.0;
                    (dest_decides_one != (b == 1)) as u8 as f64
                };
                assert_eq!(got, p1 * err(1) + (1.0 - p1) * err(0), "code {code}");
            }
        }
    }

    #[test]
    fn perfect_first_hop_reduces_to_second_hop() {
        let below = [[0.9, 0.2], [0.7, 0.05]];
        let e = two_hop_combine(0.5, 0.0, 0.0, below);
        assert_relative_eq!(e, 0.5 * below[1][1] + 0.5 * (1.0 - below[0][0]));
        assert!(two_hop_combine(0.5, 0.0, 0.0, [[1.0, 0.0], [1.0, 0.0]]) < 1e-300);
    }

    #[test]
    fn error_free_hops_give_zero() {
        let mut cfg = default_two_hop_config(ProtocolKind::Fd1);
        cfg.modulation.length = 3;
        cfg.modulation.source_molecules = 200_000;
        cfg.modulation.relay_molecules = 200_000;
        let m = AnalyticModel::new(&cfg).unwrap().with_memory_depth(1);
        let src = m.source_part(&[true, false, true]).unwrap();
        let ctx = m.context(&src, ThresholdPair::uniform(300.0));
        assert!(ctx.two_hop_error(0).unwrap() < 1e-12);
    }

    #[test]
    fn coin_toss_frequencies() {
        assert!(coin_toss_decision(0.0, true, 0.0));
        assert!(!coin_toss_decision(0.0, false, 0.999));
        assert!(!coin_toss_decision(1.0, true, 0.999));
        assert!(coin_toss_decision(1.0, false, 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let flips = (0..n).filter(|_| !coin_toss_decision(0.3, true, rng.gen())).count();
        let sigma = (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((flips as f64 / n as f64 - 0.3).abs() < 3.0 * sigma);
    }

    #[test]
    fn sample_relay_decision_records() {
        let m = model(ProtocolKind::Fd2, 2);
        let src = m.source_part(&[true, true]).unwrap();
        let mut ctx = m.context(&src, ThresholdPair::uniform(10.0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = ctx.sample_relay_decision(0, &mut rng).unwrap();
        assert_eq!(ctx.relay_detected()[0], Some(b));
        assert_eq!(ctx.relay_tx()[1], b);
    }

    #[test]
    fn sweep_is_reproducible_and_bounded() {
        let m = model(ProtocolKind::FdAdp, 12);
        let lanes = [ThresholdPair::uniform(4.0), ThresholdPair::uniform(12.0)];
        let a = expected_error_sweep(&m, &lanes, 200, 9, &AnalyticsOptions::default()).unwrap();
        let b = expected_error_sweep(&m, &lanes, 200, 9, &AnalyticsOptions::default()).unwrap();
        assert_eq!(a, b);
        let single = expected_error_sweep(&m, &lanes[1..], 200, 9, &AnalyticsOptions::default()).unwrap();
        assert_eq!(single[0], a[1]);
        for s in &a {
            assert_eq!(s.num_realizations, 200);
            assert!(s.per_bit_error.iter().all(|p| (0.0..=1.0).contains(p)));
            let mean = s.per_bit_error.iter().sum::<f64>() / 12.0;
            assert_relative_eq!(s.average_error, mean, max_relative = 1e-12);
        }
        assert!(expected_error_sweep(&m, &lanes, 0, 9, &AnalyticsOptions::default()).is_err());
    }

    #[test]
    fn silent_source_only_false_alarms() {
        let mut cfg = default_two_hop_config(ProtocolKind::Fd2);
        cfg.modulation.length = 6;
        cfg.modulation.p1 = 0.0;
        let s = expected_error_stats(&cfg.clone().with_threshold(1.0), 50, 1).unwrap();
        assert_eq!(s.average_error, 0.0);
        cfg.modulation.source_molecules = 0;
        cfg.modulation.relay_molecules = 0;
        assert_eq!(expected_error_stats(&cfg.with_threshold(1.0), 50, 1).unwrap().average_error, 0.0);
    }

    #[test]
    fn enumeration_matches_sampling_on_micro_instance() {
        let mut cfg = default_two_hop_config(ProtocolKind::Fd2);
        cfg.modulation.length = 3;
        let m = AnalyticModel::new(&cfg).unwrap();
        let xi = ThresholdPair::uniform(12.0);
        let exact = exhaustive_error(&m, xi).unwrap();
        let mc = expected_error_sweep(&m, &[xi], 10_000, 5, &AnalyticsOptions::default()).unwrap().remove(0);
        assert!((exact.average_error - mc.average_error).abs() < 3.0 * mc.std_error + 1e-12);
        let mut long = cfg.clone();
        long.modulation.length = 13;
        assert!(exhaustive_error(&AnalyticModel::new(&long).unwrap(), xi).is_err());
    }

    #[test]
    fn enumeration_without_relay_is_deterministic() {
        let mut cfg = default_two_hop_config(ProtocolKind::Baseline);
        cfg.modulation.length = 2;
        let m = AnalyticModel::new(&cfg).unwrap();
        let xi = ThresholdPair::uniform(2.0);
        let exact = exhaustive_error(&m, xi).unwrap();
        let mut want = 0.0;
        for bits in [[false, false], [false, true], [true, false], [true, true]] {
            let src = m.source_part(&bits).unwrap();
            want += 0.25 * m.context(&src, xi).two_hop_error(1).unwrap();
        }
        assert_relative_eq!(exact.per_bit_error[1], want, max_relative = 1e-14);
    }

    #[test]
    fn argmin_rules() {
        assert_eq!(argmin_threshold(&[(4.0, 0.2)]), Some((4.0, 0.2)));
        assert_eq!(argmin_threshold(&[(5.0, 0.1), (3.0, 0.1), (4.0, 0.3)]), Some((3.0, 0.1)));
        assert_eq!(argmin_threshold(&[]), None);
        let curve: Vec<(f64, f64)> = (1..=60).map(|x| (x as f64, ((x as f64) - 23.5).powi(2) + 1.0)).collect();
        let (best, _) = argmin_threshold(&curve).unwrap();
        let warped: Vec<(f64, f64)> = curve.iter().map(|&(x, e)| (x, e.ln() * 3.0 - 7.0)).collect();
        assert_eq!(argmin_threshold(&warped).unwrap().0, best);
        assert_eq!(best, 23.0);
    }

    #[test]
    fn search_rejects_bad_grids() {
        let cfg = default_two_hop_config(ProtocolKind::Baseline);
        assert!(optimal_threshold_search(&cfg, &[], 10, 1).is_err());
        assert!(optimal_threshold_search(&cfg, &[f64::NAN], 10, 1).is_err());
        let one = optimal_threshold_search(&cfg, &[3.0], 10, 1).unwrap();
        assert_eq!(one.best_threshold, 3.0);
        assert_eq!(one.curve.len(), 1);
    }

    #[test]
    fn more_molecules_help_without_memory() {
        let mut prev = f64::INFINITY;
        for n in [500u64, 1000, 2000, 4000, 8000] {
            let mut cfg = default_two_hop_config(ProtocolKind::Fd1);
            cfg.modulation.length = 1;
            cfg.modulation.source_molecules = n;
            cfg.modulation.bit_interval = us(400.0);
            let m = AnalyticModel::new(&cfg).unwrap().with_memory_depth(1);
            let src = m.source_part(&[true]).unwrap();
            let best = (0..200)
                .map(|x| m.context(&src, ThresholdPair::uniform(x as f64)).single_hop_error(0, Hop::Relay).unwrap())
                .fold(f64::INFINITY, f64::min);
            assert!(best < prev, "N = {n}");
            prev = best;
        }
    }

    #[test]
    fn coin_modes() {
        let m = model(ProtocolKind::Fd2, 2);
        let src = m.source_part(&[true, false]).unwrap();
        let ctx = m.context(&src, ThresholdPair::uniform(15.0));
        let (miss, _) = ctx.relay_tails(0).unwrap();
        assert_eq!(ctx.relay_flip_probability(0).unwrap(), miss);
        let avg = m.clone().with_relay_coin(RelayCoin::Averaged);
        let actx = avg.context(&src, ThresholdPair::uniform(15.0));
        assert_eq!(actx.relay_flip_probability(0).unwrap(), actx.relay_error_probability(0).unwrap());

        // self-interference after a forwarded 1 locks the relay at 1
        let mut ctx = m.context(&src, ThresholdPair::uniform(15.0));
        ctx.record_relay_decision(0, true).unwrap();
        let (_, fa) = ctx.relay_tails(1).unwrap();
        assert!(fa > 0.999);
        assert_eq!(ctx.relay_flip_probability(1).unwrap(), fa);
    }
}
