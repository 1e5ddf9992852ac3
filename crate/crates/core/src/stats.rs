//! Order-independent accumulation of per-bit error values.

use rayon::prelude::*;

use crate::model::ErrorStats;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;

/// Shifted sums so that a constant input yields its value exactly.
#[derive(Debug, Clone, Default)]
struct Moments {
    shift: Option<f64>,
    sum: f64,
    sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        let s = *self.shift.get_or_insert(x);
        let d = x - s;
        self.sum += d;
        self.sq += d * d;
    }

    fn merge(&mut self, n_other: usize, other: &Moments) {
        let Some(sb) = other.shift else { return };
        let sa = *self.shift.get_or_insert(sb);
        let delta = sb - sa;
        self.sq += other.sq + 2.0 * delta * other.sum + n_other as f64 * delta * delta;
        self.sum += other.sum + n_other as f64 * delta;
    }

    fn mean(&self, n: usize) -> f64 {
        self.shift.map_or(0.0, |s| s + self.sum / n as f64)
    }

    fn std_error(&self, n: usize) -> f64 {
        if n < 2 {
            return 0.0;
        }
        let nf = n as f64;
        let var = ((self.sq - self.sum * self.sum / nf) / (nf - 1.0)).max(0.0);
        (var / nf).sqrt()
    }
}

/// Accumulates one vector of per-bit values per independent unit
/// (a source sequence or a simulated realization).
#[derive(Debug, Clone)]
pub struct ErrorAccumulator {
    n: usize,
    bits: Vec<Moments>,
    average: Moments,
}

impl ErrorAccumulator {
    pub fn new(bits: usize) -> Self {
        Self { n: 0, bits: vec![Moments::default(); bits], average: Moments::default() }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, per_bit: &[f64]) {
        debug_assert_eq!(per_bit.len(), self.bits.len());
        for (m, &x) in self.bits.iter_mut().zip(per_bit) {
            m.push(x);
        }
        self.average.push(shifted_mean(per_bit));
        self.n += 1;
    }

    pub fn merge(&mut self, other: &ErrorAccumulator) {
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            a.merge(other.n, b);
        }
        self.average.merge(other.n, &other.average);
        self.n += other.n;
    }

    pub fn finish(&self) -> ErrorStats {
        let n = self.n.max(1);
        let per_bit_error: Vec<f64> = self.bits.iter().map(|m| m.mean(n).clamp(0.0, 1.0)).collect();
        let per_bit_ci_halfwidth = self.bits.iter().map(|m| Z95 * m.std_error(self.n)).collect();
        let std_error = self.average.std_error(self.n);
        ErrorStats {
            average_error: shifted_mean(&per_bit_error),
            per_bit_error,
            per_bit_ci_halfwidth,
            std_error,
            ci_halfwidth: Z95 * std_error,
            num_realizations: self.n,
        }
    }
}

fn shifted_mean(xs: &[f64]) -> f64 {
    match xs.first() {
        None => 0.0,
        Some(&s) => s + xs.iter().map(|x| x - s).sum::<f64>() / xs.len() as f64,
    }
}

/// Units processed per work item. Fixed so that results do not depend on
/// the number of threads.
pub const CHUNK: usize = 64;

/// Runs `work` on units `0..n` in fixed-size chunks (possibly in parallel)
/// and merges chunk states in index order.
pub fn indexed_fold<T, I, W, M>(n: usize, init: I, work: W, merge: M) -> T
where
    T: Send,
    I: Fn() -> T + Sync,
    W: Fn(&mut T, usize) + Sync,
    M: Fn(&mut T, T),
{
    let chunks: Vec<T> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut state = init();
            for unit in c * CHUNK..((c + 1) * CHUNK).min(n) {
                work(&mut state, unit);
            }
            state
        })
        .collect();
    let mut total = init();
    for c in chunks {
        merge(&mut total, c);
    }
    total
}
