//! Counts produced by one emission of `N` molecules.
//!
//! Molecules of one emission are independent, so the counts of a whole
//! transmission are the sums of per-emission counts. Two samplers produce
//! the same law:
//!
//! * `direct` tracks every molecule through time steps of `dt`;
//! * `sparse` only materializes molecules that are ever observed. It draws
//!   candidates in proportion to the per-sample observation probabilities,
//!   places each inside the chosen observer, and keeps it only if the
//!   chosen sample is its first observation (checked on a Brownian bridge
//!   back to the emitter). Kept molecules are then walked forward through
//!   the remaining samples.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::particles::{brownian_step, count_in_sphere, emit, in_ball, normal3, MoleculePool};
use crate::model::{SpeciesId, Vec3};
use crate::physics::ball_mass;

/// Above this total expected number of observations per molecule the sparse
/// sampler falls back to direct tracking.
const SPARSE_LIMIT: f64 = 0.9;

#[derive(Debug, Clone)]
pub(crate) struct Observer {
    pub center: Vec3,
    pub radius: f64,
    /// Whether the observer samples in each interval.
    pub detects: Vec<bool>,
}

#[derive(Debug, Clone)]
pub(crate) struct Emitter {
    pub position: Vec3,
    pub species: SpeciesId,
    pub molecules: u64,
    pub diffusion: f64,
    /// Indices into [`Layout::observers`] of the observers counting this species.
    pub seen_by: Vec<usize>,
    /// Observation probability per seen-by observer, indexed `lag * M + m - 1`.
    p: Vec<Vec<f64>>,
}

/// Dense `[interval][sample][observer]` layout of counts.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub intervals: usize,
    pub samples: usize,
    pub spacing: f64,
    pub bit_interval: f64,
    pub observers: Vec<Observer>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.intervals * self.samples * self.observers.len()
    }

    /// `m` is 1-based.
    pub fn index(&self, interval: usize, m: usize, obs: usize) -> usize {
        (interval * self.samples + m - 1) * self.observers.len() + obs
    }

    fn age(&self, lag: usize, m: usize) -> f64 {
        lag as f64 * self.bit_interval + m as f64 * self.spacing
    }

    pub fn emitter(&self, position: Vec3, species: SpeciesId, molecules: u64, diffusion: f64, seen_by: Vec<usize>) -> Emitter {
        let p = seen_by
            .iter()
            .map(|&o| {
                let obs = &self.observers[o];
                let dist = position.distance(obs.center);
                let mut row = Vec::with_capacity(self.intervals * self.samples);
                for lag in 0..self.intervals {
                    for m in 1..=self.samples {
                        let sigma = (2.0 * diffusion * self.age(lag, m)).sqrt();
                        row.push(ball_mass(obs.radius, dist, sigma));
                    }
                }
                row
            })
            .collect();
        Emitter { position, species, molecules, diffusion, seen_by, p }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Sampler {
    Sparse,
    Direct { dt: f64, cull: Option<f64> },
}

/// One sampling instant of a batch: `age` since emission and the observers
/// (indices into `seen_by`) that sample then.
struct Point {
    interval: usize,
    m: usize,
    age: f64,
    observers: Vec<usize>,
}

fn points(layout: &Layout, em: &Emitter, start: usize) -> Vec<Point> {
    let mut out = Vec::new();
    for k in start..layout.intervals {
        let observers: Vec<usize> =
            (0..em.seen_by.len()).filter(|&i| layout.observers[em.seen_by[i]].detects[k]).collect();
        if observers.is_empty() {
            continue;
        }
        for m in 1..=layout.samples {
            out.push(Point { interval: k, m, age: layout.age(k - start, m), observers: observers.clone() });
        }
    }
    out
}

/// Counts of the emission from `em` at the start of interval `start`.
pub(crate) fn sample_batch<R: Rng + ?Sized>(
    layout: &Layout,
    em: &Emitter,
    start: usize,
    sampler: Sampler,
    rng: &mut R,
) -> Vec<u32> {
    let mut counts = vec![0u32; layout.len()];
    let pts = points(layout, em, start);
    if em.molecules == 0 || pts.is_empty() {
        return counts;
    }
    match sampler {
        Sampler::Direct { dt, cull } => direct(layout, em, &pts, dt, cull, &mut counts, rng),
        Sampler::Sparse => {
            if !sparse(layout, em, start, &pts, &mut counts, rng) {
                direct(layout, em, &pts, f64::INFINITY, None, &mut counts, rng);
            }
        }
    }
    counts
}

fn direct<R: Rng + ?Sized>(
    layout: &Layout,
    em: &Emitter,
    pts: &[Point],
    dt: f64,
    cull: Option<f64>,
    counts: &mut [u32],
    rng: &mut R,
) {
    let mut pool = MoleculePool::new();
    emit(&mut pool, em.position, em.species, em.molecules, 0.0);
    let mut diffusion = [0.0; 2];
    diffusion[em.species.index()] = em.diffusion;
    let last = pts.last().map_or(0.0, |p| p.age);
    let mut t = 0.0;
    for p in pts {
        let span = p.age - t;
        let steps = (span / dt * (1.0 + 1e-9)).floor() as usize;
        for _ in 0..steps {
            brownian_step(&mut pool, diffusion, dt, rng);
        }
        let rest = span - steps as f64 * dt;
        if rest > 1e-9 * dt.min(span) {
            brownian_step(&mut pool, diffusion, rest, rng);
        }
        t = p.age;
        for &i in &p.observers {
            let o = em.seen_by[i];
            let obs = &layout.observers[o];
            counts[layout.index(p.interval, p.m, o)] += count_in_sphere(&pool, em.species, obs.center, obs.radius) as u32;
        }
        if let Some(factor) = cull {
            let reach = factor * (6.0 * em.diffusion * (last - t)).sqrt();
            pool.retain(|mol| {
                em.seen_by
                    .iter()
                    .any(|&o| mol.position.distance(layout.observers[o].center) <= layout.observers[o].radius + reach)
            });
        }
    }
}

struct Pair {
    point: usize,
    /// Index into `seen_by`.
    obs: usize,
    p: f64,
}

/// Returns `false` when the batch is too dense for the sparse sampler.
fn sparse<R: Rng + ?Sized>(
    layout: &Layout,
    em: &Emitter,
    start: usize,
    pts: &[Point],
    counts: &mut [u32],
    rng: &mut R,
) -> bool {
    let mut pairs = Vec::new();
    let mut cum = Vec::new();
    let mut total = 0.0;
    for (pi, pt) in pts.iter().enumerate() {
        let lag = pt.interval - start;
        for &i in &pt.observers {
            let p = em.p[i][lag * layout.samples + pt.m - 1];
            if p > 0.0 {
                total += p;
                pairs.push(Pair { point: pi, obs: i, p });
                cum.push(total);
            }
        }
    }
    if total > SPARSE_LIMIT {
        return false;
    }
    if total == 0.0 {
        return true;
    }
    let n = Binomial::new(em.molecules, total).expect("probability in [0, 1]").sample(rng);
    let obs_of = |i: usize| &layout.observers[em.seen_by[i]];
    for _ in 0..n {
        let u = rng.gen::<f64>() * total;
        let idx = cum.partition_point(|&c| c <= u).min(pairs.len() - 1);
        let pair = &pairs[idx];
        let pt = &pts[pair.point];
        let target = obs_of(pair.obs);
        let sigma = (2.0 * em.diffusion * pt.age).sqrt();
        let y = sample_in_ball(em.position, sigma, target.center, target.radius, pair.p, rng);

        // first observation must be the chosen one
        let earlier_same_point = pt.observers.iter().take_while(|&&i| i != pair.obs).any(|&i| {
            let o = obs_of(i);
            in_ball(y, o.center, o.radius)
        });
        if earlier_same_point {
            continue;
        }
        let mut x = em.position;
        let mut t = 0.0;
        let mut hit = false;
        for q in &pts[..pair.point] {
            let h = q.age - t;
            let rest = pt.age - q.age;
            let span = pt.age - t;
            let mean = x + (y - x) * (h / span);
            x = mean + normal3(rng, (2.0 * em.diffusion * h * rest / span).sqrt());
            t = q.age;
            if q.observers.iter().any(|&i| in_ball(x, obs_of(i).center, obs_of(i).radius)) {
                hit = true;
                break;
            }
        }
        if hit {
            continue;
        }

        for &i in pt.observers.iter().skip_while(|&&i| i != pair.obs) {
            let o = obs_of(i);
            if in_ball(y, o.center, o.radius) {
                counts[layout.index(pt.interval, pt.m, em.seen_by[i])] += 1;
            }
        }
        let mut x = y;
        let mut t = pt.age;
        for q in &pts[pair.point + 1..] {
            x = x + normal3(rng, (2.0 * em.diffusion * (q.age - t)).sqrt());
            t = q.age;
            for &i in &q.observers {
                let o = obs_of(i);
                if in_ball(x, o.center, o.radius) {
                    counts[layout.index(q.interval, q.m, em.seen_by[i])] += 1;
                }
            }
        }
    }
    true
}

/// Position of a Gaussian (mean `from`, per-axis `sigma`) conditioned on
/// lying in the ball `(center, radius)`, whose mass is `mass`.
fn sample_in_ball<R: Rng + ?Sized>(from: Vec3, sigma: f64, center: Vec3, radius: f64, mass: f64, rng: &mut R) -> Vec3 {
    let s2 = sigma * sigma;
    let dmin = (from.distance(center) - radius).max(0.0);
    let volume = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
    let peak = (2.0 * std::f64::consts::PI * s2).powf(-1.5) * (-dmin * dmin / (2.0 * s2)).exp();
    let uniform_rate = mass / (volume * peak);
    if mass >= uniform_rate {
        loop {
            let y = from + normal3(rng, sigma);
            if in_ball(y, center, radius) {
                return y;
            }
        }
    }
    loop {
        let y = center + uniform_in_ball(radius, rng);
        let d2 = (y - from).norm_sq();
        if rng.gen::<f64>() < (-(d2 - dmin * dmin) / (2.0 * s2)).exp() {
            return y;
        }
    }
}

fn uniform_in_ball<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if v.norm_sq() <= 1.0 {
            return v * radius;
        }
    }
}
