//! Explicit molecule tracking.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::{SpeciesId, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Molecule {
    pub species: SpeciesId,
    pub position: Vec3,
    /// Seconds.
    pub emitted_at: f64,
}

/// Molecules partitioned by species.
#[derive(Debug, Clone, Default)]
pub struct MoleculePool {
    parts: [Vec<Molecule>; 2],
}

impl MoleculePool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn species(&self, id: SpeciesId) -> &[Molecule] {
        &self.parts[id.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Molecule> {
        self.parts.iter().flatten()
    }

    /// Keeps only molecules for which `keep` holds.
    pub fn retain<F: FnMut(&Molecule) -> bool>(&mut self, mut keep: F) {
        for part in &mut self.parts {
            part.retain(&mut keep);
        }
    }
}

/// Releases `n` molecules of `species` at `at`.
pub fn emit(pool: &mut MoleculePool, at: Vec3, species: SpeciesId, n: u64, t: f64) {
    let part = &mut pool.parts[species.index()];
    part.extend((0..n).map(|_| Molecule { species, position: at, emitted_at: t }));
}

fn gaussian3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    Vec3::new(
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Moves every molecule by an independent Gaussian step of per-axis standard
/// deviation `sqrt(2 D dt)`, with `D` indexed by species.
pub fn brownian_step<R: Rng + ?Sized>(pool: &mut MoleculePool, diffusion: [f64; 2], dt: f64, rng: &mut R) {
    debug_assert!(dt > 0.0);
    for (part, d) in pool.parts.iter_mut().zip(diffusion) {
        let sigma = (2.0 * d * dt).sqrt();
        for m in part.iter_mut() {
            m.position = m.position + gaussian3(rng, sigma);
        }
    }
}

/// Molecules of `species` with `|position - center| <= radius`.
pub fn count_in_sphere(pool: &MoleculePool, species: SpeciesId, center: Vec3, radius: f64) -> u64 {
    let r2 = radius * radius;
    pool.species(species).iter().filter(|m| (m.position - center).norm_sq() <= r2).count() as u64
}

pub(crate) fn in_ball(x: Vec3, center: Vec3, radius: f64) -> bool {
    (x - center).norm_sq() <= radius * radius
}

pub(crate) fn normal3<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> Vec3 {
    gaussian3(rng, sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{nm, REFERENCE_DIFFUSION};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn emit_and_count() {
        let mut pool = MoleculePool::new();
        emit(&mut pool, Vec3::ZERO, SpeciesId::A1, 0, 0.0);
        assert!(pool.is_empty());
        assert_eq!(count_in_sphere(&pool, SpeciesId::A1, Vec3::ZERO, 1.0), 0);
        let c = Vec3::new(nm(300.0), 0.0, 0.0);
        emit(&mut pool, c, SpeciesId::A1, 5000, 1e-4);
        emit(&mut pool, c, SpeciesId::A2, 7, 1e-4);
        assert_eq!(pool.len(), 5007);
        assert!(pool.species(SpeciesId::A1).iter().all(|m| m.position == c && m.emitted_at == 1e-4));
        assert_eq!(count_in_sphere(&pool, SpeciesId::A1, c, nm(45.0)), 5000);
        assert_eq!(count_in_sphere(&pool, SpeciesId::A2, c, nm(45.0)), 7);
        assert_eq!(count_in_sphere(&pool, SpeciesId::A1, Vec3::ZERO, nm(45.0)), 0);
    }

    #[test]
    fn boundary_counts() {
        let mut pool = MoleculePool::new();
        emit(&mut pool, Vec3::new(1.0, 0.0, 0.0), SpeciesId::A1, 1, 0.0);
        assert_eq!(count_in_sphere(&pool, SpeciesId::A1, Vec3::ZERO, 1.0), 1);
    }

    #[test]
    fn tiny_step_barely_moves() {
        let mut pool = MoleculePool::new();
        emit(&mut pool, Vec3::ZERO, SpeciesId::A1, 100, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        brownian_step(&mut pool, [REFERENCE_DIFFUSION; 2], f64::EPSILON, &mut rng);
        assert!(pool.iter().all(|m| m.position.norm() < 1e-11));
    }

    #[test]
    fn displacement_moments() {
        let (n, steps, dt) = (1_000_000u64, 4, 5e-6);
        let d = [REFERENCE_DIFFUSION, 2.0 * REFERENCE_DIFFUSION];
        let mut pool = MoleculePool::new();
        emit(&mut pool, Vec3::ZERO, SpeciesId::A1, n / 2, 0.0);
        emit(&mut pool, Vec3::ZERO, SpeciesId::A2, n / 2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..steps {
            brownian_step(&mut pool, d, dt, &mut rng);
        }
        assert_eq!(pool.len() as u64, n);
        for sp in [SpeciesId::A1, SpeciesId::A2] {
            let var = 2.0 * d[sp.index()] * steps as f64 * dt;
            let xs: Vec<f64> = pool.species(sp).iter().map(|m| m.position.x).collect();
            let k = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / k;
            let v = xs.iter().map(|x| x * x).sum::<f64>() / k;
            assert!(mean.abs() < 3.0 * (var / k).sqrt());
            assert!((v / var - 1.0).abs() < 0.01, "{sp:?}: {}", v / var);
        }
    }
}
