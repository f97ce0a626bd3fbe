//! Seeded benchmark instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tei_core::{FiniteMetricSpace, PowerTypeCost, ProbVector};

pub struct BenchInstance {
    pub space: FiniteMetricSpace,
    pub mu: ProbVector,
    pub nu: ProbVector,
    pub cost: PowerTypeCost,
}

/// `n` sorted random points in `[0, 2]` with squared-distance cost and two
/// full-support measures.
pub fn line_instance(n: usize, seed: u64) -> BenchInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let space = FiniteMetricSpace::from_points(pts).expect("distinct points");
    let m = space.n();
    let mut weights = || ProbVector::normalized((0..m).map(|_| rng.random_range(0.05..1.0)).collect()).expect("positive");
    let mu = weights();
    let nu = weights();
    let cost = PowerTypeCost::square(&space);
    BenchInstance { space, mu, nu, cost }
}
