//! Fixtures shared by the benchmarks.

use hcl_core::curriculum::ClassLossAggregate;
use hcl_core::{LossSurface, Taxonomy};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Complete tree with `branching^k` classes on level `k`.
pub fn complete_tree(levels: usize, branching: usize) -> Taxonomy {
    let mut paths = Vec::new();
    let mut frontier = vec![String::new()];
    for _ in 0..levels {
        let mut next = Vec::new();
        for prefix in &frontier {
            for b in 1..=branching {
                let p = if prefix.is_empty() {
                    b.to_string()
                } else {
                    format!("{prefix}/{b}")
                };
                paths.push(p.clone());
                next.push(p);
            }
        }
        frontier = next;
    }
    Taxonomy::parse_hierarchy(&paths, '/').expect("valid tree")
}

pub fn random_surface(n: usize, c: usize, seed: u64) -> LossSurface {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LossSurface::new(Array2::from_shape_fn((n, c), |_| {
        rng.random_range(0.0..3.0)
    }))
    .expect("nonnegative")
}

pub fn random_aggregate(c: usize, seed: u64) -> ClassLossAggregate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_class = (0..c).map(|_| rng.random_range(0.0..50.0)).collect();
    ClassLossAggregate::new(per_class, rng.random_range(0.0..c as f64))
}

pub fn random_features(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0))
}
