use hcl_core::losses::{bce_loss, zero_one_loss};
use hcl_core::verify::{random_dominating, random_taxonomy, satisfies_constraint};
use hcl_core::{
    hier_transform, hier_transform_backward, LabelMatrix, LossSurface, Scope, ScoreMatrix, Taxonomy,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> (Taxonomy, LossSurface, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = random_taxonomy(&mut rng, 30, 5);
    let n = rng.random_range(1..=20);
    let ties = rng.random_bool(0.5);
    let v = Array2::from_shape_fn((n, t.len()), |_| {
        if ties {
            rng.random_range(0..3) as f64
        } else {
            rng.random_range(0.0..5.0)
        }
    });
    (t, LossSurface::new(v).unwrap(), rng)
}

proptest! {
    #[test]
    fn all_shallower_satisfies_constraint(seed in any::<u64>()) {
        let (t, base, _) = instance(seed);
        let (out, _) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        prop_assert!(satisfies_constraint(out.values(), &t));
        prop_assert!(base.le(&out));
    }

    #[test]
    fn ancestors_only_is_monotone_on_chains(seed in any::<u64>()) {
        let (t, base, _) = instance(seed);
        let (out, _) = hier_transform(&base, &t, Scope::AncestorsOnly).unwrap();
        let (wide, _) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        prop_assert!(base.le(&out));
        prop_assert!(out.le(&wide));
        for c in t.class_ids() {
            for a in t.ancestors(c).unwrap() {
                for i in 0..out.shape().0 {
                    prop_assert!(out.values()[[i, c.0]] >= out.values()[[i, a.0]]);
                }
            }
        }
    }

    #[test]
    fn tight_under_dominating_surfaces(seed in any::<u64>()) {
        let (t, base, mut rng) = instance(seed);
        let (out, _) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        for _ in 0..3 {
            let g = random_dominating(&mut rng, &base, &t);
            prop_assert!(satisfies_constraint(&g, &t));
            prop_assert!(out.le(&LossSurface::new(g).unwrap()));
        }
    }

    #[test]
    fn idempotent(seed in any::<u64>()) {
        let (t, base, _) = instance(seed);
        for scope in [Scope::AllShallower, Scope::AncestorsOnly] {
            let (once, _) = hier_transform(&base, &t, scope).unwrap();
            let (twice, _) = hier_transform(&once, &t, scope).unwrap();
            prop_assert_eq!(once.values(), twice.values());
        }
    }

    #[test]
    fn routing_points_at_source_values(seed in any::<u64>()) {
        let (t, base, _) = instance(seed);
        let (out, routing) = hier_transform(&base, &t, Scope::AllShallower).unwrap();
        let r = routing.values();
        for ((i, j), &v) in out.values().indexed_iter() {
            let src = r[[i, j]];
            prop_assert_eq!(v, base.values()[[i, src]]);
            prop_assert!(t.levels()[src] <= t.levels()[j]);
        }
        let up = Array2::from_elem(out.values().dim(), 1.0);
        let g = hier_transform_backward(&routing, &up).unwrap();
        prop_assert_eq!(g.sum(), up.sum());
    }

    #[test]
    fn constrained_zero_one_stays_binary(seed in any::<u64>(), thr in 0.05f64..0.95) {
        let (t, base, mut rng) = instance(seed);
        let n = base.shape().0;
        let y = LabelMatrix::from_signs(Array2::from_shape_fn((n, t.len()), |_| {
            if rng.random_bool(0.4) { 1 } else { -1 }
        })).unwrap();
        let s = ScoreMatrix::new(Array2::from_shape_fn((n, t.len()), |_| rng.random_range(0.0..1.0))).unwrap();
        let e = zero_one_loss(&y, &s, thr).unwrap();
        let (eh, _) = hier_transform(&e, &t, Scope::AllShallower).unwrap();
        prop_assert!(eh.values().iter().all(|&v| v == 0.0 || v == 1.0));
        prop_assert!(e.le(&eh));
        let l = bce_loss(&y, &s).unwrap();
        prop_assert!(l.values().iter().all(|v| v.is_finite() && *v >= 0.0));
    }
}
