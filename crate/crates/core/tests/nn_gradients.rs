use hcl_core::nn::{backward, dropout_masks, forward, init_params, predict, MlpParams};
use hcl_core::train::score_gradient;
use hcl_core::{ClassId, LabelMatrix, LossMode, SelectionVector, TrainConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;

fn nudge(p: &MlpParams, k: usize, delta: f64) -> MlpParams {
    let mut q = p.clone();
    let mut idx = 0;
    q.for_each_mut(|v| {
        if idx == k {
            *v += delta;
        }
        idx += 1;
    });
    q
}

/// Five features, six classes, every loss mode; points near relu kinks or
/// max ties are redrawn.
#[test]
fn every_mode_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tax = hcl_core::Taxonomy::parse_hierarchy(&["a", "a/b", "a/c", "d", "d/e", "d/e/f"], '/')
        .unwrap();
    assert_eq!(tax.len(), 6);
    let modes = [
        LossMode::Ce,
        LossMode::Focal,
        LossMode::HclHier,
        LossMode::HclCl,
        LossMode::Hcl,
    ];
    for mode in modes {
        let cfg = TrainConfig {
            loss_mode: mode,
            ..TrainConfig::default()
        };
        let mut checked = 0;
        while checked < 5 {
            let params = init_params(5, &[7], 6, rng.random()).unwrap();
            let x = Array2::from_shape_fn((4, 5), |_| rng.random_range(-1.0..1.0));
            let sets: Vec<Vec<ClassId>> = (0..4)
                .map(|_| vec![ClassId(rng.random_range(0..6))])
                .collect();
            let y = LabelMatrix::from_positive_sets(&sets, &tax).unwrap();
            let (scores, cache) = forward(&params, x.view(), None).unwrap();
            if cache.pre_activation(0).iter().any(|z| z.abs() < 1e-3) {
                continue;
            }
            let base = cfg.effective_base().surface(&y, &scores).unwrap();
            let near_tie = base.values().outer_iter().any(|row| {
                let mut v = row.to_vec();
                v.sort_by(f64::total_cmp);
                v.windows(2).any(|w| w[1] - w[0] < 1e-3)
            });
            if near_tie {
                continue;
            }
            checked += 1;
            let sel = if mode.uses_curriculum() {
                SelectionVector::from_bools(vec![true, false, true, true, false, true])
            } else {
                SelectionVector::all(6)
            };
            let (_, d) = score_gradient(&y, &scores, &tax, &cfg, &sel).unwrap();
            let analytic = backward(&params, &cache, &d).unwrap().flatten();
            let loss = |p: &MlpParams| {
                let s = predict(p, x.view()).unwrap();
                score_gradient(&y, &s, &tax, &cfg, &sel).unwrap().0
            };
            for (k, &a) in analytic.iter().enumerate() {
                let num = (loss(&nudge(&params, k, STEP)) - loss(&nudge(&params, k, -STEP)))
                    / (2.0 * STEP);
                let scale = a.abs().max(num.abs());
                if scale < 1e-6 {
                    continue;
                }
                assert!(
                    (a - num).abs() / scale < 1e-4,
                    "{mode}: param {k}: {a} vs {num}"
                );
            }
        }
    }
}

#[test]
fn zero_upstream_gives_zero_gradient() {
    let params = init_params(3, &[4, 4], 2, 0).unwrap();
    let x = Array2::from_elem((2, 3), 0.3);
    let (_, cache) = forward(&params, x.view(), None).unwrap();
    let g = backward(&params, &cache, &Array2::zeros((2, 2))).unwrap();
    assert!(g.flatten().iter().all(|&v| v == 0.0));
}

#[test]
fn dropout_matches_eval_in_expectation() {
    let params = init_params(6, &[10], 3, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Array2::from_shape_fn((1, 6), |_| rng.random_range(0.0..1.0));
    let (_, eval) = forward(&params, x.view(), None).unwrap();
    let target = eval.hidden(0).clone();
    let mut acc = Array2::<f64>::zeros(target.dim());
    let draws = 10_000;
    for _ in 0..draws {
        let masks = dropout_masks(&mut rng, 1, &[10], 0.25);
        let (_, c) = forward(&params, x.view(), Some(&masks)).unwrap();
        acc += c.hidden(0);
    }
    acc /= draws as f64;
    for (m, t) in acc.iter().zip(target.iter()) {
        if *t > 1e-9 {
            assert!((m - t).abs() / t < 0.02, "{m} vs {t}");
        } else {
            assert_eq!(*m, 0.0);
        }
    }
}

#[test]
fn zero_network_scores_one_half() {
    let mut p = init_params(4, &[3], 2, 1).unwrap();
    p.for_each_mut(|v| *v = 0.0);
    let s = predict(&p, Array2::from_elem((3, 4), 1.7).view()).unwrap();
    assert!(s.values().iter().all(|&v| v == 0.5));
}
