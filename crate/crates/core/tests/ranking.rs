use aqa_core::ranking::{hard_rank, mse_spearman_loss, soft_rank, soft_rank_values, soft_spearman, spearman, LossConfig};
use aqa_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn distinct(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut s = v.clone();
        s.sort_by(f64::total_cmp);
        if s.windows(2).all(|w| w[1] - w[0] > 1e-6) {
            return v;
        }
    }
}

#[test]
fn soft_rank_is_monotone_and_preserves_the_rank_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=12);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let eps = [0.01, 0.1, 1.0, 10.0][rng.gen_range(0..4)];
        let r = soft_rank_values(&x, eps).unwrap().ranks;
        let total = (n * (n + 1)) as f64 / 2.0;
        assert!((r.iter().sum::<f64>() - total).abs() < 1e-9, "{x:?} -> {r:?}");
        for i in 0..n {
            for j in 0..n {
                if x[i] < x[j] {
                    assert!(r[i] <= r[j] + 1e-12, "{x:?} -> {r:?}");
                }
            }
        }
    }
}

#[test]
fn soft_rank_jacobian_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, eps, h) = (7, 0.5, 1e-6);
    for _ in 0..20 {
        let x = distinct(n, &mut rng);
        for out in 0..n {
            let leaf = Tensor::param(x.clone(), &[n]).unwrap();
            let r = soft_rank(&leaf, eps).unwrap();
            let mut seed = vec![0.0; n];
            seed[out] = 1.0;
            r.backward_with(seed).unwrap();
            let row = leaf.grad().unwrap();
            for (i, g) in row.iter().enumerate() {
                let (mut up, mut down) = (x.clone(), x.clone());
                up[i] += h;
                down[i] -= h;
                let fd = (soft_rank_values(&up, eps).unwrap().ranks[out]
                    - soft_rank_values(&down, eps).unwrap().ranks[out])
                    / (2.0 * h);
                assert!((g - fd).abs() < 1e-6, "d r{out} / d x{i}: {g} vs {fd}");
            }
        }
    }
}

#[test]
fn soft_spearman_approaches_hard_spearman() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..200 {
        let n = rng.gen_range(2..=10);
        let y = distinct(n, &mut rng);
        let y_hat = distinct(n, &mut rng);
        let soft = soft_spearman(&y, &Tensor::new(y_hat.clone(), &[n]).unwrap(), 1e-6)
            .unwrap()
            .item()
            .unwrap();
        assert!((soft - spearman(&y, &y_hat).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn loss_terms_match_their_definitions() {
    let y = [[0.5, 3.0], [0.8, 2.0], [0.3, 4.0], [0.9, 3.5]];
    let pred = vec![0.4, 2.8, 0.7, 2.4, 0.5, 3.3, 0.6, 3.0];
    let t = Tensor::new(pred.clone(), &[4, 2]).unwrap();
    let mse = y.iter().flatten().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 8.0;
    let finals_hat: Vec<f64> = pred.chunks(2).map(|p| p[0] * p[1]).collect();
    let sp = soft_spearman(
        &y.iter().map(|p| p[0] * p[1]).collect::<Vec<_>>(),
        &Tensor::new(finals_hat, &[4]).unwrap(),
        0.1,
    )
    .unwrap()
    .item()
    .unwrap();
    let both = mse_spearman_loss(&y, &t, &LossConfig::new(2.0, 3.0, 0.1).unwrap()).unwrap().item().unwrap();
    assert!((both - (2.0 * mse - 3.0 * sp)).abs() < 1e-12);
}

#[test]
fn gradient_descent_on_predictions_lowers_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<[f64; 2]> = (0..8).map(|_| [rng.gen_range(0.3..1.0), rng.gen_range(2.0..4.1)]).collect();
    let mut pred: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..2.5)).collect();
    let cfg = LossConfig::default();
    let eval = |p: &[f64]| {
        mse_spearman_loss(&y, &Tensor::new(p.to_vec(), &[8, 2]).unwrap(), &cfg)
            .unwrap()
            .item()
            .unwrap()
    };
    let first = eval(&pred);
    for _ in 0..50 {
        let leaf = Tensor::param(pred.clone(), &[8, 2]).unwrap();
        mse_spearman_loss(&y, &leaf, &cfg).unwrap().backward().unwrap();
        for (p, g) in pred.iter_mut().zip(leaf.grad().unwrap()) {
            *p -= 0.1 * g;
        }
    }
    let last = eval(&pred);
    assert!(last <= first - 0.1 * first.abs(), "{first} -> {last}");
}

proptest! {
    #[test]
    fn spearman_ignores_monotone_transforms(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..20)) {
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let Ok(base) = spearman(&a, &b) else { return Ok(()) };
        let bent: Vec<f64> = b.iter().map(|x| x.powi(3) + x.exp()).collect();
        prop_assert!((spearman(&a, &bent).unwrap() - base).abs() < 1e-12);
        prop_assert!((spearman(&b, &a).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = b.iter().map(|x| -x).collect();
        prop_assert!((spearman(&a, &flipped).unwrap() + base).abs() < 1e-12);
    }

    #[test]
    fn hard_ranks_are_a_permutation_when_tie_free(seed in any::<u64>(), n in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = distinct(n, &mut rng);
        let mut r = hard_rank(&x).unwrap().ranks;
        r.sort_by(f64::total_cmp);
        prop_assert_eq!(r, (1..=n).map(|k| k as f64).collect::<Vec<_>>());
    }
}
