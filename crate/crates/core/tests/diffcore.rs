use aqa_core::diffcore::{grad_check, Checkpoint, Conv3dSpec, GradCheckConfig, ParamStore};
use aqa_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..shape.iter().product()).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn broadcast_add_matches_explicit_tiling() {
    let (a, b) = (random(&[4, 3], 1), random(&[3], 2));
    let ta = Tensor::param(a.clone(), &[4, 3]).unwrap();
    let tb = Tensor::param(b.clone(), &[3]).unwrap();
    let w = Tensor::new(random(&[4, 3], 3), &[4, 3]).unwrap();
    let y = ta.add(&tb).unwrap();
    y.mul(&w).unwrap().sum_all().backward().unwrap();

    let tiled: Vec<f64> = (0..4).flat_map(|_| b.iter().copied()).collect();
    let tb2 = Tensor::param(tiled, &[4, 3]).unwrap();
    let ta2 = Tensor::param(a, &[4, 3]).unwrap();
    let y2 = ta2.add(&tb2).unwrap();
    y2.mul(&w).unwrap().sum_all().backward().unwrap();

    assert_eq!(y.data(), y2.data());
    assert_eq!(ta.grad(), ta2.grad());
    // the broadcast operand collects the sum over tiles
    let g2 = tb2.grad().unwrap();
    let folded: Vec<f64> = (0..3).map(|j| (0..4).map(|i| g2[i * 3 + j]).sum()).collect();
    for (x, y) in tb.grad().unwrap().iter().zip(&folded) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn shared_subexpression_accumulates_gradient() {
    // y = x*x + x, reached along three paths
    let x = Tensor::param(vec![0.5, -2.0, 3.0], &[3]).unwrap();
    let y = x.mul(&x).unwrap().add(&x).unwrap().sum_all();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, -3.0, 7.0]);

    // diamond: z = e^x; w = z*z + 2z
    let x = Tensor::param(vec![0.3], &[1]).unwrap();
    let z = x.exp();
    let w = z.mul(&z).unwrap().add(&z.scale(2.0)).unwrap().sum_all();
    w.backward().unwrap();
    let e = 0.3f64.exp();
    assert!((x.grad().unwrap()[0] - (2.0 * e * e + 2.0 * e)).abs() < 1e-12);
}

#[test]
fn softmax_cross_entropy_gradient_is_probabilities_minus_onehot() {
    let logits = random(&[4, 5], 7);
    let labels = [2usize, 0, 4, 1];
    let x = Tensor::param(logits.clone(), &[4, 5]).unwrap();
    let p = x.softmax().unwrap();
    let onehot: Vec<f64> = labels
        .iter()
        .flat_map(|&l| (0..5).map(move |j| if j == l { 1.0 } else { 0.0 }))
        .collect();
    let onehot = Tensor::new(onehot.clone(), &[4, 5]).unwrap();
    let loss = p.ln().mul(&onehot).unwrap().sum_all().scale(-1.0 / 4.0);
    loss.backward().unwrap();
    let g = x.grad().unwrap();
    for (k, (gi, (pi, oi))) in g.iter().zip(p.data().iter().zip(onehot.data())).enumerate() {
        assert!((gi - (pi - oi) / 4.0).abs() < 1e-12, "coord {k}");
    }
}

#[test]
fn layer_norm_gradient_is_tight() {
    let mut s = ParamStore::new();
    let id = s.add("x", &[3, 6], random(&[3, 6], 9)).unwrap();
    let w = Tensor::new(random(&[3, 6], 10), &[3, 6]).unwrap();
    let r = grad_check(
        |b| Ok(b[id].layer_norm(1e-5)?.mul(&w)?.sum_all()),
        &s,
        &GradCheckConfig::with_tol(1e-6),
    )
    .unwrap();
    assert!(r.passed, "{r}");
    // plain sum of a normalized row is constant, so its gradient vanishes
    let x = Tensor::param(random(&[2, 6], 11), &[2, 6]).unwrap();
    x.layer_norm(1e-5).unwrap().sum_all().backward().unwrap();
    assert!(x.grad().unwrap().iter().all(|g| g.abs() < 1e-12));
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for t in 0..k {
                out[i * n + j] += a[i * k + t] * b[t * n + j];
            }
        }
    }
    out
}

#[test]
fn conv3d_matches_direct_sum() {
    let (cin, cout, t, h, w) = (2, 3, 4, 5, 6);
    let x = random(&[cin, t, h, w], 12);
    let k = random(&[cout, cin, 3, 3, 3], 13);
    let spec = Conv3dSpec {
        stride: [1, 2, 2],
        padding: [1, 1, 1],
    };
    let y = Tensor::new(x.clone(), &[cin, t, h, w])
        .unwrap()
        .conv3d(&Tensor::new(k.clone(), &[cout, cin, 3, 3, 3]).unwrap(), None, spec)
        .unwrap();
    let (to, ho, wo) = (4, 3, 3);
    assert_eq!(y.shape(), &[cout, to, ho, wo]);
    let at = |c: usize, a: isize, b: isize, d: isize| -> f64 {
        if a < 0 || b < 0 || d < 0 || a >= t as isize || b >= h as isize || d >= w as isize {
            0.0
        } else {
            x[((c * t + a as usize) * h + b as usize) * w + d as usize]
        }
    };
    for co in 0..cout {
        for ot in 0..to {
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut acc = 0.0;
                    for ci in 0..cin {
                        for (dt, dh, dw) in (0..27).map(|q| (q / 9, q / 3 % 3, q % 3)) {
                            let wt = k[(((co * cin + ci) * 3 + dt) * 3 + dh) * 3 + dw];
                            acc += wt
                                * at(
                                    ci,
                                    (ot + dt) as isize - 1,
                                    (2 * oh + dh) as isize - 1,
                                    (2 * ow + dw) as isize - 1,
                                );
                        }
                    }
                    let got = y.data()[((co * to + ot) * ho + oh) * wo + ow];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = ParamStore::new();
    s.add("a.w", &[2, 3], random(&[2, 3], 14)).unwrap();
    s.add("a.b", &[3], random(&[3], 15)).unwrap();
    let path = dir.path().join("m.ckpt");
    let mut c = Checkpoint::from_params(&s);
    c.meta.insert("epoch".into(), "7".into());
    c.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, c);
    let mut fresh = s.clone();
    fresh.values_mut(fresh.id("a.w").unwrap()).fill(0.0);
    back.load_into(&mut fresh).unwrap();
    assert_eq!(fresh, s);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-30.0f64..30.0, 1..40), d in 1usize..8) {
        let rows = v.len() / d;
        prop_assume!(rows > 0);
        let t = Tensor::new(v[..rows * d].to_vec(), &[rows, d]).unwrap().softmax().unwrap();
        for row in t.data().chunks(d) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance(v in prop::collection::vec(-5.0f64..5.0, 8), shift in -100.0f64..100.0) {
        prop_assume!(v.iter().any(|x| (x - v[0]).abs() > 0.1));
        let x: Vec<f64> = v.iter().map(|a| a + shift).collect();
        let t = Tensor::new(x, &[1, 8]).unwrap().layer_norm(0.0).unwrap();
        let mean = t.data().iter().sum::<f64>() / 8.0;
        let var = t.data().iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 8.0;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-9);
    }

    #[test]
    fn matmul_matches_naive(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let (a, b) = (random(&[m, k], seed), random(&[k, n], seed ^ 1));
        let y = Tensor::new(a.clone(), &[m, k]).unwrap().matmul(&Tensor::new(b.clone(), &[k, n]).unwrap()).unwrap();
        for (got, want) in y.data().iter().zip(naive_matmul(&a, &b, m, k, n)) {
            prop_assert!((got - want).abs() < 1e-12);
        }
    }
}
