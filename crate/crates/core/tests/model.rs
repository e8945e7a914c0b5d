use aqa_core::model::{ForwardCtx, Model, ModelConfig, PredictionPair, Variant};
use aqa_core::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn clips(cfg: &ModelConfig, b: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.frames * 3 * cfg.image_size * cfg.image_size;
    (0..b)
        .map(|_| {
            Tensor::new(
                (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                &[cfg.frames, 3, cfg.image_size, cfg.image_size],
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn every_variant_maps_four_tiny_clips_to_four_pairs() {
    for v in Variant::ALL {
        let cfg = ModelConfig::tiny(v);
        let m = Model::new(cfg.clone(), 0).unwrap();
        let out = m
            .forward_batch(&m.params().bind_frozen(), &clips(&cfg, 4, 1), &mut ForwardCtx::eval())
            .unwrap();
        assert_eq!(out.shape(), &[4, 2], "{v:?}");
        assert!(out.data().iter().all(|x| x.is_finite()));
    }
}

#[test]
fn attention_rows_are_distributions() {
    for v in [Variant::EncoderMlp, Variant::EncoderDecoder, Variant::ConvDecoder] {
        let cfg = ModelConfig::minimal(v);
        let m = Model::new(cfg.clone(), 2).unwrap();
        let mut ctx = ForwardCtx::eval().recording();
        m.forward(&m.params().bind_frozen(), &clips(&cfg, 1, 3)[0], &mut ctx).unwrap();
        assert!(!ctx.attention_maps().is_empty(), "{v:?} recorded no attention");
        for a in ctx.attention_maps() {
            let keys = *a.shape().last().unwrap();
            for row in a.data().chunks(keys) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn batch_order_only_permutes_outputs() {
    for v in Variant::ALL {
        let cfg = ModelConfig::minimal(v);
        let m = Model::new(cfg.clone(), 4).unwrap();
        let xs = clips(&cfg, 4, 5);
        let perm = [2, 0, 3, 1];
        let shuffled: Vec<Tensor> = perm.iter().map(|&i| xs[i].clone()).collect();
        let p = m.params().bind_frozen();
        let a = m.forward_batch(&p, &xs, &mut ForwardCtx::eval()).unwrap();
        let b = m.forward_batch(&p, &shuffled, &mut ForwardCtx::eval()).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            assert_eq!(&b.data()[2 * row..2 * row + 2], &a.data()[2 * src..2 * src + 2], "{v:?}");
        }
    }
}

#[test]
fn class_token_reaches_the_output() {
    for v in [Variant::EncoderMlp, Variant::EncoderDecoder] {
        let cfg = ModelConfig::minimal(v);
        let m = Model::new(cfg.clone(), 6).unwrap();
        let p = m.params().bind();
        let out = m.forward(&p, &clips(&cfg, 1, 7)[0], &mut ForwardCtx::eval()).unwrap();
        out.sum_all().backward().unwrap();
        let cls = m.params().id("patch.cls").expect("class token parameter");
        let g = &p.grads()[cls.index()];
        assert!(g.iter().any(|x| x.abs() > 1e-12), "{v:?}: class token gradient is zero");
    }
}

#[test]
fn dropout_only_acts_in_training() {
    let cfg = ModelConfig::minimal(Variant::EncoderDecoder);
    let m = Model::new(cfg.clone(), 8).unwrap();
    let x = &clips(&cfg, 1, 9)[0];
    let p = m.params().bind_frozen();
    let run = |ctx: &mut ForwardCtx| m.forward(&p, x, ctx).unwrap().data().to_vec();
    assert_eq!(run(&mut ForwardCtx::eval()), run(&mut ForwardCtx::eval()));
    assert_eq!(run(&mut ForwardCtx::train(1)), run(&mut ForwardCtx::train(1)));
    assert_ne!(run(&mut ForwardCtx::train(1)), run(&mut ForwardCtx::eval()));
}

#[test]
fn final_score_clamps_only_the_normalized_part() {
    let p = PredictionPair {
        normalized_score_hat: 1.4,
        difficulty_hat: 3.0,
    };
    assert_eq!(p.final_score(), 3.0);
    let p = PredictionPair {
        normalized_score_hat: -0.2,
        difficulty_hat: 3.0,
    };
    assert_eq!(p.final_score(), 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encoder_accepts_any_valid_geometry(frames in 1usize..4, patches in 1usize..3, heads in prop::sample::select(vec![1usize, 2, 4]), seed in any::<u64>()) {
        let mut cfg = ModelConfig::minimal(Variant::EncoderDecoder);
        cfg.frames = frames;
        cfg.patch_size = 4;
        cfg.image_size = 4 * patches;
        cfg.n_heads = heads;
        cfg.n_decoder_heads = heads;
        cfg.embed_dim = 8;
        let m = Model::new(cfg.clone(), seed).unwrap();
        let out = m.forward(&m.params().bind_frozen(), &clips(&cfg, 1, seed)[0], &mut ForwardCtx::eval()).unwrap();
        prop_assert_eq!(out.shape(), &[1, 2]);
    }
}
