use aqa_bench::uniform;
use aqa_core::diffcore::Conv3dSpec;
use aqa_core::model::{ForwardCtx, Model, ModelConfig, Variant};
use aqa_core::Tensor;
use criterion::{criterion_group, criterion_main, Criterion};

fn matmul(c: &mut Criterion) {
    let a = uniform(64 * 64, 1);
    let w = uniform(64 * 64, 2);
    c.bench_function("matmul_64_forward_backward", |b| {
        b.iter(|| {
            let x = Tensor::param(a.clone(), &[64, 64]).unwrap();
            let y = Tensor::param(w.clone(), &[64, 64]).unwrap();
            x.matmul(&y).unwrap().sum_all().backward().unwrap();
            y.grad()
        })
    });
}

fn conv(c: &mut Criterion) {
    let x = uniform(3 * 8 * 16 * 16, 3);
    let k = uniform(8 * 3 * 27, 4);
    let spec = Conv3dSpec {
        stride: [1, 2, 2],
        padding: [1, 1, 1],
    };
    c.bench_function("conv3d_3to8_8x16x16", |b| {
        b.iter(|| {
            let xt = Tensor::param(x.clone(), &[3, 8, 16, 16]).unwrap();
            let kt = Tensor::param(k.clone(), &[8, 3, 3, 3, 3]).unwrap();
            xt.conv3d(&kt, None, spec).unwrap().sum_all().backward().unwrap();
            kt.grad()
        })
    });
}

fn models(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_step_tiny");
    g.sample_size(10);
    for variant in [Variant::ConvMlp, Variant::EncoderMlp, Variant::EncoderDecoder] {
        let cfg = ModelConfig::tiny(variant);
        let model = Model::new(cfg.clone(), 0).unwrap();
        let shape = [cfg.frames, 3, cfg.image_size, cfg.image_size];
        let clip = Tensor::new(uniform(shape.iter().product(), 5), &shape).unwrap();
        g.bench_function(variant.name(), |b| {
            b.iter(|| {
                let p = model.params().bind();
                let out = model.forward(&p, &clip, &mut ForwardCtx::train(1)).unwrap();
                out.sum_all().backward().unwrap();
                p.grads()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, matmul, conv, models);
criterion_main!(benches);
