use aqa_bench::uniform;
use aqa_core::ranking::{hard_rank, mse_spearman_loss, soft_rank, spearman, LossConfig};
use aqa_core::Tensor;
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn ranks(c: &mut Criterion) {
    let mut g = c.benchmark_group("rank");
    for n in [8usize, 64, 512] {
        let x = uniform(n, n as u64);
        g.bench_with_input(BenchmarkId::new("hard", n), &x, |b, x| b.iter(|| hard_rank(black_box(x)).unwrap()));
        g.bench_with_input(BenchmarkId::new("soft_forward_backward", n), &x, |b, x| {
            b.iter(|| {
                let t = Tensor::param(x.clone(), &[n]).unwrap();
                let r = soft_rank(&t, 0.1).unwrap();
                r.sum_all().backward().unwrap();
                t.grad()
            })
        });
    }
    g.finish();
}

fn correlation(c: &mut Criterion) {
    let y = uniform(1000, 1);
    let z = uniform(1000, 2);
    c.bench_function("spearman_1000", |b| b.iter(|| spearman(black_box(&y), black_box(&z)).unwrap()));
}

fn loss(c: &mut Criterion) {
    let cfg = LossConfig::default();
    let targets: Vec<[f64; 2]> = uniform(16, 3)
        .chunks(2)
        .map(|p| [0.5 + 0.4 * p[0], 3.0 + p[1]])
        .collect();
    let preds = uniform(16, 4);
    c.bench_function("mse_spearman_loss_batch8", |b| {
        b.iter(|| {
            let t = Tensor::param(preds.clone(), &[8, 2]).unwrap();
            mse_spearman_loss(&targets, &t, &cfg).unwrap().backward().unwrap();
            t.grad()
        })
    });
}

criterion_group!(benches, ranks, correlation, loss);
criterion_main!(benches);
