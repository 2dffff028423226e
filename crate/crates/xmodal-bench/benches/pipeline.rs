//! End-to-end hot-path benchmarks: divergence math, sync profiles, the full
//! scoring forward pass, one training step (forward + backward + update), and
//! ranking metrics. Run with `cargo bench -p xmodal-bench`.

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use xmodal_core::dataio::synthetic::{generate_corpus, materialize, CorpusSpec};
use xmodal_core::losses::{sync_signal, ContraMode, LossWeights};
use xmodal_core::model::{ModelConfig, TwoBranchModel};
use xmodal_core::nn::{Adam, Ctx};
use xmodal_core::teachers::{content_labels, js_divergence, MockTeacher, Teacher};

fn simplex(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    let mut v = Array1::from_shape_fn(dim, |_| -(rng.gen_range(1e-12..1.0f64).ln()));
    let s = v.sum();
    v.mapv_inplace(|x| x / s);
    v
}

fn bench_js(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Array1<f64>, Array1<f64>)> =
        (0..256).map(|_| (simplex(&mut rng, 32), simplex(&mut rng, 32))).collect();
    c.bench_function("js_divergence_256x32", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for (p, q) in &pairs {
                acc += js_divergence(p.view(), q.view()).unwrap();
            }
            black_box(acc)
        })
    });
}

fn bench_sync(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f_a = ndarray::Array2::from_shape_fn((16, 128), |_| rng.gen_range(-1.0..1.0));
    let f_v = ndarray::Array2::from_shape_fn((16, 128), |_| rng.gen_range(-1.0..1.0));
    c.bench_function("sync_signal_16x128", |b| {
        b.iter(|| black_box(sync_signal(&f_a, &f_v).unwrap()))
    });
}

fn sample_and_model() -> (xmodal_core::dataio::VideoSample, TwoBranchModel) {
    let entries = generate_corpus(&CorpusSpec::loo(1, 1, 8, 3)).unwrap();
    let samples = materialize(&entries[..1], 8).unwrap();
    let model = TwoBranchModel::new(&ModelConfig::tiny(), 9).unwrap();
    (samples.into_iter().next().unwrap(), model)
}

fn bench_score(c: &mut Criterion) {
    let (sample, model) = sample_and_model();
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    group.bench_function("score_tiny_t8", |b| {
        b.iter(|| black_box(model.score(&sample).unwrap().s))
    });
    group.finish();
}

fn bench_train_step(c: &mut Criterion) {
    let (sample, model) = sample_and_model();
    let teacher = MockTeacher::new(4);
    let cont = content_labels(&teacher.distributions(&sample).unwrap())
        .unwrap()
        .cont;
    let weights = LossWeights::default();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("forward_backward_update_tiny_t8", |b| {
        b.iter_batched(
            || (model.clone(), Adam::new()),
            |(mut m, mut adam)| {
                let grads = {
                    let mut ctx = Ctx::new(m.store());
                    let g = m
                        .forward_sample(&mut ctx, &sample, &cont, &weights, 1.0, ContraMode::PerFrame)
                        .unwrap();
                    let grads = ctx.tape.backward(g.total);
                    ctx.param_grads(&grads)
                };
                adam.step(m.store_mut(), &grads, 1e-4);
                black_box(m.store().len())
            },
            BatchSize::SmallInput,
        )
    });
    group.finish();
}

fn bench_auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
    let positive: Vec<bool> = (0..10_000).map(|_| rng.gen_bool(0.4)).collect();
    c.bench_function("auc_10k", |b| {
        b.iter(|| black_box(xmodal_core::evaluator::auc(&scores, &positive).unwrap()))
    });
}

criterion_group!(benches, bench_js, bench_sync, bench_score, bench_train_step, bench_auc);
criterion_main!(benches);
