//! Per-precinct analytic gradient cost, the inner loop of training. One
//! medium precinct (200 voters, 8 covariates) for both model families.

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array1, Array2};
use pbglm::dataset::Precinct;
use pbglm::glm::{self, LogisticParams, ModelParams, NeuralParams};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const VOTERS: usize = 200;
const DIM: usize = 8;
const HIDDEN: usize = 10;

fn fixture() -> (Precinct, ModelParams, ModelParams) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = Array2::zeros((VOTERS, DIM));
    for v in x.iter_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let precinct = Precinct::unlabeled("C", "P", x, 120, VOTERS as u64).unwrap();

    let theta = Array1::from_iter((0..=DIM).map(|_| rng.gen_range(-1.0..1.0)));
    let logistic = ModelParams::Logistic(LogisticParams { theta });

    let mut w1 = Array2::zeros((HIDDEN, DIM));
    for v in w1.iter_mut() {
        *v = rng.gen_range(-0.5..0.5);
    }
    let b1 = Array1::from_iter((0..HIDDEN).map(|_| rng.gen_range(-0.2..0.2)));
    let w2 = Array1::from_iter((0..HIDDEN).map(|_| rng.gen_range(-0.5..0.5)));
    let neural = ModelParams::Neural(NeuralParams::new(w1, b1, w2, 0.1).unwrap());

    (precinct, logistic, neural)
}

fn bench_gradients(c: &mut Criterion) {
    let (precinct, logistic, neural) = fixture();
    let mut group = c.benchmark_group("gradient");
    group.bench_function("logistic_200v_8d", |b| {
        b.iter(|| glm::grad_precinct(&logistic, &precinct).unwrap())
    });
    group.bench_function("neural_200v_8d_10h", |b| {
        b.iter(|| glm::grad_precinct(&neural, &precinct).unwrap())
    });
    group.bench_function("loglik_normal_200v_8d", |b| {
        b.iter(|| glm::loglik_normal_precinct(&logistic, &precinct).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_gradients);
criterion_main!(benches);
