use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use denoise_core::data::{build_graph, Split};
use denoise_core::evaluation::{evaluate, EvalOptions};
use denoise_core::model::forward_lightgcn;
use denoise_core::objective::{hsic, kernel_matrix};
use denoise_core::synthetic::{planted_noise, PlantedConfig};
use denoise_core::trainer::{Knowledge, TrainConfig, Trainer};

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

fn benches(c: &mut Criterion) {
    let planted = planted_noise(&PlantedConfig::default()).unwrap();
    let ds = &planted.dataset;
    let graph = build_graph(ds, &[], None).unwrap();
    let table = random(graph.num_nodes(), 64, 1);

    c.bench_function("lightgcn_forward_3_layers", |b| b.iter(|| forward_lightgcn(graph.adjacency(), table.view(), 3)));

    let (x, y) = (random(256, 64, 2), random(256, 64, 3));
    c.bench_function("hsic_n256", |b| {
        b.iter(|| {
            let (k, m) = (kernel_matrix(x.view(), 1.0), kernel_matrix(y.view(), 1.0));
            hsic(k.view(), m.view()).unwrap()
        })
    });

    c.bench_function("evaluate_full_rank", |b| b.iter(|| evaluate(table.view(), ds, Split::Test, &EvalOptions::default()).unwrap()));

    let (kp, kr) = planted.knowledge(32, 1).unwrap();
    let config = TrainConfig {
        dim: 32,
        layers: 2,
        mask_hidden: 32,
        batch_size: 256,
        ..TrainConfig::default()
    };
    let knowledge = Knowledge {
        preference: Some(&kp),
        relations: Some(&kr),
    };
    c.bench_function("train_step_b256", |b| {
        b.iter_batched(
            || Trainer::new(ds, knowledge, config.clone()).unwrap(),
            |mut t| t.step().unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(core, benches);
criterion_main!(core);
