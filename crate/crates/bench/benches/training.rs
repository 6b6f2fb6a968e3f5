use std::hint::black_box;

use cat2vec_bench::experiment;
use cat2vec_core::fewshot::evaluate_full;
use cat2vec_core::trainer::{read_checkpoint, train, write_checkpoint};
use cat2vec_core::{EvalMode, Objective, SynthSpec, TrainConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn training(c: &mut Criterion) {
    let exp = experiment(&SynthSpec::default());
    let mut group = c.benchmark_group("train_10_epochs");
    group.sample_size(20);
    for objective in [Objective::Cc, Objective::Nce, Objective::Xent] {
        let config = TrainConfig {
            objective,
            epochs: 10,
            ..TrainConfig::default()
        };
        group.bench_function(objective.name(), |b| {
            b.iter(|| train(black_box(&config), &exp.data, &exp.vocab).unwrap())
        });
    }
    group.finish();

    let model = train(
        &TrainConfig {
            epochs: 5,
            ..TrainConfig::default()
        },
        &exp.data,
        &exp.vocab,
    )
    .unwrap();
    let support = std::slice::from_ref(&exp.support);
    c.bench_function("evaluate_full_category_table", |b| {
        b.iter(|| evaluate_full(black_box(&model), support, &exp.test, EvalMode::CategoryTable).unwrap())
    });
    c.bench_function("evaluate_full_prototypes", |b| {
        b.iter(|| evaluate_full(black_box(&model), support, &exp.test, EvalMode::Prototypes).unwrap())
    });
    let bytes = write_checkpoint(&model);
    c.bench_function("checkpoint_write", |b| {
        b.iter(|| write_checkpoint(black_box(&model)))
    });
    c.bench_function("checkpoint_read", |b| {
        b.iter(|| read_checkpoint(black_box(&bytes)).unwrap())
    });
}

criterion_group!(benches, training);
criterion_main!(benches);
