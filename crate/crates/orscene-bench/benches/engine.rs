use criterion::{criterion_group, criterion_main, Criterion};

use orscene_bench::bench_fixture;
use orscene_core::synth::generate_episode;
use orscene_core::train::train_model;
use orscene_core::Tape;

fn bench_generate(c: &mut Criterion) {
    let (run, _, _, _) = bench_fixture();
    c.bench_function("generate_episode", |b| {
        b.iter(|| generate_episode(&run.synth, &run.build, 0).unwrap())
    });
}

fn bench_build_window(c: &mut Criterion) {
    let (run, dataset, model, store) = bench_fixture();
    let frames = &dataset.episodes[0].frames[0..run.build.window_t];
    c.bench_function("build_frozen_window", |b| {
        b.iter(|| model.build_frozen_window(frames, &store).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let (run, dataset, model, store) = bench_fixture();
    let frames = &dataset.episodes[0].frames[0..run.build.window_t];
    let frozen = model.build_frozen_window(frames, &store).unwrap();
    c.bench_function("network_forward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let pass = model.net.forward(&frozen.complex, &mut tape, &store).unwrap();
            let pooled = model
                .net
                .pool(&frozen.complex, pass.final_state(), &mut tape, &store)
                .unwrap();
            std::hint::black_box(tape.value(pooled).data()[0])
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let (run, dataset, _, _) = bench_fixture();
    c.bench_function("train_step", |b| {
        b.iter(|| train_model(&run, &dataset, |_| {}).unwrap().steps_run)
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_generate, bench_build_window, bench_forward, bench_train_step
}
criterion_main!(benches);
