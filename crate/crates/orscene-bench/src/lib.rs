//! Shared fixtures for the engine benchmarks.

use orscene_core::train::{Dataset, Model};
use orscene_core::{ParamStore, RunConfig};

/// A small but representative run: default scene at a reduced episode count.
pub fn bench_run_config() -> RunConfig {
    let mut run = RunConfig::default();
    run.data.episodes = 2;
    run.data.split = (0.5, 0.5, 0.0);
    run.train.steps = 1;
    run.train.eval_interval = 1;
    run.train.eval_window_cap = 4;
    run
}

pub fn bench_fixture() -> (RunConfig, Dataset, Model, ParamStore) {
    let run = bench_run_config();
    let dataset = Dataset::generate(&run).expect("dataset");
    let (model, store) = Model::init(&run).expect("model");
    (run, dataset, model, store)
}
