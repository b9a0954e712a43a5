//! Higher-order scene modeling for operating rooms: combinatorial complexes
//! over multimodal entities, rank-biased attention networks with reverse-mode
//! autodiff, multi-task heads, rule-based sterility checks, scene-graph
//! reduction, and a deterministic synthetic episode generator.

pub mod cc;
pub mod config;
pub mod hat;
pub mod io;
pub mod numerics;
pub mod scene;
pub mod synth;
pub mod tasks;
pub mod train;

pub use cc::{Cell, CellId, CellKind, CombinatorialComplex, EntityId, FrozenComplex};
pub use config::RunConfig;
pub use numerics::{ParamStore, RngStream, Tape, Tensor};
pub use scene::{BuildConfig, SceneFrame};
pub use synth::{Episode, SynthConfig};
pub use tasks::TaskLabels;
pub use train::{Dataset, Model};
