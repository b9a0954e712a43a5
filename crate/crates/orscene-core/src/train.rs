//! The end-to-end pipeline: model assembly from a run config, in-memory
//! datasets, the multi-task training loop, and split evaluation.

use std::collections::BTreeMap;
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::CellKind;
use crate::config::{ConfigError, ModalityToggles, RunConfig};
use crate::hat::{feature_dims, HatError, HatNetwork};
use crate::io::{BreachSummary, CheckpointFile, ReportFile, SplitReport, TaskReport};
use crate::numerics::{AdamConfig, NumericsError, ParamId, ParamStore, RngStream, Tape, Tensor};
use crate::scene::{build_window, FrozenWindow, SceneError, SceneFrame, VisualGateParams};
use crate::synth::{generate_episode, split_dataset, Episode, SplitIndices, SynthError};
use crate::tasks::{
    argmax, multitask_loss, relation_predictions, ConfusionMatrix, HeadConfig, TaskError,
    TaskHeads, TaskLabels,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset missing or empty: {0}")]
    MissingDataset(String),
    #[error("non-finite loss at step {step}; aborting (lower the learning rate or check inputs)")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Hat(#[from] HatError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Cc(#[from] crate::cc::CcError),
}

/// Frozen-parameter handles for the visual fusion gate.
#[derive(Debug, Clone)]
pub struct GateParamIds {
    pub channels: usize,
    pub joint_w: ParamId,
    pub joint_b: ParamId,
    pub object_w: ParamId,
    pub object_b: ParamId,
}

/// Network + heads + featurizer state assembled for one run config.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: HatNetwork,
    pub heads: TaskHeads,
    pub gate: Option<GateParamIds>,
    pub feature_dims: BTreeMap<CellKind, usize>,
    pub action_names: Vec<String>,
    pub phase_names: Vec<String>,
    pub predicate_names: Vec<String>,
    toggles: ModalityToggles,
    build: crate::scene::BuildConfig,
}

impl Model {
    /// Builds the full parameter set for a run config. Feature widths are
    /// probed from sample windows of episode 0 under the configured toggles.
    pub fn init(run: &RunConfig) -> Result<(Model, ParamStore), TrainError> {
        run.validate()?;
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(run.model.init_seed);
        let toggles = run.modality_toggles;

        let probe = generate_episode(&run.synth, &run.build, 0)?;
        let window_t = run.build.window_t;
        let window_count = probe.frames.len().saturating_sub(window_t) + 1;
        let probe_starts = [0, window_count / 2, window_count - 1];

        let mut base_dims: BTreeMap<CellKind, usize> = BTreeMap::new();
        for &start in &probe_starts {
            let frames = toggles.apply(&probe.frames[start..start + window_t]);
            let window = build_window(&frames, &run.build, None)?;
            for (kind, dim) in feature_dims(window.cc.cells())? {
                base_dims.insert(kind, dim);
            }
        }

        let gate = if toggles.visual {
            let channels = run.synth.camera_grid.2;
            let joint_dim = base_dims.get(&CellKind::Joint).copied().unwrap_or(0);
            let object_dim = base_dims.get(&CellKind::Object).copied().unwrap_or(0);
            let mut gate_rng = rng.derive(50);
            let params = VisualGateParams::seeded(channels, joint_dim, object_dim, &mut gate_rng);
            Some(GateParamIds {
                channels,
                joint_w: store.add_frozen(
                    "visual_gate.joint.w",
                    Tensor::from_vec(&[params.joint_weights.len()], params.joint_weights)?,
                ),
                joint_b: store.add_frozen("visual_gate.joint.b", Tensor::scalar(params.joint_bias)),
                object_w: store.add_frozen(
                    "visual_gate.object.w",
                    Tensor::from_vec(&[params.object_weights.len()], params.object_weights)?,
                ),
                object_b: store
                    .add_frozen("visual_gate.object.b", Tensor::scalar(params.object_bias)),
            })
        } else {
            None
        };

        let mut dims = base_dims;
        if let Some(gate) = &gate {
            let gate_params = materialize_gate(gate, &store);
            let mut grounded: BTreeMap<CellKind, usize> = BTreeMap::new();
            for &start in &probe_starts {
                let frames = toggles.apply(&probe.frames[start..start + window_t]);
                let window = build_window(&frames, &run.build, Some(&gate_params))?;
                for (kind, dim) in feature_dims(window.cc.cells())? {
                    grounded.insert(kind, dim);
                }
            }
            dims = grounded;
        }

        let net = HatNetwork::init(run.model.hat.clone(), &dims, &mut store, &mut rng)?;
        let head_config = HeadConfig {
            action_classes: run.synth.actions.len(),
            phase_classes: run.synth.phases.len(),
            relation_classes: run.synth.predicate_names().len(),
        };
        let heads = TaskHeads::init(run.model.hat.d_model, head_config, &mut store, &mut rng);

        Ok((
            Model {
                net,
                heads,
                gate,
                feature_dims: dims,
                action_names: run.synth.actions.clone(),
                phase_names: run.synth.phase_names(),
                predicate_names: run.synth.predicate_names(),
                toggles,
                build: run.build.clone(),
            },
            store,
        ))
    }

    pub fn gate_params(&self, store: &ParamStore) -> Option<VisualGateParams> {
        self.gate.as_ref().map(|g| materialize_gate(g, store))
    }

    /// Applies toggles, builds, grounds, and freezes one window of frames.
    pub fn build_frozen_window(
        &self,
        frames: &[SceneFrame],
        store: &ParamStore,
    ) -> Result<FrozenWindow, TrainError> {
        let filtered = self.toggles.apply(frames);
        let gate = self.gate_params(store);
        let window = build_window(&filtered, &self.build, gate.as_ref())?;
        Ok(window.freeze()?)
    }

    pub fn checkpoint(&self, store: &ParamStore) -> CheckpointFile {
        CheckpointFile::from_store(
            self.net.config.clone(),
            self.heads.config.clone(),
            &self.feature_dims,
            store,
        )
    }

    /// Rebuilds the model for a checkpoint's config and loads its weights.
    pub fn from_checkpoint(
        run: &RunConfig,
        checkpoint: &CheckpointFile,
    ) -> Result<(Model, ParamStore), TrainError> {
        let (model, mut store) = Model::init(run)?;
        if model.net.config != checkpoint.model {
            return Err(TrainError::from(ConfigError::Invalid(format!(
                "checkpoint model config {:?} differs from run config {:?}",
                checkpoint.model, model.net.config
            ))));
        }
        checkpoint
            .restore_into(&mut store)
            .map_err(|e| TrainError::MissingDataset(e.to_string()))?;
        Ok((model, store))
    }
}

fn materialize_gate(gate: &GateParamIds, store: &ParamStore) -> VisualGateParams {
    VisualGateParams {
        channels: gate.channels,
        joint_weights: store.value(gate.joint_w).data().to_vec(),
        joint_bias: store.value(gate.joint_b).data()[0],
        object_weights: store.value(gate.object_w).data().to_vec(),
        object_bias: store.value(gate.object_b).data()[0],
    }
}

/// In-memory dataset: generated episodes plus the split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub episodes: Vec<Episode>,
    pub split: SplitIndices,
}

impl Dataset {
    pub fn generate(run: &RunConfig) -> Result<Dataset, TrainError> {
        run.validate()?;
        let episodes: Result<Vec<Episode>, SynthError> = (0..run.data.episodes)
            .map(|i| generate_episode(&run.synth, &run.build, i as u64))
            .collect();
        let episodes = episodes?;
        let split = split_dataset(episodes.len(), run.data.split, run.synth.seed)?;
        Ok(Dataset { episodes, split })
    }

    /// All (episode, window start) pairs of the given episodes.
    pub fn windows(&self, episode_indices: &[usize], window_t: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for &e in episode_indices {
            let frames = self.episodes[e].frames.len();
            for start in 0..=(frames - window_t) {
                out.push((e, start));
            }
        }
        out
    }
}

/// Forward pass plus the multi-task loss (action + phase + relation CE) for
/// one labeled window.
fn window_loss(
    model: &Model,
    frozen: &FrozenWindow,
    labels: &TaskLabels,
    run: &RunConfig,
    tape: &mut Tape,
    store: &ParamStore,
) -> Result<crate::numerics::ValueId, TrainError> {
    let pass = model.net.forward(&frozen.complex, tape, store)?;
    let pooled = model.net.pool(&frozen.complex, pass.final_state(), tape, store)?;
    let (action_logits, phase_logits) = model.heads.forward_heads(pooled, tape, store)?;
    let mut loss = multitask_loss(
        action_logits,
        phase_logits,
        labels,
        run.train.lambda_action,
        run.train.lambda_phase,
        tape,
    )?;

    if run.train.lambda_relation > 0.0 {
        let entities = frozen.last_entities();
        let mut rows_s = Vec::new();
        let mut rows_o = Vec::new();
        let mut targets = Vec::new();
        let truth: BTreeMap<(crate::cc::EntityId, crate::cc::EntityId), usize> = labels
            .relations
            .iter()
            .map(|&(s, p, o)| ((s, o), p))
            .collect();
        for s in entities {
            for o in entities {
                if s.entity_id == o.entity_id {
                    continue;
                }
                rows_s.push(s.representative.index());
                rows_o.push(o.representative.index());
                targets.push(truth.get(&(s.entity_id, o.entity_id)).copied().unwrap_or(0));
            }
        }
        if !targets.is_empty() {
            let final_state = pass.final_state();
            let hs = tape.gather_rows(final_state, Rc::new(rows_s))?;
            let ho = tape.gather_rows(final_state, Rc::new(rows_o))?;
            let pairs = tape.concat_cols(&[hs, ho])?;
            let logits = model.heads.relation.forward(pairs, tape, store)?;
            let ce = tape.cross_entropy_rows(logits, Rc::new(targets))?;
            let weighted = tape.scale(ce, run.train.lambda_relation)?;
            loss = tape.add(loss, weighted)?;
        }
    }
    Ok(loss)
}

/// Macro-F1 triple tracked during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub action_f1: f64,
    pub phase_f1: f64,
    pub relation_f1: f64,
}

impl EvalScores {
    pub fn mean(&self) -> f64 {
        (self.action_f1 + self.phase_f1 + self.relation_f1) / 3.0
    }

    pub fn min(&self) -> f64 {
        self.action_f1.min(self.phase_f1).min(self.relation_f1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub step: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val: Option<EvalScores>,
}

pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub best_snapshot: Vec<(String, Tensor)>,
    pub best_scores: Option<EvalScores>,
    pub log: Vec<TrainLogEntry>,
    pub steps_run: usize,
}

/// Runs multi-task training; deterministic for a fixed config. Keeps the
/// best-validation snapshot and stops early once every tracked score clears
/// the configured bar.
pub fn train_model(
    run: &RunConfig,
    dataset: &Dataset,
    mut progress: impl FnMut(&TrainLogEntry),
) -> Result<TrainOutcome, TrainError> {
    let (model, mut store) = Model::init(run)?;
    let window_t = run.build.window_t;
    let train_windows = dataset.windows(&dataset.split.train, window_t);
    if train_windows.is_empty() {
        return Err(TrainError::MissingDataset(
            "no training windows (empty train split?)".into(),
        ));
    }
    let adam = AdamConfig {
        lr: run.train.learning_rate,
        beta1: run.train.adam_beta1,
        beta2: run.train.adam_beta2,
        epsilon: run.train.adam_epsilon,
    };
    let mut sampler = RngStream::new(run.model.init_seed).derive(777);
    let mut log = Vec::new();
    let mut best_snapshot = store.snapshot();
    let mut best_scores: Option<EvalScores> = None;
    let mut steps_run = 0;

    for step in 1..=run.train.steps {
        store.zero_grads();
        let mut batch_loss = 0.0;
        for _ in 0..run.train.batch_size {
            let (e, start) = train_windows[sampler.range_usize(train_windows.len())];
            let episode = &dataset.episodes[e];
            let frames = &episode.frames[start..start + window_t];
            let labels = &episode.labels[start];
            let frozen = model.build_frozen_window(frames, &store)?;
            let mut tape = Tape::new();
            let loss = window_loss(&model, &frozen, labels, run, &mut tape, &store)?;
            let value = tape.value(loss).scalar_value()?;
            if !value.is_finite() {
                return Err(TrainError::NonFiniteLoss { step });
            }
            batch_loss += value;
            tape.backward(loss, &mut store)?;
        }
        store.scale_grads(1.0 / run.train.batch_size as f64);
        if let Some(max_norm) = run.train.grad_clip_norm {
            store.clip_grad_norm(max_norm);
        }
        store.adam_step(&adam);
        steps_run = step;

        let due = step % run.train.eval_interval == 0 || step == run.train.steps;
        let mut entry = TrainLogEntry {
            step,
            train_loss: batch_loss / run.train.batch_size as f64,
            val: None,
        };
        if due {
            let scores = eval_scores(
                &model,
                &store,
                dataset,
                &dataset.split.val,
                run,
                Some(run.train.eval_window_cap),
            )?;
            entry.val = Some(scores);
            // rank by the weakest task first so the kept checkpoint cannot
            // trade one task's floor for another's ceiling
            let better = best_scores.is_none_or(|b| {
                (scores.min(), scores.mean()) > (b.min(), b.mean())
            });
            if better {
                best_scores = Some(scores);
                best_snapshot = store.snapshot();
            }
            progress(&entry);
            log.push(entry);
            if let Some(bar) = run.train.early_stop_min_f1 {
                if scores.min() >= bar {
                    break;
                }
            }
            continue;
        }
        progress(&entry);
        log.push(entry);
    }

    if run.train.steps == 0 {
        best_snapshot = store.snapshot();
    }

    Ok(TrainOutcome {
        model,
        store,
        best_snapshot,
        best_scores,
        log,
        steps_run,
    })
}

/// Deterministic even subsample of at most `cap` windows.
fn subsample(windows: Vec<(usize, usize)>, cap: Option<usize>) -> Vec<(usize, usize)> {
    match cap {
        Some(cap) if cap > 0 && windows.len() > cap => {
            let stride = windows.len() as f64 / cap as f64;
            (0..cap)
                .map(|i| windows[(i as f64 * stride) as usize])
                .collect()
        }
        _ => windows,
    }
}

fn eval_scores(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    episode_indices: &[usize],
    run: &RunConfig,
    cap: Option<usize>,
) -> Result<EvalScores, TrainError> {
    let report = evaluate_split(model, store, dataset, "val", episode_indices, run, cap)?;
    Ok(EvalScores {
        action_f1: report.next_action.macro_f1,
        phase_f1: report.robot_phase.macro_f1,
        relation_f1: report.relations.macro_f1,
    })
}

/// Full evaluation of one split: action/phase/relation confusions from the
/// model, plus the checkpoint-independent breach rule versus labels.
pub fn evaluate_split(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    split_name: &str,
    episode_indices: &[usize],
    run: &RunConfig,
    cap: Option<usize>,
) -> Result<SplitReport, TrainError> {
    let window_t = run.build.window_t;
    let windows = subsample(dataset.windows(episode_indices, window_t), cap);
    let a = model.action_names.len();
    let p = model.phase_names.len();
    let r = model.predicate_names.len();
    let mut action_cm = ConfusionMatrix::new(a);
    let mut phase_cm = ConfusionMatrix::new(p);
    let mut relation_cm = ConfusionMatrix::new(r);
    let mut breach_cm = ConfusionMatrix::new(2);
    let mut flagged = 0usize;
    let mut example_pairs: Vec<(String, String)> = Vec::new();

    for &(e, start) in &windows {
        let episode = &dataset.episodes[e];
        let frames = &episode.frames[start..start + window_t];
        let labels = &episode.labels[start];
        let frozen = model.build_frozen_window(frames, store)?;

        let mut tape = Tape::new();
        let pass = model.net.forward(&frozen.complex, &mut tape, store)?;
        let pooled = model
            .net
            .pool(&frozen.complex, pass.final_state(), &mut tape, store)?;
        let (action_logits, phase_logits) = model.heads.forward_heads(pooled, &mut tape, store)?;
        action_cm.record(argmax(tape.value(action_logits).data()), labels.next_action)?;
        phase_cm.record(argmax(tape.value(phase_logits).data()), labels.robot_phase)?;

        let final_features = tape.value(pass.final_state()).clone();
        let predicted = relation_predictions(&frozen, &final_features, &model.heads, store)?;
        let truth: BTreeMap<(crate::cc::EntityId, crate::cc::EntityId), usize> = labels
            .relations
            .iter()
            .map(|&(s, pr, o)| ((s, o), pr))
            .collect();
        for (s, predicted_class, o) in predicted {
            let label = truth.get(&(s, o)).copied().unwrap_or(0);
            relation_cm.record(predicted_class, label)?;
        }

        // rule-based breach on the raw last frame, no model involved
        let last_frame = &frames[window_t - 1];
        let report = crate::tasks::detect_breach_in_frame(last_frame, &run.build);
        breach_cm.record(report.breach as usize, labels.breach as usize)?;
        if report.breach {
            flagged += 1;
            if example_pairs.len() < 8 {
                let role_of = |id: crate::cc::EntityId| {
                    last_frame
                        .humans
                        .iter()
                        .find(|h| h.entity_id == id)
                        .map(|h| h.role.label().to_string())
                        .unwrap_or_else(|| format!("entity_{}", id.0))
                };
                for &(u, v) in &report.pairs {
                    if example_pairs.len() < 8 {
                        example_pairs.push((role_of(u), role_of(v)));
                    }
                }
            }
        }
    }

    let task_report = |cm: ConfusionMatrix, names: &[String]| TaskReport {
        macro_f1: cm.macro_f1(),
        class_names: names.to_vec(),
        per_class_f1: cm.per_class_f1(),
        confusion: cm,
    };
    Ok(SplitReport {
        split: split_name.to_string(),
        windows: windows.len(),
        next_action: task_report(action_cm, &model.action_names),
        robot_phase: task_report(phase_cm, &model.phase_names),
        relations: task_report(relation_cm, &model.predicate_names),
        breach: BreachSummary {
            macro_f1: breach_cm.macro_f1(),
            windows: windows.len(),
            flagged_windows: flagged,
            confusion: breach_cm,
            example_pairs,
        },
    })
}

/// Evaluates train, val, and test splits and assembles the report document.
pub fn evaluate_all(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    run: &RunConfig,
    cap: Option<usize>,
) -> Result<ReportFile, TrainError> {
    let splits = [
        ("train", &dataset.split.train),
        ("val", &dataset.split.val),
        ("test", &dataset.split.test),
    ];
    let mut out = Vec::new();
    for (name, indices) in splits {
        if indices.is_empty() {
            continue;
        }
        out.push(evaluate_split(model, store, dataset, name, indices, run, cap)?);
    }
    Ok(ReportFile {
        format_version: crate::config::FORMAT_VERSION,
        splits: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_run() -> RunConfig {
        let mut run = RunConfig::default();
        run.model.hat.d_model = 16;
        run.model.hat.heads = 2;
        run.model.hat.d_r = 4;
        run.data.episodes = 3;
        run.data.split = (0.5, 0.25, 0.25);
        run.train.steps = 3;
        run.train.batch_size = 1;
        run.train.eval_interval = 3;
        run.train.eval_window_cap = 4;
        run
    }

    #[test]
    fn model_init_is_deterministic() {
        let run = small_run();
        let (_, store_a) = Model::init(&run).unwrap();
        let (_, store_b) = Model::init(&run).unwrap();
        assert_eq!(store_a.snapshot(), store_b.snapshot());
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let mut run = small_run();
        run.train.steps = 0;
        let dataset = Dataset::generate(&run).unwrap();
        let outcome = train_model(&run, &dataset, |_| {}).unwrap();
        let (_, fresh) = Model::init(&run).unwrap();
        assert_eq!(outcome.best_snapshot, fresh.snapshot());
        assert_eq!(outcome.steps_run, 0);
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let mut run = small_run();
        run.train.learning_rate = 0.0;
        let dataset = Dataset::generate(&run).unwrap();
        let outcome = train_model(&run, &dataset, |_| {}).unwrap();
        let (_, fresh) = Model::init(&run).unwrap();
        assert_eq!(outcome.store.snapshot(), fresh.snapshot());
    }

    #[test]
    fn training_trajectory_is_reproducible() {
        let run = small_run();
        let dataset = Dataset::generate(&run).unwrap();
        let a = train_model(&run, &dataset, |_| {}).unwrap();
        let b = train_model(&run, &dataset, |_| {}).unwrap();
        let sa = a.store.snapshot();
        let sb = b.store.snapshot();
        assert_eq!(sa.len(), sb.len());
        for ((na, ta), (nb, tb)) in sa.iter().zip(&sb) {
            assert_eq!(na, nb);
            for (x, y) in ta.data().iter().zip(tb.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let run = small_run();
        let dataset = Dataset::generate(&run).unwrap();
        let (model, store) = Model::init(&run).unwrap();
        let a = evaluate_all(&model, &store, &dataset, &run, Some(4)).unwrap();
        let b = evaluate_all(&model, &store, &dataset, &run, Some(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip_through_model() {
        let run = small_run();
        let dataset = Dataset::generate(&run).unwrap();
        let outcome = train_model(&run, &dataset, |_| {}).unwrap();
        let ckpt = outcome.model.checkpoint(&outcome.store);
        let (model2, store2) = Model::from_checkpoint(&run, &ckpt).unwrap();
        assert_eq!(outcome.store.snapshot(), store2.snapshot());
        let r1 = evaluate_all(&outcome.model, &outcome.store, &dataset, &run, Some(4)).unwrap();
        let r2 = evaluate_all(&model2, &store2, &dataset, &run, Some(4)).unwrap();
        assert_eq!(r1, r2);
    }
}
