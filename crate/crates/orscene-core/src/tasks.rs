//! Task surface over the network: MLP heads on pooled embeddings, the joint
//! multi-task loss, zero-shot rule-based sterility-breach detection, flat
//! scene-graph reduction, and macro-F1 evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::EntityId;
use crate::numerics::{NumericsError, ParamId, ParamStore, RngStream, Tape, Tensor, ValueId};
use crate::scene::{BuildConfig, EntityMatcher, EntityPoints, FrameBuild, FrozenWindow, Role};

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("prediction/label length mismatch: {predictions} vs {labels}")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("class index {index} out of range ({classes} classes)")]
    ClassOutOfRange { index: usize, classes: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Ground truth for one temporal window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskLabels {
    pub next_action: usize,
    pub robot_phase: usize,
    pub breach: bool,
    /// (subject, predicate index, object) over the window's last frame.
    pub relations: BTreeSet<(EntityId, usize, EntityId)>,
}

/// Output widths of the three heads. Relation predicates include "none" at
/// index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub action_classes: usize,
    pub phase_classes: usize,
    pub relation_classes: usize,
}

/// Two-layer MLP with tanh hidden activation.
#[derive(Debug, Clone)]
pub struct Mlp2 {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp2 {
    pub fn init(
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        store: &mut ParamStore,
        rng: &mut RngStream,
    ) -> Self {
        Mlp2 {
            w1: store.add(format!("{name}.w1"), crate::hat::xavier(rng, d_in, d_hidden)),
            b1: store.add(format!("{name}.b1"), Tensor::zeros(&[1, d_hidden])),
            w2: store.add(format!("{name}.w2"), crate::hat::xavier(rng, d_hidden, d_out)),
            b2: store.add(format!("{name}.b2"), Tensor::zeros(&[1, d_out])),
        }
    }

    pub fn forward(
        &self,
        x: ValueId,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<ValueId, NumericsError> {
        let w1 = tape.param(store, self.w1);
        let b1 = tape.param(store, self.b1);
        let w2 = tape.param(store, self.w2);
        let b2 = tape.param(store, self.b2);
        let h = tape.matmul(x, w1)?;
        let h = tape.add_row_broadcast(h, b1)?;
        let h = tape.tanh(h)?;
        let out = tape.matmul(h, w2)?;
        tape.add_row_broadcast(out, b2)
    }

    /// Forward from plain tensors, for inference paths that need no tape.
    pub fn forward_plain(&self, x: &Tensor, store: &ParamStore) -> Result<Tensor, NumericsError> {
        let h = x
            .matmul(store.value(self.w1))?
            .add_row_broadcast(store.value(self.b1))?;
        let h = Tensor::from_vec(h.shape(), h.data().iter().map(|v| v.tanh()).collect())?;
        h.matmul(store.value(self.w2))?
            .add_row_broadcast(store.value(self.b2))
    }
}

/// The three task heads attached to the network.
#[derive(Debug, Clone)]
pub struct TaskHeads {
    pub config: HeadConfig,
    pub action: Mlp2,
    pub phase: Mlp2,
    pub relation: Mlp2,
}

impl TaskHeads {
    pub fn init(
        d_model: usize,
        config: HeadConfig,
        store: &mut ParamStore,
        rng: &mut RngStream,
    ) -> Self {
        let action = Mlp2::init(
            "heads.action",
            d_model,
            d_model,
            config.action_classes,
            store,
            rng,
        );
        let phase = Mlp2::init(
            "heads.phase",
            d_model,
            d_model,
            config.phase_classes,
            store,
            rng,
        );
        let relation = Mlp2::init(
            "heads.relation",
            2 * d_model,
            d_model,
            config.relation_classes,
            store,
            rng,
        );
        TaskHeads {
            config,
            action,
            phase,
            relation,
        }
    }

    /// Action and phase logits from the pooled embedding.
    pub fn forward_heads(
        &self,
        pooled: ValueId,
        tape: &mut Tape,
        store: &ParamStore,
    ) -> Result<(ValueId, ValueId), NumericsError> {
        let action = self.action.forward(pooled, tape, store)?;
        let phase = self.phase.forward(pooled, tape, store)?;
        Ok((action, phase))
    }
}

/// lambda_a * CE(action) + lambda_p * CE(phase).
pub fn multitask_loss(
    action_logits: ValueId,
    phase_logits: ValueId,
    labels: &TaskLabels,
    lambda_action: f64,
    lambda_phase: f64,
    tape: &mut Tape,
) -> Result<ValueId, NumericsError> {
    let ce_action = tape.cross_entropy(action_logits, labels.next_action)?;
    let ce_phase = tape.cross_entropy(phase_logits, labels.robot_phase)?;
    let a = tape.scale(ce_action, lambda_action)?;
    let p = tape.scale(ce_phase, lambda_phase)?;
    tape.add(a, p)
}

/// Pairs flagged by the sterility rule, (non-sterile, sterile), sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BreachReport {
    pub breach: bool,
    pub pairs: Vec<(EntityId, EntityId)>,
}

fn breach_over_entities(
    entities: &[(EntityId, Role, EntityPoints)],
    config: &BuildConfig,
) -> BreachReport {
    let mut pairs = Vec::new();
    for (uid, urole, upoints) in entities {
        if !config.nonsterile_roles.contains(urole) {
            continue;
        }
        for (vid, vrole, vpoints) in entities {
            if uid == vid || !config.sterile_roles.contains(vrole) {
                continue;
            }
            if let Ok(d) = crate::scene::entity_distance(upoints, vpoints) {
                if d < config.tau_breach {
                    pairs.push((*uid, *vid));
                }
            }
        }
    }
    pairs.sort_unstable();
    BreachReport {
        breach: !pairs.is_empty(),
        pairs,
    }
}

/// Rule-based, zero-shot: breach iff some non-sterile entity comes strictly
/// within `tau_breach` of a sterile entity. Evaluated over the geometric
/// rank-0 cells of a built frame; no learned parameters anywhere.
pub fn detect_sterility_breach(build: &FrameBuild, config: &BuildConfig) -> BreachReport {
    let entities: Vec<(EntityId, Role, EntityPoints)> = build
        .entities
        .iter()
        .filter_map(|e| match e.matcher {
            EntityMatcher::Role(role) => {
                let points: Vec<[f64; 3]> = e
                    .cells
                    .iter()
                    .filter_map(|&c| build.cc.cell(c).and_then(|cell| cell.position))
                    .collect();
                Some((
                    e.entity_id,
                    role,
                    EntityPoints {
                        entity_id: e.entity_id,
                        points,
                    },
                ))
            }
            EntityMatcher::Class(_) => None,
        })
        .collect();
    breach_over_entities(&entities, config)
}

/// Same rule applied directly to a raw frame (used by the generator's label
/// oracle and the model-free CLI check).
pub fn detect_breach_in_frame(
    frame: &crate::scene::SceneFrame,
    config: &BuildConfig,
) -> BreachReport {
    let entities: Vec<(EntityId, Role, EntityPoints)> = frame
        .humans
        .iter()
        .map(|h| (h.entity_id, h.role, EntityPoints::from_human(h)))
        .collect();
    breach_over_entities(&entities, config)
}

/// Relation prediction for every ordered entity pair in the window's last
/// frame: argmax of the relation head on [h_s, h_o].
pub fn relation_predictions(
    window: &FrozenWindow,
    final_features: &Tensor,
    heads: &TaskHeads,
    store: &ParamStore,
) -> Result<Vec<(EntityId, usize, EntityId)>, TaskError> {
    let entities = window.last_entities();
    let mut out = Vec::new();
    for s in entities {
        for o in entities {
            if s.entity_id == o.entity_id {
                continue;
            }
            let hs = final_features.gather_rows(&[s.representative.index()])?;
            let ho = final_features.gather_rows(&[o.representative.index()])?;
            let x = Tensor::concat_cols(&[&hs, &ho])?;
            let logits = heads.relation.forward_plain(&x, store)?;
            out.push((s.entity_id, argmax(logits.data()), o.entity_id));
        }
    }
    Ok(out)
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Reduces the window to flat triplet strings: one
/// "⟨subject, predicate, object⟩" per ordered pair whose argmax predicate is
/// not "none" (predicate index 0).
pub fn reduce_to_scene_graph(
    window: &FrozenWindow,
    final_features: &Tensor,
    heads: &TaskHeads,
    store: &ParamStore,
    predicate_names: &[String],
) -> Result<BTreeSet<String>, TaskError> {
    let entities = window.last_entities();
    let mut labels = std::collections::BTreeMap::new();
    for e in entities {
        labels.insert(e.entity_id, e.label.clone());
    }
    let mut out = BTreeSet::new();
    for (s, p, o) in relation_predictions(window, final_features, heads, store)? {
        if p == 0 {
            continue;
        }
        let name = predicate_names.get(p).ok_or(TaskError::ClassOutOfRange {
            index: p,
            classes: predicate_names.len(),
        })?;
        out.insert(format!("⟨{}, {}, {}⟩", labels[&s], name, labels[&o]));
    }
    Ok(out)
}

/// Per-class counts: `counts[label * classes + prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn record(&mut self, prediction: usize, label: usize) -> Result<(), TaskError> {
        if prediction >= self.classes {
            return Err(TaskError::ClassOutOfRange {
                index: prediction,
                classes: self.classes,
            });
        }
        if label >= self.classes {
            return Err(TaskError::ClassOutOfRange {
                index: label,
                classes: self.classes,
            });
        }
        self.counts[label * self.classes + prediction] += 1;
        Ok(())
    }

    fn class_totals(&self, c: usize) -> (u64, u64, u64) {
        let mut tp = 0;
        let mut fp = 0;
        let mut fn_ = 0;
        for other in 0..self.classes {
            let as_pred = self.counts[other * self.classes + c];
            let as_label = self.counts[c * self.classes + other];
            if other == c {
                tp = as_pred;
            } else {
                fp += as_pred;
                fn_ += as_label;
            }
        }
        (tp, fp, fn_)
    }

    /// F1 per class; None for classes absent from both labels and
    /// predictions (excluded from the macro mean), 0.0 where precision and
    /// recall are both zero but the class occurs.
    pub fn per_class_f1(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let (tp, fp, fn_) = self.class_totals(c);
                if tp + fp + fn_ == 0 {
                    return None;
                }
                let precision = if tp + fp > 0 {
                    tp as f64 / (tp + fp) as f64
                } else {
                    0.0
                };
                let recall = if tp + fn_ > 0 {
                    tp as f64 / (tp + fn_) as f64
                } else {
                    0.0
                };
                if precision + recall == 0.0 {
                    Some(0.0)
                } else {
                    Some(2.0 * precision * recall / (precision + recall))
                }
            })
            .collect()
    }

    /// Unweighted mean of per-class F1 over classes present in labels or
    /// predictions.
    pub fn macro_f1(&self) -> f64 {
        let scores: Vec<f64> = self.per_class_f1().into_iter().flatten().collect();
        if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    }
}

/// Macro F1 of parallel prediction/label sequences over `classes` classes.
pub fn macro_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64, TaskError> {
    if predictions.len() != labels.len() {
        return Err(TaskError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &l) in predictions.iter().zip(labels) {
        cm.record(p, l)?;
    }
    Ok(cm.macro_f1())
}
