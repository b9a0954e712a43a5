//! One structured-text (JSON) container for every artifact the tooling
//! reads or writes: complexes, episodes, dataset manifests, checkpoints,
//! metric reports, and run configs. Every document carries `format_version`
//! and round-trips losslessly (floats are emitted with full round-trip
//! precision).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::{Cell, CellId, CellKind, CombinatorialComplex, EntityId, Violation};
use crate::config::FORMAT_VERSION;
use crate::hat::HatConfig;
use crate::numerics::{ParamStore, Tensor};
use crate::scene::{EntityMatcher, EntityRef, SceneFrame, WindowBuild};
use crate::synth::{Episode, SplitIndices};
use crate::tasks::{ConfusionMatrix, HeadConfig, TaskLabels};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse failure in {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path} has format version {found}, expected {FORMAT_VERSION}")]
    Version { path: PathBuf, found: u32 },
    #[error("checkpoint does not match the configured model: {0}")]
    CheckpointMismatch(String),
}

pub fn write_json<T: Serialize>(path: &Path, value: &T, pretty: bool) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| IoError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    let mut bytes = if pretty {
        serde_json::to_vec_pretty(value)
    } else {
        serde_json::to_vec(value)
    }
    .map_err(|source| IoError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    let mut file = std::fs::File::create(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    file.write_all(&bytes).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| IoError::Parse {
        path: path.to_path_buf(),
        source,
    })
}

fn check_version(path: &Path, found: u32) -> Result<(), IoError> {
    if found != FORMAT_VERSION {
        return Err(IoError::Version {
            path: path.to_path_buf(),
            found,
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// combinatorial complexes
// ---------------------------------------------------------------------------

/// Entity footprint recorded alongside a serialized complex so downstream
/// tools can anchor relations without the original frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: EntityId,
    pub label: String,
    pub matcher: EntityMatcher,
    pub representative: u32,
    pub cells: Vec<u32>,
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CcMeta {
    pub timestamps: Vec<f64>,
    #[serde(default)]
    pub entities: Vec<EntityRecord>,
}

/// The complex container: `cells`, `incidence`, `meta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcFile {
    pub format_version: u32,
    pub cells: Vec<Cell>,
    pub incidence: Vec<(u32, u32)>,
    pub meta: CcMeta,
}

impl CcFile {
    pub fn from_window(window: &WindowBuild) -> Self {
        let mut entities = Vec::new();
        for (frame, refs) in window.entities_per_frame.iter().enumerate() {
            for e in refs {
                entities.push(EntityRecord {
                    entity_id: e.entity_id,
                    label: e.label.clone(),
                    matcher: e.matcher,
                    representative: e.representative.0,
                    cells: e.cells.iter().map(|c| c.0).collect(),
                    frame,
                });
            }
        }
        CcFile {
            format_version: FORMAT_VERSION,
            cells: window.cc.cells().cloned().collect(),
            incidence: window.cc.incidence_pairs().map(|(l, u)| (l.0, u.0)).collect(),
            meta: CcMeta {
                timestamps: window.timestamps.clone(),
                entities,
            },
        }
    }

    /// Leniently reassembles the complex; violations from the load merge
    /// with whatever `validate` finds.
    pub fn to_complex(&self) -> (CombinatorialComplex, Vec<Violation>) {
        CombinatorialComplex::from_parts_unchecked(
            self.cells.clone(),
            self.incidence
                .iter()
                .map(|&(l, u)| (CellId(l), CellId(u)))
                .collect(),
        )
    }

    /// Strict reconstruction into a window with entity tables, for reduce.
    pub fn to_window(&self) -> Result<WindowBuild, IoError> {
        let (cc, load_violations) = self.to_complex();
        let mut violations = load_violations;
        violations.extend(cc.validate());
        if !violations.is_empty() {
            return Err(IoError::CheckpointMismatch(format!(
                "complex file is invalid: {}",
                violations[0]
            )));
        }
        let frame_count = self.meta.timestamps.len().max(
            self.meta
                .entities
                .iter()
                .map(|e| e.frame + 1)
                .max()
                .unwrap_or(0),
        );
        let mut entities_per_frame = vec![Vec::new(); frame_count];
        for record in &self.meta.entities {
            entities_per_frame[record.frame].push(EntityRef {
                entity_id: record.entity_id,
                matcher: record.matcher,
                label: record.label.clone(),
                representative: CellId(record.representative),
                cells: record.cells.iter().map(|&c| CellId(c)).collect(),
            });
        }
        Ok(WindowBuild {
            cc,
            timestamps: self.meta.timestamps.clone(),
            entities_per_frame,
        })
    }
}

pub fn write_cc(path: &Path, file: &CcFile) -> Result<(), IoError> {
    write_json(path, file, true)
}

pub fn read_cc(path: &Path) -> Result<CcFile, IoError> {
    let file: CcFile = read_json(path)?;
    check_version(path, file.format_version)?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// episodes and dataset manifests
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FramesFile {
    pub format_version: u32,
    pub episode: u64,
    pub frames: Vec<SceneFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsFile {
    pub format_version: u32,
    pub episode: u64,
    pub labels: Vec<TaskLabels>,
    pub frame_phases: Vec<usize>,
    pub frame_actions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: u64,
    pub frames_path: String,
    pub labels_path: String,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub format_version: u32,
    pub seed: u64,
    pub window_t: usize,
    pub episodes: Vec<ManifestEntry>,
    pub split: SplitIndices,
    pub action_names: Vec<String>,
    pub phase_names: Vec<String>,
    pub predicate_names: Vec<String>,
}

/// Writes one episode as a frames file and a labels file next to each other.
pub fn write_episode(dir: &Path, episode: &Episode) -> Result<ManifestEntry, IoError> {
    let frames_name = format!("ep_{:04}.frames.json", episode.index);
    let labels_name = format!("ep_{:04}.labels.json", episode.index);
    write_json(
        &dir.join(&frames_name),
        &FramesFile {
            format_version: FORMAT_VERSION,
            episode: episode.index,
            frames: episode.frames.clone(),
        },
        false,
    )?;
    write_json(
        &dir.join(&labels_name),
        &LabelsFile {
            format_version: FORMAT_VERSION,
            episode: episode.index,
            labels: episode.labels.clone(),
            frame_phases: episode.frame_phases.clone(),
            frame_actions: episode.frame_actions.clone(),
        },
        false,
    )?;
    Ok(ManifestEntry {
        index: episode.index,
        frames_path: frames_name,
        labels_path: labels_name,
        frame_count: episode.frames.len(),
    })
}

pub fn read_episode(dir: &Path, entry: &ManifestEntry) -> Result<Episode, IoError> {
    let frames_path = dir.join(&entry.frames_path);
    let frames: FramesFile = read_json(&frames_path)?;
    check_version(&frames_path, frames.format_version)?;
    let labels_path = dir.join(&entry.labels_path);
    let labels: LabelsFile = read_json(&labels_path)?;
    check_version(&labels_path, labels.format_version)?;
    Ok(Episode {
        index: entry.index,
        frames: frames.frames,
        labels: labels.labels,
        frame_phases: labels.frame_phases,
        frame_actions: labels.frame_actions,
    })
}

pub fn write_manifest(dir: &Path, manifest: &ManifestFile) -> Result<(), IoError> {
    write_json(&dir.join("manifest.json"), manifest, true)
}

pub fn read_manifest(dir: &Path) -> Result<ManifestFile, IoError> {
    let path = dir.join("manifest.json");
    let manifest: ManifestFile = read_json(&path)?;
    check_version(&path, manifest.format_version)?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointFile {
    pub format_version: u32,
    pub model: HatConfig,
    pub heads: HeadConfig,
    pub feature_dims: Vec<(CellKind, usize)>,
    pub params: Vec<ParamRecord>,
}

impl CheckpointFile {
    pub fn from_store(
        model: HatConfig,
        heads: HeadConfig,
        feature_dims: &BTreeMap<CellKind, usize>,
        store: &ParamStore,
    ) -> Self {
        CheckpointFile {
            format_version: FORMAT_VERSION,
            model,
            heads,
            feature_dims: feature_dims.iter().map(|(&k, &d)| (k, d)).collect(),
            params: store
                .snapshot()
                .into_iter()
                .map(|(name, tensor)| ParamRecord {
                    shape: tensor.shape().to_vec(),
                    data: tensor.data().to_vec(),
                    name,
                })
                .collect(),
        }
    }

    /// Restores parameter values into an identically constructed store.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<(), IoError> {
        let snapshot: Result<Vec<(String, Tensor)>, IoError> = self
            .params
            .iter()
            .map(|r| {
                Tensor::from_vec(&r.shape, r.data.clone())
                    .map(|t| (r.name.clone(), t))
                    .map_err(|e| IoError::CheckpointMismatch(format!("{}: {}", r.name, e)))
            })
            .collect();
        store
            .restore(&snapshot?)
            .map_err(IoError::CheckpointMismatch)
    }
}

pub fn write_checkpoint(path: &Path, file: &CheckpointFile) -> Result<(), IoError> {
    write_json(path, file, false)
}

pub fn read_checkpoint(path: &Path) -> Result<CheckpointFile, IoError> {
    let file: CheckpointFile = read_json(path)?;
    check_version(path, file.format_version)?;
    Ok(file)
}

// ---------------------------------------------------------------------------
// metric reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub macro_f1: f64,
    pub class_names: Vec<String>,
    pub per_class_f1: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BreachSummary {
    pub macro_f1: f64,
    pub windows: usize,
    pub flagged_windows: usize,
    pub confusion: ConfusionMatrix,
    /// Violating pairs of the first flagged windows, as entity labels.
    pub example_pairs: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub split: String,
    pub windows: usize,
    pub next_action: TaskReport,
    pub robot_phase: TaskReport,
    pub relations: TaskReport,
    pub breach: BreachSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub format_version: u32,
    pub splits: Vec<SplitReport>,
}

pub fn write_report(path: &Path, report: &ReportFile) -> Result<(), IoError> {
    write_json(path, report, true)
}

pub fn read_report(path: &Path) -> Result<ReportFile, IoError> {
    let report: ReportFile = read_json(path)?;
    check_version(path, report.format_version)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// training logs, ablation tables, triplet exports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogFile {
    pub format_version: u32,
    pub steps_run: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub best_val: Option<crate::train::EvalScores>,
    pub entries: Vec<crate::train::TrainLogEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub toggles: crate::config::ModalityToggles,
    pub next_action_f1: f64,
    pub robot_phase_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFile {
    pub format_version: u32,
    pub rows: Vec<AblationRow>,
    /// Reported, not asserted: whether F1 never decreases down the rows.
    pub next_action_monotone: bool,
    pub robot_phase_monotone: bool,
}

/// One triplet string per line, sorted, trailing newline.
pub fn write_triplets(path: &Path, triplets: &std::collections::BTreeSet<String>) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| IoError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    let mut out = String::new();
    for t in triplets {
        out.push_str(t);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

// ---------------------------------------------------------------------------
// run configs
// ---------------------------------------------------------------------------

pub fn write_run_config(path: &Path, config: &crate::config::RunConfig) -> Result<(), IoError> {
    write_json(path, config, true)
}

pub fn read_run_config(path: &Path) -> Result<crate::config::RunConfig, IoError> {
    let config: crate::config::RunConfig = read_json(path)?;
    check_version(path, config.format_version)?;
    Ok(config)
}
