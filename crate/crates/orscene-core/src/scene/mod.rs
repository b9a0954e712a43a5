//! Scene construction: multimodal per-frame observations and their lifting
//! into a spatio-temporal combinatorial complex (rank-0 entities and
//! evidence, rank-1 interactions, rank-2 group cells, visual grounding,
//! temporal links).

mod build;
mod ground;

pub use build::{
    build_rank0, build_rank1, build_rank2, build_temporal, build_window, EntityRef, FrameBuild,
    FrozenWindow, RelationalEdge, WindowBuild,
};
pub use ground::{ground_visual, project_to_grid, VisualGateParams};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::{CcError, EntityId};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("entity {0:?} has no geometric cells")]
    NoGeometry(EntityId),
    #[error("camera {index} has non-invertible intrinsics")]
    DegenerateCamera { index: usize },
    #[error("temporal window is empty")]
    WindowEmpty,
    #[error("invalid build config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cc(#[from] CcError),
}

/// Human roles present in the operating room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    HeadSurgeon,
    Assistant,
    Nurse,
    Technician,
    Patient,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::HeadSurgeon => "head_surgeon",
            Role::Assistant => "assistant",
            Role::Nurse => "nurse",
            Role::Technician => "technician",
            Role::Patient => "patient",
        }
    }

    pub const ALL: [Role; 5] = [
        Role::HeadSurgeon,
        Role::Assistant,
        Role::Nurse,
        Role::Technician,
        Role::Patient,
    ];
}

/// Object classes with 3-D localization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    Robot,
    Saw,
    Table,
    Tracker,
    Monitor,
    Drill,
}

impl ObjectClass {
    pub fn label(self) -> &'static str {
        match self {
            ObjectClass::Robot => "robot",
            ObjectClass::Saw => "saw",
            ObjectClass::Table => "table",
            ObjectClass::Tracker => "tracker",
            ObjectClass::Monitor => "monitor",
            ObjectClass::Drill => "drill",
        }
    }

    pub const ALL: [ObjectClass; 6] = [
        ObjectClass::Robot,
        ObjectClass::Saw,
        ObjectClass::Table,
        ObjectClass::Tracker,
        ObjectClass::Monitor,
        ObjectClass::Drill,
    ];
}

/// Selects entities by role (humans) or class (objects) in config tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityMatcher {
    Role(Role),
    Class(ObjectClass),
}

impl EntityMatcher {
    pub fn label(self) -> &'static str {
        match self {
            EntityMatcher::Role(r) => r.label(),
            EntityMatcher::Class(c) => c.label(),
        }
    }
}

/// Non-spatial evidence modalities attached as rank-0 cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    RobotLog,
    Audio,
    Screen,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointObs {
    pub name: String,
    pub position: [f64; 3],
    pub semantic_feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanObs {
    pub entity_id: EntityId,
    pub role: Role,
    pub joints: Vec<JointObs>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObs {
    pub entity_id: EntityId,
    pub class: ObjectClass,
    pub center: [f64; 3],
    pub extent: [f64; 3],
    pub feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvidenceObs {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub robot_log: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audio: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub screen: Option<Vec<f64>>,
}

impl EvidenceObs {
    pub fn get(&self, kind: EvidenceKind) -> Option<&Vec<f64>> {
        match kind {
            EvidenceKind::RobotLog => self.robot_log.as_ref(),
            EvidenceKind::Audio => self.audio.as_ref(),
            EvidenceKind::Screen => self.screen.as_ref(),
        }
    }
}

/// Row-major feature grid sampled during visual grounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl FeatureGrid {
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    /// Upper-triangular pinhole intrinsics in pixels.
    pub intrinsics: [[f64; 3]; 3],
    /// World-to-camera rigid transform (rotation block orthonormal).
    pub extrinsics: [[f64; 4]; 4],
    pub feature_grid: FeatureGrid,
}

/// One frame of raw multimodal observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub timestamp: f64,
    pub humans: Vec<HumanObs>,
    pub objects: Vec<ObjectObs>,
    #[serde(default)]
    pub evidence: EvidenceObs,
    #[serde(default)]
    pub cameras: Vec<CameraView>,
}

impl SceneFrame {
    pub fn validate(&self) -> Result<(), SceneError> {
        let mut seen = BTreeSet::new();
        for h in &self.humans {
            if !seen.insert(h.entity_id) {
                return Err(SceneError::InvalidFrame(format!(
                    "duplicate entity id {:?}",
                    h.entity_id
                )));
            }
            for j in &h.joints {
                if !j.position.iter().all(|x| x.is_finite()) {
                    return Err(SceneError::InvalidFrame(format!(
                        "joint {} of {:?} has non-finite position",
                        j.name, h.entity_id
                    )));
                }
            }
        }
        for o in &self.objects {
            if !seen.insert(o.entity_id) {
                return Err(SceneError::InvalidFrame(format!(
                    "duplicate entity id {:?}",
                    o.entity_id
                )));
            }
            if !o.center.iter().all(|x| x.is_finite()) {
                return Err(SceneError::InvalidFrame(format!(
                    "object {:?} has non-finite center",
                    o.entity_id
                )));
            }
            if !o.extent.iter().all(|x| x.is_finite() && *x > 0.0) {
                return Err(SceneError::InvalidFrame(format!(
                    "object {:?} has non-positive extent",
                    o.entity_id
                )));
            }
        }
        for (i, cam) in self.cameras.iter().enumerate() {
            validate_camera(cam, i)?;
        }
        Ok(())
    }
}

fn validate_camera(cam: &CameraView, index: usize) -> Result<(), SceneError> {
    let k = &cam.intrinsics;
    if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
        return Err(SceneError::InvalidFrame(format!(
            "camera {} intrinsics not upper-triangular",
            index
        )));
    }
    if k[0][0] <= 0.0 || k[1][1] <= 0.0 {
        return Err(SceneError::InvalidFrame(format!(
            "camera {} has non-positive focal length",
            index
        )));
    }
    // rotation block orthonormal within 1e-6
    let r = &cam.extrinsics;
    for i in 0..3 {
        for j in 0..3 {
            let mut dot = 0.0;
            for (a, b) in r[i][..3].iter().zip(&r[j][..3]) {
                dot += a * b;
            }
            let expect = if i == j { 1.0 } else { 0.0 };
            if (dot - expect).abs() > 1e-6 {
                return Err(SceneError::InvalidFrame(format!(
                    "camera {} rotation block not orthonormal",
                    index
                )));
            }
        }
    }
    if cam.feature_grid.data.len()
        != cam.feature_grid.height * cam.feature_grid.width * cam.feature_grid.channels
    {
        return Err(SceneError::InvalidFrame(format!(
            "camera {} feature grid size mismatch",
            index
        )));
    }
    Ok(())
}

/// Everything the builder needs to know that the frames do not carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    /// Spatial-edge threshold in meters (strict `<`).
    pub tau_prox: f64,
    /// Human kinematic tree as joint-name pairs.
    pub kinematic_tree: Vec<(String, String)>,
    /// Joint anchoring a human in edges and temporal links.
    pub root_joint: String,
    /// Pairs linked regardless of spatial distance.
    pub semantic_links: Vec<(EntityMatcher, EntityMatcher)>,
    /// Which entities each evidence kind attaches to.
    pub evidence_map: Vec<(EvidenceKind, Vec<EntityMatcher>)>,
    /// Multi-actor event templates; instantiated when at least two member
    /// classes are present.
    pub functional_templates: Vec<Vec<EntityMatcher>>,
    pub window_t: usize,
    pub sterile_roles: Vec<Role>,
    pub nonsterile_roles: Vec<Role>,
    /// Critical proximity threshold for sterility breaches, meters.
    pub tau_breach: f64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            tau_prox: 1.2,
            kinematic_tree: vec![
                ("pelvis".into(), "spine".into()),
                ("spine".into(), "head".into()),
                ("spine".into(), "l_hand".into()),
                ("spine".into(), "r_hand".into()),
            ],
            root_joint: "pelvis".into(),
            semantic_links: vec![(
                EntityMatcher::Role(Role::Technician),
                EntityMatcher::Class(ObjectClass::Robot),
            )],
            evidence_map: vec![
                (EvidenceKind::RobotLog, vec![EntityMatcher::Class(ObjectClass::Robot)]),
                (
                    EvidenceKind::Audio,
                    Role::ALL.iter().map(|&r| EntityMatcher::Role(r)).collect(),
                ),
                (
                    EvidenceKind::Screen,
                    vec![
                        EntityMatcher::Class(ObjectClass::Monitor),
                        EntityMatcher::Role(Role::HeadSurgeon),
                    ],
                ),
            ],
            functional_templates: vec![vec![
                EntityMatcher::Role(Role::HeadSurgeon),
                EntityMatcher::Class(ObjectClass::Robot),
                EntityMatcher::Class(ObjectClass::Saw),
                EntityMatcher::Role(Role::Patient),
            ]],
            window_t: 8,
            sterile_roles: vec![Role::HeadSurgeon, Role::Patient],
            nonsterile_roles: vec![Role::Technician, Role::Nurse],
            tau_breach: 0.5,
        }
    }
}

impl BuildConfig {
    /// Joint names in first-appearance order over the kinematic tree.
    pub fn joint_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (a, b) in &self.kinematic_tree {
            if !names.contains(a) {
                names.push(a.clone());
            }
            if !names.contains(b) {
                names.push(b.clone());
            }
        }
        names
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.tau_prox <= 0.0 {
            return Err(SceneError::InvalidConfig("tau_prox must be positive".into()));
        }
        if self.tau_breach <= 0.0 {
            return Err(SceneError::InvalidConfig("tau_breach must be positive".into()));
        }
        if self.window_t == 0 {
            return Err(SceneError::InvalidConfig("window_t must be >= 1".into()));
        }
        let names = self.joint_names();
        if names.is_empty() {
            return Err(SceneError::InvalidConfig("kinematic tree is empty".into()));
        }
        if self.kinematic_tree.len() != names.len() - 1 {
            return Err(SceneError::InvalidConfig(format!(
                "kinematic tree must have exactly |joints| - 1 edges ({} joints, {} edges)",
                names.len(),
                self.kinematic_tree.len()
            )));
        }
        // connectivity check by flood fill over joint names
        let mut reached: BTreeSet<&str> = BTreeSet::new();
        reached.insert(names[0].as_str());
        let mut grew = true;
        while grew {
            grew = false;
            for (a, b) in &self.kinematic_tree {
                if reached.contains(a.as_str()) != reached.contains(b.as_str()) {
                    reached.insert(a.as_str());
                    reached.insert(b.as_str());
                    grew = true;
                }
            }
        }
        if reached.len() != names.len() {
            return Err(SceneError::InvalidConfig("kinematic tree is disconnected".into()));
        }
        if !names.contains(&self.root_joint) {
            return Err(SceneError::InvalidConfig(format!(
                "root joint {} not in kinematic tree",
                self.root_joint
            )));
        }
        Ok(())
    }
}

/// Geometric footprint of an entity: one center point for objects, every
/// joint position for humans.
#[derive(Debug, Clone)]
pub struct EntityPoints {
    pub entity_id: EntityId,
    pub points: Vec<[f64; 3]>,
}

impl EntityPoints {
    pub fn from_human(h: &HumanObs) -> Self {
        EntityPoints {
            entity_id: h.entity_id,
            points: h.joints.iter().map(|j| j.position).collect(),
        }
    }

    pub fn from_object(o: &ObjectObs) -> Self {
        EntityPoints {
            entity_id: o.entity_id,
            points: vec![o.center],
        }
    }
}

pub fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Proximity metric between two entities: Euclidean distance of centers for
/// object pairs, minimum over joint positions when a human is involved.
pub fn entity_distance(a: &EntityPoints, b: &EntityPoints) -> Result<f64, SceneError> {
    if a.points.is_empty() {
        return Err(SceneError::NoGeometry(a.entity_id));
    }
    if b.points.is_empty() {
        return Err(SceneError::NoGeometry(b.entity_id));
    }
    let mut best = f64::INFINITY;
    for pa in &a.points {
        for pb in &b.points {
            best = best.min(dist3(*pa, *pb));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entity_distance_identical_centers_is_zero() {
        let a = EntityPoints {
            entity_id: EntityId(0),
            points: vec![[1.0, 2.0, 3.0]],
        };
        let b = EntityPoints {
            entity_id: EntityId(1),
            points: vec![[1.0, 2.0, 3.0]],
        };
        assert_eq!(entity_distance(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn entity_distance_symmetric() {
        let a = EntityPoints {
            entity_id: EntityId(0),
            points: vec![[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]],
        };
        let b = EntityPoints {
            entity_id: EntityId(1),
            points: vec![[3.0, 0.0, 0.0]],
        };
        assert_eq!(
            entity_distance(&a, &b).unwrap(),
            entity_distance(&b, &a).unwrap()
        );
    }

    #[test]
    fn entity_distance_uses_min_joint() {
        let human = EntityPoints {
            entity_id: EntityId(0),
            points: vec![[0.0, 0.0, 0.0], [0.0, 0.0, 2.0]],
        };
        let object = EntityPoints {
            entity_id: EntityId(1),
            points: vec![[0.0, 0.0, 2.4]],
        };
        let d = entity_distance(&human, &object).unwrap();
        assert!((d - 0.4).abs() < 1e-12);
    }

    #[test]
    fn entity_distance_rejects_empty_geometry() {
        let a = EntityPoints {
            entity_id: EntityId(0),
            points: vec![],
        };
        let b = EntityPoints {
            entity_id: EntityId(1),
            points: vec![[0.0; 3]],
        };
        assert!(matches!(
            entity_distance(&a, &b),
            Err(SceneError::NoGeometry(_))
        ));
    }

    #[test]
    fn default_config_validates() {
        BuildConfig::default().validate().unwrap();
    }

    #[test]
    fn disconnected_tree_rejected() {
        let cfg = BuildConfig {
            kinematic_tree: vec![
                ("a".into(), "b".into()),
                ("c".into(), "d".into()),
                ("a".into(), "c".into()),
            ],
            root_joint: "a".into(),
            ..BuildConfig::default()
        };
        // 4 joints, 3 edges, connected: fine
        cfg.validate().unwrap();
        let bad = BuildConfig {
            kinematic_tree: vec![("a".into(), "b".into()), ("c".into(), "d".into())],
            root_joint: "a".into(),
            ..BuildConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn frame_validation_flags_duplicates_and_bad_extent() {
        let mut frame = SceneFrame {
            timestamp: 0.0,
            humans: vec![],
            objects: vec![
                ObjectObs {
                    entity_id: EntityId(1),
                    class: ObjectClass::Robot,
                    center: [0.0; 3],
                    extent: [1.0; 3],
                    feature: vec![],
                },
                ObjectObs {
                    entity_id: EntityId(1),
                    class: ObjectClass::Saw,
                    center: [0.0; 3],
                    extent: [1.0; 3],
                    feature: vec![],
                },
            ],
            evidence: EvidenceObs::default(),
            cameras: vec![],
        };
        assert!(frame.validate().is_err());
        frame.objects[1].entity_id = EntityId(2);
        frame.validate().unwrap();
        frame.objects[1].extent = [0.0, 1.0, 1.0];
        assert!(frame.validate().is_err());
    }
}
