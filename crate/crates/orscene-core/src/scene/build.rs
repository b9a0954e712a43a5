use std::collections::{BTreeMap, BTreeSet};

use crate::cc::{CcError, CellId, CellKind, CombinatorialComplex, EntityId, FrozenComplex};

use super::{
    entity_distance, dist3, BuildConfig, EntityMatcher, EntityPoints, EvidenceKind, SceneError,
    SceneFrame,
};

/// A tracked entity's footprint inside a built complex.
#[derive(Debug, Clone)]
pub struct EntityRef {
    pub entity_id: EntityId,
    pub matcher: EntityMatcher,
    pub label: String,
    /// Anchor cell used by edges and temporal links: the object cell itself,
    /// or the configured root joint for humans.
    pub representative: CellId,
    /// All geometric rank-0 cells of this entity.
    pub cells: Vec<CellId>,
}

/// A rank-1 spatial or semantic edge with the entity indices it connects.
#[derive(Debug, Clone)]
pub struct RelationalEdge {
    pub cell: CellId,
    pub a: usize,
    pub b: usize,
    pub semantic: bool,
}

/// Single-frame complex under construction plus the side tables later
/// stages (group cells, temporal links, task heads) need.
#[derive(Debug, Clone)]
pub struct FrameBuild {
    pub cc: CombinatorialComplex,
    pub timestamp: f64,
    pub entities: Vec<EntityRef>,
    pub evidence_cells: Vec<(EvidenceKind, CellId)>,
    pub skeleton_edges: BTreeMap<EntityId, Vec<CellId>>,
    pub joint_cells: BTreeMap<EntityId, BTreeMap<String, CellId>>,
    pub relational_edges: Vec<RelationalEdge>,
}

/// Rank-0 lifting: one joint cell per human joint, one object cell per
/// object (feature with extent appended), one cell per present evidence kind.
pub fn build_rank0(frame: &SceneFrame, config: &BuildConfig) -> Result<FrameBuild, SceneError> {
    frame.validate()?;
    let mut cc = CombinatorialComplex::new();
    let mut entities = Vec::new();
    let mut joint_cells: BTreeMap<EntityId, BTreeMap<String, CellId>> = BTreeMap::new();

    for human in &frame.humans {
        let mut by_name = BTreeMap::new();
        let mut cells = Vec::new();
        for joint in &human.joints {
            let id = cc.push_cell(
                CellKind::Joint,
                Some(joint.position),
                Some(human.entity_id),
                joint.semantic_feature.clone(),
            )?;
            by_name.insert(joint.name.clone(), id);
            cells.push(id);
        }
        let representative = *by_name.get(&config.root_joint).ok_or_else(|| {
            SceneError::InvalidFrame(format!(
                "human {:?} lacks root joint {}",
                human.entity_id, config.root_joint
            ))
        })?;
        joint_cells.insert(human.entity_id, by_name);
        entities.push(EntityRef {
            entity_id: human.entity_id,
            matcher: EntityMatcher::Role(human.role),
            label: human.role.label().to_string(),
            representative,
            cells,
        });
    }

    for object in &frame.objects {
        let mut raw = object.feature.clone();
        raw.extend_from_slice(&object.extent);
        let id = cc.push_cell(
            CellKind::Object,
            Some(object.center),
            Some(object.entity_id),
            raw,
        )?;
        entities.push(EntityRef {
            entity_id: object.entity_id,
            matcher: EntityMatcher::Class(object.class),
            label: object.class.label().to_string(),
            representative: id,
            cells: vec![id],
        });
    }

    let mut evidence_cells = Vec::new();
    for kind in [EvidenceKind::RobotLog, EvidenceKind::Audio, EvidenceKind::Screen] {
        if let Some(feature) = frame.evidence.get(kind) {
            let cell_kind = match kind {
                EvidenceKind::RobotLog => CellKind::EvidenceRobotLog,
                EvidenceKind::Audio => CellKind::EvidenceAudio,
                EvidenceKind::Screen => CellKind::EvidenceScreen,
            };
            let id = cc.push_cell(cell_kind, None, None, feature.clone())?;
            evidence_cells.push((kind, id));
        }
    }

    Ok(FrameBuild {
        cc,
        timestamp: frame.timestamp,
        entities,
        evidence_cells,
        skeleton_edges: BTreeMap::new(),
        joint_cells,
        relational_edges: Vec::new(),
    })
}

fn entity_points(frame: &SceneFrame, build: &FrameBuild) -> Vec<EntityPoints> {
    let mut out = Vec::with_capacity(build.entities.len());
    for entity in &build.entities {
        match entity.matcher {
            EntityMatcher::Role(_) => {
                let human = frame
                    .humans
                    .iter()
                    .find(|h| h.entity_id == entity.entity_id)
                    .expect("entity built from this frame");
                out.push(EntityPoints::from_human(human));
            }
            EntityMatcher::Class(_) => {
                let object = frame
                    .objects
                    .iter()
                    .find(|o| o.entity_id == entity.entity_id)
                    .expect("entity built from this frame");
                out.push(EntityPoints::from_object(object));
            }
        }
    }
    out
}

/// Rank-1 lifting: skeleton edges along the kinematic tree, spatial edges
/// under the proximity threshold (strict), semantic edges regardless of
/// distance, and evidence edges per the attachment table.
pub fn build_rank1(
    frame: &SceneFrame,
    build: &mut FrameBuild,
    config: &BuildConfig,
) -> Result<(), SceneError> {
    // (a) skeleton edges
    for human in &frame.humans {
        let by_name = &build.joint_cells[&human.entity_id];
        let mut edges = Vec::new();
        for (a, b) in &config.kinematic_tree {
            let (Some(&ca), Some(&cb)) = (by_name.get(a), by_name.get(b)) else {
                continue;
            };
            let pa = build.cc.cell(ca).unwrap().position.unwrap();
            let pb = build.cc.cell(cb).unwrap().position.unwrap();
            let edge = build
                .cc
                .push_cell(CellKind::SkeletonEdge, None, None, vec![dist3(pa, pb)])?;
            build.cc.add_incidence(ca, edge)?;
            build.cc.add_incidence(cb, edge)?;
            edges.push(edge);
        }
        build.skeleton_edges.insert(human.entity_id, edges);
    }

    // (b) spatial edges, strict threshold
    let points = entity_points(frame, build);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let d = entity_distance(&points[i], &points[j])?;
            if d < config.tau_prox {
                let edge = build
                    .cc
                    .push_cell(CellKind::SpatialEdge, None, None, vec![d])?;
                build
                    .cc
                    .add_incidence(build.entities[i].representative, edge)?;
                build
                    .cc
                    .add_incidence(build.entities[j].representative, edge)?;
                build.relational_edges.push(RelationalEdge {
                    cell: edge,
                    a: i,
                    b: j,
                    semantic: false,
                });
            }
        }
    }

    // (c) semantic edges, one per matched unordered pair
    let mut linked: BTreeSet<(usize, usize)> = BTreeSet::new();
    for (ma, mb) in &config.semantic_links {
        for i in 0..build.entities.len() {
            if build.entities[i].matcher != *ma {
                continue;
            }
            for j in 0..build.entities.len() {
                if i == j || build.entities[j].matcher != *mb {
                    continue;
                }
                let key = (i.min(j), i.max(j));
                if !linked.insert(key) {
                    continue;
                }
                let edge = build
                    .cc
                    .push_cell(CellKind::SemanticEdge, None, None, vec![1.0])?;
                build
                    .cc
                    .add_incidence(build.entities[key.0].representative, edge)?;
                build
                    .cc
                    .add_incidence(build.entities[key.1].representative, edge)?;
                build.relational_edges.push(RelationalEdge {
                    cell: edge,
                    a: key.0,
                    b: key.1,
                    semantic: true,
                });
            }
        }
    }

    // (d) evidence edges
    for (kind, matchers) in &config.evidence_map {
        let Some(&(_, evidence_cell)) = build.evidence_cells.iter().find(|(k, _)| k == kind)
        else {
            continue;
        };
        for entity in &build.entities {
            if matchers.contains(&entity.matcher) {
                let edge = build
                    .cc
                    .push_cell(CellKind::EvidenceEdge, None, None, vec![1.0])?;
                build.cc.add_incidence(evidence_cell, edge)?;
                build.cc.add_incidence(entity.representative, edge)?;
            }
        }
    }
    Ok(())
}

/// Rank-2 lifting: one person cell per human (incident to its skeleton edges
/// and, via explicit cross-rank pairs, to all its joint cells), and one
/// functional cell per template with at least two member classes present.
pub fn build_rank2(
    frame: &SceneFrame,
    build: &mut FrameBuild,
    config: &BuildConfig,
) -> Result<(), SceneError> {
    for human in &frame.humans {
        let joints: Vec<CellId> = build.joint_cells[&human.entity_id].values().copied().collect();
        let edges = build
            .skeleton_edges
            .get(&human.entity_id)
            .cloned()
            .unwrap_or_default();
        let person = build.cc.push_cell(
            CellKind::PersonCell,
            None,
            Some(human.entity_id),
            vec![joints.len() as f64, edges.len() as f64],
        )?;
        for edge in &edges {
            build.cc.add_incidence(*edge, person)?;
        }
        for joint in &joints {
            build.cc.add_incidence(*joint, person)?;
        }
    }

    for template in &config.functional_templates {
        let members: Vec<usize> = (0..build.entities.len())
            .filter(|&i| template.contains(&build.entities[i].matcher))
            .collect();
        let matched_classes = template
            .iter()
            .filter(|m| build.entities.iter().any(|e| e.matcher == **m))
            .count();
        if matched_classes < 2 {
            continue;
        }
        let member_set: BTreeSet<usize> = members.iter().copied().collect();
        let functional = build.cc.push_cell(
            CellKind::FunctionalCell,
            None,
            None,
            vec![members.len() as f64],
        )?;
        for edge in &build.relational_edges {
            if member_set.contains(&edge.a) && member_set.contains(&edge.b) {
                build.cc.add_incidence(edge.cell, functional)?;
            }
        }
        for &i in &members {
            build.cc.add_incidence(build.entities[i].representative, functional)?;
        }
    }
    Ok(())
}

/// A spatio-temporal complex: the disjoint union of per-frame complexes plus
/// temporal rank-1 cells between an entity's representatives in consecutive
/// frames.
#[derive(Debug, Clone)]
pub struct WindowBuild {
    pub cc: CombinatorialComplex,
    pub timestamps: Vec<f64>,
    pub entities_per_frame: Vec<Vec<EntityRef>>,
}

impl WindowBuild {
    pub fn last_entities(&self) -> &[EntityRef] {
        self.entities_per_frame.last().map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn freeze(self) -> Result<FrozenWindow, CcError> {
        Ok(FrozenWindow {
            complex: self.cc.freeze()?,
            timestamps: self.timestamps,
            entities_per_frame: self.entities_per_frame,
        })
    }
}

/// Immutable window ready for forward passes.
#[derive(Debug, Clone)]
pub struct FrozenWindow {
    pub complex: FrozenComplex,
    pub timestamps: Vec<f64>,
    pub entities_per_frame: Vec<Vec<EntityRef>>,
}

impl FrozenWindow {
    pub fn last_entities(&self) -> &[EntityRef] {
        self.entities_per_frame.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Disjoint union of built frames joined by temporal edges; "bidirectional"
/// is realized by undirected incidence (both representatives are boundary
/// cells of the temporal edge).
pub fn build_temporal(frames: Vec<FrameBuild>, _config: &BuildConfig) -> Result<WindowBuild, SceneError> {
    if frames.is_empty() {
        return Err(SceneError::WindowEmpty);
    }
    let mut cc = CombinatorialComplex::new();
    let mut timestamps = Vec::with_capacity(frames.len());
    let mut entities_per_frame = Vec::with_capacity(frames.len());

    for frame in &frames {
        let offset = cc.len() as u32;
        for cell in frame.cc.cells() {
            let mut shifted = cell.clone();
            shifted.id = CellId(cell.id.0 + offset);
            cc.add_cell(shifted)?;
        }
        for (lower, upper) in frame.cc.incidence_pairs() {
            cc.add_incidence(CellId(lower.0 + offset), CellId(upper.0 + offset))?;
        }
        timestamps.push(frame.timestamp);
        let shifted_entities: Vec<EntityRef> = frame
            .entities
            .iter()
            .map(|e| EntityRef {
                entity_id: e.entity_id,
                matcher: e.matcher,
                label: e.label.clone(),
                representative: CellId(e.representative.0 + offset),
                cells: e.cells.iter().map(|c| CellId(c.0 + offset)).collect(),
            })
            .collect();
        entities_per_frame.push(shifted_entities);
    }

    for f in 0..entities_per_frame.len().saturating_sub(1) {
        let dt = timestamps[f + 1] - timestamps[f];
        let prev: BTreeMap<EntityId, CellId> = entities_per_frame[f]
            .iter()
            .map(|e| (e.entity_id, e.representative))
            .collect();
        let next: Vec<(EntityId, CellId)> = entities_per_frame[f + 1]
            .iter()
            .map(|e| (e.entity_id, e.representative))
            .collect();
        for (entity_id, rep_next) in next {
            if let Some(&rep_prev) = prev.get(&entity_id) {
                let edge = cc.push_cell(
                    CellKind::TemporalEdge,
                    None,
                    Some(entity_id),
                    vec![dt],
                )?;
                cc.add_incidence(rep_prev, edge)?;
                cc.add_incidence(rep_next, edge)?;
            }
        }
    }

    Ok(WindowBuild {
        cc,
        timestamps,
        entities_per_frame,
    })
}

/// Full pipeline for one window: per-frame rank-0/1/2 lifting, optional
/// visual grounding, then temporal assembly.
pub fn build_window(
    frames: &[SceneFrame],
    config: &BuildConfig,
    gate: Option<&super::VisualGateParams>,
) -> Result<WindowBuild, SceneError> {
    let mut built = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut fb = build_rank0(frame, config)?;
        build_rank1(frame, &mut fb, config)?;
        build_rank2(frame, &mut fb, config)?;
        if let Some(gate) = gate {
            super::ground_visual(&mut fb.cc, &frame.cameras, gate)?;
        }
        built.push(fb);
    }
    build_temporal(built, config)
}
