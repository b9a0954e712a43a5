//! Deterministic synthetic operating-room episodes: a phase/action state
//! machine, waypoint entity motion with scripted sterility-breach approaches,
//! cluster-structured evidence features, multi-view cameras, and oracle
//! labels derived from the generator's own state. Everything is a pure
//! function of (config, episode index).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc::EntityId;
use crate::numerics::RngStream;
use crate::scene::{
    entity_distance, BuildConfig, CameraView, EntityMatcher, EntityPoints, EvidenceObs,
    FeatureGrid, HumanObs, JointObs, ObjectClass, ObjectObs, Role, SceneFrame,
};
use crate::tasks::TaskLabels;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("split ratios must be non-negative and sum to 1, got ({0}, {1}, {2})")]
    BadRatios(f64, f64, f64),
}

/// One phase of the procedure: how long it lasts and which actions cycle
/// inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub name: String,
    /// Inclusive frame-count range sampled per episode.
    pub duration_range: (usize, usize),
    pub action_cycle: Vec<String>,
    pub segment_len: usize,
}

/// A scripted semantic relation, active during the named phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRule {
    pub predicate: String,
    pub subject: EntityMatcher,
    pub object: EntityMatcher,
    pub phases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub phases: Vec<PhaseSpec>,
    pub actions: Vec<String>,
    /// Room extents in meters; x/y centered on the origin, z from 0.
    pub room_bounds: [f64; 3],
    pub motion_noise_sigma: f64,
    pub feature_noise_sigma: f64,
    pub cluster_separation: f64,
    pub humans: Vec<Role>,
    pub objects: Vec<ObjectClass>,
    pub robot_log_dim: usize,
    pub audio_dim: usize,
    pub screen_dim: usize,
    pub relation_rules: Vec<RelationRule>,
    /// Scripted approach events per episode placing a non-sterile entity
    /// inside breach range, and how many frames each holds.
    pub breach_events: usize,
    pub breach_hold: usize,
    pub cameras: usize,
    pub camera_grid: (usize, usize, usize),
}

impl Default for SynthConfig {
    fn default() -> Self {
        // Action segments span at least a full default window (8 frames), so
        // any window sees at most one switch per phase; with the boundary
        // flags in the evidence stream this keeps the next action decodable
        // from window-level aggregates.
        let phase = |name: &str, lo: usize, hi: usize, cycle: &[&str]| PhaseSpec {
            name: name.into(),
            duration_range: (lo, hi),
            action_cycle: cycle.iter().map(|s| s.to_string()).collect(),
            segment_len: 8,
        };
        SynthConfig {
            seed: 42,
            phases: vec![
                phase("idle", 10, 14, &["idle"]),
                phase("approach", 10, 16, &["move_table", "idle"]),
                phase("cut", 10, 16, &["pick_saw", "cut_bone"]),
                phase("retract", 10, 14, &["hand_off"]),
                phase("close", 10, 16, &["idle", "hand_off"]),
            ],
            actions: ["idle", "move_table", "pick_saw", "cut_bone", "hand_off"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            room_bounds: [6.0, 6.0, 3.0],
            motion_noise_sigma: 0.02,
            feature_noise_sigma: 0.3,
            cluster_separation: 3.0,
            humans: vec![Role::HeadSurgeon, Role::Technician, Role::Patient],
            objects: vec![
                ObjectClass::Robot,
                ObjectClass::Saw,
                ObjectClass::Table,
                ObjectClass::Monitor,
            ],
            robot_log_dim: 32,
            audio_dim: 32,
            screen_dim: 16,
            relation_rules: vec![
                RelationRule {
                    predicate: "operates".into(),
                    subject: EntityMatcher::Role(Role::HeadSurgeon),
                    object: EntityMatcher::Class(ObjectClass::Robot),
                    phases: vec!["cut".into(), "retract".into()],
                },
                RelationRule {
                    predicate: "services".into(),
                    subject: EntityMatcher::Role(Role::Technician),
                    object: EntityMatcher::Class(ObjectClass::Robot),
                    phases: vec!["idle".into(), "approach".into()],
                },
            ],
            breach_events: 2,
            breach_hold: 4,
            cameras: 2,
            camera_grid: (8, 8, 4),
        }
    }
}

impl SynthConfig {
    /// Relation vocabulary: "none", "close_to", then scripted predicates in
    /// first-appearance order.
    pub fn predicate_names(&self) -> Vec<String> {
        let mut names = vec!["none".to_string(), "close_to".to_string()];
        for rule in &self.relation_rules {
            if !names.contains(&rule.predicate) {
                names.push(rule.predicate.clone());
            }
        }
        names
    }

    pub fn phase_names(&self) -> Vec<String> {
        self.phases.iter().map(|p| p.name.clone()).collect()
    }

    pub fn validate(&self, window_t: usize) -> Result<(), SynthError> {
        if self.phases.is_empty() {
            return Err(SynthError::InvalidConfig("no phases".into()));
        }
        if self.actions.is_empty() {
            return Err(SynthError::InvalidConfig("no actions".into()));
        }
        for p in &self.phases {
            if p.duration_range.0 < 1 || p.duration_range.0 > p.duration_range.1 {
                return Err(SynthError::InvalidConfig(format!(
                    "phase {} has bad duration range {:?}",
                    p.name, p.duration_range
                )));
            }
            if p.action_cycle.is_empty() || p.segment_len == 0 {
                return Err(SynthError::InvalidConfig(format!(
                    "phase {} needs a non-empty action cycle and segment length",
                    p.name
                )));
            }
            for a in &p.action_cycle {
                if !self.actions.contains(a) {
                    return Err(SynthError::InvalidConfig(format!(
                        "phase {} cycles unknown action {}",
                        p.name, a
                    )));
                }
            }
        }
        if self.motion_noise_sigma < 0.0 || self.feature_noise_sigma < 0.0 {
            return Err(SynthError::InvalidConfig("sigmas must be >= 0".into()));
        }
        if self.cluster_separation <= 0.0 {
            return Err(SynthError::InvalidConfig(
                "cluster_separation must be > 0".into(),
            ));
        }
        if self.room_bounds.iter().any(|&b| b <= 0.0) {
            return Err(SynthError::InvalidConfig("room bounds must be > 0".into()));
        }
        if self.robot_log_dim < 10 || self.audio_dim < 4 || self.screen_dim < 4 {
            return Err(SynthError::InvalidConfig(
                "evidence dims too small (robot_log >= 10, audio >= 4, screen >= 4)".into(),
            ));
        }
        let min_total: usize = self.phases.iter().map(|p| p.duration_range.0).sum();
        if min_total < window_t {
            return Err(SynthError::InvalidConfig(format!(
                "minimum episode length {} shorter than window {}",
                min_total, window_t
            )));
        }
        for rule in &self.relation_rules {
            for phase in &rule.phases {
                if !self.phases.iter().any(|p| &p.name == phase) {
                    return Err(SynthError::InvalidConfig(format!(
                        "relation rule {} names unknown phase {}",
                        rule.predicate, phase
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Frames plus oracle labels for every sliding window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub index: u64,
    pub frames: Vec<SceneFrame>,
    pub labels: Vec<TaskLabels>,
    pub frame_phases: Vec<usize>,
    pub frame_actions: Vec<usize>,
}

struct GenEntity {
    entity_id: EntityId,
    matcher: EntityMatcher,
    base: [f64; 3],
    waypoint: [f64; 3],
    speed: f64,
    anchor: [f64; 3],
    radius: f64,
}

fn hash_unit(name: &str, axis: u64) -> f64 {
    let mut h: u64 = 0xcbf29ce484222325 ^ axis.wrapping_mul(0x9e3779b97f4a7c15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let mixed = {
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    };
    (mixed >> 11) as f64 / (1u64 << 53) as f64
}

/// Stable skeletal offset for a joint name; common names get anatomical-ish
/// placements, anything else a deterministic hash position.
fn joint_offset(name: &str) -> [f64; 3] {
    match name {
        "pelvis" => [0.0, 0.0, 0.0],
        "spine" => [0.0, 0.0, 0.3],
        "neck" => [0.0, 0.0, 0.55],
        "head" => [0.0, 0.0, 0.65],
        _ => [
            hash_unit(name, 0) * 0.8 - 0.4,
            hash_unit(name, 1) * 0.8 - 0.4,
            hash_unit(name, 2) * 0.5,
        ],
    }
}

fn object_home(class: ObjectClass) -> ([f64; 3], [f64; 3], f64, f64) {
    // (anchor, extent, radius, speed)
    match class {
        ObjectClass::Robot => ([0.8, 0.4, 1.0], [0.8, 0.8, 1.8], 1.3, 0.10),
        ObjectClass::Saw => ([1.1, 0.6, 1.1], [0.3, 0.1, 0.1], 1.3, 0.12),
        ObjectClass::Table => ([0.0, 0.0, 0.9], [2.0, 0.9, 0.1], 0.0, 0.0),
        ObjectClass::Monitor => ([2.2, 2.0, 1.6], [0.6, 0.1, 0.4], 0.0, 0.0),
        ObjectClass::Tracker => ([-2.3, 2.0, 2.0], [0.2, 0.2, 0.3], 0.0, 0.0),
        ObjectClass::Drill => ([-1.8, -2.0, 0.8], [0.3, 0.1, 0.1], 0.4, 0.05),
    }
}

fn human_home(role: Role) -> ([f64; 3], f64, f64) {
    // (anchor, radius, speed)
    match role {
        Role::HeadSurgeon => ([0.0, -0.9, 1.0], 1.2, 0.12),
        Role::Assistant => ([-1.0, 0.8, 1.0], 1.5, 0.12),
        Role::Nurse => ([1.6, -1.5, 1.0], 1.8, 0.14),
        Role::Technician => ([-2.0, 1.8, 1.0], 2.2, 0.16),
        Role::Patient => ([0.0, 0.0, 1.05], 0.12, 0.03),
    }
}

fn clamp_room(p: [f64; 3], bounds: [f64; 3]) -> [f64; 3] {
    [
        p[0].clamp(-bounds[0] / 2.0, bounds[0] / 2.0),
        p[1].clamp(-bounds[1] / 2.0, bounds[1] / 2.0),
        p[2].clamp(0.0, bounds[2]),
    ]
}

fn normalized_room(p: [f64; 3], bounds: [f64; 3]) -> [f64; 3] {
    [
        (p[0] + bounds[0] / 2.0) / bounds[0],
        (p[1] + bounds[1] / 2.0) / bounds[1],
        p[2] / bounds[2],
    ]
}

fn unit_centroid(rng: &mut RngStream, dim: usize, separation: f64) -> Vec<f64> {
    let scale = separation / (dim as f64).sqrt();
    rng.normal_vec(dim).iter().map(|x| x * scale).collect()
}

fn look_at_extrinsics(eye: [f64; 3], target: [f64; 3]) -> [[f64; 4]; 4] {
    let mut fwd = [
        target[0] - eye[0],
        target[1] - eye[1],
        target[2] - eye[2],
    ];
    let norm = (fwd[0] * fwd[0] + fwd[1] * fwd[1] + fwd[2] * fwd[2]).sqrt();
    for f in &mut fwd {
        *f /= norm;
    }
    let up = [0.0, 0.0, 1.0];
    let mut right = [
        up[1] * fwd[2] - up[2] * fwd[1],
        up[2] * fwd[0] - up[0] * fwd[2],
        up[0] * fwd[1] - up[1] * fwd[0],
    ];
    let rn = (right[0] * right[0] + right[1] * right[1] + right[2] * right[2]).sqrt();
    for r in &mut right {
        *r /= rn;
    }
    let down = [
        fwd[1] * right[2] - fwd[2] * right[1],
        fwd[2] * right[0] - fwd[0] * right[2],
        fwd[0] * right[1] - fwd[1] * right[0],
    ];
    let rot = [right, down, fwd];
    let mut ext = [[0.0; 4]; 4];
    for (i, row) in rot.iter().enumerate() {
        ext[i][..3].copy_from_slice(row);
        ext[i][3] = -(row[0] * eye[0] + row[1] * eye[1] + row[2] * eye[2]);
    }
    ext[3] = [0.0, 0.0, 0.0, 1.0];
    ext
}

fn make_cameras(config: &SynthConfig, rng: &mut RngStream) -> Vec<CameraView> {
    let (gh, gw, gc) = config.camera_grid;
    let corners = [
        [-2.6, -2.6, 2.4],
        [2.6, 2.6, 2.4],
        [2.6, -2.6, 2.4],
        [-2.6, 2.6, 2.4],
    ];
    let s = config.cluster_separation;
    (0..config.cameras)
        .map(|c| {
            let eye = corners[c % corners.len()];
            // channels: two coordinate ramps plus random bilinear surfaces,
            // so sampled features carry projected-position information
            let mut coeffs = Vec::new();
            for _ in 0..gc {
                coeffs.push([
                    rng.range(-0.5, 0.5) * s,
                    rng.range(-1.0, 1.0) * s,
                    rng.range(-1.0, 1.0) * s,
                    rng.range(-1.0, 1.0) * s,
                ]);
            }
            let mut data = Vec::with_capacity(gh * gw * gc);
            for y in 0..gh {
                for x in 0..gw {
                    let u = x as f64 / (gw.saturating_sub(1)).max(1) as f64;
                    let v = y as f64 / (gh.saturating_sub(1)).max(1) as f64;
                    for (ch, k) in coeffs.iter().enumerate() {
                        let value = match ch {
                            0 => s * u,
                            1 => s * v,
                            _ => k[0] + k[1] * u + k[2] * v + k[3] * u * v,
                        };
                        data.push(value);
                    }
                }
            }
            CameraView {
                intrinsics: [[400.0, 0.0, 320.0], [0.0, 400.0, 240.0], [0.0, 0.0, 1.0]],
                extrinsics: look_at_extrinsics(eye, [0.0, 0.0, 1.0]),
                feature_grid: FeatureGrid {
                    height: gh,
                    width: gw,
                    channels: gc,
                    data,
                },
            }
        })
        .collect()
}

struct Schedule {
    phase: Vec<usize>,
    action: Vec<usize>,
    end_of_phase: Vec<bool>,
    end_of_segment: Vec<bool>,
    progress: Vec<f64>,
    phase_countdown: Vec<usize>,
    action_countdown: Vec<usize>,
}

fn build_schedule(config: &SynthConfig, rng: &mut RngStream, frames: usize) -> Schedule {
    let durations: Vec<usize> = config
        .phases
        .iter()
        .map(|p| {
            let (lo, hi) = p.duration_range;
            lo + rng.range_usize(hi - lo + 1)
        })
        .collect();
    let mut schedule = Schedule {
        phase: Vec::new(),
        action: Vec::new(),
        end_of_phase: Vec::new(),
        end_of_segment: Vec::new(),
        progress: Vec::new(),
        phase_countdown: Vec::new(),
        action_countdown: Vec::new(),
    };
    'outer: loop {
        for (p, spec) in config.phases.iter().enumerate() {
            let duration = durations[p];
            for step in 0..duration {
                let cycle_idx = (step / spec.segment_len) % spec.action_cycle.len();
                let action_name = &spec.action_cycle[cycle_idx];
                let action = config
                    .actions
                    .iter()
                    .position(|a| a == action_name)
                    .expect("validated action");
                schedule.phase.push(p);
                schedule.action.push(action);
                schedule.progress.push((step + 1) as f64 / duration as f64);
                if schedule.phase.len() >= frames {
                    break 'outer;
                }
            }
        }
    }
    // boundary flags announce an actual upcoming change, and countdown
    // ramps (frames until the next change, clipped) position that change
    // precisely even through window-level mean pooling
    let len = schedule.phase.len();
    const COUNTDOWN_CLIP: usize = 8;
    for t in 0..len {
        let next = (t + 1).min(len - 1);
        schedule.end_of_phase.push(schedule.phase[next] != schedule.phase[t]);
        schedule
            .end_of_segment
            .push(schedule.action[next] != schedule.action[t]);
        let until = |changed: &dyn Fn(usize) -> bool| -> usize {
            for ahead in 1..=COUNTDOWN_CLIP {
                let idx = t + ahead;
                if idx >= len {
                    break;
                }
                if changed(idx) {
                    return ahead;
                }
            }
            COUNTDOWN_CLIP
        };
        let phase_t = schedule.phase[t];
        let action_t = schedule.action[t];
        schedule
            .phase_countdown
            .push(until(&|i| schedule.phase[i] != phase_t));
        schedule
            .action_countdown
            .push(until(&|i| schedule.action[i] != action_t));
    }
    schedule
}

/// Generates one episode as a pure function of the config and episode index.
/// Labels are recorded from generator state: the action of the frame after
/// each window, the phase and breach rule at each window's last frame, and
/// the relation rules applied to the generated geometry.
pub fn generate_episode(
    config: &SynthConfig,
    build: &BuildConfig,
    episode_index: u64,
) -> Result<Episode, SynthError> {
    config.validate(build.window_t)?;
    build
        .validate()
        .map_err(|e| SynthError::InvalidConfig(e.to_string()))?;

    let global = RngStream::new(config.seed);
    // cluster centroids are shared across episodes so classes stay learnable
    let mut centroid_rng = global.derive(1);
    let sep = config.cluster_separation;
    // evidence cells are few among many rank-0 cells, so their channels get
    // extra gain to survive mean pooling
    let evidence_gain = 3.5;
    let p_count = config.phases.len();
    let a_count = config.actions.len();
    let log_cluster_dim = config.robot_log_dim - 6;
    let ev_sep = sep * evidence_gain;
    let phase_centroids: Vec<Vec<f64>> = (0..p_count)
        .map(|_| unit_centroid(&mut centroid_rng, log_cluster_dim, ev_sep))
        .collect();
    let action_centroids: Vec<Vec<f64>> = (0..a_count)
        .map(|_| unit_centroid(&mut centroid_rng, config.audio_dim, ev_sep))
        .collect();
    let pair_centroids: Vec<Vec<f64>> = (0..p_count * a_count)
        .map(|_| unit_centroid(&mut centroid_rng, config.screen_dim, ev_sep))
        .collect();

    let episode_rng = global.derive(1000 + episode_index);
    let mut duration_rng = episode_rng.derive(0);
    let mut motion_rng = episode_rng.derive(1);
    let mut noise_rng = episode_rng.derive(2);
    let mut camera_rng = episode_rng.derive(3);
    let mut script_rng = episode_rng.derive(4);

    let total_frames: usize = {
        let mut probe = episode_rng.derive(0);
        config
            .phases
            .iter()
            .map(|p| {
                let (lo, hi) = p.duration_range;
                lo + probe.range_usize(hi - lo + 1)
            })
            .sum()
    };
    // one extra internal frame so the last window has a next action
    let schedule = build_schedule(config, &mut duration_rng, total_frames + 1);

    let cameras = make_cameras(config, &mut camera_rng);
    let joint_names = build.joint_names();

    let mut entities: Vec<GenEntity> = Vec::new();
    let mut next_id = 1u32;
    for &role in &config.humans {
        let (anchor, radius, speed) = human_home(role);
        entities.push(GenEntity {
            entity_id: EntityId(next_id),
            matcher: EntityMatcher::Role(role),
            base: anchor,
            waypoint: anchor,
            speed,
            anchor,
            radius,
        });
        next_id += 1;
    }
    for &class in &config.objects {
        let (anchor, _, radius, speed) = object_home(class);
        entities.push(GenEntity {
            entity_id: EntityId(next_id),
            matcher: EntityMatcher::Class(class),
            base: anchor,
            waypoint: anchor,
            speed,
            anchor,
            radius,
        });
        next_id += 1;
    }

    // scripted breach windows: (start, end) frame ranges
    let breacher = entities
        .iter()
        .position(|e| matches!(e.matcher, EntityMatcher::Role(r) if build.nonsterile_roles.contains(&r)));
    let target = entities
        .iter()
        .position(|e| matches!(e.matcher, EntityMatcher::Role(r) if build.sterile_roles.contains(&r)));
    let mut breach_windows: Vec<(usize, usize)> = Vec::new();
    if let (Some(_), Some(_)) = (breacher, target) {
        for _ in 0..config.breach_events {
            if total_frames <= config.breach_hold + 2 {
                break;
            }
            let start = 1 + script_rng.range_usize(total_frames - config.breach_hold - 1);
            breach_windows.push((start, start + config.breach_hold));
        }
        breach_windows.sort_unstable();
    }

    let mut frames: Vec<SceneFrame> = Vec::with_capacity(total_frames);
    let mut frame_relations: Vec<BTreeSet<(EntityId, usize, EntityId)>> = Vec::new();
    let mut frame_breach: Vec<bool> = Vec::new();
    let predicates = config.predicate_names();

    for t in 0..total_frames {
        let in_breach = breach_windows.iter().any(|&(s, e)| t >= s && t < e);
        // advance motion
        let target_anchor = target.map(|ti| entities[ti].base);
        for (i, entity) in entities.iter_mut().enumerate() {
            let scripted = in_breach && Some(i) == breacher;
            let goal = if scripted {
                let anchor = target_anchor.unwrap_or(entity.anchor);
                [anchor[0] + 0.12, anchor[1] + 0.1, anchor[2]]
            } else {
                entity.waypoint
            };
            let d = crate::scene::dist3(entity.base, goal);
            let step = if scripted { 1.2 } else { entity.speed };
            if d <= step {
                entity.base = goal;
                if !scripted && entity.radius > 0.0 {
                    entity.waypoint = clamp_room(
                        [
                            entity.anchor[0] + motion_rng.range(-entity.radius, entity.radius),
                            entity.anchor[1] + motion_rng.range(-entity.radius, entity.radius),
                            entity.anchor[2],
                        ],
                        config.room_bounds,
                    );
                }
            } else {
                let f = step / d;
                for (b, g) in entity.base.iter_mut().zip(&goal) {
                    *b += (g - *b) * f;
                }
            }
            entity.base = clamp_room(entity.base, config.room_bounds);
        }

        // materialize the frame
        let mut humans = Vec::new();
        let mut objects = Vec::new();
        for entity in &entities {
            match entity.matcher {
                EntityMatcher::Role(role) => {
                    let joints = joint_names
                        .iter()
                        .map(|name| {
                            let offset = joint_offset(name);
                            let jitter = [
                                motion_rng.normal() * config.motion_noise_sigma,
                                motion_rng.normal() * config.motion_noise_sigma,
                                motion_rng.normal() * config.motion_noise_sigma,
                            ];
                            let position = clamp_room(
                                [
                                    entity.base[0] + offset[0] + jitter[0],
                                    entity.base[1] + offset[1] + jitter[1],
                                    entity.base[2] + offset[2] + jitter[2],
                                ],
                                config.room_bounds,
                            );
                            let mut semantic = Vec::with_capacity(joint_names.len() + 8);
                            for n in &joint_names {
                                semantic.push(if n == name { sep } else { 0.0 });
                            }
                            for r in Role::ALL {
                                semantic.push(if r == role { sep } else { 0.0 });
                            }
                            let norm = normalized_room(position, config.room_bounds);
                            semantic.extend(norm.iter().map(|x| x * sep));
                            JointObs {
                                name: name.clone(),
                                position,
                                semantic_feature: semantic,
                            }
                        })
                        .collect();
                    humans.push(HumanObs {
                        entity_id: entity.entity_id,
                        role,
                        joints,
                    });
                }
                EntityMatcher::Class(class) => {
                    let (_, extent, _, _) = object_home(class);
                    let center = entity.base;
                    let mut feature = Vec::with_capacity(ObjectClass::ALL.len() + 3);
                    for c in ObjectClass::ALL {
                        feature.push(if c == class { sep } else { 0.0 });
                    }
                    let norm = normalized_room(center, config.room_bounds);
                    feature.extend(norm.iter().map(|x| x * sep));
                    objects.push(ObjectObs {
                        entity_id: entity.entity_id,
                        class,
                        center,
                        extent,
                        feature,
                    });
                }
            }
        }

        // evidence features from phase/action clusters plus boundary flags
        let p = schedule.phase[t];
        let a = schedule.action[t];
        let noisy = |centroid: &[f64], rng: &mut RngStream, sigma: f64| -> Vec<f64> {
            centroid
                .iter()
                .map(|c| c + rng.normal() * sigma)
                .collect()
        };
        let mut robot_log = noisy(&phase_centroids[p], &mut noise_rng, config.feature_noise_sigma);
        robot_log.push(if schedule.end_of_phase[t] { ev_sep } else { 0.0 });
        robot_log.push(if schedule.end_of_segment[t] { ev_sep } else { 0.0 });
        robot_log.push(schedule.progress[t] * ev_sep);
        robot_log.push(schedule.phase_countdown[t] as f64 / 8.0 * ev_sep);
        robot_log.push(schedule.action_countdown[t] as f64 / 8.0 * ev_sep);
        robot_log.push(noise_rng.normal() * config.feature_noise_sigma);
        let audio = noisy(&action_centroids[a], &mut noise_rng, config.feature_noise_sigma);
        let screen = noisy(
            &pair_centroids[p * a_count + a],
            &mut noise_rng,
            config.feature_noise_sigma,
        );

        let frame = SceneFrame {
            timestamp: t as f64,
            humans,
            objects,
            evidence: EvidenceObs {
                robot_log: Some(robot_log),
                audio: Some(audio),
                screen: Some(screen),
            },
            cameras: cameras.clone(),
        };

        frame_breach.push(crate::tasks::detect_breach_in_frame(&frame, build).breach);
        frame_relations.push(frame_relation_set(
            &frame,
            &config.phases[p].name,
            config,
            build,
            &predicates,
        ));
        frames.push(frame);
    }

    let window = build.window_t;
    let mut labels = Vec::new();
    for start in 0..=(total_frames - window) {
        let last = start + window - 1;
        labels.push(TaskLabels {
            next_action: schedule.action[last + 1],
            robot_phase: schedule.phase[last],
            breach: frame_breach[last],
            relations: frame_relations[last].clone(),
        });
    }

    Ok(Episode {
        index: episode_index,
        frames,
        labels,
        frame_phases: schedule.phase[..total_frames].to_vec(),
        frame_actions: schedule.action[..total_frames].to_vec(),
    })
}

/// The generator's relation oracle for one frame: scripted semantic rules
/// first (ordered pairs), then the builder's own proximity rule as
/// "close_to", both directions.
pub fn frame_relation_set(
    frame: &SceneFrame,
    phase_name: &str,
    config: &SynthConfig,
    build: &BuildConfig,
    predicates: &[String],
) -> BTreeSet<(EntityId, usize, EntityId)> {
    let mut points: Vec<(EntityId, EntityMatcher, EntityPoints)> = Vec::new();
    for h in &frame.humans {
        points.push((
            h.entity_id,
            EntityMatcher::Role(h.role),
            EntityPoints::from_human(h),
        ));
    }
    for o in &frame.objects {
        points.push((
            o.entity_id,
            EntityMatcher::Class(o.class),
            EntityPoints::from_object(o),
        ));
    }
    let predicate_index = |name: &str| predicates.iter().position(|p| p == name);
    let close_to = predicate_index("close_to").unwrap_or(1);
    let mut out = BTreeSet::new();
    for (sid, sm, sp) in &points {
        for (oid, om, op) in &points {
            if sid == oid {
                continue;
            }
            let mut predicate = None;
            for rule in &config.relation_rules {
                if rule.subject == *sm
                    && rule.object == *om
                    && rule.phases.iter().any(|p| p == phase_name)
                {
                    predicate = predicate_index(&rule.predicate);
                    break;
                }
            }
            if predicate.is_none() {
                if let Ok(d) = entity_distance(sp, op) {
                    if d < build.tau_prox {
                        predicate = Some(close_to);
                    }
                }
            }
            if let Some(p) = predicate {
                if p != 0 {
                    out.insert((*sid, p, *oid));
                }
            }
        }
    }
    out
}

/// Recomputes every label from the stored frames and compares; returns the
/// first inconsistency. The generator's labels are constructed this way, so
/// this can only fail if frames or labels were edited.
pub fn verify_episode_labels(
    episode: &Episode,
    config: &SynthConfig,
    build: &BuildConfig,
) -> Result<(), String> {
    let predicates = config.predicate_names();
    let window = build.window_t;
    if episode.labels.len() + window != episode.frames.len() + 1 {
        return Err(format!(
            "label count {} does not match frames {} and window {}",
            episode.labels.len(),
            episode.frames.len(),
            window
        ));
    }
    for (w, label) in episode.labels.iter().enumerate() {
        let last = w + window - 1;
        let frame = &episode.frames[last];
        let breach = crate::tasks::detect_breach_in_frame(frame, build).breach;
        if breach != label.breach {
            return Err(format!("window {} breach label mismatch", w));
        }
        let phase_name = &config.phases[episode.frame_phases[last]].name;
        let relations = frame_relation_set(frame, phase_name, config, build, &predicates);
        if relations != label.relations {
            return Err(format!("window {} relation label mismatch", w));
        }
        if label.robot_phase != episode.frame_phases[last] {
            return Err(format!("window {} phase label mismatch", w));
        }
    }
    Ok(())
}

/// Episode-level split indices, deterministic under the seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Disjoint episode-level split. Val and test sizes are floored; the
/// remainder goes to train.
pub fn split_dataset(
    episode_count: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<SplitIndices, SynthError> {
    let (tr, va, te) = ratios;
    if tr < 0.0 || va < 0.0 || te < 0.0 || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(SynthError::BadRatios(tr, va, te));
    }
    let mut order: Vec<usize> = (0..episode_count).collect();
    RngStream::new(seed).derive(7).shuffle(&mut order);
    let n_val = (va * episode_count as f64).floor() as usize;
    let n_test = (te * episode_count as f64).floor() as usize;
    let n_train = episode_count - n_val - n_test;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitIndices { train, val, test })
}
