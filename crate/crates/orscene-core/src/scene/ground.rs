use crate::cc::{CellKind, CombinatorialComplex};

use super::{CameraView, SceneError};

/// Fixed parameters of the view-fusion gate: one scalar gate per (cell,
/// camera), g = sigmoid(w . [cell_feature, sampled_feature] + b), with
/// separate weights per geometric cell kind because their feature widths
/// differ.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualGateParams {
    pub channels: usize,
    pub joint_weights: Vec<f64>,
    pub joint_bias: f64,
    pub object_weights: Vec<f64>,
    pub object_bias: f64,
}

impl VisualGateParams {
    /// Small seeded weights; grounding is a fixed featurizer, not trained.
    pub fn seeded(
        channels: usize,
        joint_dim: usize,
        object_dim: usize,
        rng: &mut crate::numerics::RngStream,
    ) -> Self {
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.range(-0.5, 0.5)).collect() };
        VisualGateParams {
            channels,
            joint_weights: draw(joint_dim + channels),
            joint_bias: 0.0,
            object_weights: draw(object_dim + channels),
            object_bias: 0.0,
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Projects a world point into a camera's feature-grid coordinates.
///
/// The grid is taken to span the image plane [0, 2*cx] x [0, 2*cy] (principal
/// point at the center). Returns None for points behind the camera or
/// projecting outside the grid.
pub fn project_to_grid(camera: &CameraView, point: [f64; 3]) -> Option<(f64, f64)> {
    let e = &camera.extrinsics;
    let mut cam = [0.0; 3];
    for (i, c) in cam.iter_mut().enumerate() {
        *c = e[i][0] * point[0] + e[i][1] * point[1] + e[i][2] * point[2] + e[i][3];
    }
    let depth = cam[2];
    if depth <= 1e-9 {
        return None;
    }
    let k = &camera.intrinsics;
    let w = k[2][2] * depth;
    let u = (k[0][0] * cam[0] + k[0][1] * cam[1] + k[0][2] * depth) / w;
    let v = (k[1][1] * cam[1] + k[1][2] * depth) / w;
    let span_u = 2.0 * k[0][2] / k[2][2];
    let span_v = 2.0 * k[1][2] / k[2][2];
    if span_u <= 0.0 || span_v <= 0.0 {
        return None;
    }
    let grid = &camera.feature_grid;
    let gx = u / span_u * (grid.width.saturating_sub(1)) as f64;
    let gy = v / span_v * (grid.height.saturating_sub(1)) as f64;
    let max_x = (grid.width - 1) as f64;
    let max_y = (grid.height - 1) as f64;
    if !(0.0..=max_x).contains(&gx) || !(0.0..=max_y).contains(&gy) {
        return None;
    }
    Some((gx, gy))
}

/// Bilinear sample of all channels at fractional grid coordinates.
fn sample_bilinear(grid: &super::FeatureGrid, gx: f64, gy: f64) -> Vec<f64> {
    let clamp_cell = |g: f64, n: usize| -> (usize, f64) {
        if n <= 1 {
            return (0, 0.0);
        }
        let mut i = g.floor() as usize;
        if i >= n - 1 {
            i = n - 2;
        }
        (i, g - i as f64)
    };
    let (x0, fx) = clamp_cell(gx, grid.width);
    let (y0, fy) = clamp_cell(gy, grid.height);
    let x1 = (x0 + 1).min(grid.width - 1);
    let y1 = (y0 + 1).min(grid.height - 1);
    (0..grid.channels)
        .map(|c| {
            let v00 = grid.at(y0, x0, c);
            let v01 = grid.at(y0, x1, c);
            let v10 = grid.at(y1, x0, c);
            let v11 = grid.at(y1, x1, c);
            let top = v00 * (1.0 - fx) + v01 * fx;
            let bottom = v10 * (1.0 - fx) + v11 * fx;
            top * (1.0 - fy) + bottom * fy
        })
        .collect()
}

/// Grounds every geometric rank-0 cell: projects its position into each
/// camera, bilinearly samples visible feature grids, fuses views with the
/// sigmoid gate, and appends the fused vector (zeros when no view sees the
/// point) to the cell's raw feature. Positions and incidence are untouched.
pub fn ground_visual(
    cc: &mut CombinatorialComplex,
    cameras: &[CameraView],
    gate: &VisualGateParams,
) -> Result<(), SceneError> {
    for (index, cam) in cameras.iter().enumerate() {
        let k = &cam.intrinsics;
        if k[0][0] * k[1][1] * k[2][2] == 0.0 {
            return Err(SceneError::DegenerateCamera { index });
        }
        if cam.feature_grid.channels != gate.channels {
            return Err(SceneError::InvalidFrame(format!(
                "camera {} has {} channels, gate expects {}",
                index, cam.feature_grid.channels, gate.channels
            )));
        }
    }

    let geometric: Vec<crate::cc::CellId> = cc
        .cells()
        .filter(|c| matches!(c.kind, CellKind::Joint | CellKind::Object))
        .map(|c| c.id)
        .collect();

    for id in geometric {
        let (position, feature, weights, bias) = {
            let cell = cc.cell(id).unwrap();
            let (w, b) = match cell.kind {
                CellKind::Joint => (&gate.joint_weights, gate.joint_bias),
                CellKind::Object => (&gate.object_weights, gate.object_bias),
                _ => unreachable!(),
            };
            (cell.position.unwrap(), cell.raw_feature.clone(), w.clone(), b)
        };
        let mut weighted = vec![0.0; gate.channels];
        let mut total_gate = 0.0;
        for cam in cameras {
            let Some((gx, gy)) = project_to_grid(cam, position) else {
                continue;
            };
            let sampled = sample_bilinear(&cam.feature_grid, gx, gy);
            let mut act = bias;
            for (w, h) in weights.iter().zip(feature.iter().chain(sampled.iter())) {
                act += w * h;
            }
            let g = sigmoid(act);
            total_gate += g;
            for (acc, s) in weighted.iter_mut().zip(&sampled) {
                *acc += g * s;
            }
        }
        let fused: Vec<f64> = if total_gate > 0.0 {
            weighted.iter().map(|w| w / total_gate).collect()
        } else {
            vec![0.0; gate.channels]
        };
        cc.cell_mut(id).unwrap().raw_feature.extend_from_slice(&fused);
    }
    Ok(())
}
