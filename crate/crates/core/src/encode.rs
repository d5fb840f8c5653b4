//! Skeleton/trajectory representations and the raster encodings the
//! forecasting networks consume: actor-frame transforms, per-step
//! trajectory heatmaps, and the soft-argmax decoder.

use crate::geo::{MapGeo, Vec2};
use crate::grid::ActorFrame;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use thiserror::Error;

/// Joint order used throughout: hip, spine, head, then left/right arm
/// (shoulder, elbow, wrist) and left/right leg (knee, ankle).
pub const JOINT_COUNT: usize = 13;
pub const HIP: usize = 0;

pub const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "hip",
    "spine",
    "head",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_knee",
    "l_ankle",
    "r_knee",
    "r_ankle",
];

#[derive(Debug, Error)]
pub enum EncodeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("log format error: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// One motion-capture style frame: world-frame joint positions plus the
/// subject's facing direction (which is independent of the velocity
/// direction, e.g. when side-stepping).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SkeletonFrame {
    pub t: f64,
    pub heading: f64,
    pub joints: Vec<[f64; 3]>,
}

impl SkeletonFrame {
    pub fn hip_xy(&self) -> Vec2 {
        Vec2::new(self.joints[HIP][0], self.joints[HIP][1])
    }

    pub fn hip_z(&self) -> f64 {
        self.joints[HIP][2]
    }

    /// Frame anchored at the hip, +x along the subject's facing direction.
    pub fn actor_frame(&self) -> ActorFrame {
        ActorFrame::new(self.hip_xy(), self.heading)
    }
}

/// A recorded episode: fixed-rate skeleton frames over a named map.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub rate_hz: f64,
    pub map_file: Option<String>,
    pub frames: Vec<SkeletonFrame>,
}

/// Hip ground-plane positions expressed in `frame`.
pub fn to_trajectory(frames: &[SkeletonFrame], frame: &ActorFrame) -> Vec<Vec2> {
    frames.iter().map(|f| frame.world_to_local(f.hip_xy())).collect()
}

/// Hip-relative pose rotated into `frame`: joint minus hip, ground-plane
/// components rotated by the frame heading. The hip maps to exactly zero.
pub fn to_local_pose(skel: &SkeletonFrame, frame: &ActorFrame) -> Vec<[f64; 3]> {
    let hip = skel.joints[HIP];
    skel.joints
        .iter()
        .map(|j| {
            let d = Vec2::new(j[0] - hip[0], j[1] - hip[1]).rotated(-frame.heading);
            [d.x, d.y, j[2] - hip[2]]
        })
        .collect()
}

/// Inverse of the hip-relative view: place a local pose at ground-plane
/// position `hip` with the hip at height `hip_z` (same frame, no rotation).
pub fn lift_pose(local: &[[f64; 3]], hip: Vec2, hip_z: f64) -> Vec<[f64; 3]> {
    local
        .iter()
        .map(|j| [j[0] + hip.x, j[1] + hip.y, j[2] + hip_z])
        .collect()
}

/// A stack of per-step heatmaps over a shared raster.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapStack {
    geo: MapGeo,
    horizon: usize,
    values: Vec<f64>,
}

impl HeatmapStack {
    pub fn zeros(geo: MapGeo, horizon: usize) -> Self {
        HeatmapStack { geo, horizon, values: vec![0.0; geo.len() * horizon] }
    }

    pub fn from_values(geo: MapGeo, horizon: usize, values: Vec<f64>) -> Result<Self, EncodeError> {
        if values.len() != geo.len() * horizon {
            return Err(EncodeError::InvalidArgument(format!(
                "value count {} does not match {} slices of {}x{}",
                values.len(),
                horizon,
                geo.width,
                geo.height
            )));
        }
        Ok(HeatmapStack { geo, horizon, values })
    }

    pub fn geo(&self) -> &MapGeo {
        &self.geo
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn slice(&self, t: usize) -> &[f64] {
        let n = self.geo.len();
        &self.values[t * n..(t + 1) * n]
    }

    pub fn slice_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.geo.len();
        &mut self.values[t * n..(t + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Ground-truth encoding: the cell containing each future position is set
/// to one. Positions outside the raster leave their step's slice empty,
/// so every slice has at most one hot cell.
pub fn encode_trajectory_binary(future: &[Vec2], geo: MapGeo) -> HeatmapStack {
    let mut stack = HeatmapStack::zeros(geo, future.len());
    for (t, p) in future.iter().enumerate() {
        if let Some((u, v)) = geo.nearest_cell(*p) {
            stack.slice_mut(t)[geo.index(u, v)] = 1.0;
        }
    }
    stack
}

/// Observation-style encoding: an isotropic Gaussian bump with unit peak
/// centered on each position's continuous pixel coordinates.
pub fn encode_trajectory_gaussian(
    future: &[Vec2],
    geo: MapGeo,
    sigma_px: f64,
) -> Result<HeatmapStack, EncodeError> {
    if !(sigma_px > 0.0) {
        return Err(EncodeError::InvalidArgument("sigma must be positive".into()));
    }
    let mut stack = HeatmapStack::zeros(geo, future.len());
    for (t, p) in future.iter().enumerate() {
        let c = geo.world_to_pixel(*p);
        let slice = stack.slice_mut(t);
        for v in 0..geo.height {
            for u in 0..geo.width {
                let du = u as f64 - c.x;
                let dv = v as f64 - c.y;
                slice[geo.index(u, v)] =
                    (-(du * du + dv * dv) / (2.0 * sigma_px * sigma_px)).exp();
            }
        }
    }
    Ok(stack)
}

/// Differentiable peak decoder: softmax over the map at inverse
/// temperature `beta`, then the expectation of the pixel coordinates.
/// Returns continuous `(u, v)` pixel coordinates.
pub fn soft_argmax(values: &[f64], geo: MapGeo, beta: f64) -> Result<Vec2, EncodeError> {
    if values.len() != geo.len() {
        return Err(EncodeError::InvalidArgument("value count does not match raster".into()));
    }
    if !beta.is_finite() {
        return Err(EncodeError::InvalidArgument("beta must be finite".into()));
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    let mut su = 0.0;
    let mut sv = 0.0;
    for v in 0..geo.height {
        for u in 0..geo.width {
            let w = (beta * (values[geo.index(u, v)] - max)).exp();
            z += w;
            su += w * u as f64;
            sv += w * v as f64;
        }
    }
    Ok(Vec2::new(su / z, sv / z))
}

/// Soft-argmax peak mapped back to the raster's frame.
pub fn soft_argmax_world(values: &[f64], geo: MapGeo, beta: f64) -> Result<Vec2, EncodeError> {
    Ok(geo.pixel_to_world(soft_argmax(values, geo, beta)?))
}

// --- episode log format ------------------------------------------------
//
// JSON lines: a header record then one record per frame.
//
//   {"format":"episode","version":1,"rate_hz":15.0,"joints":13,"map":"a.map"}
//   {"t":0.0,"heading":1.57,"joints":[[x,y,z],...]}

#[derive(Serialize, Deserialize)]
struct EpisodeHeader {
    format: String,
    version: u32,
    rate_hz: f64,
    joints: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    map: Option<String>,
}

pub fn write_episode<W: Write>(log: &EpisodeLog, mut w: W) -> Result<(), EncodeError> {
    let header = EpisodeHeader {
        format: "episode".into(),
        version: 1,
        rate_hz: log.rate_hz,
        joints: JOINT_COUNT,
        map: log.map_file.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header)?)?;
    for f in &log.frames {
        writeln!(w, "{}", serde_json::to_string(f)?)?;
    }
    Ok(())
}

pub fn read_episode<R: BufRead>(r: R) -> Result<EpisodeLog, EncodeError> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| EncodeError::Format("empty episode log".into()))??;
    let header: EpisodeHeader = serde_json::from_str(&first)?;
    if header.format != "episode" || header.version != 1 {
        return Err(EncodeError::Format(format!(
            "unsupported log {}/{}",
            header.format, header.version
        )));
    }
    let mut frames = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: SkeletonFrame = serde_json::from_str(&line)?;
        if frame.joints.len() != header.joints {
            return Err(EncodeError::Format(format!(
                "frame has {} joints, header says {}",
                frame.joints.len(),
                header.joints
            )));
        }
        frames.push(frame);
    }
    Ok(EpisodeLog { rate_hz: header.rate_hz, map_file: header.map, frames })
}
