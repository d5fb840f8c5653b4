//! Sliding-window training samples cut from walker episodes.
//!
//! Every window is expressed in the actor frame of its last observed
//! step: the path sample gets a local occupancy window plus flat history
//! and future positions, the pose sample gets hip-relative joint frames
//! and the hip track to re-anchor them. The map the network *sees* can be
//! the true local window, a camera-cone masked version of it, or fully
//! unknown; the ground-truth obstacle window always rides along for the
//! collision penalty.

use serde::{Deserialize, Serialize};

use super::walker::Scenario;
use super::{walk, SimError};
use crate::encode::{
    encode_trajectory_binary, to_local_pose, to_trajectory, SkeletonFrame, HIP,
};
use crate::grid::{extract_local_map, mask_to_fov, OccupancyGrid, OCC_UNKNOWN};
use crate::pathnet::PathSample;
use crate::posenet::PoseSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    /// The local window as extracted from the true map.
    Full,
    /// Only what the subject's forward camera cone can see; the rest is
    /// unknown.
    Partial,
    /// No map knowledge at all.
    Unknown,
}

impl Visibility {
    pub fn parse(s: &str) -> Option<Visibility> {
        match s {
            "full" => Some(Visibility::Full),
            "partial" => Some(Visibility::Partial),
            "unknown" => Some(Visibility::Unknown),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Visibility::Full => "full",
            Visibility::Partial => "partial",
            Visibility::Unknown => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetConfig {
    /// Observed steps per window.
    pub history_len: usize,
    /// Future steps per window.
    pub horizon: usize,
    /// Sampling rate of the windows, Hz.
    pub rate_hz: f64,
    pub visibility: Visibility,
    /// Local map edge, cells (square window).
    pub map_cells: usize,
    /// Local map resolution, m/cell.
    pub map_resolution: f64,
    /// Camera cone for `Partial` visibility, radians.
    pub camera_fov: f64,
    /// Camera range for `Partial` visibility, meters.
    pub camera_range: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            history_len: 15,
            horizon: 45,
            rate_hz: 15.0,
            visibility: Visibility::Full,
            map_cells: 40,
            map_resolution: 0.125,
            camera_fov: super::CAMERA_FOV_RAD,
            camera_range: super::CAMERA_RANGE_M,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.history_len == 0 || self.horizon == 0 {
            return Err(SimError::InvalidArgument("window lengths must be positive".into()));
        }
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(SimError::InvalidArgument("sample rate must be positive".into()));
        }
        if self.map_cells < 2 || !(self.map_resolution > 0.0) {
            return Err(SimError::InvalidArgument("local map shape is degenerate".into()));
        }
        if !(self.camera_fov > 0.0 && self.camera_fov <= std::f64::consts::TAU)
            || !(self.camera_range > 0.0)
        {
            return Err(SimError::InvalidArgument("camera cone is degenerate".into()));
        }
        Ok(())
    }
}

/// One training window: the trajectory view and the pose view of the same
/// slice of an episode.
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub path: PathSample,
    pub pose: PoseSample,
}

/// Number of frames an episode of `duration` yields at `rate`: ⌊d·r⌋,
/// with sub-nanosecond float dust absorbed so an episode sized exactly
/// (N+T)/rate produces exactly N+T frames.
pub fn frame_count(duration: f64, rate_hz: f64) -> usize {
    let n = duration * rate_hz;
    let f = if (n.round() - n).abs() < 1e-9 { n.round() } else { n.floor() };
    f.max(0.0) as usize
}

/// Sample the walker at `k / rate` for every frame of the episode.
pub fn episode_frames(sc: &Scenario, rate_hz: f64) -> Result<Vec<SkeletonFrame>, SimError> {
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(SimError::InvalidArgument("sample rate must be positive".into()));
    }
    (0..frame_count(sc.duration, rate_hz))
        .map(|k| walk(sc, k as f64 / rate_hz))
        .collect()
}

/// Cut every full-length window out of one episode. Episodes shorter than
/// one window yield no samples.
pub fn windows(
    frames: &[SkeletonFrame],
    map: &OccupancyGrid,
    cfg: &DatasetConfig,
) -> Result<Vec<WindowSample>, SimError> {
    cfg.validate()?;
    let (n, t) = (cfg.history_len, cfg.horizon);
    if frames.len() < n + t {
        return Ok(Vec::new());
    }
    let half = cfg.map_cells as f64 * cfg.map_resolution / 2.0;
    let mut out = Vec::with_capacity(frames.len() - (n + t) + 1);
    for k0 in 0..=frames.len() - (n + t) {
        let hist = &frames[k0..k0 + n];
        let fut = &frames[k0 + n..k0 + n + t];
        let anchor = hist[n - 1].actor_frame();

        let obstacle_map = extract_local_map(map, &anchor, half, half, cfg.map_resolution)?;
        let input_map = match cfg.visibility {
            Visibility::Full => obstacle_map.clone(),
            Visibility::Partial => mask_to_fov(&obstacle_map, cfg.camera_fov, cfg.camera_range)?,
            Visibility::Unknown => OccupancyGrid::filled(*obstacle_map.geo(), OCC_UNKNOWN),
        };

        let history = to_trajectory(hist, &anchor);
        let future = to_trajectory(fut, &anchor);
        let future_maps = encode_trajectory_binary(&future, *obstacle_map.geo());
        let path = PathSample { input_map, obstacle_map, history, future: future.clone(), future_maps };

        let pose = PoseSample {
            history: hist.iter().map(|f| to_local_pose(f, &anchor)).collect(),
            future_traj: future,
            future_local: fut.iter().map(|f| to_local_pose(f, &anchor)).collect(),
            hip_z: hist[n - 1].joints[HIP][2],
        };
        out.push(WindowSample { path, pose });
    }
    Ok(out)
}

/// All windows of all scenarios, concatenated in scenario order.
pub fn synthesize_dataset(
    scenarios: &[Scenario],
    cfg: &DatasetConfig,
) -> Result<Vec<WindowSample>, SimError> {
    let mut out = Vec::new();
    for sc in scenarios {
        let frames = episode_frames(sc, cfg.rate_hz)?;
        out.extend(windows(&frames, &sc.map, cfg)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Deterministic 3/1/1 split keyed on the scenario seed so all windows of
/// one episode land in the same split.
pub fn split_of(seed: u64) -> Split {
    match seed % 5 {
        0 | 1 | 2 => Split::Train,
        3 => Split::Val,
        _ => Split::Test,
    }
}
