//! Scripted skeleton walkers: the hip follows a waypoint polyline at a
//! speed profile while limbs swing sinusoidally with travelled distance,
//! so gait stays consistent when the speed varies. Crab mode faces the
//! body perpendicular to the motion direction; everything else faces
//! along it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::maps::MapSpec;
use super::SimError;
use crate::encode::{SkeletonFrame, HIP, JOINT_COUNT};
use crate::geo::{normalize_angle, Vec2};
use crate::grid::OccupancyGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionStyle {
    Walk,
    Crab,
    VariableSpeed,
}

impl MotionStyle {
    pub fn parse(s: &str) -> Option<MotionStyle> {
        match s {
            "walk" => Some(MotionStyle::Walk),
            "crab" => Some(MotionStyle::Crab),
            "variable-speed" | "variable" => Some(MotionStyle::VariableSpeed),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MotionStyle::Walk => "walk",
            MotionStyle::Crab => "crab",
            MotionStyle::VariableSpeed => "variable-speed",
        }
    }
}

/// One walker episode: a map, the polyline to follow, and how to move
/// along it. The walker holds its final pose once the route is done.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub map: OccupancyGrid,
    pub waypoints: Vec<Vec2>,
    /// Base hip speed, m/s.
    pub speed: f64,
    pub style: MotionStyle,
    /// Episode length, seconds.
    pub duration: f64,
    pub seed: u64,
}

const HIP_Z: f64 = 0.92;
/// Distance covered by one full gait cycle, meters.
const STRIDE_M: f64 = 0.7;
/// Variable-speed profile: v(t) = speed · (1 + DEPTH·sin(OMEGA·t)).
const VAR_DEPTH: f64 = 0.4;
const VAR_OMEGA: f64 = std::f64::consts::TAU / 5.0;

impl Scenario {
    pub fn new(
        map: OccupancyGrid,
        waypoints: Vec<Vec2>,
        speed: f64,
        style: MotionStyle,
        duration: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        if waypoints.is_empty() {
            return Err(SimError::InvalidArgument("scenario needs at least one waypoint".into()));
        }
        if let Some(p) = waypoints.iter().find(|p| map.occupancy_at(**p) > 0.5) {
            return Err(SimError::InvalidArgument(format!(
                "waypoint ({:.2}, {:.2}) is not in free space",
                p.x, p.y
            )));
        }
        if !(speed.is_finite() && speed > 0.0 && speed <= 2.0) {
            return Err(SimError::InvalidArgument("speed must be in (0, 2] m/s".into()));
        }
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(SimError::InvalidArgument("duration must be non-negative".into()));
        }
        Ok(Scenario { map, waypoints, speed, style, duration, seed })
    }

    pub fn path_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[1].sub(w[0]).norm()).sum()
    }
}

/// Build a seeded scenario on a generated world: the route comes from the
/// map generator and the base speed is drawn from [0.4, 0.75) m/s. The
/// duration is sized so the walker just finishes the route.
pub fn sample_scenario(
    spec: &MapSpec,
    style: MotionStyle,
    seed: u64,
) -> Result<Scenario, SimError> {
    let world = super::maps::build_world(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77616c6b);
    let speed = 0.4 + 0.35 * rng.random::<f64>();
    let length: f64 = world.route.windows(2).map(|w| w[1].sub(w[0]).norm()).sum();
    Scenario::new(world.grid, world.route, speed, style, length / speed, seed)
}

/// Distance travelled along the route after `t` seconds.
fn travelled(sc: &Scenario, t: f64) -> f64 {
    match sc.style {
        MotionStyle::VariableSpeed => {
            sc.speed * (t + VAR_DEPTH * (1.0 - (VAR_OMEGA * t).cos()) / VAR_OMEGA)
        }
        _ => sc.speed * t,
    }
}

/// Instantaneous profile speed at `t` (the derivative of [`travelled`]).
pub fn profile_speed(sc: &Scenario, t: f64) -> f64 {
    match sc.style {
        MotionStyle::VariableSpeed => sc.speed * (1.0 + VAR_DEPTH * (VAR_OMEGA * t).sin()),
        _ => sc.speed,
    }
}

/// Point and unit direction at arc length `s` along the polyline; past
/// the end the walker parks at the last waypoint keeping its direction.
fn point_along(wps: &[Vec2], s: f64) -> (Vec2, Vec2) {
    let mut dir = Vec2::new(1.0, 0.0);
    let mut rem = s.max(0.0);
    for w in wps.windows(2) {
        let seg = w[1].sub(w[0]);
        let len = seg.norm();
        if len <= 1e-12 {
            continue;
        }
        dir = seg.scale(1.0 / len);
        if rem <= len {
            return (w[0].add(dir.scale(rem)), dir);
        }
        rem -= len;
    }
    (*wps.last().unwrap(), dir)
}

/// The walker's full skeleton at time `t`.
pub fn walk(sc: &Scenario, t: f64) -> Result<SkeletonFrame, SimError> {
    if !t.is_finite() || t < 0.0 || t > sc.duration {
        return Err(SimError::InvalidArgument(format!(
            "time {t} outside episode [0, {}]",
            sc.duration
        )));
    }
    // Clamp to the route length so a parked walker also freezes its gait.
    let s = travelled(sc, t).min(sc.path_length());
    let (hip, dir) = point_along(&sc.waypoints, s);
    let motion = dir.angle();
    let heading = match sc.style {
        MotionStyle::Crab => normalize_angle(motion + std::f64::consts::FRAC_PI_2),
        _ => motion,
    };
    let phase = std::f64::consts::TAU * s / STRIDE_M;
    let joints = skeleton_joints(hip, heading, motion, phase);
    debug_assert_eq!(joints.len(), JOINT_COUNT);
    debug_assert!(sc.map.occupancy_at(Vec2::new(joints[HIP][0], joints[HIP][1])) <= 0.5);
    Ok(SkeletonFrame { t, heading, joints })
}

/// Fixed-amplitude gait: legs and (counter-swinging) arms oscillate along
/// the motion direction, shoulders span perpendicular to the heading.
/// Offsets keep every joint well within 1 m of the hip.
fn skeleton_joints(hip: Vec2, heading: f64, motion: f64, phase: f64) -> Vec<[f64; 3]> {
    let fwd = Vec2::unit(motion);
    let lat = Vec2::unit(heading + std::f64::consts::FRAC_PI_2);
    let leg = 0.30 * phase.sin();
    let arm = 0.22 * (phase + std::f64::consts::PI).sin();
    let at = |f: f64, l: f64, z: f64| {
        let p = hip.add(fwd.scale(f)).add(lat.scale(l));
        [p.x, p.y, z]
    };
    vec![
        at(0.0, 0.0, HIP_Z),
        at(0.0, 0.0, HIP_Z + 0.28),           // spine
        at(0.0, 0.0, HIP_Z + 0.62),           // head
        at(0.0, 0.20, HIP_Z + 0.50),          // l_shoulder
        at(0.6 * arm, 0.24, HIP_Z + 0.22),    // l_elbow
        at(arm, 0.26, HIP_Z - 0.02),          // l_wrist
        at(0.0, -0.20, HIP_Z + 0.50),         // r_shoulder
        at(-0.6 * arm, -0.24, HIP_Z + 0.22),  // r_elbow
        at(-arm, -0.26, HIP_Z - 0.02),        // r_wrist
        at(0.5 * leg, 0.10, HIP_Z - 0.45),    // l_knee
        at(leg, 0.11, HIP_Z - 0.84),          // l_ankle
        at(-0.5 * leg, -0.10, HIP_Z - 0.45),  // r_knee
        at(-leg, -0.11, HIP_Z - 0.84),        // r_ankle
    ]
}
