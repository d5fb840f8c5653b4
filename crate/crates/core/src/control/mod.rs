//! Follow-ahead planners.
//!
//! A differential-drive robot tries to stay in front of a walking human.
//! The stage cost rewards poses that are close and inside the human's
//! forward view; an occupancy check adds a collision term. [`plan_dp`]
//! minimizes the summed cost over a forecast horizon by value iteration
//! on a discretized (x, y, θ) lattice; [`plan_greedy_ekf`] is the myopic
//! baseline that chases a constant-velocity extrapolation one step at a
//! time; [`plan_oracle`] is the planner fed the true future.

mod dp;
mod ekf;

pub use dp::{exhaustive_plan_cost, plan_dp, plan_oracle, Lattice, ValueTable};
pub use ekf::{plan_greedy_ekf, Ekf, GreedyParams};

use crate::geo::{normalize_angle, Vec2};
use crate::grid::{is_collision, OccupancyGrid};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("start state is in collision")]
    InfeasibleStart,
    #[error("no collision-free plan exists from the start state")]
    NoFeasiblePlan,
    #[error("numeric failure: {0}")]
    NumericError(String),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed plan record: {0}")]
    Format(String),
}

/// Planar robot pose; `theta` is kept normalized to (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        RobotState { x, y, theta: normalize_angle(theta) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// One velocity command: linear (m/s) and angular (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub v: f64,
    pub omega: f64,
}

impl ControlInput {
    pub const STOP: ControlInput = ControlInput { v: 0.0, omega: 0.0 };

    pub fn new(v: f64, omega: f64) -> Self {
        ControlInput { v, omega }
    }
}

/// The stop action first, then slow and fast arcs; planners break cost
/// ties by the lowest index, so gentler commands win.
pub fn default_actions() -> Vec<ControlInput> {
    let mut actions = Vec::new();
    for v in [0.0, 0.4, 0.8] {
        for omega in [0.0, -1.0, 1.0] {
            actions.push(ControlInput::new(v, omega));
        }
    }
    actions
}

/// One forecast step: where the human is and which way they face.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanPose {
    pub position: Vec2,
    pub heading: f64,
}

impl HumanPose {
    pub fn new(position: Vec2, heading: f64) -> Self {
        HumanPose { position, heading }
    }
}

/// Forward-Euler unicycle step: the pose advances along the current
/// heading, then the heading turns.
pub fn step(y: RobotState, u: ControlInput, dt: f64) -> RobotState {
    RobotState::new(
        y.x + u.v * y.theta.cos() * dt,
        y.y + u.v * y.theta.sin() * dt,
        y.theta + u.omega * dt,
    )
}

/// Which angle plays the role of γ in the viewing cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaConvention {
    /// Angle between the human's heading and the human→robot bearing;
    /// a robot directly ahead scores γ = 0.
    HeadingToBearing,
    /// Angle between the robot's rear-camera axis (θ + π) and the human's
    /// heading, reading the cost formula literally. The ideal in-front
    /// pose then has cos γ = −1 and is clamped; kept selectable for
    /// comparison only.
    FocalToHeading,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewParams {
    /// Lower clamp on cos γ; poses outside the view cone pay `d / eps`.
    pub eps: f64,
    /// Extra penalty added whenever the clamp engages (the human cannot
    /// see the robot at all).
    pub kappa: f64,
    pub convention: GammaConvention,
}

impl Default for ViewParams {
    fn default() -> Self {
        ViewParams { eps: 0.1, kappa: 50.0, convention: GammaConvention::HeadingToBearing }
    }
}

/// Distance-over-visibility cost: `d / max(cos γ, eps)`, plus `kappa`
/// when the clamp engages. Zero when co-located.
pub fn view_cost(robot: &RobotState, human: &HumanPose, p: &ViewParams) -> f64 {
    let offset = robot.position().sub(human.position);
    let d = offset.norm();
    if d == 0.0 {
        return 0.0;
    }
    let gamma = match p.convention {
        GammaConvention::HeadingToBearing => normalize_angle(offset.angle() - human.heading),
        GammaConvention::FocalToHeading => {
            normalize_angle(robot.theta + std::f64::consts::PI - human.heading)
        }
    };
    let c = gamma.cos();
    if c < p.eps {
        d / p.eps + p.kappa
    } else {
        d / c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    /// Lattice cell edge for x and y, meters.
    pub lattice_res: f64,
    /// Number of heading bins.
    pub headings: usize,
    pub actions: Vec<ControlInput>,
    /// Step duration, seconds.
    pub dt: f64,
    /// Weight on the collision indicator; infinity makes occupied states
    /// absorbing.
    pub lambda_col: f64,
    /// Robot radius used for the collision check, meters.
    pub inflation: f64,
    pub view: ViewParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            lattice_res: 0.25,
            headings: 16,
            actions: default_actions(),
            dt: 0.2,
            lambda_col: f64::INFINITY,
            inflation: 0.3,
            view: ViewParams::default(),
        }
    }
}

/// Viewing cost plus the weighted collision indicator.
pub fn stage_cost(
    robot: &RobotState,
    human: &HumanPose,
    grid: &OccupancyGrid,
    p: &PlannerParams,
) -> f64 {
    let view = view_cost(robot, human, &p.view);
    if is_collision(grid, robot.position(), p.inflation) {
        view + p.lambda_col
    } else {
        view
    }
}

/// A finished plan: one control and one (lattice) state per forecast
/// step, with the per-step costs the planner saw.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlPlan {
    pub controls: Vec<ControlInput>,
    pub trace: Vec<RobotState>,
    pub stage_costs: Vec<f64>,
    /// Cost-to-go at the start state; the sum of `stage_costs` up to
    /// floating-point association.
    pub total_cost: f64,
}

/// One exported plan step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub t: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub stage_cost: f64,
}

impl ControlPlan {
    pub fn records(&self) -> Vec<PlanRecord> {
        self.controls
            .iter()
            .zip(&self.trace)
            .zip(&self.stage_costs)
            .enumerate()
            .map(|(i, ((u, s), &c))| PlanRecord {
                t: i + 1,
                x: s.x,
                y: s.y,
                theta: s.theta,
                v: u.v,
                omega: u.omega,
                stage_cost: c,
            })
            .collect()
    }
}

/// Write a plan as one JSON record per line.
pub fn write_plan(plan: &ControlPlan, mut w: impl std::io::Write) -> Result<(), ControlError> {
    for record in plan.records() {
        let line = serde_json::to_string(&record)
            .map_err(|e| ControlError::Format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_plan(r: impl std::io::BufRead) -> Result<Vec<PlanRecord>, ControlError> {
    let mut records = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str(&line).map_err(|e| ControlError::Format(e.to_string()))?,
        );
    }
    Ok(records)
}
