//! Deterministic 2D world: procedural maps, scripted skeleton walkers,
//! dataset synthesis, closed-loop follow-ahead rollouts and the
//! evaluation metrics for both the forecasts and the controller.

pub mod dataset;
pub mod maps;
pub mod walker;

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{
    plan_dp, plan_greedy_ekf, step, ControlError, ControlInput, Ekf, GreedyParams, HumanPose,
    PlannerParams, RobotState,
};
use crate::encode::{EncodeError, SkeletonFrame};
use crate::geo::{normalize_angle, Vec2};
use crate::grid::{
    extract_local_map, is_collision, mask_to_fov, raycast, ActorFrame, GridError, OccupancyGrid,
    OCC_UNKNOWN,
};
use crate::nn::NnError;
use crate::pathnet::PathNet;

pub use dataset::{
    episode_frames, frame_count, split_of, synthesize_dataset, windows, DatasetConfig, Split,
    Visibility, WindowSample,
};
pub use maps::{build_world, generate_map, MapKind, MapSpec, World};
pub use walker::{sample_scenario, walk, MotionStyle, Scenario};

/// Rear-camera cone used for the tracking metrics and partial-map inputs.
pub const CAMERA_FOV_RAD: f64 = 87.0 * std::f64::consts::PI / 180.0;
pub const CAMERA_RANGE_M: f64 = 6.0;
/// Follow distance at which the area proxy saturates.
pub const IDEAL_DISTANCE_M: f64 = 1.5;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible setup: {0}")]
    Infeasible(String),
    #[error("log format error: {0}")]
    Format(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Net(#[from] NnError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Which controller closes the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    /// Constant-velocity Kalman tracker chasing a lookahead point.
    GreedyEkf,
    /// Receding-horizon value iteration on the network forecast.
    DpForecast,
    /// The same planner fed the true future (upper bound).
    DpOracle,
}

impl ControllerKind {
    pub fn parse(s: &str) -> Option<ControllerKind> {
        match s {
            "greedy-ekf" | "ekf" => Some(ControllerKind::GreedyEkf),
            "dp-forecast" | "dp-pred" => Some(ControllerKind::DpForecast),
            "dp-oracle" | "oracle" => Some(ControllerKind::DpOracle),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::GreedyEkf => "greedy-ekf",
            ControllerKind::DpForecast => "dp-forecast",
            ControllerKind::DpOracle => "dp-oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    /// Control loop rate, Hz; the planner's dt must be its inverse.
    pub control_rate_hz: f64,
    /// Rate at which the human history is observed, Hz. Must be an
    /// integer multiple of the control rate so forecasts thin evenly.
    pub predictor_rate_hz: f64,
    /// Observed history length fed to the forecaster.
    pub history_len: usize,
    /// Forecast steps at predictor rate.
    pub horizon: usize,
    pub planner: PlannerParams,
    pub greedy: GreedyParams,
    /// EKF process / measurement noise.
    pub ekf_q: f64,
    pub ekf_r: f64,
    /// Robot spawn distance in front of the walker, meters.
    pub start_ahead: f64,
    /// Std-dev of Gaussian noise on measured hip positions; 0 = perfect.
    pub noise_std: f64,
    /// Map view handed to the forecaster.
    pub visibility: Visibility,
    /// Local map window fed to the forecaster.
    pub map_cells: usize,
    pub map_resolution: f64,
    pub camera_fov: f64,
    pub camera_range: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            control_rate_hz: 5.0,
            predictor_rate_hz: 15.0,
            history_len: 15,
            horizon: 45,
            planner: PlannerParams::default(),
            greedy: GreedyParams::default(),
            ekf_q: 0.05,
            ekf_r: 0.02,
            start_ahead: 1.2,
            noise_std: 0.0,
            visibility: Visibility::Full,
            map_cells: 40,
            map_resolution: 0.125,
            camera_fov: CAMERA_FOV_RAD,
            camera_range: CAMERA_RANGE_M,
        }
    }
}

impl RolloutConfig {
    /// Predictor steps per control step.
    pub fn stride(&self) -> usize {
        (self.predictor_rate_hz / self.control_rate_hz).round() as usize
    }

    /// Planner horizon in control steps.
    pub fn dp_horizon(&self) -> usize {
        self.horizon / self.stride()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidArgument(m.into()));
        if !(self.control_rate_hz > 0.0 && self.predictor_rate_hz > 0.0) {
            return bad("rates must be positive");
        }
        let ratio = self.predictor_rate_hz / self.control_rate_hz;
        if (ratio.round() - ratio).abs() > 1e-9 || ratio.round() < 1.0 {
            return bad("predictor rate must be an integer multiple of the control rate");
        }
        if self.history_len == 0 || self.horizon < self.stride() {
            return bad("history and horizon must cover at least one control step");
        }
        if (self.planner.dt * self.control_rate_hz - 1.0).abs() > 1e-9
            || (self.greedy.dt * self.control_rate_hz - 1.0).abs() > 1e-9
        {
            return bad("planner step durations must match the control rate");
        }
        if !(self.start_ahead.is_finite() && self.start_ahead >= 0.0)
            || !(self.noise_std.is_finite() && self.noise_std >= 0.0)
        {
            return bad("start offset and noise must be non-negative");
        }
        if !(self.ekf_q > 0.0 && self.ekf_r > 0.0) {
            return bad("EKF noise terms must be positive");
        }
        if self.map_cells < 2 || !(self.map_resolution > 0.0) {
            return bad("forecaster map window is degenerate");
        }
        Ok(())
    }
}

/// One closed-loop step: everything observed and decided at time `t`,
/// with the robot state *before* the control is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStep {
    pub t: f64,
    pub human: SkeletonFrame,
    /// World-frame hip forecast the controller acted on.
    pub forecast: Vec<Vec2>,
    pub robot: RobotState,
    pub control: ControlInput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    /// Control step duration, seconds.
    pub dt: f64,
    pub steps: Vec<RolloutStep>,
}

/// Box–Muller standard normal draw.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Run one closed-loop episode: observe the walker, forecast, plan, apply
/// the first action. `model` is required for [`ControllerKind::DpForecast`]
/// and must match the configured history/horizon/map window.
pub fn rollout(
    sc: &Scenario,
    kind: ControllerKind,
    model: Option<&PathNet>,
    cfg: &RolloutConfig,
) -> Result<RolloutLog, SimError> {
    cfg.validate()?;
    if kind == ControllerKind::DpForecast {
        let m = model.ok_or_else(|| {
            SimError::InvalidArgument("forecast controller needs a trajectory model".into())
        })?;
        if m.config.history_len != cfg.history_len
            || m.config.horizon != cfg.horizon
            || m.config.map_width != cfg.map_cells
            || m.config.map_height != cfg.map_cells
        {
            return Err(SimError::InvalidArgument(
                "model window does not match the rollout configuration".into(),
            ));
        }
    }

    let dt = 1.0 / cfg.control_rate_hz;
    let stride = cfg.stride();
    let t_dp = cfg.dp_horizon();
    let w0 = walk(sc, 0.0)?;
    let spawn = w0.hip_xy().add(Vec2::unit(w0.heading).scale(cfg.start_ahead));
    if is_collision(&sc.map, spawn, cfg.planner.inflation) {
        return Err(SimError::Infeasible(format!(
            "robot spawn ({:.2}, {:.2}) collides",
            spawn.x, spawn.y
        )));
    }
    let mut robot = RobotState::new(spawn.x, spawn.y, w0.heading);

    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed ^ 0x6e6f_6973);
    let mut noisy = |p: Vec2| {
        if cfg.noise_std > 0.0 {
            Vec2::new(p.x + cfg.noise_std * gaussian(&mut rng), p.y + cfg.noise_std * gaussian(&mut rng))
        } else {
            p
        }
    };
    let mut ekf: Option<Ekf> = None;
    let half = cfg.map_cells as f64 * cfg.map_resolution / 2.0;

    let n_steps = frame_count(sc.duration, cfg.control_rate_hz);
    let mut steps = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let frame = walk(sc, t)?;

        let (forecast, control) = match kind {
            ControllerKind::GreedyEkf => {
                let meas = noisy(frame.hip_xy());
                match &mut ekf {
                    None => ekf = Some(Ekf::new(meas, cfg.ekf_r, 1.0)),
                    Some(e) => e.update(meas, dt, cfg.ekf_q, cfg.ekf_r)?,
                }
                let e = ekf.as_ref().unwrap();
                let forecast = (0..t_dp)
                    .map(|j| e.position().add(e.velocity().scale((j + 1) as f64 * dt)))
                    .collect();
                (forecast, plan_greedy_ekf(&sc.map, e, w0.heading, robot, &cfg.greedy))
            }
            ControllerKind::DpForecast => {
                let m = model.unwrap();
                let n = cfg.history_len;
                let mut hips = Vec::with_capacity(n);
                let mut heading = frame.heading;
                for i in 0..n {
                    let tq = (t - (n - 1 - i) as f64 / cfg.predictor_rate_hz).max(0.0);
                    let f = walk(sc, tq)?;
                    heading = f.heading;
                    hips.push(noisy(f.hip_xy()));
                }
                let anchor = ActorFrame::new(*hips.last().unwrap(), heading);
                let history: Vec<Vec2> =
                    hips.iter().map(|p| anchor.world_to_local(*p)).collect();
                let obstacle =
                    extract_local_map(&sc.map, &anchor, half, half, cfg.map_resolution)?;
                let input = match cfg.visibility {
                    Visibility::Full => obstacle,
                    Visibility::Partial => {
                        mask_to_fov(&obstacle, cfg.camera_fov, cfg.camera_range)?
                    }
                    Visibility::Unknown => {
                        OccupancyGrid::filled(*obstacle.geo(), OCC_UNKNOWN)
                    }
                };
                let (pred, _) = m.predict(&input, &history)?;
                let world: Vec<Vec2> =
                    pred.iter().map(|p| anchor.local_to_world(*p)).collect();
                let mut prev = anchor.position;
                let mut prev_heading = heading;
                let poses: Vec<HumanPose> = (0..t_dp)
                    .map(|j| {
                        let p = world[(j + 1) * stride - 1];
                        let d = p.sub(prev);
                        if d.norm() > 1e-6 {
                            prev_heading = d.angle();
                        }
                        prev = p;
                        HumanPose::new(p, prev_heading)
                    })
                    .collect();
                (world, plan_first_action(&sc.map, &poses, robot, &cfg.planner)?)
            }
            ControllerKind::DpOracle => {
                let poses: Vec<HumanPose> = (0..t_dp)
                    .map(|j| {
                        let tq = (t + (j + 1) as f64 * dt).min(sc.duration);
                        walk(sc, tq).map(|f| HumanPose::new(f.hip_xy(), f.heading))
                    })
                    .collect::<Result<_, _>>()?;
                let forecast = poses.iter().map(|p| p.position).collect();
                (forecast, plan_first_action(&sc.map, &poses, robot, &cfg.planner)?)
            }
        };

        steps.push(RolloutStep { t, human: frame, forecast, robot, control });
        robot = step(robot, control, dt);
    }
    Ok(RolloutLog { dt, steps })
}

/// First action of the receding-horizon plan; an unplannable state
/// degrades to stopping instead of aborting the episode.
fn plan_first_action(
    grid: &OccupancyGrid,
    forecast: &[HumanPose],
    robot: RobotState,
    params: &PlannerParams,
) -> Result<ControlInput, SimError> {
    match plan_dp(grid, forecast, robot, params) {
        Ok(plan) => Ok(plan.controls[0]),
        Err(ControlError::NoFeasiblePlan | ControlError::InfeasibleStart) => {
            Ok(ControlInput::STOP)
        }
        Err(e) => Err(e.into()),
    }
}

// --- rollout log format --------------------------------------------------

#[derive(Serialize, Deserialize)]
struct RolloutHeader {
    format: String,
    version: u32,
    dt: f64,
    steps: usize,
}

pub fn write_rollout<W: Write>(log: &RolloutLog, mut w: W) -> Result<(), SimError> {
    let header = RolloutHeader {
        format: "rollout".into(),
        version: 1,
        dt: log.dt,
        steps: log.steps.len(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| SimError::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    for step in &log.steps {
        serde_json::to_writer(&mut w, step).map_err(|e| SimError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_rollout<R: BufRead>(r: R) -> Result<RolloutLog, SimError> {
    let mut lines = r.lines();
    let first = lines.next().ok_or_else(|| SimError::Format("empty rollout log".into()))??;
    let header: RolloutHeader =
        serde_json::from_str(&first).map_err(|e| SimError::Format(e.to_string()))?;
    if header.format != "rollout" || header.version != 1 {
        return Err(SimError::Format("not a version-1 rollout log".into()));
    }
    let mut steps = Vec::with_capacity(header.steps);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        steps.push(serde_json::from_str(&line).map_err(|e| SimError::Format(e.to_string()))?);
    }
    if steps.len() != header.steps {
        return Err(SimError::Format(format!(
            "expected {} steps, found {}",
            header.steps,
            steps.len()
        )));
    }
    Ok(RolloutLog { dt: header.dt, steps })
}

// --- follow-ahead metrics -------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowAheadEval {
    /// Fraction of steps with the human inside the rear-camera cone,
    /// in range and unoccluded.
    pub tracking_time: f64,
    /// Mean geometric image-coverage proxy over tracked steps; 0 when the
    /// human is never tracked.
    pub area_proxy: f64,
    /// Mean |bearing| over tracked steps, normalized by the half-cone;
    /// 1 when the human is never tracked.
    pub distance: f64,
}

/// Score a rollout with a purely geometric rear camera: the cone faces
/// opposite the robot heading, and a wall on the sight line breaks
/// tracking.
pub fn eval_followahead(
    log: &RolloutLog,
    grid: &OccupancyGrid,
    fov: f64,
    range: f64,
) -> Result<FollowAheadEval, SimError> {
    if log.steps.is_empty() {
        return Err(SimError::InvalidArgument("cannot score an empty log".into()));
    }
    if !(fov > 0.0 && fov <= std::f64::consts::TAU && range > 0.0) {
        return Err(SimError::InvalidArgument("camera cone is degenerate".into()));
    }
    let mut tracked = 0usize;
    let mut area = 0.0;
    let mut bearing_sum = 0.0;
    for step in &log.steps {
        let human = step.human.hip_xy();
        let to_human = human.sub(step.robot.position());
        let d = to_human.norm();
        let bearing = if d == 0.0 {
            0.0
        } else {
            normalize_angle(to_human.angle() - (step.robot.theta + std::f64::consts::PI))
        };
        let visible = bearing.abs() <= fov / 2.0
            && d <= range
            && raycast(grid, step.robot.position(), human);
        if visible {
            tracked += 1;
            area += ((IDEAL_DISTANCE_M / d).powi(2) * bearing.cos().max(0.0)).min(1.0);
            bearing_sum += bearing.abs() / (fov / 2.0);
        }
    }
    Ok(if tracked == 0 {
        FollowAheadEval { tracking_time: 0.0, area_proxy: 0.0, distance: 1.0 }
    } else {
        FollowAheadEval {
            tracking_time: tracked as f64 / log.steps.len() as f64,
            area_proxy: area / tracked as f64,
            distance: bearing_sum / tracked as f64,
        }
    })
}

// --- forecast metrics -----------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEval {
    pub horizons_s: Vec<f64>,
    /// Hip position error at each horizon, millimeters.
    pub path_mm: Vec<f64>,
    /// Hip-relative mean per-joint error at each horizon, millimeters.
    pub pose_mm: Vec<f64>,
    /// Means over every forecast step.
    pub path_mean_mm: f64,
    pub pose_mean_mm: f64,
}

/// Average forecast errors over a sample set: hip position error for the
/// path and hip-subtracted MPJPE for the pose, reported in millimeters at
/// each requested horizon plus across the whole horizon.
pub fn eval_prediction(
    gt_paths: &[Vec<Vec2>],
    pred_paths: &[Vec<Vec2>],
    gt_poses: &[Vec<Vec<[f64; 3]>>],
    pred_poses: &[Vec<Vec<[f64; 3]>>],
    rate_hz: f64,
    horizons_s: &[f64],
) -> Result<PredictionEval, SimError> {
    let s = gt_paths.len();
    if s == 0 || pred_paths.len() != s || gt_poses.len() != s || pred_poses.len() != s {
        return Err(SimError::InvalidArgument("sample sets are empty or misaligned".into()));
    }
    let t_len = gt_paths[0].len();
    if t_len == 0 {
        return Err(SimError::InvalidArgument("forecasts are empty".into()));
    }
    for i in 0..s {
        if gt_paths[i].len() != t_len
            || pred_paths[i].len() != t_len
            || gt_poses[i].len() != t_len
            || pred_poses[i].len() != t_len
        {
            return Err(SimError::InvalidArgument("forecast lengths are ragged".into()));
        }
        for t in 0..t_len {
            if gt_poses[i][t].len() != pred_poses[i][t].len() || gt_poses[i][t].is_empty() {
                return Err(SimError::InvalidArgument("joint counts are ragged".into()));
            }
        }
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(SimError::InvalidArgument("rate must be positive".into()));
    }

    // Step t (0-based) sits at (t+1)/rate seconds.
    let step_of = |h: f64| -> Result<usize, SimError> {
        if !(h.is_finite() && h > 0.0) {
            return Err(SimError::InvalidArgument(format!("bad horizon {h}")));
        }
        let idx = (h * rate_hz).round() as i64 - 1;
        if idx < 0 || idx as usize >= t_len {
            return Err(SimError::InvalidArgument(format!(
                "horizon {h} s is outside the {t_len}-step forecast"
            )));
        }
        Ok(idx as usize)
    };

    let path_err_at = |t: usize| -> f64 {
        let sum: f64 =
            (0..s).map(|i| gt_paths[i][t].sub(pred_paths[i][t]).norm()).sum();
        1000.0 * sum / s as f64
    };
    let pose_err_at = |t: usize| -> f64 {
        let sum: f64 = (0..s)
            .map(|i| {
                let (gt, pr) = (&gt_poses[i][t], &pred_poses[i][t]);
                let (gh, ph) = (gt[0], pr[0]);
                let joint_sum: f64 = gt
                    .iter()
                    .zip(pr)
                    .map(|(g, p)| {
                        let dx = (g[0] - gh[0]) - (p[0] - ph[0]);
                        let dy = (g[1] - gh[1]) - (p[1] - ph[1]);
                        let dz = (g[2] - gh[2]) - (p[2] - ph[2]);
                        (dx * dx + dy * dy + dz * dz).sqrt()
                    })
                    .sum();
                joint_sum / gt.len() as f64
            })
            .sum();
        1000.0 * sum / s as f64
    };

    let mut path_mm = Vec::with_capacity(horizons_s.len());
    let mut pose_mm = Vec::with_capacity(horizons_s.len());
    for &h in horizons_s {
        let t = step_of(h)?;
        path_mm.push(path_err_at(t));
        pose_mm.push(pose_err_at(t));
    }
    let path_mean_mm = (0..t_len).map(path_err_at).sum::<f64>() / t_len as f64;
    let pose_mean_mm = (0..t_len).map(pose_err_at).sum::<f64>() / t_len as f64;
    Ok(PredictionEval { horizons_s: horizons_s.to_vec(), path_mm, pose_mm, path_mean_mm, pose_mean_mm })
}
