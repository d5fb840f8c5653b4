//! Finite-horizon value iteration over a discretized pose lattice.
//!
//! States are (x, y, θ) snapped to a regular grid over the map and a
//! fixed set of heading bins. The table holds one cost-to-go slice per
//! forecast step plus the terminal slice; every slice-t entry already
//! includes that state's own stage cost, except t = 0 where the start
//! pose is sunk. Landing outside the lattice costs infinity.

use super::{
    stage_cost, step, view_cost, ControlError, ControlPlan, HumanPose, PlannerParams, RobotState,
};
use crate::geo::{normalize_angle, Vec2};
use crate::grid::{is_collision, OccupancyGrid};

const NO_ACTION: u8 = u8::MAX;

/// Regular (x, y, θ) discretization covering a map's sampled extent.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    origin: Vec2,
    resolution: f64,
    nx: usize,
    ny: usize,
    ntheta: usize,
}

impl Lattice {
    pub fn covering(geo: &crate::geo::MapGeo, resolution: f64, headings: usize) -> Self {
        let span_x = (geo.width - 1) as f64 * geo.resolution;
        let span_y = (geo.height - 1) as f64 * geo.resolution;
        Lattice {
            origin: geo.origin,
            resolution,
            nx: (span_x / resolution).floor() as usize + 1,
            ny: (span_y / resolution).floor() as usize + 1,
            ntheta: headings,
        }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.ntheta)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.ntheta
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn bin_width(&self) -> f64 {
        std::f64::consts::TAU / self.ntheta as f64
    }

    /// Snap a pose to its nearest cell; `None` when (x, y) leaves the
    /// covered area. Headings always wrap.
    pub fn project(&self, s: &RobotState) -> Option<(usize, usize, usize)> {
        let (ix, iy) = self.project_xy(s.x, s.y)?;
        Some((ix, iy, self.project_theta(s.theta)))
    }

    fn project_xy(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.x) / self.resolution).round();
        let fy = ((y - self.origin.y) / self.resolution).round();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    fn project_theta(&self, theta: f64) -> usize {
        let k = ((theta + std::f64::consts::PI) / self.bin_width()).round() as i64;
        k.rem_euclid(self.ntheta as i64) as usize
    }

    /// The representative pose of a cell.
    pub fn state_of(&self, cell: (usize, usize, usize)) -> RobotState {
        let (ix, iy, ik) = cell;
        RobotState::new(
            self.origin.x + ix as f64 * self.resolution,
            self.origin.y + iy as f64 * self.resolution,
            normalize_angle(-std::f64::consts::PI + ik as f64 * self.bin_width()),
        )
    }

    fn index(&self, cell: (usize, usize, usize)) -> usize {
        let (ix, iy, ik) = cell;
        (ik * self.ny + iy) * self.nx + ix
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.ntheta)
            .flat_map(move |ik| (0..self.ny).map(move |iy| (ik, iy)))
            .flat_map(move |(ik, iy)| (0..self.nx).map(move |ix| (ix, iy, ik)))
    }
}

/// Cost-to-go for every lattice cell at every step, with the chosen
/// action alongside.
#[derive(Debug, Clone)]
pub struct ValueTable {
    lattice: Lattice,
    horizon: usize,
    values: Vec<f64>,
    best: Vec<u8>,
}

fn validate(forecast: &[HumanPose], params: &PlannerParams) -> Result<(), ControlError> {
    if forecast.is_empty() {
        return Err(ControlError::InvalidArgument("empty forecast".into()));
    }
    if !(params.dt > 0.0) {
        return Err(ControlError::InvalidArgument("step duration must be positive".into()));
    }
    if !(params.lattice_res > 0.0) || params.headings == 0 {
        return Err(ControlError::InvalidArgument("degenerate lattice".into()));
    }
    if params.actions.is_empty() || params.actions.len() >= NO_ACTION as usize {
        return Err(ControlError::InvalidArgument("action set empty or too large".into()));
    }
    if params.lambda_col.is_nan() || params.lambda_col < 0.0 {
        return Err(ControlError::InvalidArgument("collision weight must be >= 0".into()));
    }
    Ok(())
}

impl ValueTable {
    /// Backward value iteration: the terminal slice is the stage cost
    /// against the last forecast step; earlier slices add the best
    /// reachable successor; slice 0 carries no stage cost of its own.
    pub fn build(
        grid: &OccupancyGrid,
        forecast: &[HumanPose],
        params: &PlannerParams,
    ) -> Result<ValueTable, ControlError> {
        validate(forecast, params)?;
        let lattice = Lattice::covering(grid.geo(), params.lattice_res, params.headings);
        let horizon = forecast.len();
        let n = lattice.len();
        let (nx, ny, ntheta) = lattice.dims();
        let mut values = vec![f64::INFINITY; (horizon + 1) * n];
        let mut best = vec![NO_ACTION; horizon * n];

        // The expensive pieces of the per-cell stage cost and transition
        // are invariant across time slices: collision flags depend only
        // on (x, y) and action displacements only on the heading bin.
        // Hoisting them must keep the exact arithmetic of `step` and
        // `stage_cost` so exhaustive enumeration reproduces the table
        // bit for bit.
        let col: Vec<bool> = (0..nx * ny)
            .map(|i| {
                let s = lattice.state_of((i % nx, i / nx, 0));
                is_collision(grid, s.position(), params.inflation)
            })
            .collect();
        struct Move {
            dx: f64,
            dy: f64,
            ik: usize,
        }
        let mut moves = Vec::with_capacity(ntheta * params.actions.len());
        for ik in 0..ntheta {
            let theta = lattice.state_of((0, 0, ik)).theta;
            for u in &params.actions {
                moves.push(Move {
                    dx: u.v * theta.cos() * params.dt,
                    dy: u.v * theta.sin() * params.dt,
                    ik: lattice.project_theta(normalize_angle(theta + u.omega * params.dt)),
                });
            }
        }
        let n_act = params.actions.len();

        for cell in lattice.cells() {
            let state = lattice.state_of(cell);
            let view = view_cost(&state, &forecast[horizon - 1], &params.view);
            values[horizon * n + lattice.index(cell)] = if col[cell.1 * nx + cell.0] {
                view + params.lambda_col
            } else {
                view
            };
        }

        for t in (0..horizon).rev() {
            let (next, cur) = {
                let (a, b) = values.split_at_mut((t + 1) * n);
                (&b[..n], &mut a[t * n..])
            };
            for cell in lattice.cells() {
                let state = lattice.state_of(cell);
                let here = if t == 0 {
                    0.0
                } else {
                    let view = view_cost(&state, &forecast[t - 1], &params.view);
                    if col[cell.1 * nx + cell.0] { view + params.lambda_col } else { view }
                };
                if here == f64::INFINITY {
                    continue;
                }
                let mut best_q = f64::INFINITY;
                let mut best_a = NO_ACTION;
                for (a, m) in moves[cell.2 * n_act..(cell.2 + 1) * n_act].iter().enumerate() {
                    let q = match lattice.project_xy(state.x + m.dx, state.y + m.dy) {
                        Some((jx, jy)) => next[(m.ik * ny + jy) * nx + jx],
                        None => f64::INFINITY,
                    };
                    if q < best_q {
                        best_q = q;
                        best_a = a as u8;
                    }
                }
                let i = lattice.index(cell);
                cur[i] = here + best_q;
                best[t * n + i] = best_a;
            }
        }
        Ok(ValueTable { lattice, horizon, values, best })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Cost-to-go at step `t` (0 = now, `horizon` = terminal).
    pub fn value(&self, t: usize, cell: (usize, usize, usize)) -> f64 {
        assert!(t <= self.horizon, "slice {t} out of range");
        self.values[t * self.lattice.len() + self.lattice.index(cell)]
    }

    /// The minimizing action index leaving `cell` at step `t`, if any
    /// leads anywhere finite.
    pub fn best_action(&self, t: usize, cell: (usize, usize, usize)) -> Option<usize> {
        assert!(t < self.horizon, "no action leaves slice {t}");
        match self.best[t * self.lattice.len() + self.lattice.index(cell)] {
            NO_ACTION => None,
            a => Some(a as usize),
        }
    }
}

/// Plan by value iteration and read the greedy action sequence back out.
///
/// The returned `total_cost` is the table's cost-to-go at the snapped
/// start pose; the trace holds the lattice states actually visited.
pub fn plan_dp(
    grid: &OccupancyGrid,
    forecast: &[HumanPose],
    start: RobotState,
    params: &PlannerParams,
) -> Result<ControlPlan, ControlError> {
    if is_collision(grid, start.position(), params.inflation) {
        return Err(ControlError::InfeasibleStart);
    }
    let table = ValueTable::build(grid, forecast, params)?;
    let mut cell = table.lattice().project(&start).ok_or(ControlError::NoFeasiblePlan)?;
    let total_cost = table.value(0, cell);
    if !total_cost.is_finite() {
        return Err(ControlError::NoFeasiblePlan);
    }

    let mut controls = Vec::with_capacity(table.horizon());
    let mut trace = Vec::with_capacity(table.horizon());
    let mut stage_costs = Vec::with_capacity(table.horizon());
    for t in 0..table.horizon() {
        let a = table.best_action(t, cell).ok_or(ControlError::NoFeasiblePlan)?;
        let u = params.actions[a];
        let state = table.lattice().state_of(cell);
        cell = table
            .lattice()
            .project(&step(state, u, params.dt))
            .ok_or(ControlError::NoFeasiblePlan)?;
        let landed = table.lattice().state_of(cell);
        controls.push(u);
        stage_costs.push(stage_cost(&landed, &forecast[t], grid, params));
        trace.push(landed);
    }
    Ok(ControlPlan { controls, trace, stage_costs, total_cost })
}

/// The same planner handed the true future instead of a forecast.
pub fn plan_oracle(
    grid: &OccupancyGrid,
    gt_future: &[HumanPose],
    start: RobotState,
    params: &PlannerParams,
) -> Result<ControlPlan, ControlError> {
    plan_dp(grid, gt_future, start, params)
}

/// Reference cost by exhaustive search over every action sequence under
/// the same projection rule; exponential in the horizon, for validation
/// at tiny sizes only. Returns infinity when nothing is feasible.
pub fn exhaustive_plan_cost(
    grid: &OccupancyGrid,
    forecast: &[HumanPose],
    start: RobotState,
    params: &PlannerParams,
) -> Result<f64, ControlError> {
    if is_collision(grid, start.position(), params.inflation) {
        return Err(ControlError::InfeasibleStart);
    }
    validate(forecast, params)?;
    let lattice = Lattice::covering(grid.geo(), params.lattice_res, params.headings);

    fn rec(
        grid: &OccupancyGrid,
        forecast: &[HumanPose],
        params: &PlannerParams,
        lattice: &Lattice,
        cell: (usize, usize, usize),
        t: usize,
    ) -> f64 {
        let state = lattice.state_of(cell);
        let here = stage_cost(&state, &forecast[t - 1], grid, params);
        if here == f64::INFINITY || t == forecast.len() {
            return here;
        }
        let mut best = f64::INFINITY;
        for &u in &params.actions {
            let q = match lattice.project(&step(state, u, params.dt)) {
                Some(succ) => rec(grid, forecast, params, lattice, succ, t + 1),
                None => f64::INFINITY,
            };
            if q < best {
                best = q;
            }
        }
        here + best
    }

    let Some(cell) = lattice.project(&start) else {
        return Ok(f64::INFINITY);
    };
    let mut best = f64::INFINITY;
    for &u in &params.actions {
        let q = match lattice.project(&step(lattice.state_of(cell), u, params.dt)) {
            Some(succ) => rec(grid, forecast, params, &lattice, succ, 1),
            None => f64::INFINITY,
        };
        if q < best {
            best = q;
        }
    }
    Ok(best)
}
