//! Constant-velocity target tracker and the myopic chase policy on top.
//!
//! The filter carries (x, y, vx, vy) with position-only measurements.
//! Covariance updates use the Joseph form and re-symmetrize, so the
//! matrix stays positive semidefinite through long streams.

use super::{step, ControlError, ControlInput, RobotState};
use crate::geo::{normalize_angle, Vec2};
use crate::grid::{is_collision, OccupancyGrid};

type Mat4 = [[f64; 4]; 4];

fn mul4(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in a.iter().enumerate() {
        for j in 0..4 {
            out[i][j] = (0..4).map(|k| row[k] * b[k][j]).sum();
        }
    }
    out
}

fn transpose4(a: &Mat4) -> Mat4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// Constant-velocity Kalman tracker over planar position measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct Ekf {
    state: [f64; 4],
    cov: Mat4,
}

impl Ekf {
    /// Start at a known position with zero velocity and the given
    /// diagonal uncertainties.
    pub fn new(position: Vec2, pos_var: f64, vel_var: f64) -> Self {
        let mut cov = [[0.0; 4]; 4];
        cov[0][0] = pos_var;
        cov[1][1] = pos_var;
        cov[2][2] = vel_var;
        cov[3][3] = vel_var;
        Ekf { state: [position.x, position.y, 0.0, 0.0], cov }
    }

    pub fn from_parts(state: [f64; 4], cov: Mat4) -> Self {
        Ekf { state, cov }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    pub fn covariance(&self) -> &Mat4 {
        &self.cov
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.state[0], self.state[1])
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.state[2], self.state[3])
    }

    /// Advance the constant-velocity model by `dt` with isotropic
    /// process noise `q` on every state component.
    pub fn predict(&mut self, dt: f64, q: f64) {
        let mut f = [[0.0; 4]; 4];
        for (i, row) in f.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        f[0][2] = dt;
        f[1][3] = dt;
        self.state = [
            self.state[0] + dt * self.state[2],
            self.state[1] + dt * self.state[3],
            self.state[2],
            self.state[3],
        ];
        let mut p = mul4(&mul4(&f, &self.cov), &transpose4(&f));
        for (i, row) in p.iter_mut().enumerate() {
            row[i] += q;
        }
        self.cov = p;
    }

    /// Fuse one position measurement with isotropic noise `r` (Joseph
    /// form, then re-symmetrized).
    pub fn correct(&mut self, meas: Vec2, r: f64) -> Result<(), ControlError> {
        let p = &self.cov;
        let s = [[p[0][0] + r, p[0][1]], [p[1][0], p[1][1] + r]];
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        if !det.is_finite() || det.abs() < f64::MIN_POSITIVE {
            return Err(ControlError::NumericError(
                "singular innovation covariance".into(),
            ));
        }
        let s_inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
        // K = P Hᵀ S⁻¹ where H picks the two position components.
        let mut k = [[0.0; 2]; 4];
        for i in 0..4 {
            for j in 0..2 {
                k[i][j] = p[i][0] * s_inv[0][j] + p[i][1] * s_inv[1][j];
            }
        }
        let innov = [meas.x - self.state[0], meas.y - self.state[1]];
        for i in 0..4 {
            self.state[i] += k[i][0] * innov[0] + k[i][1] * innov[1];
        }
        // A = I − K H: subtracting K from the first two columns.
        let mut a = [[0.0; 4]; 4];
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 1.0;
            row[0] -= k[i][0];
            row[1] -= k[i][1];
        }
        let mut post = mul4(&mul4(&a, &self.cov), &transpose4(&a));
        for i in 0..4 {
            for j in 0..4 {
                post[i][j] += r * (k[i][0] * k[j][0] + k[i][1] * k[j][1]);
            }
        }
        for i in 0..4 {
            for j in (i + 1)..4 {
                let m = 0.5 * (post[i][j] + post[j][i]);
                post[i][j] = m;
                post[j][i] = m;
            }
        }
        self.cov = post;
        Ok(())
    }

    /// One tracker cycle: propagate by `dt`, then fuse `meas`.
    pub fn update(&mut self, meas: Vec2, dt: f64, q: f64, r: f64) -> Result<(), ControlError> {
        self.predict(dt, q);
        self.correct(meas, r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyParams {
    pub actions: Vec<ControlInput>,
    pub dt: f64,
    pub inflation: f64,
    /// How far ahead of the tracked person to aim, meters.
    pub lookahead: f64,
}

impl Default for GreedyParams {
    fn default() -> Self {
        GreedyParams {
            actions: super::default_actions(),
            dt: 0.2,
            inflation: 0.3,
            lookahead: 1.5,
        }
    }
}

/// Chase a point `lookahead` meters ahead of the tracked person along
/// their estimated motion direction (or `fallback_heading` when the
/// velocity estimate is zero). Picks the collision-free action whose
/// one-step successor is nearest the target, breaking distance ties by
/// heading alignment and remaining ties by action order. Returns the
/// stop command when every action collides.
pub fn plan_greedy_ekf(
    grid: &OccupancyGrid,
    ekf: &Ekf,
    fallback_heading: f64,
    start: RobotState,
    params: &GreedyParams,
) -> ControlInput {
    let vel = ekf.velocity();
    let dir = if vel.norm() > 1e-9 { vel.scale(1.0 / vel.norm()) } else { Vec2::unit(fallback_heading) };
    let target = ekf.position().add(dir.scale(params.lookahead));

    let mut best: Option<(f64, f64, ControlInput)> = None;
    for &u in &params.actions {
        let s = step(start, u, params.dt);
        if is_collision(grid, s.position(), params.inflation) {
            continue;
        }
        let to_target = target.sub(s.position());
        let d = to_target.norm();
        let align =
            if d > 1e-9 { normalize_angle(to_target.angle() - s.theta).abs() } else { 0.0 };
        let better = match &best {
            None => true,
            Some((bd, ba, _)) => d < *bd || (d == *bd && align < *ba),
        };
        if better {
            best = Some((d, align, u));
        }
    }
    best.map(|(_, _, u)| u).unwrap_or(ControlInput::STOP)
}
