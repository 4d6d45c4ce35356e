//! Point mass steered through a gate in a walled square.
//!
//! State layout: `[x, vx, y, vy, gate_pos, gate_width, friction]`; the last
//! three components are the task parameters and stay constant.

use super::Terminal;
use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const STATE_DIM: usize = 7;
pub const ACTION_DIM: usize = 2;
pub const HORIZON: usize = 100;
pub const GAMMA: f64 = 0.99;

pub const ARENA: f64 = 4.0;
pub const FORCE_LIMIT: f64 = 10.0;
pub const DT: f64 = 0.05;
pub const MASS: f64 = 1.0;
pub const GOAL: (f64, f64) = (0.0, -3.0);
pub const GOAL_RADIUS: f64 = 0.25;
pub const START: (f64, f64) = (0.0, 3.0);

pub const GATE_POS_RANGE: (f64, f64) = (-4.0, 4.0);
pub const GATE_WIDTH_RANGE: (f64, f64) = (0.5, 8.0);
pub const FRICTION_RANGE: (f64, f64) = (0.0, 4.0);

/// Gate opening clipped to the arena.
pub fn gate_opening(state: &[f64]) -> (f64, f64) {
    let (p, w) = (state[4], state[5]);
    ((p - 0.5 * w).max(-ARENA), (p + 0.5 * w).min(ARENA))
}

pub fn initial_state(gate_pos: f64, gate_width: f64, friction: f64) -> Vec<f64> {
    vec![START.0, 0.0, START.1, 0.0, gate_pos, gate_width, friction]
}

pub fn validate(state: &[f64]) -> Result<()> {
    let bad = |detail: String| Error::InvalidState {
        env: "pointmass".into(),
        detail,
    };
    if state.len() != STATE_DIM {
        return Err(bad(format!("expected {STATE_DIM} components, got {}", state.len())));
    }
    if state[5] <= 0.0 {
        return Err(bad("gate width must be positive".into()));
    }
    let (lo, hi) = gate_opening(state);
    if lo > hi {
        return Err(bad("gate does not intersect the arena".into()));
    }
    if !(FRICTION_RANGE.0..=FRICTION_RANGE.1).contains(&state[6]) {
        return Err(bad(format!("friction {} outside [0,4]", state[6])));
    }
    Ok(())
}

pub fn sample(rng: &mut Rng) -> Vec<f64> {
    initial_state(
        rng.uniform(GATE_POS_RANGE.0, GATE_POS_RANGE.1),
        rng.uniform(GATE_WIDTH_RANGE.0, GATE_WIDTH_RANGE.1),
        rng.uniform(FRICTION_RANGE.0, FRICTION_RANGE.1),
    )
}

pub fn step(state: &[f64], force: [f64; 2]) -> Result<(Vec<f64>, Terminal)> {
    if force.iter().any(|f| !f.is_finite() || f.abs() > FORCE_LIMIT) {
        return Err(Error::InvalidAction {
            env: "pointmass".into(),
            detail: format!("force {force:?} outside [-{FORCE_LIMIT}, {FORCE_LIMIT}]^2"),
        });
    }
    let mu = state[6];
    let (x0, y0) = (state[0], state[2]);
    let vx = state[1] + DT * (force[0] / MASS - mu * state[1]);
    let vy = state[3] + DT * (force[1] / MASS - mu * state[3]);
    let x = x0 + DT * vx;
    let y = y0 + DT * vy;
    let mut next = state.to_vec();
    next[0] = x;
    next[1] = vx;
    next[2] = y;
    next[3] = vy;

    let crossed = (y0 > 0.0 && y <= 0.0) || (y0 < 0.0 && y >= 0.0) || (y0 == 0.0 && y != 0.0);
    let mut terminal = Terminal::Alive;
    if x.abs() > ARENA || y.abs() > ARENA {
        terminal = Terminal::Crashed;
    } else if crossed {
        let frac = if y0 == y { 0.0 } else { y0 / (y0 - y) };
        let xc = x0 + (x - x0) * frac;
        let (lo, hi) = gate_opening(state);
        if xc < lo || xc > hi {
            terminal = Terminal::Crashed;
        }
    }
    if terminal == Terminal::Alive && ((x - GOAL.0).powi(2) + (y - GOAL.1).powi(2)).sqrt() <= GOAL_RADIUS {
        terminal = Terminal::Solved;
    }
    Ok((next, terminal))
}

/// PD steering: line up above the gate centre, drop through, then head for
/// the goal. Friction is compensated explicitly.
pub fn expert(state: &[f64]) -> Result<[f64; 2]> {
    if state.len() != STATE_DIM || state.iter().any(|v| !v.is_finite()) {
        return Err(Error::Expert("point-mass state is malformed".into()));
    }
    let (x, vx, y, vy, mu) = (state[0], state[1], state[2], state[3], state[6]);
    let (lo, hi) = gate_opening(state);
    let centre = 0.5 * (lo + hi);
    let slack = (0.5 * (hi - lo) - 0.15).max(0.05);
    let (tx, ty) = if y > 0.0 {
        if (x - centre).abs() <= slack {
            (centre, -1.0)
        } else {
            (centre, 0.8_f64.min(y).max(0.4))
        }
    } else {
        GOAL
    };
    let (kp, kd) = (12.0, 6.0);
    let fx = kp * (tx - x) - kd * vx + mu * vx;
    let fy = kp * (ty - y) - kd * vy + mu * vy;
    Ok([fx.clamp(-FORCE_LIMIT, FORCE_LIMIT), fy.clamp(-FORCE_LIMIT, FORCE_LIMIT)])
}
