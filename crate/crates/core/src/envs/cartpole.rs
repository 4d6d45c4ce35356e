//! Cart-pole balancing with task-dependent force magnitude and direction.
//!
//! State layout: `[x, v, theta, omega, force, task_type, num_steps]`.
//! Action 0 and 1 apply the task's force in directions set by the task type:
//! Type 0 ("pulling") sends action 0 toward −x when `force > 0`, Type 1
//! ("pushing") inverts that.

use super::Terminal;
use crate::error::{Error, Result};
use crate::numcore::Rng;

pub const STATE_DIM: usize = 7;
pub const NUM_ACTIONS: usize = 2;
pub const HORIZON: usize = 200;
pub const GAMMA: f64 = 1.0;

const GRAVITY: f64 = 9.8;
const CART_MASS: f64 = 1.0;
const POLE_MASS: f64 = 0.1;
const TOTAL_MASS: f64 = CART_MASS + POLE_MASS;
/// Half of the 1 m pole, as in the classic formulation.
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = POLE_MASS * HALF_LENGTH;
pub const TAU: f64 = 0.02;
pub const THETA_LIMIT: f64 = 12.0 * std::f64::consts::PI / 180.0;
pub const X_LIMIT: f64 = 2.4;

pub const FORCE_MIN: f64 = 5.0;
pub const FORCE_MAX: f64 = 15.0;
pub const INIT_NOISE: f64 = 0.05;

/// Sign (±1) of the cart displacement that `action` produces.
pub fn action_direction(state: &[f64], action: usize) -> f64 {
    let base = if action == 0 { -1.0 } else { 1.0 };
    let type_sign = if state[5] > 0.5 { -1.0 } else { 1.0 };
    base * type_sign * state[4].signum()
}

/// Signed force applied to the cart.
pub fn effective_force(state: &[f64], action: usize) -> f64 {
    let base = if action == 0 { -1.0 } else { 1.0 };
    let type_sign = if state[5] > 0.5 { -1.0 } else { 1.0 };
    base * type_sign * state[4]
}

pub fn validate(state: &[f64]) -> Result<()> {
    let bad = |detail: String| Error::InvalidState {
        env: "cartpolevar".into(),
        detail,
    };
    if state.len() != STATE_DIM {
        return Err(bad(format!("expected {STATE_DIM} components, got {}", state.len())));
    }
    let f = state[4].abs();
    if !(FORCE_MIN..=FORCE_MAX).contains(&f) {
        return Err(bad(format!("|force| {f} outside [{FORCE_MIN}, {FORCE_MAX}]")));
    }
    if state[5] != 0.0 && state[5] != 1.0 {
        return Err(bad("task type must be 0 or 1".into()));
    }
    if !(0.0..=HORIZON as f64).contains(&state[6]) {
        return Err(bad(format!("step counter {} outside [0, {HORIZON}]", state[6])));
    }
    Ok(())
}

pub fn sample(rng: &mut Rng) -> Vec<f64> {
    let mut s = vec![0.0; STATE_DIM];
    for v in s.iter_mut().take(4) {
        *v = rng.uniform(-INIT_NOISE, INIT_NOISE);
    }
    let mag = rng.uniform(FORCE_MIN, FORCE_MAX);
    s[4] = if rng.bernoulli(0.5) { mag } else { -mag };
    s[5] = if rng.bernoulli(0.5) { 1.0 } else { 0.0 };
    s
}

pub fn step(state: &[f64], action: usize) -> Result<(Vec<f64>, Terminal)> {
    if action >= NUM_ACTIONS {
        return Err(Error::InvalidAction {
            env: "cartpolevar".into(),
            detail: format!("action {action} outside 0..{NUM_ACTIONS}"),
        });
    }
    let force = effective_force(state, action);
    let (x, v, theta, omega) = (state[0], state[1], state[2], state[3]);
    let (sin, cos) = theta.sin_cos();
    let temp = (force + POLE_MASS_LENGTH * omega * omega * sin) / TOTAL_MASS;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / TOTAL_MASS));
    let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;

    let mut next = state.to_vec();
    next[0] = x + TAU * v;
    next[1] = v + TAU * x_acc;
    next[2] = theta + TAU * omega;
    next[3] = omega + TAU * theta_acc;
    next[6] = state[6] + 1.0;

    let terminal = if next[2].abs() > THETA_LIMIT || next[0].abs() > X_LIMIT {
        Terminal::Crashed
    } else if next[6] >= HORIZON as f64 {
        Terminal::Solved
    } else {
        Terminal::Alive
    };
    Ok((next, terminal))
}

/// PD balance controller that picks whichever action pushes the cart the
/// desired way under this task's force convention.
pub fn expert(state: &[f64]) -> Result<usize> {
    if state.len() != STATE_DIM || state.iter().any(|v| !v.is_finite()) {
        return Err(Error::Expert("cart-pole state is malformed".into()));
    }
    let (x, v, theta, omega) = (state[0], state[1], state[2], state[3]);
    let u = 10.0 * theta + 2.0 * omega + 0.1 * x + 0.4 * v;
    let want = if u > 0.0 { 1.0 } else { -1.0 };
    Ok(if action_direction(state, 1) == want { 1 } else { 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(f: f64, ty: f64) -> Vec<f64> {
        vec![0.0, 0.0, 0.0, 0.0, f, ty, 0.0]
    }

    #[test]
    fn force_conventions() {
        assert!(effective_force(&task(10.0, 0.0), 0) < 0.0);
        assert!(effective_force(&task(10.0, 1.0), 0) > 0.0);
        assert!(effective_force(&task(-10.0, 0.0), 0) > 0.0);
        assert!(effective_force(&task(-10.0, 1.0), 0) < 0.0);
        for s in [task(7.0, 0.0), task(-7.0, 1.0), task(-12.0, 0.0), task(6.0, 1.0)] {
            for a in 0..2 {
                assert_eq!(action_direction(&s, a), effective_force(&s, a).signum());
            }
        }
    }

    #[test]
    fn action_moves_cart_in_effective_direction() {
        let s = task(10.0, 0.0);
        let (n, t) = step(&s, 0).unwrap();
        assert_eq!(t, Terminal::Alive);
        assert!(n[1] < 0.0);
        let s = task(10.0, 1.0);
        let (n, _) = step(&s, 0).unwrap();
        assert!(n[1] > 0.0);
    }

    #[test]
    fn tilted_pole_crashes() {
        let mut s = task(10.0, 0.0);
        s[2] = THETA_LIMIT - 1e-4;
        s[3] = 1.0;
        let (_, t) = step(&s, 0).unwrap();
        assert_eq!(t, Terminal::Crashed);
    }

    #[test]
    fn expert_balances_every_force_class() {
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            let mut s = sample(&mut rng);
            let mut done = Terminal::Alive;
            while done == Terminal::Alive {
                let a = expert(&s).unwrap();
                let (n, t) = step(&s, a).unwrap();
                s = n;
                done = t;
            }
            assert_eq!(done, Terminal::Solved, "force {} type {}", s[4], s[5]);
        }
    }
}
