//! Goal-based environments with binary success and per-step failure.
//!
//! A [`Task`] is an initial state. Every episode ends with reward 1 exactly
//! when it terminates as [`Terminal::Solved`]; after each step that leaves
//! the episode alive, it is cut short with probability `1 − γ`.

pub mod cartpole;
pub mod multikeynav;
pub mod pointmass;
mod rollout;
pub mod taskfile;

pub use rollout::{rollout, Actor, ExpertActor, Rollout, Trajectory, UniformRandomActor};

use crate::error::{Error, Result};
use crate::numcore::Rng;
use std::fmt;
use std::str::FromStr;

/// Door-requirement variants of the key-navigation environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyNavVariant {
    Standard,
    /// Every door needs keys A and B.
    AllDoorsAB,
    /// Every door needs key A only.
    AllDoorsA,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EnvId {
    MultiKeyNav(KeyNavVariant),
    CartPoleVar,
    PointMass,
}

pub const ENV_NAMES: [&str; 5] = [
    "multikeynav",
    "multikeynav-ab",
    "multikeynav-a",
    "cartpolevar",
    "pointmass",
];

impl EnvId {
    pub const MULTI_KEY_NAV: EnvId = EnvId::MultiKeyNav(KeyNavVariant::Standard);

    pub fn name(self) -> &'static str {
        match self {
            EnvId::MultiKeyNav(KeyNavVariant::Standard) => "multikeynav",
            EnvId::MultiKeyNav(KeyNavVariant::AllDoorsAB) => "multikeynav-ab",
            EnvId::MultiKeyNav(KeyNavVariant::AllDoorsA) => "multikeynav-a",
            EnvId::CartPoleVar => "cartpolevar",
            EnvId::PointMass => "pointmass",
        }
    }

    pub fn gamma(self) -> f64 {
        match self {
            EnvId::MultiKeyNav(_) => multikeynav::GAMMA,
            EnvId::CartPoleVar => cartpole::GAMMA,
            EnvId::PointMass => pointmass::GAMMA,
        }
    }

    pub fn horizon(self) -> usize {
        match self {
            EnvId::MultiKeyNav(_) => multikeynav::HORIZON,
            EnvId::CartPoleVar => cartpole::HORIZON,
            EnvId::PointMass => pointmass::HORIZON,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            EnvId::MultiKeyNav(_) => multikeynav::STATE_DIM,
            EnvId::CartPoleVar => cartpole::STATE_DIM,
            EnvId::PointMass => pointmass::STATE_DIM,
        }
    }

    pub fn action_space(self) -> ActionSpace {
        match self {
            EnvId::MultiKeyNav(_) => ActionSpace::Discrete(multikeynav::NUM_ACTIONS),
            EnvId::CartPoleVar => ActionSpace::Discrete(cartpole::NUM_ACTIONS),
            EnvId::PointMass => ActionSpace::Box {
                dim: pointmass::ACTION_DIM,
                limit: pointmass::FORCE_LIMIT,
            },
        }
    }

    /// Column names of the state vector, used by task files.
    pub fn state_columns(self) -> &'static [&'static str] {
        match self {
            EnvId::MultiKeyNav(_) => &["location", "key_a", "key_b", "key_c", "key_d", "door_bit1", "door_bit2"],
            EnvId::CartPoleVar => &["x", "v", "theta", "omega", "force", "task_type", "num_steps"],
            EnvId::PointMass => &["x", "vx", "y", "vy", "gate_pos", "gate_width", "friction"],
        }
    }

    pub fn validate_state(self, state: &[f64]) -> Result<()> {
        match self {
            EnvId::MultiKeyNav(_) => multikeynav::validate(state),
            EnvId::CartPoleVar => cartpole::validate(state),
            EnvId::PointMass => pointmass::validate(state),
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "multikeynav" => EnvId::MultiKeyNav(KeyNavVariant::Standard),
            "multikeynav-ab" => EnvId::MultiKeyNav(KeyNavVariant::AllDoorsAB),
            "multikeynav-a" => EnvId::MultiKeyNav(KeyNavVariant::AllDoorsA),
            "cartpolevar" => EnvId::CartPoleVar,
            "pointmass" => EnvId::PointMass,
            other => {
                return Err(Error::Parse(format!(
                    "unknown environment '{other}' (valid: {})",
                    ENV_NAMES.join(", ")
                )))
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Box { dim: usize, limit: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous([f64; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    Alive,
    Solved,
    Crashed,
    TimedOut,
    FailedByGamma,
}

impl Terminal {
    pub fn is_done(self) -> bool {
        self != Terminal::Alive
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: u8,
    pub terminal: Terminal,
}

/// An initial state of an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub env: EnvId,
    pub state0: Vec<f64>,
}

impl Task {
    pub fn new(env: EnvId, state0: Vec<f64>) -> Result<Self> {
        env.validate_state(&state0)?;
        Ok(Self { env, state0 })
    }
}

/// Applies one action, then the `1 − γ` failure draw if still alive.
pub fn step(env: EnvId, state: &[f64], action: Action, rng: &mut Rng) -> Result<StepOutcome> {
    let (next_state, mut terminal) = match (env, action) {
        (EnvId::MultiKeyNav(v), Action::Discrete(a)) => multikeynav::step(v, state, a, rng)?,
        (EnvId::CartPoleVar, Action::Discrete(a)) => cartpole::step(state, a)?,
        (EnvId::PointMass, Action::Continuous(f)) => pointmass::step(state, f)?,
        (env, action) => {
            return Err(Error::InvalidAction {
                env: env.name().into(),
                detail: format!("{action:?} does not match the action space"),
            })
        }
    };
    let gamma = env.gamma();
    if terminal == Terminal::Alive && gamma < 1.0 && rng.unit() >= gamma {
        terminal = Terminal::FailedByGamma;
    }
    Ok(StepOutcome {
        next_state,
        reward: u8::from(terminal == Terminal::Solved),
        terminal,
    })
}

/// Restrictions on the task distribution used to diversify populations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskBias {
    /// Key-navigation door type, `1..=4`.
    DoorType(u8),
    /// Cart-pole force sign and task type.
    ForceType { positive: bool, task_type: u8 },
    /// Point-mass gate entirely left of the start (`p + w/2 < 0`).
    GateLeft,
    /// Complement of [`TaskBias::GateLeft`].
    GateRight,
}

impl TaskBias {
    pub fn matches(self, task: &Task) -> bool {
        let s = &task.state0;
        match (self, task.env) {
            (TaskBias::DoorType(d), EnvId::MultiKeyNav(_)) => multikeynav::door_index(s) + 1 == d as usize,
            (TaskBias::ForceType { positive, task_type }, EnvId::CartPoleVar) => {
                (s[4] > 0.0) == positive && s[5] as u8 == task_type
            }
            (TaskBias::GateLeft, EnvId::PointMass) => s[4] + 0.5 * s[5] < 0.0,
            (TaskBias::GateRight, EnvId::PointMass) => s[4] + 0.5 * s[5] >= 0.0,
            _ => false,
        }
    }

    pub fn applies_to(self, env: EnvId) -> bool {
        matches!(
            (self, env),
            (TaskBias::DoorType(1..=4), EnvId::MultiKeyNav(_))
                | (TaskBias::ForceType { task_type: 0 | 1, .. }, EnvId::CartPoleVar)
                | (TaskBias::GateLeft | TaskBias::GateRight, EnvId::PointMass)
        )
    }
}

impl fmt::Display for TaskBias {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskBias::DoorType(d) => write!(f, "door{d}"),
            TaskBias::ForceType { positive, task_type } => {
                write!(f, "{}f-type{task_type}", if *positive { "pos" } else { "neg" })
            }
            TaskBias::GateLeft => f.write_str("gate-left"),
            TaskBias::GateRight => f.write_str("gate-right"),
        }
    }
}

impl FromStr for TaskBias {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown task bias '{s}'"));
        match s {
            "gate-left" => Ok(TaskBias::GateLeft),
            "gate-right" => Ok(TaskBias::GateRight),
            _ if s.starts_with("door") => {
                let d: u8 = s[4..].parse().map_err(|_| bad())?;
                if (1..=4).contains(&d) {
                    Ok(TaskBias::DoorType(d))
                } else {
                    Err(bad())
                }
            }
            _ => {
                let (sign, rest) = s.split_once("f-type").ok_or_else(bad)?;
                let positive = match sign {
                    "pos" => true,
                    "neg" => false,
                    _ => return Err(bad()),
                };
                let task_type: u8 = rest.parse().map_err(|_| bad())?;
                if task_type > 1 {
                    return Err(bad());
                }
                Ok(TaskBias::ForceType { positive, task_type })
            }
        }
    }
}

/// Draws consecutive candidates before a filter is declared unsatisfiable.
pub const MAX_FILTER_DRAWS: u64 = 100_000;

fn sample_state(env: EnvId, rng: &mut Rng) -> Vec<f64> {
    match env {
        EnvId::MultiKeyNav(_) => multikeynav::sample(rng),
        EnvId::CartPoleVar => cartpole::sample(rng),
        EnvId::PointMass => pointmass::sample(rng),
    }
}

/// Samples from the environment's initial-state distribution, optionally
/// restricted by `bias`.
pub fn sample_task(env: EnvId, rng: &mut Rng, bias: Option<TaskBias>) -> Result<Task> {
    match bias {
        None => Ok(Task {
            env,
            state0: sample_state(env, rng),
        }),
        Some(b) => sample_task_where(env, rng, |t| b.matches(t)),
    }
}

/// Rejection sampling against an arbitrary predicate.
pub fn sample_task_where<F>(env: EnvId, rng: &mut Rng, accept: F) -> Result<Task>
where
    F: Fn(&Task) -> bool,
{
    for _ in 0..MAX_FILTER_DRAWS {
        let t = Task {
            env,
            state0: sample_state(env, rng),
        };
        if accept(&t) {
            return Ok(t);
        }
    }
    Err(Error::FilterExhausted(MAX_FILTER_DRAWS))
}

pub fn sample_tasks(env: EnvId, n: usize, rng: &mut Rng, bias: Option<TaskBias>) -> Result<Vec<Task>> {
    (0..n).map(|_| sample_task(env, rng, bias)).collect()
}

/// Scripted expert action for any environment.
pub fn expert_action(env: EnvId, state: &[f64]) -> Result<Action> {
    match env {
        EnvId::MultiKeyNav(v) => multikeynav::expert(v, state).map(Action::Discrete),
        EnvId::CartPoleVar => cartpole::expert(state).map(Action::Discrete),
        EnvId::PointMass => pointmass::expert(state).map(Action::Continuous),
    }
}

/// Key-navigation snapshot validation set: every combination of locations
/// {0.05, 0.45, 0.85}, held keys, and door types.
pub fn keynav_snapshot_tasks(variant: KeyNavVariant) -> Vec<Task> {
    let mut out = Vec::with_capacity(3 * 16 * 4);
    for &loc in &[0.05, 0.45, 0.85] {
        for keys in 0..16u8 {
            for door in 0..4usize {
                let mut s = vec![loc];
                s.extend((0..4).map(|k| f64::from((keys >> k) & 1)));
                s.push((door / 2) as f64);
                s.push((door % 2) as f64);
                out.push(Task {
                    env: EnvId::MultiKeyNav(variant),
                    state0: s,
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_names_round_trip() {
        for name in ENV_NAMES {
            assert_eq!(name.parse::<EnvId>().unwrap().name(), name);
        }
        let err = "gridworld".parse::<EnvId>().unwrap_err().to_string();
        assert!(err.contains("multikeynav") && err.contains("pointmass"));
    }

    #[test]
    fn bias_names_round_trip() {
        let all = [
            TaskBias::DoorType(2),
            TaskBias::ForceType { positive: false, task_type: 1 },
            TaskBias::GateLeft,
            TaskBias::GateRight,
        ];
        for b in all {
            assert_eq!(b.to_string().parse::<TaskBias>().unwrap(), b);
        }
        assert!("door9".parse::<TaskBias>().is_err());
    }

    #[test]
    fn door_bias_restricts_samples() {
        let mut rng = Rng::new(1);
        for _ in 0..500 {
            let t = sample_task(EnvId::MULTI_KEY_NAV, &mut rng, Some(TaskBias::DoorType(2))).unwrap();
            assert_eq!((t.state0[5], t.state0[6]), (0.0, 1.0));
        }
    }

    #[test]
    fn gate_bias_restricts_samples() {
        let mut rng = Rng::new(2);
        for _ in 0..500 {
            let t = sample_task(EnvId::PointMass, &mut rng, Some(TaskBias::GateLeft)).unwrap();
            assert!(t.state0[4] + 0.5 * t.state0[5] < 0.0);
            pointmass::validate(&t.state0).unwrap();
        }
    }

    #[test]
    fn door_types_are_uniform() {
        // 10^4 draws: sd of a frequency is sqrt(0.25·0.75/10^4) ≈ 0.0043,
        // so ±0.02 is more than 4.5 sd.
        let mut rng = Rng::new(3);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let t = sample_task(EnvId::MULTI_KEY_NAV, &mut rng, None).unwrap();
            counts[multikeynav::door_index(&t.state0)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e4 - 0.25).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn impossible_filter_errors() {
        let mut rng = Rng::new(4);
        let r = sample_task_where(EnvId::CartPoleVar, &mut rng, |_| false);
        assert!(matches!(r, Err(Error::FilterExhausted(MAX_FILTER_DRAWS))));
    }

    #[test]
    fn mismatched_action_kind_is_error() {
        let mut rng = Rng::new(0);
        let t = sample_task(EnvId::PointMass, &mut rng, None).unwrap();
        assert!(step(EnvId::PointMass, &t.state0, Action::Discrete(0), &mut rng).is_err());
    }

    #[test]
    fn snapshot_set_has_all_combinations() {
        let tasks = keynav_snapshot_tasks(KeyNavVariant::Standard);
        assert_eq!(tasks.len(), 192);
        for t in &tasks {
            multikeynav::validate(&t.state0).unwrap();
        }
    }

    #[test]
    fn sampled_states_are_valid() {
        let mut rng = Rng::new(8);
        for env in [EnvId::MULTI_KEY_NAV, EnvId::CartPoleVar, EnvId::PointMass] {
            for _ in 0..1000 {
                let t = sample_task(env, &mut rng, None).unwrap();
                env.validate_state(&t.state0).unwrap();
            }
        }
    }
}
