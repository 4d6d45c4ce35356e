use super::{expert_action, step, Action, ActionSpace, EnvId, Task, Terminal};
use crate::error::Result;
use crate::numcore::Rng;

/// Anything that picks actions from states.
pub trait Actor {
    fn act(&self, env: EnvId, state: &[f64], rng: &mut Rng) -> Result<Action>;
}

impl<A: Actor + ?Sized> Actor for &A {
    fn act(&self, env: EnvId, state: &[f64], rng: &mut Rng) -> Result<Action> {
        (**self).act(env, state, rng)
    }
}

/// The scripted expert as an actor.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertActor;

impl Actor for ExpertActor {
    fn act(&self, env: EnvId, state: &[f64], _rng: &mut Rng) -> Result<Action> {
        expert_action(env, state)
    }
}

/// Uniform over the discrete actions, or over the action box.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformRandomActor;

impl Actor for UniformRandomActor {
    fn act(&self, env: EnvId, _state: &[f64], rng: &mut Rng) -> Result<Action> {
        Ok(match env.action_space() {
            ActionSpace::Discrete(n) => Action::Discrete(rng.index(n)),
            ActionSpace::Box { limit, .. } => {
                Action::Continuous([rng.uniform(-limit, limit), rng.uniform(-limit, limit)])
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<(Vec<f64>, Action)>,
    pub terminal: Terminal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub success: bool,
    pub terminal: Terminal,
    pub length: usize,
    pub trajectory: Option<Trajectory>,
}

/// Runs one episode from `task.state0` until it terminates.
pub fn rollout<A: Actor + ?Sized>(task: &Task, actor: &A, rng: &mut Rng, record: bool) -> Result<Rollout> {
    let env = task.env;
    let horizon = env.horizon();
    let mut state = task.state0.clone();
    let mut steps = Vec::new();
    let mut terminal = Terminal::Alive;
    let mut t = 0;
    while terminal == Terminal::Alive {
        let action = actor.act(env, &state, rng)?;
        let out = step(env, &state, action, rng)?;
        if record {
            steps.push((std::mem::take(&mut state), action));
        }
        state = out.next_state;
        terminal = out.terminal;
        t += 1;
        if terminal == Terminal::Alive && t >= horizon {
            terminal = Terminal::TimedOut;
        }
    }
    Ok(Rollout {
        success: terminal == Terminal::Solved,
        terminal,
        length: t,
        trajectory: record.then_some(Trajectory { steps, terminal }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{sample_task, KeyNavVariant};

    #[test]
    fn expert_solves_trivial_task() {
        let task = Task::new(EnvId::MULTI_KEY_NAV, vec![0.95, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let mut rng = Rng::new(0);
        let r = rollout(&task, &ExpertActor, &mut rng, true).unwrap();
        assert!(r.success);
        assert_eq!(r.length, 1);
        assert_eq!(r.trajectory.unwrap().steps.len(), 1);
    }

    #[test]
    fn expert_success_rate_on_keynav() {
        // Only γ-failures can stop the expert: at most 40 steps at
        // γ = 0.999 gives a success floor of 0.999^40 ≈ 0.96.
        let mut rng = Rng::new(10);
        let mut wins = 0;
        for _ in 0..500 {
            let t = sample_task(EnvId::MULTI_KEY_NAV, &mut rng, None).unwrap();
            let r = rollout(&t, &ExpertActor, &mut rng, false).unwrap();
            assert!(matches!(r.terminal, Terminal::Solved | Terminal::FailedByGamma));
            wins += usize::from(r.success);
        }
        assert!(wins as f64 / 500.0 >= 0.95, "{wins}");
    }

    #[test]
    fn expert_solves_variants() {
        let mut rng = Rng::new(12);
        for v in [KeyNavVariant::AllDoorsA, KeyNavVariant::AllDoorsAB] {
            for _ in 0..100 {
                let t = sample_task(EnvId::MultiKeyNav(v), &mut rng, None).unwrap();
                let r = rollout(&t, &ExpertActor, &mut rng, false).unwrap();
                assert!(matches!(r.terminal, Terminal::Solved | Terminal::FailedByGamma));
            }
        }
    }

    #[test]
    fn random_policy_rarely_solves_keynav() {
        let mut rng = Rng::new(11);
        let mut wins = 0;
        for _ in 0..1000 {
            let t = sample_task(EnvId::MULTI_KEY_NAV, &mut rng, None).unwrap();
            wins += usize::from(rollout(&t, &UniformRandomActor, &mut rng, false).unwrap().success);
        }
        assert!((wins as f64) / 1000.0 < 0.05, "{wins}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mut rng = Rng::new(3);
        let t = sample_task(EnvId::MULTI_KEY_NAV, &mut rng, None).unwrap();
        let a = rollout(&t, &UniformRandomActor, &mut Rng::new(99), true).unwrap();
        let b = rollout(&t, &UniformRandomActor, &mut Rng::new(99), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn expert_solves_pointmass_mostly() {
        let mut rng = Rng::new(21);
        let mut wins = 0;
        let n = 300;
        for _ in 0..n {
            let t = sample_task(EnvId::PointMass, &mut rng, None).unwrap();
            wins += usize::from(rollout(&t, &ExpertActor, &mut rng, false).unwrap().success);
        }
        // γ = 0.99 over roughly 60 steps caps success near 0.55.
        assert!(wins as f64 / n as f64 > 0.4, "{wins}/{n}");
    }

    #[test]
    fn pointmass_expert_never_crashes_without_gamma() {
        let mut rng = Rng::new(22);
        for _ in 0..300 {
            let t = sample_task(EnvId::PointMass, &mut rng, None).unwrap();
            let mut s = t.state0.clone();
            let mut term = Terminal::Alive;
            let mut steps = 0;
            while term == Terminal::Alive && steps < crate::envs::pointmass::HORIZON * 4 {
                let a = match expert_action(EnvId::PointMass, &s).unwrap() {
                    Action::Continuous(f) => f,
                    _ => unreachable!(),
                };
                let (n, tt) = crate::envs::pointmass::step(&s, a).unwrap();
                s = n;
                term = tt;
                steps += 1;
            }
            assert_eq!(term, Terminal::Solved, "task {:?} steps {steps}", t.state0);
            assert!(steps <= crate::envs::pointmass::HORIZON, "task {:?} took {steps}", t.state0);
        }
    }
}
