//! Agent populations: the finite set of policy snapshots standing in for
//! the space of agents. Agents are drawn uniformly from it.

mod policy;
mod store;
mod train;

pub use policy::{feature_dim, features, hidden_sizes, Policy, MASKED_LOGIT};
pub use store::{load_population, read_manifest, save_population, PopulationManifest};
pub use train::{
    evaluate_success, train_bc, train_pg, BcConfig, PgConfig, Reinforce, SnapshotRule, SubpopSpec,
    SurvivalCurriculum,
};

use crate::envs::{keynav_snapshot_tasks, multikeynav, rollout, sample_tasks, EnvId, Task, TaskBias};
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, Rng};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMethod {
    BehaviouralCloning,
    PolicyGradient,
}

impl fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMethod::BehaviouralCloning => "bc",
            TrainMethod::PolicyGradient => "pg",
        })
    }
}

impl FromStr for TrainMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bc" => Ok(TrainMethod::BehaviouralCloning),
            "pg" => Ok(TrainMethod::PolicyGradient),
            _ => Err(Error::Parse(format!("unknown training method '{s}' (valid: bc, pg)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub method: TrainMethod,
    pub mask: Vec<usize>,
    pub bias: Option<TaskBias>,
    pub snapshot_index: usize,
    pub validation_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentSnapshot {
    pub params: Vec<f64>,
    pub provenance: Provenance,
}

/// Anything that can report whether agent `k` solves a task on one rollout.
///
/// Estimators are written against this trait so that synthetic populations
/// with known outcome distributions can stand in for trained policies.
pub trait AgentPool: Sync {
    fn env(&self) -> EnvId;
    fn num_agents(&self) -> usize;
    fn attempt(&self, agent: usize, task: &Task, rng: &mut Rng) -> Result<bool>;
}

#[derive(Debug, Clone)]
pub struct Population {
    env: EnvId,
    snapshots: Vec<AgentSnapshot>,
    policies: Vec<Policy>,
}

impl Population {
    pub fn new(env: EnvId, snapshots: Vec<AgentSnapshot>) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::InvalidArgument("a population needs at least one agent".into()));
        }
        if !snapshots.iter().any(|s| s.provenance.snapshot_index == 0) {
            return Err(Error::InvalidArgument("a population must include an untrained snapshot".into()));
        }
        let mut rng = Rng::new(0);
        let policies = snapshots
            .iter()
            .map(|s| Policy::new(env, &s.provenance.mask, &mut rng)?.with_params(&s.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            env,
            snapshots,
            policies,
        })
    }

    pub fn snapshots(&self) -> &[AgentSnapshot] {
        &self.snapshots
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// A new population with the agents at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let snaps = indices
            .iter()
            .map(|&i| {
                self.snapshots
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::InvalidArgument(format!("agent {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let policies = indices.iter().map(|&i| self.policies[i].clone()).collect();
        Ok(Self {
            env: self.env,
            snapshots: snaps,
            policies,
        })
    }
}

impl AgentPool for Population {
    fn env(&self) -> EnvId {
        self.env
    }

    fn num_agents(&self) -> usize {
        self.policies.len()
    }

    fn attempt(&self, agent: usize, task: &Task, rng: &mut Rng) -> Result<bool> {
        if task.env != self.env {
            return Err(Error::EnvMismatch {
                expected: self.env.name().into(),
                got: task.env.name().into(),
            });
        }
        Ok(rollout(task, &self.policies[agent], rng, false)?.success)
    }
}

/// Monte-Carlo probability of success: every agent attempts the task
/// `reps_per_agent` times.
pub fn estimate_pos<P: AgentPool + ?Sized>(task: &Task, pool: &P, reps_per_agent: usize, rng: &mut Rng) -> Result<f64> {
    if reps_per_agent == 0 {
        return Err(Error::InvalidArgument("reps_per_agent must be at least 1".into()));
    }
    let mut wins = 0usize;
    for a in 0..pool.num_agents() {
        for _ in 0..reps_per_agent {
            wins += usize::from(pool.attempt(a, task, rng)?);
        }
    }
    Ok(wins as f64 / (pool.num_agents() * reps_per_agent) as f64)
}

/// Named population recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecipeKind {
    /// Key navigation: action masking. Cart-pole: force/type-biased tasks.
    /// Point mass: gate-side-biased tasks.
    Standard,
    /// Biased task distributions only (key navigation: door types).
    Biased,
    /// Key navigation with every pickKey action masked.
    KeysMasked,
}

impl fmt::Display for RecipeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RecipeKind::Standard => "standard",
            RecipeKind::Biased => "biased",
            RecipeKind::KeysMasked => "keys-masked",
        })
    }
}

impl FromStr for RecipeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(RecipeKind::Standard),
            "biased" => Ok(RecipeKind::Biased),
            "keys-masked" => Ok(RecipeKind::KeysMasked),
            _ => Err(Error::Parse(format!(
                "unknown recipe '{s}' (valid: standard, biased, keys-masked)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Recipe {
    pub kind: RecipeKind,
    pub subpops: Vec<SubpopSpec>,
    pub bc: BcConfig,
    pub pg: PgConfig,
    pub snapshot_delta: f64,
    pub snapshot_reps: usize,
    /// Size of the sampled validation set (ignored for key navigation,
    /// whose validation set is the fixed location/key/door grid).
    pub snapshot_tasks: usize,
}

const PICK_KEYS: [usize; 4] = [
    multikeynav::PICK_A,
    multikeynav::PICK_A + 1,
    multikeynav::PICK_A + 2,
    multikeynav::PICK_A + 3,
];

impl Recipe {
    pub fn new(env: EnvId, kind: RecipeKind) -> Result<Self> {
        let bc = |mask: Vec<usize>, bias: Option<TaskBias>| SubpopSpec {
            env,
            method: TrainMethod::BehaviouralCloning,
            mask,
            bias,
        };
        let subpops = match (env, kind) {
            (EnvId::MultiKeyNav(_), RecipeKind::Standard) => {
                let mut v = vec![bc(vec![], None)];
                v.extend(PICK_KEYS.iter().map(|&k| bc(vec![k], None)));
                v.push(bc(PICK_KEYS.to_vec(), None));
                v
            }
            (EnvId::MultiKeyNav(_), RecipeKind::Biased) => {
                let mut v = vec![bc(vec![], None)];
                v.extend((1..=4).map(|d| bc(vec![], Some(TaskBias::DoorType(d)))));
                v
            }
            (EnvId::MultiKeyNav(_), RecipeKind::KeysMasked) => vec![bc(PICK_KEYS.to_vec(), None)],
            (EnvId::CartPoleVar, RecipeKind::Standard | RecipeKind::Biased) => {
                let mut v = vec![bc(vec![], None)];
                for positive in [true, false] {
                    for task_type in [0, 1] {
                        v.push(bc(vec![], Some(TaskBias::ForceType { positive, task_type })));
                    }
                }
                v
            }
            (EnvId::PointMass, RecipeKind::Standard | RecipeKind::Biased) => vec![
                bc(vec![], None),
                bc(vec![], Some(TaskBias::GateLeft)),
                bc(vec![], Some(TaskBias::GateRight)),
            ],
            (env, kind) => {
                return Err(Error::InvalidArgument(format!("recipe '{kind}' is not defined for {env}")))
            }
        };
        let snapshot_tasks = match env {
            EnvId::CartPoleVar => 1000,
            EnvId::PointMass => 100,
            EnvId::MultiKeyNav(_) => 0,
        };
        Ok(Self {
            kind,
            subpops,
            bc: BcConfig::for_env(env),
            pg: PgConfig::for_env(env),
            snapshot_delta: 0.01,
            snapshot_reps: 10,
            snapshot_tasks,
        })
    }

    pub fn env(&self) -> Option<EnvId> {
        self.subpops.first().map(|s| s.env)
    }
}

/// Validation tasks used by the snapshot rule.
pub fn snapshot_tasks(env: EnvId, n: usize, seed: u64) -> Result<Vec<Task>> {
    match env {
        EnvId::MultiKeyNav(v) => Ok(keynav_snapshot_tasks(v)),
        _ => sample_tasks(env, n, &mut Rng::new(seed), None),
    }
}

/// Trains every subpopulation of `recipe` and concatenates the snapshots.
pub fn build_population(env: EnvId, recipe: &Recipe, seed: u64) -> Result<Population> {
    if recipe.subpops.is_empty() {
        return Err(Error::InvalidArgument("population recipe is empty".into()));
    }
    let mut rule = SnapshotRule::new(snapshot_tasks(env, recipe.snapshot_tasks, derive_seed(seed, &[u64::MAX]))?);
    rule.delta = recipe.snapshot_delta;
    rule.reps_per_task = recipe.snapshot_reps;
    let mut all = Vec::new();
    for (i, spec) in recipe.subpops.iter().enumerate() {
        if spec.env != env {
            return Err(Error::EnvMismatch {
                expected: env.name().into(),
                got: spec.env.name().into(),
            });
        }
        let mut rng = Rng::derived(seed, &[i as u64]);
        let snaps = match spec.method {
            TrainMethod::BehaviouralCloning => train_bc(spec, &recipe.bc, &rule, &mut rng)?,
            TrainMethod::PolicyGradient => train_pg(spec, &recipe.pg, &rule, &mut rng)?,
        };
        all.extend(snaps);
    }
    Population::new(env, all)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{sample_task, ExpertActor};

    /// One agent that always plays the expert.
    struct ExpertPool(EnvId);

    impl AgentPool for ExpertPool {
        fn env(&self) -> EnvId {
            self.0
        }
        fn num_agents(&self) -> usize {
            1
        }
        fn attempt(&self, _agent: usize, task: &Task, rng: &mut Rng) -> Result<bool> {
            Ok(rollout(task, &ExpertActor, rng, false)?.success)
        }
    }

    fn small_recipe(env: EnvId, kind: RecipeKind) -> Recipe {
        let mut r = Recipe::new(env, kind).unwrap();
        r.bc.epochs = 6;
        r.bc.rollouts_per_epoch = 60;
        r.bc.learning_rate = 3e-3;
        r
    }

    #[test]
    fn keynav_recipe_has_six_subpopulations() {
        let r = Recipe::new(EnvId::MULTI_KEY_NAV, RecipeKind::Standard).unwrap();
        assert!(r.subpops.len() >= 5);
        assert_eq!(r.subpops.len(), 6);
        assert!(Recipe::new(EnvId::CartPoleVar, RecipeKind::KeysMasked).is_err());
    }

    #[test]
    fn expert_pool_on_one_step_task() {
        let task = Task::new(EnvId::MULTI_KEY_NAV, vec![0.95, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = Rng::new(1);
        assert_eq!(estimate_pos(&task, &ExpertPool(EnvId::MULTI_KEY_NAV), 50, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn untrained_policy_fails_hard_tasks() {
        let mut rng = Rng::new(2);
        let policy = Policy::new(EnvId::MULTI_KEY_NAV, &[], &mut rng).unwrap();
        let snap = AgentSnapshot {
            params: policy.net().params(),
            provenance: Provenance {
                method: TrainMethod::BehaviouralCloning,
                mask: vec![],
                bias: None,
                snapshot_index: 0,
                validation_score: 0.0,
            },
        };
        let pop = Population::new(EnvId::MULTI_KEY_NAV, vec![snap]).unwrap();
        // door Type 4 from location 0: keys C and D still needed.
        let task = Task::new(EnvId::MULTI_KEY_NAV, vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(estimate_pos(&task, &pop, 100, &mut rng).unwrap() < 0.1);
    }

    #[test]
    fn population_requires_untrained_snapshot() {
        assert!(Population::new(EnvId::MULTI_KEY_NAV, vec![]).is_err());
    }

    #[test]
    fn bc_population_snapshots_follow_rule() {
        let recipe = small_recipe(EnvId::MULTI_KEY_NAV, RecipeKind::Standard);
        let pop = build_population(EnvId::MULTI_KEY_NAV, &recipe, 7).unwrap();
        assert_eq!(pop.snapshots()[0].provenance.snapshot_index, 0);
        let mut starts = 0;
        for w in pop.snapshots().windows(2) {
            let (a, b) = (&w[0].provenance, &w[1].provenance);
            if b.snapshot_index == 0 {
                starts += 1;
                continue;
            }
            assert_eq!(b.snapshot_index, a.snapshot_index + 1);
            assert!(b.validation_score >= a.validation_score + 0.01 - 1e-12);
        }
        assert_eq!(starts + 1, recipe.subpops.len());
        for (snap, policy) in pop.snapshots().iter().zip(pop.policies()) {
            assert_eq!(policy.masked_actions(), snap.provenance.mask);
        }
    }

    #[test]
    fn bc_reaches_high_success_on_keynav() {
        let spec = SubpopSpec {
            env: EnvId::MULTI_KEY_NAV,
            method: TrainMethod::BehaviouralCloning,
            mask: vec![],
            bias: None,
        };
        let cfg = BcConfig {
            epochs: 150,
            ..BcConfig::default()
        };
        let rule = SnapshotRule::new(keynav_snapshot_tasks(crate::envs::KeyNavVariant::Standard));
        let mut rng = Rng::new(3);
        let snaps = train_bc(&spec, &cfg, &rule, &mut rng).unwrap();
        let last = snaps.last().unwrap();
        let policy = Policy::new(EnvId::MULTI_KEY_NAV, &[], &mut rng)
            .unwrap()
            .with_params(&last.params)
            .unwrap();
        let held_out = sample_tasks(EnvId::MULTI_KEY_NAV, 300, &mut Rng::new(99), None).unwrap();
        let score = evaluate_success(&policy, &held_out, 3, 5).unwrap();
        assert!(score >= 0.8, "held-out success {score}");
    }

    #[test]
    fn zero_return_batch_leaves_policy_unchanged() {
        let mut rng = Rng::new(4);
        let policy = Policy::new(EnvId::MULTI_KEY_NAV, &[], &mut rng).unwrap();
        let before = policy.net().params();
        let mut learner = Reinforce::new(policy, 1e-2, 0.9);
        let task = sample_task(EnvId::MULTI_KEY_NAV, &mut rng, None).unwrap();
        let r = rollout(&task, &learner.policy, &mut rng, true).unwrap();
        let steps = r.trajectory.unwrap().steps;
        learner.update(&[(steps.clone(), 0.0), (steps, 0.0)]).unwrap();
        assert_eq!(learner.policy.net().params(), before);
    }

    #[test]
    fn pg_improves_cartpole() {
        let spec = SubpopSpec {
            env: EnvId::CartPoleVar,
            method: TrainMethod::PolicyGradient,
            mask: vec![],
            bias: None,
        };
        let mut cfg = PgConfig::for_env(EnvId::CartPoleVar);
        cfg.iterations = 150;
        cfg.eval_every = 50;
        cfg.learning_rate = 3e-3;
        let mut rule = SnapshotRule::new(snapshot_tasks(EnvId::CartPoleVar, 20, 1).unwrap());
        rule.reps_per_task = 2;
        let mut rng = Rng::new(5);
        let snaps = train_pg(&spec, &cfg, &rule, &mut rng).unwrap();
        let pop = Population::new(EnvId::CartPoleVar, snaps).unwrap();
        let tasks = sample_tasks(EnvId::CartPoleVar, 100, &mut Rng::new(8), None).unwrap();
        let first = evaluate_success(&pop.policies()[0], &tasks, 1, 3).unwrap();
        let last = evaluate_success(pop.policies().last().unwrap(), &tasks, 1, 3).unwrap();
        assert!(last > first, "untrained {first}, trained {last}");
    }
}
