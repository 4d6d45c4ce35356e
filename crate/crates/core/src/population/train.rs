//! Policy training with snapshotting: behavioural cloning from the scripted
//! experts, and REINFORCE on the binary episodic return.

use super::policy::Policy;
use super::{AgentSnapshot, Provenance, TrainMethod};
use crate::envs::{expert_action, rollout, sample_task, step, Action, EnvId, Task, TaskBias, Terminal};
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, AdamConfig, AdamState, Rng};
use rayon::prelude::*;

/// Records a snapshot whenever validation success rises by `delta` over the
/// last recorded one.
#[derive(Debug, Clone)]
pub struct SnapshotRule {
    pub delta: f64,
    pub reps_per_task: usize,
    pub tasks: Vec<Task>,
}

impl SnapshotRule {
    pub fn new(tasks: Vec<Task>) -> Self {
        Self {
            delta: 0.01,
            reps_per_task: 10,
            tasks,
        }
    }
}

/// Mean success of `policy` over `tasks × reps` seeded rollouts.
pub fn evaluate_success(policy: &Policy, tasks: &[Task], reps: usize, seed: u64) -> Result<f64> {
    if tasks.is_empty() || reps == 0 {
        return Err(Error::InvalidArgument("evaluation needs tasks and repetitions".into()));
    }
    let wins = tasks
        .par_iter()
        .enumerate()
        .map(|(i, t)| -> Result<usize> {
            let mut n = 0;
            for r in 0..reps {
                let mut rng = Rng::derived(seed, &[i as u64, r as u64]);
                n += usize::from(rollout(t, policy, &mut rng, false)?.success);
            }
            Ok(n)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(wins as f64 / (tasks.len() * reps) as f64)
}

/// What every trainer shares: where tasks come from and how the policy is
/// masked.
#[derive(Debug, Clone)]
pub struct SubpopSpec {
    pub env: EnvId,
    pub method: TrainMethod,
    pub mask: Vec<usize>,
    pub bias: Option<TaskBias>,
}

struct Recorder<'a> {
    spec: &'a SubpopSpec,
    rule: &'a SnapshotRule,
    eval_seed: u64,
    last: f64,
    out: Vec<AgentSnapshot>,
}

impl<'a> Recorder<'a> {
    fn new(spec: &'a SubpopSpec, rule: &'a SnapshotRule, eval_seed: u64, policy: &Policy) -> Result<Self> {
        let score = evaluate_success(policy, &rule.tasks, rule.reps_per_task, eval_seed)?;
        let out = vec![AgentSnapshot {
            params: policy.net().params(),
            provenance: Provenance {
                method: spec.method,
                mask: spec.mask.clone(),
                bias: spec.bias,
                snapshot_index: 0,
                validation_score: score,
            },
        }];
        Ok(Self {
            spec,
            rule,
            eval_seed,
            last: score,
            out,
        })
    }

    fn consider(&mut self, policy: &Policy, round: u64) -> Result<f64> {
        let seed = derive_seed(self.eval_seed, &[round]);
        let score = evaluate_success(policy, &self.rule.tasks, self.rule.reps_per_task, seed)?;
        if score >= self.last + self.rule.delta {
            self.last = score;
            let index = self.out.len();
            self.out.push(AgentSnapshot {
                params: policy.net().params(),
                provenance: Provenance {
                    method: self.spec.method,
                    mask: self.spec.mask.clone(),
                    bias: self.spec.bias,
                    snapshot_index: index,
                    validation_score: score,
                },
            });
        }
        Ok(score)
    }
}

fn check_finite(loss: f64, stage: &str, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            stage: stage.into(),
            detail: format!("loss {loss} at epoch {epoch}"),
        })
    }
}

#[derive(Debug, Clone)]
pub struct BcConfig {
    pub epochs: usize,
    pub rollouts_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 110,
            rollouts_per_epoch: 200,
            batch_size: 64,
            learning_rate: 3e-3,
        }
    }
}

impl BcConfig {
    /// The cart-pole expert is a linear controller that a network fits in a
    /// single full epoch, so epochs there are small to leave room for
    /// intermediate snapshots.
    pub fn for_env(env: EnvId) -> Self {
        match env {
            EnvId::CartPoleVar => Self {
                epochs: 120,
                rollouts_per_epoch: 4,
                batch_size: 64,
                learning_rate: 1e-3,
            },
            _ => Self::default(),
        }
    }
}

/// Expert-visited states with the expert's actions, from fresh rollouts.
fn expert_dataset(spec: &SubpopSpec, n: usize, rng: &mut Rng) -> Result<Vec<(Vec<f64>, Action)>> {
    let mut data = Vec::new();
    for _ in 0..n {
        let task = sample_task(spec.env, rng, spec.bias)?;
        let mut state = task.state0.clone();
        let mut t = 0;
        loop {
            let a = expert_action(spec.env, &state)?;
            let out = step(spec.env, &state, a, rng)?;
            let keep = match a {
                Action::Discrete(k) => !spec.mask.contains(&k),
                Action::Continuous(_) => true,
            };
            if keep {
                data.push((std::mem::take(&mut state), a));
            }
            state = out.next_state;
            t += 1;
            if out.terminal != Terminal::Alive || t >= spec.env.horizon() {
                break;
            }
        }
    }
    Ok(data)
}

/// Behavioural cloning from the scripted expert. Samples whose expert action
/// is masked are dropped, since a masked policy cannot represent them.
pub fn train_bc(spec: &SubpopSpec, cfg: &BcConfig, rule: &SnapshotRule, rng: &mut Rng) -> Result<Vec<AgentSnapshot>> {
    let mut policy = Policy::new(spec.env, &spec.mask, rng)?;
    let mut adam = AdamState::for_mlp(policy.net(), AdamConfig::with_lr(cfg.learning_rate));
    let eval_seed = rng.next_seed();
    let mut rec = Recorder::new(spec, rule, eval_seed, &policy)?;
    let n_params = policy.net().num_params();

    for epoch in 0..cfg.epochs {
        let mut data = expert_dataset(spec, cfg.rollouts_per_epoch, rng)?;
        rng.shuffle(&mut data);
        let mut epoch_loss = 0.0;
        for batch in data.chunks(cfg.batch_size.max(1)) {
            let mut grad = vec![0.0; n_params];
            let scale = 1.0 / batch.len() as f64;
            for (state, action) in batch {
                // Minimising −log π(a*|s) for discrete heads; for the Gaussian
                // head the same gradient is the scaled squared error on the mean.
                let lp = policy.accumulate_log_prob_grad(state, *action, -scale, &mut grad)?;
                epoch_loss -= lp * scale;
            }
            adam.step_mlp(policy.net_mut(), &grad)?;
        }
        check_finite(epoch_loss, "behavioural cloning", epoch)?;
        rec.consider(&policy, epoch as u64 + 1)?;
    }
    Ok(rec.out)
}

/// Survival-length curriculum for tasks whose success means "stay alive to
/// the horizon": during training an episode that lasts `length` steps counts
/// as solved, and `length` grows by `growth` once batch success exceeds
/// `promote_at`.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalCurriculum {
    pub start: usize,
    pub growth: f64,
    pub promote_at: f64,
}

#[derive(Debug, Clone)]
pub struct PgConfig {
    pub iterations: usize,
    pub episodes_per_batch: usize,
    pub learning_rate: f64,
    pub baseline_decay: f64,
    /// Validation happens every this many iterations.
    pub eval_every: usize,
    pub curriculum: Option<SurvivalCurriculum>,
}

impl Default for PgConfig {
    fn default() -> Self {
        Self {
            iterations: 300,
            episodes_per_batch: 32,
            learning_rate: 1e-3,
            baseline_decay: 0.9,
            eval_every: 10,
            curriculum: None,
        }
    }
}

impl PgConfig {
    pub fn for_env(env: EnvId) -> Self {
        let curriculum = (env == EnvId::CartPoleVar).then_some(SurvivalCurriculum {
            start: 25,
            growth: 1.3,
            promote_at: 0.6,
        });
        Self {
            curriculum,
            ..Self::default()
        }
    }
}

struct Episode {
    steps: Vec<(Vec<f64>, Action)>,
    ret: f64,
}

fn run_episode(task: &Task, policy: &Policy, cap: Option<usize>, rng: &mut Rng) -> Result<Episode> {
    let r = rollout(task, policy, rng, true)?;
    let traj = r.trajectory.expect("recorded");
    let mut steps = traj.steps;
    let ret = match cap {
        Some(c) if r.length >= c => {
            steps.truncate(c);
            1.0
        }
        _ => f64::from(u8::from(r.success)),
    };
    Ok(Episode { steps, ret })
}

/// REINFORCE state kept across batches.
pub struct Reinforce {
    pub policy: Policy,
    adam: AdamState,
    baseline: Option<f64>,
    decay: f64,
}

impl Reinforce {
    pub fn new(policy: Policy, learning_rate: f64, decay: f64) -> Self {
        let adam = AdamState::for_mlp(policy.net(), AdamConfig::with_lr(learning_rate));
        Self {
            policy,
            adam,
            baseline: None,
            decay,
        }
    }

    /// One ascent step on `mean_e (G_e − b) Σ_t log π(a_t|s_t)`, with the
    /// moving-average baseline `b` seeded from the first batch mean.
    pub fn update(&mut self, batch: &[(Vec<(Vec<f64>, Action)>, f64)]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        let mean = batch.iter().map(|(_, g)| g).sum::<f64>() / batch.len() as f64;
        let b = *self.baseline.get_or_insert(mean);
        let mut grad = vec![0.0; self.policy.net().num_params()];
        let scale = 1.0 / batch.len() as f64;
        for (steps, g) in batch {
            let adv = g - b;
            if adv == 0.0 {
                continue;
            }
            for (s, a) in steps {
                self.policy.accumulate_log_prob_grad(s, *a, -adv * scale, &mut grad)?;
            }
        }
        self.adam.step_mlp(self.policy.net_mut(), &grad)?;
        self.baseline = Some(self.decay * b + (1.0 - self.decay) * mean);
        Ok(())
    }
}

pub fn train_pg(spec: &SubpopSpec, cfg: &PgConfig, rule: &SnapshotRule, rng: &mut Rng) -> Result<Vec<AgentSnapshot>> {
    let policy = Policy::new(spec.env, &spec.mask, rng)?;
    let eval_seed = rng.next_seed();
    let mut rec = Recorder::new(spec, rule, eval_seed, &policy)?;
    let mut learner = Reinforce::new(policy, cfg.learning_rate, cfg.baseline_decay);
    let mut cap = cfg.curriculum.map(|c| c.start as f64);
    let horizon = spec.env.horizon() as f64;

    for it in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.episodes_per_batch);
        for _ in 0..cfg.episodes_per_batch {
            let task = sample_task(spec.env, rng, spec.bias)?;
            let c = cap.map(|c| c as usize).filter(|&c| (c as f64) < horizon);
            let ep = run_episode(&task, &learner.policy, c, rng)?;
            batch.push((ep.steps, ep.ret));
        }
        let success = batch.iter().map(|(_, g)| g).sum::<f64>() / batch.len() as f64;
        learner.update(&batch)?;
        check_finite(learner.policy.net().params().iter().sum(), "policy gradient", it)?;
        if let (Some(c), Some(cur)) = (cap.as_mut(), cfg.curriculum) {
            if success > cur.promote_at && *c < horizon {
                *c = (*c * cur.growth).min(horizon);
            }
        }
        if (it + 1) % cfg.eval_every.max(1) == 0 {
            rec.consider(&learner.policy, it as u64 + 1)?;
        }
    }
    Ok(rec.out)
}
