//! Variational baseline: infer a latent task code from the initial state
//! and train it to predict reward and dynamics on context-free states.

use super::Embedder;
use crate::envs::{expert_action, pointmass, sample_task, step, Action, ActionSpace, EnvId, Task, Terminal};
use crate::error::{Error, Result};
use crate::numcore::weights::{mlp_from_lines, mlp_to_text};
use crate::numcore::{Activation, AdamConfig, AdamState, Mlp, Rng};
use crate::population::{feature_dim, features};
use rayon::prelude::*;
use std::path::Path;

/// Items per parallel chunk; fixed so the gradient sum order never
/// depends on the thread count.
const CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredModelConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    pub rollouts: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub alpha_r: f64,
    pub alpha_s: f64,
    pub beta_kl: f64,
}

impl PredModelConfig {
    pub fn for_env(env: EnvId) -> Self {
        Self {
            latent_dim: match env {
                EnvId::MultiKeyNav(_) => 6,
                _ => 3,
            },
            hidden: 128,
            rollouts: 10_000,
            epochs: 500,
            batch_size: 512,
            learning_rate: 1e-3,
            alpha_r: 1.0,
            alpha_s: 1.0,
            beta_kl: 0.01,
        }
    }
}

/// The state with task context removed: key navigation drops the door
/// bits, cart-pole keeps `(x, v, θ, ω)`, point mass keeps its scaled
/// position and velocity.
pub fn context_free_state(env: EnvId, state: &[f64]) -> Vec<f64> {
    match env {
        EnvId::MultiKeyNav(_) => state[..5].to_vec(),
        EnvId::CartPoleVar => state[..4].to_vec(),
        EnvId::PointMass => state[..4].iter().map(|v| v / pointmass::ARENA).collect(),
    }
}

fn context_free_dim(env: EnvId) -> usize {
    match env {
        EnvId::MultiKeyNav(_) => 5,
        EnvId::CartPoleVar | EnvId::PointMass => 4,
    }
}

fn action_dim(env: EnvId) -> usize {
    match env.action_space() {
        ActionSpace::Discrete(n) => n,
        ActionSpace::Box { dim, .. } => dim,
    }
}

fn encode_action(env: EnvId, action: Action) -> Vec<f64> {
    match (env.action_space(), action) {
        (ActionSpace::Discrete(n), Action::Discrete(a)) => (0..n).map(|k| f64::from(u8::from(k == a))).collect(),
        (ActionSpace::Box { limit, .. }, Action::Continuous(f)) => f.iter().map(|v| v / limit).collect(),
        _ => unreachable!("expert actions match the action space"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    /// Index into [`Transitions::initial`].
    pub task: usize,
    /// Context-free state and encoded action, concatenated.
    pub input: Vec<f64>,
    pub reward: f64,
    pub next: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transitions {
    pub env: EnvId,
    /// Features of each rollout's initial state.
    pub initial: Vec<Vec<f64>>,
    pub items: Vec<Transition>,
}

/// Expert rollouts from random tasks, one transition per step.
pub fn collect_transitions(env: EnvId, rollouts: usize, rng: &mut Rng) -> Result<Transitions> {
    let root = rng.next_seed();
    let per_rollout = (0..rollouts)
        .into_par_iter()
        .map(|i| {
            let mut r = Rng::derived(root, &[i as u64]);
            let task = sample_task(env, &mut r, None)?;
            let mut state = task.state0.clone();
            let mut out = Vec::new();
            for _ in 0..env.horizon() {
                let action = expert_action(env, &state)?;
                let step = step(env, &state, action, &mut r)?;
                let mut input = context_free_state(env, &state);
                input.extend(encode_action(env, action));
                out.push(Transition {
                    task: i,
                    input,
                    reward: f64::from(step.reward),
                    next: context_free_state(env, &step.next_state),
                });
                if step.terminal != Terminal::Alive {
                    break;
                }
                state = step.next_state;
            }
            Ok((features(env, &task.state0), out))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut initial = Vec::with_capacity(rollouts);
    let mut items = Vec::new();
    for (f, t) in per_rollout {
        initial.push(f);
        items.extend(t);
    }
    Ok(Transitions { env, initial, items })
}

/// `KL(N(μ, diag(exp(logvar))) ‖ N(0, I))`.
pub fn kl_diag_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredModel {
    env: EnvId,
    latent_dim: usize,
    alpha_r: f64,
    alpha_s: f64,
    beta_kl: f64,
    /// Initial-state features to `(μ, log σ²)`.
    inference: Mlp,
    /// `(s̄, a, z)` to the shared hidden representation.
    trunk: Mlp,
    reward_head: Mlp,
    dynamics_head: Mlp,
}

/// Batch loss and its parts, all per-item means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredLoss {
    pub total: f64,
    pub kl: f64,
    pub reward: f64,
    pub dynamics: f64,
}

struct Accum {
    grad: Vec<f64>,
    loss: PredLoss,
}

impl PredModel {
    pub fn new(env: EnvId, cfg: &PredModelConfig, rng: &mut Rng) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.hidden == 0 {
            return Err(Error::InvalidArgument("latent and hidden sizes must be positive".into()));
        }
        let h = cfg.hidden;
        let d = cfg.latent_dim;
        let trunk_in = context_free_dim(env) + action_dim(env) + d;
        Ok(Self {
            env,
            latent_dim: d,
            alpha_r: cfg.alpha_r,
            alpha_s: cfg.alpha_s,
            beta_kl: cfg.beta_kl,
            inference: Mlp::glorot(&[feature_dim(env), h, h, 2 * d], Activation::Relu, Activation::Identity, rng),
            trunk: Mlp::glorot(&[trunk_in, h, h], Activation::Relu, Activation::Relu, rng),
            reward_head: Mlp::glorot(&[h, 1], Activation::Identity, Activation::Identity, rng),
            dynamics_head: Mlp::glorot(
                &[h, context_free_dim(env)],
                Activation::Identity,
                Activation::Identity,
                rng,
            ),
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn nets(&self) -> [&Mlp; 4] {
        [&self.inference, &self.trunk, &self.reward_head, &self.dynamics_head]
    }

    pub fn num_params(&self) -> usize {
        self.nets().iter().map(|n| n.num_params()).sum()
    }

    /// Inference net, trunk, reward head, dynamics head.
    pub fn params(&self) -> Vec<f64> {
        self.nets().iter().flat_map(|n| n.params()).collect()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        let mut off = 0;
        for net in [
            &mut self.inference,
            &mut self.trunk,
            &mut self.reward_head,
            &mut self.dynamics_head,
        ] {
            let n = net.num_params();
            net.set_params(&params[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    /// Posterior mean and log-variance for an initial state.
    pub fn posterior(&self, task: &Task) -> Result<(Vec<f64>, Vec<f64>)> {
        if task.env != self.env {
            return Err(Error::EnvMismatch {
                expected: self.env.name().into(),
                got: task.env.name().into(),
            });
        }
        let mut out = self.inference.forward(&features(self.env, &task.state0))?;
        let lv = out.split_off(self.latent_dim);
        Ok((out, lv))
    }

    fn check_data(&self, data: &Transitions) -> Result<()> {
        if data.env != self.env {
            return Err(Error::EnvMismatch {
                expected: self.env.name().into(),
                got: data.env.name().into(),
            });
        }
        Ok(())
    }

    /// Mean loss over `batch` with reparameterisation noise `eps` (one
    /// latent-sized vector per item), and its gradient in [`Self::params`]
    /// order.
    pub fn loss_and_grad(&self, data: &Transitions, batch: &[usize], eps: &[Vec<f64>]) -> Result<(PredLoss, Vec<f64>)> {
        self.check_data(data)?;
        if batch.is_empty() || batch.len() != eps.len() {
            return Err(Error::Shape(format!("{} items but {} noise vectors", batch.len(), eps.len())));
        }
        let sizes = self.nets().map(|n| n.num_params());
        let parts = batch
            .par_chunks(CHUNK)
            .zip(eps.par_chunks(CHUNK))
            .map(|(items, noise)| {
                let mut acc = Accum {
                    grad: vec![0.0; self.num_params()],
                    loss: PredLoss {
                        total: 0.0,
                        kl: 0.0,
                        reward: 0.0,
                        dynamics: 0.0,
                    },
                };
                for (&i, e) in items.iter().zip(noise) {
                    self.accumulate(data, i, e, &sizes, &mut acc)?;
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        let n = batch.len() as f64;
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = PredLoss {
            total: 0.0,
            kl: 0.0,
            reward: 0.0,
            dynamics: 0.0,
        };
        for p in parts {
            for (g, v) in grad.iter_mut().zip(&p.grad) {
                *g += v;
            }
            loss.total += p.loss.total;
            loss.kl += p.loss.kl;
            loss.reward += p.loss.reward;
            loss.dynamics += p.loss.dynamics;
        }
        grad.iter_mut().for_each(|g| *g /= n);
        loss.total /= n;
        loss.kl /= n;
        loss.reward /= n;
        loss.dynamics /= n;
        if !loss.total.is_finite() {
            return Err(Error::NonFinite {
                stage: "predmodel loss".into(),
                detail: format!("{loss:?}"),
            });
        }
        Ok((loss, grad))
    }

    fn accumulate(&self, data: &Transitions, i: usize, eps: &[f64], sizes: &[usize; 4], acc: &mut Accum) -> Result<()> {
        let d = self.latent_dim;
        if eps.len() != d {
            return Err(Error::Shape(format!("noise has {} values, latent has {d}", eps.len())));
        }
        let tr = data
            .items
            .get(i)
            .ok_or_else(|| Error::InvalidArgument(format!("transition {i} out of range")))?;
        let s0 = data
            .initial
            .get(tr.task)
            .ok_or_else(|| Error::InvalidArgument(format!("initial state {} out of range", tr.task)))?;

        let inf = self.inference.trace(s0)?;
        let (mu, lv) = inf.output().split_at(d);
        let sigma: Vec<f64> = lv.iter().map(|v| (0.5 * v).exp()).collect();
        let mut input = tr.input.clone();
        input.extend((0..d).map(|k| mu[k] + sigma[k] * eps[k]));

        let trunk = self.trunk.trace(&input)?;
        let h = trunk.output();
        let rh = self.reward_head.trace(h)?;
        let dh = self.dynamics_head.trace(h)?;
        let r_err = rh.output()[0] - tr.reward;
        let s_err: Vec<f64> = dh.output().iter().zip(&tr.next).map(|(p, t)| p - t).collect();

        let kl = kl_diag_gaussian(mu, lv);
        let rl = r_err * r_err;
        let sl: f64 = s_err.iter().map(|e| e * e).sum();
        acc.loss.kl += kl;
        acc.loss.reward += rl;
        acc.loss.dynamics += sl;
        acc.loss.total += self.beta_kl * kl + self.alpha_r * rl + self.alpha_s * sl;

        let (g_inf, rest) = acc.grad.split_at_mut(sizes[0]);
        let (g_trunk, rest) = rest.split_at_mut(sizes[1]);
        let (g_rh, g_dh) = rest.split_at_mut(sizes[2]);
        let mut dh_in = self
            .reward_head
            .backward_trace(&rh, &[2.0 * self.alpha_r * r_err], g_rh)?;
        let ds: Vec<f64> = s_err.iter().map(|e| 2.0 * self.alpha_s * e).collect();
        let from_dyn = self.dynamics_head.backward_trace(&dh, &ds, g_dh)?;
        for (a, b) in dh_in.iter_mut().zip(from_dyn) {
            *a += b;
        }
        let d_input = self.trunk.backward_trace(&trunk, &dh_in, g_trunk)?;
        let dz = &d_input[d_input.len() - d..];
        let mut d_out = vec![0.0; 2 * d];
        for k in 0..d {
            d_out[k] = dz[k] + self.beta_kl * mu[k];
            d_out[d + k] = dz[k] * eps[k] * 0.5 * sigma[k] + self.beta_kl * 0.5 * (lv[k].exp() - 1.0);
        }
        self.inference.backward_trace(&inf, &d_out, g_inf)?;
        Ok(())
    }

    /// File: `predmodel <env> <latent> <alpha_r> <alpha_s> <beta_kl>`, then
    /// the inference net, trunk, reward head and dynamics head.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "predmodel {} {} {:?} {:?} {:?}\n",
            self.env.name(),
            self.latent_dim,
            self.alpha_r,
            self.alpha_s,
            self.beta_kl
        );
        for n in self.nets() {
            out.push_str(&mlp_to_text(n));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines
            .next()
            .ok_or_else(|| Error::Parse("empty predmodel file".into()))?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        let ["predmodel", env, dim, ar, as_, beta] = parts[..] else {
            return Err(Error::Parse(format!("bad predmodel header '{head}'")));
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("bad number '{s}' in predmodel header")))
        };
        let env: EnvId = env.parse()?;
        let latent_dim: usize = dim
            .parse()
            .map_err(|_| Error::Parse(format!("bad latent size '{dim}'")))?;
        let model = Self {
            env,
            latent_dim,
            alpha_r: num(ar)?,
            alpha_s: num(as_)?,
            beta_kl: num(beta)?,
            inference: mlp_from_lines(&mut lines)?,
            trunk: mlp_from_lines(&mut lines)?,
            reward_head: mlp_from_lines(&mut lines)?,
            dynamics_head: mlp_from_lines(&mut lines)?,
        };
        let sbar = context_free_dim(env);
        let shapes_ok = model.inference.in_dim() == feature_dim(env)
            && model.inference.out_dim() == 2 * latent_dim
            && model.trunk.in_dim() == sbar + action_dim(env) + latent_dim
            && model.reward_head.in_dim() == model.trunk.out_dim()
            && model.reward_head.out_dim() == 1
            && model.dynamics_head.in_dim() == model.trunk.out_dim()
            && model.dynamics_head.out_dim() == sbar;
        if !shapes_ok {
            return Err(Error::Parse("predmodel networks do not fit together".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

impl Embedder for PredModel {
    fn env(&self) -> EnvId {
        self.env
    }

    /// The posterior mean.
    fn embed(&self, task: &Task) -> Result<Vec<f64>> {
        Ok(self.posterior(task)?.0)
    }
}

fn draw_noise(n: usize, d: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.normal()).collect()).collect()
}

/// Mean loss per epoch; `initial` is measured before the first update.
#[derive(Debug, Clone, PartialEq)]
pub struct PredModelLog {
    pub initial: PredLoss,
    pub epochs: Vec<PredLoss>,
}

/// Joint Adam training of all four networks on shuffled minibatches.
pub fn train_predmodel(data: &Transitions, cfg: &PredModelConfig, rng: &mut Rng) -> Result<(PredModel, PredModelLog)> {
    if data.items.is_empty() {
        return Err(Error::InvalidArgument("no transitions to train on".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut model = PredModel::new(data.env, cfg, rng)?;
    let d = cfg.latent_dim;
    let all: Vec<usize> = (0..data.items.len()).collect();
    let initial = model.loss_and_grad(data, &all, &draw_noise(all.len(), d, rng))?.0;
    let mut adam = AdamState::new(model.num_params(), AdamConfig::with_lr(cfg.learning_rate));
    let mut params = model.params();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order = all;
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = PredLoss {
            total: 0.0,
            kl: 0.0,
            reward: 0.0,
            dynamics: 0.0,
        };
        for batch in order.chunks(cfg.batch_size) {
            let eps = draw_noise(batch.len(), d, rng);
            let (loss, grad) = model.loss_and_grad(data, batch, &eps)?;
            let w = batch.len() as f64;
            sum.total += loss.total * w;
            sum.kl += loss.kl * w;
            sum.reward += loss.reward * w;
            sum.dynamics += loss.dynamics * w;
            adam.step(&mut params, &grad)?;
            model.set_params(&params)?;
        }
        let n = order.len() as f64;
        epochs.push(PredLoss {
            total: sum.total / n,
            kl: sum.kl / n,
            reward: sum.reward / n,
            dynamics: sum.dynamics / n,
        });
    }
    Ok((model, PredModelLog { initial, epochs }))
}
