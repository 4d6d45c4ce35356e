//! Fitting the embedding network to ordinal constraints.

use super::{norm_pair_loss, triplet_loss, EmbeddingNet};
use crate::envs::{EnvId, Task};
use crate::error::{Error, Result};
use crate::numcore::{AdamConfig, AdamState, Rng, Trace};
use crate::population::{estimate_pos, features, AgentPool};
use crate::similarity::{estimate_mi, ConstraintSet, PairConstraint, TripletConstraint};
use std::collections::HashMap;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of the mean pair loss against the mean triplet loss.
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.4,
            epochs: 300,
            batch_size: 128,
            learning_rate: 1e-3,
            patience: 20,
        }
    }
}

impl TrainConfig {
    pub fn for_env(env: EnvId) -> Self {
        let epochs = if env == EnvId::CartPoleVar { 500 } else { 300 };
        Self {
            epochs,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    /// Full-set losses at initialisation.
    pub initial_train_loss: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// 0 means the initial parameters were never beaten.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub test_loss: Option<f64>,
}

/// Mean triplet loss and mean pair loss of a constraint set, given the
/// embedding of every pool task.
pub fn constraint_losses(embeddings: &[Vec<f64>], set: &ConstraintSet) -> (f64, f64) {
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    let t: f64 = set
        .triplets
        .iter()
        .map(|c| {
            let [a, b, d] = c.ordered();
            triplet_loss(&embeddings[a], &embeddings[b], &embeddings[d]).loss
        })
        .sum();
    let p: f64 = set
        .pairs
        .iter()
        .map(|c| {
            let [e, h] = c.ordered();
            norm_pair_loss(&embeddings[e], &embeddings[h]).loss
        })
        .sum();
    (mean(t, set.triplets.len()), mean(p, set.pairs.len()))
}

fn set_loss(model: &EmbeddingNet, feats: &[Vec<f64>], set: &ConstraintSet, lambda: f64) -> Result<f64> {
    let emb = feats
        .iter()
        .map(|f| model.net().forward(f))
        .collect::<Result<Vec<_>>>()?;
    let (t, p) = constraint_losses(&emb, set);
    Ok(t + lambda * p)
}

/// Forward traces for the distinct tasks of one minibatch, with their
/// accumulated output gradients.
struct BatchGraph {
    slot: HashMap<usize, usize>,
    traces: Vec<Trace>,
    out_grads: Vec<Vec<f64>>,
}

impl BatchGraph {
    fn new() -> Self {
        Self {
            slot: HashMap::new(),
            traces: Vec::new(),
            out_grads: Vec::new(),
        }
    }

    fn node(&mut self, model: &EmbeddingNet, feats: &[Vec<f64>], task: usize) -> Result<usize> {
        if let Some(&s) = self.slot.get(&task) {
            return Ok(s);
        }
        let trace = model.net().trace(&feats[task])?;
        self.out_grads.push(vec![0.0; model.dim()]);
        self.traces.push(trace);
        let s = self.traces.len() - 1;
        self.slot.insert(task, s);
        Ok(s)
    }

    fn emb(&self, s: usize) -> &[f64] {
        self.traces[s].output()
    }

    fn add(&mut self, s: usize, g: &[f64], w: f64) {
        for (a, b) in self.out_grads[s].iter_mut().zip(g) {
            *a += w * b;
        }
    }
}

/// Loss and parameter gradient of one minibatch: mean triplet loss plus
/// `lambda` times mean pair loss.
fn batch_step(
    model: &EmbeddingNet,
    feats: &[Vec<f64>],
    triplets: &[TripletConstraint],
    pairs: &[PairConstraint],
    lambda: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut g = BatchGraph::new();
    let mut loss = 0.0;
    if !triplets.is_empty() {
        let w = 1.0 / triplets.len() as f64;
        for c in triplets {
            let [a, b, d] = c.ordered();
            let s = [g.node(model, feats, a)?, g.node(model, feats, b)?, g.node(model, feats, d)?];
            let l = triplet_loss(g.emb(s[0]), g.emb(s[1]), g.emb(s[2]));
            loss += w * l.loss;
            for k in 0..3 {
                g.add(s[k], &l.grads[k], w);
            }
        }
    }
    if !pairs.is_empty() && lambda != 0.0 {
        let w = lambda / pairs.len() as f64;
        for c in pairs {
            let [e, h] = c.ordered();
            let s = [g.node(model, feats, e)?, g.node(model, feats, h)?];
            let l = norm_pair_loss(g.emb(s[0]), g.emb(s[1]));
            loss += w * l.loss;
            for k in 0..2 {
                g.add(s[k], &l.grads[k], w);
            }
        }
    }
    let mut grad = vec![0.0; model.net().num_params()];
    for (trace, og) in g.traces.iter().zip(&g.out_grads) {
        model.net().backward_trace(trace, og, &mut grad)?;
    }
    Ok((loss, grad))
}

fn check_indices(set: &ConstraintSet, n: usize, name: &str) -> Result<()> {
    match set.max_task_index() {
        Some(m) if m >= n => Err(Error::InvalidArgument(format!(
            "{name} constraints reference task {m} but the pool has {n}"
        ))),
        _ => Ok(()),
    }
}

fn finite(loss: f64, epoch: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NonFinite {
            stage: "embedding training".into(),
            detail: format!("loss {loss} at epoch {epoch}"),
        })
    }
}

/// Minibatch Adam on a fixed constraint pool. Each epoch visits every
/// training triplet once, with pairs spread over the same number of
/// batches. Returns the parameters with the lowest validation loss.
pub fn train_embedding(
    init: EmbeddingNet,
    tasks: &[Task],
    train: &ConstraintSet,
    val: &ConstraintSet,
    test: Option<&ConstraintSet>,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<(EmbeddingNet, TrainLog)> {
    if !(cfg.lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda must be non-negative, got {}", cfg.lambda)));
    }
    if train.triplets.is_empty() {
        return Err(Error::InvalidArgument("empty training constraint set".into()));
    }
    if cfg.batch_size == 0 || train.triplets.len() < cfg.batch_size {
        return Err(Error::InvalidArgument(format!(
            "{} training triplets cannot fill a batch of {}",
            train.triplets.len(),
            cfg.batch_size
        )));
    }
    if val.triplets.is_empty() && val.pairs.is_empty() {
        return Err(Error::InvalidArgument("empty validation constraint set".into()));
    }
    for (set, name) in [(train, "training"), (val, "validation")] {
        check_indices(set, tasks.len(), name)?;
    }
    if let Some(t) = test {
        check_indices(t, tasks.len(), "test")?;
    }
    let env = init.env();
    for t in tasks {
        if t.env != env {
            return Err(Error::EnvMismatch {
                expected: env.name().into(),
                got: t.env.name().into(),
            });
        }
    }
    let feats: Vec<Vec<f64>> = tasks.iter().map(|t| features(env, &t.state0)).collect();

    let mut model = init;
    let mut adam = AdamState::for_mlp(model.net(), AdamConfig::with_lr(cfg.learning_rate));
    let initial_train_loss = finite(set_loss(&model, &feats, train, cfg.lambda)?, 0)?;
    let initial_val_loss = finite(set_loss(&model, &feats, val, cfg.lambda)?, 0)?;
    let mut best = (0, initial_val_loss, model.clone());
    let mut records = Vec::with_capacity(cfg.epochs);

    let n_batches = train.triplets.len().div_ceil(cfg.batch_size);
    let pair_batch = train.pairs.len().div_ceil(n_batches);
    let mut t_order: Vec<usize> = (0..train.triplets.len()).collect();
    let mut p_order: Vec<usize> = (0..train.pairs.len()).collect();
    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut t_order);
        rng.shuffle(&mut p_order);
        let mut sum = 0.0;
        for b in 0..n_batches {
            let tb: Vec<TripletConstraint> = t_order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(t_order.len())]
                .iter()
                .map(|&i| train.triplets[i])
                .collect();
            let lo = (b * pair_batch).min(p_order.len());
            let hi = ((b + 1) * pair_batch).min(p_order.len());
            let pb: Vec<PairConstraint> = p_order[lo..hi].iter().map(|&i| train.pairs[i]).collect();
            let (loss, grad) = batch_step(&model, &feats, &tb, &pb, cfg.lambda)?;
            sum += finite(loss, epoch)?;
            adam.step_mlp(model.net_mut(), &grad)?;
        }
        let val_loss = finite(set_loss(&model, &feats, val, cfg.lambda)?, epoch)?;
        records.push(EpochRecord {
            epoch,
            train_loss: sum / n_batches as f64,
            val_loss,
        });
        if val_loss < best.1 {
            best = (epoch, val_loss, model.clone());
        } else if epoch - best.0 >= cfg.patience {
            break;
        }
    }
    let (best_epoch, best_val_loss, model) = best;
    let test_loss = test
        .map(|t| set_loss(&model, &feats, t, cfg.lambda))
        .transpose()?;
    Ok((
        model,
        TrainLog {
            initial_train_loss,
            initial_val_loss,
            epochs: records,
            best_epoch,
            best_val_loss,
            test_loss,
        },
    ))
}

/// Per-iteration constraint sampling: every iteration draws fresh tasks,
/// estimates MI and PoS from new rollouts, and takes one Adam step on the
/// single triplet plus the λ-weighted single pair.
#[derive(Debug, Clone)]
pub struct OnlineConfig {
    pub iterations: usize,
    pub mi_samples: usize,
    pub pos_reps: usize,
    pub lambda: f64,
    pub learning_rate: f64,
}

pub fn train_embedding_online<P: AgentPool + ?Sized>(
    init: EmbeddingNet,
    tasks: &[Task],
    pool: &P,
    cfg: &OnlineConfig,
    rng: &mut Rng,
) -> Result<(EmbeddingNet, Vec<f64>)> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("online training needs tasks to sample".into()));
    }
    let env = init.env();
    let feats: Vec<Vec<f64>> = tasks.iter().map(|t| features(env, &t.state0)).collect();
    let mut model = init;
    let mut adam = AdamState::for_mlp(model.net(), AdamConfig::with_lr(cfg.learning_rate));
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let idx = [0; 3].map(|_| rng.index(tasks.len()));
        let i12 = estimate_mi(&tasks[idx[0]], &tasks[idx[1]], pool, cfg.mi_samples, rng)?.value;
        let i13 = estimate_mi(&tasks[idx[0]], &tasks[idx[2]], pool, cfg.mi_samples, rng)?.value;
        let trip = TripletConstraint {
            tasks: idx,
            label: i12 > i13,
            est: [i12, i13],
        };
        let pidx = [rng.index(tasks.len()), rng.index(tasks.len())];
        let p4 = estimate_pos(&tasks[pidx[0]], pool, cfg.pos_reps, rng)?;
        let p5 = estimate_pos(&tasks[pidx[1]], pool, cfg.pos_reps, rng)?;
        let pair = PairConstraint {
            tasks: pidx,
            label: p4 > p5,
            est: [p4, p5],
        };
        let (loss, grad) = batch_step(&model, &feats, &[trip], &[pair], cfg.lambda)?;
        losses.push(finite(loss, it)?);
        adam.step_mlp(model.net_mut(), &grad)?;
    }
    Ok((model, losses))
}
