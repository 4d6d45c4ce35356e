//! The task embedding network: inner products track similarity, norms
//! track difficulty.

mod loss;
mod pca;
mod train;

pub use loss::{norm_pair_loss, triplet_loss, PairLoss, TripletLoss};
pub use pca::{pca_project, Pca};
pub use train::{
    constraint_losses, train_embedding, train_embedding_online, EpochRecord, OnlineConfig, TrainConfig, TrainLog,
};

use crate::envs::{EnvId, Task};
use crate::error::{Error, Result};
use crate::numcore::weights::{mlp_from_lines, mlp_to_text};
use crate::numcore::{Activation, Mlp, Rng};
use crate::population::{feature_dim, features};
use std::fmt::Write as _;
use std::path::Path;

/// Embedding size per environment, with and without the norm constraints.
pub fn default_dim(env: EnvId, with_norm: bool) -> usize {
    match (env, with_norm) {
        (EnvId::MultiKeyNav(_), true) => 6,
        (EnvId::MultiKeyNav(_), false) => 5,
        (EnvId::CartPoleVar, true) => 3,
        (EnvId::CartPoleVar, false) => 2,
        (EnvId::PointMass, _) => 3,
    }
}

pub fn default_hidden(env: EnvId) -> &'static [usize] {
    match env {
        EnvId::CartPoleVar => &[64, 32],
        _ => &[32, 32],
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingNet {
    env: EnvId,
    net: Mlp,
}

impl EmbeddingNet {
    pub fn new(env: EnvId, dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be positive".into()));
        }
        let mut sizes = vec![feature_dim(env)];
        sizes.extend_from_slice(hidden);
        sizes.push(dim);
        let net = Mlp::glorot(&sizes, Activation::Relu, Activation::Identity, rng);
        Ok(Self { env, net })
    }

    pub fn from_net(env: EnvId, net: Mlp) -> Result<Self> {
        if net.in_dim() != feature_dim(env) {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: feature_dim(env),
                got: net.in_dim(),
            });
        }
        Ok(Self { env, net })
    }

    pub fn env(&self) -> EnvId {
        self.env
    }

    pub fn dim(&self) -> usize {
        self.net.out_dim()
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn embed(&self, task: &Task) -> Result<Vec<f64>> {
        if task.env != self.env {
            return Err(Error::EnvMismatch {
                expected: self.env.name().into(),
                got: task.env.name().into(),
            });
        }
        self.net.forward(&features(self.env, &task.state0))
    }

    pub fn embed_all(&self, tasks: &[Task]) -> Result<Vec<Vec<f64>>> {
        tasks.iter().map(|t| self.embed(t)).collect()
    }

    /// Model file: `embedding <env> <dim>` followed by the weights.
    pub fn to_text(&self) -> String {
        format!("embedding {} {}\n{}", self.env.name(), self.dim(), mlp_to_text(&self.net))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let head = lines
            .next()
            .map(|(_, l)| l)
            .ok_or_else(|| Error::Parse("empty embedding model file".into()))?;
        let parts: Vec<&str> = head.split_whitespace().collect();
        let [tag, env, dim] = parts[..] else {
            return Err(Error::Parse(format!("bad embedding header '{head}'")));
        };
        if tag != "embedding" {
            return Err(Error::Parse(format!("bad embedding header '{head}'")));
        }
        let env: EnvId = env.parse()?;
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::Parse(format!("bad embedding dimension '{dim}'")))?;
        let model = Self::from_net(env, mlp_from_lines(&mut lines)?)?;
        if model.dim() != dim {
            return Err(Error::Parse(format!(
                "header says dimension {dim}, weights give {}",
                model.dim()
            )));
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

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// CSV `task_index,e_1..e_n,norm`.
pub fn embeddings_to_csv(embeddings: &[Vec<f64>]) -> String {
    let dim = embeddings.first().map_or(0, Vec::len);
    let mut out = String::from("task_index");
    for k in 1..=dim {
        let _ = write!(out, ",e_{k}");
    }
    out.push_str(",norm\n");
    for (i, e) in embeddings.iter().enumerate() {
        let _ = write!(out, "{i}");
        for v in e {
            let _ = write!(out, ",{v:?}");
        }
        let _ = writeln!(out, ",{:?}", norm(e));
    }
    out
}
