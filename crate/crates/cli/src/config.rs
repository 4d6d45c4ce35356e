//! Run configuration: one TOML file holding every knob and seed of a
//! pipeline run.

use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use taskemb::benchmarks::{PredModelConfig, SelectionConfig};
use taskemb::embedding::{default_dim, default_hidden, OnlineConfig, TrainConfig};
use taskemb::envs::EnvId;
use taskemb::numcore::derive_seed;
use taskemb::population::{Recipe, RecipeKind};
use taskemb::similarity::ConstraintConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    /// Resolved against the config file's directory when relative.
    pub output_dir: PathBuf,
    /// Worker threads; absent means machine parallelism. Never affects results.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub seeds: Seeds,
    pub population: PopulationSection,
    pub constraints: ConstraintSection,
    pub training: TrainingSection,
    pub predmodel: PredModelSection,
    pub prediction: PredictionSection,
    pub selection: SelectionSection,
    pub evaluation: EvaluationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Evaluation task samples and the dimension sweep.
    pub root: u64,
    pub population: u64,
    pub constraints: u64,
    pub training: u64,
    pub benchmarks: u64,
}

impl Seeds {
    pub fn from_root(root: u64) -> Self {
        Self {
            root,
            population: derive_seed(root, &[1]),
            constraints: derive_seed(root, &[2]),
            training: derive_seed(root, &[3]),
            benchmarks: derive_seed(root, &[4]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSection {
    /// `standard`, `biased` or `keys-masked`.
    pub recipe: String,
    pub snapshot_delta: f64,
    pub snapshot_reps: usize,
    pub snapshot_tasks: usize,
    pub bc_epochs: usize,
    pub bc_rollouts_per_epoch: usize,
    pub pg_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSection {
    /// Tasks behind all three splits; split pools are disjoint.
    pub pool_tasks: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Rollouts per agent per task behind each MI estimate.
    pub mi_reps: usize,
    pub pos_reps: usize,
    /// Triplets and pairs each.
    pub train: usize,
    pub val: usize,
    pub test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop_ties: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub lambda: f64,
    pub dim: usize,
    pub dim_wo_norm: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Per-iteration constraint sampling instead of a fixed pool.
    pub online: bool,
    pub online_iterations: usize,
    pub online_mi_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredModelSection {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionSection {
    pub quiz_sizes: Vec<usize>,
    /// Test examples per quiz size; as many again are drawn to tune β.
    pub examples: usize,
    /// Population whose agents are quizzed; defaults to the trained one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_population: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSection {
    pub datasets: usize,
    pub examples: usize,
    pub options: usize,
    pub easy_refs: usize,
    pub easy_pool: usize,
    pub mi_reps: usize,
    pub pos_reps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    /// Labelled tasks for silhouette scores and the visualisation export.
    pub eval_tasks: usize,
    /// Tasks for the norm/difficulty rank correlation.
    pub norm_tasks: usize,
    pub norm_pos_reps: usize,
    pub sweep_dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Sample counts of the original experiments.
    Full,
    /// Reduced counts that finish in minutes on one core.
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "full" => Ok(Preset::Full),
            "desk" => Ok(Preset::Desk),
            _ => Err(CliError::Config(format!("unknown preset '{s}' (valid: full, desk)"))),
        }
    }
}

impl RunConfig {
    pub fn preset(env: EnvId, preset: Preset, root_seed: u64, output_dir: impl Into<PathBuf>) -> CliResult<Self> {
        let recipe = Recipe::new(env, RecipeKind::Standard).map_err(|e| CliError::Config(e.to_string()))?;
        let train = TrainConfig::for_env(env);
        let pm = PredModelConfig::for_env(env);
        let sel = SelectionConfig::default();
        let full = preset == Preset::Full;
        let snapshot_tasks = match (env, full) {
            (EnvId::CartPoleVar, false) => 100,
            _ => recipe.snapshot_tasks,
        };
        Ok(Self {
            env: env.name().to_string(),
            output_dir: output_dir.into(),
            threads: None,
            seeds: Seeds::from_root(root_seed),
            population: PopulationSection {
                recipe: recipe.kind.to_string(),
                snapshot_delta: recipe.snapshot_delta,
                snapshot_reps: recipe.snapshot_reps,
                snapshot_tasks,
                bc_epochs: recipe.bc.epochs,
                bc_rollouts_per_epoch: recipe.bc.rollouts_per_epoch,
                pg_iterations: recipe.pg.iterations,
            },
            constraints: ConstraintSection {
                pool_tasks: if full { 10_000 } else { 1000 },
                val_fraction: 0.1,
                test_fraction: 0.2,
                mi_reps: if full { 100 } else { 30 },
                pos_reps: 10,
                train: if full { 5000 } else { 2000 },
                val: if full { 1000 } else { 500 },
                test: if full { 1000 } else { 500 },
                drop_ties: None,
            },
            training: TrainingSection {
                lambda: train.lambda,
                dim: default_dim(env, true),
                dim_wo_norm: default_dim(env, false),
                hidden: default_hidden(env).to_vec(),
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
                patience: train.patience,
                online: false,
                online_iterations: if full { 50_000 } else { 5000 },
                online_mi_samples: 100,
            },
            predmodel: PredModelSection {
                latent_dim: pm.latent_dim,
                hidden: pm.hidden,
                rollouts: if full { pm.rollouts } else { 1000 },
                epochs: if full { pm.epochs } else { 20 },
                batch_size: pm.batch_size,
                learning_rate: pm.learning_rate,
                alpha_r: pm.alpha_r,
                alpha_s: pm.alpha_s,
                beta_kl: pm.beta_kl,
            },
            prediction: PredictionSection {
                quiz_sizes: (1..=20).collect(),
                examples: 5000,
                agent_population: None,
            },
            selection: SelectionSection {
                datasets: 4,
                examples: sel.examples,
                options: sel.options,
                easy_refs: sel.easy_refs,
                easy_pool: sel.easy_pool,
                mi_reps: if full { sel.mi_reps } else { 30 },
                pos_reps: sel.pos_reps,
            },
            evaluation: EvaluationSection {
                eval_tasks: 1000,
                norm_tasks: 500,
                norm_pos_reps: 10,
                sweep_dims: (1..=10).collect(),
            },
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if cfg.output_dir.is_relative() {
            if let Some(parent) = path.parent() {
                cfg.output_dir = parent.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    pub fn env_id(&self) -> CliResult<EnvId> {
        self.env.parse().map_err(|e: taskemb::Error| CliError::Config(e.to_string()))
    }

    pub fn recipe(&self) -> CliResult<Recipe> {
        let env = self.env_id()?;
        let kind: RecipeKind = self.population.recipe.parse().map_err(|e: taskemb::Error| CliError::Config(e.to_string()))?;
        let mut r = Recipe::new(env, kind).map_err(|e| CliError::Config(e.to_string()))?;
        let p = &self.population;
        r.snapshot_delta = p.snapshot_delta;
        r.snapshot_reps = p.snapshot_reps;
        r.snapshot_tasks = p.snapshot_tasks;
        r.bc.epochs = p.bc_epochs;
        r.bc.rollouts_per_epoch = p.bc_rollouts_per_epoch;
        r.pg.iterations = p.pg_iterations;
        Ok(r)
    }

    pub fn constraint_config(&self, count: usize) -> ConstraintConfig {
        ConstraintConfig {
            triplets: count,
            pairs: count,
            pos_reps: self.constraints.pos_reps,
            drop_ties: self.constraints.drop_ties,
        }
    }

    pub fn train_config(&self, lambda: f64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            lambda,
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            patience: t.patience,
        }
    }

    pub fn online_config(&self, lambda: f64) -> OnlineConfig {
        OnlineConfig {
            iterations: self.training.online_iterations,
            mi_samples: self.training.online_mi_samples,
            pos_reps: self.constraints.pos_reps,
            lambda,
            learning_rate: self.training.learning_rate,
        }
    }

    pub fn predmodel_config(&self) -> PredModelConfig {
        let p = &self.predmodel;
        PredModelConfig {
            latent_dim: p.latent_dim,
            hidden: p.hidden,
            rollouts: p.rollouts,
            epochs: p.epochs,
            batch_size: p.batch_size,
            learning_rate: p.learning_rate,
            alpha_r: p.alpha_r,
            alpha_s: p.alpha_s,
            beta_kl: p.beta_kl,
        }
    }

    pub fn selection_config(&self) -> SelectionConfig {
        let s = &self.selection;
        SelectionConfig {
            examples: s.examples,
            options: s.options,
            easy_refs: s.easy_refs,
            easy_pool: s.easy_pool,
            mi_reps: s.mi_reps,
            pos_reps: s.pos_reps,
        }
    }

    /// Checks everything that can be checked without touching the disk.
    pub fn validate(&self) -> CliResult<()> {
        self.recipe()?;
        let bad = |m: String| Err(CliError::Config(m));
        let c = &self.constraints;
        if !(c.val_fraction > 0.0 && c.test_fraction > 0.0 && c.val_fraction + c.test_fraction < 1.0) {
            return bad("constraints: val_fraction and test_fraction must be positive and sum below 1".into());
        }
        if c.pool_tasks < 10 || c.mi_reps == 0 || c.pos_reps == 0 || c.pos_reps > c.mi_reps {
            return bad("constraints: need pool_tasks >= 10 and 1 <= pos_reps <= mi_reps".into());
        }
        if c.train == 0 || c.val == 0 || c.test == 0 {
            return bad("constraints: train, val and test counts must be positive".into());
        }
        let t = &self.training;
        if t.dim == 0 || t.dim_wo_norm == 0 || t.hidden.contains(&0) {
            return bad("training: dimensions must be positive".into());
        }
        if !(t.lambda >= 0.0) || !(t.learning_rate > 0.0) || t.batch_size == 0 || t.batch_size > c.train {
            return bad("training: need lambda >= 0, learning_rate > 0 and 1 <= batch_size <= constraints.train".into());
        }
        if self.predmodel.latent_dim == 0 || self.predmodel.rollouts == 0 || self.predmodel.batch_size == 0 {
            return bad("predmodel: latent_dim, rollouts and batch_size must be positive".into());
        }
        let p = &self.prediction;
        if p.quiz_sizes.iter().any(|&q| q == 0 || q > taskemb::benchmarks::MAX_QUIZ) {
            return bad(format!("prediction: quiz sizes must lie in 1..={}", taskemb::benchmarks::MAX_QUIZ));
        }
        if p.examples < 10 {
            return bad("prediction: at least 10 examples are needed for 10-fold evaluation".into());
        }
        let s = &self.selection;
        if s.datasets == 0 || s.examples == 0 || s.options < 2 || s.pos_reps == 0 || s.pos_reps > s.mi_reps {
            return bad("selection: need datasets, examples >= 1, options >= 2 and 1 <= pos_reps <= mi_reps".into());
        }
        let e = &self.evaluation;
        if e.eval_tasks < 2 || e.norm_tasks < 2 || e.norm_pos_reps == 0 || e.sweep_dims.contains(&0) {
            return bad("evaluation: need eval_tasks, norm_tasks >= 2 and positive sweep dims".into());
        }
        Ok(())
    }

    /// SHA-256 of the file form.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_toml().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
