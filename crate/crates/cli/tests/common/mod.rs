//! Configs shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;
use taskemb::envs::EnvId;
use taskemb_cli::{Preset, RunConfig};

/// A complete pipeline that runs in seconds: every stage, tiny counts.
pub fn tiny_config(env: EnvId, dir: &Path) -> RunConfig {
    let mut c = RunConfig::preset(env, Preset::Desk, 11, dir).unwrap();
    c.population.bc_epochs = 3;
    c.population.bc_rollouts_per_epoch = 20;
    c.population.snapshot_reps = 2;
    c.population.snapshot_tasks = 20;
    c.population.pg_iterations = 5;
    c.constraints.pool_tasks = 120;
    c.constraints.mi_reps = 4;
    c.constraints.pos_reps = 2;
    c.constraints.train = 200;
    c.constraints.val = 50;
    c.constraints.test = 50;
    c.training.epochs = 5;
    c.training.batch_size = 50;
    c.predmodel.rollouts = 20;
    c.predmodel.epochs = 2;
    c.predmodel.hidden = 16;
    c.predmodel.batch_size = 64;
    c.prediction.quiz_sizes = vec![1, 5];
    c.prediction.examples = 40;
    c.selection.datasets = 1;
    c.selection.examples = 4;
    c.selection.options = 4;
    c.selection.easy_refs = 2;
    c.selection.easy_pool = 20;
    c.selection.mi_reps = 4;
    c.selection.pos_reps = 2;
    c.evaluation.eval_tasks = 60;
    c.evaluation.norm_tasks = 40;
    c.evaluation.norm_pos_reps = 2;
    c.evaluation.sweep_dims = vec![1, 2];
    c
}

pub fn write_config(cfg: &RunConfig, path: &Path) {
    std::fs::write(path, cfg.to_toml()).unwrap();
}
