//! Application benchmarks: performance prediction, task selection and
//! cluster-quality audits of embedding spaces, with their baselines.

mod predmodel;
mod prediction;
mod report;
mod selection;

pub use predmodel::{
    collect_transitions, context_free_state, kl_diag_gaussian, train_predmodel, PredLoss, PredModel,
    PredModelConfig, PredModelLog, Transition, Transitions,
};
pub use prediction::{
    eval_prediction, gen_quiz_dataset, predict_softnn, quiz_from_csv, quiz_to_csv, softnn_from_embeddings,
    tune_beta, Accuracy, BaselineContext, PredictionBaseline, QuizExample, BETA_GRID, DEFAULT_BETA, MAX_QUIZ,
};
pub use report::{
    prediction_plot_csv, results_from_csv, results_to_csv, selection_plot_csv, ResultRow, RESULTS_HEADER,
};
pub use selection::{
    gen_selection_dataset, method_scores, rank_options, select, selection_accuracy, selection_from_csv, selection_to_csv,
    trajectory_symbols, OptSource, QueryType, Ranking, SelectionConfig, SelectionContext, SelectionExample,
    SelectionMethod, SelectionScores,
};

use crate::embedding::EmbeddingNet;
use crate::envs::{cartpole, multikeynav, pointmass, EnvId, Task};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// Maps tasks to points in an embedding space.
pub trait Embedder: Sync {
    fn env(&self) -> EnvId;
    fn embed(&self, task: &Task) -> Result<Vec<f64>>;

    fn embed_all(&self, tasks: &[Task]) -> Result<Vec<Vec<f64>>> {
        tasks.par_iter().map(|t| self.embed(t)).collect()
    }
}

impl Embedder for EmbeddingNet {
    fn env(&self) -> EnvId {
        EmbeddingNet::env(self)
    }

    fn embed(&self, task: &Task) -> Result<Vec<f64>> {
        EmbeddingNet::embed(self, task)
    }
}

/// Intuitive cluster label of a task.
///
/// Key navigation: bitmask of keys the door still needs. Cart-pole: whether
/// action 0 pushes the cart right. Point mass: 0 when the straight path
/// from the start crosses the gate, otherwise 1 (gate left) or 2 (right).
pub fn cluster_label(task: &Task) -> u32 {
    let s = &task.state0;
    match task.env {
        EnvId::MultiKeyNav(v) => u32::from(multikeynav::missing_keys(v, s)),
        EnvId::CartPoleVar => u32::from(cartpole::effective_force(s, 0) > 0.0),
        EnvId::PointMass => {
            let (lo, hi) = pointmass::gate_opening(s);
            let x = pointmass::START.0;
            if lo <= x && x <= hi {
                0
            } else if 0.5 * (lo + hi) < x {
                1
            } else {
                2
            }
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    crate::embedding::squared_distance(a, b).sqrt()
}

/// Mean silhouette coefficient under Euclidean distance. Points in
/// singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[u32]) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} points but {} labels",
            points.len(),
            labels.len()
        )));
    }
    let mut ids: Vec<u32> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InvalidArgument("silhouette needs at least two clusters".into()));
    }
    let slot: Vec<usize> = labels
        .iter()
        .map(|l| ids.binary_search(l).expect("label present"))
        .collect();
    let mut sizes = vec![0usize; ids.len()];
    for &c in &slot {
        sizes[c] += 1;
    }
    let total: f64 = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let own = slot[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; ids.len()];
            for (j, p) in points.iter().enumerate() {
                if j != i {
                    sums[slot[j]] += distance(&points[i], p);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..ids.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m == 0.0 {
                0.0
            } else {
                (b - a) / m
            }
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / points.len() as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Shape(format!(
            "spearman needs two equal-length samples of at least 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Mean and standard error of the mean (sample standard deviation / √n).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
