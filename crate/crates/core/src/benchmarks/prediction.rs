//! Performance prediction: observe one agent on a quiz of tasks, then
//! predict whether it solves a held-out test task.

use super::{mean_stderr, Embedder};
use crate::embedding::squared_distance;
use crate::envs::taskfile::{header, parse_task_cells, write_row};
use crate::envs::{sample_task, sample_tasks, EnvId, Task};
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, Rng};
use crate::population::AgentPool;
use rayon::prelude::*;
use std::fmt::Write as _;

pub const MAX_QUIZ: usize = 20;
pub const DEFAULT_BETA: f64 = 1000.0;
pub const BETA_GRID: [f64; 7] = [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0];
const FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct QuizExample {
    pub quiz: Vec<(Task, bool)>,
    pub test_task: Task,
    pub test_outcome: bool,
    /// Index of the hidden agent; only baselines with oracle access read it.
    pub agent: usize,
}

impl QuizExample {
    /// The same example with only the first `size` quiz tasks, so one
    /// dataset drawn at the largest size serves every smaller size.
    pub fn truncated(&self, size: usize) -> Result<Self> {
        if size == 0 || size > self.quiz.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a quiz of {} tasks to {size}",
                self.quiz.len()
            )));
        }
        Ok(Self {
            quiz: self.quiz[..size].to_vec(),
            test_task: self.test_task.clone(),
            test_outcome: self.test_outcome,
            agent: self.agent,
        })
    }
}

/// Each example draws an agent, then `quiz_size + 1` tasks from the task
/// distribution, and records one rollout outcome per task.
pub fn gen_quiz_dataset<P: AgentPool + ?Sized>(
    pool: &P,
    quiz_size: usize,
    n_examples: usize,
    rng: &mut Rng,
) -> Result<Vec<QuizExample>> {
    if !(1..=MAX_QUIZ).contains(&quiz_size) {
        return Err(Error::InvalidArgument(format!(
            "quiz size {quiz_size} outside 1..={MAX_QUIZ}"
        )));
    }
    if pool.num_agents() == 0 {
        return Err(Error::InvalidArgument("empty agent pool".into()));
    }
    let root = rng.next_seed();
    let env = pool.env();
    (0..n_examples)
        .into_par_iter()
        .map(|e| {
            let mut r = Rng::derived(root, &[e as u64]);
            let agent = r.index(pool.num_agents());
            let mut tasks = sample_tasks(env, quiz_size + 1, &mut r, None)?;
            let mut outcomes = Vec::with_capacity(tasks.len());
            for t in &tasks {
                outcomes.push(pool.attempt(agent, t, &mut r)?);
            }
            let test_task = tasks.pop().expect("quiz_size + 1 tasks");
            let test_outcome = outcomes.pop().expect("one outcome per task");
            Ok(QuizExample {
                quiz: tasks.into_iter().zip(outcomes).collect(),
                test_task,
                test_outcome,
                agent,
            })
        })
        .collect()
}

/// Soft nearest neighbour over precomputed embeddings. Weights are shifted
/// by the smallest squared distance so that large `beta` cannot underflow
/// every weight to zero.
pub fn softnn_from_embeddings(quiz: &[Vec<f64>], outcomes: &[bool], test: &[f64], beta: f64) -> Result<bool> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
    }
    if quiz.is_empty() || quiz.len() != outcomes.len() {
        return Err(Error::Shape(format!(
            "{} quiz embeddings for {} outcomes",
            quiz.len(),
            outcomes.len()
        )));
    }
    // Summing in sorted order makes the result independent of quiz order
    // down to the last bit.
    let mut d2: Vec<(f64, bool)> = quiz
        .iter()
        .zip(outcomes)
        .map(|(q, &o)| (squared_distance(q, test), o))
        .collect();
    d2.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let dmin = d2[0].0;
    let (mut num, mut den) = (0.0, 0.0);
    for &(d, o) in &d2 {
        let w = (-beta * (d - dmin)).exp();
        den += w;
        if o {
            num += w;
        }
    }
    Ok(num / den > 0.5)
}

pub fn predict_softnn<E: Embedder + ?Sized>(model: &E, example: &QuizExample, beta: f64) -> Result<bool> {
    let (quiz, outcomes, test) = embed_example(model, example)?;
    softnn_from_embeddings(&quiz, &outcomes, &test, beta)
}

type EmbeddedExample = (Vec<Vec<f64>>, Vec<bool>, Vec<f64>);

fn embed_example<E: Embedder + ?Sized>(model: &E, example: &QuizExample) -> Result<EmbeddedExample> {
    let mut quiz = Vec::with_capacity(example.quiz.len());
    let mut outcomes = Vec::with_capacity(example.quiz.len());
    for (t, o) in &example.quiz {
        quiz.push(model.embed(t)?);
        outcomes.push(*o);
    }
    Ok((quiz, outcomes, model.embed(&example.test_task)?))
}

/// Picks the grid value with the highest accuracy on `train` (earliest on
/// ties). Returns `(beta, accuracy)`.
pub fn tune_beta<E: Embedder + ?Sized>(model: &E, train: &[QuizExample], grid: &[f64]) -> Result<(f64, f64)> {
    if train.is_empty() || grid.is_empty() {
        return Err(Error::InvalidArgument("beta tuning needs examples and a grid".into()));
    }
    let embedded = train
        .par_iter()
        .map(|ex| embed_example(model, ex))
        .collect::<Result<Vec<_>>>()?;
    let mut best = (grid[0], f64::NEG_INFINITY);
    for &beta in grid {
        let mut hits = 0usize;
        for ((q, o, t), ex) in embedded.iter().zip(train) {
            hits += usize::from(softnn_from_embeddings(q, o, t, beta)? == ex.test_outcome);
        }
        let acc = hits as f64 / train.len() as f64;
        if acc > best.1 {
            best = (beta, acc);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accuracy {
    pub mean: f64,
    pub stderr: f64,
    pub folds: Vec<f64>,
}

/// 10-fold accuracy. Examples are shuffled with `seed`, truncated to a
/// multiple of 10 and split into contiguous folds. `predictor` receives
/// the example's position in `dataset`.
pub fn eval_prediction<F>(dataset: &[QuizExample], predictor: F, seed: u64) -> Result<Accuracy>
where
    F: Fn(usize, &QuizExample) -> Result<bool> + Sync,
{
    let per_fold = dataset.len() / FOLDS;
    if per_fold == 0 {
        return Err(Error::InvalidArgument(format!(
            "need at least {FOLDS} examples, got {}",
            dataset.len()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    Rng::new(seed).shuffle(&mut order);
    order.truncate(per_fold * FOLDS);
    let hits = order
        .par_iter()
        .map(|&i| Ok(predictor(i, &dataset[i])? == dataset[i].test_outcome))
        .collect::<Result<Vec<bool>>>()?;
    let folds: Vec<f64> = hits
        .chunks(per_fold)
        .map(|c| c.iter().filter(|&&h| h).count() as f64 / per_fold as f64)
        .collect();
    let (mean, stderr) = mean_stderr(&folds);
    Ok(Accuracy { mean, stderr, folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictionBaseline {
    Random,
    IgnoreTask,
    IgnoreAgent,
    Opt,
}

impl PredictionBaseline {
    pub const ALL: [PredictionBaseline; 4] = [
        PredictionBaseline::Random,
        PredictionBaseline::IgnoreTask,
        PredictionBaseline::IgnoreAgent,
        PredictionBaseline::Opt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictionBaseline::Random => "Random",
            PredictionBaseline::IgnoreTask => "IgnoreTask",
            PredictionBaseline::IgnoreAgent => "IgnoreAgent",
            PredictionBaseline::Opt => "OPT",
        }
    }
}

/// Oracle resources for the prediction baselines.
pub struct BaselineContext<'a, P: AgentPool + ?Sized> {
    pool: &'a P,
    seed: u64,
    /// Hidden-agent success rates on random tasks, one per agent.
    agent_rates: Vec<f64>,
    pub ignore_agent_reps: usize,
    pub opt_reps: usize,
}

impl<'a, P: AgentPool + ?Sized> BaselineContext<'a, P> {
    pub const IGNORE_TASK_SAMPLES: usize = 500;

    /// Precomputes each agent's success rate on random tasks.
    pub fn new(pool: &'a P, seed: u64) -> Result<Self> {
        let env = pool.env();
        let agent_rates = (0..pool.num_agents())
            .into_par_iter()
            .map(|a| {
                let mut r = Rng::derived(seed, &[0, a as u64]);
                let mut wins = 0usize;
                for _ in 0..Self::IGNORE_TASK_SAMPLES {
                    let t = sample_task(env, &mut r, None)?;
                    wins += usize::from(pool.attempt(a, &t, &mut r)?);
                }
                Ok(wins as f64 / Self::IGNORE_TASK_SAMPLES as f64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            pool,
            seed,
            agent_rates,
            ignore_agent_reps: 10,
            opt_reps: 10,
        })
    }

    pub fn agent_rates(&self) -> &[f64] {
        &self.agent_rates
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.pool.num_agents() {
            return Err(Error::InvalidArgument(format!("hidden agent {agent} not in the pool")));
        }
        Ok(())
    }

    /// `IgnoreAgent` seeds its rollouts from the test task alone, so every
    /// example sharing a test task gets the same prediction.
    pub fn predict(&self, kind: PredictionBaseline, example: &QuizExample, rng: &mut Rng) -> Result<bool> {
        let pool = self.pool;
        match kind {
            PredictionBaseline::Random => Ok(rng.bernoulli(0.5)),
            PredictionBaseline::IgnoreTask => {
                self.check_agent(example.agent)?;
                Ok(self.agent_rates[example.agent] > 0.5)
            }
            PredictionBaseline::IgnoreAgent => {
                let mut path = vec![1u64];
                path.extend(example.test_task.state0.iter().map(|v| v.to_bits()));
                let mut r = Rng::derived(self.seed, &path);
                let mut wins = 0usize;
                for a in 0..pool.num_agents() {
                    for _ in 0..self.ignore_agent_reps {
                        wins += usize::from(pool.attempt(a, &example.test_task, &mut r)?);
                    }
                }
                Ok(wins as f64 / (pool.num_agents() * self.ignore_agent_reps) as f64 > 0.5)
            }
            PredictionBaseline::Opt => {
                self.check_agent(example.agent)?;
                let mut wins = 0usize;
                for _ in 0..self.opt_reps {
                    wins += usize::from(pool.attempt(example.agent, &example.test_task, rng)?);
                }
                Ok(wins as f64 / self.opt_reps as f64 > 0.5)
            }
        }
    }

    /// 10-fold accuracy of a baseline; example `i` draws from
    /// `derive_seed(seed, [i])`.
    pub fn evaluate(&self, kind: PredictionBaseline, dataset: &[QuizExample], seed: u64) -> Result<Accuracy> {
        eval_prediction(
            dataset,
            |i, ex| self.predict(kind, ex, &mut Rng::new(derive_seed(seed, &[i as u64]))),
            seed,
        )
    }
}

/// CSV with one row per task: `example,agent,role,outcome,env,<state>`,
/// where `role` is `quiz` or `test`.
pub fn quiz_to_csv(env: EnvId, dataset: &[QuizExample]) -> String {
    let mut out = format!("example,agent,role,outcome,{}\n", header(env));
    for (e, ex) in dataset.iter().enumerate() {
        let rows = ex
            .quiz
            .iter()
            .map(|(t, o)| ("quiz", t, *o))
            .chain(std::iter::once(("test", &ex.test_task, ex.test_outcome)));
        for (role, t, o) in rows {
            let _ = write!(out, "{e},{},{role},{},", ex.agent, u8::from(o));
            write_row(&mut out, t);
        }
    }
    out
}

pub fn quiz_from_csv(text: &str) -> Result<Vec<QuizExample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("example,agent,role,outcome,env") => {}
        _ => return Err(Error::Parse("quiz file header must start with 'example,agent,role,outcome,env'".into())),
    }
    let mut out: Vec<QuizExample> = Vec::new();
    let mut pending: Vec<(Task, bool)> = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let ln = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 5 {
            return Err(Error::Parse(format!("line {ln}: too few columns")));
        }
        let num = |c: &str| {
            c.parse::<usize>()
                .map_err(|e| Error::Parse(format!("line {ln}: bad integer '{c}': {e}")))
        };
        let example = num(cells[0])?;
        let agent = num(cells[1])?;
        let outcome = match cells[3] {
            "0" => false,
            "1" => true,
            o => return Err(Error::Parse(format!("line {ln}: outcome must be 0 or 1, got '{o}'"))),
        };
        let task = parse_task_cells(&cells[4..], ln)?;
        if example != out.len() {
            return Err(Error::Parse(format!("line {ln}: example {example} out of order")));
        }
        match cells[2] {
            "quiz" => pending.push((task, outcome)),
            "test" => {
                if pending.is_empty() {
                    return Err(Error::Parse(format!("line {ln}: test row without quiz rows")));
                }
                out.push(QuizExample {
                    quiz: std::mem::take(&mut pending),
                    test_task: task,
                    test_outcome: outcome,
                    agent,
                });
            }
            r => return Err(Error::Parse(format!("line {ln}: unknown role '{r}'"))),
        }
    }
    if !pending.is_empty() {
        return Err(Error::Parse("quiz rows after the last test row".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::testing::{task, TablePool};
    use proptest::prelude::*;
    use crate::numcore::Rng;

    /// Embeds a key-navigation task as its location.
    struct Location;

    impl Embedder for Location {
        fn env(&self) -> EnvId {
            EnvId::MULTI_KEY_NAV
        }

        fn embed(&self, t: &Task) -> Result<Vec<f64>> {
            Ok(vec![t.state0[0]])
        }
    }

    fn example(quiz: &[(usize, bool)], test: usize) -> QuizExample {
        QuizExample {
            quiz: quiz.iter().map(|&(k, o)| (task(k), o)).collect(),
            test_task: task(test),
            test_outcome: false,
            agent: 0,
        }
    }

    #[test]
    fn softnn_reference_cases() {
        assert!(predict_softnn(&Location, &example(&[(10, true)], 90), 1.0).unwrap());
        // The test task itself in the quiz dominates when beta is large.
        let ex = example(&[(50, false), (40, true), (60, true)], 50);
        assert!(!predict_softnn(&Location, &ex, 1e4).unwrap());
        // With a tiny beta the weights are nearly uniform: 2 of 3 succeed.
        assert!(predict_softnn(&Location, &ex, 1e-6).unwrap());
        for o in [false, true] {
            let ex = example(&[(0, o), (30, o), (99, o)], 50);
            for beta in BETA_GRID {
                assert_eq!(predict_softnn(&Location, &ex, beta).unwrap(), o);
            }
        }
        // An even split sits at c = 0.5, which is not above the threshold.
        assert!(!predict_softnn(&Location, &example(&[(40, true), (60, false)], 50), 10.0).unwrap());
        assert!(predict_softnn(&Location, &ex, 0.0).is_err());
    }

    #[test]
    fn softnn_survives_huge_distances() {
        let quiz = vec![vec![1e3], vec![2e3]];
        assert!(softnn_from_embeddings(&quiz, &[true, false], &[0.0], 1e4).unwrap());
    }

    fn pool() -> TablePool {
        // Agent 0 solves low locations, agent 1 high ones, agent 2 nothing.
        let lo: Vec<f64> = (0..=100).map(|k| if k < 50 { 1.0 } else { 0.0 }).collect();
        let hi: Vec<f64> = lo.iter().map(|p| 1.0 - p).collect();
        TablePool {
            probs: vec![lo, hi, vec![0.0; 101]],
        }
    }

    #[test]
    fn dataset_shape_and_determinism() {
        let p = pool();
        let a = gen_quiz_dataset(&p, 1, 50, &mut Rng::new(3)).unwrap();
        assert_eq!(a.len(), 50);
        assert!(a.iter().all(|e| e.quiz.len() == 1 && e.agent < 3));
        assert_eq!(a, gen_quiz_dataset(&p, 1, 50, &mut Rng::new(3)).unwrap());
        assert_ne!(a, gen_quiz_dataset(&p, 1, 50, &mut Rng::new(4)).unwrap());
        assert_eq!(gen_quiz_dataset(&p, 20, 5000, &mut Rng::new(1)).unwrap().len(), 5000);
        assert!(gen_quiz_dataset(&p, 0, 5, &mut Rng::new(1)).is_err());
        assert!(gen_quiz_dataset(&p, 21, 5, &mut Rng::new(1)).is_err());
    }

    #[test]
    fn outcomes_come_from_the_hidden_agent() {
        let p = pool();
        for ex in gen_quiz_dataset(&p, 5, 200, &mut Rng::new(8)).unwrap() {
            for (t, o) in ex.quiz.iter().chain(std::iter::once(&(ex.test_task.clone(), ex.test_outcome))) {
                let k = (t.state0[0] * 100.0).round() as usize;
                assert_eq!(*o, p.probs[ex.agent][k] == 1.0);
            }
        }
    }

    #[test]
    fn baselines_behave() {
        let p = pool();
        let data = gen_quiz_dataset(&p, 3, 5000, &mut Rng::new(9)).unwrap();
        let ctx = BaselineContext::new(&p, 11).unwrap();
        let random = ctx.evaluate(PredictionBaseline::Random, &data, 1).unwrap();
        assert!((random.mean - 0.5).abs() < 0.02, "{random:?}");
        // Deterministic agents: the oracle is always right.
        let opt = ctx.evaluate(PredictionBaseline::Opt, &data, 1).unwrap();
        assert_eq!(opt.mean, 1.0);
        assert_eq!(opt.stderr, 0.0);
        // Agents 0 and 1 each solve half the tasks, so their rates sit
        // near 0.5 and agent 2 never succeeds.
        assert!((ctx.agent_rates()[0] - 0.5).abs() < 0.08);
        assert_eq!(ctx.agent_rates()[2], 0.0);
        // One agent in three succeeds on any task: IgnoreAgent says no.
        let ex = &data[0];
        assert!(!ctx.predict(PredictionBaseline::IgnoreAgent, ex, &mut Rng::new(0)).unwrap());
    }

    #[test]
    fn ignore_agent_depends_only_on_test_task() {
        let probs: Vec<Vec<f64>> = (0..4).map(|_| vec![0.5; 101]).collect();
        let p = TablePool { probs };
        let ctx = BaselineContext::new(&p, 2).unwrap();
        let base = example(&[(3, true)], 42);
        let verdict = ctx.predict(PredictionBaseline::IgnoreAgent, &base, &mut Rng::new(0)).unwrap();
        for agent in 0..4 {
            let mut other = example(&[(7, false), (9, true)], 42);
            other.agent = agent;
            let got = ctx
                .predict(PredictionBaseline::IgnoreAgent, &other, &mut Rng::new(agent as u64 + 50))
                .unwrap();
            assert_eq!(got, verdict);
        }
    }

    #[test]
    fn eval_reference_cases() {
        let p = pool();
        let data = gen_quiz_dataset(&p, 2, 1003, &mut Rng::new(12)).unwrap();
        let perfect = eval_prediction(&data, |_, ex| Ok(ex.test_outcome), 0).unwrap();
        assert_eq!((perfect.mean, perfect.stderr), (1.0, 0.0));
        assert_eq!(perfect.folds.len(), 10);
        let a = eval_prediction(&data, |i, _| Ok(i % 3 == 0), 5).unwrap();
        assert_eq!(a, eval_prediction(&data, |i, _| Ok(i % 3 == 0), 5).unwrap());
        let positives = data.iter().filter(|e| e.test_outcome).count() as f64 / data.len() as f64;
        let yes = eval_prediction(&data, |_, _| Ok(true), 0).unwrap();
        assert!((yes.mean - positives).abs() < 0.01);
        assert!(eval_prediction(&data[..9], |_, _| Ok(true), 0).is_err());
    }

    #[test]
    fn beta_tuning_prefers_informative_values() {
        // Agents split the line at 0.5, so sharp neighbourhoods predict best.
        let p = pool();
        let data = gen_quiz_dataset(&p, 10, 400, &mut Rng::new(13)).unwrap();
        let (beta, acc) = tune_beta(&Location, &data, &BETA_GRID).unwrap();
        assert!(beta >= 100.0, "{beta}");
        assert!(acc > 0.85, "{acc}");
    }

    #[test]
    fn truncation_keeps_the_test_task() {
        let p = pool();
        let ex = gen_quiz_dataset(&p, 5, 1, &mut Rng::new(15)).unwrap().remove(0);
        let t = ex.truncated(2).unwrap();
        assert_eq!(t.quiz[..], ex.quiz[..2]);
        assert_eq!((&t.test_task, t.test_outcome, t.agent), (&ex.test_task, ex.test_outcome, ex.agent));
        assert!(ex.truncated(0).is_err() && ex.truncated(6).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let p = pool();
        let data = gen_quiz_dataset(&p, 4, 20, &mut Rng::new(14)).unwrap();
        let text = quiz_to_csv(EnvId::MULTI_KEY_NAV, &data);
        assert_eq!(quiz_from_csv(&text).unwrap(), data);
        assert!(quiz_from_csv(&text.replacen(",quiz,", ",bogus,", 1)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn softnn_ignores_quiz_order(
            quiz in prop::collection::vec((0usize..=100, any::<bool>()), 1..20),
            test in 0usize..=100,
            beta_idx in 0usize..BETA_GRID.len(),
            seed in any::<u64>(),
        ) {
            let ex = example(&quiz, test);
            let mut shuffled = ex.clone();
            Rng::new(seed).shuffle(&mut shuffled.quiz);
            let beta = BETA_GRID[beta_idx];
            prop_assert_eq!(
                predict_softnn(&Location, &ex, beta).unwrap(),
                predict_softnn(&Location, &shuffled, beta).unwrap()
            );
        }
    }
}
