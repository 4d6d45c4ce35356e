//! Task selection: pick the option most similar to a reference task
//! (Type-1), or the most similar among those harder than it (Type-2).

use super::Embedder;
use crate::embedding::{dot, norm, squared_distance};
use crate::envs::taskfile::{header, parse_task_cells, write_row};
use crate::envs::{rollout, sample_tasks, Action, EnvId, ExpertActor, Task};
use crate::error::{Error, Result};
use crate::numcore::{derive_seed, Rng};
use crate::population::{features, AgentPool};
use crate::similarity::OutcomeTable;
use rayon::prelude::*;
use std::fmt::{self, Write as _};
use std::str::FromStr;

/// Seed for the expert rollouts behind trajectory similarity.
const TRAJECTORY_SEED: u64 = 0x7261_6a65;
/// Draws per example before a Type-2 example is declared unsatisfiable.
const MAX_TYPE2_DRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueryType {
    Type1,
    Type2,
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryType::Type1 => "type1",
            QueryType::Type2 => "type2",
        })
    }
}

impl FromStr for QueryType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "type1" => Ok(QueryType::Type1),
            "type2" => Ok(QueryType::Type2),
            _ => Err(Error::Parse(format!("unknown query type '{s}' (valid: type1, type2)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub examples: usize,
    pub options: usize,
    pub easy_refs: usize,
    pub easy_pool: usize,
    /// Repetitions per agent behind similarity estimates.
    pub mi_reps: usize,
    /// Repetitions per agent behind difficulty estimates.
    pub pos_reps: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            examples: 50,
            options: 10,
            easy_refs: 5,
            easy_pool: 500,
            mi_reps: 100,
            pos_reps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionExample {
    pub s_ref: Task,
    pub options: Vec<Task>,
    pub easy_refs: Vec<Task>,
    pub query_type: QueryType,
    pub ground_truth: usize,
    /// Ground-truth MI between the reference and each option.
    pub gt_mi: Vec<f64>,
    /// Ground-truth PoS of each option.
    pub gt_pos: Vec<f64>,
    pub ref_pos: f64,
    /// Seed of the outcome table behind the ground truth.
    pub seed: u64,
}

/// Reference first, then options.
fn example_tasks(s_ref: &Task, options: &[Task]) -> Vec<Task> {
    let mut v = Vec::with_capacity(options.len() + 1);
    v.push(s_ref.clone());
    v.extend_from_slice(options);
    v
}

fn argmax_among(values: &[f64], candidates: &[usize]) -> usize {
    let mut best = candidates[0];
    for &c in &candidates[1..] {
        if values[c] > values[best] {
            best = c;
        }
    }
    best
}

/// Indices of the `k` highest-PoS tasks in a fresh pool, ties by index.
fn easy_references<P: AgentPool + ?Sized>(
    pool: &P,
    cfg: &SelectionConfig,
    root: u64,
) -> Result<Vec<Task>> {
    let env = pool.env();
    let candidates = sample_tasks(env, cfg.easy_pool, &mut Rng::derived(root, &[0]), None)?;
    let table = OutcomeTable::build(&candidates, pool, cfg.pos_reps, derive_seed(root, &[1]))?;
    let pos = (0..candidates.len())
        .map(|i| table.pos(i))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| pos[b].total_cmp(&pos[a]).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(cfg.easy_refs)
        .map(|i| candidates[i].clone())
        .collect())
}

/// One dataset of `cfg.examples` examples sharing a set of easy references.
/// Type-2 examples with no option harder than the reference are redrawn.
pub fn gen_selection_dataset<P: AgentPool + ?Sized>(
    pool: &P,
    query_type: QueryType,
    cfg: &SelectionConfig,
    rng: &mut Rng,
) -> Result<Vec<SelectionExample>> {
    if cfg.options == 0 || cfg.easy_refs == 0 || cfg.easy_refs > cfg.easy_pool {
        return Err(Error::InvalidArgument(format!("bad selection config {cfg:?}")));
    }
    if cfg.pos_reps == 0 || cfg.pos_reps > cfg.mi_reps {
        return Err(Error::InvalidArgument(format!(
            "difficulty repetitions {} must lie in 1..={}",
            cfg.pos_reps, cfg.mi_reps
        )));
    }
    let root = rng.next_seed();
    let env = pool.env();
    let easy_refs = easy_references(pool, cfg, root)?;
    (0..cfg.examples)
        .into_par_iter()
        .map(|e| {
            for attempt in 0..MAX_TYPE2_DRAWS {
                let seed = derive_seed(root, &[2, e as u64, attempt as u64]);
                let mut r = Rng::new(seed);
                let mut tasks = sample_tasks(env, cfg.options + 1, &mut r, None)?;
                let table = OutcomeTable::build(&tasks, pool, cfg.mi_reps, seed)?;
                let ref_pos = table.pos_with(0, None, cfg.pos_reps)?;
                let mut gt_mi = Vec::with_capacity(cfg.options);
                let mut gt_pos = Vec::with_capacity(cfg.options);
                for o in 1..=cfg.options {
                    gt_mi.push(table.mi(0, o)?);
                    gt_pos.push(table.pos_with(o, None, cfg.pos_reps)?);
                }
                let candidates: Vec<usize> = match query_type {
                    QueryType::Type1 => (0..cfg.options).collect(),
                    QueryType::Type2 => (0..cfg.options).filter(|&o| gt_pos[o] < ref_pos).collect(),
                };
                if candidates.is_empty() {
                    continue;
                }
                let options = tasks.split_off(1);
                return Ok(SelectionExample {
                    s_ref: tasks.pop().expect("reference task"),
                    ground_truth: argmax_among(&gt_mi, &candidates),
                    options,
                    easy_refs: easy_refs.clone(),
                    query_type,
                    gt_mi,
                    gt_pos,
                    ref_pos,
                    seed,
                });
            }
            Err(Error::FilterExhausted(MAX_TYPE2_DRAWS as u64))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionMethod {
    Ours,
    OursWoNorm,
    Random,
    StateSim,
    TrajectorySim,
    Opt,
    Opt50,
    PredModel,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 8] = [
        SelectionMethod::Ours,
        SelectionMethod::OursWoNorm,
        SelectionMethod::Random,
        SelectionMethod::StateSim,
        SelectionMethod::TrajectorySim,
        SelectionMethod::Opt,
        SelectionMethod::Opt50,
        SelectionMethod::PredModel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Ours => "Ours",
            SelectionMethod::OursWoNorm => "OursWoNorm",
            SelectionMethod::Random => "Random",
            SelectionMethod::StateSim => "StateSim",
            SelectionMethod::TrajectorySim => "TrajectorySim",
            SelectionMethod::Opt => "OPT",
            SelectionMethod::Opt50 => "OPT50",
            SelectionMethod::PredModel => "PredModel",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|m| m.name()).collect();
                Error::Parse(format!("unknown selection method '{s}' (valid: {})", names.join(", ")))
            })
    }
}

/// Where the population-based methods get their outcome samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptSource {
    /// Reuse the ground truth's table seed; OPT then reproduces it exactly.
    SameAsGroundTruth,
    /// Fresh rollouts seeded from this root and the example's seed.
    Fresh(u64),
}

/// Resources each selection method needs; missing ones make that method
/// report an error.
pub struct SelectionContext<'a> {
    pub ours: Option<&'a dyn Embedder>,
    pub ours_wo_norm: Option<&'a dyn Embedder>,
    pub predmodel: Option<&'a dyn Embedder>,
    pub pool: Option<&'a dyn AgentPool>,
    pub opt_source: OptSource,
    /// Agent subset behind OPT50.
    pub half_population: Vec<usize>,
    pub config: SelectionConfig,
}

impl<'a> SelectionContext<'a> {
    pub fn new(config: SelectionConfig) -> Self {
        Self {
            ours: None,
            ours_wo_norm: None,
            predmodel: None,
            pool: None,
            opt_source: OptSource::Fresh(0),
            half_population: Vec::new(),
            config,
        }
    }

    /// Sets the pool and draws OPT50's half of it with `seed`.
    pub fn with_pool(mut self, pool: &'a dyn AgentPool, seed: u64) -> Self {
        let mut agents: Vec<usize> = (0..pool.num_agents()).collect();
        Rng::new(seed).shuffle(&mut agents);
        agents.truncate(pool.num_agents().div_ceil(2));
        agents.sort_unstable();
        self.half_population = agents;
        self.pool = Some(pool);
        self
    }
}

/// Similarity of each option to the reference, and which options the
/// method deems harder than it (`None`: the method cannot tell).
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionScores {
    pub similarity: Vec<f64>,
    pub harder: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub order: Vec<usize>,
    /// Leading entries of `order` that passed the Type-2 hardness filter;
    /// 0 for Type-1 queries and when the filter emptied.
    pub harder_prefix: usize,
}

impl Ranking {
    pub fn hit(&self, ground_truth: usize, k: usize) -> bool {
        self.order.iter().take(k).any(|&o| o == ground_truth)
    }
}

fn by_similarity(sim: &[f64], mut idx: Vec<usize>) -> Vec<usize> {
    idx.sort_by(|&a, &b| sim[b].total_cmp(&sim[a]).then(a.cmp(&b)));
    idx
}

/// Type-1 sorts by similarity. Type-2 puts options deemed harder first,
/// each group sorted by similarity; with no harder option it falls back
/// to the Type-1 order.
pub fn rank_options(scores: &SelectionScores, query_type: QueryType) -> Ranking {
    let n = scores.similarity.len();
    let all: Vec<usize> = (0..n).collect();
    let harder = match (query_type, &scores.harder) {
        (QueryType::Type2, Some(h)) => h,
        _ => {
            return Ranking {
                order: by_similarity(&scores.similarity, all),
                harder_prefix: 0,
            }
        }
    };
    let (hard, easy): (Vec<usize>, Vec<usize>) = all.into_iter().partition(|&o| harder[o]);
    let harder_prefix = hard.len();
    let mut order = by_similarity(&scores.similarity, hard);
    order.extend(by_similarity(&scores.similarity, easy));
    Ranking { order, harder_prefix }
}

/// Expert action sequence from a fixed seed, as symbols. Continuous forces
/// become one of 8 direction sectors.
pub fn trajectory_symbols(task: &Task) -> Result<Vec<u32>> {
    let r = rollout(task, &ExpertActor, &mut Rng::new(TRAJECTORY_SEED), true)?;
    let steps = r.trajectory.expect("recorded").steps;
    Ok(steps
        .iter()
        .map(|(_, a)| match *a {
            Action::Discrete(k) => k as u32,
            Action::Continuous([fx, fy]) => {
                let turn = (fy.atan2(fx) + std::f64::consts::PI) / std::f64::consts::TAU;
                ((turn * 8.0).floor() as u32).min(7)
            }
        })
        .collect())
}

/// Hardness by the easy-reference rule: a task is harder than the
/// reference when its best similarity to any easy reference is strictly
/// lower. Ties count as not harder.
fn easy_rule<F>(example: &SelectionExample, sim: F) -> Result<Vec<bool>>
where
    F: Fn(&Task, &Task) -> Result<f64>,
{
    let closeness = |t: &Task| -> Result<f64> {
        let mut best = f64::NEG_INFINITY;
        for e in &example.easy_refs {
            best = best.max(sim(t, e)?);
        }
        Ok(best)
    };
    let r = closeness(&example.s_ref)?;
    example
        .options
        .iter()
        .map(|o| Ok(closeness(o)? < r))
        .collect()
}

fn missing(method: SelectionMethod, what: &str) -> Error {
    Error::InvalidArgument(format!("{method} is unavailable: no {what} supplied"))
}

fn embedding_scores(model: &dyn Embedder, example: &SelectionExample) -> Result<SelectionScores> {
    let e_ref = model.embed(&example.s_ref)?;
    let mut similarity = Vec::with_capacity(example.options.len());
    let mut harder = Vec::with_capacity(example.options.len());
    let n_ref = norm(&e_ref);
    for o in &example.options {
        let e = model.embed(o)?;
        similarity.push(dot(&e_ref, &e));
        harder.push(norm(&e) > n_ref);
    }
    Ok(SelectionScores {
        similarity,
        harder: Some(harder),
    })
}

/// Scores under `method`. Only `Random` reads `rng`.
pub fn method_scores(
    method: SelectionMethod,
    example: &SelectionExample,
    ctx: &SelectionContext<'_>,
    rng: &mut Rng,
) -> Result<SelectionScores> {
    let n = example.options.len();
    match method {
        SelectionMethod::Ours => embedding_scores(ctx.ours.ok_or_else(|| missing(method, "embedding model"))?, example),
        SelectionMethod::OursWoNorm => embedding_scores(
            ctx.ours_wo_norm.ok_or_else(|| missing(method, "embedding model"))?,
            example,
        ),
        SelectionMethod::Random => Ok(SelectionScores {
            similarity: (0..n).map(|_| rng.unit()).collect(),
            harder: None,
        }),
        SelectionMethod::StateSim => {
            let env = example.s_ref.env;
            let sim = |a: &Task, b: &Task| -> Result<f64> {
                Ok(-squared_distance(&features(env, &a.state0), &features(env, &b.state0)).sqrt())
            };
            let similarity = example
                .options
                .iter()
                .map(|o| sim(&example.s_ref, o))
                .collect::<Result<Vec<_>>>()?;
            Ok(SelectionScores {
                similarity,
                harder: Some(easy_rule(example, sim)?),
            })
        }
        SelectionMethod::TrajectorySim => {
            let sim = |a: &Task, b: &Task| -> Result<f64> {
                let (x, y) = (trajectory_symbols(a)?, trajectory_symbols(b)?);
                Ok(-(strsim::generic_levenshtein(&x, &y) as f64))
            };
            let similarity = example
                .options
                .iter()
                .map(|o| sim(&example.s_ref, o))
                .collect::<Result<Vec<_>>>()?;
            Ok(SelectionScores {
                similarity,
                harder: Some(easy_rule(example, sim)?),
            })
        }
        SelectionMethod::PredModel => {
            let model = ctx.predmodel.ok_or_else(|| missing(method, "PredModel"))?;
            let sim = |a: &Task, b: &Task| -> Result<f64> {
                Ok(-squared_distance(&model.embed(a)?, &model.embed(b)?).sqrt())
            };
            let similarity = example
                .options
                .iter()
                .map(|o| sim(&example.s_ref, o))
                .collect::<Result<Vec<_>>>()?;
            Ok(SelectionScores {
                similarity,
                harder: Some(easy_rule(example, sim)?),
            })
        }
        SelectionMethod::Opt | SelectionMethod::Opt50 => {
            let pool = ctx.pool.ok_or_else(|| missing(method, "agent population"))?;
            let agents = match method {
                SelectionMethod::Opt50 if ctx.half_population.is_empty() => {
                    return Err(missing(method, "population half"));
                }
                SelectionMethod::Opt50 => Some(ctx.half_population.as_slice()),
                _ => None,
            };
            let seed = match ctx.opt_source {
                OptSource::SameAsGroundTruth => example.seed,
                OptSource::Fresh(root) => derive_seed(root, &[example.seed]),
            };
            let tasks = example_tasks(&example.s_ref, &example.options);
            let table = OutcomeTable::build(&tasks, pool, ctx.config.mi_reps, seed)?;
            let ref_pos = table.pos_with(0, agents, ctx.config.pos_reps)?;
            let mut similarity = Vec::with_capacity(n);
            let mut harder = Vec::with_capacity(n);
            for o in 1..=n {
                similarity.push(table.counts(0, o, agents, ctx.config.mi_reps)?.value());
                harder.push(table.pos_with(o, agents, ctx.config.pos_reps)? < ref_pos);
            }
            Ok(SelectionScores {
                similarity,
                harder: Some(harder),
            })
        }
    }
}

pub fn select(
    method: SelectionMethod,
    example: &SelectionExample,
    ctx: &SelectionContext<'_>,
    rng: &mut Rng,
) -> Result<Ranking> {
    Ok(rank_options(&method_scores(method, example, ctx, rng)?, example.query_type))
}

/// Top-1 and Top-3 accuracy of `method` over one dataset. Example `i`
/// draws from `derive_seed(seed, [i])`.
pub fn selection_accuracy(
    method: SelectionMethod,
    dataset: &[SelectionExample],
    ctx: &SelectionContext<'_>,
    seed: u64,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("empty selection dataset".into()));
    }
    let hits = dataset
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            let r = select(method, ex, ctx, &mut Rng::new(derive_seed(seed, &[i as u64])))?;
            Ok((r.hit(ex.ground_truth, 1), r.hit(ex.ground_truth, 3)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = dataset.len() as f64;
    let top1 = hits.iter().filter(|h| h.0).count() as f64 / n;
    let top3 = hits.iter().filter(|h| h.1).count() as f64 / n;
    Ok((top1, top3))
}

/// One row per task: `example,query_type,ground_truth,seed,ref_pos,role,
/// index,mi,pos,env,<state>` with `role` one of `ref`, `option`, `easy`.
/// `mi` and `pos` are filled for options only.
pub fn selection_to_csv(env: EnvId, dataset: &[SelectionExample]) -> String {
    let mut out = format!(
        "example,query_type,ground_truth,seed,ref_pos,role,index,mi,pos,{}\n",
        header(env)
    );
    for (e, ex) in dataset.iter().enumerate() {
        let prefix = format!("{e},{},{},{},{:?}", ex.query_type, ex.ground_truth, ex.seed, ex.ref_pos);
        let _ = write!(out, "{prefix},ref,0,,,");
        write_row(&mut out, &ex.s_ref);
        for (i, o) in ex.options.iter().enumerate() {
            let _ = write!(out, "{prefix},option,{i},{:?},{:?},", ex.gt_mi[i], ex.gt_pos[i]);
            write_row(&mut out, o);
        }
        for (i, t) in ex.easy_refs.iter().enumerate() {
            let _ = write!(out, "{prefix},easy,{i},,,");
            write_row(&mut out, t);
        }
    }
    out
}

pub fn selection_from_csv(text: &str) -> Result<Vec<SelectionExample>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("example,query_type,ground_truth,seed,ref_pos,role,index,mi,pos,env") => {}
        _ => return Err(Error::Parse("not a selection dataset file".into())),
    }
    let mut out: Vec<SelectionExample> = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let ln = i + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 10 {
            return Err(Error::Parse(format!("line {ln}: too few columns")));
        }
        let bad = |what: &str, c: &str| Error::Parse(format!("line {ln}: bad {what} '{c}'"));
        let example: usize = cells[0].parse().map_err(|_| bad("example", cells[0]))?;
        let task = parse_task_cells(&cells[9..], ln)?;
        match cells[5] {
            "ref" => {
                if example != out.len() {
                    return Err(Error::Parse(format!("line {ln}: example {example} out of order")));
                }
                out.push(SelectionExample {
                    s_ref: task,
                    options: Vec::new(),
                    easy_refs: Vec::new(),
                    query_type: cells[1].parse()?,
                    ground_truth: cells[2].parse().map_err(|_| bad("ground truth", cells[2]))?,
                    gt_mi: Vec::new(),
                    gt_pos: Vec::new(),
                    ref_pos: cells[4].parse().map_err(|_| bad("PoS", cells[4]))?,
                    seed: cells[3].parse().map_err(|_| bad("seed", cells[3]))?,
                });
            }
            role @ ("option" | "easy") => {
                let current = example + 1 == out.len();
                let ex = out
                    .last_mut()
                    .filter(|_| current)
                    .ok_or_else(|| Error::Parse(format!("line {ln}: {role} row before its reference")))?;
                if role == "option" {
                    ex.gt_mi.push(cells[7].parse().map_err(|_| bad("MI", cells[7]))?);
                    ex.gt_pos.push(cells[8].parse().map_err(|_| bad("PoS", cells[8]))?);
                    ex.options.push(task);
                } else {
                    ex.easy_refs.push(task);
                }
            }
            r => return Err(Error::Parse(format!("line {ln}: unknown role '{r}'"))),
        }
    }
    for (e, ex) in out.iter().enumerate() {
        if ex.ground_truth >= ex.options.len() || ex.easy_refs.is_empty() {
            return Err(Error::Parse(format!("example {e} is incomplete")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::testing::{task, TablePool};
    use proptest::prelude::*;
    use crate::numcore::Rng;

    /// Agents solve tasks left of their threshold; task difficulty grows
    /// with location.
    fn threshold_pool(agents: usize) -> TablePool {
        TablePool {
            probs: (0..agents)
                .map(|a| {
                    let cut = (a + 1) * 100 / (agents + 1);
                    (0..=100).map(|k| if k <= cut { 0.95 } else { 0.05 }).collect()
                })
                .collect(),
        }
    }

    fn small_cfg() -> SelectionConfig {
        SelectionConfig {
            examples: 30,
            easy_pool: 100,
            mi_reps: 20,
            ..SelectionConfig::default()
        }
    }

    #[test]
    fn dataset_invariants() {
        let pool = threshold_pool(8);
        let cfg = small_cfg();
        for qt in [QueryType::Type1, QueryType::Type2] {
            let data = gen_selection_dataset(&pool, qt, &cfg, &mut Rng::new(1)).unwrap();
            assert_eq!(data.len(), 30);
            for ex in &data {
                assert_eq!(ex.options.len(), 10);
                assert_eq!(ex.easy_refs.len(), 5);
                assert!(ex.ground_truth < 10);
                let best = ex.gt_mi[ex.ground_truth];
                if qt == QueryType::Type2 {
                    assert!(ex.gt_pos[ex.ground_truth] < ex.ref_pos);
                    for o in 0..10 {
                        if ex.gt_pos[o] < ex.ref_pos {
                            assert!(ex.gt_mi[o] <= best);
                        }
                    }
                } else {
                    assert!(ex.gt_mi.iter().all(|&m| m <= best));
                }
            }
            // The shared easy references are the easiest tasks: low locations.
            assert!(data[0].easy_refs.iter().all(|t| t.state0[0] <= 0.12), "{:?}", data[0].easy_refs);
        }
    }

    #[test]
    fn easy_refs_are_top_of_the_pool() {
        let pool = threshold_pool(6);
        let cfg = small_cfg();
        let root = 77;
        let refs = easy_references(&pool, &cfg, root).unwrap();
        let candidates = sample_tasks(pool.env(), cfg.easy_pool, &mut Rng::derived(root, &[0]), None).unwrap();
        let table = OutcomeTable::build(&candidates, &pool, cfg.pos_reps, derive_seed(root, &[1])).unwrap();
        let worst_ref = refs
            .iter()
            .map(|r| table.pos(candidates.iter().position(|c| c == r).unwrap()).unwrap())
            .fold(f64::INFINITY, f64::min);
        let above = (0..candidates.len())
            .filter(|&i| table.pos(i).unwrap() > worst_ref)
            .count();
        assert!(above < 5);
    }

    #[test]
    fn opt_with_ground_truth_seeds_is_exact() {
        let pool = threshold_pool(8);
        let cfg = small_cfg();
        for qt in [QueryType::Type1, QueryType::Type2] {
            let data = gen_selection_dataset(&pool, qt, &cfg, &mut Rng::new(2)).unwrap();
            let mut ctx = SelectionContext::new(cfg).with_pool(&pool, 3);
            ctx.opt_source = OptSource::SameAsGroundTruth;
            assert_eq!(selection_accuracy(SelectionMethod::Opt, &data, &ctx, 0).unwrap().0, 1.0);
            ctx.opt_source = OptSource::Fresh(9);
            let (fresh, _) = selection_accuracy(SelectionMethod::Opt, &data, &ctx, 0).unwrap();
            assert!((0.0..=1.0).contains(&fresh));
            assert_eq!(ctx.half_population.len(), 4);
            selection_accuracy(SelectionMethod::Opt50, &data, &ctx, 0).unwrap();
        }
    }

    #[test]
    fn random_hits_at_chance() {
        let pool = threshold_pool(4);
        let mut cfg = small_cfg();
        cfg.examples = 2000;
        cfg.mi_reps = 10;
        let data = gen_selection_dataset(&pool, QueryType::Type2, &cfg, &mut Rng::new(4)).unwrap();
        let ctx = SelectionContext::new(cfg);
        let (top1, top3) = selection_accuracy(SelectionMethod::Random, &data, &ctx, 5).unwrap();
        assert!((top1 - 0.1).abs() < 0.02, "{top1}");
        assert!((top3 - 0.3).abs() < 0.03, "{top3}");
    }

    #[test]
    fn missing_resources_are_errors() {
        let pool = threshold_pool(3);
        let data = gen_selection_dataset(&pool, QueryType::Type1, &small_cfg(), &mut Rng::new(6)).unwrap();
        let ctx = SelectionContext::new(small_cfg());
        for m in [
            SelectionMethod::Ours,
            SelectionMethod::OursWoNorm,
            SelectionMethod::PredModel,
            SelectionMethod::Opt,
            SelectionMethod::Opt50,
        ] {
            assert!(select(m, &data[0], &ctx, &mut Rng::new(0)).is_err(), "{m}");
        }
        select(SelectionMethod::StateSim, &data[0], &ctx, &mut Rng::new(0)).unwrap();
    }

    #[test]
    fn statesim_uses_the_easy_reference_rule() {
        let mk = |k| task(k);
        let ex = SelectionExample {
            s_ref: mk(50),
            options: vec![mk(80), mk(20), mk(50), mk(60)],
            easy_refs: vec![mk(0), mk(10)],
            query_type: QueryType::Type2,
            ground_truth: 0,
            gt_mi: vec![0.0; 4],
            gt_pos: vec![0.0; 4],
            ref_pos: 1.0,
            seed: 0,
        };
        let ctx = SelectionContext::new(small_cfg());
        let s = method_scores(SelectionMethod::StateSim, &ex, &ctx, &mut Rng::new(0)).unwrap();
        // Farther from the easy references than the reference is: harder.
        // The duplicate of the reference ties and is not harder.
        assert_eq!(s.harder, Some(vec![true, false, false, true]));
        let r = rank_options(&s, QueryType::Type2);
        assert_eq!(r.order, vec![3, 0, 2, 1]);
        assert_eq!(r.harder_prefix, 2);
        assert_eq!(rank_options(&s, QueryType::Type1).order, vec![2, 3, 1, 0]);
    }

    #[test]
    fn trajectory_symbols_are_deterministic() {
        let t = task(30);
        let a = trajectory_symbols(&t).unwrap();
        assert_eq!(a, trajectory_symbols(&t).unwrap());
        assert!(a.iter().all(|&s| s < 7));
        let pm = Task::new(EnvId::PointMass, crate::envs::pointmass::initial_state(2.0, 1.0, 1.0)).unwrap();
        let p = trajectory_symbols(&pm).unwrap();
        assert!(!p.is_empty() && p.iter().all(|&s| s < 8));
    }

    #[test]
    fn method_names_round_trip() {
        for m in SelectionMethod::ALL {
            assert_eq!(m.name().parse::<SelectionMethod>().unwrap(), m);
        }
        assert!("Oracle".parse::<SelectionMethod>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let pool = threshold_pool(5);
        let mut cfg = small_cfg();
        cfg.examples = 4;
        let data = gen_selection_dataset(&pool, QueryType::Type2, &cfg, &mut Rng::new(8)).unwrap();
        let text = selection_to_csv(EnvId::MULTI_KEY_NAV, &data);
        assert_eq!(selection_from_csv(&text).unwrap(), data);
        assert!(selection_from_csv(&text.replacen(",option,", ",opt,", 1)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]
        #[test]
        fn rankings_survive_monotone_transforms(
            sim in prop::collection::vec(-5.0f64..5.0, 10),
            harder in prop::collection::vec(any::<bool>(), 10),
            type2 in any::<bool>(),
        ) {
            let qt = if type2 { QueryType::Type2 } else { QueryType::Type1 };
            let a = SelectionScores { similarity: sim.clone(), harder: Some(harder.clone()) };
            let b = SelectionScores {
                similarity: sim.iter().map(|x| 2.0 * x + 1.0).collect(),
                harder: Some(harder),
            };
            prop_assert_eq!(rank_options(&a, qt), rank_options(&b, qt));
        }

        #[test]
        fn type2_filter_is_sound(
            sim in prop::collection::vec(-5.0f64..5.0, 10),
            harder in prop::collection::vec(any::<bool>(), 10),
        ) {
            let s = SelectionScores { similarity: sim, harder: Some(harder.clone()) };
            let r = rank_options(&s, QueryType::Type2);
            prop_assert_eq!(r.harder_prefix, harder.iter().filter(|&&h| h).count());
            for &o in &r.order[..r.harder_prefix] {
                prop_assert!(harder[o]);
            }
            for w in r.order[..r.harder_prefix].windows(2) {
                prop_assert!(s.similarity[w[0]] >= s.similarity[w[1]]);
            }
            let mut sorted = r.order.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        }
    }
}
