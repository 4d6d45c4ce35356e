//! The pipeline stages, their dependency graph, and the manifest checks that
//! guard them.

use crate::config::{sha256_hex, PopulationSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_file, list_files, Manifest, StageRecord};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;
use taskemb::benchmarks::{
    cluster_label, collect_transitions, eval_prediction, gen_quiz_dataset, gen_selection_dataset, mean_stderr,
    prediction_plot_csv, predict_softnn, results_from_csv, results_to_csv, selection_accuracy, selection_plot_csv,
    selection_to_csv, silhouette, spearman, train_predmodel, tune_beta, BaselineContext, Embedder, OptSource,
    PredModel, PredictionBaseline, QueryType, QuizExample, ResultRow, SelectionContext, SelectionMethod, BETA_GRID,
};
use taskemb::embedding::{
    constraint_losses, dot, embeddings_to_csv, norm, pca_project, train_embedding, train_embedding_online,
    EmbeddingNet,
};
use taskemb::envs::{sample_tasks, taskfile, EnvId, Task};
use taskemb::numcore::{derive_seed, Rng};
use taskemb::population::{build_population, load_population, save_population, AgentPool, Population};
use taskemb::similarity::{gen_constraints, load_constraints, save_constraints, ConstraintSet, OutcomeTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    TrainPopulation,
    GenConstraints,
    TrainEmbedding,
    TrainPredModel,
    EvalPrediction,
    EvalSelection,
    Silhouette,
    DimSweep,
    ExportViz,
    PlotData,
}

impl Stage {
    /// Execution order of a full run.
    pub const ALL: [Stage; 10] = [
        Stage::TrainPopulation,
        Stage::GenConstraints,
        Stage::TrainEmbedding,
        Stage::TrainPredModel,
        Stage::EvalPrediction,
        Stage::EvalSelection,
        Stage::Silhouette,
        Stage::DimSweep,
        Stage::ExportViz,
        Stage::PlotData,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::TrainPopulation => "train-population",
            Stage::GenConstraints => "gen-constraints",
            Stage::TrainEmbedding => "train-embedding",
            Stage::TrainPredModel => "train-predmodel",
            Stage::EvalPrediction => "eval-prediction",
            Stage::EvalSelection => "eval-selection",
            Stage::Silhouette => "silhouette",
            Stage::DimSweep => "dim-sweep",
            Stage::ExportViz => "export-viz",
            Stage::PlotData => "plot-data",
        }
    }

    /// Directory below the output directory that the stage owns.
    pub fn dir_name(self) -> &'static str {
        match self {
            Stage::TrainPopulation => "population",
            Stage::GenConstraints => "constraints",
            Stage::TrainEmbedding => "embedding",
            Stage::TrainPredModel => "predmodel",
            Stage::EvalPrediction => "prediction",
            Stage::EvalSelection => "selection",
            Stage::Silhouette => "silhouette",
            Stage::DimSweep => "dim_sweep",
            Stage::ExportViz => "viz",
            Stage::PlotData => "plots",
        }
    }

    pub fn upstream(self) -> &'static [Stage] {
        use Stage::*;
        match self {
            TrainPopulation | TrainPredModel => &[],
            GenConstraints => &[TrainPopulation],
            TrainEmbedding => &[TrainPopulation, GenConstraints],
            EvalPrediction | EvalSelection => &[TrainPopulation, TrainEmbedding, TrainPredModel],
            Silhouette => &[TrainPopulation, GenConstraints, TrainEmbedding, TrainPredModel],
            DimSweep => &[GenConstraints],
            ExportViz => &[TrainEmbedding],
            PlotData => &[EvalPrediction, EvalSelection],
        }
    }

    /// The config values this stage reads directly, in a stable text form.
    fn own_settings(self, cfg: &RunConfig) -> String {
        let s = &cfg.seeds;
        match self {
            Stage::TrainPopulation => format!("{} {} {:?}", cfg.env, s.population, cfg.population),
            Stage::GenConstraints => format!("{} {:?}", s.constraints, cfg.constraints),
            Stage::TrainEmbedding => format!("{} {:?}", s.training, cfg.training),
            Stage::TrainPredModel => format!("{} {} {:?}", cfg.env, s.benchmarks, cfg.predmodel),
            Stage::EvalPrediction => format!("{} {:?}", s.benchmarks, cfg.prediction),
            Stage::EvalSelection => format!("{} {:?}", s.benchmarks, cfg.selection),
            Stage::Silhouette => format!("{} {} {:?}", s.root, s.training, cfg.evaluation),
            Stage::DimSweep => format!("{} {:?} {:?}", s.root, cfg.training, cfg.evaluation.sweep_dims),
            Stage::ExportViz => format!("{} {}", s.root, cfg.evaluation.eval_tasks),
            Stage::PlotData => String::new(),
        }
    }

    /// Hash of this stage's settings and those of everything upstream.
    pub fn fingerprint(self, cfg: &RunConfig) -> String {
        let mut text = format!("{}\n{}\n", self.name(), self.own_settings(cfg));
        for up in self.upstream() {
            let _ = writeln!(text, "{}", up.fingerprint(cfg));
        }
        sha256_hex(text.as_bytes())
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageStatus {
    Ran { seconds: f64 },
    UpToDate,
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> CliResult<T>;
}

impl<T> AtStage<T> for taskemb::Result<T> {
    fn at(self, stage: Stage) -> CliResult<T> {
        self.map_err(|source| CliError::Stage {
            stage: stage.name(),
            source,
        })
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Population settings stored next to the agents for provenance.
#[derive(Serialize)]
struct RecipeRecord<'a> {
    env: &'a str,
    seed: u64,
    population: &'a PopulationSection,
}

/// Task index ranges of the three constraint splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn new(n: usize, val_fraction: f64, test_fraction: f64) -> Self {
        let val = (n as f64 * val_fraction).round() as usize;
        let test = (n as f64 * test_fraction).round() as usize;
        let train = n - val - test;
        Self {
            train: 0..train,
            val: train..train + val,
            test: train + val..n,
        }
    }

    fn named(&self) -> [(&'static str, Range<usize>); 3] {
        [
            ("train", self.train.clone()),
            ("val", self.val.clone()),
            ("test", self.test.clone()),
        ]
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("split,start,end\n");
        for (name, r) in self.named() {
            let _ = writeln!(out, "{name},{},{}", r.start, r.end);
        }
        out
    }

    fn from_csv(text: &str) -> Option<Self> {
        let mut ranges = text.lines().skip(1).map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            Some(c.get(1)?.parse().ok()?..c.get(2)?.parse().ok()?)
        });
        Some(Self {
            train: ranges.next()??,
            val: ranges.next()??,
            test: ranges.next()??,
        })
    }
}

fn offset(mut set: ConstraintSet, by: usize) -> ConstraintSet {
    for t in &mut set.triplets {
        t.tasks = t.tasks.map(|i| i + by);
    }
    for p in &mut set.pairs {
        p.tasks = p.tasks.map(|i| i + by);
    }
    set
}

/// Share of triplets whose more-similar task has the larger inner product.
pub fn triplet_satisfaction(embeddings: &[Vec<f64>], set: &ConstraintSet) -> f64 {
    if set.triplets.is_empty() {
        return 0.0;
    }
    let ok = set
        .triplets
        .iter()
        .filter(|c| {
            let [a, b, d] = c.ordered();
            dot(&embeddings[a], &embeddings[b]) > dot(&embeddings[a], &embeddings[d])
        })
        .count();
    ok as f64 / set.triplets.len() as f64
}

/// One pipeline run rooted at the config's output directory.
pub struct Pipeline {
    cfg: RunConfig,
    env: EnvId,
    dir: PathBuf,
    force: bool,
    manifest: Manifest,
    quiet: bool,
}

impl Pipeline {
    /// Creates the output directory if needed and loads its manifest.
    pub fn new(cfg: RunConfig, force: bool) -> CliResult<Self> {
        cfg.validate()?;
        let env = cfg.env_id()?;
        let dir = cfg.output_dir.clone();
        std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
            path: dir.clone(),
            source,
        })?;
        let manifest = Manifest::load(&dir)?;
        Ok(Self {
            cfg,
            env,
            dir,
            force,
            manifest,
            quiet: false,
        })
    }

    pub fn quiet(mut self, quiet: bool) -> Self {
        self.quiet = quiet;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.dir.join(stage.dir_name())
    }

    fn say(&self, msg: impl fmt::Display) {
        if !self.quiet {
            eprintln!("{msg}");
        }
    }

    fn files_intact(&self, files: &BTreeMap<String, String>) -> CliResult<Option<String>> {
        for (rel, hash) in files {
            let path = self.resolve(rel);
            if !path.is_file() {
                return Ok(Some(format!("{rel} is missing")));
            }
            if hash_file(&path)? != *hash {
                return Ok(Some(format!("{rel} changed since it was recorded")));
            }
        }
        Ok(None)
    }

    fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    /// Why the upstream of `stage` cannot be trusted, if it cannot.
    fn upstream_problem(&self, stage: Stage) -> CliResult<Option<String>> {
        for &up in stage.upstream() {
            let Some(rec) = self.manifest.stages.get(up.name()) else {
                return Ok(Some(format!("upstream stage {up} has not been run")));
            };
            if rec.fingerprint != up.fingerprint(&self.cfg) {
                return Ok(Some(format!("upstream stage {up} was run with different settings")));
            }
            if let Some(p) = self.files_intact(&rec.outputs)? {
                return Ok(Some(format!("upstream stage {up}: {p}")));
            }
        }
        Ok(None)
    }

    fn upstream_outputs(&self, stage: Stage) -> BTreeMap<String, String> {
        stage
            .upstream()
            .iter()
            .filter_map(|up| self.manifest.stages.get(up.name()))
            .flat_map(|r| r.outputs.clone())
            .collect()
    }

    fn external_inputs(&self, stage: Stage) -> CliResult<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        if stage == Stage::EvalPrediction {
            if let Some(p) = &self.cfg.prediction.agent_population {
                let abs = if p.is_absolute() { p.clone() } else { self.dir.join(p) };
                for rel in list_files(&abs)? {
                    let path = abs.join(&rel);
                    out.insert(path.to_string_lossy().into_owned(), hash_file(&path)?);
                }
            }
        }
        Ok(out)
    }

    fn up_to_date(&self, stage: Stage, inputs: &BTreeMap<String, String>) -> CliResult<bool> {
        let Some(rec) = self.manifest.stages.get(stage.name()) else {
            return Ok(false);
        };
        Ok(rec.fingerprint == stage.fingerprint(&self.cfg)
            && rec.inputs == *inputs
            && !rec.outputs.is_empty()
            && self.files_intact(&rec.outputs)?.is_none())
    }

    /// Runs one stage. Without `force`, refuses when upstream artifacts are
    /// missing or do not match the manifest, and skips the stage when its
    /// recorded outputs already match the current settings and inputs.
    pub fn run(&mut self, stage: Stage) -> CliResult<StageStatus> {
        if !self.force {
            if let Some(detail) = self.upstream_problem(stage)? {
                return Err(CliError::Stale {
                    stage: stage.name(),
                    detail,
                });
            }
        }
        let mut inputs = self.upstream_outputs(stage);
        inputs.extend(self.external_inputs(stage)?);
        if !self.force && self.up_to_date(stage, &inputs)? {
            self.say(format_args!("{stage}: up to date"));
            return Ok(StageStatus::UpToDate);
        }
        let out = self.stage_dir(stage);
        if out.exists() {
            std::fs::remove_dir_all(&out).map_err(|source| CliError::Io {
                path: out.clone(),
                source,
            })?;
        }
        std::fs::create_dir_all(&out).map_err(|source| CliError::Io {
            path: out.clone(),
            source,
        })?;
        self.say(format_args!("{stage}: running"));
        let start = Instant::now();
        self.execute(stage, &out)?;
        let seconds = start.elapsed().as_secs_f64();
        let mut outputs = BTreeMap::new();
        for rel in list_files(&out)? {
            let key = format!("{}/{rel}", stage.dir_name());
            outputs.insert(key, hash_file(&out.join(&rel))?);
        }
        self.manifest.config_hash = self.cfg.hash();
        self.manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                fingerprint: stage.fingerprint(&self.cfg),
                seconds,
                inputs,
                outputs,
            },
        );
        self.manifest.save(&self.dir)?;
        self.say(format_args!("{stage}: done in {seconds:.1}s"));
        Ok(StageStatus::Ran { seconds })
    }

    pub fn run_all(&mut self) -> CliResult<Vec<(Stage, StageStatus)>> {
        Stage::ALL.iter().map(|&s| Ok((s, self.run(s)?))).collect()
    }

    fn execute(&self, stage: Stage, out: &Path) -> CliResult<()> {
        match stage {
            Stage::TrainPopulation => self.train_population(out),
            Stage::GenConstraints => self.gen_constraints(out),
            Stage::TrainEmbedding => self.train_embedding(out),
            Stage::TrainPredModel => self.train_predmodel(out),
            Stage::EvalPrediction => self.eval_prediction(out),
            Stage::EvalSelection => self.eval_selection(out),
            Stage::Silhouette => self.silhouette(out),
            Stage::DimSweep => self.dim_sweep(out),
            Stage::ExportViz => self.export_viz(out),
            Stage::PlotData => self.plot_data(out),
        }
    }

    // Artifact loaders shared by the stages.

    pub fn load_population(&self, stage: Stage) -> CliResult<Population> {
        load_population(&self.stage_dir(Stage::TrainPopulation)).at(stage)
    }

    pub fn load_pool_tasks(&self, stage: Stage) -> CliResult<(Vec<Task>, Splits)> {
        let dir = self.stage_dir(Stage::GenConstraints);
        let tasks = taskfile::load_tasks(&dir.join("tasks.csv")).at(stage)?;
        let path = dir.join("splits.csv");
        let splits = Splits::from_csv(&read(&path)?).ok_or_else(|| CliError::Stage {
            stage: stage.name(),
            source: taskemb::Error::Parse(format!("{}: malformed split table", path.display())),
        })?;
        Ok((tasks, splits))
    }

    pub fn load_constraints(&self, stage: Stage, split: &str) -> CliResult<ConstraintSet> {
        load_constraints(&self.stage_dir(Stage::GenConstraints).join(format!("{split}.csv"))).at(stage)
    }

    pub fn load_embedding(&self, stage: Stage, with_norm: bool) -> CliResult<EmbeddingNet> {
        let file = if with_norm { "embedding.txt" } else { "embedding_wo_norm.txt" };
        let net = EmbeddingNet::load(&self.stage_dir(Stage::TrainEmbedding).join(file)).at(stage)?;
        self.check_env(stage, net.env())?;
        Ok(net)
    }

    pub fn load_predmodel(&self, stage: Stage) -> CliResult<PredModel> {
        let pm = PredModel::load(&self.stage_dir(Stage::TrainPredModel).join("predmodel.txt")).at(stage)?;
        self.check_env(stage, pm.env())?;
        Ok(pm)
    }

    fn check_env(&self, stage: Stage, got: EnvId) -> CliResult<()> {
        if got != self.env {
            return Err(CliError::Stage {
                stage: stage.name(),
                source: taskemb::Error::EnvMismatch {
                    expected: self.env.name().into(),
                    got: got.name().into(),
                },
            });
        }
        Ok(())
    }

    /// The untrained network that `train-embedding` starts from.
    pub fn initial_embedding(&self, with_norm: bool) -> CliResult<EmbeddingNet> {
        let t = &self.cfg.training;
        let (dim, k) = if with_norm { (t.dim, 0) } else { (t.dim_wo_norm, 1) };
        EmbeddingNet::new(self.env, dim, &t.hidden, &mut Rng::derived(self.cfg.seeds.training, &[k, 0]))
            .at(Stage::TrainEmbedding)
    }

    /// Labelled evaluation tasks shared by `silhouette` and `export-viz`.
    pub fn eval_tasks(&self, stage: Stage) -> CliResult<Vec<Task>> {
        let n = self.cfg.evaluation.eval_tasks;
        sample_tasks(self.env, n, &mut Rng::derived(self.cfg.seeds.root, &[1]), None).at(stage)
    }

    fn train_population(&self, out: &Path) -> CliResult<()> {
        let st = Stage::TrainPopulation;
        let recipe = self.cfg.recipe()?;
        let pop = build_population(self.env, &recipe, self.cfg.seeds.population).at(st)?;
        save_population(out, &pop).at(st)?;
        let record = RecipeRecord {
            env: &self.cfg.env,
            seed: self.cfg.seeds.population,
            population: &self.cfg.population,
        };
        let text = toml::to_string(&record).expect("recipe record is plain data");
        write(&out.join("recipe.toml"), &text)?;
        self.say(format_args!("  {} agents", pop.len()));
        Ok(())
    }

    fn gen_constraints(&self, out: &Path) -> CliResult<()> {
        let st = Stage::GenConstraints;
        let c = &self.cfg.constraints;
        let seed = self.cfg.seeds.constraints;
        let pop = self.load_population(st)?;
        let tasks = sample_tasks(self.env, c.pool_tasks, &mut Rng::derived(seed, &[0]), None).at(st)?;
        let splits = Splits::new(tasks.len(), c.val_fraction, c.test_fraction);
        for (k, (name, range)) in splits.named().into_iter().enumerate() {
            let count = [c.train, c.val, c.test][k];
            let table = OutcomeTable::build(&tasks[range.clone()], &pop, c.mi_reps, derive_seed(seed, &[1, k as u64]))
                .at(st)?;
            let set = gen_constraints(&table, &self.cfg.constraint_config(count), &mut Rng::derived(seed, &[2, k as u64]))
                .at(st)?;
            save_constraints(&out.join(format!("{name}.csv")), &offset(set, range.start)).at(st)?;
        }
        taskfile::save_tasks(&out.join("tasks.csv"), self.env, &tasks).at(st)?;
        write(&out.join("splits.csv"), &splits.to_csv())
    }

    fn train_embedding(&self, out: &Path) -> CliResult<()> {
        let st = Stage::TrainEmbedding;
        let (tasks, splits) = self.load_pool_tasks(st)?;
        let train = self.load_constraints(st, "train")?;
        let val = self.load_constraints(st, "val")?;
        let test = self.load_constraints(st, "test")?;
        let t = &self.cfg.training;
        let pop = if t.online { Some(self.load_population(st)?) } else { None };
        let mut summary = String::from("model,lambda,dim,best_epoch,best_val_loss,test_loss,train_triplet_satisfaction\n");
        for (k, name, lambda) in [(0u64, "embedding", t.lambda), (1, "embedding_wo_norm", 0.0)] {
            let init = self.initial_embedding(k == 0)?;
            let dim = init.dim();
            let mut rng = Rng::derived(self.cfg.seeds.training, &[k, 1]);
            let (net, best_epoch) = match &pop {
                Some(pop) => {
                    let (net, losses) = train_embedding_online(
                        init,
                        &tasks[splits.train.clone()],
                        pop,
                        &self.cfg.online_config(lambda),
                        &mut rng,
                    )
                    .at(st)?;
                    let mut log = String::from("iteration,loss\n");
                    for (i, l) in losses.iter().enumerate() {
                        let _ = writeln!(log, "{},{l:?}", i + 1);
                    }
                    write(&out.join(format!("{name}_log.csv")), &log)?;
                    (net, losses.len())
                }
                None => {
                    let (net, log) =
                        train_embedding(init, &tasks, &train, &val, Some(&test), &self.cfg.train_config(lambda), &mut rng)
                            .at(st)?;
                    let mut text = String::from("epoch,train_loss,val_loss\n");
                    let _ = writeln!(text, "0,{:?},{:?}", log.initial_train_loss, log.initial_val_loss);
                    for e in &log.epochs {
                        let _ = writeln!(text, "{},{:?},{:?}", e.epoch, e.train_loss, e.val_loss);
                    }
                    write(&out.join(format!("{name}_log.csv")), &text)?;
                    (net, log.best_epoch)
                }
            };
            let emb = net.embed_all(&tasks).at(st)?;
            let loss = |set: &ConstraintSet| {
                let (tl, pl) = constraint_losses(&emb, set);
                tl + lambda * pl
            };
            let _ = writeln!(
                summary,
                "{name},{lambda:?},{dim},{best_epoch},{:?},{:?},{:?}",
                loss(&val),
                loss(&test),
                triplet_satisfaction(&emb, &train)
            );
            net.save(&out.join(format!("{name}.txt"))).at(st)?;
        }
        write(&out.join("summary.csv"), &summary)
    }

    fn train_predmodel(&self, out: &Path) -> CliResult<()> {
        let st = Stage::TrainPredModel;
        let cfg = self.cfg.predmodel_config();
        let seed = self.cfg.seeds.benchmarks;
        let data = collect_transitions(self.env, cfg.rollouts, &mut Rng::derived(seed, &[10])).at(st)?;
        let (model, log) = train_predmodel(&data, &cfg, &mut Rng::derived(seed, &[11])).at(st)?;
        let mut text = String::from("epoch,total,kl,reward,dynamics\n");
        for (e, l) in std::iter::once(&log.initial).chain(&log.epochs).enumerate() {
            let _ = writeln!(text, "{e},{:?},{:?},{:?},{:?}", l.total, l.kl, l.reward, l.dynamics);
        }
        write(&out.join("log.csv"), &text)?;
        model.save(&out.join("predmodel.txt")).at(st)
    }

    fn prediction_agents(&self, st: Stage) -> CliResult<Population> {
        match &self.cfg.prediction.agent_population {
            Some(p) => {
                let abs = if p.is_absolute() { p.clone() } else { self.dir.join(p) };
                let pop = load_population(&abs).at(st)?;
                self.check_env(st, AgentPool::env(&pop))?;
                Ok(pop)
            }
            None => self.load_population(st),
        }
    }

    fn eval_prediction(&self, out: &Path) -> CliResult<()> {
        let st = Stage::EvalPrediction;
        let p = &self.cfg.prediction;
        let seed = self.cfg.seeds.benchmarks;
        let agents = self.prediction_agents(st)?;
        let ours = self.load_embedding(st, true)?;
        let pm = self.load_predmodel(st)?;
        let max_q = *p.quiz_sizes.iter().max().expect("validated non-empty");
        let tune_set = gen_quiz_dataset(&agents, max_q, p.examples, &mut Rng::derived(seed, &[20])).at(st)?;
        let test_set = gen_quiz_dataset(&agents, max_q, p.examples, &mut Rng::derived(seed, &[21])).at(st)?;
        let eval_seed = derive_seed(seed, &[23]);
        // The baselines never look at the quiz, so one evaluation serves
        // every quiz size.
        let ctx = BaselineContext::new(&agents, derive_seed(seed, &[22])).at(st)?;
        let baselines = PredictionBaseline::ALL
            .iter()
            .map(|&k| Ok((k.name(), ctx.evaluate(k, &test_set, eval_seed).at(st)?)))
            .collect::<CliResult<Vec<_>>>()?;
        let truncate = |set: &[QuizExample], q: usize| set.iter().map(|e| e.truncated(q)).collect::<taskemb::Result<Vec<_>>>();
        let models: [(&str, &dyn Embedder); 2] = [("Ours", &ours), ("PredModel", &pm)];
        let mut rows = Vec::new();
        let mut betas = String::from("method,quiz_size,beta,tuning_accuracy\n");
        for &q in &p.quiz_sizes {
            let tune_q = truncate(&tune_set, q).at(st)?;
            let test_q = truncate(&test_set, q).at(st)?;
            for (name, acc) in &baselines {
                rows.push(ResultRow::new(*name, q.to_string(), acc.mean, acc.stderr));
            }
            for (name, model) in models {
                let (beta, tuned) = tune_beta(model, &tune_q, &BETA_GRID).at(st)?;
                let acc = eval_prediction(&test_q, |_, ex| predict_softnn(model, ex, beta), eval_seed).at(st)?;
                rows.push(ResultRow::new(name, q.to_string(), acc.mean, acc.stderr));
                let _ = writeln!(betas, "{name},{q},{beta:?},{tuned:?}");
            }
        }
        write(&out.join("results.csv"), &results_to_csv(&rows))?;
        write(&out.join("beta.csv"), &betas)
    }

    fn eval_selection(&self, out: &Path) -> CliResult<()> {
        let st = Stage::EvalSelection;
        let seed = self.cfg.seeds.benchmarks;
        let pop = self.load_population(st)?;
        let ours = self.load_embedding(st, true)?;
        let wo_norm = self.load_embedding(st, false)?;
        let pm = self.load_predmodel(st)?;
        let scfg = self.cfg.selection_config();
        let mut rows = Vec::new();
        let mut per_dataset = String::from("query_type,dataset,method,top1,top3\n");
        for (qi, qt) in [QueryType::Type1, QueryType::Type2].into_iter().enumerate() {
            let mut acc: Vec<(Vec<f64>, Vec<f64>)> = vec![(Vec::new(), Vec::new()); SelectionMethod::ALL.len()];
            for d in 0..self.cfg.selection.datasets as u64 {
                let path = [qi as u64, d];
                let ds = gen_selection_dataset(&pop, qt, &scfg, &mut Rng::derived(seed, &[30, path[0], path[1]])).at(st)?;
                write(&out.join(format!("{qt}_{d}.csv")), &selection_to_csv(self.env, &ds))?;
                let mut ctx = SelectionContext::new(scfg).with_pool(&pop, derive_seed(seed, &[31, path[0], path[1]]));
                ctx.ours = Some(&ours);
                ctx.ours_wo_norm = Some(&wo_norm);
                ctx.predmodel = Some(&pm);
                ctx.opt_source = OptSource::Fresh(derive_seed(seed, &[32, path[0], path[1]]));
                for (m, slot) in SelectionMethod::ALL.iter().zip(&mut acc) {
                    let (t1, t3) = selection_accuracy(*m, &ds, &ctx, derive_seed(seed, &[33, path[0], path[1]])).at(st)?;
                    let _ = writeln!(per_dataset, "{qt},{d},{},{t1:?},{t3:?}", m.name());
                    slot.0.push(t1);
                    slot.1.push(t3);
                }
            }
            for (m, (t1, t3)) in SelectionMethod::ALL.iter().zip(&acc) {
                for (k, v) in [("top1", t1), ("top3", t3)] {
                    let (mean, se) = mean_stderr(v);
                    rows.push(ResultRow::new(m.name(), format!("{qt}_{k}"), mean, se));
                }
            }
        }
        write(&out.join("results.csv"), &results_to_csv(&rows))?;
        write(&out.join("per_dataset.csv"), &per_dataset)
    }

    fn silhouette(&self, out: &Path) -> CliResult<()> {
        let st = Stage::Silhouette;
        let ev = &self.cfg.evaluation;
        let root = self.cfg.seeds.root;
        let tasks = self.eval_tasks(st)?;
        let labels: Vec<u32> = tasks.iter().map(cluster_label).collect();
        let ours = self.load_embedding(st, true)?;
        let wo_norm = self.load_embedding(st, false)?;
        let untrained = self.initial_embedding(true)?;
        let pm = self.load_predmodel(st)?;
        let models: [(&str, &dyn Embedder); 4] = [
            ("Ours", &ours),
            ("OursWoNorm", &wo_norm),
            ("Untrained", &untrained),
            ("PredModel", &pm),
        ];
        let mut text = String::from("model,tasks,silhouette\n");
        for (name, model) in models {
            let s = silhouette(&model.embed_all(&tasks).at(st)?, &labels).at(st)?;
            let _ = writeln!(text, "{name},eval,{s:?}");
        }
        // Constraint-pool splits: tasks the network was fitted on against
        // tasks no constraint touched.
        let (pool, splits) = self.load_pool_tasks(st)?;
        for (split, range) in [("train_split", splits.train), ("heldout_split", splits.test)] {
            let part = &pool[range];
            let l: Vec<u32> = part.iter().map(cluster_label).collect();
            let s = silhouette(&ours.embed_all(part).at(st)?, &l).at(st)?;
            let _ = writeln!(text, "Ours,{split},{s:?}");
        }
        write(&out.join("silhouette.csv"), &text)?;

        let pop = self.load_population(st)?;
        let norm_tasks = sample_tasks(self.env, ev.norm_tasks, &mut Rng::derived(root, &[2]), None).at(st)?;
        let table = OutcomeTable::build(&norm_tasks, &pop, ev.norm_pos_reps, derive_seed(root, &[3])).at(st)?;
        let difficulty = (0..norm_tasks.len())
            .map(|i| table.pos(i).map(|p| 1.0 - p))
            .collect::<taskemb::Result<Vec<_>>>()
            .at(st)?;
        let mut text = String::from("model,lambda,spearman\n");
        for (name, model, lambda) in [("Ours", &ours, self.cfg.training.lambda), ("OursWoNorm", &wo_norm, 0.0)] {
            let norms: Vec<f64> = model.embed_all(&norm_tasks).at(st)?.iter().map(|e| norm(e)).collect();
            let rho = spearman(&norms, &difficulty).at(st)?;
            let _ = writeln!(text, "{name},{lambda:?},{rho:?}");
        }
        write(&out.join("norm_difficulty.csv"), &text)
    }

    fn dim_sweep(&self, out: &Path) -> CliResult<()> {
        let st = Stage::DimSweep;
        let (tasks, _) = self.load_pool_tasks(st)?;
        let train = self.load_constraints(st, "train")?;
        let val = self.load_constraints(st, "val")?;
        let test = self.load_constraints(st, "test")?;
        let t = &self.cfg.training;
        let root = self.cfg.seeds.root;
        let mut text = String::from("dim,best_epoch,val_loss,test_loss\n");
        for &dim in &self.cfg.evaluation.sweep_dims {
            let init = EmbeddingNet::new(self.env, dim, &t.hidden, &mut Rng::derived(root, &[10, dim as u64])).at(st)?;
            let (_, log) = train_embedding(
                init,
                &tasks,
                &train,
                &val,
                Some(&test),
                &self.cfg.train_config(t.lambda),
                &mut Rng::derived(root, &[11, dim as u64]),
            )
            .at(st)?;
            let test_loss = log.test_loss.expect("test set supplied");
            let _ = writeln!(text, "{dim},{},{:?},{test_loss:?}", log.best_epoch, log.best_val_loss);
            self.say(format_args!("  dim {dim}: test loss {test_loss:.4}"));
        }
        write(&out.join("dim_sweep.csv"), &text)
    }

    fn export_viz(&self, out: &Path) -> CliResult<()> {
        let st = Stage::ExportViz;
        let tasks = self.eval_tasks(st)?;
        let ours = self.load_embedding(st, true)?;
        let emb = ours.embed_all(&tasks).at(st)?;
        taskfile::save_tasks(&out.join("tasks.csv"), self.env, &tasks).at(st)?;
        write(&out.join("embeddings.csv"), &embeddings_to_csv(&emb))?;
        let k = ours.dim().min(2);
        let pca = pca_project(&emb, k).at(st)?;
        let mut text = String::from("task_index");
        for c in 1..=k {
            let _ = write!(text, ",pc_{c}");
        }
        text.push_str(",label,norm\n");
        for (i, (p, e)) in pca.projected.iter().zip(&emb).enumerate() {
            let _ = write!(text, "{i}");
            for v in p {
                let _ = write!(text, ",{v:?}");
            }
            let _ = writeln!(text, ",{},{:?}", cluster_label(&tasks[i]), norm(e));
        }
        write(&out.join("pca.csv"), &text)?;
        let mut var = String::from("component,explained_variance_ratio\n");
        for (c, r) in pca.explained.iter().enumerate() {
            let _ = writeln!(var, "{},{r:?}", c + 1);
        }
        write(&out.join("pca_variance.csv"), &var)
    }

    fn plot_data(&self, out: &Path) -> CliResult<()> {
        let st = Stage::PlotData;
        let parse = |stage: Stage| -> CliResult<Vec<ResultRow>> {
            results_from_csv(&read(&self.stage_dir(stage).join("results.csv"))?).at(st)
        };
        write(&out.join("prediction.csv"), &prediction_plot_csv(&parse(Stage::EvalPrediction)?))?;
        write(&out.join("selection.csv"), &selection_plot_csv(&parse(Stage::EvalSelection)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_cover_the_pool_disjointly() {
        let s = Splits::new(1000, 0.1, 0.2);
        assert_eq!((s.train.clone(), s.val.clone(), s.test.clone()), (0..700, 700..800, 800..1000));
        assert_eq!(Splits::from_csv(&s.to_csv()), Some(s));
        assert_eq!(Splits::from_csv("split,start,end\ntrain,0,x\n"), None);
    }

    #[test]
    fn offsets_shift_every_index() {
        use taskemb::similarity::{PairConstraint, TripletConstraint};
        let set = ConstraintSet {
            triplets: vec![TripletConstraint {
                tasks: [0, 1, 2],
                label: true,
                est: [0.1, 0.0],
            }],
            pairs: vec![PairConstraint {
                tasks: [3, 0],
                label: false,
                est: [0.2, 0.5],
            }],
        };
        let s = offset(set, 10);
        assert_eq!(s.triplets[0].tasks, [10, 11, 12]);
        assert_eq!(s.pairs[0].tasks, [13, 10]);
    }

    #[test]
    fn fingerprints_follow_the_dependency_graph() {
        use crate::config::Preset;
        let a = RunConfig::preset(EnvId::MULTI_KEY_NAV, Preset::Desk, 0, "out").unwrap();
        let mut b = a.clone();
        b.training.epochs += 1;
        for s in Stage::ALL {
            let changed = s.fingerprint(&a) != s.fingerprint(&b);
            let expect = matches!(
                s,
                Stage::TrainEmbedding
                    | Stage::EvalPrediction
                    | Stage::EvalSelection
                    | Stage::Silhouette
                    | Stage::DimSweep
                    | Stage::ExportViz
                    | Stage::PlotData
            );
            assert_eq!(changed, expect, "{s}");
        }
        let mut c = a.clone();
        c.threads = Some(4);
        c.output_dir = "elsewhere".into();
        assert!(Stage::ALL.iter().all(|s| s.fingerprint(&a) == s.fingerprint(&c)));
    }

    #[test]
    fn satisfaction_counts_ordered_triplets() {
        use taskemb::similarity::TripletConstraint;
        let emb = vec![vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]];
        let trip = |label| TripletConstraint {
            tasks: [0, 1, 2],
            label,
            est: [0.0; 2],
        };
        let set = ConstraintSet {
            triplets: vec![trip(true), trip(false)],
            pairs: vec![],
        };
        assert_eq!(triplet_satisfaction(&emb, &set), 0.5);
    }
}
