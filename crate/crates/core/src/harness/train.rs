//! Training runs for the three tasks, their output directories, and the
//! error type the command line maps to exit codes.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::diffcore::{DiffError, ParamSet, Session};
use crate::error::ModelError;
use crate::harness::checkpoint::{self, CheckpointError};
use crate::harness::config::{TaskId, TrainConfig};
use crate::harness::eval::{eval_perplexity_run, eval_sort_accuracy, eval_star_nll, sort_nll, star_views};
use crate::harness::metrics::{MetricLog, Split};
use crate::harness::optim::{Optimizer, PlateauHalving};
use crate::order_search::{
    order_search_train_step, Candidates, ChosenOrdering, OrderSearchSchedule, Ordering, OrderingLog, MAX_EXHAUSTIVE,
};
use crate::seq_models::{natural_tokens, PositionedToken, SeqModel, SeqModelConfig, SymbolSequence};
use crate::set_models::{pack_scalar_sets, SetPointerModel};
use crate::tasks::{
    gen_markov_corpus, gen_sorting_instance, gen_star_model_with_vocab, sample_star, MarkovCorpusSpec, SortingInstance,
    StarAssignment, StarModel,
};

const STREAM_INIT: u64 = 0;
const STREAM_VALID: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_TRAIN_DATA: u64 = 3;
const STREAM_VIEWS: u64 = 4;
const STREAM_BATCH: u64 = 16;

/// The generator for one named stream of a seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Batch generator for training step `step`.
pub fn batch_rng(seed: u64, step: usize) -> ChaCha8Rng {
    stream_rng(seed, STREAM_BATCH + step as u64)
}

/// State dumped when training produces a non-finite loss or gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct AbortReport {
    pub step: usize,
    pub seed: u64,
    /// Stream of [`batch_rng`] that produced the offending batch.
    pub batch_stream: u64,
    pub loss: f64,
    pub detail: String,
    pub param_norms: Vec<(String, f64)>,
}

impl fmt::Display for AbortReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "non-finite training state at step {}: {}", self.step, self.detail)?;
        writeln!(f, "  loss {:?}, seed {}, batch stream {}", self.loss, self.seed, self.batch_stream)?;
        write!(f, "  parameter norms:")?;
        for (name, norm) in &self.param_norms {
            write!(f, "\n    {name:<28} {norm:?}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(ModelError),
    #[error("training aborted: {0}")]
    Abort(Box<AbortReport>),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// 2 for configuration errors, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type HarnessResult<T> = Result<T, HarnessError>;

fn abort(step: usize, seed: u64, loss: f64, detail: String, params: &ParamSet) -> HarnessError {
    let param_norms = params.iter().map(|(n, t)| (n.to_string(), t.norm_sq().sqrt())).collect();
    HarnessError::Abort(Box::new(AbortReport {
        step,
        seed,
        batch_stream: STREAM_BATCH + step as u64,
        loss,
        detail,
        param_norms,
    }))
}

/// Turns non-finite values met during a step into an abort.
fn step_error(e: ModelError, step: usize, seed: u64, params: &ParamSet) -> HarnessError {
    match e {
        ModelError::NonFinite(what) => abort(step, seed, f64::NAN, what, params),
        ModelError::Diff(DiffError::NonFinite(op)) => abort(step, seed, f64::NAN, format!("value in {op}"), params),
        e => e.into(),
    }
}

/// One gradient step on the loss `forward` builds.
fn sgd_step<F>(opt: &mut Optimizer, params: &mut ParamSet, step: usize, seed: u64, forward: F) -> HarnessResult<f64>
where
    F: FnOnce(&mut Session) -> Result<crate::diffcore::Var, ModelError>,
{
    let computed = (|| {
        let mut s = Session::new(params);
        let l = forward(&mut s)?;
        let loss = s.value(l).item();
        Ok::<_, ModelError>((loss, s.backward(l)?))
    })();
    let (loss, grads) = computed.map_err(|e| step_error(e, step, seed, params))?;
    if !loss.is_finite() {
        return Err(abort(step, seed, loss, "loss".into(), params));
    }
    opt.step(params, grads).map_err(|e| step_error(e, step, seed, params))?;
    Ok(loss)
}

#[derive(Clone, Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Model {
    Set(SetPointerModel),
    Seq(SeqModel),
}

impl Model {
    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Set(m) => &m.params,
            Model::Seq(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Set(m) => &mut m.params,
            Model::Seq(m) => &mut m.params,
        }
    }
}

/// The freshly initialized model a configuration trains.
pub fn build_model(cfg: &TrainConfig) -> HarnessResult<Model> {
    cfg.validate().map_err(HarnessError::Config)?;
    let mut rng = stream_rng(cfg.seed, STREAM_INIT);
    Ok(match cfg.task {
        TaskId::Sort => Model::Set(SetPointerModel::new(cfg.set_model_config(), &mut rng)?),
        TaskId::Star => Model::Seq(SeqModel::new(seq_config(cfg, false), &mut rng)?),
        TaskId::Ngram => Model::Seq(SeqModel::new(seq_config(cfg, true), &mut rng)?),
    })
}

fn seq_config(cfg: &TrainConfig, positioned: bool) -> SeqModelConfig {
    let base = if positioned { SeqModelConfig::positioned(cfg.vocab) } else { SeqModelConfig::plain(cfg.vocab) };
    SeqModelConfig { d_emb: cfg.embedding, d_h: cfg.hidden, ..base }
}

/// Everything a finished run produced.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: TrainConfig,
    pub model: Model,
    pub log: MetricLog,
    /// Final test metrics, also present in `log` under the test split.
    pub test: Vec<(String, f64)>,
    /// Orderings chosen at each training step of an order search.
    pub orderings: Vec<(usize, Vec<ChosenOrdering>)>,
}

impl RunResult {
    pub fn test_metric(&self, name: &str) -> Option<f64> {
        self.test.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Receives one line per validation check.
pub type Progress<'a> = Option<&'a mut dyn FnMut(&str)>;

fn report(progress: &mut Progress<'_>, line: String) {
    if let Some(p) = progress.as_mut() {
        p(&line);
    }
}

/// Trains the configured task for `max_steps` and evaluates on the test
/// split.
pub fn train(cfg: &TrainConfig, progress: Progress<'_>) -> HarnessResult<RunResult> {
    cfg.validate().map_err(HarnessError::Config)?;
    match cfg.task {
        TaskId::Sort => train_sort(cfg, progress),
        TaskId::Star => train_star(cfg, progress),
        TaskId::Ngram => train_ngram(cfg, progress),
    }
}

/// Test metrics of `model` under `cfg`; the same numbers a run logs at the
/// end of training.
pub fn evaluate(cfg: &TrainConfig, model: &Model) -> HarnessResult<Vec<(String, f64)>> {
    cfg.validate().map_err(HarnessError::Config)?;
    match (cfg.task, model) {
        (TaskId::Sort, Model::Set(m)) => {
            let test = SortData::new(cfg).test;
            let acc = eval_sort_accuracy(m, &test)?;
            let mut out = vec![("accuracy".to_string(), acc.exact), ("nll".to_string(), sort_nll(m, &test)?)];
            out.extend(acc.per_position.iter().enumerate().map(|(k, a)| (format!("position_accuracy_{}", k + 1), *a)));
            Ok(out)
        }
        (TaskId::Star, Model::Seq(m)) => {
            let data = StarData::new(cfg);
            let e = eval_star_nll(m, &data.star, &data.test, &data.test_views)?;
            Ok(vec![
                ("nll".into(), e.mean_nll),
                ("oracle_nll".into(), e.oracle_nll),
                ("oracle_gap".into(), e.gap),
                ("oracle_gap_se".into(), e.gap_se),
            ])
        }
        (TaskId::Ngram, Model::Seq(m)) => {
            let data = NgramData::new(cfg)?;
            let ordering = cfg.ordering.clone().unwrap_or_else(|| Ordering::identity(cfg.n));
            lm_metrics(m, &data.test, &ordering, data.floor, cfg.n)
        }
        _ => Err(HarnessError::Config(ModelError::Invalid("model does not match the configured task".into()))),
    }
}

struct SortData {
    valid: Vec<SortingInstance>,
    test: Vec<SortingInstance>,
}

impl SortData {
    fn new(cfg: &TrainConfig) -> Self {
        let gen = |stream, count| {
            let mut rng = stream_rng(cfg.data_seed, stream);
            (0..count).map(|_| gen_sorting_instance(cfg.n, &mut rng)).collect()
        };
        SortData { valid: gen(STREAM_VALID, cfg.valid_size), test: gen(STREAM_TEST, cfg.test_size) }
    }
}

fn train_sort(cfg: &TrainConfig, mut progress: Progress<'_>) -> HarnessResult<RunResult> {
    let Model::Set(mut model) = build_model(cfg)? else { unreachable!("sorting builds a set model") };
    let data = SortData::new(cfg);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.clip, &model.params);
    let mut plateau = PlateauHalving::new(cfg.plateau_patience);
    let mut log = MetricLog::new();
    let mut window = 0.0;
    let mut window_steps = 0usize;
    for step in 0..=cfg.max_steps {
        if step % cfg.valid_every == 0 || step == cfg.max_steps {
            let acc = eval_sort_accuracy(&model, &data.valid)?;
            let nll = sort_nll(&model, &data.valid)?;
            if window_steps > 0 {
                log.push(step, Split::Train, "loss", window / window_steps as f64);
            }
            log.push(step, Split::Valid, "nll", nll);
            log.push(step, Split::Valid, "accuracy", acc.exact);
            log.push(step, Split::Valid, "lr", opt.lr);
            report(&mut progress, format!("step {step:>6}  valid nll {nll:.4}  accuracy {:.4}  lr {}", acc.exact, opt.lr));
            if step > 0 {
                plateau.observe(nll, &mut opt);
            }
            window = 0.0;
            window_steps = 0;
        }
        if step == cfg.max_steps {
            break;
        }
        let mut rng = batch_rng(cfg.seed, step);
        let batch: Vec<SortingInstance> = (0..cfg.batch_size).map(|_| gen_sorting_instance(cfg.n, &mut rng)).collect();
        let sets: Vec<&[f64]> = batch.iter().map(|b| b.values.as_slice()).collect();
        let targets: Vec<Vec<usize>> = batch.iter().map(|b| b.target.clone()).collect();
        let payloads = pack_scalar_sets(&sets)?;
        let mut params = std::mem::take(&mut model.params);
        let stepped = sgd_step(&mut opt, &mut params, step, cfg.seed, |s| model.loss(s, &payloads, &targets));
        model.params = params;
        let loss = stepped?;
        window += loss;
        window_steps += 1;
    }
    let model = Model::Set(model);
    finish(cfg, model, log, Vec::new(), &mut progress)
}

fn finish(
    cfg: &TrainConfig,
    model: Model,
    mut log: MetricLog,
    orderings: Vec<(usize, Vec<ChosenOrdering>)>,
    progress: &mut Progress<'_>,
) -> HarnessResult<RunResult> {
    let test = evaluate(cfg, &model)?;
    for (name, v) in &test {
        log.push(cfg.max_steps, Split::Test, name, *v);
    }
    let summary: Vec<String> = test.iter().take(4).map(|(n, v)| format!("{n} {v:.4}")).collect();
    report(progress, format!("test  {}", summary.join("  ")));
    Ok(RunResult { config: cfg.clone(), model, log, test, orderings })
}

/// The generating star model with its train, validation and test samples
/// and their serializations under the configured view.
pub struct StarData {
    pub star: StarModel,
    pub train: Vec<StarAssignment>,
    pub valid: Vec<StarAssignment>,
    pub test: Vec<StarAssignment>,
    pub train_views: Vec<Vec<PositionedToken>>,
    pub valid_views: Vec<Vec<PositionedToken>>,
    pub test_views: Vec<Vec<PositionedToken>>,
}

impl StarData {
    /// Samples depend only on `data_seed`, so runs that differ in view or
    /// learner seed see the same assignments.
    pub fn new(cfg: &TrainConfig) -> Self {
        let star = gen_star_model_with_vocab(cfg.vocab, cfg.n - 1, cfg.peakiness, &mut stream_rng(cfg.data_seed, STREAM_INIT));
        let sample = |stream, count| {
            let mut rng = stream_rng(cfg.data_seed, stream);
            (0..count).map(|_| sample_star(&star, &mut rng)).collect::<Vec<_>>()
        };
        let train = sample(STREAM_TRAIN_DATA, cfg.train_size);
        let valid = sample(STREAM_VALID, cfg.valid_size);
        let test = sample(STREAM_TEST, cfg.test_size);
        let mut vr = stream_rng(cfg.data_seed, STREAM_VIEWS);
        let train_views = star_views(&train, cfg.vocab, cfg.view, &mut vr);
        let valid_views = star_views(&valid, cfg.vocab, cfg.view, &mut vr);
        let test_views = star_views(&test, cfg.vocab, cfg.view, &mut vr);
        StarData { star, train, valid, test, train_views, valid_views, test_views }
    }
}

fn train_star(cfg: &TrainConfig, mut progress: Progress<'_>) -> HarnessResult<RunResult> {
    let Model::Seq(mut model) = build_model(cfg)? else { unreachable!("the star task builds a sequence model") };
    let data = StarData::new(cfg);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.clip, &model.params);
    let mut plateau = PlateauHalving::new(cfg.plateau_patience);
    let mut log = MetricLog::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut stale = 0usize;
    let stop_after = 2 * cfg.plateau_patience.max(1);
    let mut window = 0.0;
    let mut window_steps = 0usize;
    let mut last_step = 0;
    for step in 0..=cfg.max_steps {
        last_step = step;
        if step % cfg.valid_every == 0 || step == cfg.max_steps {
            let e = eval_star_nll(&model, &data.star, &data.valid, &data.valid_views)?;
            if window_steps > 0 {
                log.push(step, Split::Train, "loss", window / window_steps as f64);
            }
            log.push(step, Split::Valid, "nll", e.mean_nll);
            log.push(step, Split::Valid, "oracle_gap", e.gap);
            log.push(step, Split::Valid, "lr", opt.lr);
            report(&mut progress, format!("step {step:>6}  valid nll {:.4}  gap {:.4}  lr {}", e.mean_nll, e.gap, opt.lr));
            if e.mean_nll < best.0 {
                best = (e.mean_nll, step, model.params.clone());
                stale = 0;
            } else {
                stale += 1;
            }
            if step > 0 {
                plateau.observe(e.mean_nll, &mut opt);
            }
            window = 0.0;
            window_steps = 0;
            if cfg.early_stopping && stale >= stop_after {
                break;
            }
        }
        if step == cfg.max_steps {
            break;
        }
        let mut rng = batch_rng(cfg.seed, step);
        let batch: Vec<Vec<PositionedToken>> =
            (0..cfg.batch_size).map(|_| data.train_views[rng.random_range(0..data.train_views.len())].clone()).collect();
        let mut params = std::mem::take(&mut model.params);
        let stepped = sgd_step(&mut opt, &mut params, step, cfg.seed, |s| model.batch_nll(s, &batch, None));
        model.params = params;
        let loss = stepped?;
        window += loss;
        window_steps += 1;
    }
    if cfg.early_stopping {
        model.params = best.2;
        log.push(last_step, Split::Valid, "best_step", best.1 as f64);
        log.push(last_step, Split::Valid, "best_nll", best.0);
    }
    let mut final_cfg = cfg.clone();
    final_cfg.max_steps = last_step;
    let mut out = finish(&final_cfg, Model::Seq(model), log, Vec::new(), &mut progress)?;
    out.config = cfg.clone();
    Ok(out)
}

/// Markov corpus grams as tokens in their natural order.
pub struct NgramData {
    pub spec: MarkovCorpusSpec,
    pub train: Vec<Vec<PositionedToken>>,
    pub valid: Vec<Vec<PositionedToken>>,
    pub test: Vec<Vec<PositionedToken>>,
    /// Perplexity of the true chain on naturally ordered grams.
    pub floor: f64,
}

impl NgramData {
    pub fn new(cfg: &TrainConfig) -> Result<Self, ModelError> {
        let mut rng = stream_rng(cfg.data_seed, STREAM_INIT);
        let spec = MarkovCorpusSpec::random(cfg.vocab, cfg.peakiness, cfg.n, cfg.train_size, cfg.valid_size, &mut rng);
        let corpus = gen_markov_corpus(&spec, &mut stream_rng(cfg.data_seed, STREAM_TRAIN_DATA))?;
        let start = spec.stationary();
        let mut trng = stream_rng(cfg.data_seed, STREAM_TEST);
        let test_grams: Vec<Vec<usize>> = (0..cfg.test_size).map(|_| spec.sample_gram(&start, &mut trng)).collect();
        let tok = |g: &Vec<usize>| SymbolSequence::new(g.clone(), cfg.vocab).map(|s| natural_tokens(&s));
        Ok(NgramData {
            train: corpus.train.iter().map(tok).collect::<Result<_, _>>()?,
            valid: corpus.valid.iter().map(tok).collect::<Result<_, _>>()?,
            test: test_grams.iter().map(tok).collect::<Result<_, _>>()?,
            floor: corpus.perplexity_floor(cfg.n),
            spec,
        })
    }
}

fn lm_metrics(
    model: &SeqModel,
    grams: &[Vec<PositionedToken>],
    ordering: &Ordering,
    floor: f64,
    n: usize,
) -> HarnessResult<Vec<(String, f64)>> {
    let all = (n <= MAX_EXHAUSTIVE).then(|| Ordering::all(n));
    let e = eval_perplexity_run(model, grams, ordering, all.as_deref(), floor)?;
    let mut out = Vec::new();
    if let Some(p) = e.set_perplexity {
        out.push(("set_perplexity".to_string(), p));
    }
    out.push(("ordered_perplexity".to_string(), e.ordered_perplexity));
    out.push(("perplexity_floor".to_string(), e.floor));
    Ok(out)
}

/// The schedule a language-model run follows: the configured search, or a
/// single fixed ordering for the whole run.
pub fn lm_schedule(cfg: &TrainConfig) -> OrderSearchSchedule {
    match &cfg.order_search {
        Some(s) => s.clone(),
        None => OrderSearchSchedule {
            pretrain_steps: usize::MAX,
            orderings_per_example: 1,
            candidates: Candidates::List(vec![cfg.ordering.clone().unwrap_or_else(|| Ordering::identity(cfg.n))]),
            ..OrderSearchSchedule::default()
        },
    }
}

/// Most frequent ordering in `window` with its share.
pub fn modal_ordering<'a>(window: impl IntoIterator<Item = &'a Ordering>) -> Option<(Ordering, f64)> {
    let mut counts: HashMap<&Ordering, usize> = HashMap::new();
    let mut total = 0usize;
    for o in window {
        *counts.entry(o).or_default() += 1;
        total += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.indices().cmp(a.0.indices())))
        .map(|(o, c)| (o.clone(), c as f64 / total as f64))
}

fn train_ngram(cfg: &TrainConfig, mut progress: Progress<'_>) -> HarnessResult<RunResult> {
    let Model::Seq(mut model) = build_model(cfg)? else { unreachable!("the n-gram task builds a sequence model") };
    let data = NgramData::new(cfg)?;
    let schedule = lm_schedule(cfg);
    let fallback = match &schedule.candidates {
        Candidates::List(l) if l.len() == 1 => l[0].clone(),
        _ => cfg.ordering.clone().unwrap_or_else(|| Ordering::identity(cfg.n)),
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr, cfg.clip, &model.params);
    let mut plateau = PlateauHalving::new(cfg.plateau_patience);
    let mut log = MetricLog::new();
    let mut orderings: Vec<(usize, Vec<ChosenOrdering>)> = Vec::new();
    let mut window = 0.0;
    let mut window_steps = 0usize;
    let mut window_start = 0usize;
    let mut modal = fallback.clone();
    for step in 0..=cfg.max_steps {
        if step % cfg.valid_every == 0 || step == cfg.max_steps {
            let recent = orderings[window_start..].iter().flat_map(|(_, c)| c.iter().map(|c| &c.ordering));
            let share = match modal_ordering(recent) {
                Some((o, share)) => {
                    modal = o;
                    Some(share)
                }
                None => None,
            };
            let ordered: Vec<_> =
                data.valid.iter().map(|g| crate::seq_models::apply_ordering(g, &modal)).collect::<Result<_, _>>()?;
            let ppl = crate::seq_models::perplexity(&model, &ordered)?;
            if window_steps > 0 {
                log.push(step, Split::Train, "loss", window / window_steps as f64);
            }
            log.push(step, Split::Valid, "ordered_perplexity", ppl);
            if let Some(share) = share {
                log.push(step, Split::Train, "modal_share", share);
            }
            log.push(step, Split::Valid, "lr", opt.lr);
            report(
                &mut progress,
                format!(
                    "step {step:>6}  valid ppl {ppl:.4} under {modal}  share {}  lr {}",
                    share.map_or("-".into(), |s| format!("{s:.3}")),
                    opt.lr
                ),
            );
            if step > 0 {
                plateau.observe(ppl, &mut opt);
            }
            window = 0.0;
            window_steps = 0;
            window_start = orderings.len();
        }
        if step == cfg.max_steps {
            break;
        }
        let mut rng = batch_rng(cfg.seed, step);
        let batch: Vec<Vec<PositionedToken>> =
            (0..cfg.batch_size).map(|_| data.train[rng.random_range(0..data.train.len())].clone()).collect();
        let out = order_search_train_step(&mut model, &mut opt, &batch, &schedule, step, &mut rng)
            .map_err(|e| step_error(e, step, cfg.seed, &model.params))?;
        if !out.loss.is_finite() {
            return Err(abort(step, cfg.seed, out.loss, "loss".into(), &model.params));
        }
        window += out.loss;
        window_steps += 1;
        if !out.chosen.is_empty() {
            orderings.push((step, out.chosen));
        }
    }
    let mut eval_cfg = cfg.clone();
    eval_cfg.ordering = Some(modal.clone());
    let mut out = finish(&eval_cfg, Model::Seq(model), log, orderings, &mut progress)?;
    out.config = eval_cfg;
    Ok(out)
}

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MODEL_FILE: &str = "model.rpw";
pub const ORDERINGS_FILE: &str = "orderings.tsv";

/// Writes the run's configuration, metric log, checkpoint and (for order
/// searches) ordering log into `dir`.
pub fn write_run(dir: &Path, run: &RunResult) -> HarnessResult<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(CONFIG_FILE), run.config.to_text())?;
    std::fs::write(dir.join(METRICS_FILE), run.log.to_csv())?;
    checkpoint::save(&dir.join(MODEL_FILE), run.model.params())?;
    if !run.orderings.is_empty() {
        let mut w = OrderingLog::new(std::io::BufWriter::new(std::fs::File::create(dir.join(ORDERINGS_FILE))?))?;
        for (step, chosen) in &run.orderings {
            w.record(*step, chosen)?;
        }
        std::io::Write::flush(&mut w.into_inner())?;
    }
    Ok(())
}

/// Rebuilds the model of a run directory and loads its checkpoint.
pub fn load_run(dir: &Path) -> HarnessResult<(TrainConfig, Model)> {
    let text = std::fs::read_to_string(dir.join(CONFIG_FILE))?;
    let cfg = TrainConfig::from_text(&text).map_err(HarnessError::Config)?;
    let mut model = build_model(&cfg)?;
    checkpoint::load(&dir.join(MODEL_FILE), model.params_mut())?;
    Ok((cfg, model))
}
