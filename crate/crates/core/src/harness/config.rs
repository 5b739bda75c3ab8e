//! Training configuration and its `key = value` text form.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::cells::ScoreMode;
use crate::error::{ModelError, Result};
use crate::harness::optim::OptimizerKind;
use crate::order_search::{Candidates, OrderSearchSchedule, Ordering, PretrainObjective, Selection};
use crate::set_models::{ModelKind, SetModelConfig};
use crate::tasks::ViewMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskId {
    Sort,
    Star,
    Ngram,
}

impl TaskId {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Sort => "sort",
            TaskId::Star => "star",
            TaskId::Ngram => "ngram",
        }
    }
}

impl FromStr for TaskId {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sort" => Ok(TaskId::Sort),
            "star" => Ok(TaskId::Star),
            "ngram" => Ok(TaskId::Ngram),
            other => Err(ModelError::Invalid(format!("unknown task {other:?}"))),
        }
    }
}

/// Everything that determines a training run. Task-specific fields are
/// ignored by the other tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub task: TaskId,
    pub model: ModelKind,
    /// Set size (sort), number of variables (star) or gram length (ngram).
    pub n: usize,
    pub process_steps: usize,
    pub glimpses: usize,
    /// Reader MLP widths after the scalar input (sort).
    pub reader_hidden: Vec<usize>,
    pub hidden: usize,
    pub embedding: usize,
    pub score_mode: ScoreMode,
    pub mask_visited: bool,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub clip: f64,
    /// Validation checks without improvement before the rate is halved;
    /// 0 disables halving.
    pub plateau_patience: usize,
    pub batch_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub valid_every: usize,
    pub valid_size: usize,
    pub test_size: usize,
    /// Keep the parameters with the best validation loss.
    pub early_stopping: bool,
    pub vocab: usize,
    /// Training examples (star, ngram); sorting draws fresh batches.
    pub train_size: usize,
    pub peakiness: f64,
    pub view: ViewMode,
    /// Seed of the generating model (star table or Markov chain); the
    /// training data and the learner use `seed`.
    pub data_seed: u64,
    /// Fixed serialization when no search is configured.
    pub ordering: Option<Ordering>,
    pub order_search: Option<OrderSearchSchedule>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_task(TaskId::Sort)
    }
}

impl TrainConfig {
    /// Defaults per task.
    pub fn for_task(task: TaskId) -> Self {
        let base = TrainConfig {
            task,
            model: ModelKind::ReadProcessWrite,
            n: 5,
            process_steps: 5,
            glimpses: 1,
            reader_hidden: vec![32, 64],
            hidden: 64,
            embedding: 32,
            score_mode: ScoreMode::Dot,
            mask_visited: false,
            optimizer: OptimizerKind::Sgd,
            lr: 0.01,
            clip: 5.0,
            plateau_patience: 5,
            batch_size: 32,
            max_steps: 10_000,
            seed: 1,
            valid_every: 200,
            valid_size: 1000,
            test_size: 10_000,
            early_stopping: false,
            vocab: 10,
            train_size: 20_000,
            peakiness: 0.3,
            view: ViewMode::HeadFirst,
            data_seed: 1,
            ordering: None,
            order_search: None,
        };
        match task {
            TaskId::Sort => base,
            TaskId::Star => TrainConfig {
                n: 10,
                optimizer: OptimizerKind::Adam,
                lr: 0.002,
                train_size: 500,
                max_steps: 3000,
                early_stopping: true,
                ..base
            },
            TaskId::Ngram => TrainConfig {
                n: 5,
                optimizer: OptimizerKind::Adam,
                lr: 0.002,
                plateau_patience: 0,
                max_steps: 4000,
                test_size: 1000,
                ..base
            },
        }
    }

    pub fn set_model_config(&self) -> SetModelConfig {
        let mut reader_sizes = vec![1];
        reader_sizes.extend(&self.reader_hidden);
        SetModelConfig {
            kind: self.model,
            reader_sizes,
            d_h: self.hidden,
            process_steps: self.process_steps,
            glimpses: self.glimpses,
            score_mode: self.score_mode,
            mask_visited: self.mask_visited,
            stateless_process: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n", self.n),
            ("hidden", self.hidden),
            ("embedding", self.embedding),
            ("batch_size", self.batch_size),
            ("valid_every", self.valid_every),
            ("valid_size", self.valid_size),
            ("test_size", self.test_size),
            ("vocab", self.vocab),
            ("train_size", self.train_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(ModelError::Invalid(format!("{k} must be positive")));
            }
        }
        if self.reader_hidden.is_empty() || self.reader_hidden.contains(&0) {
            return Err(ModelError::Invalid("reader_hidden needs positive widths".into()));
        }
        let lr_ok = self.lr.is_finite() && self.lr > 0.0;
        let clip_ok = !self.clip.is_nan() && self.clip >= 0.0;
        let peak_ok = !self.peakiness.is_nan() && self.peakiness > 0.0;
        if !(lr_ok && clip_ok && peak_ok) {
            return Err(ModelError::Invalid("lr and peakiness must be positive, clip nonnegative".into()));
        }
        if self.score_mode == ScoreMode::Dot && self.task == TaskId::Sort && self.reader_hidden.last() != Some(&self.hidden) {
            return Err(ModelError::Invalid("dot scoring needs the last reader width to equal hidden".into()));
        }
        if self.task == TaskId::Star && self.n < 2 {
            return Err(ModelError::Invalid("a star model needs a head and at least one child".into()));
        }
        if self.task == TaskId::Ngram && self.n > 8 {
            return Err(ModelError::Capacity { len: self.n, capacity: 8 });
        }
        if let Some(o) = &self.ordering {
            if o.len() != self.n {
                return Err(ModelError::NotAPermutation(self.n));
            }
        }
        if let Some(s) = &self.order_search {
            s.validate()?;
            if let Candidates::List(l) = &s.candidates {
                if l.iter().any(|o| o.len() != self.n) {
                    return Err(ModelError::NotAPermutation(self.n));
                }
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| ModelError::Invalid(format!("{key}: cannot parse {v:?}")))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "yes" | "1" | "on" => Ok(true),
                "false" | "no" | "0" | "off" => Ok(false),
                _ => Err(ModelError::Invalid(format!("{key}: expected a boolean, got {v:?}"))),
            }
        }
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "task" => self.task = v.parse()?,
            "model" => self.model = v.parse().map_err(ModelError::Invalid)?,
            "n" => self.n = num(key, v)?,
            "process_steps" => self.process_steps = num(key, v)?,
            "glimpses" => self.glimpses = num(key, v)?,
            "reader_hidden" => {
                self.reader_hidden = v.split(',').map(|t| num(key, t.trim())).collect::<Result<_>>()?;
            }
            "hidden" => self.hidden = num(key, v)?,
            "embedding" => self.embedding = num(key, v)?,
            "score_mode" => {
                self.score_mode = match v {
                    "dot" => ScoreMode::Dot,
                    "additive" => ScoreMode::Additive,
                    other => return Err(ModelError::Invalid(format!("unknown score mode {other:?}"))),
                }
            }
            "mask_visited" => self.mask_visited = flag(key, v)?,
            "optimizer" => self.optimizer = v.parse()?,
            "lr" => self.lr = num(key, v)?,
            "clip" => self.clip = num(key, v)?,
            "plateau_patience" => self.plateau_patience = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "max_steps" => self.max_steps = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "valid_every" => self.valid_every = num(key, v)?,
            "valid_size" => self.valid_size = num(key, v)?,
            "test_size" => self.test_size = num(key, v)?,
            "early_stopping" => self.early_stopping = flag(key, v)?,
            "vocab" => self.vocab = num(key, v)?,
            "train_size" => self.train_size = num(key, v)?,
            "peakiness" => self.peakiness = num(key, v)?,
            "view" => self.view = v.parse().map_err(ModelError::Invalid)?,
            "data_seed" => self.data_seed = num(key, v)?,
            "ordering" => self.ordering = if v == "none" { None } else { Some(v.parse()?) },
            "search" => {
                self.order_search = match v {
                    "none" => None,
                    "on" => Some(self.order_search.take().unwrap_or_default()),
                    other => return Err(ModelError::Invalid(format!("search: expected on or none, got {other:?}"))),
                }
            }
            "pretrain_steps" => self.search_mut().pretrain_steps = if v == "inf" { usize::MAX } else { num(key, v)? },
            "orderings_per_example" => self.search_mut().orderings_per_example = num(key, v)?,
            "selection" => self.search_mut().selection = v.parse()?,
            "pretrain_objective" => {
                self.search_mut().pretrain_objective = match v {
                    "mean-nll" => PretrainObjective::MeanNll,
                    "log-sum-exp" => PretrainObjective::LogSumExp,
                    other => return Err(ModelError::Invalid(format!("unknown pretrain objective {other:?}"))),
                }
            }
            "candidates" => {
                self.search_mut().candidates = if v == "all" {
                    Candidates::All
                } else {
                    Candidates::List(v.split(';').map(|o| o.trim().parse()).collect::<Result<_>>()?)
                }
            }
            other => return Err(ModelError::Invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    fn search_mut(&mut self) -> &mut OrderSearchSchedule {
        self.order_search.get_or_insert_with(OrderSearchSchedule::default)
    }

    /// Applies a config file: one `key = value` per line, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Invalid(format!("config line {}: expected key = value", no + 1)))?;
            self.set(k, v).map_err(|e| ModelError::Invalid(format!("config line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let task = text
            .lines()
            .filter_map(|l| l.split('#').next()?.split_once('='))
            .find(|(k, _)| k.trim() == "task")
            .map(|(_, v)| v.trim().parse())
            .transpose()?
            .unwrap_or(TaskId::Sort);
        let mut c = TrainConfig::for_task(task);
        c.apply_text(text)?;
        Ok(c)
    }

    /// Every field in the form [`TrainConfig::from_text`] reads back.
    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("task", self.task.as_str().into());
        kv("model", self.model.as_str().into());
        kv("n", self.n.to_string());
        kv("process_steps", self.process_steps.to_string());
        kv("glimpses", self.glimpses.to_string());
        kv("reader_hidden", self.reader_hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        kv("hidden", self.hidden.to_string());
        kv("embedding", self.embedding.to_string());
        kv("score_mode", match self.score_mode {
            ScoreMode::Dot => "dot".into(),
            ScoreMode::Additive => "additive".into(),
        });
        kv("mask_visited", self.mask_visited.to_string());
        kv("optimizer", self.optimizer.as_str().into());
        kv("lr", format!("{:?}", self.lr));
        kv("clip", format!("{:?}", self.clip));
        kv("plateau_patience", self.plateau_patience.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("max_steps", self.max_steps.to_string());
        kv("seed", self.seed.to_string());
        kv("valid_every", self.valid_every.to_string());
        kv("valid_size", self.valid_size.to_string());
        kv("test_size", self.test_size.to_string());
        kv("early_stopping", self.early_stopping.to_string());
        kv("vocab", self.vocab.to_string());
        kv("train_size", self.train_size.to_string());
        kv("peakiness", format!("{:?}", self.peakiness));
        kv("view", match self.view {
            ViewMode::HeadFirst => "head-first".into(),
            ViewMode::HeadLast => "head-last".into(),
            ViewMode::Random => "random".into(),
        });
        kv("data_seed", self.data_seed.to_string());
        kv("ordering", self.ordering.as_ref().map_or("none".into(), ToString::to_string));
        match &self.order_search {
            None => kv("search", "none".into()),
            Some(s) => {
                kv("search", "on".into());
                kv("pretrain_steps", if s.pretrain_steps == usize::MAX { "inf".into() } else { s.pretrain_steps.to_string() });
                kv("orderings_per_example", s.orderings_per_example.to_string());
                kv("selection", match s.selection {
                    Selection::Sampled => "sampled".into(),
                    Selection::ExhaustiveMax => "exhaustive-max".into(),
                });
                kv("pretrain_objective", match s.pretrain_objective {
                    PretrainObjective::MeanNll => "mean-nll".into(),
                    PretrainObjective::LogSumExp => "log-sum-exp".into(),
                });
                kv("candidates", match &s.candidates {
                    Candidates::All => "all".into(),
                    Candidates::List(l) => l.iter().map(ToString::to_string).collect::<Vec<_>>().join(";"),
                });
            }
        }
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        for t in [TaskId::Sort, TaskId::Star, TaskId::Ngram] {
            TrainConfig::for_task(t).validate().unwrap();
        }
        let c = TrainConfig::default();
        assert_eq!((c.lr, c.clip, c.batch_size, c.max_steps), (0.01, 5.0, 32, 10_000));
        assert_eq!(c.set_model_config().reader_sizes, vec![1, 32, 64]);
    }

    #[test]
    fn text_round_trip() {
        let mut c = TrainConfig::for_task(TaskId::Ngram);
        c.apply_text("# easy task\nsearch = on\ncandidates = 1,2,3,4,5; 5,1,3,4,2\nseed = 7 # trailing\n\nlr = 0.001\n").unwrap();
        assert_eq!(c.seed, 7);
        let back = TrainConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        let mut inf = TrainConfig::for_task(TaskId::Ngram);
        inf.set("pretrain_steps", "inf").unwrap();
        assert_eq!(TrainConfig::from_text(&inf.to_text()).unwrap(), inf);
    }

    #[test]
    fn bad_settings_are_errors() {
        let mut c = TrainConfig::default();
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("n", "x").is_err());
        assert!(c.apply_text("n 5").is_err());
        c.set("batch_size", "0").unwrap();
        assert!(c.validate().is_err());
        let mut d = TrainConfig::default();
        d.set("hidden", "16").unwrap();
        assert!(d.validate().is_err());
        let mut e = TrainConfig::for_task(TaskId::Ngram);
        e.set("ordering", "2,1").unwrap();
        assert!(e.validate().is_err());
    }
}
