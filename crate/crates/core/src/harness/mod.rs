//! Training, evaluation, metrics and persistence.
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod metrics;
pub mod optim;
pub mod train;

pub use config::{TaskId, TrainConfig};
pub use eval::{eval_perplexity_run, eval_sort_accuracy, eval_star_nll, OracleSorter, Sorter};
pub use metrics::{MetricLog, Split};
pub use optim::{clip_gradients, global_norm, Optimizer, OptimizerKind, PlateauHalving};
pub use train::{build_model, evaluate, load_run, train, write_run, HarnessError, Model, RunResult};
