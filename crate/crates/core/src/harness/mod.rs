//! Run-level plumbing behind the command line: configuration, training and
//! evaluation loops, gradient checks, parameter tables and output files.

pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod params;
pub mod train;

pub use config::TrainConfig;
pub use gradcheck::{run_gradcheck, GradcheckOutcome};
pub use metrics::{EvalResult, MetricsRow, Summary};
pub use params::ParamsTable;
pub use train::{evaluate, run_eval, run_train, train_on, TrainOutcome};
