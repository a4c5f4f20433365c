//! Loss, optimizer, training loop and gradient checking.

pub mod adamw;
mod config;
pub mod gradcheck;
pub mod loss;
pub mod suite;
mod trainer;

pub use adamw::{AdamW, AdamWConfig};
pub use config::TrainConfig;
pub use gradcheck::{gradcheck, GradCheckConfig, GradCheckReport, TensorCheck};
pub use loss::l1_loss;
pub use trainer::{evaluate, normalized_l1, predict_windows, train_loop, EpochRecord, RunRecord};
pub use suite::{model_suite, op_case_names, ops_suite, CaseSummary, SuiteReport};
