//! Evaluation metrics and experiment drivers.

pub mod experiment;
pub mod metrics;
pub mod stats;

pub use experiment::{
    bias_breaking_experiment, run_single, sweep, BiasBreakingReport, RunResult, SweepAxis, SweepRow,
    SweepTable,
};
pub use metrics::{
    admission_accuracy, clean_accuracy, evaluate, unknown_rate, EvalConfig, EvalReport, OracleModel,
    Predictor, UniformModel,
};
pub use stats::{paired, sign_test_p, PairedComparison};
