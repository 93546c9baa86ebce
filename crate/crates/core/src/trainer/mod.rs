//! Optimisation, training loop, evaluation and reporting.

mod adadelta;
mod dataset;
mod eval;
mod report;
mod train;

pub use adadelta::{adadelta_step, AdaDelta, AdaDeltaConfig, AdaDeltaState};
pub use dataset::Dataset;
pub use eval::{evaluate, EvalResult, Tally};
pub use report::{
    compile_report, curves_csv, percent, CurveRow, EvalReport, ReportTable, RunSummary, TableRow,
    CURVES_HEADER, TABLE_HEADER,
};
pub use train::{build_model, train, TrainConfig, TrainOutcome};
