//! Experiment plumbing: data sources, inductive splits, evaluation,
//! baselines and reports.

pub mod config;
pub mod eval;
pub mod report;
pub mod run;
pub mod split;
pub mod synth;

pub use config::{DataSource, EncoderSection, ExperimentConfig};
pub use eval::{EvalStore, EvalTarget, SessionReport};
pub use report::{emit_plot_data, emit_report, plot_data, summarize, validate_report, Report};
pub use run::{run_incremental, run_method, Ablation, BaseCache, Method, MethodSpec};
pub use split::{split_dataset, Protocol, SplitPlan};
pub use synth::{homophily, synth_sbm, SbmSpec};
