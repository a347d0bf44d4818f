//! Metrics, statistics, simulated interaction and the benchmark runner.

pub mod benchmark;
mod metrics;
pub mod simulate;
pub mod stats;

pub use benchmark::{
    evaluate_case, evaluate_from_prompts, run_benchmark, write_phantom_dataset, BenchmarkConfig,
    BenchmarkReport, CaseFailure, CaseTrace, Dataset, ManifestEntry, ModeReport, SummaryReport,
};
pub use metrics::dice;
pub use simulate::{simulate_edit, simulate_prompt, PromptMode, SimulatedEdit};
pub use stats::{bootstrap_ci, wilcoxon_signed_rank, WilcoxonResult};
