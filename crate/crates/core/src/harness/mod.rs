//! Experiment orchestration: configs, phases, records, analysis and plots.

mod analysis;
mod config;
mod pipeline;
mod plots;
mod record;

pub use analysis::{
    correlation_analysis, jacobian_covariance_score, jacobian_rows, pearson, probe_batch,
    Correlation,
};
pub use config::{
    AblationConfig, AblationKind, AnalysisConfig, AnalysisTask, DiscretizeConfig, EvalConfig,
    Phase, ProbeSource, RandomSearchConfig, RunConfig, SpaceQuery,
};
pub use pipeline::{
    ablation, cell_evolution_study, correlation_study, discretize_log, enumerate_space, evaluate,
    load_cell_file, run_discretize, run_eval, run_phase, run_pipeline, run_random_search,
    run_search, select_snapshot, write_cell_files, ALPHA_LOG_FILE, CELL_FILE, METRICS_FILE,
};
pub use plots::{alpha_trajectory_svg, cell_evolution_svg, emit_plots, training_curve_svg};
pub use record::{
    AblationOutcome, AnalysisOutcome, CellEntry, EvalOutcome, EvolutionPoint, ExperimentRecord,
    RandomSearchOutcome, RunStatus, RunSummary, SpaceReport, TaskScores, RECORD_FILE,
};
