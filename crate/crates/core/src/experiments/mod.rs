//! Capacity sweeps: run grids, optimality verdicts, optimal-capacity
//! selection and the exponential scaling fit.

mod fit;
mod optimality;
mod run;
mod sweep;

pub use fit::{fit_exponential, BandPoint, ScalingFit, ScalingPoint, SeedFit};
pub use optimality::{detect_optimality, select_optimal_capacity, CapacityResult, Optimality, OptimalityThresholds, Verdict};
pub use run::{
    execute_run, prepare_data, DataSource, ExperimentRecord, ImageSource, PreparedData, RunConfig, RunLabel, RunSummary, AE_CHECKPOINT_FILE,
    CONFIG_FILE, VERDICT_FILE,
};
pub use sweep::{
    analyze, load_sweep, reference_critic_bounds, reference_generator_bounds, run_sweep, span_grid, Job, Selection, SweepAnalysis, SweepAxis,
    SweepEntry, SweepOutcome, SweepPlan, FIT_FILE, PLAN_FILE,
};
