//! Simulation, estimation and replicated studies.

pub mod estimate;
pub mod oracle;
pub mod simulate;
pub mod study;

pub use estimate::{em_estimate, mle_grid, mle_grid_models, mle_refined, EmOptions, EmResult, Estimate};
pub use oracle::{approx_fi, brute_force_policy, exact_fi, HistoryPolicy, HistoryTable, OpenLoop};
pub use simulate::{simulate, simulate_model, Controller, FilterBank, FixedController, FofiController, PofiController, RandomController, Trajectory};
pub use study::{run_study, Estimator, PriorSpec, StudyConfig, StudyResult, StudyRow, Variant};
