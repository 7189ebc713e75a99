//! Config parsing, the training loop, checkpoint persistence, the frontier
//! sweep, the ablation grid, and the preconditioner dump.

pub mod ablate;
pub mod checkpoint;
pub mod config;
pub mod frontier;
pub mod precond;
pub mod train;

pub use ablate::{cell_means, run_ablation_grid, AblationRow, CELLS};
pub use checkpoint::{load, model_from_checkpoint, save, Checkpoint, MetricsSummary};
pub use config::{load_config, OptMethod, PrecondMode, RunConfig, SeedSpec};
pub use frontier::{frontier_rows, run_frontier, FrontierRow};
pub use precond::{dump_preconditioner, Side};
pub use train::{run_train, task_from_checkpoint, TrainResult};
