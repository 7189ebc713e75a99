//! Optimizers: first-order baselines and Kronecker-preconditioned Shampoo,
//! plus the preconditioner structure report.

mod first_order;
mod inv_root;
mod report;
mod shampoo;

pub use first_order::{FirstOrderMethod, FirstOrderState};
pub use inv_root::{eigh, inv_pth_root, inv_root_residual};
pub use report::{corr_to_csv, corr_to_pgm, preconditioner_report, BlockStats, PreconReport};
pub use shampoo::ShampooState;
