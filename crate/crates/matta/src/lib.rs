//! Desk-scale elastic-distillation laboratory: a student model co-trained
//! inside a larger teaching-assistant (TA) model with online distillation,
//! optimized with first-order methods or Kronecker-preconditioned Shampoo,
//! from which a spectrum of standalone sub-models can be extracted.

pub mod diffcore;
pub mod error;
pub mod extraction;
pub mod harness;
pub mod losses;
pub mod matlayers;
pub mod optim;
pub mod teacher_data;

pub use error::{Error, Result};
