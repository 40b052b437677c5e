//! Concrete compressive-strength regression: data handling, five model
//! families and their evaluation.

pub mod classical;
pub mod dataset;
pub mod eval;
pub mod model;
pub mod nd;
pub mod neural;
pub mod seed;
