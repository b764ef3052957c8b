//! Sepsis early-warning from hourly heart rate: data preparation, models,
//! training, architecture search, and evaluation.

pub mod boosting;
pub mod eval;
pub mod gaopt;
pub mod ingest;
pub mod models;
pub mod nncore;
pub mod stream;
pub mod windowing;
