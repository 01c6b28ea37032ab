//! AUC evaluation and the latency and complexity benchmarks.

pub mod auc;
pub mod bench;
pub mod eval;
pub mod infer;
pub mod latency;
pub mod plot;

pub use auc::{auc, AucAccumulator};
pub use eval::{eval_model, EvalReport};
