//! Dense 2-D tensor arithmetic with reverse-mode automatic differentiation.
//!
//! Everything in the pipeline is expressed over row-major matrices: a batch
//! of points is a `(batch, dim)` matrix, a scalar is `(1, 1)`. The engine is
//! define-by-run: every training step records a fresh [`Graph`], runs
//! `backward` on a scalar loss, and drops the graph.
//!
//! The whole engine is generic over [`Real`] so the same code runs in f32
//! (training) or f64 (gradient-check tests). Finite-difference validation is
//! unreliable at 32-bit, so all gradient oracles run in f64.

mod adam;
mod buf;
mod checkpoint;
mod graph;
pub mod gradcheck;
mod params;
mod rng;

pub use adam::{AdamParams, AdamState};
pub use buf::{Buf, Precision, Real};
pub use checkpoint::{
    load_checkpoint, read_checkpoint_meta, save_checkpoint, Checkpoint, CheckpointMeta,
    ParamEntry, RngSnapshot, CHECKPOINT_FORMAT_VERSION,
};
pub use graph::{Gradients, Graph, Var};
pub use params::{Param, ParamBinding, ParamId, ParamStore};
pub use gradcheck::{check_gradient, DEFAULT_EPS, DEFAULT_REL_TOL};
pub use rng::{normal_f64, seeded, uniform_f64, uniform_in, Rng};

#[cfg(test)]
mod tests;
