//! Reverse-mode automatic differentiation over a dynamically built tape.
//!
//! A [`Tape`] records every operation as a [`GraphNode`] holding its forward
//! value. [`Tape::backward`] walks the nodes in strict reverse creation order
//! and accumulates adjoints with each operation's local derivative.
//! Parameters live outside the tape in a [`ParamStore`] and are copied in the
//! first time a tape references them, so a tape can be rebuilt for every batch.

mod gradcheck;
mod ops;
mod params;
mod tape;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use ops::Axis;
pub use params::{ParamId, ParamStore};
pub use tape::{CustomOp, GraphNode, Gradients, Mode, NodeId, Op, Tape};
