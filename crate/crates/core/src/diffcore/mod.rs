//! Minimal reverse-mode differentiation over dense row-major arrays.
//!
//! A [`Graph`] records operations as they are evaluated; [`Graph::backward`]
//! walks the record in reverse and accumulates gradients into the
//! [`ParamStore`]. Frozen parameters never receive gradient.
//!
//! The engine is generic over [`Real`]: training runs in `f32`, gradient
//! verification ([`grad_check`]) in `f64`.

mod backward;
mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC};
pub use gradcheck::grad_check;
pub use graph::{Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

/// Floating-point element type of the engine.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
