//! A small reverse-mode autodiff kernel over dense `f64` matrices.

mod adam;
mod gradcheck;
mod mlp;
mod params;
mod tape;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheck};
pub use mlp::{Activation, Mlp};
pub use params::{Grads, ParamStore};
pub use tape::{Tape, Var};
