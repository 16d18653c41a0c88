//! Dense-tensor engine with reverse-mode autodiff, parameter storage, small
//! MLPs, Adam, and finite-difference gradient checking.

pub mod kernels;

mod adam;
mod gradcheck;
mod mlp;
mod params;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{gradcheck, GradCheckConfig, GradCheckFailure, GradCheckReport};
pub use mlp::{Activation, Linear, Mlp};
pub use params::{Param, ParamStore};
pub use tape::{Tape, Tid};
