//! Compression toolkit for spatio-temporal denoising UNets.
//!
//! * [`linalg`]: SVD, pseudoinverse and small solves.
//! * [`funnel`]: channel funnels with coupled singular initialization and
//!   exact inference-time merging.
//! * [`pruning`]: importance to inclusion-probability solver, fixed-size
//!   sampling and straight-through gates for temporal blocks.
//! * [`attnopt`]: the single-token cross-attention rewrite.
//! * [`toyunet`]: a forward-only toy UNet hosting all of the above, with an
//!   analytic FLOPs model.
//! * [`conditioning`]: motion descriptor and FPS striding for clips.
//! * [`verify`]: the property suite behind `vidcompress verify`.

// NaN-rejecting `!(x > y)` guards and index loops over several arrays are
// deliberate in the numeric code.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod attnopt;
pub mod conditioning;
pub mod error;
pub mod funnel;
pub mod linalg;
pub mod manifest;
pub mod nn;
pub mod pruning;
pub mod tensor;
pub mod toyunet;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Axis, Tensor};
