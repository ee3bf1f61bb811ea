//! Space-time variational solver for incompressible Navier-Stokes (and the
//! heat equation) on the periodic 2-D torus.
//!
//! Solutions are computed by minimizing a nonnegative space-time functional
//! over velocity histories with a pinned initial slice. A history is a
//! solution exactly when the functional's gap above `1/2 ||v0||^2`
//! vanishes, i.e. when its Stokes lift reproduces it.

pub mod error;
pub mod flux;
pub mod functional;
pub mod grid;
pub mod io;
pub mod lift;
pub mod minimize;
pub mod oracle;
pub mod presets;
pub mod verify;
pub mod cli;

pub use error::{Error, Result};
