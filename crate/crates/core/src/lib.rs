//! Fixed-domain formulation of the plasma-vacuum free boundary problem in
//! ideal compressible and relativistic MHD.

pub mod eos;
pub mod error;
pub mod scalar;
pub mod state;
pub mod systems;
pub mod fd;
pub mod grid;
pub mod interface;
pub mod aniso;
pub mod linear;
pub mod nash_moser;
pub mod fixtures;

pub use error::{FbError, FbResult};
