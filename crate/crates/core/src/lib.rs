//! Exact bilinear Koopman lifts of polynomial control-affine systems and
//! internal-model output regulation with LMI region-of-attraction certificates.
//!
//! The pipeline runs [`polyspec`] parsing, [`lift`] closure checks and
//! bilinear model assembly, [`regulator`] controller synthesis, [`lmi`]
//! certification and [`sim`] closed-loop simulation.

pub mod lift;
pub mod lmi;
pub mod numerics;
pub mod polyspec;
pub mod regulator;
pub mod sim;

pub use numerics::Matrix;
