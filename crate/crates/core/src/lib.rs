//! Feedback synthesis for steering every initial state of a controllable
//! linear system `x' = Ax + Bu` to `ψ(x₀)` in finite time, particle
//! simulation of the induced density transport, and covering-number
//! complexity bounds for switched-flow realizations of diffeomorphisms.

pub mod complexity;
pub mod diffeo;
pub mod error;
pub mod liouville;
pub mod lti;
pub mod matops;
pub mod scenario;
pub mod steer;
pub mod tolerance;

pub use error::{Error, Result};
pub use tolerance::Tolerances;
