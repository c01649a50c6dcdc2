//! CNN micro-framework with per-set classifier heads.

pub mod backbones;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod layers;
pub mod rng;
pub mod scorenorm;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::{Scalar, Tensor};
