//! Knowledge distillation by transferring a Nyström-approximated Gram
//! matrix from a teacher network to a student.

pub mod data;
pub mod experiment;
pub mod error;
pub mod gram;
pub mod landmarks;
pub mod losses;
pub mod matrix;
pub mod net;
pub mod train;
pub mod verify;

pub use error::{KdaError, Result};
pub use gram::FeatureBlock;
pub use landmarks::{LandmarkSet, LandmarkStrategy};
pub use matrix::Matrix;
