pub mod autodiff;
pub mod error;
pub mod hypergrad;
pub mod outer;
pub mod params;
pub mod problems;
pub mod registry;
pub mod sgld;
pub mod study;
pub mod toy_grid;
pub mod vector;

pub use error::{BloError, Result};
pub use vector::{FlatVector, Space};
