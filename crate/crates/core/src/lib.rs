pub mod error;
pub mod lqr;
pub mod matkit;
pub mod riccati;
pub mod rsm;
pub mod sim;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};

pub type Matrix = DMatrix<f64>;
