pub mod autodiff;
pub mod data;
pub mod error;
pub mod forecast;
pub mod likelihood;
pub mod local;
pub mod model;
pub mod networks;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
