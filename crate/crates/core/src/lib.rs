pub mod autograd;
pub mod aux;
pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod model;
pub mod params;
pub mod train;

pub use error::{Error, Result};
