pub mod error;
pub mod layers;
pub mod manifold;
pub mod palette;
pub mod pipeline;
pub mod pixel;
pub mod solver;
pub mod superpixel;

pub use error::{Error, Result};
