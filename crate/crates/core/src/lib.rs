pub mod bench;
pub mod dictionary;
pub mod error;
pub mod formats;
pub mod koopman;
pub mod linalg;
pub mod model;
pub mod pruning;
pub mod systems;
pub mod verify;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
