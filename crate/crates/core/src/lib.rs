pub mod chaining;
pub mod error;
pub mod fixtures;
pub mod io;
pub mod lattice;
pub mod loops;
pub mod markov;
pub mod mc;
pub mod measure;
pub mod moments;
pub mod norms;
pub mod quad;
pub mod verify;

pub use error::{Error, Result};
