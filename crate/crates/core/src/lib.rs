pub mod error;
pub mod sym;
pub mod grid;
pub mod expr;
pub mod operators;
pub mod parallel;
pub mod linsolve;
pub mod cell;
pub mod measure;
pub mod effective;
pub mod exterior;

pub use error::{Error, Result};
