pub mod arboreal;
pub mod curves;
pub mod density;
pub mod error;
pub mod exactnum;
pub mod matgroups;
pub mod measures;
pub mod modmatrix;

pub use error::{Error, Result};
pub use exactnum::Rational;
