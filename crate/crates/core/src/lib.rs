pub mod bench;
pub mod candlib;
pub mod deriv;
pub mod error;
pub mod field;
pub mod freqsys;
pub mod ident;
pub mod synth;

pub use error::{Error, Result};
