pub mod bp;
pub mod density;
pub mod error;
pub mod estimators;
pub mod gaussian;
pub mod grid;
pub mod harness;
pub mod network;
pub mod scenarios;
pub mod trace;
pub mod verify;

pub use error::{Error, Result};
