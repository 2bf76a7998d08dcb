pub mod error;
pub mod space;
pub mod processes;
pub mod lp;
pub mod assignment;
pub mod utility;
pub mod sample;
pub mod rearrange;
pub mod worstcase;
pub mod cli;

pub use error::{Error, Result};
