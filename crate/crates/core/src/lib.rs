pub mod error;
pub mod linalg;
pub mod ensembles;
pub mod prp;
pub mod path_recording;
pub mod circuits;
pub mod obfuscation;
pub mod analysis;
pub mod acceptance;

pub use error::{Error, Result};
