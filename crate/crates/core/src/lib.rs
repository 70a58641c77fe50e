pub mod data_io;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod intent_decoder;
pub mod interaction_graph;
mod io_util;
pub mod label_space;
pub mod numerics;
pub mod slot_decoder;
pub mod training;

pub use error::{Error, Result};
pub use io_util::write_atomic;
