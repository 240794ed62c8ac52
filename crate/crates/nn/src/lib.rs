//! Reverse-mode differentiation and graph layers for small networks over origin-destination
//! flow graphs.

pub mod adam;
pub mod checkpoint;
pub mod error;
pub mod layers;
pub mod tape;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::{NnError, Result};
pub use layers::{clip_global_norm, Dense, EdgeInput, GraphKind, GraphLayer, ParamSet};
pub use tape::{Activation, Gradients, Tape, Var};
