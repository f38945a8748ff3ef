//! Layers and the optimizer shared by every model.

mod adam;
pub mod checkpoint;
mod layers;
mod lstm;
mod params;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint};
pub use layers::{layer_norm, positional_encoding, Conv1d, FeedForward, LayerNorm, Linear};
pub use lstm::{Lstm, LstmCell, LstmCellState};
pub use params::{uniform_fan_in, ParamId, ParamSet};
