//! A small bidirectional encoder over `src [SEP] <S> mt <T>` that scores
//! every insert and delete position of the current MT state, picks one
//! action, applies it and re-encodes until it stops.

mod error;
pub mod input;
pub mod network;
pub mod params;
pub mod train;
pub mod vocab;

mod decode;

pub use decode::{decode, DecodeOptions};
pub use error::ModelError;
pub use input::{EditOp, ModelInput};
pub use network::{edit_op_probs, encode, loss, token_probs, Target};
pub use params::{Model, ModelConfig};
pub use train::{lr_at, train, Checkpoint, LogRow, TrainConfig, TrainExample, TrainOutcome};
pub use vocab::Vocab;
