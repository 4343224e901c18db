//! Layer-graph classifier: construction, forward and backward passes,
//! training, parameter randomization and the on-disk format.

mod graph;
mod io;
mod layer;
mod train;

pub use graph::{ActivationTrace, Gradients, ModelGraph, Prediction};
pub use io::{from_bytes, load_model, save_model, to_bytes, MODEL_FORMAT_VERSION};
pub use layer::{ConvLayer, DenseLayer, Layer, LayerKind};
pub use train::{bce_with_logits, macro_f1, train, TrainConfig};
