//! Fixed-vocabulary feed-forward networks with explicit per-layer backward
//! and gradient capture at interior layers.

mod checkpoint;
mod layer;
mod network;
mod optim;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use layer::{LayerKind, LayerNode};
pub use network::{ActivationPattern, CaptureRecord, LayerGrads, LayerId, Network, ParamGrads};
pub use optim::Sgd;
