//! Graph classifier: input projection, GATv2 message passing, SAGPool, mean‖max readout
//! summed over blocks, dropout and a linear 5-way head.

mod layers;
mod model;
mod params;

pub use layers::{pooled_size, top_k, Adjacency, GatV2Layer, GatV2Output, GraphBlock, GraphState, SagPoolLayer, SagPoolOutput};
pub use model::{init_model, Architecture, ForwardPass, PatchGraphModel, LEAKY_SLOPE};
pub use params::{format_checkpoint, parse_checkpoint, read_checkpoint, write_checkpoint, ParamStore};
