//! Model shapes, materialized weights, persistence and query generation.

mod batch;
mod config;
mod io;
mod model;

pub use batch::{generate_batch, IndexDistribution, QueryBatch, TableLookups};
pub use config::{
    derive_mlp_dims, derive_rows, interaction_width, mlp_param_bytes, Activation,
    ModelConfig, Preset, DEFAULT_DENSE_FEATURE_DIM, DEFAULT_EMBEDDING_DIM, DESK_TABLE_SCALE,
    ELEMENT_BYTES, INDEX_BYTES, PRESETS,
};
pub use io::{
    decode_model, encode_model, encode_model_bytes, load_model, parse_manifest, render_manifest,
    save_model, Manifest, ModelArrays, BLOB_MAGIC, BLOB_VERSION,
};
pub use model::{build_model, Layer, Model};
