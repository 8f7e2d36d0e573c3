//! Detector graphs: construction, execution, storage formats, files and
//! size accounting.

mod accounting;
mod builder;
mod forward;
mod graph;
pub mod io;

pub use accounting::{cast_storage, cast_storage_strict, storage_bytes, storage_size, MB};
pub use builder::{
    build_detector, make_divisible, GraphBuilder, ModelConfig, BREAKPOINT_A, BREAKPOINT_B, INIT_RANGE,
};
pub use graph::{GraphMeta, ModelGraph, Node, Op, OutStrategy, StorageFormat, WeightBlob, WeightData};
pub use io::{decode_model, encode_model, load_model, save_model};
