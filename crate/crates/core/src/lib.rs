//! Time-domain single-channel speech separation with dilated multi-scale
//! fusion blocks and channel attention, on top of a small reverse-mode
//! autodiff engine.

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod msf;
pub mod objective;
pub mod optim;
pub mod params;
pub mod special;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use config::{DilationMode, ModelConfig, Variant};
pub use conv::Conv1dSpec;
pub use error::{Error, Result, TensorError};
pub use model::{count_params, Model, PadRecord};
pub use params::{Bound, ParamId, ParamStore};
pub use tensor::Tensor;
