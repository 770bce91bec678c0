//! In-context system identification.
//!
//! Random dynamical-system classes ([`sysgen`]), normalized context/query
//! batches ([`datapipe`]), a small reverse-mode tensor engine ([`autodiff`]),
//! the encoder-decoder Transformer meta-model ([`model`]), meta-training and
//! adaptation ([`train`]), metrics ([`eval`]) and the parameter container
//! format ([`checkpoint`]).

pub mod autodiff;
pub mod checkpoint;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod model;
pub mod sysgen;
pub mod train;

pub use error::{Error, Result};
