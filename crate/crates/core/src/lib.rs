//! Diffusion MRI microstructure estimation from undersampled q-space.
//!
//! The crate covers the IVIM and NODDI forward models, dictionary
//! linearization of both, classic per-voxel solvers, and a trainable
//! network that chains a patch transformer encoder, an unrolled
//! hard-thresholding sparse decoder and a learned parameter mapping.
//!
//! Everything numeric is generic over [`Real`]; the `f64` aliases below are
//! what the command-line tool uses.

pub mod autodiff;
pub mod data;
pub mod dict;
pub mod error;
pub mod eval;
pub mod forward;
pub mod linalg;
pub mod net;
pub mod real;
pub mod solvers;

pub use error::{Error, Result};
pub use real::Real;

pub type Tensor = autodiff::Tensor<f64>;
pub type Tape = autodiff::Tape<f64>;
pub type Scheme = forward::AcquisitionScheme<f64>;
pub type IvimParams = forward::IvimParams<f64>;
pub type NoddiParams = forward::NoddiParams<f64>;
pub type IvimDictionary = dict::IvimDictionary<f64>;
pub type NoddiDictionary = dict::NoddiDictionary<f64>;
pub type Model = net::Model<f64>;



