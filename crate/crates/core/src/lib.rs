//! Self-supervised hyperspectral unmixing with an endmember-guided two-stream network.
//!
//! The crate covers the whole chain: spectral-bundle extraction ([`bundles`]),
//! the two-stream network and its training loop ([`egunet`]) on top of a small
//! dense-tensor substrate ([`nn`], [`optim`]), classic least-squares and sparse
//! baselines ([`baselines`]), endmember recovery and evaluation metrics ([`post`]),
//! and dataset I/O plus a synthetic scene generator ([`data`]).

pub mod baselines;
pub mod bundles;
pub mod data;
pub mod egunet;
pub mod error;
pub mod nn;
pub mod optim;
pub mod post;
pub mod rng;
pub mod tensor;
pub mod types;

pub use error::{Error, Result};
pub use tensor::Tensor;
