//! Siamese recurrent-convolutional sequence matcher with spatial pyramid
//! pooling and two-way attentive temporal pooling.
//!
//! The crate is `no_std` (with `alloc`): it holds the tensor engine, the
//! network, the losses, the pure data transforms (colour conversion, optical
//! flow, augmentation, pair sampling) and CMC ranking. File formats and the
//! command line live in the companion `astpn` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use kernels::cell_bounds;
pub use tensor::Tensor;
