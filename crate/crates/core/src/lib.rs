//! Continuous-time depth and pose estimation from frames and events.
//!
//! The crate covers the whole pipeline at desk scale: a small autodiff
//! engine ([`tensor`]), event simulation and voxelization ([`events`]), a
//! synthetic dynamic-scene generator ([`scene`]), pointmap and SE(3)
//! geometry ([`geometry`]), the pointmap interpolation network ([`net`]),
//! coarse-to-fine global alignment ([`align`]) and evaluation ([`eval`]).

pub mod align;
pub mod error;
pub mod eval;
pub mod events;
pub mod geometry;
pub(crate) mod io;
pub mod net;
pub mod par;
pub mod rng;
pub mod scene;
pub mod tensor;

pub use error::{Error, Result};
