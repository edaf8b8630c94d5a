//! Multi-scale differentiable architecture search for image segmentation.
//!
//! The pipeline is: build a layered multi-scale supernet ([`supernet`]),
//! optimize its continuous relaxation ([`relaxation`], [`search`]), decode
//! cell genotypes and the top-N_l paths into a discrete network ([`decode`]),
//! account its cost ([`cost`]), and retrain/evaluate it on segmentation
//! tasks ([`tasks`]).

mod binio;
pub mod cost;
pub mod decode;
pub mod error;
pub mod graph;
pub mod numerics;
pub mod relaxation;
pub mod rng;
pub mod search;
pub mod supernet;
pub mod tasks;

pub use error::{Error, Result};
