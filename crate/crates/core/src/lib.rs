//! Counterfactual explanations for binary image classifiers.
//!
//! Two generators push an image toward either class of a frozen classifier;
//! the difference of the two counterfactuals is a signed relevance map.

pub mod alloc;
pub mod data;
mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod models;
pub mod nn;
pub mod relevance;
pub mod training;

pub use error::{CoreError, Result};
