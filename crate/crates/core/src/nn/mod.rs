//! Minimal layer toolkit on top of candle tensors.

mod boxfilter;
mod conv;
mod layers;
mod norm;
mod params;

pub use boxfilter::box_mean;
pub use conv::{conv2d, conv2d_bias, Conv2dOp};
pub use layers::{BatchNorm2d, Conv2d, Linear, Mode};
pub use params::{Initializer, ParamStore};
