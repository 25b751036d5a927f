mod conv;
mod elementwise;
mod linalg;
mod nn;
mod pool;
mod reduce;
mod shape;

pub use conv::{ConvKernel, Padding};
pub use elementwise::sigmoid_scalar;
pub use nn::{BatchStats, BnMode};
pub use reduce::ReduceMode;
pub use shape::concat;
