pub mod attribution;
pub mod error;
pub mod meta;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod perturb;
pub mod pipeline;
pub mod report;
pub mod scene;
pub mod seed;

pub use error::{Error, Result};
pub use numerics::Tensor;
