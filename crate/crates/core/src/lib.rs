#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod driver;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod rng;
pub mod space;
pub mod surrogate;

pub use driver::{Experiment, Method, RunConfig, RunOptions, RunResult};
pub use error::{Error, Result};
