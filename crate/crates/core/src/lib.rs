pub mod autodiff;
pub mod error;
pub mod grad_suite;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use error::{DataError, Error, LoadError, Result};
pub use tensor::Tensor;
pub mod dataset;
pub mod series;
pub mod synthetic;
pub mod models;
pub mod training;
pub mod app;
pub mod backtest;
pub mod metrics;
pub mod plot;
