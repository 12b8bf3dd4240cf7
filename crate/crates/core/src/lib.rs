pub mod assignment;
pub mod bop;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod exact;
pub mod forecast;
pub mod io;
pub mod linalg;
pub mod model;
pub mod snapshot;
pub mod varpro;

pub use error::{DmdError, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/index.md")]
    mod index {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/exact.md")]
    mod exact {}
    #[doc = include_str!("../../../book/src/optimized.md")]
    mod optimized {}
    #[doc = include_str!("../../../book/src/bagging.md")]
    mod bagging {}
    #[doc = include_str!("../../../book/src/forecasting.md")]
    mod forecasting {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
