pub mod covfn;
pub mod error;
pub mod eval;
pub mod io;
pub mod kernels;
pub mod pipeline;
pub mod point;
pub mod synth;
pub mod wgpr;

pub use covfn::{CovExpr, Param};
pub use error::{Error, ErrorKind, Result};
pub use kernels::{KernelFamily, KernelSpec};
pub use pipeline::{extract, FeatureSeries, LmftConfig, QueryGrid, SeedStrategy, TimeSeries};
pub use point::Point;
pub use wgpr::{fit, FitOptions, ObjectiveForm, WeightingMode};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/kernels.md")]
    mod kernels {}
    #[doc = include_str!("../../../book/src/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/weighting.md")]
    mod weighting {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/lmft.md")]
    mod lmft {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
