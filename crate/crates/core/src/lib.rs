//! Progressive merging and in-network filtering of continuous range
//! queries over a hierarchical sensor network.
//!
//! The crate is organised around the pipeline a deployment goes through:
//!
//! * [`geometry`]: rectangles, MBRs, merge scores and union volume.
//! * [`workload`]: seeded query and sensor-reading generators.
//! * [`merge`]: builds the inverted hierarchical query structure.
//! * [`network`]: simulates bottom-up filtering and counts bytes.
//! * [`cost`]: the analytic cost model and its optimal merge rate.
//! * [`harness`]: experiment configuration, sweeps and CSV output.

pub mod cost;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod merge;
pub mod network;
pub mod textfmt;
pub mod workload;

pub use error::{Error, Result};

// The guide's code blocks run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    mod workloads {}
    #[doc = include_str!("../../../book/src/merging.md")]
    mod merging {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cost-model.md")]
    mod cost_model {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
