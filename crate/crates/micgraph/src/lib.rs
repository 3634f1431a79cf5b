//! File formats, dataset simulation, training driver, evaluation and the
//! command-line front end around `micgraph-core`.

// negated comparisons double as NaN rejection
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod infer;
pub mod manifest;
pub mod pesq;
pub mod training;
pub mod wav;

/// Package version with the `git describe` of the build.
pub fn version() -> String {
    format!("{} ({})", env!("CARGO_PKG_VERSION"), env!("MICGRAPH_GIT_DESCRIBE"))
}
