//! Crate-wide error type.

use crate::dynamics::DynamicsTrace;
use crate::market::EquilibriumSolution;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("service {service} values no edge node")]
    EmptyValuationRow { service: usize },

    #[error("edge node {en} is wanted by no service")]
    EmptyValuationColumn { en: usize },

    #[error("invalid prices: {0}")]
    InvalidPrice(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty market: every service or every edge node was dropped")]
    EmptyMarket,

    #[error("degenerate allocation: service {service} has zero utility")]
    DegenerateAllocation { service: usize },

    #[error(
        "dual point infeasible: {count} constraint(s) violated, worst at service {service}, \
         edge node {en} (violation {violation:.3e})"
    )]
    DualInfeasible {
        count: usize,
        service: usize,
        en: usize,
        violation: f64,
    },

    #[error("edge node {en} received zero total bids")]
    StalledEn { en: usize },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        /// Best iterate found, so callers can still inspect or persist it.
        best: Box<EquilibriumSolution>,
        /// Iteration history when the failing solver keeps one.
        trace: Option<Box<DynamicsTrace>>,
    },

    #[error("iteration diverged: {0}")]
    Diverged(String),

    #[error("budget sweep failed at scale {scale}: {source}")]
    Sweep {
        scale: f64,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
