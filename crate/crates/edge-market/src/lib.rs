//! Market-equilibrium allocation of heterogeneous edge-node capacity to
//! budget-constrained services.
//!
//! The crate computes, certifies and audits competitive equilibria of linear
//! Fisher-style markets derived from edge-computing deployments:
//!
//! - [`market`]: core domain types (instances, allocations, prices,
//!   solutions, certificates) and bang-per-buck arithmetic.
//! - [`scenario`]: random edge-computing scenarios and their conversion to
//!   market instances via an M/G/1 latency model.
//! - [`eg`]: the centralized Eisenberg-Gale solve with KKT certificates and
//!   a weak-duality gap bound.
//! - [`dynamics`]: distributed algorithms — proportional response bidding,
//!   dual decomposition with closed-form CES demands, and best-response
//!   bidding in the proportional-sharing game.
//! - [`netprofit`]: the extended market where unspent budget keeps value.
//! - [`fairness`]: baseline allocators (proportional, welfare-max, maxmin)
//!   and envy-freeness/proportionality/sharing-incentive audits.

// `!(x > 0.0)` is the NaN-rejecting form of the positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod dynamics;
pub mod eg;
pub mod error;
pub mod fairness;
pub mod market;
pub mod netprofit;
mod opt;
pub mod scenario;

pub use error::{Error, Result};
pub use market::{
    mbb, utilities, utility, Allocation, CertificateReport, EquilibriumSolution, MarketInstance,
    Mbb, PriceVector, SolveMethod,
};
