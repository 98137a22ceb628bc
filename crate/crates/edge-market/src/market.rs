//! Core market types shared by every solver: instances, allocations, prices,
//! solutions, and optimality certificates.
//!
//! Conventions used throughout the crate: `n` services (buyers) indexed by
//! `i`, `m` edge nodes (goods) indexed by `j`, edge-node capacities normalized
//! to one, and linear utilities `u_i = Σ_j a[i][j] · x[i][j]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for algebraic identities (budget/utility consistency).
pub const TOL_NUM: f64 = 1e-9;
/// Relative tolerance for demand-set membership in bang-per-buck comparisons.
pub const TOL_MBB: f64 = 1e-6;
/// Tolerance for capacity feasibility of allocations.
pub const TOL_FEAS: f64 = 1e-7;

/// A Fisher-style market: service budgets plus a non-negative valuation
/// matrix giving each service's utility per unit of each edge node's
/// (normalized) capacity.
///
/// Construction enforces:
/// - every budget strictly positive and finite,
/// - every valuation finite and non-negative,
/// - every service values at least one edge node,
/// - every edge node is valued by at least one service (a node wanted by
///   nobody would carry price zero and is rejected instead of carried).
#[derive(Clone, Debug, Serialize)]
pub struct MarketInstance {
    label: String,
    budgets: Vec<f64>,
    valuations: Vec<Vec<f64>>,
}

impl MarketInstance {
    pub fn new(
        label: impl Into<String>,
        budgets: Vec<f64>,
        valuations: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = budgets.len();
        if n == 0 {
            return Err(Error::InvalidInstance("no services".into()));
        }
        if valuations.len() != n {
            return Err(Error::Dimension(format!(
                "{} budgets but {} valuation rows",
                n,
                valuations.len()
            )));
        }
        let m = valuations[0].len();
        if m == 0 {
            return Err(Error::InvalidInstance("no edge nodes".into()));
        }
        for (i, b) in budgets.iter().enumerate() {
            if !b.is_finite() || *b <= 0.0 {
                return Err(Error::InvalidInstance(format!(
                    "budget of service {i} must be positive and finite, got {b}"
                )));
            }
        }
        for (i, row) in valuations.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!(
                    "valuation row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    m
                )));
            }
            for (j, a) in row.iter().enumerate() {
                if !a.is_finite() || *a < 0.0 {
                    return Err(Error::InvalidInstance(format!(
                        "valuation [{i}][{j}] must be non-negative and finite, got {a}"
                    )));
                }
            }
            if !row.iter().any(|a| *a > 0.0) {
                return Err(Error::EmptyValuationRow { service: i });
            }
        }
        for j in 0..m {
            if !valuations.iter().any(|row| row[j] > 0.0) {
                return Err(Error::EmptyValuationColumn { en: j });
            }
        }
        Ok(Self {
            label: label.into(),
            budgets,
            valuations,
        })
    }

    pub fn n_services(&self) -> usize {
        self.budgets.len()
    }

    pub fn n_ens(&self) -> usize {
        self.valuations[0].len()
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budgets
    }

    pub fn budget(&self, service: usize) -> f64 {
        self.budgets[service]
    }

    pub fn valuations(&self) -> &[Vec<f64>] {
        &self.valuations
    }

    pub fn valuation(&self, service: usize, en: usize) -> f64 {
        self.valuations[service][en]
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    /// Same market with every budget multiplied by `factor`.
    pub fn scale_budgets(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.label.clone(),
            self.budgets.iter().map(|b| b * factor).collect(),
            self.valuations.clone(),
        )
    }

    /// Same market with budgets rescaled to sum to one. Equilibrium utilities
    /// are invariant under this; prices scale by `1 / total_budget`.
    pub fn normalize_budgets(&self) -> Result<Self> {
        self.scale_budgets(1.0 / self.total_budget())
    }
}

#[derive(Deserialize)]
struct RawInstance {
    #[serde(default)]
    label: String,
    budgets: Vec<f64>,
    valuations: Vec<Vec<f64>>,
}

impl<'de> Deserialize<'de> for MarketInstance {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let raw = RawInstance::deserialize(deserializer)?;
        MarketInstance::new(raw.label, raw.budgets, raw.valuations)
            .map_err(serde::de::Error::custom)
    }
}

/// An `n × m` matrix of capacity fractions. Entries are non-negative and each
/// column sums to at most `1 + TOL_FEAS`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Allocation {
    x: Vec<Vec<f64>>,
}

impl Allocation {
    pub fn new(x: Vec<Vec<f64>>) -> Result<Self> {
        if x.is_empty() || x[0].is_empty() {
            return Err(Error::Dimension("empty allocation".into()));
        }
        let m = x[0].len();
        for (i, row) in x.iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!(
                    "allocation row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    m
                )));
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InvalidInstance(format!(
                        "allocation [{i}][{j}] must be non-negative and finite, got {v}"
                    )));
                }
            }
        }
        for j in 0..m {
            let s: f64 = x.iter().map(|row| row[j]).sum();
            if s > 1.0 + TOL_FEAS {
                return Err(Error::InvalidInstance(format!(
                    "column {j} over-allocated: sum {s}"
                )));
            }
        }
        Ok(Self { x })
    }

    /// Zero allocation of the given shape.
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            x: vec![vec![0.0; m]; n],
        }
    }

    pub fn n_services(&self) -> usize {
        self.x.len()
    }

    pub fn n_ens(&self) -> usize {
        self.x[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn row(&self, service: usize) -> &[f64] {
        &self.x[service]
    }

    pub fn get(&self, service: usize, en: usize) -> f64 {
        self.x[service][en]
    }

    pub fn column_sum(&self, en: usize) -> f64 {
        self.x.iter().map(|row| row[en]).sum()
    }

    pub(crate) fn matches(&self, instance: &MarketInstance) -> Result<()> {
        if self.n_services() != instance.n_services() || self.n_ens() != instance.n_ens() {
            return Err(Error::Dimension(format!(
                "allocation is {}x{} but instance is {}x{}",
                self.n_services(),
                self.n_ens(),
                instance.n_services(),
                instance.n_ens()
            )));
        }
        Ok(())
    }
}

impl<'de> Deserialize<'de> for Allocation {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let x = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Allocation::new(x).map_err(serde::de::Error::custom)
    }
}

/// Non-negative price per unit of (normalized) capacity, one entry per edge
/// node.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PriceVector {
    p: Vec<f64>,
}

impl PriceVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::Dimension("empty price vector".into()));
        }
        for (j, v) in p.iter().enumerate() {
            if !v.is_finite() || *v < 0.0 {
                return Err(Error::InvalidPrice(format!(
                    "price {j} must be non-negative and finite, got {v}"
                )));
            }
        }
        Ok(Self { p })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    pub fn get(&self, en: usize) -> f64 {
        self.p[en]
    }

    pub fn total(&self) -> f64 {
        self.p.iter().sum()
    }
}

impl<'de> Deserialize<'de> for PriceVector {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        let p = Vec::<f64>::deserialize(deserializer)?;
        PriceVector::new(p).map_err(serde::de::Error::custom)
    }
}

/// Which algorithm produced a solution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    #[default]
    Unspecified,
    Eg,
    ProjectedGradient,
    PropDyn,
    CesDual,
    PropBr,
    NetProfit,
}

/// Prices, allocation and per-service outcomes returned by every solver.
///
/// `surpluses` is identically zero in the basic (revenue-maximization)
/// market; in the net-profit market it is the money a service keeps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    pub prices: PriceVector,
    pub allocation: Allocation,
    pub utilities: Vec<f64>,
    pub surpluses: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    #[serde(skip, default)]
    pub method: SolveMethod,
}

impl EquilibriumSolution {
    /// Checks the internal consistency invariant
    /// `u_i = Σ_j a[i][j]·x[i][j] + s_i` against an instance.
    pub fn validate(&self, instance: &MarketInstance) -> Result<()> {
        self.allocation.matches(instance)?;
        if self.utilities.len() != instance.n_services()
            || self.surpluses.len() != instance.n_services()
            || self.prices.len() != instance.n_ens()
        {
            return Err(Error::Dimension(
                "solution vectors do not match instance".into(),
            ));
        }
        for i in 0..instance.n_services() {
            if self.surpluses[i] < -TOL_NUM {
                return Err(Error::InvalidInstance(format!(
                    "negative surplus for service {i}"
                )));
            }
            let u = utility(instance, &self.allocation, i)? + self.surpluses[i];
            let scale = self.utilities[i].abs().max(1.0);
            if (u - self.utilities[i]).abs() > TOL_NUM * scale * 10.0 {
                return Err(Error::InvalidInstance(format!(
                    "utility of service {i} inconsistent: stored {} recomputed {}",
                    self.utilities[i], u
                )));
            }
        }
        Ok(())
    }
}

/// Residuals certifying how close a solution is to an exact equilibrium.
///
/// - `clearing_slack`: `max_j |1 − Σ_i x[i][j]|` (restricted to priced nodes
///   for the net-profit market),
/// - `budget_slack`: `max_i |Σ_j p_j·x[i][j] + s_i − B_i|`,
/// - `mbb_violation`: `max_{i,j} max(0, a[i][j]·B_i/u_i − p_j)/p_j`, i.e. how
///   far some node's bang-per-buck exceeds the service's equilibrium rate,
/// - `duality_gap`: adjusted dual objective minus primal objective (weak
///   duality makes this non-negative up to round-off),
/// - `max_kkt_residual`: max of the above (budget slack normalized by the
///   largest budget) together with the complementary-slackness residual on
///   the allocation's support.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificateReport {
    pub max_kkt_residual: f64,
    pub duality_gap: f64,
    pub clearing_slack: f64,
    pub budget_slack: f64,
    pub mbb_violation: f64,
}

impl CertificateReport {
    /// True when every residual (and the duality gap, relative to `primal`)
    /// is below `tol`.
    pub fn passes(&self, tol: f64, primal_scale: f64) -> bool {
        self.max_kkt_residual <= tol
            && self.clearing_slack <= tol
            && self.budget_slack <= tol * primal_scale.max(1.0)
            && self.mbb_violation <= tol
            && self.duality_gap <= tol * primal_scale.max(1.0)
    }
}

/// Maximum bang-per-buck of a service: the best utility-per-money rate over
/// all edge nodes, plus the set of nodes attaining it (within `TOL_MBB`
/// relative).
#[derive(Clone, Debug, PartialEq)]
pub struct Mbb {
    pub alpha: f64,
    pub demand_set: Vec<usize>,
}

/// Linear utility `Σ_j a[service][j] · x[service][j]`.
pub fn utility(instance: &MarketInstance, allocation: &Allocation, service: usize) -> Result<f64> {
    allocation.matches(instance)?;
    if service >= instance.n_services() {
        return Err(Error::Dimension(format!(
            "service index {service} out of range"
        )));
    }
    Ok(dot(
        &instance.valuations()[service],
        allocation.row(service),
    ))
}

/// Maximum bang-per-buck `α_i = max_j a[i][j]/p_j` and the demand set
/// `{ j : a[i][j]/p_j ≥ α_i·(1 − TOL_MBB) }`. All prices must be strictly
/// positive; nodes with price zero are rejected at instance construction.
pub fn mbb(instance: &MarketInstance, prices: &PriceVector, service: usize) -> Result<Mbb> {
    if prices.len() != instance.n_ens() {
        return Err(Error::Dimension(format!(
            "{} prices for {} edge nodes",
            prices.len(),
            instance.n_ens()
        )));
    }
    if service >= instance.n_services() {
        return Err(Error::Dimension(format!(
            "service index {service} out of range"
        )));
    }
    if let Some(j) = prices.values().iter().position(|p| *p <= 0.0) {
        return Err(Error::InvalidPrice(format!(
            "price of edge node {j} must be strictly positive"
        )));
    }
    let row = &instance.valuations()[service];
    let ratios: Vec<f64> = row
        .iter()
        .zip(prices.values())
        .map(|(a, p)| a / p)
        .collect();
    let alpha = ratios.iter().cloned().fold(0.0_f64, f64::max);
    let demand_set = ratios
        .iter()
        .enumerate()
        .filter(|(_, r)| **r >= alpha * (1.0 - TOL_MBB))
        .map(|(j, _)| j)
        .collect();
    Ok(Mbb { alpha, demand_set })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn column_sums(rows: &[Vec<f64>]) -> Vec<f64> {
    let m = rows[0].len();
    let mut sums = vec![0.0; m];
    for row in rows {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
    }
    sums
}

/// Utilities of every service under an allocation.
pub fn utilities(instance: &MarketInstance, allocation: &Allocation) -> Result<Vec<f64>> {
    allocation.matches(instance)?;
    Ok((0..instance.n_services())
        .map(|i| dot(&instance.valuations()[i], allocation.row(i)))
        .collect())
}
