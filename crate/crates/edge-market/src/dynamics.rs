//! Distributed equilibrium dynamics: proportional response bidding, dual
//! decomposition with CES demand, and proportional-sharing best response.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::market::{
    column_sums, dot, Allocation, EquilibriumSolution, MarketInstance, PriceVector, SolveMethod,
};
use crate::opt::max_abs_diff;

/// Money bids of every service on every edge node. Rows sum to at most the
/// service budget.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct BidMatrix {
    b: Vec<Vec<f64>>,
}

impl BidMatrix {
    pub fn new(b: Vec<Vec<f64>>, instance: &MarketInstance) -> Result<Self> {
        if b.len() != instance.n_services() || b.iter().any(|r| r.len() != instance.n_ens()) {
            return Err(Error::Dimension(
                "bid matrix does not match instance".into(),
            ));
        }
        for (i, row) in b.iter().enumerate() {
            let mut sum = 0.0;
            for v in row {
                if !v.is_finite() || *v < 0.0 {
                    return Err(Error::InvalidInstance(format!(
                        "bids of service {i} must be non-negative and finite"
                    )));
                }
                sum += v;
            }
            if sum > instance.budget(i) * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::InvalidInstance(format!(
                    "bids of service {i} exceed its budget"
                )));
            }
        }
        Ok(Self { b })
    }

    /// Uniform bids `b[i][j] = B_i / m`: the default initialization. Every
    /// column sum is positive because budgets are positive.
    pub fn uniform(instance: &MarketInstance) -> Self {
        let m = instance.n_ens();
        Self {
            b: instance
                .budgets()
                .iter()
                .map(|budget| vec![budget / m as f64; m])
                .collect(),
        }
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.b
    }

    pub fn row(&self, service: usize) -> &[f64] {
        &self.b[service]
    }

    /// Per-node totals; these are the prices under proportional response.
    pub fn prices(&self) -> Vec<f64> {
        column_sums(&self.b)
    }
}

/// Iteration history of a dynamic: per-iteration prices, the convergence
/// residual series, and optionally the full bid matrices.
#[derive(Clone, Debug, Default)]
pub struct DynamicsTrace {
    pub prices: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    pub bids: Option<Vec<Vec<Vec<f64>>>>,
}

impl DynamicsTrace {
    fn record(&mut self, prices: &[f64], residual: f64, bids: Option<&[Vec<f64>]>) {
        self.prices.push(prices.to_vec());
        self.residuals.push(residual);
        if let (Some(store), Some(b)) = (self.bids.as_mut(), bids) {
            store.push(b.to_vec());
        }
    }

    /// CSV rows `iteration,p_1..p_m,residual` with full double precision.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let m = self.prices.first().map_or(0, Vec::len);
        write!(w, "iteration")?;
        for j in 1..=m {
            write!(w, ",p_{j}")?;
        }
        writeln!(w, ",residual")?;
        for (t, (p, r)) in self.prices.iter().zip(&self.residuals).enumerate() {
            write!(w, "{t}")?;
            for v in p {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w, ",{r:.16e}")?;
        }
        Ok(())
    }
}

/// Options for [`propdyn_run`].
#[derive(Clone, Debug)]
pub struct PropDynOptions {
    /// Stop when the relative price change between sweeps drops below this.
    pub tol: f64,
    pub max_iters: usize,
    /// 1.0 is the pure proportional-response update; smaller values blend in
    /// the previous bids.
    pub damping: f64,
    pub record_bids: bool,
    /// Initial bids; uniform when absent.
    pub init: Option<BidMatrix>,
}

impl Default for PropDynOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 200_000,
            damping: 1.0,
            record_bids: false,
            init: None,
        }
    }
}

/// One proportional-response round: prices are the column sums of the bids,
/// each service receives `x[i][j] = b[i][j]/p_j`, and next bids split the
/// budget proportionally to the per-node utilities
/// `b'[i][j] = B_i · a[i][j]·x[i][j] / u_i`.
pub fn propdyn_step(instance: &MarketInstance, bids: &BidMatrix) -> Result<BidMatrix> {
    if bids.b.len() != instance.n_services() || bids.b[0].len() != instance.n_ens() {
        return Err(Error::Dimension(
            "bid matrix does not match instance".into(),
        ));
    }
    let prices = bids.prices();
    if let Some(j) = prices.iter().position(|p| *p <= 0.0) {
        return Err(Error::StalledEn { en: j });
    }
    let mut next = Vec::with_capacity(instance.n_services());
    for i in 0..instance.n_services() {
        let row = &instance.valuations()[i];
        let per_node: Vec<f64> = (0..instance.n_ens())
            .map(|j| row[j] * bids.b[i][j] / prices[j])
            .collect();
        let total: f64 = per_node.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateAllocation { service: i });
        }
        let budget = instance.budget(i);
        next.push(per_node.iter().map(|u| budget * u / total).collect());
    }
    Ok(BidMatrix { b: next })
}

fn solution_from_bids(
    instance: &MarketInstance,
    bids: &BidMatrix,
    iterations: usize,
    converged: bool,
    method: SolveMethod,
) -> Result<EquilibriumSolution> {
    let prices = bids.prices();
    let x: Vec<Vec<f64>> = bids
        .b
        .iter()
        .map(|row| row.iter().zip(&prices).map(|(b, p)| b / p).collect())
        .collect();
    let allocation = Allocation::new(x)?;
    let utilities: Vec<f64> = (0..instance.n_services())
        .map(|i| dot(&instance.valuations()[i], allocation.row(i)))
        .collect();
    Ok(EquilibriumSolution {
        prices: PriceVector::new(prices)?,
        allocation,
        utilities,
        surpluses: vec![0.0; instance.n_services()],
        iterations,
        converged,
        method,
    })
}

/// Runs proportional response to convergence. Budgets are conserved exactly
/// at every step, so prices always sum to the total budget; the stopping
/// test is the maximum relative price change between sweeps.
pub fn propdyn_run(
    instance: &MarketInstance,
    opts: &PropDynOptions,
) -> Result<(EquilibriumSolution, DynamicsTrace)> {
    let mut bids = match &opts.init {
        Some(b) => b.clone(),
        None => BidMatrix::uniform(instance),
    };
    let mut trace = DynamicsTrace {
        bids: opts.record_bids.then(Vec::new),
        ..DynamicsTrace::default()
    };
    let mut prices = bids.prices();
    trace.record(&prices, f64::NAN, Some(&bids.b));

    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iters {
        let proposed = propdyn_step(instance, &bids)?;
        if opts.damping < 1.0 {
            for (row, prow) in bids.b.iter_mut().zip(proposed.b) {
                for (v, p) in row.iter_mut().zip(prow) {
                    *v = opts.damping * p + (1.0 - opts.damping) * *v;
                }
            }
        } else {
            bids = proposed;
        }
        let new_prices = bids.prices();
        residual = new_prices
            .iter()
            .zip(&prices)
            .map(|(new, old)| (new - old).abs() / old)
            .fold(0.0, f64::max);
        trace.record(&new_prices, residual, Some(&bids.b));
        prices = new_prices;
        if residual < opts.tol {
            let solution = solution_from_bids(instance, &bids, iter, true, SolveMethod::PropDyn)?;
            return Ok((solution, trace));
        }
    }
    let best = solution_from_bids(instance, &bids, opts.max_iters, false, SolveMethod::PropDyn)?;
    Err(Error::NotConverged {
        iterations: opts.max_iters,
        residual,
        best: Box::new(best),
        trace: Some(Box::new(trace)),
    })
}

/// The unique budget-exhausting demand of a service with CES-approximated
/// utility at the given positive prices:
/// `x[i][j] = (a[i][j]^ρ/p_j)^{1/(1−ρ)} · B_i / Σ_k (a[i][k]/p_k)^{ρ/(1−ρ)}`.
///
/// Computed in log space: the spend on node `j` is the budget times the
/// softmax of `ρ/(1−ρ) · ln(a[i][j]/p_j)`, which keeps the formula stable for
/// ρ close to one and makes `Σ_j p_j·x[i][j] = B_i` hold to machine
/// precision. Nodes the service does not value receive zero.
pub fn ces_demand(
    instance: &MarketInstance,
    prices: &PriceVector,
    service: usize,
    rho: f64,
) -> Result<Vec<f64>> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "rho must lie strictly between 0 and 1, got {rho}"
        )));
    }
    if prices.len() != instance.n_ens() {
        return Err(Error::Dimension(
            "price vector does not match instance".into(),
        ));
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
    let kappa = rho / (1.0 - rho);
    let row = &instance.valuations()[service];
    let exponents: Vec<Option<f64>> = row
        .iter()
        .zip(prices.values())
        .map(|(a, p)| (*a > 0.0).then(|| kappa * (a.ln() - p.ln())))
        .collect();
    let max_exp = exponents
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = exponents
        .iter()
        .map(|e| e.map_or(0.0, |t| (t - max_exp).exp()))
        .collect();
    let total: f64 = weights.iter().sum();
    let budget = instance.budget(service);
    Ok(weights
        .iter()
        .zip(prices.values())
        .map(|(w, p)| budget * w / (total * p))
        .collect())
}

/// Step-size schedule for the dual-decomposition price update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepSchedule {
    Constant,
    /// `step / sqrt(t)`.
    Diminishing,
}

/// Options for [`ces_dual_decomposition`].
#[derive(Clone, Debug)]
pub struct CesOptions {
    pub rho: f64,
    pub step: f64,
    /// Stop when every price moves by less than this between iterations.
    pub tol: f64,
    pub max_iters: usize,
    /// Initial price for every node.
    pub p0: f64,
    pub schedule: StepSchedule,
}

impl Default for CesOptions {
    fn default() -> Self {
        Self {
            rho: 0.99,
            step: 1e-3,
            tol: 1e-9,
            max_iters: 2_000_000,
            p0: 0.2,
            schedule: StepSchedule::Constant,
        }
    }
}

const PRICE_FLOOR: f64 = 1e-12;

/// Dual decomposition on the CES-approximated market: the platform posts
/// prices, every service reports its closed-form demand, and each price moves
/// along its excess demand (`p_j ← p_j + α·(Σ_i x[i][j] − 1)`, floored at a
/// tiny positive value so demands stay defined).
///
/// Converges to the CES-market equilibrium; the reported utilities are the
/// linear utilities of the final allocation, which approach the exact
/// equilibrium utilities as ρ → 1.
pub fn ces_dual_decomposition(
    instance: &MarketInstance,
    opts: &CesOptions,
) -> Result<(EquilibriumSolution, DynamicsTrace)> {
    if !(opts.step > 0.0) {
        return Err(Error::InvalidConfig("step must be positive".into()));
    }
    if !(opts.p0 > 0.0) {
        return Err(Error::InvalidConfig(
            "initial price must be positive".into(),
        ));
    }
    let n = instance.n_services();
    let m = instance.n_ens();
    let mut prices = PriceVector::new(vec![opts.p0; m])?;
    let mut trace = DynamicsTrace::default();
    trace.record(prices.values(), f64::NAN, None);
    let price_cap = 1e3 * instance.total_budget();

    let mut demand = vec![vec![0.0; m]; n];
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iters {
        for (i, row) in demand.iter_mut().enumerate() {
            *row = ces_demand(instance, &prices, i, opts.rho)?;
        }
        let totals = column_sums(&demand);
        let alpha = match opts.schedule {
            StepSchedule::Constant => opts.step,
            StepSchedule::Diminishing => opts.step / (iter as f64).sqrt(),
        };
        let next: Vec<f64> = prices
            .values()
            .iter()
            .zip(&totals)
            .map(|(p, d)| (p + alpha * (d - 1.0)).max(PRICE_FLOOR))
            .collect();
        residual = max_abs_diff(&next, prices.values());
        if next.iter().any(|p| *p > price_cap) {
            return Err(Error::Diverged(format!(
                "price exceeded {price_cap:.3e}; reduce the step size"
            )));
        }
        let converged = residual < opts.tol;
        prices = PriceVector::new(next)?;
        trace.record(prices.values(), residual, None);
        if converged {
            let solution = ces_solution(instance, &prices, &demand, iter, true)?;
            return Ok((solution, trace));
        }
    }
    let best = ces_solution(instance, &prices, &demand, opts.max_iters, false)?;
    Err(Error::NotConverged {
        iterations: opts.max_iters,
        residual,
        best: Box::new(best),
        trace: Some(Box::new(trace)),
    })
}

fn ces_solution(
    instance: &MarketInstance,
    prices: &PriceVector,
    demand: &[Vec<f64>],
    iterations: usize,
    converged: bool,
) -> Result<EquilibriumSolution> {
    // Near convergence column sums are within the stopping residual of 1;
    // rescale any over-demanded column so the allocation is feasible.
    let totals = column_sums(demand);
    let x: Vec<Vec<f64>> = demand
        .iter()
        .map(|row| {
            row.iter()
                .zip(&totals)
                .map(|(v, t)| if *t > 1.0 { v / t } else { *v })
                .collect()
        })
        .collect();
    let allocation = Allocation::new(x)?;
    let utilities: Vec<f64> = (0..instance.n_services())
        .map(|i| dot(&instance.valuations()[i], allocation.row(i)))
        .collect();
    Ok(EquilibriumSolution {
        prices: prices.clone(),
        allocation,
        utilities,
        surpluses: vec![0.0; instance.n_services()],
        iterations,
        converged,
        method: SolveMethod::CesDual,
    })
}

/// Opponent bids below this are floored so the best-response sort key stays
/// finite; the closed form presumes positive opponent bids.
const OPPONENT_BID_FLOOR: f64 = 1e-12;

/// Exact best response of one service in the proportional-sharing game: given
/// total opponent bids `b_other[j]` per node, maximizes
/// `Σ_j a[i][j]·b_j/(b_j + b_other[j])` subject to `Σ_j b_j ≤ budget`.
///
/// Water-filling over nodes sorted by `a[i][j]/b_other[j]` descending: the
/// k-th prefix is kept when
/// `√(a_k·c_k)/Σ_{l≤k}√(a_l·c_l) · (budget + Σ_{l≤k} c_l) − c_k ≥ 0`,
/// and the kept nodes get exactly that expression as their bid.
pub fn best_response(
    instance: &MarketInstance,
    service: usize,
    other_bids: &[f64],
    budget: f64,
) -> Vec<f64> {
    let m = instance.n_ens();
    assert_eq!(other_bids.len(), m, "opponent bid vector length mismatch");
    assert!(budget >= 0.0, "budget must be non-negative");
    let a = &instance.valuations()[service];
    let c: Vec<f64> = other_bids
        .iter()
        .map(|b| b.max(OPPONENT_BID_FLOOR))
        .collect();

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&p, &q| {
        let kp = a[p] / c[p];
        let kq = a[q] / c[q];
        kq.partial_cmp(&kp).unwrap().then(p.cmp(&q))
    });

    let sqrt_ac: Vec<f64> = order.iter().map(|&j| (a[j] * c[j]).sqrt()).collect();
    let mut best_k = 0;
    let mut sum_sqrt = 0.0;
    let mut sum_c = 0.0;
    for k in 0..m {
        sum_sqrt += sqrt_ac[k];
        sum_c += c[order[k]];
        if sum_sqrt <= 0.0 {
            break;
        }
        let bid_k = sqrt_ac[k] / sum_sqrt * (budget + sum_c) - c[order[k]];
        if bid_k >= 0.0 {
            best_k = k + 1;
        }
    }

    let mut bids = vec![0.0; m];
    if best_k == 0 {
        return bids;
    }
    let total_sqrt: f64 = sqrt_ac[..best_k].iter().sum();
    let total_c: f64 = order[..best_k].iter().map(|&j| c[j]).sum();
    for k in 0..best_k {
        let j = order[k];
        bids[j] = (sqrt_ac[k] / total_sqrt * (budget + total_c) - c[j]).max(0.0);
    }
    bids
}

/// Options for [`propbr_run`].
#[derive(Clone, Debug)]
pub struct PropBrOptions {
    /// Stop when no bid moves by more than this within a round.
    pub tol: f64,
    pub max_rounds: usize,
    pub record_bids: bool,
}

impl Default for PropBrOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_rounds: 10_000,
            record_bids: false,
        }
    }
}

/// Round-robin best-response dynamics in the proportional-sharing game
/// (ascending service order within a round). When it converges the bid
/// profile is a Nash equilibrium of the bidding game; existence of a fixed
/// point is not asserted, and a detected bid cycle returns with
/// `converged = false`.
pub fn propbr_run(
    instance: &MarketInstance,
    opts: &PropBrOptions,
) -> Result<(EquilibriumSolution, DynamicsTrace)> {
    let n = instance.n_services();
    let m = instance.n_ens();
    let mut bids = BidMatrix::uniform(instance);
    let mut trace = DynamicsTrace {
        bids: opts.record_bids.then(Vec::new),
        ..DynamicsTrace::default()
    };
    trace.record(&bids.prices(), f64::NAN, Some(&bids.b));
    let mut seen: Vec<Vec<Vec<f64>>> = Vec::new();

    let mut change = f64::INFINITY;
    for round in 1..=opts.max_rounds {
        change = 0.0;
        for i in 0..n {
            let totals = bids.prices();
            let others: Vec<f64> = (0..m).map(|j| totals[j] - bids.b[i][j]).collect();
            let response = best_response(instance, i, &others, instance.budget(i));
            change = change.max(max_abs_diff(&response, &bids.b[i]));
            bids.b[i] = response;
        }
        trace.record(&bids.prices(), change, Some(&bids.b));
        if change < opts.tol {
            let solution = propbr_solution(instance, &bids, round, true);
            return Ok((solution, trace));
        }
        // Cycle detection: an exactly repeated bid profile means the
        // dynamics oscillate and will never meet the tolerance.
        if seen.iter().any(|old| old == &bids.b) {
            let solution = propbr_solution(instance, &bids, round, false);
            return Ok((solution, trace));
        }
        if seen.len() >= 512 {
            seen.remove(0);
        }
        seen.push(bids.b.clone());
    }
    let best = propbr_solution(instance, &bids, opts.max_rounds, false);
    Err(Error::NotConverged {
        iterations: opts.max_rounds,
        residual: change,
        best: Box::new(best),
        trace: Some(Box::new(trace)),
    })
}

fn propbr_solution(
    instance: &MarketInstance,
    bids: &BidMatrix,
    rounds: usize,
    converged: bool,
) -> EquilibriumSolution {
    let totals = bids.prices();
    let x: Vec<Vec<f64>> = bids
        .b
        .iter()
        .map(|row| {
            row.iter()
                .zip(&totals)
                .map(|(b, t)| if *t > 0.0 { b / t } else { 0.0 })
                .collect()
        })
        .collect();
    let allocation = Allocation::new(x).expect("proportional shares are feasible");
    let utilities: Vec<f64> = (0..instance.n_services())
        .map(|i| dot(&instance.valuations()[i], allocation.row(i)))
        .collect();
    let surpluses: Vec<f64> = instance
        .budgets()
        .iter()
        .zip(bids.b.iter())
        .map(|(budget, row)| (budget - row.iter().sum::<f64>()).max(0.0))
        .collect();
    EquilibriumSolution {
        prices: PriceVector::new(totals).expect("bid totals are non-negative"),
        allocation,
        utilities,
        surpluses,
        iterations: rounds,
        converged,
        method: SolveMethod::PropBr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn six_instance() -> MarketInstance {
        MarketInstance::new(
            "two-service worked example",
            vec![1.0, 4.0],
            vec![vec![1.0, 10.0, 4.0], vec![4.0, 8.0, 8.0]],
        )
        .unwrap()
    }

    #[test]
    fn equilibrium_bids_are_a_fixed_point() {
        let inst = six_instance();
        let bids = BidMatrix::new(vec![vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 2.0]], &inst).unwrap();
        let next = propdyn_step(&inst, &bids).unwrap();
        for (row, next_row) in bids.rows().iter().zip(next.rows()) {
            for (b, nb) in row.iter().zip(next_row) {
                assert!((b - nb).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn single_buyer_converges_in_one_step() {
        let inst = MarketInstance::new("", vec![2.0], vec![vec![3.0, 5.0]]).unwrap();
        let bids = BidMatrix::new(vec![vec![1.7, 0.3]], &inst).unwrap();
        let next = propdyn_step(&inst, &bids).unwrap();
        // Whole capacity of each node regardless of bid split, so next bids
        // are proportional to valuations.
        assert_relative_eq!(next.row(0)[0], 2.0 * 3.0 / 8.0);
        assert_relative_eq!(next.row(0)[1], 2.0 * 5.0 / 8.0);
    }

    #[test]
    fn uniform_bids_stay_uniform_on_symmetric_instance() {
        let inst =
            MarketInstance::new("", vec![1.0, 1.0], vec![vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        let bids = BidMatrix::uniform(&inst);
        let next = propdyn_step(&inst, &bids).unwrap();
        assert_eq!(bids.rows(), next.rows());
    }

    #[test]
    fn stalled_node_detected() {
        let inst = six_instance();
        let bids = BidMatrix::new(vec![vec![0.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]], &inst).unwrap();
        assert!(matches!(
            propdyn_step(&inst, &bids),
            Err(Error::StalledEn { en: 0 })
        ));
    }

    #[test]
    fn propdyn_reaches_worked_equilibrium() {
        let inst = six_instance();
        let (solution, trace) = propdyn_run(&inst, &PropDynOptions::default()).unwrap();
        assert!(solution.converged);
        let expected = [1.0, 2.0, 2.0];
        for (p, e) in solution.prices.values().iter().zip(expected) {
            assert!(
                (p - e).abs() < 1e-6,
                "prices {:?}",
                solution.prices.values()
            );
        }
        assert!((solution.utilities[0] - 5.0).abs() < 1e-6);
        assert!((solution.utilities[1] - 16.0).abs() < 1e-6);
        assert_eq!(trace.prices.len(), solution.iterations + 1);
    }

    #[test]
    fn propdyn_single_service_two_iterations() {
        let inst = MarketInstance::new("", vec![1.0], vec![vec![3.0, 5.0]]).unwrap();
        let (solution, _) = propdyn_run(&inst, &PropDynOptions::default()).unwrap();
        assert!(solution.converged);
        assert!(solution.iterations <= 2);
        assert_relative_eq!(solution.utilities[0], 8.0, max_relative = 1e-12);
    }

    #[test]
    fn propdyn_budget_conservation_every_step() {
        let inst = six_instance();
        let mut bids = BidMatrix::uniform(&inst);
        for _ in 0..50 {
            bids = propdyn_step(&inst, &bids).unwrap();
            for (i, row) in bids.rows().iter().enumerate() {
                let sum: f64 = row.iter().sum();
                assert!((sum - inst.budget(i)).abs() <= 1e-12 * inst.budget(i));
            }
            let total: f64 = bids.prices().iter().sum();
            assert!((total - inst.total_budget()).abs() <= 1e-12 * inst.total_budget());
        }
    }

    #[test]
    fn ces_demand_single_node_spends_everything() {
        let inst = MarketInstance::new("", vec![3.0], vec![vec![7.0]]).unwrap();
        let p = PriceVector::new(vec![2.0]).unwrap();
        let x = ces_demand(&inst, &p, 0, 0.5).unwrap();
        assert_relative_eq!(x[0], 1.5);
    }

    #[test]
    fn ces_demand_symmetric_split() {
        let inst = MarketInstance::new("", vec![1.0], vec![vec![2.0, 2.0]]).unwrap();
        let p = PriceVector::new(vec![1.0, 1.0]).unwrap();
        for rho in [0.1, 0.5, 0.9, 0.99] {
            let x = ces_demand(&inst, &p, 0, rho).unwrap();
            assert_relative_eq!(x[0], 0.5, max_relative = 1e-12);
            assert_relative_eq!(x[1], 0.5, max_relative = 1e-12);
        }
    }

    #[test]
    fn ces_demand_worked_example_budget_identity() {
        let inst = six_instance();
        let p = PriceVector::new(vec![1.0, 2.0, 2.0]).unwrap();
        let x = ces_demand(&inst, &p, 1, 0.99).unwrap();
        let spend: f64 = x.iter().zip(p.values()).map(|(x, p)| x * p).sum();
        assert!((spend - 4.0).abs() <= 1e-12 * 4.0);
        // Service 0's bang-per-buck is uniquely maximized at node 1, so
        // nearly all spend concentrates there.
        let x0 = ces_demand(&inst, &p, 0, 0.99).unwrap();
        let spend0: Vec<f64> = x0.iter().zip(p.values()).map(|(x, p)| x * p).collect();
        assert!(spend0[1] / spend0.iter().sum::<f64>() > 0.999);
    }

    #[test]
    fn ces_demand_rejects_bad_rho() {
        let inst = six_instance();
        let p = PriceVector::new(vec![1.0, 2.0, 2.0]).unwrap();
        assert!(matches!(
            ces_demand(&inst, &p, 0, 1.0),
            Err(Error::InvalidConfig(_))
        ));
        assert!(ces_demand(&inst, &p, 0, 0.0).is_err());
        assert!(ces_demand(&inst, &p, 0, -0.5).is_err());
    }

    #[test]
    fn ces_dual_decomposition_symmetric_instance() {
        let inst =
            MarketInstance::new("", vec![1.0, 1.0], vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let (solution, _) = ces_dual_decomposition(
            &inst,
            &CesOptions {
                tol: 1e-10,
                ..CesOptions::default()
            },
        )
        .unwrap();
        assert!(solution.converged);
        let p = solution.prices.values();
        assert!((p[0] - p[1]).abs() < 1e-8);
        assert!(
            (p[0] - 1.0).abs() < 1e-3,
            "prices should clear at 1, got {p:?}"
        );
    }

    #[test]
    fn best_response_single_node_spends_budget() {
        let inst = MarketInstance::new("", vec![2.0], vec![vec![5.0]]).unwrap();
        let bids = best_response(&inst, 0, &[3.0], 2.0);
        assert_relative_eq!(bids[0], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn best_response_zero_budget() {
        let inst = MarketInstance::new("", vec![1.0], vec![vec![4.0, 1.0]]).unwrap();
        let bids = best_response(&inst, 0, &[1.0, 1.0], 0.0);
        assert!(bids.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn best_response_two_nodes_matches_grid() {
        let inst = MarketInstance::new("", vec![1.0], vec![vec![4.0, 1.0]]).unwrap();
        let others = [1.0, 1.0];
        let bids = best_response(&inst, 0, &others, 1.0);
        let utility = |b: &[f64]| -> f64 {
            b.iter()
                .zip(inst.valuations()[0].iter())
                .zip(&others)
                .map(|((b, a), c)| a * b / (b + c))
                .sum()
        };
        let mut grid_best = f64::NEG_INFINITY;
        let step = 1e-3;
        for k in 0..=1000 {
            let b0 = k as f64 * step;
            for l in 0..=(1000 - k) {
                grid_best = grid_best.max(utility(&[b0, l as f64 * step]));
            }
        }
        let achieved = utility(&bids);
        assert!(
            achieved >= grid_best - 1e-9,
            "{achieved} vs grid {grid_best}"
        );
        assert!(grid_best >= achieved - 5e-3, "grid should come close");
    }

    #[test]
    fn best_response_never_overspends() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let m = rng.gen_range(1..6usize);
            let a: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..5.0)).collect();
            if a.iter().all(|v| *v == 0.0) {
                continue;
            }
            let inst = MarketInstance::new("", vec![1.0], vec![a]).unwrap();
            let c: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..3.0)).collect();
            let budget = rng.gen_range(0.0..4.0);
            let bids = best_response(&inst, 0, &c, budget);
            let total: f64 = bids.iter().sum();
            assert!(total <= budget + 1e-9, "spent {total} of {budget}");
            assert!(bids.iter().all(|b| *b >= 0.0));
        }
    }

    #[test]
    fn propbr_two_buyers_single_node() {
        let inst = MarketInstance::new("", vec![1.0, 4.0], vec![vec![5.0], vec![3.0]]).unwrap();
        let (solution, _) = propbr_run(&inst, &PropBrOptions::default()).unwrap();
        assert!(solution.converged);
        assert!(solution.iterations <= 2);
        assert_relative_eq!(solution.prices.get(0), 5.0, max_relative = 1e-9);
        assert_relative_eq!(solution.allocation.get(0, 0), 0.2, max_relative = 1e-9);
        assert_relative_eq!(solution.allocation.get(1, 0), 0.8, max_relative = 1e-9);
    }

    #[test]
    fn propbr_symmetric_instance_symmetric_bids() {
        let inst =
            MarketInstance::new("", vec![1.0, 1.0], vec![vec![3.0, 1.0], vec![3.0, 1.0]]).unwrap();
        let (solution, trace) = propbr_run(&inst, &PropBrOptions::default()).unwrap();
        assert!(solution.converged);
        let last = trace.prices.last().unwrap();
        assert!((solution.allocation.get(0, 0) - solution.allocation.get(1, 0)).abs() < 1e-6);
        assert!((solution.allocation.get(0, 1) - solution.allocation.get(1, 1)).abs() < 1e-6);
        assert!(
            (last[0] + last[1] - 2.0).abs() < 1e-9,
            "full budgets are bid"
        );
    }

    #[test]
    fn propbr_round_cap_reports_not_converged() {
        let inst = six_instance();
        let err = propbr_run(
            &inst,
            &PropBrOptions {
                max_rounds: 1,
                tol: 1e-15,
                ..PropBrOptions::default()
            },
        )
        .unwrap_err();
        match err {
            Error::NotConverged { best, .. } => assert!(!best.converged),
            other => panic!("unexpected error {other:?}"),
        }
    }

    proptest! {
        // Budget identity of the CES demand for random prices and rho.
        #[test]
        fn ces_demand_budget_identity(seed in 0u64..500, rho in 0.05_f64..0.99) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = rng.gen_range(1..7usize);
            let a: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..20.0)).collect();
            let budget = rng.gen_range(0.1..10.0);
            let inst = MarketInstance::new("", vec![budget], vec![a]).unwrap();
            let p = PriceVector::new((0..m).map(|_| rng.gen_range(0.05..5.0)).collect()).unwrap();
            let x = ces_demand(&inst, &p, 0, rho).unwrap();
            let spend: f64 = x.iter().zip(p.values()).map(|(x, p)| x * p).sum();
            prop_assert!((spend - budget).abs() <= 1e-10 * budget);
        }
    }

    // First-order stationarity of the CES demand for the per-service
    // subproblem `B_i·ln(Σ_j (a_j x_j)^ρ) − Σ_j p_j x_j`, checked by central
    // finite differences at moderate rho where the curvature is tame.
    #[test]
    fn ces_demand_is_stationary() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for rho in [0.3, 0.5, 0.9] {
            for _ in 0..20 {
                let m = rng.gen_range(2..6usize);
                let a: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..5.0)).collect();
                let budget = rng.gen_range(0.5..4.0);
                let inst = MarketInstance::new("", vec![budget], vec![a.clone()]).unwrap();
                let p =
                    PriceVector::new((0..m).map(|_| rng.gen_range(0.2..3.0)).collect()).unwrap();
                let x = ces_demand(&inst, &p, 0, rho).unwrap();
                // log of the CES utility (Σ (a x)^ρ)^{1/ρ} minus the spend.
                let objective = |x: &[f64]| {
                    let power_sum: f64 = x.iter().zip(&a).map(|(x, a)| (a * x).powf(rho)).sum();
                    budget / rho * power_sum.ln()
                        - x.iter().zip(p.values()).map(|(x, p)| x * p).sum::<f64>()
                };
                let h = 1e-5;
                for j in 0..m {
                    // Central differences need room on both sides; tiny
                    // components sit effectively on the boundary.
                    if x[j] <= 10.0 * h {
                        continue;
                    }
                    let mut hi = x.clone();
                    let mut lo = x.clone();
                    hi[j] += h;
                    lo[j] -= h;
                    let grad = (objective(&hi) - objective(&lo)) / (2.0 * h);
                    assert!(
                        grad.abs() < 1e-4 * (1.0 + p.get(j)),
                        "rho {rho}: gradient {grad} at node {j}"
                    );
                }
            }
        }
    }
}
