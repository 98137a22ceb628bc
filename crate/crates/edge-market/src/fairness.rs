//! Baseline allocators and the fairness audit suite: proportional sharing,
//! weighted welfare maximization, maxmin fairness, and envy/proportionality/
//! sharing-incentive reports for arbitrary allocations.

use serde::{Deserialize, Serialize};

use crate::eg::{kkt_certificate, recover_prices};
use crate::error::{Error, Result};
use crate::market::{
    dot, utilities, Allocation, EquilibriumSolution, MarketInstance, PriceVector, SolveMethod,
};

/// Fairness diagnostics of one allocation.
///
/// - `ef_index`: min over ordered service pairs of budget-normalized own
///   utility over budget-normalized utility of the other's bundle; 1 means
///   envy-free. Pairs where the envied bundle is worthless to the evaluator
///   are skipped (the comparison is vacuous).
/// - `proportionality_ratios`: `u_i(x_i) / [(B_i/ΣB)·u_i(C)]` with `C` the
///   all-ones bundle; at least 1 means proportional.
/// - `sharing_incentive_margins`: `u_i(x_i) − u_i(x̂_i)` against the
///   budget-proportional split.
/// - `budget_exhaustion_slacks`: `|Σ_j p_j x[i][j] − B_i|` at prices
///   recovered from the allocation (restricted to services with positive
///   utility when some service gets nothing).
/// - `pareto_certified`: whether the allocation passes the equilibrium
///   certificate at `pareto_tol`, which implies Pareto optimality by the
///   first welfare theorem; `pareto_gap` is the certificate residual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FairnessReport {
    pub ef_index: f64,
    pub proportionality_ratios: Vec<f64>,
    pub sharing_incentive_margins: Vec<f64>,
    pub budget_exhaustion_slacks: Vec<f64>,
    pub pareto_certified: bool,
    pub pareto_gap: f64,
}

/// Options for [`audit`].
#[derive(Clone, Debug)]
pub struct AuditOptions {
    /// Residual threshold under which the allocation counts as an
    /// equilibrium (and hence Pareto-optimal).
    pub pareto_tol: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self { pareto_tol: 1e-6 }
    }
}

/// The budget-proportional split: `x̂[i][j] = B_i / Σ_k B_k` for every node.
pub fn proportional_allocation(instance: &MarketInstance) -> Allocation {
    let total = instance.total_budget();
    let m = instance.n_ens();
    Allocation::new(
        instance
            .budgets()
            .iter()
            .map(|b| vec![b / total; m])
            .collect(),
    )
    .expect("proportional shares are feasible")
}

/// Maximizes `Σ_i w_i·u_i` under the capacity caps: every node goes to the
/// service(s) with the best weighted value on it, ties split equally in
/// index order. Nodes worth zero to everybody under the weights are left
/// unallocated.
pub fn welfare_max(instance: &MarketInstance, weights: &[f64]) -> Result<Allocation> {
    let n = instance.n_services();
    let m = instance.n_ens();
    if weights.len() != n {
        return Err(Error::Dimension(
            "weight vector does not match instance".into(),
        ));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || weights.iter().all(|w| *w == 0.0) {
        return Err(Error::InvalidConfig(
            "weights must be non-negative, finite, and not all zero".into(),
        ));
    }
    let mut x = vec![vec![0.0; m]; n];
    for j in 0..m {
        let scores: Vec<f64> = (0..n)
            .map(|i| weights[i] * instance.valuation(i, j))
            .collect();
        let best = scores.iter().cloned().fold(0.0, f64::max);
        if best <= 0.0 {
            continue;
        }
        let winners: Vec<usize> = (0..n).filter(|&i| scores[i] == best).collect();
        let share = 1.0 / winners.len() as f64;
        for i in winners {
            x[i][j] = share;
        }
    }
    Allocation::new(x)
}

/// Options for [`maxmin_allocation`].
#[derive(Clone, Debug)]
pub struct MaxminOptions {
    /// Absolute tolerance on the achieved minimum utility.
    pub tol: f64,
    /// Subgradient iterations per bisection probe.
    pub probe_iters: usize,
}

impl Default for MaxminOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            probe_iters: 4_000,
        }
    }
}

/// Approximately maximizes `min_i u_i` over column-capped allocations.
///
/// Bisection on the target utility `t`, with feasibility of
/// `min_i u_i(x) ≥ t` probed by projected subgradient ascent on
/// `min_i (u_i − t)` using Polyak-style steps (the target value 0 is known,
/// which restores a linear rate on this piecewise-linear objective). The best
/// allocation found is kept; leftover capacity is topped up greedily toward
/// the worst-off service before returning.
pub fn maxmin_allocation(instance: &MarketInstance, opts: &MaxminOptions) -> Result<Allocation> {
    let n = instance.n_services();
    let m = instance.n_ens();

    // Warm start: the proportional split is feasible and gives a positive
    // lower bound on generic instances.
    let mut best = proportional_allocation(instance).rows().to_vec();
    top_up(instance, &mut best);
    let mut best_min = min_utility(instance, &best);

    // No allocation can push the minimum above what the worst-placed service
    // gets from the whole pool.
    let mut hi = (0..n)
        .map(|i| instance.valuations()[i].iter().sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    let mut lo = best_min;

    let mut rounds = 0;
    while hi - lo > opts.tol.max(1e-14 * hi.abs()) && rounds < 200 {
        rounds += 1;
        let target = 0.5 * (lo + hi);
        match probe(instance, &best, target, opts.probe_iters) {
            Some(x) => {
                let achieved = min_utility(instance, &x);
                if achieved > best_min {
                    best = x;
                    best_min = achieved;
                }
                lo = lo.max(target).max(best_min);
            }
            None => hi = target,
        }
    }
    let mut rows = best;
    top_up(instance, &mut rows);
    for j in 0..m {
        let sum: f64 = rows.iter().map(|r| r[j]).sum();
        if sum > 1.0 {
            for r in rows.iter_mut() {
                r[j] /= sum;
            }
        }
    }
    Allocation::new(rows)
}

fn min_utility(instance: &MarketInstance, rows: &[Vec<f64>]) -> f64 {
    (0..instance.n_services())
        .map(|i| dot(&instance.valuations()[i], &rows[i]))
        .fold(f64::INFINITY, f64::min)
}

/// Hands any unallocated capacity to the currently worst-off service that
/// values the node; never lowers any utility.
fn top_up(instance: &MarketInstance, rows: &mut [Vec<f64>]) {
    let n = instance.n_services();
    let m = instance.n_ens();
    let mut u: Vec<f64> = (0..n)
        .map(|i| dot(&instance.valuations()[i], &rows[i]))
        .collect();
    for j in 0..m {
        let slack = 1.0 - rows.iter().map(|r| r[j]).sum::<f64>();
        if slack <= 1e-12 {
            continue;
        }
        let candidate = (0..n)
            .filter(|&i| instance.valuation(i, j) > 0.0)
            .min_by(|&a, &b| u[a].partial_cmp(&u[b]).unwrap());
        if let Some(i) = candidate {
            rows[i][j] += slack;
            u[i] += slack * instance.valuation(i, j);
        }
    }
}

/// Projected subgradient ascent on `min_i (u_i(x) − target)`; returns an
/// allocation reaching the target (within a hair) or `None`.
fn probe(
    instance: &MarketInstance,
    start: &[Vec<f64>],
    target: f64,
    iters: usize,
) -> Option<Vec<Vec<f64>>> {
    let n = instance.n_services();
    let m = instance.n_ens();
    let mut x = start.to_vec();
    for _ in 0..iters {
        let u: Vec<f64> = (0..n)
            .map(|i| dot(&instance.valuations()[i], &x[i]))
            .collect();
        let (worst, worst_u) = u
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, u)| (i, *u))
            .unwrap();
        let value = worst_u - target;
        if value >= -1e-12 * target.abs().max(1.0) {
            return Some(x);
        }
        // Polyak step toward the known target value 0 along the active row.
        let g = &instance.valuations()[worst];
        let gnorm2: f64 = g.iter().map(|v| v * v).sum();
        if gnorm2 <= 0.0 {
            return None;
        }
        let step = -value / gnorm2;
        for j in 0..m {
            x[worst][j] += step * g[j];
        }
        for j in 0..m {
            let mut col: Vec<f64> = (0..n).map(|i| x[i][j]).collect();
            crate::opt::project_capped_simplex(&mut col);
            for i in 0..n {
                x[i][j] = col[i];
            }
        }
    }
    None
}

/// Audits an allocation: envy-freeness index, proportionality ratios,
/// sharing-incentive margins, budget-exhaustion slacks, and a
/// certificate-based Pareto flag.
pub fn audit(
    instance: &MarketInstance,
    allocation: &Allocation,
    opts: &AuditOptions,
) -> Result<FairnessReport> {
    allocation.matches(instance)?;
    let n = instance.n_services();
    let u = utilities(instance, allocation)?;
    let budgets = instance.budgets();
    let total_budget = instance.total_budget();

    let mut ef_index = 1.0f64;
    for i in 0..n {
        let own = u[i] / budgets[i];
        for j in 0..n {
            let other = dot(&instance.valuations()[i], allocation.row(j)) / budgets[j];
            if other > 0.0 {
                ef_index = ef_index.min(own / other);
            }
        }
    }

    let proportionality_ratios: Vec<f64> = (0..n)
        .map(|i| {
            let full: f64 = instance.valuations()[i].iter().sum();
            u[i] / (budgets[i] / total_budget * full)
        })
        .collect();

    let hat = proportional_allocation(instance);
    let sharing_incentive_margins: Vec<f64> = (0..n)
        .map(|i| u[i] - dot(&instance.valuations()[i], hat.row(i)))
        .collect();

    // Prices for the budget and Pareto checks. When a service ends up with
    // zero utility the exact price-recovery rule is undefined; fall back to
    // the positive-utility services so the report stays finite.
    let (prices, recoverable) = match recover_prices(instance, allocation) {
        Ok(p) => (p, true),
        Err(_) => (partial_prices(instance, &u), false),
    };
    let budget_exhaustion_slacks: Vec<f64> = (0..n)
        .map(|i| {
            let spend: f64 = (0..instance.n_ens())
                .map(|j| prices.get(j) * allocation.get(i, j))
                .sum();
            (spend - budgets[i]).abs()
        })
        .collect();

    let (pareto_certified, pareto_gap) = if recoverable {
        let solution = EquilibriumSolution {
            prices,
            allocation: allocation.clone(),
            utilities: u.clone(),
            surpluses: vec![0.0; n],
            iterations: 0,
            converged: true,
            method: SolveMethod::Unspecified,
        };
        let cert = kkt_certificate(instance, &solution);
        let gap = cert.max_kkt_residual;
        (gap <= opts.pareto_tol, gap)
    } else {
        (false, f64::MAX)
    };

    Ok(FairnessReport {
        ef_index,
        proportionality_ratios,
        sharing_incentive_margins,
        budget_exhaustion_slacks,
        pareto_certified,
        pareto_gap,
    })
}

fn partial_prices(instance: &MarketInstance, u: &[f64]) -> PriceVector {
    let p: Vec<f64> = (0..instance.n_ens())
        .map(|j| {
            (0..instance.n_services())
                .filter(|&i| u[i] > 0.0)
                .map(|i| instance.budget(i) * instance.valuation(i, j) / u[i])
                .fold(0.0, f64::max)
        })
        .collect();
    PriceVector::new(p).expect("partial prices are non-negative")
}
