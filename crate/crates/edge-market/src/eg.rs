//! Centralized equilibrium computation for the basic (revenue-maximization)
//! market, with KKT residual certificates and a weak-duality gap bound.
//!
//! The underlying convex program maximizes `Σ_i B_i ln u_i` over column-capped
//! non-negative allocations with `u_i = Σ_j a[i][j] x[i][j]`. Its optimum is a
//! market equilibrium: budgets are exhausted, capacity clears, and every
//! service buys only maximum-bang-per-buck nodes at the dual prices.

use crate::dynamics::{propdyn_step, BidMatrix};
use crate::error::{Error, Result};
use crate::market::{
    column_sums, dot, utilities, Allocation, CertificateReport, EquilibriumSolution,
    MarketInstance, PriceVector, SolveMethod,
};
use crate::opt::project_capped_simplex;

/// Which engine backs [`solve_eg`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EgEngine {
    /// Damped proportional response iteration followed by a KKT polish. The
    /// default: provably convergent for linear Fisher markets.
    #[default]
    PropDyn,
    /// Projected gradient ascent on the primal with backtracking line
    /// search; provided as an independent cross-check.
    ProjectedGradient,
}

/// Options for [`solve_eg`].
#[derive(Clone, Debug)]
pub struct EgOptions {
    /// Relative price-change threshold that triggers a certificate check.
    pub tol: f64,
    /// Target for the certificate residuals and the relative duality gap of
    /// the returned solution.
    pub cert_tol: f64,
    pub max_iters: usize,
    pub engine: EgEngine,
    /// Damping factor for the proportional-response engine (1.0 = pure).
    pub damping: f64,
    /// Rescale budgets to sum to one before solving. Utilities are invariant;
    /// prices scale by the inverse total budget. The returned solution then
    /// certifies against the normalized instance.
    pub normalize_budgets: bool,
}

impl Default for EgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            cert_tol: 1e-8,
            max_iters: 200_000,
            engine: EgEngine::PropDyn,
            damping: 1.0,
            normalize_budgets: false,
        }
    }
}

/// The program objective `Σ_i B_i ln u_i`; negative infinity when some
/// utility is not strictly positive.
pub fn eg_objective(instance: &MarketInstance, utilities: &[f64]) -> f64 {
    instance
        .budgets()
        .iter()
        .zip(utilities)
        .map(|(b, u)| {
            if *u > 0.0 {
                b * u.ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum()
}

/// Equilibrium prices implied by an allocation: `p_j = max_i B_i·a[i][j]/u_i`.
/// At a market-clearing equilibrium allocation this reproduces the unique
/// equilibrium prices.
pub fn recover_prices(instance: &MarketInstance, allocation: &Allocation) -> Result<PriceVector> {
    let us = utilities(instance, allocation)?;
    if let Some(i) = us.iter().position(|u| *u <= 0.0) {
        return Err(Error::DegenerateAllocation { service: i });
    }
    let m = instance.n_ens();
    let p: Vec<f64> = (0..m)
        .map(|j| {
            (0..instance.n_services())
                .map(|i| instance.budget(i) * instance.valuation(i, j) / us[i])
                .fold(0.0, f64::max)
        })
        .collect();
    PriceVector::new(p)
}

/// Adjusted dual objective of the equilibrium-pricing program:
/// `Σ_j p_j − Σ_i B_i ln η_i + Σ_i (B_i ln B_i − B_i)`,
/// defined for dual-feasible points (`p_j ≥ a[i][j]·η_i` for all pairs,
/// `η_i > 0`). The constant comes from the conjugate of `−B_i ln u_i` and
/// makes the value an upper bound on the primal optimum, tight at the
/// equilibrium.
pub fn dual_value(instance: &MarketInstance, prices: &PriceVector, eta: &[f64]) -> Result<f64> {
    if prices.len() != instance.n_ens() || eta.len() != instance.n_services() {
        return Err(Error::Dimension(
            "dual point does not match instance".into(),
        ));
    }
    if let Some(i) = eta.iter().position(|e| !(*e > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "eta[{i}] must be strictly positive"
        )));
    }
    let mut violations = 0usize;
    let mut worst = (0usize, 0usize, 0.0f64);
    for i in 0..instance.n_services() {
        for j in 0..instance.n_ens() {
            let bound = instance.valuation(i, j) * eta[i];
            let p = prices.get(j);
            let violation = bound - p;
            if violation > 1e-12 * bound.max(1.0) {
                violations += 1;
                if violation > worst.2 {
                    worst = (i, j, violation);
                }
            }
        }
    }
    if violations > 0 {
        return Err(Error::DualInfeasible {
            count: violations,
            service: worst.0,
            en: worst.1,
            violation: worst.2,
        });
    }
    let budget_terms: f64 = instance
        .budgets()
        .iter()
        .zip(eta)
        .map(|(b, e)| -b * e.ln() + b * b.ln() - b)
        .sum();
    Ok(prices.total() + budget_terms)
}

/// KKT residuals and duality gap of a claimed equilibrium of the basic
/// market. All residuals are computed from the allocation, surpluses and
/// prices alone; stored utilities only contribute a consistency term.
pub fn kkt_certificate(
    instance: &MarketInstance,
    solution: &EquilibriumSolution,
) -> CertificateReport {
    certificate_impl(instance, solution, false)
}

pub(crate) fn certificate_impl(
    instance: &MarketInstance,
    solution: &EquilibriumSolution,
    clearing_only_priced: bool,
) -> CertificateReport {
    let n = instance.n_services();
    let m = instance.n_ens();
    let x = &solution.allocation;
    let infinite = CertificateReport {
        max_kkt_residual: f64::INFINITY,
        duality_gap: f64::INFINITY,
        clearing_slack: f64::INFINITY,
        budget_slack: f64::INFINITY,
        mbb_violation: f64::INFINITY,
    };
    if x.n_services() != n
        || x.n_ens() != m
        || solution.prices.len() != m
        || solution.utilities.len() != n
        || solution.surpluses.len() != n
    {
        return infinite;
    }

    // Certified utilities: recomputed revenue plus claimed surplus.
    let u: Vec<f64> = (0..n)
        .map(|i| dot(&instance.valuations()[i], x.row(i)) + solution.surpluses[i])
        .collect();
    if u.iter().any(|v| !(*v > 0.0)) {
        return infinite;
    }
    let mut consistency = 0.0f64;
    for i in 0..n {
        let scale = u[i].abs().max(1.0);
        consistency = consistency.max((u[i] - solution.utilities[i]).abs() / scale);
        consistency = consistency.max((-solution.surpluses[i]).max(0.0));
    }

    let clearing_slack = (0..m)
        .filter(|&j| !clearing_only_priced || solution.prices.get(j) > 1e-12)
        .map(|j| (1.0 - x.column_sum(j)).abs())
        .fold(0.0, f64::max);

    let max_budget = instance.budgets().iter().cloned().fold(0.0, f64::max);
    let budget_slack = (0..n)
        .map(|i| {
            let spend: f64 = (0..m).map(|j| solution.prices.get(j) * x.get(i, j)).sum();
            (spend + solution.surpluses[i] - instance.budget(i)).abs()
        })
        .fold(0.0, f64::max);

    let mut mbb_violation = 0.0f64;
    let mut support_residual = 0.0f64;
    for i in 0..n {
        for j in 0..m {
            let rate = instance.budget(i) * instance.valuation(i, j) / u[i];
            let p = solution.prices.get(j).max(1e-300);
            mbb_violation = mbb_violation.max((rate - p).max(0.0) / p);
            if x.get(i, j) > 1e-6 {
                support_residual = support_residual.max((p - rate).max(0.0) / p);
            }
        }
    }

    // Weak-duality gap at eta_i = B_i/u_i, lifting prices to dual
    // feasibility first.
    let eta: Vec<f64> = instance
        .budgets()
        .iter()
        .zip(&u)
        .map(|(b, u)| b / u)
        .collect();
    let lifted: Vec<f64> = (0..m)
        .map(|j| {
            let needed = (0..n)
                .map(|i| instance.valuation(i, j) * eta[i])
                .fold(0.0, f64::max);
            solution.prices.get(j).max(needed)
        })
        .collect();
    let duality_gap = match PriceVector::new(lifted).and_then(|lp| dual_value(instance, &lp, &eta))
    {
        Ok(dual) => dual - eg_objective(instance, &u),
        Err(_) => f64::INFINITY,
    };

    let max_kkt_residual = consistency
        .max(clearing_slack)
        .max(budget_slack / max_budget.max(1e-300))
        .max(mbb_violation)
        .max(support_residual);

    CertificateReport {
        max_kkt_residual,
        duality_gap,
        clearing_slack,
        budget_slack,
        mbb_violation,
    }
}

/// Solves the Eisenberg-Gale program to an equilibrium certified at
/// `opts.cert_tol`. The proportional-response engine iterates bid sweeps and
/// checks the certificate whenever prices stabilize; the projected-gradient
/// engine ascends the primal directly.
///
/// Surpluses are identically zero; prices are recovered from the final
/// allocation, which makes the bang-per-buck bound exact by construction.
pub fn solve_eg(instance: &MarketInstance, opts: &EgOptions) -> Result<EquilibriumSolution> {
    let normalized;
    let inst = if opts.normalize_budgets {
        normalized = instance.normalize_budgets()?;
        &normalized
    } else {
        instance
    };
    match opts.engine {
        EgEngine::PropDyn => solve_propdyn_engine(inst, opts),
        EgEngine::ProjectedGradient => solve_pgd_engine(inst, opts),
    }
}

/// Builds the polished solution for an allocation that clears the market:
/// utilities from the allocation, prices recovered from them.
fn polished_solution(
    instance: &MarketInstance,
    x: Vec<Vec<f64>>,
    iterations: usize,
    converged: bool,
    method: SolveMethod,
) -> Result<EquilibriumSolution> {
    // Re-project to exact clearing.
    let sums = column_sums(&x);
    let x: Vec<Vec<f64>> = x
        .into_iter()
        .map(|row| {
            row.into_iter()
                .zip(&sums)
                .map(|(v, s)| if *s > 0.0 { v / s } else { v })
                .collect()
        })
        .collect();
    let allocation = Allocation::new(x)?;
    let prices = recover_prices(instance, &allocation)?;
    let utilities = utilities(instance, &allocation)?;
    Ok(EquilibriumSolution {
        prices,
        allocation,
        utilities,
        surpluses: vec![0.0; instance.n_services()],
        iterations,
        converged,
        method,
    })
}

fn certificate_ok(instance: &MarketInstance, solution: &EquilibriumSolution, tol: f64) -> bool {
    let cert = kkt_certificate(instance, solution);
    let primal = eg_objective(instance, &solution.utilities).abs();
    cert.max_kkt_residual <= tol && cert.duality_gap <= tol * primal.max(1.0)
}

fn solve_propdyn_engine(
    instance: &MarketInstance,
    opts: &EgOptions,
) -> Result<EquilibriumSolution> {
    let mut bids = BidMatrix::uniform(instance);
    let mut prices = bids.prices();
    let mut threshold = opts.tol;
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iters {
        let proposed = propdyn_step(instance, &bids)?;
        if opts.damping < 1.0 {
            let blended: Vec<Vec<f64>> = bids
                .rows()
                .iter()
                .zip(proposed.rows())
                .map(|(old, new)| {
                    old.iter()
                        .zip(new)
                        .map(|(o, n)| opts.damping * n + (1.0 - opts.damping) * o)
                        .collect()
                })
                .collect();
            bids = BidMatrix::new(blended, instance)?;
        } else {
            bids = proposed;
        }
        let new_prices = bids.prices();
        residual = new_prices
            .iter()
            .zip(&prices)
            .map(|(new, old)| (new - old).abs() / old)
            .fold(0.0, f64::max);
        prices = new_prices;
        if residual < threshold {
            let x: Vec<Vec<f64>> = bids
                .rows()
                .iter()
                .map(|row| row.iter().zip(&prices).map(|(b, p)| b / p).collect())
                .collect();
            let solution = polished_solution(instance, x, iter, true, SolveMethod::Eg)?;
            if certificate_ok(instance, &solution, opts.cert_tol) {
                return Ok(solution);
            }
            // Prices stabilized but the certificate is not yet tight enough;
            // keep sweeping with a stricter trigger.
            threshold *= 0.1;
        }
    }
    let x: Vec<Vec<f64>> = bids
        .rows()
        .iter()
        .map(|row| row.iter().zip(&prices).map(|(b, p)| b / p).collect())
        .collect();
    let best = polished_solution(instance, x, opts.max_iters, false, SolveMethod::Eg)?;
    Err(Error::NotConverged {
        iterations: opts.max_iters,
        residual,
        best: Box::new(best),
        trace: None,
    })
}

fn solve_pgd_engine(instance: &MarketInstance, opts: &EgOptions) -> Result<EquilibriumSolution> {
    let n = instance.n_services();
    let m = instance.n_ens();
    let mut x = vec![vec![1.0 / n as f64; m]; n];
    let mut u: Vec<f64> = (0..n)
        .map(|i| dot(&instance.valuations()[i], &x[i]))
        .collect();
    let mut objective = eg_objective_raw(instance, &u);
    let mut step = 1.0;
    let check_every = 100;
    for iter in 1..=opts.max_iters {
        // Ascent direction: d objective / d x[i][j] = B_i a[i][j] / u_i.
        let grad: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let scale = instance.budget(i) / u[i];
                instance.valuations()[i].iter().map(|a| a * scale).collect()
            })
            .collect();
        // Backtracking on the step length, projecting each column.
        step *= 2.0;
        let mut improved = false;
        for _ in 0..60 {
            let mut candidate = vec![vec![0.0; m]; n];
            for j in 0..m {
                let mut col: Vec<f64> = (0..n).map(|i| x[i][j] + step * grad[i][j]).collect();
                project_capped_simplex(&mut col);
                for i in 0..n {
                    candidate[i][j] = col[i];
                }
            }
            let cu: Vec<f64> = (0..n)
                .map(|i| dot(&instance.valuations()[i], &candidate[i]))
                .collect();
            let cobj = eg_objective_raw(instance, &cu);
            if cobj > objective {
                x = candidate;
                u = cu;
                objective = cobj;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if iter % check_every == 0 || !improved {
            let solution = polished_solution(
                instance,
                x.clone(),
                iter,
                true,
                SolveMethod::ProjectedGradient,
            )?;
            if certificate_ok(instance, &solution, opts.cert_tol) {
                return Ok(solution);
            }
            if !improved {
                // Line search cannot improve the objective any further.
                let best =
                    polished_solution(instance, x, iter, false, SolveMethod::ProjectedGradient)?;
                let cert = kkt_certificate(instance, &best);
                return Err(Error::NotConverged {
                    iterations: iter,
                    residual: cert.max_kkt_residual,
                    best: Box::new(best),
                    trace: None,
                });
            }
        }
    }
    let best = polished_solution(
        instance,
        x,
        opts.max_iters,
        false,
        SolveMethod::ProjectedGradient,
    )?;
    let cert = kkt_certificate(instance, &best);
    Err(Error::NotConverged {
        iterations: opts.max_iters,
        residual: cert.max_kkt_residual,
        best: Box::new(best),
        trace: None,
    })
}

fn eg_objective_raw(instance: &MarketInstance, utilities: &[f64]) -> f64 {
    eg_objective(instance, utilities)
}
