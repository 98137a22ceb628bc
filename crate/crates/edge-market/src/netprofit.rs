//! The extended market where services maximize net profit (revenue minus
//! cost) and unspent money keeps its value.
//!
//! Equilibria are optima of the concave program maximizing
//! `Σ_i (B_i ln u_i − s_i)` with `u_i = Σ_j a[i][j] x[i][j] + s_i` over
//! column-capped allocations and non-negative surpluses. At an optimum every
//! service's spend plus surplus equals its budget, utilities never fall below
//! budgets, any service holding surplus has `u_i = B_i`, and prices never
//! exceed the best marginal value of a node.

use crate::error::{Error, Result};
use crate::market::{
    column_sums, dot, Allocation, CertificateReport, EquilibriumSolution, MarketInstance,
    PriceVector, SolveMethod,
};
use crate::opt::project_capped_simplex;

/// Which engine backs [`solve_netprofit`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NetProfitEngine {
    /// Projected gradient ascent on `(X, s)` with backtracking line search,
    /// per-node capped-simplex projection and surplus clipping.
    #[default]
    ProjectedGradient,
    /// Proportional-response bidding extended with a money-hold bid; an
    /// independent engine used for cross-checks.
    ProportionalResponse,
}

/// Options for [`solve_netprofit`].
#[derive(Clone, Debug)]
pub struct NetProfitOptions {
    /// Target for certificate residuals of the returned solution.
    pub cert_tol: f64,
    /// Relative objective-change floor: iteration stops early only when the
    /// certificate also passes.
    pub obj_tol: f64,
    pub max_iters: usize,
    pub engine: NetProfitEngine,
    /// Optional starting point `(allocation, surpluses)`; defaults to the
    /// strictly interior `x = 1/(2n)`, `s_i = B_i/2`.
    pub init: Option<(Vec<Vec<f64>>, Vec<f64>)>,
}

impl Default for NetProfitOptions {
    fn default() -> Self {
        Self {
            cert_tol: 1e-7,
            obj_tol: 1e-10,
            max_iters: 500_000,
            engine: NetProfitEngine::default(),
            init: None,
        }
    }
}

fn objective(instance: &MarketInstance, u: &[f64], s: &[f64]) -> f64 {
    instance
        .budgets()
        .iter()
        .zip(u.iter().zip(s))
        .map(|(b, (u, s))| {
            if *u > 0.0 {
                b * u.ln() - s
            } else {
                f64::NEG_INFINITY
            }
        })
        .sum()
}

fn recovered_prices(instance: &MarketInstance, u: &[f64]) -> Vec<f64> {
    (0..instance.n_ens())
        .map(|j| {
            (0..instance.n_services())
                .map(|i| instance.budget(i) * instance.valuation(i, j) / u[i])
                .fold(0.0, f64::max)
        })
        .collect()
}

fn build_solution(
    instance: &MarketInstance,
    x: Vec<Vec<f64>>,
    s: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<EquilibriumSolution> {
    let allocation = Allocation::new(x)?;
    let utilities: Vec<f64> = (0..instance.n_services())
        .map(|i| dot(&instance.valuations()[i], allocation.row(i)) + s[i])
        .collect();
    let prices = PriceVector::new(recovered_prices(instance, &utilities))?;
    Ok(EquilibriumSolution {
        prices,
        allocation,
        utilities,
        surpluses: s,
        iterations,
        converged,
        method: SolveMethod::NetProfit,
    })
}

/// Certificate residuals for a claimed net-profit equilibrium. On top of the
/// shared clearing/budget/bang-per-buck residuals (clearing restricted to
/// priced nodes), `max_kkt_residual` also folds in:
/// - the utility floor `u_i ≥ B_i`,
/// - surplus complementarity `s_i (u_i − B_i) = 0` (normalized by `B_i²`),
/// - the price cap `p_j ≤ max_i a[i][j]`.
///
/// The duality gap compares against the pricing program minimizing
/// `Σ_j p_j − Σ_i B_i ln η_i` over `p_j ≥ a[i][j] η_i`, `0 ≤ η_i ≤ 1`,
/// evaluated at `η_i = min(B_i/u_i, 1)` with prices lifted to feasibility.
pub fn netprofit_certificate(
    instance: &MarketInstance,
    solution: &EquilibriumSolution,
) -> CertificateReport {
    let mut report = crate::eg::certificate_impl(instance, solution, true);
    if !report.max_kkt_residual.is_finite() {
        return report;
    }
    let n = instance.n_services();
    let u: Vec<f64> = (0..n)
        .map(|i| dot(&instance.valuations()[i], solution.allocation.row(i)) + solution.surpluses[i])
        .collect();

    let mut floor = 0.0f64;
    let mut complementarity = 0.0f64;
    for i in 0..n {
        let b = instance.budget(i);
        floor = floor.max((b - u[i]).max(0.0) / b.max(1e-300));
        complementarity =
            complementarity.max(solution.surpluses[i] * (u[i] - b).abs() / (b * b).max(1e-300));
    }
    let price_cap = (0..instance.n_ens())
        .map(|j| {
            let best = (0..n).map(|i| instance.valuation(i, j)).fold(0.0, f64::max);
            (solution.prices.get(j) - best).max(0.0) / best.max(1e-300)
        })
        .fold(0.0, f64::max);

    // Duality gap for the net-profit pricing program.
    let eta: Vec<f64> = instance
        .budgets()
        .iter()
        .zip(&u)
        .map(|(b, u)| (b / u).min(1.0))
        .collect();
    let lifted: Vec<f64> = (0..instance.n_ens())
        .map(|j| {
            let needed = (0..n)
                .map(|i| instance.valuation(i, j) * eta[i])
                .fold(0.0, f64::max);
            solution.prices.get(j).max(needed)
        })
        .collect();
    let dual: f64 = lifted.iter().sum::<f64>()
        + instance
            .budgets()
            .iter()
            .zip(&eta)
            .map(|(b, e)| -b * e.ln() + b * b.ln() - b)
            .sum::<f64>();
    let primal = objective(instance, &u, &solution.surpluses);
    report.duality_gap = dual - primal;
    report.max_kkt_residual = report
        .max_kkt_residual
        .max(floor)
        .max(complementarity)
        .max(price_cap);
    report
}

fn certificate_ok(instance: &MarketInstance, solution: &EquilibriumSolution, tol: f64) -> bool {
    let cert = netprofit_certificate(instance, solution);
    let primal = objective(instance, &solution.utilities, &solution.surpluses).abs();
    cert.max_kkt_residual <= tol && cert.duality_gap <= tol * primal.max(1.0)
}

/// Solves the net-profit market to a certified equilibrium.
pub fn solve_netprofit(
    instance: &MarketInstance,
    opts: &NetProfitOptions,
) -> Result<EquilibriumSolution> {
    match opts.engine {
        NetProfitEngine::ProjectedGradient => solve_pgd(instance, opts),
        NetProfitEngine::ProportionalResponse => solve_proportional(instance, opts),
    }
}

fn initial_point(instance: &MarketInstance, opts: &NetProfitOptions) -> (Vec<Vec<f64>>, Vec<f64>) {
    match &opts.init {
        Some((x, s)) => (x.clone(), s.clone()),
        None => {
            let n = instance.n_services();
            let m = instance.n_ens();
            (
                vec![vec![1.0 / (2.0 * n as f64); m]; n],
                instance.budgets().iter().map(|b| b / 2.0).collect(),
            )
        }
    }
}

fn solve_pgd(instance: &MarketInstance, opts: &NetProfitOptions) -> Result<EquilibriumSolution> {
    let n = instance.n_services();
    let m = instance.n_ens();
    let (mut x, mut s) = initial_point(instance, opts);
    let mut u: Vec<f64> = (0..n)
        .map(|i| dot(&instance.valuations()[i], &x[i]) + s[i])
        .collect();
    let mut obj = objective(instance, &u, &s);
    let mut step = 1.0;
    let check_every = 200;
    let mut stalled = 0usize;
    for iter in 1..=opts.max_iters {
        let mut improved = false;
        step *= 2.0;
        for _ in 0..60 {
            let mut cx = vec![vec![0.0; m]; n];
            for j in 0..m {
                let mut col: Vec<f64> = (0..n)
                    .map(|i| x[i][j] + step * instance.budget(i) * instance.valuation(i, j) / u[i])
                    .collect();
                project_capped_simplex(&mut col);
                for i in 0..n {
                    cx[i][j] = col[i];
                }
            }
            let cs: Vec<f64> = (0..n)
                .map(|i| (s[i] + step * (instance.budget(i) / u[i] - 1.0)).max(0.0))
                .collect();
            let cu: Vec<f64> = (0..n)
                .map(|i| dot(&instance.valuations()[i], &cx[i]) + cs[i])
                .collect();
            let cobj = objective(instance, &cu, &cs);
            if cobj > obj {
                let gain = cobj - obj;
                x = cx;
                s = cs;
                u = cu;
                stalled = if gain > opts.obj_tol * obj.abs().max(1.0) {
                    0
                } else {
                    stalled + 1
                };
                obj = cobj;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            stalled += 1;
        }
        if iter % check_every == 0 || stalled >= 50 {
            let candidate = build_solution(instance, x.clone(), s.clone(), iter, true)?;
            if certificate_ok(instance, &candidate, opts.cert_tol) {
                return Ok(candidate);
            }
            if stalled >= 50 {
                // Objective progress has hit the floating-point floor before
                // the certificate target; hand the iterate to the
                // proportional-response engine, whose residuals contract
                // without relying on objective differences.
                return refine_with_proportional(instance, opts, x, s, iter);
            }
        }
    }
    refine_with_proportional(instance, opts, x, s, opts.max_iters)
}

fn refine_with_proportional(
    instance: &MarketInstance,
    opts: &NetProfitOptions,
    x: Vec<Vec<f64>>,
    s: Vec<f64>,
    iterations_used: usize,
) -> Result<EquilibriumSolution> {
    let n = instance.n_services();
    let m = instance.n_ens();
    // Blend toward uniform so every bid is strictly positive; multiplicative
    // updates cannot revive an exactly-zero bid.
    let blend = 1e-3;
    let x0: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (1.0 - blend) * x[i][j] + blend / (2.0 * n as f64))
                .collect()
        })
        .collect();
    let s0: Vec<f64> = (0..n)
        .map(|i| (1.0 - blend) * s[i] + blend * instance.budget(i) / 2.0)
        .collect();
    let fallback = NetProfitOptions {
        engine: NetProfitEngine::ProportionalResponse,
        init: Some((x0, s0)),
        ..opts.clone()
    };
    match solve_proportional(instance, &fallback) {
        Ok(mut solution) => {
            solution.iterations += iterations_used;
            Ok(solution)
        }
        Err(Error::NotConverged {
            iterations,
            residual,
            best,
            trace,
        }) => Err(Error::NotConverged {
            iterations: iterations + iterations_used,
            residual,
            best,
            trace,
        }),
        Err(other) => Err(other),
    }
}

fn solve_proportional(
    instance: &MarketInstance,
    opts: &NetProfitOptions,
) -> Result<EquilibriumSolution> {
    let n = instance.n_services();
    let m = instance.n_ens();
    // Money bids per node plus a per-service money hold; the hold plays the
    // role of a private good with unit value.
    let (x0, s0) = initial_point(instance, opts);
    let mut hold = s0;
    let mut bids: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let budget = instance.budget(i) - hold[i];
            let weight: f64 = x0[i].iter().sum();
            x0[i]
                .iter()
                .map(|v| {
                    if weight > 0.0 {
                        budget * v / weight
                    } else {
                        budget / m as f64
                    }
                })
                .collect()
        })
        .collect();
    let check_every = 200;
    let mut residual = f64::INFINITY;
    for iter in 1..=opts.max_iters {
        let prices = column_sums(&bids);
        let mut next_bids = vec![vec![0.0; m]; n];
        let mut next_hold = vec![0.0; n];
        residual = 0.0;
        for i in 0..n {
            let budget = instance.budget(i);
            let mut u = hold[i];
            let row = &instance.valuations()[i];
            for j in 0..m {
                if prices[j] > 0.0 {
                    u += row[j] * bids[i][j] / prices[j];
                }
            }
            if u <= 0.0 {
                return Err(Error::DegenerateAllocation { service: i });
            }
            for j in 0..m {
                let share = if prices[j] > 0.0 {
                    row[j] * bids[i][j] / prices[j]
                } else {
                    0.0
                };
                next_bids[i][j] = budget * share / u;
                residual = residual.max((next_bids[i][j] - bids[i][j]).abs() / budget);
            }
            next_hold[i] = budget * hold[i] / u;
            residual = residual.max((next_hold[i] - hold[i]).abs() / budget);
        }
        bids = next_bids;
        hold = next_hold;
        if iter % check_every == 0 || residual < 1e-14 {
            let prices = column_sums(&bids);
            let x: Vec<Vec<f64>> = bids
                .iter()
                .map(|row| {
                    row.iter()
                        .zip(&prices)
                        .map(|(b, p)| if *p > 0.0 { b / p } else { 0.0 })
                        .collect()
                })
                .collect();
            let candidate = build_solution(instance, x, hold.clone(), iter, true)?;
            if certificate_ok(instance, &candidate, opts.cert_tol) {
                return Ok(candidate);
            }
            if residual < 1e-14 {
                let cert = netprofit_certificate(instance, &candidate);
                let mut best = candidate;
                best.converged = false;
                return Err(Error::NotConverged {
                    iterations: iter,
                    residual: cert.max_kkt_residual,
                    best: Box::new(best),
                    trace: None,
                });
            }
        }
    }
    let prices = column_sums(&bids);
    let x: Vec<Vec<f64>> = bids
        .iter()
        .map(|row| {
            row.iter()
                .zip(&prices)
                .map(|(b, p)| if *p > 0.0 { b / p } else { 0.0 })
                .collect()
        })
        .collect();
    let mut best = build_solution(instance, x, hold, opts.max_iters, true)?;
    best.converged = false;
    Err(Error::NotConverged {
        iterations: opts.max_iters,
        residual,
        best: Box::new(best),
        trace: None,
    })
}

/// One row of a budget sweep: the solved market with all budgets multiplied
/// by `scale`.
#[derive(Clone, Debug)]
pub struct SweepRow {
    pub scale: f64,
    pub prices: Vec<f64>,
    pub utilities: Vec<f64>,
    pub surpluses: Vec<f64>,
}

impl SweepRow {
    /// Surplus as a fraction of the (scaled) budget per service.
    pub fn surplus_ratios(&self, instance: &MarketInstance) -> Vec<f64> {
        self.surpluses
            .iter()
            .zip(instance.budgets())
            .map(|(s, b)| s / (b * self.scale))
            .collect()
    }
}

/// Solves the net-profit market at each budget scale, ascending. Solver
/// errors are annotated with the failing scale.
pub fn budget_sweep(
    instance: &MarketInstance,
    scales: &[f64],
    opts: &NetProfitOptions,
) -> Result<Vec<SweepRow>> {
    if scales.is_empty() {
        return Err(Error::InvalidConfig("no scales given".into()));
    }
    if scales.windows(2).any(|w| w[0] > w[1]) || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidConfig(
            "scales must be positive and sorted ascending".into(),
        ));
    }
    let mut rows = Vec::with_capacity(scales.len());
    for &scale in scales {
        let scaled = instance.scale_budgets(scale)?;
        let solution = solve_netprofit(&scaled, opts).map_err(|e| Error::Sweep {
            scale,
            source: Box::new(e),
        })?;
        rows.push(SweepRow {
            scale,
            prices: solution.prices.values().to_vec(),
            utilities: solution.utilities,
            surpluses: solution.surpluses,
        });
    }
    Ok(rows)
}
