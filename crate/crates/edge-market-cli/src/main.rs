//! `edgemarket`: generate edge-computing market scenarios, solve them with
//! the centralized or distributed equilibrium algorithms, certify and audit
//! the results, and run comparison/sweep experiments.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 solver non-convergence
//! (output files are still written), 4 certificate above threshold.

// `!(x > 0.0)` is the NaN-rejecting form of the positivity checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use edge_market::dynamics::{
    ces_dual_decomposition, propbr_run, propdyn_run, CesOptions, DynamicsTrace, PropBrOptions,
    PropDynOptions, StepSchedule,
};
use edge_market::eg::{kkt_certificate, solve_eg, EgEngine, EgOptions};
use edge_market::fairness::{
    audit, maxmin_allocation, proportional_allocation, welfare_max, AuditOptions, MaxminOptions,
};
use edge_market::market::{utilities, CertificateReport, EquilibriumSolution, MarketInstance};
use edge_market::netprofit::{
    budget_sweep, netprofit_certificate, solve_netprofit, NetProfitOptions,
};
use edge_market::scenario::{build_instance, generate, EcScenario, GenerationConfig};

const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_CERTIFICATE: u8 = 4;

#[derive(Parser)]
#[command(
    name = "edgemarket",
    about = "Market-equilibrium allocation of edge-node capacity",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random scenario and its derived market instance.
    Generate(GenerateArgs),
    /// Solve an instance and write solution + certificate files.
    Solve(SolveArgs),
    /// Compare allocation schemes on one instance (CSV).
    Compare(CompareArgs),
    /// Parameter sweeps: budget-ratio, budget-scale, or size (CSV).
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Number of edge nodes.
    #[arg(long, short = 'm')]
    m: usize,
    /// Number of services.
    #[arg(long, short = 'n')]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for scenario.json and instance.json.
    #[arg(long)]
    out: PathBuf,
    /// Square area side length in km.
    #[arg(long, default_value_t = 10.0)]
    area: f64,
    /// Network delay per km of distance.
    #[arg(long, default_value_t = 1.0)]
    delay_per_km: f64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Eg,
    Propdyn,
    Ces,
    Propbr,
    Netprofit,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long, value_enum)]
    method: Method,
    /// Market instance JSON file.
    #[arg(
        long,
        conflicts_with = "scenario",
        required_unless_present = "scenario"
    )]
    instance: Option<PathBuf>,
    /// Scenario JSON file; the instance is derived on the fly.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output directory for solution.json and certificate.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Convergence tolerance (meaning depends on the method).
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// CES exponent for --method ces.
    #[arg(long, default_value_t = 0.99)]
    rho: f64,
    /// Price step size for --method ces.
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    /// Initial price for --method ces.
    #[arg(long, default_value_t = 0.2)]
    p0: f64,
    /// Use the diminishing step schedule step/sqrt(t) for --method ces.
    #[arg(long)]
    diminishing: bool,
    /// Round cap for --method propbr.
    #[arg(long)]
    max_rounds: Option<usize>,
    /// Damping factor for --method propdyn.
    #[arg(long, default_value_t = 1.0)]
    damping: f64,
    /// Use the projected-gradient engine for --method eg.
    #[arg(long)]
    gradient_engine: bool,
    /// Rescale budgets to sum to one before solving (--method eg).
    #[arg(long)]
    normalize_budgets: bool,
    /// Residual threshold the certificate must meet for exit code 0.
    #[arg(long, default_value_t = 1e-6)]
    cert_threshold: f64,
    /// Write the iteration trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Print a rounded human-readable summary.
    #[arg(long)]
    pretty: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(
        long,
        conflicts_with = "scenario",
        required_unless_present = "scenario"
    )]
    instance: Option<PathBuf>,
    /// Scenario JSON file; the instance is derived on the fly.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    pretty: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SweepKind {
    BudgetRatio,
    BudgetScale,
    Size,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, value_enum)]
    kind: SweepKind,
    /// Market instance JSON (budget-ratio and budget-scale sweeps).
    #[arg(long)]
    instance: Option<PathBuf>,
    /// Budget ratios B_1:B_2 for --kind budget-ratio, e.g. 0.5,1,2.
    #[arg(long, value_delimiter = ',')]
    ratios: Vec<f64>,
    /// Budget scales for --kind budget-scale, ascending.
    #[arg(long, value_delimiter = ',')]
    scales: Vec<f64>,
    /// Edge-node count for --kind size with --n-list.
    #[arg(long, short = 'm')]
    m: Option<usize>,
    /// Service counts for --kind size, e.g. 4,8,16 (fixed --m).
    #[arg(long, value_delimiter = ',', conflicts_with = "m_list")]
    n_list: Vec<usize>,
    /// Service count for --kind size with --m-list.
    #[arg(long, short = 'n')]
    n: Option<usize>,
    /// Edge-node counts for --kind size, e.g. 8,16,32 (fixed --n).
    #[arg(long, value_delimiter = ',')]
    m_list: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<u8> {
    let config = GenerationConfig {
        n_services: args.n,
        n_ens: args.m,
        area_km: args.area,
        delay_per_km: args.delay_per_km,
        ..GenerationConfig::default()
    };
    let scenario = generate(&config, args.seed).context("scenario generation failed")?;
    let (instance, warnings) = build_instance(&scenario).context("instance build failed")?;
    for warning in &warnings {
        eprintln!("warning: {warning}");
    }
    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    write_json(&args.out.join("scenario.json"), &scenario)?;
    write_json(&args.out.join("instance.json"), &instance)?;
    println!(
        "wrote {} and {} ({} services, {} edge nodes)",
        args.out.join("scenario.json").display(),
        args.out.join("instance.json").display(),
        instance.n_services(),
        instance.n_ens()
    );
    Ok(0)
}

struct SolveOutcome {
    solution: EquilibriumSolution,
    trace: Option<DynamicsTrace>,
    converged: bool,
}

fn cmd_solve(args: SolveArgs) -> Result<u8> {
    let instance = load_market(args.instance.as_deref(), args.scenario.as_deref())?;
    // The eg method may solve a budget-normalized copy; certify against what
    // was actually solved.
    let mut certified_instance = instance.clone();

    let outcome = match args.method {
        Method::Eg => {
            if args.normalize_budgets {
                certified_instance = instance
                    .normalize_budgets()
                    .context("budget normalization failed")?;
            }
            let opts = EgOptions {
                tol: args.tol.unwrap_or(1e-8),
                max_iters: args.max_iters.unwrap_or(200_000),
                engine: if args.gradient_engine {
                    EgEngine::ProjectedGradient
                } else {
                    EgEngine::PropDyn
                },
                cert_tol: args.cert_threshold.min(1e-8),
                damping: args.damping,
                normalize_budgets: args.normalize_budgets,
            };
            run_solver(solve_eg(&instance, &opts).map(|s| (s, None)))
        }
        Method::Propdyn => {
            let opts = PropDynOptions {
                tol: args.tol.unwrap_or(1e-8),
                max_iters: args.max_iters.unwrap_or(200_000),
                damping: args.damping,
                record_bids: false,
                init: None,
            };
            run_solver(propdyn_run(&instance, &opts).map(|(s, t)| (s, Some(t))))
        }
        Method::Ces => {
            let opts = CesOptions {
                rho: args.rho,
                step: args.step,
                p0: args.p0,
                tol: args.tol.unwrap_or(1e-9),
                max_iters: args.max_iters.unwrap_or(2_000_000),
                schedule: if args.diminishing {
                    StepSchedule::Diminishing
                } else {
                    StepSchedule::Constant
                },
            };
            run_solver(ces_dual_decomposition(&instance, &opts).map(|(s, t)| (s, Some(t))))
        }
        Method::Propbr => {
            let opts = PropBrOptions {
                tol: args.tol.unwrap_or(1e-8),
                max_rounds: args.max_rounds.unwrap_or(10_000),
                record_bids: false,
            };
            run_solver(propbr_run(&instance, &opts).map(|(s, t)| (s, Some(t))))
        }
        Method::Netprofit => {
            let opts = NetProfitOptions {
                cert_tol: args.tol.unwrap_or_else(|| args.cert_threshold.min(1e-7)),
                max_iters: args.max_iters.unwrap_or(500_000),
                ..NetProfitOptions::default()
            };
            run_solver(solve_netprofit(&instance, &opts).map(|s| (s, None)))
        }
    }?;

    let certificate = match args.method {
        Method::Netprofit => netprofit_certificate(&certified_instance, &outcome.solution),
        _ => kkt_certificate(&certified_instance, &outcome.solution),
    };

    fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    write_json(&args.out.join("solution.json"), &outcome.solution)?;
    write_json(&args.out.join("certificate.json"), &certificate)?;
    if let Some(path) = &args.trace {
        match &outcome.trace {
            Some(trace) => {
                let mut file = fs::File::create(path)
                    .with_context(|| format!("cannot create {}", path.display()))?;
                trace.write_csv(&mut file)?;
            }
            None => eprintln!("warning: method {:?} keeps no trace", args.method),
        }
    }

    if args.pretty {
        print_pretty(&outcome.solution, &certificate);
    } else {
        println!(
            "method={:?} converged={} iterations={} max_kkt_residual={:.3e}",
            outcome.solution.method,
            outcome.solution.converged,
            outcome.solution.iterations,
            certificate.max_kkt_residual
        );
    }

    if !outcome.converged {
        return Ok(EXIT_NOT_CONVERGED);
    }
    let passes = certificate.max_kkt_residual <= args.cert_threshold
        && certificate.clearing_slack <= args.cert_threshold
        && certificate.mbb_violation <= args.cert_threshold;
    if !passes {
        eprintln!(
            "certificate above threshold {:.3e}: max residual {:.3e}",
            args.cert_threshold, certificate.max_kkt_residual
        );
        return Ok(EXIT_CERTIFICATE);
    }
    Ok(0)
}

fn run_solver(
    result: edge_market::Result<(EquilibriumSolution, Option<DynamicsTrace>)>,
) -> Result<SolveOutcome> {
    match result {
        Ok((solution, trace)) => Ok(SolveOutcome {
            converged: solution.converged,
            solution,
            trace,
        }),
        Err(edge_market::Error::NotConverged {
            iterations,
            residual,
            best,
            trace,
        }) => {
            eprintln!("did not converge after {iterations} iterations (residual {residual:.3e})");
            Ok(SolveOutcome {
                solution: *best,
                trace: trace.map(|t| *t),
                converged: false,
            })
        }
        Err(other) => Err(other.into()),
    }
}

fn print_pretty(solution: &EquilibriumSolution, certificate: &CertificateReport) {
    println!("prices:");
    for (j, p) in solution.prices.values().iter().enumerate() {
        println!("  node {:>3}: {p:.6}", j + 1);
    }
    println!("utilities / surpluses:");
    for (i, (u, s)) in solution
        .utilities
        .iter()
        .zip(&solution.surpluses)
        .enumerate()
    {
        println!("  service {:>3}: {u:.6} / {s:.6}", i + 1);
    }
    println!(
        "converged: {} after {} iterations; certificate: max residual {:.3e}, \
         duality gap {:.3e}",
        solution.converged,
        solution.iterations,
        certificate.max_kkt_residual,
        certificate.duality_gap
    );
}

fn cmd_compare(args: CompareArgs) -> Result<u8> {
    let instance = load_market(args.instance.as_deref(), args.scenario.as_deref())?;
    let n = instance.n_services();

    let me = solve_eg(&instance, &EgOptions::default()).context("equilibrium solve failed")?;
    let schemes: Vec<(&str, edge_market::Allocation)> = vec![
        ("me", me.allocation.clone()),
        ("prop", proportional_allocation(&instance)),
        ("sw1", welfare_max(&instance, &vec![1.0; n])?),
        ("sw2", welfare_max(&instance, instance.budgets())?),
        (
            "maxmin",
            maxmin_allocation(&instance, &MaxminOptions::default())?,
        ),
    ];

    let mut csv =
        String::from("scheme,total_utility,min_utility,ef_index,min_prop_ratio,min_si_margin\n");
    let mut pretty_rows = Vec::new();
    for (name, allocation) in &schemes {
        let u = utilities(&instance, allocation)?;
        let total: f64 = u.iter().sum();
        let min = u.iter().cloned().fold(f64::INFINITY, f64::min);
        let report = audit(&instance, allocation, &AuditOptions::default())?;
        let min_prop = report
            .proportionality_ratios
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let min_si = report
            .sharing_incentive_margins
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        csv.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            fmt(total),
            fmt(min),
            fmt(report.ef_index),
            fmt(min_prop),
            fmt(min_si)
        ));
        pretty_rows.push(format!(
            "{name:>7}  total {total:>9.5}  min {min:>9.5}  EF {:>7.4}  prop {min_prop:>7.4}  si {min_si:>9.5}",
            report.ef_index
        ));
    }
    if args.pretty {
        for row in pretty_rows {
            println!("{row}");
        }
    }
    emit(args.out.as_deref(), &csv, !args.pretty)?;
    Ok(0)
}

fn cmd_sweep(args: SweepArgs) -> Result<u8> {
    let csv = match args.kind {
        SweepKind::BudgetRatio => sweep_budget_ratio(&args)?,
        SweepKind::BudgetScale => sweep_budget_scale(&args)?,
        SweepKind::Size => sweep_size(&args)?,
    };
    emit(args.out.as_deref(), &csv, true)?;
    Ok(0)
}

fn sweep_budget_ratio(args: &SweepArgs) -> Result<String> {
    let path = args
        .instance
        .as_ref()
        .context("--kind budget-ratio needs --instance")?;
    let instance = read_instance(path)?;
    if instance.n_services() < 2 {
        bail!("budget-ratio sweep needs at least two services");
    }
    if args.ratios.is_empty() || args.ratios.iter().any(|r| !(*r > 0.0)) {
        bail!("--ratios must list positive values");
    }
    // Vary B_1:B_2 keeping their sum (and everyone else) fixed.
    let pair_total = instance.budget(0) + instance.budget(1);
    let points: Vec<MarketInstance> = args
        .ratios
        .iter()
        .map(|r| {
            let mut budgets = instance.budgets().to_vec();
            budgets[0] = pair_total * r / (1.0 + r);
            budgets[1] = pair_total / (1.0 + r);
            MarketInstance::new(
                format!("{} ratio={r}", instance.label()),
                budgets,
                instance.valuations().to_vec(),
            )
        })
        .collect::<edge_market::Result<_>>()?;

    let solutions = parallel_map(&points, |inst| solve_eg(inst, &EgOptions::default()));

    let mut csv = String::from("ratio");
    for j in 1..=instance.n_ens() {
        csv.push_str(&format!(",p_{j}"));
    }
    for i in 1..=instance.n_services() {
        csv.push_str(&format!(",u_{i}"));
    }
    csv.push('\n');
    for (r, solution) in args.ratios.iter().zip(solutions) {
        let solution = solution.with_context(|| format!("ratio {r}"))?;
        csv.push_str(&fmt(*r));
        for p in solution.prices.values() {
            csv.push_str(&format!(",{}", fmt(*p)));
        }
        for u in &solution.utilities {
            csv.push_str(&format!(",{}", fmt(*u)));
        }
        csv.push('\n');
    }
    Ok(csv)
}

fn sweep_budget_scale(args: &SweepArgs) -> Result<String> {
    let path = args
        .instance
        .as_ref()
        .context("--kind budget-scale needs --instance")?;
    let instance = read_instance(path)?;
    if args.scales.is_empty() {
        bail!("--scales must list at least one value");
    }
    let rows = budget_sweep(&instance, &args.scales, &NetProfitOptions::default())?;
    let mut csv = String::from("scale");
    for j in 1..=instance.n_ens() {
        csv.push_str(&format!(",p_{j}"));
    }
    for i in 1..=instance.n_services() {
        csv.push_str(&format!(",u_{i}"));
    }
    for i in 1..=instance.n_services() {
        csv.push_str(&format!(",s_{i}"));
    }
    csv.push('\n');
    for row in rows {
        csv.push_str(&fmt(row.scale));
        for p in &row.prices {
            csv.push_str(&format!(",{}", fmt(*p)));
        }
        for u in &row.utilities {
            csv.push_str(&format!(",{}", fmt(*u)));
        }
        for s in &row.surpluses {
            csv.push_str(&format!(",{}", fmt(*s)));
        }
        csv.push('\n');
    }
    Ok(csv)
}

fn sweep_size(args: &SweepArgs) -> Result<String> {
    // Either vary the service count at fixed node count, or the reverse.
    // One draw at the largest size; smaller markets are prefixes, so each
    // original player keeps its position and parameters as the market grows.
    let (sizes, full) = if !args.n_list.is_empty() {
        let m = args.m.context("--kind size with --n-list needs --m")?;
        if args.n_list.contains(&0) {
            bail!("--n-list must list positive service counts");
        }
        let config = GenerationConfig {
            n_services: *args.n_list.iter().max().unwrap(),
            n_ens: m,
            ..GenerationConfig::default()
        };
        (args.n_list.clone(), generate(&config, args.seed)?)
    } else if !args.m_list.is_empty() {
        let n = args.n.context("--kind size with --m-list needs --n")?;
        if args.m_list.contains(&0) {
            bail!("--m-list must list positive node counts");
        }
        let config = GenerationConfig {
            n_services: n,
            n_ens: *args.m_list.iter().max().unwrap(),
            ..GenerationConfig::default()
        };
        (args.m_list.clone(), generate(&config, args.seed)?)
    } else {
        bail!("--kind size needs --n-list or --m-list");
    };
    let vary_services = !args.n_list.is_empty();

    let points: Vec<EcScenario> = sizes
        .iter()
        .map(|&size| {
            if vary_services {
                truncate_services(&full, size)
            } else {
                truncate_nodes(&full, size)
            }
        })
        .collect();
    let solved = parallel_map(&points, |scenario| -> edge_market::Result<_> {
        let (instance, warnings) = build_instance(scenario)?;
        let solution = solve_eg(&instance, &EgOptions::default())?;
        Ok((scenario.n_services(), scenario.n_ens(), warnings, solution))
    });

    let mut csv = String::from("n,m,service,utility\n");
    for result in solved {
        let (n, m, warnings, solution) = result?;
        let dropped: Vec<usize> = warnings
            .iter()
            .filter_map(|w| match w {
                edge_market::scenario::DropWarning::Service { index } => Some(*index),
                _ => None,
            })
            .collect();
        for warning in &warnings {
            eprintln!("warning: n={n} m={m}: {warning}");
        }
        let kept: Vec<usize> = (0..n).filter(|i| !dropped.contains(i)).collect();
        for (row, original) in kept.iter().enumerate() {
            csv.push_str(&format!(
                "{n},{m},{},{}\n",
                original + 1,
                fmt(solution.utilities[row])
            ));
        }
    }
    Ok(csv)
}

fn truncate_services(scenario: &EcScenario, n: usize) -> EcScenario {
    let n = n.min(scenario.n_services());
    EcScenario {
        area_km: scenario.area_km,
        en_positions: scenario.en_positions.clone(),
        service_positions: scenario.service_positions[..n].to_vec(),
        mu: scenario.mu[..n].to_vec(),
        t_max: scenario.t_max[..n].to_vec(),
        net_delay: scenario.net_delay[..n].to_vec(),
        r: scenario.r[..n].to_vec(),
        raw_capacity: scenario.raw_capacity.clone(),
        seed: scenario.seed,
        rng: scenario.rng.clone(),
    }
}

fn truncate_nodes(scenario: &EcScenario, m: usize) -> EcScenario {
    let m = m.min(scenario.n_ens());
    EcScenario {
        area_km: scenario.area_km,
        en_positions: scenario.en_positions[..m].to_vec(),
        service_positions: scenario.service_positions.clone(),
        mu: scenario.mu.iter().map(|row| row[..m].to_vec()).collect(),
        t_max: scenario.t_max.clone(),
        net_delay: scenario
            .net_delay
            .iter()
            .map(|row| row[..m].to_vec())
            .collect(),
        r: scenario.r.clone(),
        raw_capacity: scenario.raw_capacity[..m].to_vec(),
        seed: scenario.seed,
        rng: scenario.rng.clone(),
    }
}

/// Fans a solve out over worker threads (capped by `EDGEMARKET_THREADS`),
/// preserving input order.
fn parallel_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = std::env::var("EDGEMARKET_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|w| *w > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|p| p.get())
                .unwrap_or(1)
        })
        .min(items.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    let slot_refs: Vec<std::sync::Mutex<&mut Option<R>>> =
        slots.iter_mut().map(std::sync::Mutex::new).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let value = f(&items[k]);
                **slot_refs[k].lock().unwrap() = Some(value);
            });
        }
    });
    slots.into_iter().map(|s| s.unwrap()).collect()
}

fn read_instance(path: &Path) -> Result<MarketInstance> {
    let body = fs::read_to_string(path)
        .with_context(|| format!("cannot read instance {}", path.display()))?;
    serde_json::from_str(&body).with_context(|| format!("cannot parse instance {}", path.display()))
}

fn load_market(instance: Option<&Path>, scenario: Option<&Path>) -> Result<MarketInstance> {
    match (instance, scenario) {
        (Some(path), None) => read_instance(path),
        (None, Some(path)) => {
            let body = fs::read_to_string(path)
                .with_context(|| format!("cannot read scenario {}", path.display()))?;
            let scenario: EcScenario = serde_json::from_str(&body)
                .with_context(|| format!("cannot parse scenario {}", path.display()))?;
            let (instance, warnings) =
                build_instance(&scenario).context("instance build failed")?;
            for warning in &warnings {
                eprintln!("warning: {warning}");
            }
            Ok(instance)
        }
        _ => bail!("pass exactly one of --instance or --scenario"),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)
        .with_context(|| format!("cannot serialize {}", path.display()))?;
    body.push('\n');
    fs::write(path, body).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

/// Full double precision for CSV fields so golden-file comparison is
/// meaningful.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn emit(path: Option<&Path>, csv: &str, also_stdout: bool) -> Result<()> {
    match path {
        Some(path) => {
            fs::write(path, csv).with_context(|| format!("cannot write {}", path.display()))?;
            Ok(())
        }
        None => {
            if also_stdout {
                let mut stdout = std::io::stdout().lock();
                stdout.write_all(csv.as_bytes())?;
            }
            Ok(())
        }
    }
}
