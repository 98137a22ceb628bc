//! Shared helpers for the integration and acceptance suites: fixture
//! loading, a seeded random-instance generator, and independent brute-force
//! oracles.

// Each test binary compiles this module separately and uses a subset.
#![allow(dead_code)]

use std::path::PathBuf;

use edge_market::market::MarketInstance;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn load_instance(name: &str) -> MarketInstance {
    let body = std::fs::read_to_string(fixture_path(name))
        .unwrap_or_else(|e| panic!("cannot read fixture {name}: {e}"));
    serde_json::from_str(&body).unwrap_or_else(|e| panic!("cannot parse fixture {name}: {e}"))
}

pub fn six_instance() -> MarketInstance {
    load_instance("six.json")
}

pub fn base_case() -> MarketInstance {
    load_instance("base_case.instance.json")
}

/// Random market with 2..=10 services and nodes, budgets in [1, 3] and
/// valuations in [50, 150] with ~30% zero entries. The valuation floor keeps
/// every equilibrium utility well above one, so relative duality-gap
/// thresholds stay meaningful.
pub fn random_instance(rng: &mut ChaCha8Rng) -> MarketInstance {
    loop {
        let n = rng.gen_range(2..=10usize);
        let m = rng.gen_range(2..=10usize);
        let budgets: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..3.0)).collect();
        let vals: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                (0..m)
                    .map(|_| {
                        if rng.gen_bool(0.3) {
                            0.0
                        } else {
                            rng.gen_range(50.0..150.0)
                        }
                    })
                    .collect()
            })
            .collect();
        if let Ok(inst) = MarketInstance::new("random", budgets, vals) {
            return inst;
        }
    }
}

/// Dense positive 2x2 market, bounded away from degeneracy so grid-search
/// oracles stay accurate.
pub fn random_2x2(rng: &mut ChaCha8Rng) -> MarketInstance {
    let budgets: Vec<f64> = (0..2).map(|_| rng.gen_range(1.0..2.0)).collect();
    let vals: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..2).map(|_| rng.gen_range(1.0..3.0)).collect())
        .collect();
    MarketInstance::new("random-2x2", budgets, vals).unwrap()
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Brute-force maximizer of `Σ_i B_i ln u_i` on a 2x2 market over the grid
/// of full-clearing allocations with the given step: column `j` hands
/// fraction `f_j` to service 0 and the rest to service 1. Returns the best
/// objective value.
pub fn grid_eg_objective_2x2(instance: &MarketInstance, step: f64) -> f64 {
    assert_eq!(instance.n_services(), 2);
    assert_eq!(instance.n_ens(), 2);
    let ticks = (1.0 / step).round() as usize;
    let a = instance.valuations();
    let b = instance.budgets();
    let mut best = f64::NEG_INFINITY;
    for i0 in 0..=ticks {
        let f0 = i0 as f64 * step;
        for i1 in 0..=ticks {
            let f1 = i1 as f64 * step;
            let u0 = a[0][0] * f0 + a[0][1] * f1;
            let u1 = a[1][0] * (1.0 - f0) + a[1][1] * (1.0 - f1);
            if u0 <= 0.0 || u1 <= 0.0 {
                continue;
            }
            let obj = b[0] * u0.ln() + b[1] * u1.ln();
            if obj > best {
                best = obj;
            }
        }
    }
    best
}

/// Brute-force best response in the proportional-sharing game over a bid
/// grid with the given step: maximizes `Σ_j a_j b_j/(b_j + c_j)` subject to
/// `Σ b_j ≤ budget`. Returns the best achieved utility.
pub fn grid_best_response_utility(
    valuations: &[f64],
    other_bids: &[f64],
    budget: f64,
    step: f64,
) -> f64 {
    let m = valuations.len();
    let ticks = (budget / step).floor() as usize;
    let utility = |bids: &[f64]| -> f64 {
        bids.iter()
            .zip(valuations)
            .zip(other_bids)
            .map(|((b, a), c)| if b + c > 0.0 { a * b / (b + c) } else { 0.0 })
            .sum()
    };
    let mut best = f64::NEG_INFINITY;
    match m {
        1 => {
            for t in 0..=ticks {
                best = best.max(utility(&[t as f64 * step]));
            }
        }
        2 => {
            for t0 in 0..=ticks {
                let b0 = t0 as f64 * step;
                for t1 in 0..=(ticks - t0) {
                    best = best.max(utility(&[b0, t1 as f64 * step]));
                }
            }
        }
        3 => {
            for t0 in 0..=ticks {
                let b0 = t0 as f64 * step;
                for t1 in 0..=(ticks - t0) {
                    let b1 = t1 as f64 * step;
                    for t2 in 0..=(ticks - t0 - t1) {
                        best = best.max(utility(&[b0, b1, t2 as f64 * step]));
                    }
                }
            }
        }
        _ => panic!("grid oracle supports at most 3 nodes"),
    }
    best
}
