//! Regenerates the checked-in fixture files under `fixtures/`.
//!
//! Run explicitly with
//! `cargo test -p edge-market --test fixture_gen -- --ignored`.
//! The fixtures are committed because scenario generation is only
//! reproducible with this crate's pinned generator; downstream tests load
//! the concrete files.

use std::fs;
use std::path::PathBuf;

use edge_market::market::MarketInstance;
use edge_market::scenario::{build_instance, generate, GenerationConfig};

fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[test]
#[ignore]
fn regenerate_fixtures() {
    let dir = fixtures_dir();
    fs::create_dir_all(&dir).unwrap();

    // Two services, three nodes: the worked example with equilibrium prices
    // (1, 2, 2).
    let six = MarketInstance::new(
        "two-service worked example",
        vec![1.0, 4.0],
        vec![vec![1.0, 10.0, 4.0], vec![4.0, 8.0, 8.0]],
    )
    .unwrap();
    write_json(dir.join("six.json"), &six);

    // Base case: 4 services, 8 edge nodes, equal budgets summing to one.
    let base_config = GenerationConfig {
        n_services: 4,
        n_ens: 8,
        ..GenerationConfig::default()
    };
    let base_scenario = generate(&base_config, 6).unwrap();
    let (base_instance, warnings) = build_instance(&base_scenario).unwrap();
    assert!(warnings.is_empty(), "base case must keep all rows/columns");
    assert_eq!(base_instance.n_services(), 4);
    assert_eq!(base_instance.n_ens(), 8);
    write_json(dir.join("base_case.scenario.json"), &base_scenario);
    write_json(dir.join("base_case.instance.json"), &base_instance);

    // Ten buyers, twenty nodes: the bidding-game comparison instance.
    let br_config = GenerationConfig {
        n_services: 10,
        n_ens: 20,
        delay_per_km: 2.0,
        ..GenerationConfig::default()
    };
    let br_scenario = generate(&br_config, 1).unwrap();
    let (br_instance, warnings) = build_instance(&br_scenario).unwrap();
    assert!(warnings.is_empty());
    assert_eq!(br_instance.n_services(), 10);
    assert_eq!(br_instance.n_ens(), 20);
    write_json(dir.join("br_10x20.scenario.json"), &br_scenario);
    write_json(dir.join("br_10x20.instance.json"), &br_instance);
}

fn write_json<T: serde::Serialize>(path: PathBuf, value: &T) {
    let mut body = serde_json::to_string_pretty(value).unwrap();
    body.push('\n');
    fs::write(&path, body).unwrap();
    eprintln!("wrote {}", path.display());
}

// Guards the checked-in files against drift: regenerating with the pinned
// seeds must reproduce them byte for byte.
#[test]
fn fixtures_match_regeneration() {
    let six = MarketInstance::new(
        "two-service worked example",
        vec![1.0, 4.0],
        vec![vec![1.0, 10.0, 4.0], vec![4.0, 8.0, 8.0]],
    )
    .unwrap();
    assert_fixture("six.json", &pretty(&six));

    let base_config = GenerationConfig {
        n_services: 4,
        n_ens: 8,
        ..GenerationConfig::default()
    };
    let base_scenario = generate(&base_config, 6).unwrap();
    assert_fixture("base_case.scenario.json", &pretty(&base_scenario));
    assert_fixture(
        "base_case.instance.json",
        &pretty(&build_instance(&base_scenario).unwrap().0),
    );

    let br_config = GenerationConfig {
        n_services: 10,
        n_ens: 20,
        delay_per_km: 2.0,
        ..GenerationConfig::default()
    };
    let br_scenario = generate(&br_config, 1).unwrap();
    assert_fixture(
        "br_10x20.instance.json",
        &pretty(&build_instance(&br_scenario).unwrap().0),
    );
}

fn assert_fixture(name: &str, regenerated: &str) {
    let on_disk = fs::read_to_string(fixtures_dir().join(name))
        .unwrap_or_else(|e| panic!("missing fixture {name}: {e}"));
    assert_eq!(on_disk, regenerated, "fixture {name} drifted");
}

fn pretty<T: serde::Serialize>(value: &T) -> String {
    let mut body = serde_json::to_string_pretty(value).unwrap();
    body.push('\n');
    body
}
