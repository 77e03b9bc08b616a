//! One test per acceptance criterion. Each prints its PASS/FAIL line.

use npg_cli::acceptance::run_criterion;

fn check(id: u8) {
    let report = run_criterion(id);
    println!("{report}");
    assert!(report.passed, "{report}");
}

#[test]
fn criterion_01_vanilla_divergence() {
    check(1);
}

#[test]
fn criterion_02_clipping() {
    check(2);
}

#[test]
fn criterion_03_npg_rates() {
    check(3);
}

#[test]
fn criterion_04_onpg_rate() {
    check(4);
}

#[test]
fn criterion_05_small_tau_schedule() {
    check(5);
}

#[test]
fn criterion_06_feature_equivalence() {
    check(6);
}

#[test]
fn criterion_07_monotone_agreement() {
    check(7);
}

#[test]
fn criterion_08_markov_tabular() {
    check(8);
}

#[test]
fn criterion_09_markov_features() {
    check(9);
}

#[test]
fn criterion_10_bellman_contraction() {
    check(10);
}

#[test]
fn criterion_11_oracle_integrity() {
    check(11);
}
