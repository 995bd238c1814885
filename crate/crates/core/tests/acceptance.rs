//! Acceptance criteria 1 to 10, one line each.
//!
//! Everything runs inside a single test so the throughput suites do not
//! share the host with other tests.

use tdp_core::verify::{VerifyConfig, Verifier, SUITES};

#[test]
fn acceptance() {
    let mut v = Verifier::new(VerifyConfig::default());
    let results = v.run_all();
    assert_eq!(results.len(), SUITES.len());
    let mut by_id = results.clone();
    by_id.sort_by_key(|r| r.id);
    for r in &by_id {
        println!("{}", r.line());
    }
    let failed: Vec<String> = by_id.iter().filter(|r| !r.passed).map(|r| format!("AC{}", r.id)).collect();
    let passed = by_id.len() - failed.len();
    println!("acceptance: {passed}/{} criteria pass", by_id.len());
    assert!(failed.is_empty(), "failing criteria: {}", failed.join(", "));
}

#[test]
fn corrupted_table_breaks_equivalence() {
    let mut v = Verifier::new(VerifyConfig {
        corrupt_tables: true,
        ..VerifyConfig::default()
    });
    let r = v.run_suite(3);
    println!("{}", r.line());
    assert!(!r.passed);
    assert!(r.detail.contains("trusted baseline ordered stream differs"), "{}", r.detail);
}
