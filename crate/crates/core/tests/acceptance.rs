//! Runs the ten acceptance criteria and prints one verdict line each.
//! Exits non-zero if any criterion fails.

use kljn_sync::harness::acceptance::run_criterion;

fn main() {
    let mut failed = Vec::new();
    for id in 1..=10 {
        let report = run_criterion(id).expect("criterion exists");
        println!("{report}");
        if !report.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all 10 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
