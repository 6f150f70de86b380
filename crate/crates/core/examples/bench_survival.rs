//! Times the survival workload: two estimates at 10^4 replicates and a
//! bracket search on d = 1, radius 20, T = 50.
use std::time::Instant;

use bdlattice::survival::{bracket_lambda_c, estimate_survival, BracketOptions, SurvivalSetup};

fn main() {
    let reps: u64 = std::env::args().nth(1).map_or(10_000, |a| a.parse().unwrap());
    let setup = SurvivalSetup::new(1, 20, 50.0, 2024);
    for lambda in [0.1, 4.0] {
        let t = Instant::now();
        let e = estimate_survival(&setup, lambda, reps).unwrap();
        println!("lambda={lambda} p={:.4} ci={:?} {:.1}s", e.p_hat, e.ci95, t.elapsed().as_secs_f64());
    }
    let t = Instant::now();
    let b = bracket_lambda_c(&setup, &BracketOptions::default()).unwrap();
    println!("bracket [{}, {}] {} decisions {:.1}s", b.lo, b.hi, b.decisions.len(), t.elapsed().as_secs_f64());
}
