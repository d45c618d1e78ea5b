//! One line per acceptance criterion: verdict, wall time against its
//! budget, and the measured quantities. Exits nonzero if any fails.

use std::time::{Duration, Instant};

use fbmhd_cli::checks::*;

const SEED: u64 = 20_240_611;

fn main() {
    let criteria: Vec<(&str, u64, Box<dyn Fn() -> Verdict>)> = vec![
        ("1 symmetry & positivity", 30, Box::new(|| symmetry_positivity(SEED, 1000))),
        ("2 boundary structure", 10, Box::new(|| boundary_structure(SEED, 200))),
        ("3 light-speed uniformity", 10, Box::new(|| light_speed_uniformity(SEED, &[0.2, 0.1, 0.05, 0.025], 40))),
        ("4 conservative equivalence", 10, Box::new(|| conservative_equivalence(SEED, 200))),
        ("5 good-unknown identity", 120, Box::new(|| alinhac_convergence(&[(33, 16), (65, 32), (129, 64)]))),
        ("6 constraint propagation", 300, Box::new(|| constraint_propagation((33, 16), 0.1))),
        ("7 linear solver contract", 300, Box::new(linear_solver_contract)),
        ("8 smoothing operators", 60, Box::new(|| smoothing_operators(SEED, &[2.0, 4.0, 8.0, 16.0]))),
        ("9 theta schedule", 1, Box::new(|| schedule_bounds(1_000_000))),
        ("10 nash-moser sanity", 900, Box::new(|| nash_moser_sanity(65, 32, 0.1, 64.0))),
        ("11 compatibility machinery", 60, Box::new(compatibility_machinery)),
    ];
    let mut failed = 0;
    for (label, budget, run) in &criteria {
        let start = Instant::now();
        let v = run();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*budget);
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {label}: {} ({:.2} s of {budget} s)",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
