//! Total payment against the analytic budget bound.

use privreg::experiments::{run_budget_experiment, CorollarySchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sched = CorollarySchedule { n_grid: vec![500, 1000, 2000, 4000], trials: 10, ..CorollarySchedule::default() };
    let rep = run_budget_experiment(&sched)?;
    for p in &rep.points {
        let bound = rep.rows.iter().find(|r| r.n == p.n).map_or(f64::NAN, |r| r.bound);
        println!("n = {:>4}: mean total {:.5}, bound {:.5}", p.n, p.mean, bound);
    }
    println!("bound scales as n^{:.2}; empirical slope {:?}; {} runs checked", rep.bound_exponent, rep.empirical_slope, rep.runs_checked);
    Ok(())
}
