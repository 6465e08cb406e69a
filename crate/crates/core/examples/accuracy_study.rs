//! Squared error of the released estimate across sample sizes.

use privreg::experiments::{run_accuracy_experiment, CorollarySchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sched = CorollarySchedule { trials: 10, ..CorollarySchedule::default() };
    let rep = run_accuracy_experiment(&sched)?;
    for p in &rep.points {
        println!("n = {:>5}: mean error {:.4} (se {:.4}), {} used, {} censored", p.n, p.mean, p.stderr, p.used, p.censored);
    }
    println!("log-log slope {:?}, target {:.2}, increases {}", rep.slope, rep.target_slope, rep.increases);
    Ok(())
}
