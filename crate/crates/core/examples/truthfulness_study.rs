//! Deviation gain across sample sizes for every misreport model.

use privreg::experiments::{run_truthfulness_experiment, CorollarySchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sched = CorollarySchedule { n_grid: vec![500, 1000, 2000], trials: 100, ..CorollarySchedule::default() };
    let rep = run_truthfulness_experiment(&sched)?;
    for row in &rep.rows {
        println!("{:>13} n = {:>4}: eta_hat {:.3e} (se {:.1e}), null {:.1e}", row.model, row.n, row.eta_hat, row.stderr, row.null_gain);
    }
    for t in &rep.trends {
        println!("{}: decreasing {}, eta/a1 at largest n {:.3}", t.model, t.strictly_decreasing, t.ratio_to_a1_at_max_n);
    }
    Ok(())
}
