//! Mean utility of low-cost agents and the share of agents under the cost threshold.

use privreg::experiments::{run_rationality_experiment, CorollarySchedule};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sched = CorollarySchedule { n_grid: vec![500, 1000], trials: 100, ..CorollarySchedule::default() };
    let rep = run_rationality_experiment(&sched)?;
    for r in &rep.rows {
        println!(
            "n = {:>4}: {} below-threshold agents, {:.3} with mean utility >= 0, min mean {:.3e}, threshold share met in {:.3} of draws",
            r.n, r.below_threshold_agents, r.frac_nonneg_utility, r.min_mean_utility, r.share_meeting_alpha
        );
    }
    Ok(())
}
