//! One mechanism round under the polynomial schedule, plus an isolated recomputation
//! of every payment from the agent's own report and the peer group's estimate.

use privreg::experiments::{corollary_params, CorollarySchedule};
use privreg::mechanism::{apply_threshold_strategy, billboard_payment, run_mechanism};
use privreg::rng::rng_from_seed;
use privreg::synth::{sample_instance, Population, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let n = 2000;
    let sched = CorollarySchedule::default();
    let synth = SynthConfig { n, seed: 5, ..sched.base.clone() };
    let inst = sample_instance(&synth)?;
    let population = Population::new(&synth, inst.theta_star.clone(), &inst.sigma)?;
    let (budget, mut cfg) = corollary_params(n, &sched)?;
    cfg.partition_seed = 17;

    let reported = apply_threshold_strategy(&inst.agents, &cfg, &population, &mut rng_from_seed(3));
    let out = run_mechanism(&reported, &cfg, &inst.costs())?;
    println!("eps {:.4}, delta {:.2e}, cost threshold {:.3}", budget.eps, budget.delta, cfg.threshold());
    println!("{} of {n} agents misreport", reported.misreported_count());
    println!("total payment {:.5} within bound {:.5}", out.total_payment(), cfg.budget_bound(n));
    let min_u = out.utilities.iter().copied().fold(f64::INFINITY, f64::min);
    println!("smallest realized utility {min_u:.5}");

    let params = cfg.payment_params();
    let exact = (0..n).all(|i| {
        let peer = out.peer_estimate(out.group_assignment[i]);
        billboard_payment(&reported.records[i], peer, &params).unwrap().payment.to_bits() == out.payments[i].to_bits()
    });
    println!("payments reproducible in isolation: {exact}");
    Ok(())
}
