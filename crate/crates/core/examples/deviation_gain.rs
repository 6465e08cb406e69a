//! Monte Carlo gain from misreporting, for one low-cost agent, as n grows.

use privreg::experiments::{corollary_params, CorollarySchedule};
use privreg::mechanism::deviation_gain;
use privreg::synth::{sample_instance, Population, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sched = CorollarySchedule::default();
    for n in [500, 1000, 2000] {
        let synth = SynthConfig { n, seed: 8, ..sched.base.clone() };
        let inst = sample_instance(&synth)?;
        let population = Population::new(&synth, inst.theta_star.clone(), &inst.sigma)?;
        let (_, cfg) = corollary_params(n, &sched)?;
        let agent = inst.agents.iter().position(|a| a.c <= cfg.threshold()).expect("some agent is below threshold");
        let y = inst.agents[agent].y;
        let deviations = [0.0, -y, y + 1.0, y];
        let g = deviation_gain(&inst.agents, agent, &population, &cfg, &deviations, 200, 21)?;
        println!("n = {n}: eta_hat {:.3e} (se {:.1e}), a1 {:.3e}, {} censored", g.gain, g.stderr, cfg.a1, g.censored);
        for d in &g.per_deviation {
            println!("    report {:>8.4}: mean gain {:.3e}", d.report, d.mean_gain);
        }
    }
    Ok(())
}
