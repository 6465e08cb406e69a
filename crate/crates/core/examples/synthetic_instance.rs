//! Generate a sparse regression instance, audit it, and save it for later runs.
//!
//! cargo run --example synthetic_instance -- [out.json]

use privreg::io::{load_instance, save_instance};
use privreg::synth::{check_assumptions, sample_instance, CovFamily, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        n: 500,
        d: 40,
        k: 4,
        q: 0.5,
        s: 2.5,
        cov_family: CovFamily::GeometricDecay { rho: None },
        seed: 11,
        ..SynthConfig::default()
    };
    let inst = sample_instance(&cfg)?;
    let report = check_assumptions(&inst, &cfg);
    println!("n = {}, d = {}, support = {}", inst.n(), inst.d(), report.support_size);
    println!("row budget {:.3} (s = {}), min eigenvalue {:.3}, kappa_inf {:.3}", report.row_budget, cfg.s, report.min_eigenvalue, report.kappa_inf);
    println!("all assumptions hold: {}", report.all_pass());

    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("privreg-instance.json").display().to_string());
    save_instance(path.as_ref(), &inst, &cfg)?;
    let (back, _) = load_instance(path.as_ref())?;
    assert_eq!(back.agents, inst.agents);
    println!("saved and reloaded {path}");
    Ok(())
}
