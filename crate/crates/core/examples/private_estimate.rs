//! One run of the private estimator, with and without noise.

use privreg::dataset::ReportedDataset;
use privreg::estimator::{default_config, estimate, Calibration, NoiseMode, PrivacyBudget};
use privreg::synth::{sample_instance, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let synth = SynthConfig { n: 4000, d: 20, k: 3, seed: 2, ..SynthConfig::default() };
    let inst = sample_instance(&synth)?;
    let data = ReportedDataset::truthful(&inst);

    for eps in [2.0, 5.0, 20.0] {
        let budget = PrivacyBudget::new(eps, 1e-4)?;
        for mode in [NoiseMode::StrictPrivacy, NoiseMode::Disabled] {
            let cal = Calibration { m_r: 0.5, m_x: 0.5, noise_mode: mode, seed: 9, ..Calibration::default() };
            let cfg = default_config(synth.n, synth.d, synth.sigma, budget, &cal);
            match estimate(&data, &cfg) {
                Ok(est) => println!(
                    "eps {eps:>4}  {mode:?}: squared error {:.4}, support {}, condition {:.1}",
                    (&est.theta_bar - &inst.theta_star).norm_squared(),
                    est.diagnostics.support_size,
                    est.diagnostics.condition
                ),
                Err(e) => println!("eps {eps:>4}  {mode:?}: {e}"),
            }
        }
    }
    Ok(())
}
