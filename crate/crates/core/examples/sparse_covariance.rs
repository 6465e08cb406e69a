//! Hard thresholding of the noisy covariance on an exactly sparse design.

use privreg::dataset::ReportedDataset;
use privreg::estimator::{aggregate_stats, default_config, perturb_stats, Calibration, PrivacyBudget};
use privreg::rng::rng_from_seed;
use privreg::synth::{sample_instance, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let budget = PrivacyBudget::new(1.0, 1e-3)?;
    for n in [2000, 8000] {
        let synth = SynthConfig { n, d: 200, k: 5, q: 0.0, s: 3.0, seed: 4, ..SynthConfig::default() };
        let inst = sample_instance(&synth)?;
        let truth = inst.covariate_covariance(&synth);
        let cfg = default_config(n, synth.d, synth.sigma, budget, &Calibration::default());
        let stats = aggregate_stats(&ReportedDataset::truthful(&inst), &cfg)?;
        let private = perturb_stats(&stats, &cfg, &mut rng_from_seed(1))?;
        println!(
            "n = {n}: l1 error noisy {:.3}, thresholded {:.3} ({} of {} entries kept)",
            private.cov_noisy.sub(&truth).norm_l1(),
            private.cov_thresholded.sub(&truth).norm_l1(),
            private.cov_thresholded.count_nonzero(),
            synth.d * synth.d
        );
    }
    Ok(())
}
