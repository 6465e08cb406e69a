//! Analytic cost threshold against a Monte Carlo estimate of the smallest valid one.

use privreg::mechanism::{empirical_tau1, tau_alpha_beta_bound};

fn main() {
    for n in [500, 2000, 8000] {
        let nf = n as f64;
        let (alpha, beta) = (nf.powf(-1.2), 1.0 / nf);
        let bound = tau_alpha_beta_bound(alpha, beta, 1.0);
        let empirical = empirical_tau1(alpha, beta, 1.0, n, 2000, 3);
        println!("n = {n}: bound {bound:.3}, Monte Carlo {empirical:.3}");
    }
}
