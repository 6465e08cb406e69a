//! Reference checks: grid-searched soft thresholding and adversarial neighbor sensitivity.

use privreg::numerics::{soft_threshold, Vector};
use privreg::oracle::{exhaustive_sensitivity, kkt_violation, solve_eq2_grid, ClipParams};

fn main() {
    let v = Vector::from_vec(vec![1.3, -0.2, 0.05, -2.0]);
    let lambda = 0.25;
    let closed = soft_threshold(&v, lambda).unwrap();
    let grid = solve_eq2_grid(&v, lambda, 1e-4);
    println!("closed form {:?}", closed.as_slice());
    println!("grid search {:?}", grid.as_slice());
    println!("KKT residual {:.1e}", kkt_violation(&closed, &v, lambda));

    let clip = ClipParams { r: 1.0, tau_x: 0.2, tau_y: 1.5 };
    let rep = exhaustive_sensitivity(30, 10, 500, clip, 1);
    println!(
        "{} neighbor pairs: covariance ratio {:.4}, cross term ratio {:.4} (both at most 1)",
        rep.pairs, rep.cov_ratio, rep.xy_ratio
    );
}
