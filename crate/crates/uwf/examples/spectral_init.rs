//! Spectral initialization accuracy against M/N for both norm estimates.

use uwf::forward::{make_gaussian, spectral_init, ScaleRule};
use uwf::linalg::{c, dist, norm, CVec};
use uwf::metrics::median;
use uwf::rng::Prng;

fn main() -> uwf::Result<()> {
    let n = 32;
    println!("{:>6} {:>14} {:>14} {:>12}", "M/N", "sqrt_lambda", "norm_of_d", "|rho0|/|rho|");
    for ratio in [1.0, 2.0, 4.0, 8.0, 16.0] {
        let m = (ratio * n as f64) as usize;
        let mut by_rule = [Vec::new(), Vec::new()];
        let mut scale = Vec::new();
        for trial in 0..20u64 {
            let f = make_gaussian(m, n, 100 + trial)?;
            let mut rng = Prng::derive(trial, "spectral-example", m as u64);
            let truth: CVec = (0..n).map(|_| c(rng.normal(), rng.normal())).collect();
            let d = f.intensity(&truth)?;
            for (k, rule) in [ScaleRule::SqrtLambda, ScaleRule::NormOfD].into_iter().enumerate() {
                let init = spectral_init(&f, &d, rule)?;
                by_rule[k].push(dist(&init.estimate, &truth)? / norm(&truth));
                if rule == ScaleRule::SqrtLambda {
                    scale.push(norm(&init.estimate) / norm(&truth));
                }
            }
        }
        println!(
            "{ratio:>6} {:>14.4} {:>14.4} {:>12.3}",
            median(&by_rule[0]),
            median(&by_rule[1]),
            median(&scale)
        );
    }
    Ok(())
}
