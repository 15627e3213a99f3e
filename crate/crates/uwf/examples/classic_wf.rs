//! Classic Wirtinger flow on a planted complex signal.
//!
//! `cargo run --release --example classic_wf -- [N] [M/N] [seed]`

use uwf::forward::{make_gaussian, spectral_init, ScaleRule};
use uwf::linalg::{c, dist, norm, CVec};
use uwf::rng::Prng;
use uwf::wf::{run_wf, WfConfig};

fn main() -> uwf::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().map_or(16, |v| *v as usize);
    let ratio = args.get(1).copied().unwrap_or(8.0);
    let seed = args.get(2).map_or(7, |v| *v as u64);

    let m = (ratio * n as f64).round() as usize;
    let f = make_gaussian(m, n, seed)?;
    let mut rng = Prng::derive(seed, "signal", 0);
    let truth: CVec = (0..n).map(|_| c(rng.normal(), rng.normal())).collect();
    let d = f.intensity(&truth)?;

    let init = spectral_init(&f, &d, ScaleRule::NormOfD)?;
    let cfg = WfConfig { max_iter: 2000, record_trace: false, ..WfConfig::default() };
    let trace = run_wf(&f, &d, &init.estimate, &cfg, Some(&truth))?;

    println!("N = {n}, M = {m}, status {:?} after {} iterations", trace.status, trace.iterations);
    let hist = trace.dist_history.as_deref().unwrap_or(&[]);
    for (k, (loss, dd)) in trace.loss_history.iter().zip(hist).enumerate().step_by(200) {
        println!("{k:>5}  loss {loss:.3e}  dist/|rho| {:.3e}", dd / norm(&truth));
    }
    println!("final dist/|rho| = {:.3e}", dist(&trace.final_estimate, &truth)? / norm(&truth));
    Ok(())
}
