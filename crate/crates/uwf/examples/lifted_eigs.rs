//! Eigen-structure of lifted rank-1 differences ppᴴ − qqᴴ and of the
//! concentration residual Δ(ρρᴴ).

use uwf::forward::make_gaussian;
use uwf::linalg::{c, hermitian_norm, power_iteration, rank2_eig, CMat, CVec};
use uwf::rng::Prng;
use uwf::theory::delta_rank1;

fn main() -> uwf::Result<()> {
    let n = 12;
    let mut rng = Prng::new(11);
    let mut draw = || -> CVec { (0..n).map(|_| c(rng.normal(), rng.normal())).collect() };
    let (p, q) = (draw(), draw());

    let closed = rank2_eig(&p, &q)?;
    let lifted = CMat::outer(&p, &p).sub(&CMat::outer(&q, &q));
    let top = power_iteration(&lifted, 1e-12, 10_000, 0).map_err(|e| uwf::Error::Numeric(format!("{} iterations", e.iterations)))?;
    println!("closed form  λ+ = {:+.6}  λ- = {:+.6}", closed.pairs[0].value, closed.pairs[1].value);
    println!("power method |λ|max = {:+.6}", top.value);

    let mut rebuilt = CMat::zeros(n, n);
    for pair in &closed.pairs {
        rebuilt = rebuilt.add(&CMat::outer(&pair.vector, &pair.vector).scaled(pair.value));
    }
    println!("‖Σ λ v vᴴ − (ppᴴ − qqᴴ)‖_F = {:.2e}", rebuilt.sub(&lifted).frobenius());

    for ratio in [2, 8, 32] {
        let f = make_gaussian(ratio * n, n, 3)?;
        let resid = delta_rank1(&f, &p)?;
        let n2: f64 = p.iter().map(|z| z.norm_sqr()).sum();
        println!("M/N = {ratio:>2}: ‖Δ(ppᴴ)‖/‖p‖² = {:.4}", hermitian_norm(&resid, 1e-12, 0) / n2);
    }
    Ok(())
}
