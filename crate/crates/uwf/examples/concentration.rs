//! Median empirical concentration constant δ̂ against M/N.

use uwf::theory::delta_sweep;

fn main() -> uwf::Result<()> {
    let ratios = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
    for n in [8, 16] {
        println!("N = {n}");
        for (r, d) in delta_sweep(n, &ratios, 50, 4)? {
            println!("  M/N = {r:>4}: median δ̂ = {d:.4}");
        }
    }
    Ok(())
}
