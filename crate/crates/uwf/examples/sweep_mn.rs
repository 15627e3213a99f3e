//! Test MSE of the unrolled model and of WF across M/N, written as CSV and SVG.
//!
//! `cargo run --release --example sweep_mn -- [out_dir] [epochs]`

use std::path::PathBuf;

use uwf::experiments::{run_point, squares_model, SquaresSetup};
use uwf::forward::ScaleRule;
use uwf::metrics::Curves;
use uwf::plot::render_svg;
use uwf::train::TrainConfig;
use uwf::wf::WfConfig;

fn main() -> uwf::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "sweep_mn".into()));
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    std::fs::create_dir_all(&out)?;

    let mut curves = Curves::default();
    for ratio in [0.25, 0.5, 1.0, 2.0] {
        let setup = SquaresSetup {
            h: 8,
            w: 8,
            n_train: 400,
            n_test: 50,
            ratio,
            train_snr_db: None,
            test_snr_db: None,
            seed: 1,
            model: squares_model(64, 16, 5),
            train: TrainConfig { lr: 2e-3, batch: 20, epochs, scale_rule: ScaleRule::NormOfD, ..TrainConfig::default() },
            wf: WfConfig { max_iter: 1000, ..WfConfig::default() },
            tune_wf_step: true,
        };
        let p = run_point(&setup)?;
        println!("M/N {ratio:>5}: unrolled {:.4}  WF {:.4}", p.median_model(), p.median_wf());
        curves.push("unrolled", ratio, p.median_model());
        curves.push("wf", ratio, p.median_wf());
    }
    std::fs::write(out.join("curves.csv"), curves.to_csv())?;
    std::fs::write(out.join("curves.svg"), render_svg(&curves, "median test MSE", "M/N", "MSE")?)?;
    println!("wrote {}", out.display());
    Ok(())
}
