//! Test MSE against measurement SNR at M = N. Each SNR trains its own model
//! on noisy intensities at that level.

use uwf::experiments::{run_point, squares_model, SquaresSetup};
use uwf::forward::ScaleRule;
use uwf::train::TrainConfig;
use uwf::wf::WfConfig;

fn main() -> uwf::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(60);
    for snr in [10.0, 20.0, 30.0] {
        let setup = SquaresSetup {
            h: 8,
            w: 8,
            n_train: 400,
            n_test: 50,
            ratio: 1.0,
            train_snr_db: Some(snr),
            test_snr_db: Some(snr),
            seed: 1,
            model: squares_model(64, 16, 5),
            train: TrainConfig { lr: 2e-3, batch: 20, epochs, scale_rule: ScaleRule::NormOfD, ..TrainConfig::default() },
            wf: WfConfig { max_iter: 1000, ..WfConfig::default() },
            tune_wf_step: true,
        };
        let p = run_point(&setup)?;
        println!("{snr:>4} dB: unrolled {:.4}  WF {:.4}", p.median_model(), p.median_wf());
    }
    Ok(())
}
