//! Effect of the encoded dimension N_y and the number of stages L at M/N = 0.5.

use uwf::experiments::{run_point, squares_model, SquaresSetup};
use uwf::forward::ScaleRule;
use uwf::train::TrainConfig;
use uwf::wf::WfConfig;

fn main() -> uwf::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(40);
    for (n_y, stages) in [(4, 5), (8, 5), (16, 5), (16, 1), (16, 10)] {
        let setup = SquaresSetup {
            h: 8,
            w: 8,
            n_train: 400,
            n_test: 50,
            ratio: 0.5,
            train_snr_db: None,
            test_snr_db: None,
            seed: 1,
            model: squares_model(64, n_y, stages),
            train: TrainConfig { lr: 2e-3, batch: 20, epochs, scale_rule: ScaleRule::NormOfD, ..TrainConfig::default() },
            wf: WfConfig::default(),
            tune_wf_step: false,
        };
        let p = run_point(&setup)?;
        println!("N_y {n_y:>3}, L {stages:>2}: median test MSE {:.4}", p.median_model());
    }
    Ok(())
}
