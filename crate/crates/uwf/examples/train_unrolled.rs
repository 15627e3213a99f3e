//! Train the unrolled network on 8×8 square scenes and compare it with WF
//! on held-out scenes.
//!
//! `cargo run --release --example train_unrolled -- [epochs] [M/N]`

use uwf::experiments::{run_point, squares_model, SquaresSetup};
use uwf::forward::ScaleRule;
use uwf::train::TrainConfig;
use uwf::wf::WfConfig;

fn main() -> uwf::Result<()> {
    let args: Vec<f64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let epochs = args.first().map_or(60, |v| *v as usize);
    let ratio = args.get(1).copied().unwrap_or(0.5);

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
    let point = run_point(&setup)?;
    for row in point.history.iter().step_by((epochs / 10).max(1)) {
        println!("epoch {:>4}  train {:.4}  test {:.4}", row.epoch, row.train_mse, row.val_mse);
    }
    println!("step sizes {:?}", point.model.gammas);
    println!("median test MSE: unrolled {:.4}, WF {:.4} ({:?})", point.median_model(), point.median_wf(), point.wf.step);
    let init = point.init_metrics(ScaleRule::NormOfD)?;
    println!("d1 {:.3}  d2 {:.3}  d3 {:.3}", init.d1, init.d2, init.d3);
    Ok(())
}
