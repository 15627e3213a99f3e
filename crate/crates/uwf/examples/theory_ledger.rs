//! Sufficient-condition ledger: the WF regime, the δ boundary as ε varies,
//! and empirical constants of an (untrained) unrolled model.

use uwf::experiments::{squares_model, SquaresSetup};
use uwf::forward::ScaleRule;
use uwf::theory::{check_theorem1, empirical_params, wf_feasibility_boundary, TheoryParams};
use uwf::train::TrainConfig;
use uwf::unrolled::UnrolledModel;
use uwf::wf::WfConfig;

fn main() -> uwf::Result<()> {
    let r = check_theorem1(&TheoryParams::wf_regime(0.1, 0.05));
    println!("WF regime δ = 0.1, ε = 0.05: c = {:.4}, δ₁ = {:.4}, h = {:.4}", r.c_val, r.delta1, r.h_val);
    for check in &r.checks {
        println!("  {:<24} {:?}  {:.4} vs {:.4}", check.name, check.status, check.lhs, check.rhs);
    }

    let grid: Vec<f64> = (0..=10_000).map(|k| k as f64 * 1e-4).collect();
    println!("\nsmallest δ with δ₁ ≥ 1:");
    for eps in [0.0, 0.05, 0.1, 0.15, 0.2, 0.25] {
        println!("  ε = {eps:.2}: δ* = {:?}", wf_feasibility_boundary(eps, &grid));
    }

    let setup = SquaresSetup {
        h: 4,
        w: 4,
        n_train: 16,
        n_test: 0,
        ratio: 4.0,
        train_snr_db: None,
        test_snr_db: None,
        seed: 2,
        model: squares_model(16, 4, 3),
        train: TrainConfig::default(),
        wf: WfConfig::default(),
        tune_wf_step: false,
    };
    let f = setup.map()?;
    let (train, _) = setup.datasets(&f)?;
    let model = UnrolledModel::init(16, &setup.model, 2)?;
    let (params, prov) = empirical_params(&model, &f, &train, 0.1, ScaleRule::NormOfD, 2)?;
    let report = check_theorem1(&params);
    println!("\nempirical: δ = {:.3}, ω = {:.3}, μ_H = {:.3}, μ̃_H = {:.3}, ε = {:.3}", params.delta, params.omega, params.mu_h, params.mu_h_tilde, params.eps);
    println!("δ₁ = {:.3} from {} samples, {} admissible ω pairs", report.delta1, prov.samples, prov.omega_admissible);
    Ok(())
}
