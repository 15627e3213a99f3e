//! Acceptance criteria 1–11. Each test writes one `criterion N ... PASS|FAIL`
//! line straight to stderr (bypassing libtest capture) before asserting.

mod common;

use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;

use common::{bits, full_cfg, random_container, rel, toy};
use uwf::data::Container;
use uwf::experiments::{model_errors, run_point, squares_model, wf_errors, PointResult, SquaresSetup};
use uwf::forward::{make_gaussian, spectral_init, ScaleRule};
use uwf::linalg::{c, dist, rank2_eig, CMat, CVec, C64};
use uwf::metrics::{mean, median};
use uwf::rng::Prng;
use uwf::theory::{check_theorem1, delta_sweep, wf_feasibility_boundary, TheoryParams};
use uwf::train::{
    normalizers, param_names, params, params_mut, prepare, train, train_backward_with_normalizers,
    train_loss_with_normalizers, TrainConfig,
};
use uwf::unrolled::{grad_k, loss_k, UnrolledModel};
use uwf::wf::{grad_j, loss_j, run_wf, StepSize, WfConfig};

fn report(id: u32, title: &str, pass: bool, elapsed: Duration, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let line = format!("criterion {id:>2} {verdict} [{title}] {detail} ({:.1} s)\n", elapsed.as_secs_f64());
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn cvec(rng: &mut Prng, n: usize) -> CVec {
    (0..n).map(|_| c(rng.normal(), rng.normal())).collect()
}

#[test]
fn criterion_01_gradients_match_finite_differences() {
    let t = Instant::now();
    let (f, model, batch) = toy();
    let h = 1e-6;
    let mut worst: Vec<(String, f64)> = Vec::new();

    // grad_J against the real-parametrized loss: ∂/∂Re = 2 Re ∇, ∂/∂Im = 2 Im ∇.
    let p = &batch[0];
    let mut rng = Prng::new(17);
    let rho = cvec(&mut rng, f.n());
    let g = grad_j(&f, &rho, &p.d).unwrap();
    let analytic: Vec<f64> = g.iter().flat_map(|z| [2.0 * z.re, 2.0 * z.im]).collect();
    let mut fd = Vec::new();
    for i in 0..f.n() {
        for dir in [c(1.0, 0.0), c(0.0, 1.0)] {
            let mut a = rho.clone();
            a[i] += dir * h;
            let mut b = rho.clone();
            b[i] -= dir * h;
            fd.push((loss_j(&f, &a, &p.d).unwrap() - loss_j(&f, &b, &p.d).unwrap()) / (2.0 * h));
        }
    }
    worst.push(("grad_J".into(), rel(&fd, &analytic)));

    // grad_K through the toy decoder.
    let y = model.encoder.forward(&p.x0).unwrap();
    let gk: Vec<f64> = grad_k(&model.decoder, &f, &y, &p.d).unwrap().iter().map(|v| 2.0 * v).collect();
    let fd: Vec<f64> = (0..y.len())
        .map(|i| {
            let mut a = y.clone();
            a[i] += h;
            let mut b = y.clone();
            b[i] -= h;
            (loss_k(&model.decoder, &f, &a, &p.d).unwrap() - loss_k(&model.decoder, &f, &b, &p.d).unwrap()) / (2.0 * h)
        })
        .collect();
    worst.push(("grad_K".into(), rel(&fd, &gk)));

    // Full training loss, every parameter tensor.
    let cfg = full_cfg();
    let norms = normalizers(&model, &batch).unwrap();
    let (_, grads) = train_backward_with_normalizers(&model, &f, &batch, &cfg, &norms).unwrap();
    let hp = 1e-5;
    for (k, name) in param_names(&model).iter().enumerate() {
        let len = params(&model)[k].len();
        let fd: Vec<f64> = (0..len)
            .map(|i| {
                let mut mp = model.clone();
                params_mut(&mut mp)[k][i] += hp;
                let mut mm = model.clone();
                params_mut(&mut mm)[k][i] -= hp;
                let lp = train_loss_with_normalizers(&mp, &f, &batch, &cfg, &norms).unwrap().total;
                let lm = train_loss_with_normalizers(&mm, &f, &batch, &cfg, &norms).unwrap().total;
                (lp - lm) / (2.0 * hp)
            })
            .collect();
        worst.push((name.clone(), rel(&fd, &grads.tensors[k])));
    }

    let elapsed = t.elapsed();
    let (wname, wval) = worst.iter().cloned().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let pass = worst.iter().all(|(_, e)| *e <= 1e-4) && elapsed < Duration::from_secs(10);
    report(
        1,
        "gradient correctness",
        pass,
        elapsed,
        &format!("{} tensors, worst {wname} rel err {wval:.2e} (tol 1e-4, < 10 s)", worst.len()),
    );
    assert!(pass, "{worst:?}");
}

#[test]
fn criterion_02_rank2_eig_matches_dense_solver() {
    let t = Instant::now();
    let n = 16;
    let (mut worst_val, mut worst_rec) = (0.0f64, 0.0f64);
    for k in 0..200 {
        let mut rng = Prng::derive(2, "rank2-oracle", k);
        let p = cvec(&mut rng, n);
        let q = cvec(&mut rng, n);
        let dense = DMatrix::<C64>::from_fn(n, n, |i, j| p[i] * p[j].conj() - q[i] * q[j].conj());
        let eig = dense.clone().symmetric_eigen();
        let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let bottom = vals.iter().copied().fold(f64::INFINITY, f64::min);

        let r = rank2_eig(&p, &q).unwrap();
        worst_val = worst_val.max((r.pairs[0].value - top).abs()).max((r.pairs[1].value - bottom).abs());

        let mut rec = CMat::zeros(n, n);
        for pair in &r.pairs {
            rec = rec.add(&CMat::outer(&pair.vector, &pair.vector).scaled(pair.value));
        }
        let target = CMat::from_fn(n, n, |i, j| dense[(i, j)]);
        worst_rec = worst_rec.max(rec.sub(&target).frobenius());
    }
    let elapsed = t.elapsed();
    let pass = worst_val <= 1e-10 && worst_rec <= 1e-9 && elapsed < Duration::from_secs(5);
    report(
        2,
        "rank-2 eigen oracle",
        pass,
        elapsed,
        &format!("200 pairs, max eigenvalue err {worst_val:.2e} (tol 1e-10), max lifted Frobenius err {worst_rec:.2e} (tol 1e-9)"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_wf_planted_recovery() {
    let t = Instant::now();
    let n = 16;
    let cfg = WfConfig { max_iter: 2000, tol: 0.0, ..WfConfig::default() };
    let errs: Vec<f64> = (0..100u64)
        .map(|seed| {
            let f = make_gaussian(8 * n, n, 1000 + seed).unwrap();
            let mut rng = Prng::derive(seed, "planted-signal", 0);
            let rho = cvec(&mut rng, n);
            let d = f.intensity(&rho).unwrap();
            let init = spectral_init(&f, &d, ScaleRule::NormOfD).unwrap();
            let tr = run_wf(&f, &d, &init.estimate, &cfg, None).unwrap();
            dist(&tr.final_estimate, &rho).unwrap() / uwf::linalg::norm(&rho)
        })
        .collect();
    let elapsed = t.elapsed();
    let hits = errs.iter().filter(|e| **e <= 1e-5).count();
    let pass = hits >= 95 && elapsed < Duration::from_secs(120);
    report(
        3,
        "classic WF planted recovery",
        pass,
        elapsed,
        &format!("{hits}/100 seeds with dist/‖ρ*‖ ≤ 1e-5 (need ≥ 95), median {:.2e}", median(&errs)),
    );
    assert!(pass);
}

#[test]
fn criterion_04_concentration_trend() {
    let t = Instant::now();
    let ratios = [2.0, 4.0, 8.0, 16.0, 64.0];
    let sweep = delta_sweep(8, &ratios, 50, 4).unwrap();
    let elapsed = t.elapsed();
    let decreasing = sweep.windows(2).all(|w| w[1].1 < w[0].1);
    let pass = decreasing && elapsed < Duration::from_secs(60);
    let shown: Vec<String> = sweep.iter().map(|(r, d)| format!("{r}:{d:.3}")).collect();
    report(4, "concentration trend", pass, elapsed, &format!("median δ̂ by M/N {}", shown.join(" ")));
    assert!(pass, "{sweep:?}");
}

#[test]
fn criterion_05_dist_matches_phase_grid() {
    let t = Instant::now();
    let grid = 100_000;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..100 {
        let mut rng = Prng::derive(5, "dist-oracle", k);
        let n = 1 + (k as usize % 8);
        let x = cvec(&mut rng, n);
        let y = cvec(&mut rng, n);
        let closed = dist(&x, &y).unwrap();
        let brute = (0..grid)
            .map(|j| {
                let rot = C64::from_polar(1.0, std::f64::consts::TAU * j as f64 / grid as f64);
                x.iter().zip(&y).map(|(a, b)| (a - b * rot).norm_sqr()).sum::<f64>().sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(closed - brute);
    }
    let elapsed = t.elapsed();
    let pass = worst <= 1e-8 && elapsed < Duration::from_secs(5);
    report(
        5,
        "dist oracle",
        pass,
        elapsed,
        &format!("100 pairs, max(closed − grid min) = {worst:.2e} (tol 1e-8)"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_ledger_reduction_and_wf_boundary() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for delta in [0.0, 0.05, 0.1, 0.184, 0.25, 0.3] {
        for eps in [0.0, 0.01, 0.05, 0.1, 0.2, 0.3] {
            let r = check_theorem1(&TheoryParams::wf_regime(delta, eps));
            // Closed forms with every μ, ω equal to 1 and ε_y = ε.
            let er = (1.0 + eps) * eps;
            let c_ref = (1.0 + eps) * (2.0 + eps) * (2.0 + delta);
            let d1_ref = 2f64.sqrt() * delta * (2.0 + er) * (2.0 + eps) / ((1.0 - er) * (2.0 - er));
            let h_ref = (1.0 - d1_ref) * (1.0 - er) * (2.0 - er);
            for (got, want) in [(r.c_val, c_ref), (r.delta1, d1_ref), (r.h_val, h_ref), (r.eps_rho, er)] {
                worst = worst.max((got - want).abs() / want.abs().max(1.0));
            }
        }
    }

    // Sweep ε at δ = 0.184 for the first point where δ₁ reaches 1, then
    // confirm the δ-boundary there lies at or below 0.184.
    let threshold = 0.184;
    let eps_grid: Vec<f64> = (0..=5000).map(|k| k as f64 * 1e-4).collect();
    let delta_grid: Vec<f64> = (0..=100_000).map(|k| k as f64 * 1e-5).collect();
    let crossing = eps_grid
        .iter()
        .copied()
        .find(|&e| check_theorem1(&TheoryParams::wf_regime(threshold, e)).delta1 >= 1.0);
    let at_zero = wf_feasibility_boundary(0.0, &delta_grid);
    let boundary = crossing.and_then(|e| wf_feasibility_boundary(e, &delta_grid));
    let elapsed = t.elapsed();
    let interior = matches!(crossing, Some(e) if e > 0.0 && e < *eps_grid.last().unwrap());
    let pass = worst <= 1e-12
        && interior
        && matches!(at_zero, Some(b) if b > threshold)
        && matches!(boundary, Some(b) if b <= threshold && b > threshold - 1e-3)
        && elapsed < Duration::from_secs(5);
    report(
        6,
        "ledger reduction and WF boundary",
        pass,
        elapsed,
        &format!(
            "max closed-form err {worst:.1e} (tol 1e-12); δ₁(0.184, ε) crosses 1 at ε = {crossing:?}, \
             boundary there δ* = {boundary:?} ≤ 0.184, δ*(ε = 0) = {at_zero:?}"
        ),
    );
    assert!(pass);
}

/// Trained points for M/N ∈ {0.25, 0.5, 1}, shared by criteria 7 and 8.
fn sweep_points() -> &'static (Vec<PointResult>, Duration) {
    static POINTS: OnceLock<(Vec<PointResult>, Duration)> = OnceLock::new();
    POINTS.get_or_init(|| {
        let t = Instant::now();
        let points = [0.25, 0.5, 1.0]
            .into_iter()
            .map(|ratio| {
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
                    train: TrainConfig {
                        lr: 2e-3,
                        batch: 20,
                        epochs: 150,
                        scale_rule: ScaleRule::NormOfD,
                        ..TrainConfig::default()
                    },
                    wf: WfConfig { max_iter: 1000, ..WfConfig::default() },
                    tune_wf_step: true,
                };
                run_point(&setup).unwrap()
            })
            .collect();
        (points, t.elapsed())
    })
}

#[test]
fn criterion_07_trained_model_beats_wf() {
    let (points, train_time) = sweep_points();
    let mut pass = *train_time < Duration::from_secs(30 * 60);
    let mut parts = Vec::new();
    for p in points {
        let (dl, wf) = (p.median_model(), p.median_wf());
        pass &= dl < wf;
        let step = match p.wf.step {
            StepSize::Constant(s) => s,
            StepSize::Schedule(_) => f64::NAN,
        };
        parts.push(format!("M/N {}: model {dl:.3} vs WF {wf:.3} (step {step})", p.ratio));
    }
    report(7, "trained model beats WF", pass, *train_time, &format!("median test MSE, 150 epochs, L = 5: {}", parts.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_08_encoded_init_beats_spectral_init() {
    let (points, _) = sweep_points();
    let t = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for p in points {
        let m = p.init_metrics(ScaleRule::NormOfD).unwrap();
        pass &= m.d3 < m.d1;
        parts.push(format!("M/N {}: d1 {:.3} d2 {:.3} d3 {:.3}", p.ratio, m.d1, m.d2, m.d3));
    }
    report(8, "encoded init direction d3 < d1", pass, t.elapsed(), &parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_09_regularizers_reach_targets() {
    let t = Instant::now();
    let setup = SquaresSetup {
        h: 4,
        w: 4,
        n_train: 100,
        n_test: 20,
        ratio: 1.0,
        train_snr_db: None,
        test_snr_db: None,
        seed: 3,
        model: squares_model(16, 4, 5),
        train: TrainConfig::default(),
        wf: WfConfig::default(),
        tune_wf_step: false,
    };
    let f = setup.map().unwrap();
    let (tr, _) = setup.datasets(&f).unwrap();
    let prepared = prepare(&f, &tr, ScaleRule::NormOfD).unwrap();
    let cfg = TrainConfig {
        eta1: 1e5,
        eta3: 1e3,
        eta4: 1e3,
        target_mu_g: Some(vec![1.0]),
        target_mu_h: Some(vec![1.0]),
        lr: 3e-3,
        lr_decay: 0.985,
        epochs: 300,
        batch: 4,
        scale_rule: ScaleRule::NormOfD,
        ..TrainConfig::default()
    };
    let model = UnrolledModel::init(setup.n(), &setup.model, 3).unwrap();
    let m = train(model, &f, &prepared, None, &cfg).unwrap().model;

    let norms: Vec<f64> = m.encoder.layer_norms().into_iter().chain(m.decoder.layer_norms()).collect();
    let worst_norm = norms.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let l2 = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let g0 = l2(&m.encoder.forward(&vec![0.0; 2 * setup.n()]).unwrap());
    let h0 = l2(&m.decoder.forward(&vec![0.0; m.n_y()]).unwrap());
    let count = prepared.len() as f64;
    let g_mean = prepared.iter().map(|p| l2(&m.encoder.forward(&p.x0).unwrap())).sum::<f64>() / count;
    let h_mean = prepared
        .iter()
        .map(|p| l2(&m.decoder.forward(&m.encoder.forward(&p.x0).unwrap()).unwrap()))
        .sum::<f64>()
        / count;
    let elapsed = t.elapsed();
    let pass = worst_norm <= 0.05
        && g0 < 1e-3 * g_mean
        && h0 < 1e-3 * h_mean
        && elapsed < Duration::from_secs(600);
    report(
        9,
        "regularizer efficacy",
        pass,
        elapsed,
        &format!(
            "layer norms {norms:.4?} (within 5% of 1), ‖G(0)‖/mean = {:.2e}, ‖H(0)‖/mean = {:.2e} (tol 1e-3)",
            g0 / g_mean,
            h0 / h_mean
        ),
    );
    assert!(pass);
}

fn cli(args: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_uwf")).args(args).output().expect("spawn uwf");
    assert!(o.status.success(), "uwf {args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn criterion_10_determinism_and_persistence() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(
        &cfg,
        r#"{
  "map": {"kind": "gaussian", "M": 64, "N": 16, "seed": 4},
  "model": {"N_y": 4, "L": 3, "encoder_dims": [12], "decoder_dims": [8]},
  "train": {"lr": 2e-3, "epochs": 4, "batch": 8, "seed": 9, "scale_rule": "norm_of_d"},
  "data": {"source": "squares", "count": 40, "H": 4, "W": 4, "snr_db": 25, "seed": 2}
}"#,
    )
    .unwrap();
    let s = |p: &Path| p.to_str().unwrap().to_owned();
    let run = |name: &str| {
        let out = dir.path().join(name);
        cli(&["gen-data", "--config", &s(&cfg), "--out", &s(&out)]);
        let data = out.join(uwf::cli::DATASET_FILE);
        cli(&["train", "--config", &s(&cfg), "--data", &s(&data), "--out", &s(&out)]);
        (
            fs::read(&data).unwrap(),
            fs::read(out.join(uwf::cli::HISTORY_FILE)).unwrap(),
            fs::read(out.join(uwf::cli::MODEL_FILE)).unwrap(),
        )
    };
    let (a, b) = (run("a"), run("b"));
    let same_data = a.0 == b.0;
    let same_history = a.1 == b.1;
    let same_model = a.2 == b.2;

    let mut fuzz_ok = 0;
    for seed in 0..1000u64 {
        let c = random_container(seed);
        let bytes = c.to_bytes();
        if let Ok(back) = Container::from_bytes(&bytes) {
            if bits(&back) == bits(&c) && back.meta == c.meta && back.to_bytes() == bytes {
                fuzz_ok += 1;
            }
        }
    }
    let elapsed = t.elapsed();
    let pass = same_data && same_history && same_model && fuzz_ok == 1000;
    report(
        10,
        "determinism and persistence",
        pass,
        elapsed,
        &format!(
            "dataset identical {same_data}, history.csv identical {same_history}, checkpoint identical {same_model}, \
             fuzz round trips {fuzz_ok}/1000 bit-exact"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_snr_trend() {
    // Each SNR trains its own model on intensities at that level and tunes
    // the WF step on the same training set. Test MSE is the mean over the 50
    // test scenes under 8 independent noise draws.
    let t = Instant::now();
    let rule = ScaleRule::NormOfD;
    let draws = 8;
    let mut model_mse = Vec::new();
    let mut wf_mse = Vec::new();
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
            train: TrainConfig { lr: 2e-3, batch: 20, epochs: 150, scale_rule: rule, ..TrainConfig::default() },
            wf: WfConfig { max_iter: 1000, ..WfConfig::default() },
            tune_wf_step: true,
        };
        let p = run_point(&setup).unwrap();
        let test = setup.test_draws(&p.map, snr, draws).unwrap();
        model_mse.push(mean(&model_errors(&p.model, &p.map, &test, rule).unwrap()));
        wf_mse.push(mean(&wf_errors(&p.map, &test, &p.wf, rule).unwrap()));
    }
    let elapsed = t.elapsed();
    let non_increasing = |v: &[f64]| v.windows(2).all(|w| w[1] <= w[0]);
    let pass = non_increasing(&model_mse) && non_increasing(&wf_mse) && elapsed < Duration::from_secs(20 * 60);
    report(
        11,
        "SNR trend at M = N",
        pass,
        elapsed,
        &format!("mean test MSE at 10/20/30 dB ({draws} noise draws): model {model_mse:.4?}, WF {wf_mse:.4?}"),
    );
    assert!(pass);
}
