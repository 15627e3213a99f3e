//! Reconstruction-quality runs on square scenes: trained unrolled model vs
//! classic WF, with the sweeps over M/N, N_y and SNR built on top.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_squares, synthesize, Sample};
use crate::error::{Error, Result};
use crate::forward::{make_gaussian, spectral_init, ForwardMap, ScaleRule};
use crate::metrics::{mean, median, rel_dist_sq, rel_err_sq};
use crate::rng::Prng;
use crate::theory::{init_metrics, InitMetrics};
use crate::train::{prepare, train, HistoryRow, TrainConfig};
use crate::unrolled::{reconstruct, ModelSpec, UnrolledModel};
use crate::wf::{run_wf, StepSize, WfConfig};

/// Per-sample WF error dist²(ρ̂, ρ*)/‖ρ*‖² from spectral init.
pub fn wf_errors(f: &ForwardMap, samples: &[Sample], cfg: &WfConfig, rule: ScaleRule) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let init = spectral_init(f, &s.d, rule)?;
            let tr = run_wf(f, &s.d, &init.estimate, cfg, None)?;
            rel_dist_sq(&tr.final_estimate, &s.rho_star).ok_or_else(|| Error::Numeric("zero-norm ground truth".into()))
        })
        .collect()
}

/// Constant WF step from `grid` with the lowest median error on `samples`
/// (ties keep the earlier entry).
pub fn select_wf_step(
    f: &ForwardMap,
    samples: &[Sample],
    base: &WfConfig,
    grid: &[f64],
    rule: ScaleRule,
) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    for &g in grid {
        let cfg = WfConfig { step: StepSize::Constant(g), ..base.clone() };
        let e = median(&wf_errors(f, samples, &cfg, rule)?);
        if best.is_none_or(|(_, b)| e < b) {
            best = Some((g, e));
        }
    }
    best.map(|b| b.0).ok_or_else(|| Error::Config("empty WF step grid".into()))
}

const WF_TUNE_SAMPLES: usize = 32;

pub const WF_STEP_GRID: [f64; 6] = [0.2, 0.1, 0.05, 0.02, 0.01, 0.005];

/// Per-sample unrolled-model error ‖ρ̂ − ρ*‖²/‖ρ*‖².
pub fn model_errors(model: &UnrolledModel, f: &ForwardMap, samples: &[Sample], rule: ScaleRule) -> Result<Vec<f64>> {
    samples
        .par_iter()
        .map(|s| {
            let r = reconstruct(model, f, &s.d, rule)?;
            rel_err_sq(&r, &s.rho_star).ok_or_else(|| Error::Numeric("zero-norm ground truth".into()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SquaresSetup {
    pub h: usize,
    pub w: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// M/N.
    pub ratio: f64,
    /// Noise level of the training set.
    pub train_snr_db: Option<f64>,
    /// Noise level of the test set.
    pub test_snr_db: Option<f64>,
    pub seed: u64,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub wf: WfConfig,
    /// Pick the WF step from [`WF_STEP_GRID`] on training samples instead of
    /// using `wf.step` as given.
    #[serde(default)]
    pub tune_wf_step: bool,
}

impl SquaresSetup {
    pub fn n(&self) -> usize {
        self.h * self.w
    }

    pub fn m(&self) -> usize {
        ((self.ratio * self.n() as f64).round() as usize).max(1)
    }

    pub fn map(&self) -> Result<ForwardMap> {
        make_gaussian(self.m(), self.n(), self.seed)
    }

    /// Training and test sets. Images come from disjoint seeded streams;
    /// noise for the test set depends only on `seed`, so test sets at
    /// different SNRs share one noise direction.
    pub fn datasets(&self, f: &ForwardMap) -> Result<(Vec<Sample>, Vec<Sample>)> {
        let train_imgs = gen_squares(self.n_train, self.h, self.w, self.seed.wrapping_mul(2).wrapping_add(1))?;
        let test_imgs = gen_squares(self.n_test, self.h, self.w, self.seed.wrapping_mul(2).wrapping_add(2))?;
        Ok((
            synthesize(f, &train_imgs, self.train_snr_db, self.seed ^ 0x7261)?,
            synthesize(f, &test_imgs, self.test_snr_db, self.seed ^ 0x7465)?,
        ))
    }

    pub fn test_set(&self, f: &ForwardMap, snr_db: Option<f64>) -> Result<Vec<Sample>> {
        let test_imgs = gen_squares(self.n_test, self.h, self.w, self.seed.wrapping_mul(2).wrapping_add(2))?;
        synthesize(f, &test_imgs, snr_db, self.seed ^ 0x7465)
    }

    /// The test scenes under `draws` independent noise realizations at
    /// `snr_db`, concatenated draw by draw. Averaging over draws estimates
    /// the expected test error at that noise level.
    pub fn test_draws(&self, f: &ForwardMap, snr_db: f64, draws: usize) -> Result<Vec<Sample>> {
        let test_imgs = gen_squares(self.n_test, self.h, self.w, self.seed.wrapping_mul(2).wrapping_add(2))?;
        let mut out = Vec::with_capacity(draws * test_imgs.len());
        for r in 0..draws {
            let seed = Prng::derive(self.seed, "test-noise", r as u64).next_u64();
            out.extend(synthesize(f, &test_imgs, Some(snr_db), seed)?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct PointResult {
    pub ratio: f64,
    pub model: UnrolledModel,
    pub map: ForwardMap,
    pub test: Vec<Sample>,
    pub history: Vec<HistoryRow>,
    pub model_err: Vec<f64>,
    pub wf_err: Vec<f64>,
    /// WF settings used for `wf_err`.
    pub wf: WfConfig,
}

impl PointResult {
    pub fn median_model(&self) -> f64 {
        median(&self.model_err)
    }

    pub fn median_wf(&self) -> f64 {
        median(&self.wf_err)
    }

    pub fn init_metrics(&self, rule: ScaleRule) -> Result<InitMetrics> {
        init_metrics(&self.model, &self.map, &self.test, rule)
    }
}

/// Train on one setup and evaluate both methods on its test set. The test
/// set is also the validation set of the history.
pub fn run_point(setup: &SquaresSetup) -> Result<PointResult> {
    let f = setup.map()?;
    let (tr, te) = setup.datasets(&f)?;
    let rule = setup.train.scale_rule;
    let ptr = prepare(&f, &tr, rule)?;
    let pte = prepare(&f, &te, rule)?;
    let model = UnrolledModel::init(setup.n(), &setup.model, setup.seed)?;
    let state = train(model, &f, &ptr, Some(&pte), &setup.train)?;
    let model_err = model_errors(&state.model, &f, &te, rule)?;
    let wf = if setup.tune_wf_step {
        let k = tr.len().min(WF_TUNE_SAMPLES);
        let step = select_wf_step(&f, &tr[..k], &setup.wf, &WF_STEP_GRID, rule)?;
        WfConfig { step: StepSize::Constant(step), ..setup.wf.clone() }
    } else {
        setup.wf.clone()
    };
    let wf_err = wf_errors(&f, &te, &wf, rule)?;
    Ok(PointResult {
        ratio: setup.ratio,
        model: state.model,
        map: f,
        test: te,
        history: state.history,
        model_err,
        wf_err,
        wf,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub index: usize,
    pub model_mse: f64,
    pub wf_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_sample: Vec<EvalRow>,
    pub model_mean: f64,
    pub model_median: f64,
    pub wf_mean: Option<f64>,
    pub wf_median: Option<f64>,
    pub init: InitMetrics,
}

/// Per-sample and aggregate errors of `model`, optionally against WF.
pub fn evaluate(
    model: &UnrolledModel,
    f: &ForwardMap,
    samples: &[Sample],
    wf: Option<&WfConfig>,
    rule: ScaleRule,
) -> Result<EvalReport> {
    let dl = model_errors(model, f, samples, rule)?;
    let wf_err = wf.map(|cfg| wf_errors(f, samples, cfg, rule)).transpose()?;
    let per_sample = dl
        .iter()
        .enumerate()
        .map(|(i, &m)| EvalRow { index: i, model_mse: m, wf_mse: wf_err.as_ref().map(|w| w[i]) })
        .collect();
    Ok(EvalReport {
        per_sample,
        model_mean: mean(&dl),
        model_median: median(&dl),
        wf_mean: wf_err.as_ref().map(|w| mean(w)),
        wf_median: wf_err.as_ref().map(|w| median(w)),
        init: init_metrics(model, f, samples, rule)?,
    })
}

/// Architecture used for 8×8 square scenes in the sweeps.
pub fn squares_model(n: usize, n_y: usize, stages: usize) -> ModelSpec {
    ModelSpec {
        n_y,
        l: stages,
        encoder_dims: vec![4 * n_y.max(n / 4)],
        decoder_dims: vec![2 * n_y.max(n / 4)],
        activations: Default::default(),
        gamma_init: 1e-3,
    }
}
