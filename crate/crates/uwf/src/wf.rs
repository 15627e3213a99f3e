//! Classic Wirtinger Flow in the image domain.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::forward::ForwardMap;
use crate::linalg::{self, c, CVec, C64};

/// 𝓙(ρ) = (1/2M) Σ_m (|a_mᴴρ|² − d_m)².
pub fn loss_j(f: &ForwardMap, rho: &[C64], d: &[f64]) -> Result<f64> {
    check_len("loss_J measurements", d.len(), f.m())?;
    let inten = f.intensity(rho)?;
    let s: f64 = inten.iter().zip(d).map(|(i, dm)| (i - dm).powi(2)).sum();
    Ok(s / (2.0 * f.m() as f64))
}

/// Wirtinger gradient (1/M) 𝓕ᴴ(e) ρ with e_m = |a_mᴴρ|² − d_m.
///
/// Computed as (1/M) Fᴴ (e ⊙ Fρ), which equals the lifted form without
/// materializing 𝓕ᴴ(e).
pub fn grad_j(f: &ForwardMap, rho: &[C64], d: &[f64]) -> Result<CVec> {
    check_len("grad_J measurements", d.len(), f.m())?;
    let u = f.apply(rho)?;
    let w: CVec = u.iter().zip(d).map(|(z, dm)| z * (z.norm_sqr() - dm)).collect();
    let g = f.adjoint_apply(&w)?;
    Ok(linalg::scale(&g, c(1.0 / f.m() as f64, 0.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSize {
    Constant(f64),
    Schedule(Vec<f64>),
}

impl StepSize {
    /// Step for iteration `k` (0-based); schedules repeat their last entry.
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSize::Constant(g) => *g,
            StepSize::Schedule(v) => v[k.min(v.len().saturating_sub(1))],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WfConfig {
    pub max_iter: usize,
    pub step: StepSize,
    pub tol: f64,
    pub record_trace: bool,
    /// Rescale each iterate so its largest pixel modulus is 1.
    pub max_pixel_norm: bool,
}

impl Default for WfConfig {
    fn default() -> Self {
        WfConfig {
            max_iter: 1000,
            step: StepSize::Constant(0.2),
            tol: 1e-12,
            record_trace: false,
            max_pixel_norm: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WfStatus {
    Converged,
    MaxIter,
    /// ‖init‖ = 0; nothing was run.
    Degenerate,
    Diverged,
    NonFinite,
}

#[derive(Clone, Debug)]
pub struct WfTrace {
    pub iterates: Option<Vec<CVec>>,
    /// 𝓙 at the initial point and after every update.
    pub loss_history: Vec<f64>,
    /// dist(ρ⁽ˡ⁾, truth) aligned with `loss_history`, when a truth was supplied.
    pub dist_history: Option<Vec<f64>>,
    pub final_estimate: CVec,
    pub status: WfStatus,
    pub iterations: usize,
}

impl WfTrace {
    /// CSV with columns iter, loss, dist_to_truth (last column empty without truth).
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,loss,dist_to_truth\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            let dt = self
                .dist_history
                .as_ref()
                .map(|v| format!("{:e}", v[i]))
                .unwrap_or_default();
            s.push_str(&format!("{i},{l:e},{dt}\n"));
        }
        s
    }
}

fn max_pixel_rescale(rho: &mut [C64]) {
    let m = rho.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if m > 0.0 {
        rho.iter_mut().for_each(|z| *z /= m);
    }
}

const GUARD_WINDOW: usize = 50;
const GUARD_FACTOR: f64 = 10.0;

/// ρ⁽ˡ⁾ = ρ⁽ˡ⁻¹⁾ − (γ_l/‖ρ⁽⁰⁾‖²) ∇𝓙(ρ⁽ˡ⁻¹⁾), with ‖ρ⁽⁰⁾‖² frozen.
pub fn run_wf(
    f: &ForwardMap,
    d: &[f64],
    init: &[C64],
    cfg: &WfConfig,
    truth: Option<&[C64]>,
) -> Result<WfTrace> {
    check_len("run_wf init", init.len(), f.n())?;
    check_len("run_wf measurements", d.len(), f.m())?;
    if let Some(t) = truth {
        check_len("run_wf truth", t.len(), f.n())?;
    }
    let mut rho = init.to_vec();
    if cfg.max_pixel_norm {
        max_pixel_rescale(&mut rho);
    }
    let norm0_sq = linalg::norm_sq(&rho);
    let dist_of = |r: &[C64]| truth.map(|t| linalg::dist(r, t).unwrap_or(f64::NAN));
    let mut trace = WfTrace {
        iterates: cfg.record_trace.then(|| vec![rho.clone()]),
        loss_history: vec![loss_j(f, &rho, d)?],
        dist_history: dist_of(&rho).map(|v| vec![v]),
        final_estimate: rho.clone(),
        status: WfStatus::MaxIter,
        iterations: 0,
    };
    if norm0_sq == 0.0 {
        trace.status = WfStatus::Degenerate;
        return Ok(trace);
    }
    let norm0_cubed = norm0_sq.powf(1.5);
    for k in 0..cfg.max_iter {
        let g = grad_j(f, &rho, d)?;
        if !linalg::all_finite(&g) {
            trace.status = WfStatus::NonFinite;
            break;
        }
        if linalg::norm(&g) / norm0_cubed <= cfg.tol {
            trace.status = WfStatus::Converged;
            break;
        }
        let mu = cfg.step.at(k) / norm0_sq;
        let prev = rho.clone();
        for (r, gi) in rho.iter_mut().zip(&g) {
            *r -= gi * mu;
        }
        if cfg.max_pixel_norm {
            max_pixel_rescale(&mut rho);
        }
        let loss = loss_j(f, &rho, d)?;
        if !loss.is_finite() || !linalg::all_finite(&rho) {
            // Report the last finite iterate rather than an overflowed one.
            rho = prev;
            trace.status = WfStatus::NonFinite;
            break;
        }
        trace.iterations = k + 1;
        trace.loss_history.push(loss);
        if let (Some(h), Some(v)) = (trace.dist_history.as_mut(), dist_of(&rho)) {
            h.push(v);
        }
        if let Some(it) = trace.iterates.as_mut() {
            it.push(rho.clone());
        }
        let n = trace.loss_history.len();
        if n > GUARD_WINDOW && loss > GUARD_FACTOR * trace.loss_history[n - 1 - GUARD_WINDOW] {
            trace.status = WfStatus::Diverged;
            break;
        }
    }
    trace.final_estimate = rho;
    Ok(trace)
}
