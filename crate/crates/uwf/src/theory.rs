//! Numerical estimates of the recovery-theory constants and the ledger of
//! sufficient conditions built from them.
//!
//! δ, ω, the Lipschitz constants and the frame bounds are empirical maxima
//! (or minima) over finite sample sets, hence lower (or upper) bounds on the
//! true suprema (infima).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{check_len, Error, Result};
use crate::forward::{spectral_init, ForwardMap, ScaleRule};
use crate::linalg::{self, c, to_complex, CMat, CVec, C64};
use crate::metrics::rel_err_sq;
use crate::nets::{lipschitz_empirical, Net};
use crate::rng::Prng;
use crate::unrolled::{rnn_forward, EncodedTrace, UnrolledModel};

const EIG_TOL: f64 = 1e-12;

/// Δ(X) = (1/M) 𝓕ᴴ𝓕(X) − X − tr(X) I.
pub fn delta_op(f: &ForwardMap, x: &CMat) -> Result<CMat> {
    let lifted = f.spectral_matrix(&f.lifted_apply(x)?)?;
    Ok(lifted.sub(x).sub(&CMat::identity(f.n()).scaled(x.trace().re)))
}

/// Δ(ρρᴴ) without forming 𝓕 on a matrix.
pub fn delta_rank1(f: &ForwardMap, rho: &[C64]) -> Result<CMat> {
    let y = f.spectral_matrix(&f.intensity(rho)?)?;
    let n2 = linalg::norm_sq(rho);
    Ok(y.sub(&CMat::outer(rho, rho)).sub(&CMat::identity(f.n()).scaled(n2)))
}

fn herm_norm(x: &CMat) -> f64 {
    linalg::hermitian_norm(x, EIG_TOL, 0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaEstimate {
    /// Max over samples; an empirical lower bound on δ.
    pub delta: f64,
    pub per_sample: Vec<f64>,
    /// Zero-norm samples that were skipped.
    pub skipped: usize,
}

/// max over samples of ‖Δ(ρρᴴ)‖/‖ρ‖².
pub fn estimate_delta(f: &ForwardMap, samples: &[CVec]) -> Result<DeltaEstimate> {
    let per: Vec<Option<f64>> = samples
        .par_iter()
        .map(|rho| {
            check_len("delta sample", rho.len(), f.n())?;
            let n2 = linalg::norm_sq(rho);
            if n2 == 0.0 {
                return Ok(None);
            }
            Ok(Some(herm_norm(&delta_rank1(f, rho)?) / n2))
        })
        .collect::<Result<_>>()?;
    let skipped = per.iter().filter(|v| v.is_none()).count();
    let per_sample: Vec<f64> = per.into_iter().flatten().collect();
    if per_sample.is_empty() {
        return Err(Error::Config("no nonzero samples for the concentration estimate".into()));
    }
    let delta = per_sample.iter().copied().fold(0.0, f64::max);
    Ok(DeltaEstimate { delta, per_sample, skipped })
}

/// Median empirical δ over `samples` (map, signal) pairs for each M/N
/// ratio. Every pair draws its own Gaussian map, so the median tracks the
/// map ensemble rather than one draw.
pub fn delta_sweep(n: usize, ratios: &[f64], samples: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    ratios
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let m = (r * n as f64).round() as usize;
            let per: Vec<f64> = (0..samples)
                .into_par_iter()
                .map(|i| {
                    let mut rng = Prng::derive(seed, "delta-sweep", (k * samples + i) as u64);
                    let f = crate::forward::make_gaussian(m, n, rng.next_u64())?;
                    let sig: CVec = (0..n).map(|_| c(rng.normal(), rng.normal())).collect();
                    Ok(estimate_delta(&f, &[sig])?.delta)
                })
                .collect::<Result<_>>()?;
            Ok((r, crate::metrics::median(&per)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct HTilde {
    pub matrix: CMat,
    pub leading: f64,
    /// λ₀ < 0, so 𝓗(0)𝓗(0)ᴴ was returned.
    pub negative_leading: bool,
}

fn lift_real(v: &[f64]) -> CMat {
    let z = to_complex(v);
    CMat::outer(&z, &z)
}

/// Leading |λ| pair of Z with the eigenvector rotated real (largest entry
/// positive) and truncated to its real part.
fn leading_real_pair(z: &CMat) -> Result<(f64, Vec<f64>)> {
    if z.rows != z.cols || !z.is_hermitian(1e-12) {
        return Err(Error::Dim("H̃ needs a Hermitian matrix".into()));
    }
    let pair = match linalg::power_iteration(z, EIG_TOL, linalg::DEFAULT_MAX_ITER, 0) {
        Ok(p) => p,
        Err(e) => e.best,
    };
    let u = linalg::phase_align(&pair.vector);
    Ok((pair.value, u.iter().map(|x| x.re).collect()))
}

/// 𝓗(√λ₀ u₀) 𝓗(√λ₀ u₀)ᴴ with (λ₀, u₀) the leading pair of Z.
pub fn h_tilde(decoder: &Net, z: &CMat) -> Result<HTilde> {
    check_len("H̃ input", z.rows, decoder.input_dim())?;
    let (lambda, u) = leading_real_pair(z)?;
    if lambda < 0.0 {
        let h0 = decoder.forward(&vec![0.0; decoder.input_dim()])?;
        return Ok(HTilde { matrix: lift_real(&h0), leading: lambda, negative_leading: true });
    }
    let s = lambda.sqrt();
    let h = decoder.forward(&u.iter().map(|x| s * x).collect::<Vec<_>>())?;
    Ok(HTilde { matrix: lift_real(&h), leading: lambda, negative_leading: false })
}

/// H̃ extended to an indefinite leading pair: sign(λ₀) 𝓗(√|λ₀| u₀)𝓗(·)ᴴ.
/// Used for the ω denominator, whose argument yyᴴ − y*y*ᴴ is indefinite.
pub fn h_tilde_signed(decoder: &Net, z: &CMat) -> Result<CMat> {
    let (lambda, u) = leading_real_pair(z)?;
    let s = lambda.abs().sqrt();
    let h = decoder.forward(&u.iter().map(|x| s * x).collect::<Vec<_>>())?;
    Ok(lift_real(&h).scaled(lambda.signum()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaEstimate {
    pub omega: f64,
    /// Index of the maximizing pair in the input.
    pub argmax: usize,
    pub ratios: Vec<f64>,
    pub admissible: usize,
    /// Pairs whose H̃ hit a negative leading eigenvalue.
    pub negative_leading: usize,
}

/// Numerator and denominator of the ω ratio for one pair:
/// ‖Δ(H̃(yyᴴ)) − Δ(H̃(y*y*ᴴ))‖ and ‖Δ(H̃(yyᴴ − y*y*ᴴ))‖.
pub fn omega_terms(decoder: &Net, f: &ForwardMap, y: &[f64], y_star: &[f64]) -> Result<(f64, f64, bool)> {
    let a = h_tilde(decoder, &lift_real(y))?;
    let b = h_tilde(decoder, &lift_real(y_star))?;
    let num = herm_norm(&delta_op(f, &a.matrix.sub(&b.matrix))?);
    let diff = lift_real(y).sub(&lift_real(y_star));
    let den = herm_norm(&delta_op(f, &h_tilde_signed(decoder, &diff)?)?);
    Ok((num, den, a.negative_leading || b.negative_leading))
}

/// Max ω ratio over pairs with ‖y − y*‖ ≤ ε_y ‖y*‖ and denominator > 1e-12.
pub fn estimate_omega(
    decoder: &Net,
    f: &ForwardMap,
    pairs: &[(Vec<f64>, Vec<f64>)],
    eps_y: f64,
) -> Result<OmegaEstimate> {
    check_len("decoder output", decoder.output_dim(), f.n())?;
    let terms: Vec<Option<(f64, bool)>> = pairs
        .par_iter()
        .map(|(y, ys)| {
            check_len("omega pair", y.len(), ys.len())?;
            let gap: f64 = y.iter().zip(ys).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if gap > eps_y * linalg::rnorm(ys) {
                return Ok(None);
            }
            let (num, den, neg) = omega_terms(decoder, f, y, ys)?;
            Ok((den > 1e-12).then(|| (num / den, neg)))
        })
        .collect::<Result<_>>()?;
    let mut best: Option<(usize, f64)> = None;
    let mut ratios = Vec::new();
    let mut negative_leading = 0;
    for (i, t) in terms.iter().enumerate() {
        if let Some((r, neg)) = t {
            ratios.push(*r);
            negative_leading += *neg as usize;
            if best.is_none_or(|(_, b)| *r > b) {
                best = Some((i, *r));
            }
        }
    }
    let (argmax, omega) = best.ok_or_else(|| Error::Config("no admissible pairs for the ω estimate".into()))?;
    Ok(OmegaEstimate { omega, argmax, admissible: ratios.len(), ratios, negative_leading })
}

/// Random (y, y*) pairs with ‖y − y*‖ = r ‖y*‖, r uniform in (0, ε_y].
pub fn planted_pairs(n_y: usize, count: usize, eps_y: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    (0..count)
        .map(|t| {
            let mut rng = Prng::derive(seed, "omega-pairs", t as u64);
            let ys: Vec<f64> = (0..n_y).map(|_| rng.normal()).collect();
            let dir: Vec<f64> = (0..n_y).map(|_| rng.normal()).collect();
            let r = eps_y * (1.0 - rng.uniform()) * linalg::rnorm(&ys) / linalg::rnorm(&dir);
            let y = ys.iter().zip(&dir).map(|(a, b)| a + r * b).collect();
            (y, ys)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryParams {
    pub delta: f64,
    pub omega: f64,
    #[serde(rename = "mu_G")]
    pub mu_g: f64,
    #[serde(rename = "mu_H")]
    pub mu_h: f64,
    #[serde(rename = "mu_H_tilde")]
    pub mu_h_tilde: f64,
    #[serde(rename = "mu_R")]
    pub mu_r: f64,
    #[serde(rename = "sigma_H")]
    pub sigma_h: f64,
    #[serde(rename = "sigma_H_tilde")]
    pub sigma_h_tilde: f64,
    pub eps: f64,
    pub eps_y: f64,
    /// χ, also written τ.
    pub chi: f64,
    pub xi_y: f64,
    pub xi_rho: f64,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "N_y")]
    pub n_y: usize,
}

impl TheoryParams {
    /// Identity decoder / WF-only regime: ω = 1, all μ and σ equal 1,
    /// ε_y = ε.
    pub fn wf_regime(delta: f64, eps: f64) -> Self {
        TheoryParams {
            delta,
            omega: 1.0,
            mu_g: 1.0,
            mu_h: 1.0,
            mu_h_tilde: 1.0,
            mu_r: 1.0,
            sigma_h: 1.0,
            sigma_h_tilde: 1.0,
            eps,
            eps_y: eps,
            chi: 0.0,
            xi_y: 1.0,
            xi_rho: 1.0,
            alpha: None,
            beta: None,
            l: 0,
            m: 0,
            n: 0,
            n_y: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Indeterminate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: CheckStatus,
    pub lhs: f64,
    pub rhs: f64,
}

impl Check {
    fn le(name: &str, lhs: f64, rhs: f64) -> Self {
        let status = if !lhs.is_finite() || !rhs.is_finite() {
            CheckStatus::Indeterminate
        } else if lhs <= rhs {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Check { name: name.into(), status, lhs, rhs }
    }

    fn missing(name: &str, rhs: f64) -> Self {
        Check { name: name.into(), status: CheckStatus::Indeterminate, lhs: f64::NAN, rhs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub params: TheoryParams,
    pub delta_hat: f64,
    pub eps_rho: f64,
    pub c_val: f64,
    pub h_val: f64,
    pub delta1: f64,
    /// Upper bound on 4/(αβ).
    pub bound_4ab: f64,
    pub bound_4ab_frame: f64,
    pub delta_upper: f64,
    pub delta_upper_frame: f64,
    /// Admissible range of μ_𝓖 μ_𝓗.
    pub lip_window: (f64, f64),
    pub b1: f64,
    pub b2: f64,
    pub checks: Vec<Check>,
    pub note: String,
}

impl TheoryReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// c(δ, ε_y) = (1 + ε_y)(2 + ε_y)(2 + ωδ).
pub fn c_of(delta: f64, eps_y: f64, omega: f64) -> f64 {
    (1.0 + eps_y) * (2.0 + eps_y) * (2.0 + omega * delta)
}

pub fn eps_rho_of(p: &TheoryParams) -> f64 {
    p.mu_g * p.mu_r * p.mu_h * (1.0 + p.eps) * p.eps_y
}

/// δ₁ = √2 δ̂ (2 + ε_ρ)(2 + ε_y) / (μ̃²(1 − ε_ρ)(2 − ε_ρ)).
pub fn delta1_of(delta_hat: f64, eps_rho: f64, eps_y: f64, mu_h_tilde: f64) -> f64 {
    std::f64::consts::SQRT_2 * delta_hat * (2.0 + eps_rho) * (2.0 + eps_y)
        / (mu_h_tilde * mu_h_tilde * (1.0 - eps_rho) * (2.0 - eps_rho))
}

/// Initialization bounds (b₁, b₂); χ must be at least their max.
pub fn b1_b2(mu_g: f64, mu_h: f64, mu_r: f64, eps: f64) -> (f64, f64) {
    let b1 = (1.0 / eps) * (1.0 / mu_h - mu_g * (1.0 + eps));
    let b2 = mu_g * (1.0 - mu_r) / (eps * mu_g * mu_h * mu_r);
    (b1, b2)
}

/// Evaluate every constant and sufficient condition for `p`.
pub fn check_theorem1(p: &TheoryParams) -> TheoryReport {
    let eps_rho = eps_rho_of(p);
    let delta_hat = p.omega * p.mu_h * p.mu_h * p.delta;
    let c_val = c_of(p.delta, p.eps_y, p.omega);
    let delta1 = delta1_of(delta_hat, eps_rho, p.eps_y, p.mu_h_tilde);
    let h_val = (1.0 - delta1) * (1.0 - eps_rho) * (2.0 - eps_rho);
    let mu_ratio = p.mu_h_tilde / p.mu_h;
    let sigma_ratio = p.sigma_h_tilde / p.sigma_h;
    let hc2 = (h_val / c_val).powi(2);
    let bound_4ab = mu_ratio.powi(8) * hc2;
    let bound_4ab_frame = mu_ratio.powi(4) * sigma_ratio.powi(4) * hc2;
    let common = (1.0 - eps_rho) * (2.0 - eps_rho)
        / (std::f64::consts::SQRT_2 * p.omega * (2.0 + eps_rho) * (2.0 + p.eps_y));
    let delta_upper = mu_ratio * mu_ratio * common;
    let delta_upper_frame = p.sigma_h_tilde * p.mu_h_tilde / (p.sigma_h * p.sigma_h) * common;
    let lip_lo = (1.0 - p.chi * p.eps * p.mu_h) / (1.0 + p.eps);
    let lip_hi = (2.0 - 1.0 / p.mu_r).min(p.xi_rho / p.xi_y) / (1.0 + p.eps);
    let (b1, b2) = b1_b2(p.mu_g, p.mu_h, p.mu_r, p.eps);
    let wf_lhs = p.omega * (p.mu_h / p.mu_h_tilde).powi(2) * (2.0 + eps_rho) * (2.0 + p.eps_y)
        / ((1.0 - eps_rho) * (2.0 - eps_rho));
    let wf_rhs = (2.0 + p.eps) / ((1.0 - p.eps) * (2.0 - p.eps)).sqrt();
    let mu_gh = p.mu_g * p.mu_h;

    let mut checks = vec![
        Check::le("delta1_below_1", delta1, 1.0),
        Check::le("delta_bound", p.delta, delta_upper),
        Check::le("delta_bound_frame", p.delta, delta_upper_frame),
    ];
    match (p.alpha, p.beta) {
        (Some(a), Some(b)) => {
            checks.push(Check::le("rate_bound", 4.0 / (a * b), bound_4ab));
            checks.push(Check::le("rate_bound_frame", 4.0 / (a * b), bound_4ab_frame));
        }
        _ => {
            checks.push(Check::missing("rate_bound", bound_4ab));
            checks.push(Check::missing("rate_bound_frame", bound_4ab_frame));
        }
    }
    checks.extend([
        Check::le("lipschitz_window_lower", lip_lo, mu_gh),
        Check::le("lipschitz_window_upper", mu_gh, lip_hi),
        Check::le("mu_r_at_most_1", p.mu_r, 1.0),
        Check::le("eps_rho_below_1", eps_rho, 1.0),
        Check::le("wf_comparison", wf_lhs, wf_rhs),
        Check::le("chi_initialization", b1.max(b2), p.chi),
    ]);
    TheoryReport {
        params: p.clone(),
        delta_hat,
        eps_rho,
        c_val,
        h_val,
        delta1,
        bound_4ab,
        bound_4ab_frame,
        delta_upper,
        delta_upper_frame,
        lip_window: (lip_lo, lip_hi),
        b1,
        b2,
        checks,
        note: "δ, ω, μ and σ values are empirical (lower-bound) estimates over finite sample sets".into(),
    }
}

/// Smallest δ on `grid` at which δ₁ ≥ 1 in the WF regime with ε_y = ε.
pub fn wf_feasibility_boundary(eps: f64, grid: &[f64]) -> Option<f64> {
    grid.iter().copied().find(|&d| check_theorem1(&TheoryParams::wf_regime(d, eps)).delta1 >= 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitMetrics {
    /// Mean dist²(ρ⁽⁰⁾, ρ*)/‖ρ*‖².
    pub d1: f64,
    /// Mean ‖𝓗(y⁽⁰⁾) − ρ*‖²/‖ρ*‖².
    pub d2: f64,
    /// Mean ‖y⁽⁰⁾ − y⁽ᴸ⁾‖²/‖y⁽ᴸ⁾‖².
    pub d3: f64,
    pub skipped: usize,
}

pub fn init_metrics(model: &UnrolledModel, f: &ForwardMap, testset: &[Sample], rule: ScaleRule) -> Result<InitMetrics> {
    if testset.is_empty() {
        return Err(Error::Config("empty test set".into()));
    }
    let rows: Vec<Option<(f64, f64, f64)>> = testset
        .par_iter()
        .map(|s| {
            let init = spectral_init(f, &s.d, rule)?;
            let tr = rnn_forward(model, f, &s.d, &init)?;
            let d1 = crate::metrics::rel_dist_sq(&init.estimate, &s.rho_star);
            let d2 = rel_err_sq(&model.decoder.forward(&tr.y0)?, &s.rho_star);
            let d3 = rel_err_sq(&tr.y0, tr.y_final());
            Ok(match (d1, d2, d3) {
                (Some(a), Some(b), Some(c)) => Some((a, b, c)),
                _ => None,
            })
        })
        .collect::<Result<_>>()?;
    let ok: Vec<(f64, f64, f64)> = rows.iter().flatten().copied().collect();
    if ok.is_empty() {
        return Err(Error::Numeric("every test sample had a zero-norm denominator".into()));
    }
    let k = ok.len() as f64;
    Ok(InitMetrics {
        d1: ok.iter().map(|r| r.0).sum::<f64>() / k,
        d2: ok.iter().map(|r| r.1).sum::<f64>() / k,
        d3: ok.iter().map(|r| r.2).sum::<f64>() / k,
        skipped: rows.len() - ok.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditStage {
    pub stage: usize,
    pub dist_sq: f64,
    /// dist²(y⁽ˡ⁾, y*)/dist²(y⁽ˡ⁻¹⁾, y*).
    pub ratio: f64,
    /// 1 − 2γ_l/(α‖y⁽⁰⁾‖²), when α is known.
    pub factor: Option<f64>,
    pub satisfied: Option<bool>,
}

/// Per-stage contraction of dist²(y⁽ˡ⁾, y*) against the factor implied by α.
pub fn contraction_audit(
    trace: &EncodedTrace,
    y_star: &[f64],
    gammas: &[f64],
    alpha: Option<f64>,
) -> Result<Vec<AuditStage>> {
    check_len("audit y*", y_star.len(), trace.y0.len())?;
    check_len("audit stages", gammas.len(), trace.ys.len())?;
    let d2 = |y: &[f64]| y.iter().zip(y_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let mut prev = d2(&trace.y0);
    let mut out = Vec::with_capacity(gammas.len());
    for (l, (y, g)) in trace.ys.iter().zip(gammas).enumerate() {
        let cur = d2(y);
        let ratio = if prev > 0.0 { cur / prev } else if cur == 0.0 { 1.0 } else { f64::INFINITY };
        let factor = alpha.map(|a| 1.0 - 2.0 * g / (a * trace.norm_y0_sq));
        out.push(AuditStage {
            stage: l + 1,
            dist_sq: cur,
            ratio,
            factor,
            satisfied: factor.map(|f| ratio <= f * (1.0 + 1e-12)),
        });
        prev = cur;
    }
    Ok(out)
}

fn sub_real(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Empirical constants for a trained model on a sample set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub samples: usize,
    pub omega_pairs: usize,
    pub omega_admissible: usize,
    pub seed: u64,
}

/// Fill [`TheoryParams`] from data: δ over decoded random codes, ω over
/// planted pairs, Lipschitz constants and frame bounds over codes, ε from
/// spectral-init accuracy, μ_𝓡 and χ from the model's traces.
pub fn empirical_params(
    model: &UnrolledModel,
    f: &ForwardMap,
    samples: &[Sample],
    eps_y: f64,
    rule: ScaleRule,
    seed: u64,
) -> Result<(TheoryParams, Provenance)> {
    if samples.len() < 2 {
        return Err(Error::Config("theory estimates need at least 2 samples".into()));
    }
    let n_y = model.n_y();
    let mut rng = Prng::derive(seed, "theory-codes", 0);
    let codes: Vec<Vec<f64>> = (0..samples.len().max(8)).map(|_| (0..n_y).map(|_| rng.normal()).collect()).collect();
    let decoded: Vec<CVec> = codes.iter().map(|y| model.decoder.forward(y).map(|v| to_complex(&v))).collect::<Result<_>>()?;
    let delta = estimate_delta(f, &decoded)?.delta;
    let pairs = planted_pairs(n_y, 16, eps_y, seed);
    let om = estimate_omega(&model.decoder, f, &pairs, eps_y)?;
    let (mu_h, mu_h_tilde) = lipschitz_empirical(&model.decoder, &codes)?;
    let frame: Vec<f64> = codes
        .iter()
        .map(|y| Ok(linalg::rnorm(&model.decoder.forward(y)?) / linalg::rnorm(y)))
        .collect::<Result<_>>()?;
    let sigma_h = frame.iter().copied().fold(0.0, f64::max);
    let sigma_h_tilde = frame.iter().copied().fold(f64::INFINITY, f64::min);

    let traces: Vec<(crate::forward::SpectralInit, EncodedTrace)> = samples
        .par_iter()
        .map(|s| {
            let init = spectral_init(f, &s.d, rule)?;
            let tr = rnn_forward(model, f, &s.d, &init)?;
            Ok((init, tr))
        })
        .collect::<Result<_>>()?;
    let mut eps = 0.0f64;
    for (s, (init, _)) in samples.iter().zip(&traces) {
        let t = to_complex(&s.rho_star);
        let nt = linalg::norm(&t);
        if nt > 0.0 {
            eps = eps.max(linalg::dist(&init.estimate, &t)? / nt);
        }
    }
    let feats: Vec<Vec<f64>> = traces.iter().map(|(init, _)| crate::unrolled::encoder_input(&init.estimate)).collect();
    let (mu_g, _) = lipschitz_empirical(&model.encoder, &feats)?;
    let mut mu_r = 0.0f64;
    for (i, (_, a)) in traces.iter().enumerate() {
        for (_, b) in &traces[i + 1..] {
            let den = linalg::rnorm(&sub_real(&a.y0, &b.y0));
            if den > 0.0 {
                mu_r = mu_r.max(linalg::rnorm(&sub_real(a.y_final(), b.y_final())) / den);
            }
        }
    }
    // χ: code-domain error at y⁽⁰⁾ per unit of image-domain init error, with
    // the final code standing in for y*.
    let mut chi = 0.0f64;
    for (s, (init, t)) in samples.iter().zip(&traces) {
        let di = linalg::dist(&init.estimate, &to_complex(&s.rho_star))?;
        if di > 0.0 {
            let dy = linalg::rdist(&t.y0, t.y_final());
            chi = chi.max(dy / di);
        }
    }
    let params = TheoryParams {
        delta,
        omega: om.omega,
        mu_g,
        mu_h,
        mu_h_tilde,
        mu_r,
        sigma_h,
        sigma_h_tilde,
        eps,
        eps_y,
        chi,
        xi_y: 1.0,
        xi_rho: 1.0,
        alpha: None,
        beta: None,
        l: model.stages(),
        m: f.m(),
        n: f.n(),
        n_y,
    };
    let prov = Provenance { samples: samples.len(), omega_pairs: pairs.len(), omega_admissible: om.admissible, seed };
    Ok((params, prov))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{make_gaussian, MapKind};

    #[test]
    fn scalar_expansion_gives_unit_delta() {
        let f = ForwardMap::from_rows(CMat::identity(1), MapKind::File, None).unwrap();
        let est = estimate_delta(&f, &[vec![c(1.0, 0.0)]]).unwrap();
        assert!((est.delta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_samples_are_skipped() {
        let f = make_gaussian(8, 2, 0).unwrap();
        let est = estimate_delta(&f, &[vec![c(0.0, 0.0); 2], vec![c(1.0, 0.5), c(0.0, 1.0)]]).unwrap();
        assert_eq!(est.skipped, 1);
        assert_eq!(est.per_sample.len(), 1);
    }

    #[test]
    fn trivial_ledger_substitution() {
        let r = check_theorem1(&TheoryParams::wf_regime(0.0, 0.0));
        assert_eq!(r.c_val, 4.0);
        assert_eq!(r.delta1, 0.0);
        assert_eq!(r.h_val, 2.0);
        assert_eq!(r.bound_4ab, 0.25);
    }

    #[test]
    fn zero_lower_lipschitz_fails_delta_bound() {
        let mut p = TheoryParams::wf_regime(0.1, 0.0);
        p.mu_h_tilde = 0.0;
        let r = check_theorem1(&p);
        assert_eq!(r.delta_upper, 0.0);
        assert_eq!(r.check("delta_bound").unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn missing_alpha_beta_is_indeterminate() {
        let r = check_theorem1(&TheoryParams::wf_regime(0.1, 0.1));
        assert_eq!(r.check("rate_bound").unwrap().status, CheckStatus::Indeterminate);
    }

    #[test]
    fn b_values() {
        assert_eq!(b1_b2(1.0, 1.0, 1.0, 1.0), (-1.0, 0.0));
        assert_eq!(b1_b2(0.3, 2.0, 1.0, 0.5).1, 0.0);
    }

    #[test]
    fn h_tilde_zero_input_zero_bias() {
        let dec = Net::identity(3);
        let h = h_tilde(&dec, &CMat::zeros(3, 3)).unwrap();
        assert!(h.matrix.frobenius() == 0.0);
    }

    #[test]
    fn audit_zero_steps_unit_ratios() {
        let tr = EncodedTrace {
            y0: vec![1.0, 2.0],
            ys: vec![vec![1.0, 2.0]; 3],
            rho_hat: vec![],
            norm_y0_sq: 5.0,
            degenerate: false,
        };
        let a = contraction_audit(&tr, &[0.0, 1.0], &[0.0; 3], Some(2.0)).unwrap();
        assert!(a.iter().all(|s| s.ratio == 1.0 && s.satisfied == Some(true)));
    }
}
