//! Spectral init → encoder → L gradient stages in the encoded domain → decoder.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::forward::{spectral_init, ForwardMap, ScaleRule, SpectralInit};
use crate::linalg::{self, C64};
use crate::nets::{Activation, Net};

#[derive(Clone, Debug, PartialEq)]
pub struct UnrolledModel {
    pub encoder: Net,
    pub decoder: Net,
    pub gammas: Vec<f64>,
}

/// Activations for the hidden and output layers of both nets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelActivations {
    pub encoder: String,
    pub encoder_output: String,
    pub decoder: String,
    pub decoder_output: String,
}

impl Default for ModelActivations {
    fn default() -> Self {
        ModelActivations {
            encoder: "leaky_relu".into(),
            encoder_output: "identity".into(),
            decoder: "relu".into(),
            decoder_output: "identity".into(),
        }
    }
}

/// Architecture of an unrolled model; hidden widths exclude the input and
/// output sizes, which follow from N and N_y.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "N_y")]
    pub n_y: usize,
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(default)]
    pub encoder_dims: Vec<usize>,
    #[serde(default)]
    pub decoder_dims: Vec<usize>,
    #[serde(default)]
    pub activations: ModelActivations,
    #[serde(default = "default_gamma")]
    pub gamma_init: f64,
}

fn default_gamma() -> f64 {
    1e-3
}

fn stack_acts(hidden: Activation, out: Activation, layers: usize) -> Vec<Activation> {
    (0..layers).map(|k| if k + 1 == layers { out } else { hidden }).collect()
}

impl UnrolledModel {
    pub fn new(encoder: Net, decoder: Net, gammas: Vec<f64>) -> Result<Self> {
        if encoder.output_dim() != decoder.input_dim() {
            return Err(Error::Dim(format!(
                "encoder output {} != decoder input {}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if encoder.input_dim() != 2 * decoder.output_dim() {
            return Err(Error::Dim(format!(
                "encoder input {} != 2N with N = {}",
                encoder.input_dim(),
                decoder.output_dim()
            )));
        }
        Ok(UnrolledModel { encoder, decoder, gammas })
    }

    /// Randomly initialized model for images of `n` pixels.
    pub fn init(n: usize, spec: &ModelSpec, seed: u64) -> Result<Self> {
        let a = &spec.activations;
        let enc_dims: Vec<usize> =
            std::iter::once(2 * n).chain(spec.encoder_dims.iter().copied()).chain([spec.n_y]).collect();
        let dec_dims: Vec<usize> =
            std::iter::once(spec.n_y).chain(spec.decoder_dims.iter().copied()).chain([n]).collect();
        let enc_acts = stack_acts(a.encoder.parse()?, a.encoder_output.parse()?, enc_dims.len() - 1);
        let dec_acts = stack_acts(a.decoder.parse()?, a.decoder_output.parse()?, dec_dims.len() - 1);
        if !(spec.gamma_init > 0.0) {
            return Err(Error::Config("gamma_init must be positive".into()));
        }
        UnrolledModel::new(
            Net::random(&enc_dims, &enc_acts, seed)?,
            Net::random(&dec_dims, &dec_acts, seed ^ 0xdec0de)?,
            vec![spec.gamma_init; spec.l],
        )
    }

    pub fn n(&self) -> usize {
        self.decoder.output_dim()
    }

    pub fn n_y(&self) -> usize {
        self.decoder.input_dim()
    }

    pub fn stages(&self) -> usize {
        self.gammas.len()
    }
}

/// Encoder features: the spectral estimate rotated so its largest entry is
/// real nonnegative, stacked as [Re; Im].
pub fn encoder_input(estimate: &[C64]) -> Vec<f64> {
    let z = linalg::phase_align(estimate);
    z.iter().map(|v| v.re).chain(z.iter().map(|v| v.im)).collect()
}

/// 𝓚(y) = (1/2M) Σ_m (|a_mᴴ 𝓗(y)|² − d_m)².
pub fn loss_k(decoder: &Net, f: &ForwardMap, y: &[f64], d: &[f64]) -> Result<f64> {
    check_len("loss_K measurements", d.len(), f.m())?;
    let rho = decoder.forward(y)?;
    let inten = f.intensity_real(&rho)?;
    Ok(inten.iter().zip(d).map(|(i, dm)| (i - dm).powi(2)).sum::<f64>() / (2.0 * f.m() as f64))
}

/// J_𝓗(y)ᵀ Re[(1/M) 𝓕ᴴ(e) 𝓗(y)], the encoded-domain gradient without the
/// real-calculus factor 2.
pub fn grad_k(decoder: &Net, f: &ForwardMap, y: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    check_len("grad_K measurements", d.len(), f.m())?;
    let cache = decoder.forward_cached(y)?;
    let g_rho = image_grad(f, &cache.output, d)?;
    Ok(decoder.jt_cached(&cache, &g_rho))
}

/// Re[(1/M) Fᴴ (e ⊙ Fρ)] for a real image ρ.
pub(crate) fn image_grad(f: &ForwardMap, rho: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let u = f.apply_real(rho)?;
    let w: Vec<C64> = u.iter().zip(d).map(|(z, dm)| z * (z.norm_sqr() - dm)).collect();
    let inv_m = 1.0 / f.m() as f64;
    Ok(f.adjoint_apply(&w)?.iter().map(|z| z.re * inv_m).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTrace {
    pub y0: Vec<f64>,
    /// y⁽¹⁾ … y⁽ᴸ⁾.
    pub ys: Vec<Vec<f64>>,
    pub rho_hat: Vec<f64>,
    /// Frozen step normalizer ‖y⁽⁰⁾‖² (1 when y⁽⁰⁾ = 0).
    pub norm_y0_sq: f64,
    pub degenerate: bool,
}

impl EncodedTrace {
    pub fn y_final(&self) -> &[f64] {
        self.ys.last().unwrap_or(&self.y0)
    }
}

/// Run the stages from encoder features `x0`. `normalizer` overrides the
/// step normalizer; by default it is ‖y⁽⁰⁾‖².
pub fn rnn_forward_features(
    model: &UnrolledModel,
    f: &ForwardMap,
    d: &[f64],
    x0: &[f64],
    normalizer: Option<f64>,
) -> Result<EncodedTrace> {
    check_len("measurements", d.len(), f.m())?;
    check_len("model image size", model.n(), f.n())?;
    let y0 = model.encoder.forward(x0)?;
    let n0 = linalg::rnorm(&y0).powi(2);
    let degenerate = n0 == 0.0;
    let norm_y0_sq = normalizer.unwrap_or(if degenerate { 1.0 } else { n0 });
    let mut y = y0.clone();
    let mut ys = Vec::with_capacity(model.stages());
    for &gamma in &model.gammas {
        let g = grad_k(&model.decoder, f, &y, d)?;
        let mu = gamma / norm_y0_sq;
        for (yi, gi) in y.iter_mut().zip(&g) {
            *yi -= mu * gi;
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite encoded iterate".into()));
        }
        ys.push(y.clone());
    }
    let rho_hat = model.decoder.forward(&y)?;
    Ok(EncodedTrace { y0, ys, rho_hat, norm_y0_sq, degenerate })
}

/// y⁽ˡ⁾ = y⁽ˡ⁻¹⁾ − (γ_l/‖y⁽⁰⁾‖²) ∇𝓚(y⁽ˡ⁻¹⁾), starting from the encoded
/// spectral estimate.
pub fn rnn_forward(
    model: &UnrolledModel,
    f: &ForwardMap,
    d: &[f64],
    init: &SpectralInit,
) -> Result<EncodedTrace> {
    check_len("spectral init", init.estimate.len(), f.n())?;
    rnn_forward_features(model, f, d, &encoder_input(&init.estimate), None)
}

/// Test-time path: measurements → image.
pub fn reconstruct(model: &UnrolledModel, f: &ForwardMap, d: &[f64], rule: ScaleRule) -> Result<Vec<f64>> {
    let init = spectral_init(f, d, rule)?;
    Ok(rnn_forward(model, f, d, &init)?.rho_hat)
}
