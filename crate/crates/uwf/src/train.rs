//! End-to-end training of the unrolled model.
//!
//! The per-sample graph (encoder, every unrolled stage including the
//! decoder-Jacobian-transpose chain inside each gradient step, and the final
//! decode) is recorded on a [`Tape`]. Activation masks enter as constants.
//! Terms that only touch parameters (c₁, c₃, c₄) and the cross-sample RNN
//! Lipschitz term c₂ are differentiated in closed form; c₂ feeds extra
//! cotangents into the per-sample tapes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{check_len, Error, Result};
use crate::forward::{spectral_init, ForwardMap, ScaleRule};
use crate::linalg::rnorm;
use crate::metrics::rel_err_sq;
use crate::nets::{real_spectral_norm, Activation, Net};
use crate::rng::Prng;
use crate::tape::{ConstMat, Tape, Var};
use crate::unrolled::{encoder_input, rnn_forward_features, UnrolledModel};

pub const GAMMA_FLOOR: f64 = 1e-8;
pub const DEFAULT_GRAD_CLIP: f64 = 10.0;
const SPECTRAL_TOL: f64 = 1e-10;
// Near-degenerate top singular values stall power iteration; the warm start
// carries the estimate across steps.
const SPECTRAL_MAX_ITER: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Weight of the intermediate-stage image losses.
    pub eta: f64,
    /// Weight of ‖𝓖(0)‖² + ‖𝓗(0)‖².
    pub eta1: f64,
    /// Weight of the RNN Lipschitz penalty.
    pub eta2: f64,
    /// Weight of the encoder spectral-norm penalty.
    pub eta3: f64,
    /// Weight of the decoder spectral-norm penalty.
    pub eta4: f64,
    pub target_mu_r: f64,
    /// Per-layer encoder spectral-norm targets (one value broadcasts).
    pub target_mu_g: Option<Vec<f64>>,
    /// Per-layer decoder spectral-norm targets (one value broadcasts).
    pub target_mu_h: Option<Vec<f64>>,
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after each epoch.
    pub lr_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Weight of the (max pixel − 1)² prior; off when absent.
    pub max_pixel_prior: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub val_fraction: f64,
    pub scale_rule: ScaleRule,
    /// Global gradient-norm ceiling applied before each Adam step. A single
    /// diverging trajectory otherwise saturates Adam's second moment and
    /// freezes training for the rest of the run.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 0.1,
            eta1: 0.01,
            eta2: 0.01,
            eta3: 0.01,
            eta4: 0.01,
            target_mu_r: 1.0,
            target_mu_g: None,
            target_mu_h: None,
            lr: 1e-5,
            lr_decay: 1.0,
            batch: 16,
            epochs: 10,
            seed: 0,
            max_pixel_prior: None,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.1,
            scale_rule: ScaleRule::SqrtLambda,
            grad_clip: Some(DEFAULT_GRAD_CLIP),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let etas = [self.eta, self.eta1, self.eta2, self.eta3, self.eta4];
        if etas.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if !(self.lr > 0.0) || self.batch == 0 {
            return Err(Error::Config("need lr > 0 and batch >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// A training sample with its encoder features precomputed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub rho_star: Vec<f64>,
    pub d: Vec<f64>,
    pub x0: Vec<f64>,
}

pub fn prepare(f: &ForwardMap, samples: &[Sample], rule: ScaleRule) -> Result<Vec<Prepared>> {
    samples
        .par_iter()
        .map(|s| {
            check_len("sample image", s.rho_star.len(), f.n())?;
            let init = spectral_init(f, &s.d, rule)?;
            Ok(Prepared { rho_star: s.rho_star.clone(), d: s.d.clone(), x0: encoder_input(&init.estimate) })
        })
        .collect()
}

/// Parameter tensors in a fixed order: encoder (W, b) per layer, decoder
/// (W, b) per layer, then the step sizes.
pub fn param_names(model: &UnrolledModel) -> Vec<String> {
    let mut names = Vec::new();
    for (tag, net) in [("enc", &model.encoder), ("dec", &model.decoder)] {
        for j in 0..net.layers.len() {
            names.push(format!("{tag}.L{j}.W"));
            names.push(format!("{tag}.L{j}.b"));
        }
    }
    names.push("rnn.gamma".into());
    names
}

pub fn params(model: &UnrolledModel) -> Vec<&Vec<f64>> {
    let mut out = Vec::new();
    for net in [&model.encoder, &model.decoder] {
        for l in &net.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
    }
    out.push(&model.gammas);
    out
}

pub fn params_mut(model: &mut UnrolledModel) -> Vec<&mut Vec<f64>> {
    let mut out = Vec::new();
    for net in [&mut model.encoder, &mut model.decoder] {
        for l in &mut net.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
    }
    out.push(&mut model.gammas);
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Batch mean of ‖ρ̂ − ρ*‖².
    pub data: f64,
    /// Batch mean of η Σ_{l=1}^{L−1} ‖𝓗(y⁽ˡ⁾) − ρ*‖².
    pub intermediate: f64,
    /// Batch mean of w (max ρ̂ − 1)².
    pub pixel: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl LossBreakdown {
    fn finish(mut self) -> Self {
        self.total = self.data + self.intermediate + self.pixel + self.c1 + self.c2 + self.c3 + self.c4;
        self
    }
}

fn targets(t: &Option<Vec<f64>>, layers: usize) -> Result<Option<Vec<f64>>> {
    match t {
        None => Ok(None),
        Some(v) if v.len() == 1 => Ok(Some(vec![v[0]; layers])),
        Some(v) if v.len() == layers => Ok(Some(v.clone())),
        Some(v) => Err(Error::Config(format!("{} spectral targets for {layers} layers", v.len()))),
    }
}

/// Warm-start right singular vectors for the spectral-norm penalties.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SpectralWarm {
    pub enc: Vec<Vec<f64>>,
    pub dec: Vec<Vec<f64>>,
}

/// Σ_j η (σ(W_j) − μ_j)² and its gradient with respect to each W_j.
fn spectral_penalty(
    net: &Net,
    eta: f64,
    targets: &Option<Vec<f64>>,
    warm: Option<&mut Vec<Vec<f64>>>,
    want_grad: bool,
) -> (f64, Vec<Vec<f64>>) {
    let mut grads: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
    let Some(mu) = targets else { return (0.0, grads) };
    if eta == 0.0 {
        return (0.0, grads);
    }
    let mut warm = warm;
    let mut total = 0.0;
    for (j, l) in net.layers.iter().enumerate() {
        let ws = warm.as_ref().and_then(|w| w.get(j)).map(|v| v.as_slice());
        let sv = real_spectral_norm(&l.w, l.n_out, l.n_in, SPECTRAL_TOL, SPECTRAL_MAX_ITER, ws);
        let diff = sv.sigma - mu[j];
        total += eta * diff * diff;
        if want_grad {
            let k = 2.0 * eta * diff;
            for (i, ui) in sv.u.iter().enumerate() {
                for (c, vc) in sv.v.iter().enumerate() {
                    grads[j][i * l.n_in + c] = k * ui * vc;
                }
            }
        }
        if let Some(w) = warm.as_mut() {
            if w.len() <= j {
                w.resize(j + 1, Vec::new());
            }
            w[j] = sv.v;
        }
    }
    (total, grads)
}

/// η₁ ‖net(0)‖² and its parameter gradient (W then b per layer).
fn zero_penalty(net: &Net, eta: f64) -> (f64, Vec<Vec<f64>>) {
    let zero = vec![0.0; net.input_dim()];
    let cache = net.forward_cached(&zero).expect("zero input has the right size");
    let val = eta * cache.output.iter().map(|v| v * v).sum::<f64>();
    let v: Vec<f64> = cache.output.iter().map(|o| 2.0 * eta * o).collect();
    let (_, lg) = net.vjp_cached(&cache, &v);
    (val, lg.into_iter().flat_map(|g| [g.w, g.b]).collect())
}

struct NetVars {
    layers: Vec<(Var, Var)>,
}

fn net_leaves(tape: &mut Tape<'_>, net: &Net) -> NetVars {
    NetVars { layers: net.layers.iter().map(|l| (tape.leaf(l.w.clone()), tape.leaf(l.b.clone()))).collect() }
}

fn net_on_tape(tape: &mut Tape<'_>, net: &Net, vars: &NetVars, x: Var) -> (Var, Vec<Option<Vec<f64>>>) {
    let mut h = x;
    let mut masks = Vec::with_capacity(net.layers.len());
    for (l, &(w, b)) in net.layers.iter().zip(&vars.layers) {
        let z = tape.matvec(w, h, l.n_out, l.n_in);
        let z = tape.add(z, b);
        if l.activation == Activation::Identity {
            h = z;
            masks.push(None);
        } else {
            let m: Vec<f64> = tape.value(z).iter().map(|&v| l.activation.slope(v)).collect();
            h = tape.mul_const(z, m.clone());
            masks.push(Some(m));
        }
    }
    (h, masks)
}

/// J_netᵀ v as masked affine ops, so reverse mode differentiates through the
/// weights that appear inside the Jacobian.
fn jt_on_tape(tape: &mut Tape<'_>, net: &Net, vars: &NetVars, masks: &[Option<Vec<f64>>], v: Var) -> Var {
    let mut g = v;
    for k in (0..net.layers.len()).rev() {
        let l = &net.layers[k];
        let s = match &masks[k] {
            Some(m) => tape.mul_const(g, m.clone()),
            None => g,
        };
        g = tape.matvec_t(vars.layers[k].0, s, l.n_out, l.n_in);
    }
    g
}

struct SampleGraph<'a> {
    tape: Tape<'a>,
    enc: NetVars,
    dec: NetVars,
    gammas: Vec<Var>,
    loss: Var,
    y0: Var,
    yl: Var,
    data: f64,
    inter: f64,
    pixel: f64,
}

fn build_sample<'a>(
    model: &UnrolledModel,
    fr: ConstMat<'a>,
    fi: ConstMat<'a>,
    p: &Prepared,
    cfg: &TrainConfig,
    normalizer: Option<f64>,
) -> SampleGraph<'a> {
    let mut tape = Tape::new();
    let enc = net_leaves(&mut tape, &model.encoder);
    let dec = net_leaves(&mut tape, &model.decoder);
    let gammas: Vec<Var> = model.gammas.iter().map(|g| tape.leaf(vec![*g])).collect();
    let neg_star: Vec<f64> = p.rho_star.iter().map(|v| -v).collect();
    let neg_d: Vec<f64> = p.d.iter().map(|v| -v).collect();
    let inv_m = 1.0 / fr.rows as f64;

    let x0 = tape.leaf(p.x0.clone());
    let (y0, _) = net_on_tape(&mut tape, &model.encoder, &enc, x0);
    let n0 = normalizer.unwrap_or_else(|| {
        let v = tape.value(y0).iter().map(|x| x * x).sum::<f64>();
        if v == 0.0 {
            1.0
        } else {
            v
        }
    });

    let mut y = y0;
    let mut inter_terms = Vec::new();
    for (l, &gamma) in gammas.iter().enumerate() {
        let (rho, masks) = net_on_tape(&mut tape, &model.decoder, &dec, y);
        if l >= 1 {
            let r = tape.add_const(rho, &neg_star);
            inter_terms.push(tape.sum_sq(r));
        }
        let ur = tape.const_matvec(fr, rho);
        let ui = tape.const_matvec(fi, rho);
        let i1 = tape.mul(ur, ur);
        let i2 = tape.mul(ui, ui);
        let inten = tape.add(i1, i2);
        let e = tape.add_const(inten, &neg_d);
        let wr = tape.mul(e, ur);
        let wi = tape.mul(e, ui);
        let gr = tape.const_matvec_t(fr, wr);
        let gi = tape.const_matvec_t(fi, wi);
        let g = tape.add(gr, gi);
        let g_rho = tape.scale_const(g, inv_m);
        let gy = jt_on_tape(&mut tape, &model.decoder, &dec, &masks, g_rho);
        let gy = tape.scale_const(gy, 1.0 / n0);
        let step = tape.scale(gamma, gy);
        y = tape.sub(y, step);
    }
    let (rho_hat, _) = net_on_tape(&mut tape, &model.decoder, &dec, y);
    let r = tape.add_const(rho_hat, &neg_star);
    let data_v = tape.sum_sq(r);
    let mut parts = vec![data_v];
    let data = tape.scalar(data_v);

    let mut inter = 0.0;
    if !inter_terms.is_empty() && cfg.eta > 0.0 {
        let s = tape.sum(&inter_terms);
        let s = tape.scale_const(s, cfg.eta);
        inter = tape.scalar(s);
        parts.push(s);
    }
    let mut pixel = 0.0;
    if let Some(w) = cfg.max_pixel_prior.filter(|w| *w > 0.0) {
        let m = tape.max_elem(rho_hat);
        let m1 = tape.add_const(m, &[-1.0]);
        let sq = tape.sum_sq(m1);
        let pv = tape.scale_const(sq, w);
        pixel = tape.scalar(pv);
        parts.push(pv);
    }
    let loss = if parts.len() == 1 { parts[0] } else { tape.sum(&parts) };
    SampleGraph { tape, enc, dec, gammas, loss, y0, yl: y, data, inter, pixel }
}

/// c₂ = η₂ (max pairwise ‖y⁽ᴸ⁾ᵢ − y⁽ᴸ⁾ⱼ‖/‖y⁽⁰⁾ᵢ − y⁽⁰⁾ⱼ‖ − μ_R)² over the batch,
/// with cotangents for each sample's y⁽⁰⁾ and y⁽ᴸ⁾.
fn rnn_lipschitz_penalty(
    y0: &[&[f64]],
    yl: &[&[f64]],
    eta2: f64,
    mu_r: f64,
) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = y0.len();
    let ny = y0.first().map_or(0, |v| v.len());
    let mut g0 = vec![vec![0.0; ny]; n];
    let mut gl = vec![vec![0.0; ny]; n];
    if eta2 == 0.0 || n < 2 {
        return (0.0, g0, gl);
    }
    let mut best: Option<(f64, usize, usize, f64, f64)> = None;
    for i in 0..n {
        for j in i + 1..n {
            let b = dist2(y0[i], y0[j]).sqrt();
            if b < 1e-12 {
                continue;
            }
            let a = dist2(yl[i], yl[j]).sqrt();
            let r = a / b;
            if best.is_none_or(|bst| r > bst.0) {
                best = Some((r, i, j, a, b));
            }
        }
    }
    let Some((r, i, j, a, b)) = best else { return (0.0, g0, gl) };
    let diff = r - mu_r;
    let k = 2.0 * eta2 * diff;
    for c in 0..ny {
        let dl = yl[i][c] - yl[j][c];
        let d0 = y0[i][c] - y0[j][c];
        let gl_c = if a > 0.0 { k * dl / (a * b) } else { 0.0 };
        let g0_c = -k * a * d0 / (b * b * b);
        gl[i][c] += gl_c;
        gl[j][c] -= gl_c;
        g0[i][c] += g0_c;
        g0[j][c] -= g0_c;
    }
    (eta2 * diff * diff, g0, gl)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Gradients aligned with [`params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

fn const_mats(f: &ForwardMap) -> (ConstMat<'_>, ConstMat<'_>) {
    (
        ConstMat { data: f.re_part(), rows: f.m(), cols: f.n() },
        ConstMat { data: f.im_part(), rows: f.m(), cols: f.n() },
    )
}

fn check_batch(model: &UnrolledModel, f: &ForwardMap, batch: &[Prepared]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    check_len("model image size", model.n(), f.n())?;
    for p in batch {
        check_len("sample image", p.rho_star.len(), f.n())?;
        check_len("sample measurements", p.d.len(), f.m())?;
        check_len("sample features", p.x0.len(), 2 * f.n())?;
    }
    Ok(())
}

fn batch_eval(
    model: &UnrolledModel,
    f: &ForwardMap,
    batch: &[Prepared],
    cfg: &TrainConfig,
    normalizers: Option<&[f64]>,
    warm: Option<&mut SpectralWarm>,
) -> Result<(LossBreakdown, Gradients)> {
    check_batch(model, f, batch)?;
    if let Some(n) = normalizers {
        check_len("normalizers", n.len(), batch.len())?;
    }
    let (fr, fi) = const_mats(f);
    let graphs: Vec<SampleGraph<'_>> = batch
        .par_iter()
        .enumerate()
        .map(|(t, p)| build_sample(model, fr, fi, p, cfg, normalizers.map(|n| n[t])))
        .collect();
    let bsz = batch.len() as f64;
    let mut out = LossBreakdown::default();
    for g in &graphs {
        out.data += g.data / bsz;
        out.intermediate += g.inter / bsz;
        out.pixel += g.pixel / bsz;
    }
    let y0s: Vec<&[f64]> = graphs.iter().map(|g| g.tape.value(g.y0)).collect();
    let yls: Vec<&[f64]> = graphs.iter().map(|g| g.tape.value(g.yl)).collect();
    let (c2, g0, gl) = rnn_lipschitz_penalty(&y0s, &yls, cfg.eta2, cfg.target_mu_r);
    out.c2 = c2;

    let shapes: Vec<usize> = params(model).iter().map(|p| p.len()).collect();
    let per_sample: Vec<Vec<Vec<f64>>> = graphs
        .par_iter()
        .zip(g0.into_par_iter().zip(gl.into_par_iter()))
        .map(|(g, (s0, sl))| {
            let mut seeds = vec![(g.loss, vec![1.0 / bsz])];
            if s0.iter().any(|v| *v != 0.0) {
                seeds.push((g.y0, s0));
            }
            if sl.iter().any(|v| *v != 0.0) {
                seeds.push((g.yl, sl));
            }
            let gr = g.tape.backward(&seeds);
            let mut t = Vec::with_capacity(shapes.len());
            for vars in [&g.enc, &g.dec] {
                for &(w, b) in &vars.layers {
                    t.push(gr.or_zeros(w, g.tape.value(w).len()));
                    t.push(gr.or_zeros(b, g.tape.value(b).len()));
                }
            }
            t.push(g.gammas.iter().map(|v| gr.or_zeros(*v, 1)[0]).collect());
            t
        })
        .collect();
    let mut tensors: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();
    for s in &per_sample {
        for (acc, g) in tensors.iter_mut().zip(s) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    let n_enc = model.encoder.layers.len();
    let n_dec = model.decoder.layers.len();
    if cfg.eta1 > 0.0 {
        let (ve, ge) = zero_penalty(&model.encoder, cfg.eta1);
        let (vd, gd) = zero_penalty(&model.decoder, cfg.eta1);
        out.c1 = ve + vd;
        for (k, g) in ge.into_iter().chain(gd).enumerate() {
            for (a, b) in tensors[k].iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    let tg = targets(&cfg.target_mu_g, n_enc)?;
    let th = targets(&cfg.target_mu_h, n_dec)?;
    let (we, wd) = match warm {
        Some(w) => (Some(&mut w.enc), Some(&mut w.dec)),
        None => (None, None),
    };
    let (c3, g3) = spectral_penalty(&model.encoder, cfg.eta3, &tg, we, true);
    let (c4, g4) = spectral_penalty(&model.decoder, cfg.eta4, &th, wd, true);
    out.c3 = c3;
    out.c4 = c4;
    for (j, g) in g3.iter().enumerate() {
        add_into(&mut tensors[2 * j], g);
    }
    for (k, g) in g4.iter().enumerate() {
        add_into(&mut tensors[2 * (n_enc + k)], g);
    }

    let names = param_names(model);
    for (name, t) in names.iter().zip(&tensors) {
        if let Some(i) = t.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at {name}[{i}]")));
        }
    }
    Ok((out.finish(), Gradients { tensors }))
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

/// Exact reverse-mode gradients of [`train_loss`] (step normalizers held
/// constant).
pub fn train_backward(
    model: &UnrolledModel,
    f: &ForwardMap,
    batch: &[Prepared],
    cfg: &TrainConfig,
) -> Result<(LossBreakdown, Gradients)> {
    batch_eval(model, f, batch, cfg, None, None)
}

/// As [`train_backward`] with the step normalizers fixed to `normalizers`.
pub fn train_backward_with_normalizers(
    model: &UnrolledModel,
    f: &ForwardMap,
    batch: &[Prepared],
    cfg: &TrainConfig,
    normalizers: &[f64],
) -> Result<(LossBreakdown, Gradients)> {
    batch_eval(model, f, batch, cfg, Some(normalizers), None)
}

/// Step normalizers ‖y⁽⁰⁾‖² per sample.
pub fn normalizers(model: &UnrolledModel, batch: &[Prepared]) -> Result<Vec<f64>> {
    batch
        .iter()
        .map(|p| {
            let y0 = model.encoder.forward(&p.x0)?;
            let n = y0.iter().map(|v| v * v).sum::<f64>();
            Ok(if n == 0.0 { 1.0 } else { n })
        })
        .collect()
}

/// Training loss evaluated by the plain forward path (no tape).
pub fn train_loss(
    model: &UnrolledModel,
    f: &ForwardMap,
    batch: &[Prepared],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    loss_plain(model, f, batch, cfg, None)
}

pub fn train_loss_with_normalizers(
    model: &UnrolledModel,
    f: &ForwardMap,
    batch: &[Prepared],
    cfg: &TrainConfig,
    normalizers: &[f64],
) -> Result<LossBreakdown> {
    check_len("normalizers", normalizers.len(), batch.len())?;
    loss_plain(model, f, batch, cfg, Some(normalizers))
}

fn loss_plain(
    model: &UnrolledModel,
    f: &ForwardMap,
    batch: &[Prepared],
    cfg: &TrainConfig,
    normalizers: Option<&[f64]>,
) -> Result<LossBreakdown> {
    check_batch(model, f, batch)?;
    let bsz = batch.len() as f64;
    let mut out = LossBreakdown::default();
    let mut y0s = Vec::with_capacity(batch.len());
    let mut yls = Vec::with_capacity(batch.len());
    for (t, p) in batch.iter().enumerate() {
        let tr = rnn_forward_features(model, f, &p.d, &p.x0, normalizers.map(|n| n[t]))?;
        out.data += dist2(&tr.rho_hat, &p.rho_star) / bsz;
        let l = tr.ys.len();
        if l >= 2 {
            let mut s = 0.0;
            for y in &tr.ys[..l - 1] {
                s += dist2(&model.decoder.forward(y)?, &p.rho_star);
            }
            out.intermediate += cfg.eta * s / bsz;
        }
        if let Some(w) = cfg.max_pixel_prior.filter(|w| *w > 0.0) {
            let m = tr.rho_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.pixel += w * (m - 1.0).powi(2) / bsz;
        }
        yls.push(tr.y_final().to_vec());
        y0s.push(tr.y0);
    }
    let r0: Vec<&[f64]> = y0s.iter().map(|v| v.as_slice()).collect();
    let rl: Vec<&[f64]> = yls.iter().map(|v| v.as_slice()).collect();
    out.c2 = rnn_lipschitz_penalty(&r0, &rl, cfg.eta2, cfg.target_mu_r).0;
    if cfg.eta1 > 0.0 {
        out.c1 = zero_penalty(&model.encoder, cfg.eta1).0 + zero_penalty(&model.decoder, cfg.eta1).0;
    }
    let tg = targets(&cfg.target_mu_g, model.encoder.layers.len())?;
    let th = targets(&cfg.target_mu_h, model.decoder.layers.len())?;
    out.c3 = spectral_penalty(&model.encoder, cfg.eta3, &tg, None, false).0;
    out.c4 = spectral_penalty(&model.decoder, cfg.eta4, &th, None, false).0;
    Ok(out.finish())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[usize], beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn for_model(model: &UnrolledModel, cfg: &TrainConfig) -> Self {
        let shapes: Vec<usize> = params(model).iter().map(|p| p.len()).collect();
        AdamState::new(&shapes, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut [&mut Vec<f64>], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        for (i, (pi, gi)) in p.iter_mut().zip(g).enumerate() {
            let m = &mut state.m[k][i];
            let v = &mut state.v[k][i];
            *m = state.beta1 * *m + (1.0 - state.beta1) * gi;
            *v = state.beta2 * *v + (1.0 - state.beta2) * gi * gi;
            *pi -= lr * (*m / bc1) / ((*v / bc2).sqrt() + state.eps);
        }
    }
}

/// Adam step on every model tensor, then γ_l ← max(γ_l, 1e-8).
pub fn apply_adam(model: &mut UnrolledModel, grads: &Gradients, state: &mut AdamState, lr: f64) {
    let mut ps = params_mut(model);
    adam_step(&mut ps, &grads.tensors, state, lr);
    for g in &mut model.gammas {
        *g = g.max(GAMMA_FLOOR);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub data_term: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

pub const HISTORY_COLUMNS: [&str; 8] =
    ["epoch", "train_mse", "val_mse", "data_term", "c1", "c2", "c3", "c4"];

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = HISTORY_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            r.epoch, r.train_mse, r.val_mse, r.data_term, r.c1, r.c2, r.c3, r.c4
        ));
    }
    s
}

/// Everything needed to continue training bit-identically.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub model: UnrolledModel,
    pub adam: AdamState,
    pub warm: SpectralWarm,
    pub history: Vec<HistoryRow>,
    /// Learning rate for the next epoch.
    pub lr: f64,
}

impl TrainState {
    pub fn new(model: UnrolledModel, cfg: &TrainConfig) -> Self {
        let adam = AdamState::for_model(&model, cfg);
        TrainState { model, adam, warm: SpectralWarm::default(), history: Vec::new(), lr: cfg.lr }
    }
}

/// Mean relative error ‖ρ̂ − ρ*‖²/‖ρ*‖² over a set (zero-norm truths skipped).
pub fn mean_rel_mse(model: &UnrolledModel, f: &ForwardMap, set: &[Prepared]) -> Result<f64> {
    let errs: Vec<Option<f64>> = set
        .par_iter()
        .map(|p| {
            let tr = rnn_forward_features(model, f, &p.d, &p.x0, None)?;
            Ok(rel_err_sq(&tr.rho_hat, &p.rho_star))
        })
        .collect::<Result<_>>()?;
    let v: Vec<f64> = errs.into_iter().flatten().collect();
    Ok(if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 })
}

/// Seeded train/validation split: validation gets ⌊fraction·T⌋ samples.
pub fn split_indices(count: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..count).collect();
    Prng::derive(seed, "val-split", count as u64).shuffle(&mut idx);
    let n_val = (fraction * count as f64).floor() as usize;
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

/// Run `epochs` more epochs. Minibatch order for epoch `e` (counted across
/// resumes) depends only on `(seed, e)`.
pub fn train_epochs(
    mut state: TrainState,
    f: &ForwardMap,
    train_set: &[Prepared],
    val_set: &[Prepared],
    cfg: &TrainConfig,
    epochs: usize,
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    for _ in 0..epochs {
        let epoch = state.history.len();
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        Prng::derive(cfg.seed, "epoch-order", epoch as u64).shuffle(&mut order);
        let mut acc = LossBreakdown::default();
        let mut steps = 0usize;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<Prepared> = chunk.iter().map(|&i| train_set[i].clone()).collect();
            let (lb, mut grads) = batch_eval(&state.model, f, &batch, cfg, None, Some(&mut state.warm))?;
            if let Some(c) = cfg.grad_clip {
                clip_grad_norm(&mut grads, c)?;
            }
            apply_adam(&mut state.model, &grads, &mut state.adam, state.lr);
            acc.data += lb.data * chunk.len() as f64;
            acc.c1 += lb.c1;
            acc.c2 += lb.c2;
            acc.c3 += lb.c3;
            acc.c4 += lb.c4;
            steps += 1;
            seen += chunk.len();
        }
        let s = steps as f64;
        let row = HistoryRow {
            epoch: epoch + 1,
            train_mse: mean_rel_mse(&state.model, f, train_set)?,
            val_mse: if val_set.is_empty() { f64::NAN } else { mean_rel_mse(&state.model, f, val_set)? },
            data_term: acc.data / seen as f64,
            c1: acc.c1 / s,
            c2: acc.c2 / s,
            c3: acc.c3 / s,
            c4: acc.c4 / s,
        };
        if !row.train_mse.is_finite() {
            return Err(Error::Numeric(format!("training diverged at epoch {}", row.epoch)));
        }
        state.history.push(row);
        state.lr *= cfg.lr_decay;
    }
    Ok(state)
}

/// Train from scratch on `samples`, holding out a seeded validation split
/// unless `val` is given.
pub fn train(
    model: UnrolledModel,
    f: &ForwardMap,
    samples: &[Prepared],
    val: Option<&[Prepared]>,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let state = TrainState::new(model, cfg);
    match val {
        Some(v) => train_epochs(state, f, samples, v, cfg, cfg.epochs),
        None => {
            let (tr, va) = split_indices(samples.len(), cfg.val_fraction, cfg.seed);
            let tr: Vec<Prepared> = tr.iter().map(|&i| samples[i].clone()).collect();
            let va: Vec<Prepared> = va.iter().map(|&i| samples[i].clone()).collect();
            train_epochs(state, f, &tr, &va, cfg, cfg.epochs)
        }
    }
}

pub fn param_count(model: &UnrolledModel) -> usize {
    params(model).iter().map(|p| p.len()).sum::<usize>()
}

pub fn grad_norm(g: &Gradients) -> f64 {
    rnorm(&g.tensors.concat())
}

/// Rescale `g` so its global norm is at most `max_norm`.
pub fn clip_grad_norm(g: &mut Gradients, max_norm: f64) -> Result<()> {
    if g.tensors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    let amax = g.tensors.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    if amax == 0.0 {
        return Ok(());
    }
    // Scaled so huge entries do not overflow the sum of squares.
    let n = amax * g.tensors.iter().flatten().map(|v| (v / amax).powi(2)).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / n;
        g.tensors.iter_mut().flatten().for_each(|v| *v *= s);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_rescales_to_ceiling_and_keeps_direction() {
        let mut g = Gradients { tensors: vec![vec![3e200, 0.0], vec![-4e200]] };
        clip_grad_norm(&mut g, 10.0).unwrap();
        assert!((g.tensors[0][0] - 6.0).abs() < 1e-12);
        assert!((g.tensors[1][0] + 8.0).abs() < 1e-12);
        let mut small = Gradients { tensors: vec![vec![0.3, -0.4]] };
        clip_grad_norm(&mut small, 10.0).unwrap();
        assert_eq!(small.tensors, vec![vec![0.3, -0.4]]);
        let mut bad = Gradients { tensors: vec![vec![f64::NAN]] };
        assert!(clip_grad_norm(&mut bad, 1.0).is_err());
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let g = vec![vec![0.3, -4.0, 0.0]];
        let mut st = AdamState::new(&[3], 0.9, 0.999, 1e-8);
        {
            let mut ps = vec![&mut p];
            adam_step(&mut ps, &g, &mut st, 0.01);
        }
        assert!((p[0] - (1.0 - 0.01)).abs() < 1e-7);
        assert!((p[1] - (-2.0 + 0.01)).abs() < 1e-7);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn adam_zero_grads_leave_params() {
        let mut p = vec![1.0, 2.0];
        let mut st = AdamState::new(&[2], 0.9, 0.999, 1e-8);
        for _ in 0..5 {
            let mut ps = vec![&mut p];
            adam_step(&mut ps, &[vec![0.0, 0.0]], &mut st, 0.1);
        }
        assert_eq!(p, vec![1.0, 2.0]);
    }

    #[test]
    fn adam_quadratic_converges() {
        let a = [3.0, -1.0, 0.5];
        let mut x = vec![0.0; 3];
        let mut st = AdamState::new(&[3], 0.9, 0.999, 1e-8);
        let mut dists = Vec::new();
        for _ in 0..100 {
            let g: Vec<f64> = x.iter().zip(&a).map(|(xi, ai)| 2.0 * (xi - ai)).collect();
            let mut ps = vec![&mut x];
            adam_step(&mut ps, &[g], &mut st, 0.02);
            dists.push(dist2(&x, &a).sqrt());
        }
        for w in dists[10..].windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(dists[99] < dists[0]);
    }

    #[test]
    fn spectral_target_penalty() {
        let w = vec![3.0, 0.0, 0.0, 3.0];
        let net = Net::new(vec![crate::nets::Layer::new(w, vec![0.0; 2], 2, Activation::Identity).unwrap()])
            .unwrap();
        let (v, _) = spectral_penalty(&net, 0.7, &Some(vec![2.0]), None, false);
        assert!((v - 0.7).abs() < 1e-12);
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, b) = split_indices(50, 0.1, 3);
        assert_eq!(b.len(), 5);
        assert_eq!(a.len(), 45);
        assert!(a.iter().all(|i| !b.contains(i)));
        assert_eq!(split_indices(50, 0.1, 3), (a, b));
    }
}
