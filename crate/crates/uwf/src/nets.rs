//! Dense real-valued layer stacks: forward pass, Jacobian products and
//! Lipschitz estimates.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_len, Error, Result};
use crate::linalg::rnorm;
use crate::rng::Prng;

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        z * self.slope(z)
    }

    /// Derivative used for backprop; relu and leaky relu take the right-hand
    /// slope only for z > 0, so the subgradient at 0 is 0 (relu) or `s` (leaky).
    pub fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(s) => {
                if z > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu({s})"),
            Activation::Identity => write!(f, "identity"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let act = match s {
            "relu" => Activation::Relu,
            "identity" | "linear" => Activation::Identity,
            "leaky_relu" => Activation::LeakyRelu(DEFAULT_LEAKY_SLOPE),
            _ => {
                let slope = s
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|v| v.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown activation '{s}'")))?;
                Activation::LeakyRelu(slope)
            }
        };
        if let Activation::LeakyRelu(sl) = act {
            if !(sl > 0.0 && sl < 1.0) {
                return Err(Error::Config(format!("leaky slope {sl} outside (0, 1)")));
            }
        }
        Ok(act)
    }
}

/// Affine map followed by an elementwise activation. `w` is row-major out×in.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
}

impl Layer {
    pub fn new(w: Vec<f64>, b: Vec<f64>, n_in: usize, activation: Activation) -> Result<Self> {
        let n_out = b.len();
        check_len("layer weights", w.len(), n_out * n_in)?;
        Ok(Layer { w, b, n_in, n_out, activation })
    }

    /// Gaussian weights with variance `gain/n_in`, zero bias.
    pub fn random(n_in: usize, n_out: usize, activation: Activation, gain: f64, rng: &mut Prng) -> Self {
        let s = (gain / n_in as f64).sqrt();
        Layer {
            w: (0..n_in * n_out).map(|_| s * rng.normal()).collect(),
            b: vec![0.0; n_out],
            n_in,
            n_out,
            activation,
        }
    }

    pub fn pre_activation(&self, x: &[f64]) -> Vec<f64> {
        matvec(&self.w, self.n_out, self.n_in, x)
            .into_iter()
            .zip(&self.b)
            .map(|(z, b)| z + b)
            .collect()
    }
}

pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), cols);
    (0..rows)
        .map(|i| w[i * cols..(i + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

/// Wᵀ x.
pub fn tmatvec(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), rows);
    let mut out = vec![0.0; cols];
    for (i, xi) in x.iter().enumerate() {
        if *xi == 0.0 {
            continue;
        }
        for (o, a) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += a * xi;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Net {
    pub layers: Vec<Layer>,
}

/// Per-layer cotangents from a vector–Jacobian product.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input to each layer.
    pub inputs: Vec<Vec<f64>>,
    /// Activation slopes at each layer's pre-activation.
    pub masks: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Net {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("net needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].n_out != pair[1].n_in {
                return Err(Error::Dim(format!(
                    "layer output {} does not feed input {}",
                    pair[0].n_out, pair[1].n_in
                )));
            }
        }
        Ok(Net { layers })
    }

    /// Random net through `dims` (length = layers + 1), He-style gain for
    /// rectifier layers and unit gain otherwise.
    pub fn random(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 || activations.len() != dims.len() - 1 {
            return Err(Error::Config("net dims/activations mismatch".into()));
        }
        let mut rng = Prng::derive(seed, "net-init", dims.len() as u64);
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(d, &a)| {
                let gain = if a == Activation::Identity { 1.0 } else { 2.0 };
                Layer::random(d[0], d[1], a, gain, &mut rng)
            })
            .collect();
        Net::new(layers)
    }

    /// Single linear layer with zero bias.
    pub fn linear(w: Vec<f64>, n_out: usize, n_in: usize) -> Result<Self> {
        Net::new(vec![Layer::new(w, vec![0.0; n_out], n_in, Activation::Identity)?])
    }

    pub fn identity(n: usize) -> Self {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            w[i * n + i] = 1.0;
        }
        Net::linear(w, n, n).expect("square identity")
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim()).chain(self.layers.iter().map(|l| l.n_out)).collect()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("net input", x.len(), self.input_dim())?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.pre_activation(&h).into_iter().map(|z| l.activation.apply(z)).collect();
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache> {
        check_len("net input", x.len(), self.input_dim())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = l.pre_activation(&h);
            let m: Vec<f64> = z.iter().map(|&v| l.activation.slope(v)).collect();
            inputs.push(h);
            h = z.iter().zip(&m).map(|(a, b)| a * b).collect();
            masks.push(m);
        }
        Ok(ForwardCache { inputs, masks, output: h })
    }

    /// J(x) u.
    pub fn jvp(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("jvp direction", u.len(), self.input_dim())?;
        let cache = self.forward_cached(x)?;
        Ok(self.jvp_cached(&cache, u))
    }

    pub fn jvp_cached(&self, cache: &ForwardCache, u: &[f64]) -> Vec<f64> {
        let mut t = u.to_vec();
        for (l, m) in self.layers.iter().zip(&cache.masks) {
            t = matvec(&l.w, l.n_out, l.n_in, &t).iter().zip(m).map(|(a, b)| a * b).collect();
        }
        t
    }

    /// vᵀ J(x) and the parameter cotangents.
    pub fn vjp(&self, x: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<LayerGrad>)> {
        check_len("vjp cotangent", v.len(), self.output_dim())?;
        let cache = self.forward_cached(x)?;
        Ok(self.vjp_cached(&cache, v))
    }

    pub fn vjp_cached(&self, cache: &ForwardCache, v: &[f64]) -> (Vec<f64>, Vec<LayerGrad>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = v.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let s: Vec<f64> = g.iter().zip(&cache.masks[k]).map(|(a, b)| a * b).collect();
            let x = &cache.inputs[k];
            let mut gw = vec![0.0; l.n_out * l.n_in];
            for (i, si) in s.iter().enumerate() {
                for (j, xj) in x.iter().enumerate() {
                    gw[i * l.n_in + j] = si * xj;
                }
            }
            g = tmatvec(&l.w, l.n_out, l.n_in, &s);
            grads.push(LayerGrad { w: gw, b: s });
        }
        grads.reverse();
        (g, grads)
    }

    /// Jᵀ v using only cached masks (no parameter cotangents).
    pub fn jt_cached(&self, cache: &ForwardCache, v: &[f64]) -> Vec<f64> {
        let mut g = v.to_vec();
        for (l, m) in self.layers.iter().zip(&cache.masks).rev() {
            let s: Vec<f64> = g.iter().zip(m).map(|(a, b)| a * b).collect();
            g = tmatvec(&l.w, l.n_out, l.n_in, &s);
        }
        g
    }

    /// ∏ σ_max(W_j), an upper bound on the Lipschitz constant for
    /// 1-Lipschitz activations.
    pub fn lipschitz_upper(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| real_spectral_norm(&l.w, l.n_out, l.n_in, 1e-12, crate::linalg::DEFAULT_MAX_ITER, None).sigma)
            .product()
    }

    /// Per-layer spectral norms.
    pub fn layer_norms(&self) -> Vec<f64> {
        self.layers
            .iter()
            .map(|l| real_spectral_norm(&l.w, l.n_out, l.n_in, 1e-12, crate::linalg::DEFAULT_MAX_ITER, None).sigma)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }
}

/// Max and min of ‖f(x₁) − f(x₂)‖/‖x₁ − x₂‖ over all sample pairs.
/// Coincident pairs are skipped.
pub fn lipschitz_ratios(
    samples: &[Vec<f64>],
    f: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Config("Lipschitz estimate needs at least 2 samples".into()));
    }
    let outs = samples.iter().map(|s| f(s)).collect::<Result<Vec<_>>>()?;
    let (mut hi, mut lo, mut count) = (0.0f64, f64::INFINITY, 0usize);
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            let dx: Vec<f64> = samples[i].iter().zip(&samples[j]).map(|(a, b)| a - b).collect();
            let nx = rnorm(&dx);
            if nx == 0.0 {
                continue;
            }
            let dy: Vec<f64> = outs[i].iter().zip(&outs[j]).map(|(a, b)| a - b).collect();
            let r = rnorm(&dy) / nx;
            hi = hi.max(r);
            lo = lo.min(r);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Config("all Lipschitz samples coincide".into()));
    }
    Ok((hi, lo))
}

/// Empirical (upper, lower) Lipschitz estimates of `net` over `samples`.
pub fn lipschitz_empirical(net: &Net, samples: &[Vec<f64>]) -> Result<(f64, f64)> {
    lipschitz_ratios(samples, |x| net.forward(x))
}

#[derive(Clone, Debug)]
pub struct RealSingular {
    pub sigma: f64,
    /// Left singular vector (W v / σ).
    pub u: Vec<f64>,
    /// Right singular vector.
    pub v: Vec<f64>,
    pub converged: bool,
}

/// Leading singular triple of a real row-major `rows×cols` matrix by power
/// iteration on WᵀW, optionally warm-started.
pub fn real_spectral_norm(
    w: &[f64],
    rows: usize,
    cols: usize,
    tol: f64,
    max_iter: usize,
    warm_start: Option<&[f64]>,
) -> RealSingular {
    let mut v: Vec<f64> = match warm_start {
        Some(ws) if ws.len() == cols && rnorm(ws) > 0.0 => ws.to_vec(),
        _ => {
            let mut rng = Prng::derive(0x5eed, "real-power-start", cols as u64);
            (0..cols).map(|_| rng.normal()).collect()
        }
    };
    let n0 = rnorm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut converged = false;
    for _ in 0..max_iter {
        let wv = matvec(w, rows, cols, &v);
        let sigma_sq = wv.iter().map(|x| x * x).sum::<f64>();
        if sigma_sq == 0.0 {
            converged = true;
            break;
        }
        let wtwv = tmatvec(w, rows, cols, &wv);
        let resid = wtwv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b * sigma_sq).powi(2))
            .sum::<f64>()
            .sqrt();
        let nn = rnorm(&wtwv);
        v = wtwv.iter().map(|x| x / nn).collect();
        if resid <= tol * sigma_sq {
            converged = true;
            break;
        }
    }
    let wv = matvec(w, rows, cols, &v);
    let sigma = rnorm(&wv);
    let u = if sigma > 0.0 { wv.iter().map(|x| x / sigma).collect() } else { vec![0.0; rows] };
    RealSingular { sigma, u, v, converged }
}
