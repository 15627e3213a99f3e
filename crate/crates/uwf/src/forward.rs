//! Measurement maps: linear, intensity, lifted and lifted-adjoint application,
//! the spectral matrix, and spectral initialization.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, c, CMat, CVec, EigPair, C64};
use crate::rng::Prng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    Gaussian,
    Fourier,
    File,
}

/// An M×N sampling matrix whose rows are a_mᴴ.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardMap {
    pub a: CMat,
    pub kind: MapKind,
    pub seed: Option<u64>,
    /// Real and imaginary parts of `a`, cached for real-input products.
    re: Vec<f64>,
    im: Vec<f64>,
}

impl ForwardMap {
    /// Build from a matrix whose rows are already a_mᴴ.
    pub fn from_rows(a: CMat, kind: MapKind, seed: Option<u64>) -> Result<Self> {
        if a.rows == 0 || a.cols == 0 {
            return Err(Error::Dim("forward map must have M, N >= 1".into()));
        }
        if !linalg::all_finite(&a.data) {
            return Err(Error::Numeric("forward map has non-finite entries".into()));
        }
        let re = a.data.iter().map(|z| z.re).collect();
        let im = a.data.iter().map(|z| z.im).collect();
        Ok(ForwardMap { a, kind, seed, re, im })
    }

    /// Build from sampling vectors a_m (rows are their conjugates).
    pub fn from_sampling_vectors(vectors: &[CVec]) -> Result<Self> {
        let n = vectors.first().map_or(0, |v| v.len());
        let mut data = Vec::with_capacity(vectors.len() * n);
        for v in vectors {
            check_len("sampling vector", v.len(), n)?;
            data.extend(v.iter().map(|z| z.conj()));
        }
        ForwardMap::from_rows(CMat::from_rows(vectors.len(), n, data)?, MapKind::File, None)
    }

    pub fn m(&self) -> usize {
        self.a.rows
    }

    pub fn n(&self) -> usize {
        self.a.cols
    }

    /// Row-major real part of the matrix.
    pub fn re_part(&self) -> &[f64] {
        &self.re
    }

    /// Row-major imaginary part of the matrix.
    pub fn im_part(&self) -> &[f64] {
        &self.im
    }

    /// F ρ.
    pub fn apply(&self, rho: &[C64]) -> Result<CVec> {
        check_len("forward apply", rho.len(), self.n())?;
        Ok(self.a.matvec(rho))
    }

    /// F ρ for a real ρ.
    pub fn apply_real(&self, rho: &[f64]) -> Result<CVec> {
        check_len("forward apply", rho.len(), self.n())?;
        let n = self.n();
        Ok((0..self.m())
            .map(|i| {
                let (mut sr, mut si) = (0.0, 0.0);
                for ((r, m), x) in self.re[i * n..(i + 1) * n].iter().zip(&self.im[i * n..]).zip(rho) {
                    sr += r * x;
                    si += m * x;
                }
                c(sr, si)
            })
            .collect())
    }

    /// Fᴴ w.
    pub fn adjoint_apply(&self, w: &[C64]) -> Result<CVec> {
        check_len("adjoint apply", w.len(), self.m())?;
        Ok(self.a.adjoint_matvec(w))
    }

    /// d_m = |a_mᴴ ρ|².
    pub fn intensity(&self, rho: &[C64]) -> Result<Vec<f64>> {
        Ok(self.apply(rho)?.iter().map(|z| z.norm_sqr()).collect())
    }

    pub fn intensity_real(&self, rho: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_real(rho)?.iter().map(|z| z.norm_sqr()).collect())
    }

    /// 𝓕(X)_m = a_mᴴ X a_m for Hermitian X.
    pub fn lifted_apply(&self, x: &CMat) -> Result<Vec<f64>> {
        if x.rows != self.n() || x.cols != self.n() {
            return Err(Error::Dim(format!("lifted_apply expects {0}x{0} input", self.n())));
        }
        if !x.is_hermitian(1e-12) {
            return Err(Error::Dim("lifted_apply input is not Hermitian".into()));
        }
        Ok((0..self.m())
            .map(|m| {
                let row = self.a.row(m);
                // a_mᴴ X a_m with a_m = conj(row).
                let xa = x.matvec(&row.iter().map(|z| z.conj()).collect::<CVec>());
                row.iter().zip(&xa).map(|(r, v)| r * v).sum::<C64>().re
            })
            .collect())
    }

    /// 𝓕ᴴ(d) = Σ_m d_m a_m a_mᴴ.
    pub fn lifted_adjoint(&self, d: &[f64]) -> Result<CMat> {
        check_len("lifted_adjoint", d.len(), self.m())?;
        let n = self.n();
        let mut out = CMat::zeros(n, n);
        for (m, &dm) in d.iter().enumerate() {
            if dm == 0.0 {
                continue;
            }
            let row = self.a.row(m);
            for i in 0..n {
                let ai = row[i].conj() * dm;
                for j in 0..n {
                    out.data[i * n + j] += ai * row[j];
                }
            }
        }
        Ok(out)
    }

    /// Y = (1/M) 𝓕ᴴ(d).
    pub fn spectral_matrix(&self, d: &[f64]) -> Result<CMat> {
        Ok(self.lifted_adjoint(d)?.scaled(1.0 / self.m() as f64))
    }
}

/// i.i.d. complex Gaussian entries, real and imaginary parts each N(0, 1/2).
pub fn make_gaussian(m: usize, n: usize, seed: u64) -> Result<ForwardMap> {
    let mut rng = Prng::derive(seed, "gaussian-map", 0);
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let data = (0..m * n).map(|_| c(s * rng.normal(), s * rng.normal())).collect();
    ForwardMap::from_rows(CMat::from_rows(m, n, data)?, MapKind::Gaussian, Some(seed))
}

/// First N columns of the M-point DFT matrix, entries exp(−2πi·m·n/M).
pub fn make_fourier(m: usize, n: usize) -> Result<ForwardMap> {
    if m < n {
        return Err(Error::Config(format!("fourier map needs M >= N (got M={m}, N={n})")));
    }
    let a = CMat::from_fn(m, n, |i, j| {
        let k = ((i * j) % m) as f64;
        C64::from_polar(1.0, -std::f64::consts::TAU * k / m as f64)
    });
    ForwardMap::from_rows(a, MapKind::Fourier, None)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScaleRule {
    /// ρ⁰ = √λ₀ v₀.
    #[default]
    SqrtLambda,
    /// ρ⁰ = (2M)^{-1/4} √‖d‖ v₀.
    NormOfD,
}

#[derive(Clone, Debug)]
pub struct SpectralInit {
    pub estimate: CVec,
    pub leading: EigPair,
    pub scale_rule: ScaleRule,
    pub degenerate: bool,
    pub converged: bool,
}

/// Leading eigenvector of the spectral matrix, scaled per `rule`.
pub fn spectral_init(f: &ForwardMap, d: &[f64], rule: ScaleRule) -> Result<SpectralInit> {
    let y = f.spectral_matrix(d)?;
    // Negative intensities (noise) can push Y below zero; bound λ_min from below.
    let lower = (0..f.m())
        .filter(|&m| d[m] < 0.0)
        .map(|m| d[m] * linalg::norm_sq(f.a.row(m)))
        .sum::<f64>()
        / f.m() as f64;
    let (leading, converged) =
        match linalg::top_eigenpair(&y, lower, linalg::DEFAULT_TOL, linalg::DEFAULT_MAX_ITER, 0) {
            Ok(p) => (p, true),
            Err(e) => (e.best, false),
        };
    let n = f.n();
    if !(leading.value > 0.0) {
        return Ok(SpectralInit {
            estimate: vec![C64::default(); n],
            leading,
            scale_rule: rule,
            degenerate: true,
            converged,
        });
    }
    let s = match rule {
        ScaleRule::SqrtLambda => leading.value.sqrt(),
        ScaleRule::NormOfD => (2.0 * f.m() as f64).powf(-0.25) * linalg::rnorm(d).sqrt(),
    };
    Ok(SpectralInit {
        estimate: linalg::scale(&leading.vector, c(s, 0.0)),
        leading,
        scale_rule: rule,
        degenerate: false,
        converged,
    })
}
