//! Dense complex vectors and matrices, Hermitian eigen-routines, and the
//! phase-invariant distance.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::rng::Prng;

pub type C64 = Complex64;
pub type CVec = Vec<C64>;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn to_complex(x: &[f64]) -> CVec {
    x.iter().map(|&v| c(v, 0.0)).collect()
}

pub fn norm(x: &[C64]) -> f64 {
    norm_sq(x).sqrt()
}

pub fn norm_sq(x: &[C64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum()
}

pub fn rnorm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// ⟨x, y⟩ = xᴴ y.
pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn scale(x: &[C64], s: C64) -> CVec {
    x.iter().map(|z| z * s).collect()
}

pub fn sub(x: &[C64], y: &[C64]) -> CVec {
    x.iter().zip(y).map(|(a, b)| a - b).collect()
}

pub fn all_finite(x: &[C64]) -> bool {
    x.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

/// Rotate `x` by a global phase so its largest-magnitude entry is real and
/// nonnegative. Ties go to the lowest index.
pub fn phase_align(x: &[C64]) -> CVec {
    let mut best = 0;
    for (i, z) in x.iter().enumerate() {
        if z.norm_sqr() > x[best].norm_sqr() {
            best = i;
        }
    }
    match x.get(best) {
        Some(z) if z.norm() > 0.0 => scale(x, z.conj() / z.norm()),
        _ => x.to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C64>,
}

impl CMat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat { rows, cols, data: vec![C64::default(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = c(1.0, 0.0);
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        check_len("matrix data", data.len(), rows * cols)?;
        Ok(CMat { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMat { rows, cols, data }
    }

    pub fn outer(x: &[C64], y: &[C64]) -> Self {
        CMat::from_fn(x.len(), y.len(), |i, j| x[i] * y[j].conj())
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn adjoint(&self) -> CMat {
        CMat::from_fn(self.cols, self.rows, |i, j| self.at(j, i).conj())
    }

    pub fn matvec(&self, x: &[C64]) -> CVec {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Aᴴ x.
    pub fn adjoint_matvec(&self, x: &[C64]) -> CVec {
        debug_assert_eq!(x.len(), self.rows);
        let mut out = vec![C64::default(); self.cols];
        for (i, xi) in x.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * xi;
            }
        }
        out
    }

    pub fn matmul(&self, other: &CMat) -> Result<CMat> {
        if self.cols != other.rows {
            return Err(Error::Dim(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = CMat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == C64::default() {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.at(k, j);
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &CMat) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> CMat {
        CMat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|z| z * s).collect() }
    }

    pub fn frobenius(&self) -> f64 {
        norm(&self.data)
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self.at(i, i)).sum()
    }

    /// ⟨A, B⟩_F = tr(Aᴴ B).
    pub fn inner(&self, other: &CMat) -> C64 {
        dot(&self.data, &other.data)
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        let mut diff = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                diff += (self.at(i, j) - self.at(j, i).conj()).norm_sqr();
            }
        }
        diff.sqrt() <= rel_tol * self.frobenius()
    }

    /// Cheap upper bound on the spectral norm: min(Frobenius, max absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        let row_sum = (0..self.rows)
            .map(|i| self.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        self.frobenius().min(row_sum)
    }
}

/// Hermitian operator usable by the power method.
pub trait HermitianOp {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[C64]) -> CVec;
    /// Any upper bound on the spectral norm.
    fn norm_bound(&self) -> f64;
}

impl HermitianOp for CMat {
    fn dim(&self) -> usize {
        self.rows
    }
    fn apply(&self, x: &[C64]) -> CVec {
        self.matvec(x)
    }
    fn norm_bound(&self) -> f64 {
        CMat::norm_bound(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigPair {
    pub value: f64,
    pub vector: CVec,
}

#[derive(Debug, Clone)]
pub struct NotConverged {
    pub best: EigPair,
    pub residual: f64,
    pub iterations: usize,
}

pub type EigResult = std::result::Result<EigPair, NotConverged>;

fn random_unit(n: usize, seed: u64) -> CVec {
    let mut rng = Prng::derive(seed, "power-start", n as u64);
    let v: CVec = (0..n).map(|_| c(rng.normal(), rng.normal())).collect();
    let s = norm(&v);
    scale(&v, c(1.0 / s, 0.0))
}

/// Power method on `sign·A + shift·I`, which must be PSD. Converges to the
/// eigenpair of A with the largest value of `sign·λ`.
fn shifted_power(
    op: &dyn HermitianOp,
    sign: f64,
    shift: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> (EigPair, f64, bool, usize) {
    let n = op.dim();
    let scale_ref = op.norm_bound().max(f64::MIN_POSITIVE);
    let mut v = random_unit(n, seed);
    let mut av = op.apply(&v);
    let mut best = (EigPair { value: 0.0, vector: v.clone() }, f64::INFINITY);
    for it in 0..max_iter {
        let lambda = dot(&v, &av).re;
        let resid = norm(&av.iter().zip(&v).map(|(a, x)| a - x * lambda).collect::<CVec>());
        if resid < best.1 {
            best = (EigPair { value: lambda, vector: v.clone() }, resid);
        }
        if resid <= tol * scale_ref {
            return (best.0, resid, true, it);
        }
        let w: CVec = av.iter().zip(&v).map(|(a, x)| a * sign + x * shift).collect();
        let wn = norm(&w);
        if wn == 0.0 || !wn.is_finite() {
            break;
        }
        v = scale(&w, c(1.0 / wn, 0.0));
        av = op.apply(&v);
    }
    (best.0, best.1, false, max_iter)
}

/// Eigenpair of largest |eigenvalue| of a Hermitian operator.
///
/// Runs the power method on `A + sI` and on `sI − A` (both PSD for `s` at
/// least the norm bound), then keeps whichever end of the spectrum is larger
/// in magnitude.
pub fn power_iteration(op: &dyn HermitianOp, tol: f64, max_iter: usize, seed: u64) -> EigResult {
    let n = op.dim();
    if n == 0 {
        return Err(NotConverged {
            best: EigPair { value: 0.0, vector: vec![] },
            residual: f64::INFINITY,
            iterations: 0,
        });
    }
    let s = op.norm_bound();
    if s == 0.0 {
        let mut v = vec![C64::default(); n];
        v[0] = c(1.0, 0.0);
        return Ok(EigPair { value: 0.0, vector: v });
    }
    let (top, rt, ct, it_t) = shifted_power(op, 1.0, s, tol, max_iter, seed);
    let (bot, rb, cb, it_b) = shifted_power(op, -1.0, s, tol, max_iter, seed ^ 1);
    let (pair, resid, conv, iters) =
        if bot.value.abs() > top.value.abs() { (bot, rb, cb, it_b) } else { (top, rt, ct, it_t) };
    if conv {
        Ok(pair)
    } else {
        Err(NotConverged { best: pair, residual: resid, iterations: iters })
    }
}

/// Eigenpair of the largest (algebraic) eigenvalue. `lower` must bound the
/// smallest eigenvalue from below; pass 0 for PSD operators.
pub fn top_eigenpair(
    op: &dyn HermitianOp,
    lower: f64,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> EigResult {
    let (pair, resid, conv, iters) = shifted_power(op, 1.0, (-lower).max(0.0), tol, max_iter, seed);
    if conv {
        Ok(pair)
    } else {
        Err(NotConverged { best: pair, residual: resid, iterations: iters })
    }
}

/// Spectral norm of a Hermitian operator (max |eigenvalue|). Returns the
/// best estimate even if the power method did not reach `tol`.
pub fn hermitian_norm(op: &dyn HermitianOp, tol: f64, seed: u64) -> f64 {
    match power_iteration(op, tol, DEFAULT_MAX_ITER, seed) {
        Ok(p) => p.value.abs(),
        Err(e) => e.best.value.abs(),
    }
}

#[derive(Clone, Debug)]
pub struct Rank2Eig {
    pub pairs: [EigPair; 2],
    pub degenerate: bool,
}

fn unit_orthogonal_to(x: &[C64]) -> CVec {
    let n = x.len();
    let mut best = None;
    for k in 0..n {
        let mut e = vec![C64::default(); n];
        e[k] = c(1.0, 0.0);
        let xn = norm_sq(x);
        let proj = if xn > 0.0 { dot(x, &e) / xn } else { C64::default() };
        let r: CVec = e.iter().zip(x).map(|(ei, xi)| ei - xi * proj).collect();
        let rn = norm(&r);
        if best.as_ref().is_none_or(|(bn, _)| rn > *bn) {
            best = Some((rn, r));
        }
    }
    let (rn, r) = best.unwrap_or((1.0, vec![]));
    scale(&r, c(1.0 / rn, 0.0))
}

/// Closed-form nonzero eigenpairs of `p pᴴ − q qᴴ`.
///
/// Eigenvectors lie in span{p, q} and are written `t = α p + (1 − α) q`;
/// α solves ‖e‖²α² + (eᴴq − pᴴe)α − pᴴq = 0 with e = p − q, and the
/// eigenvalue is eᴴt. Pairs are ordered by decreasing eigenvalue.
pub fn rank2_eig(p: &[C64], q: &[C64]) -> Result<Rank2Eig> {
    check_len("rank2_eig q", q.len(), p.len())?;
    if p.len() < 2 {
        return Err(Error::Dim("rank2_eig needs dimension >= 2".into()));
    }
    let e = sub(p, q);
    let a = norm_sq(&e);
    let (pp, qq2) = (norm_sq(p), norm_sq(q));
    let scale_ref = pp + qq2;
    let pq = dot(p, q);
    // ‖ppᴴ − qqᴴ‖_F², zero when p and q differ only by a phase.
    let lifted_sq = pp * pp + qq2 * qq2 - 2.0 * pq.norm_sqr();
    if a <= 1e-30 * scale_ref.max(f64::MIN_POSITIVE)
        || lifted_sq <= 1e-24 * scale_ref * scale_ref
    {
        let v = unit_orthogonal_to(&vec![C64::default(); p.len()]);
        let z = EigPair { value: 0.0, vector: v };
        return Ok(Rank2Eig { pairs: [z.clone(), z], degenerate: true });
    }
    let b = dot(&e, q) - dot(p, &e);
    let cc = -pq;
    let disc = (b * b - 4.0 * a * cc).sqrt();
    // Stable roots: choose the sign that avoids cancellation in b ± √disc.
    let s = if (b.conj() * disc).re >= 0.0 { 1.0 } else { -1.0 };
    let qq = -(b + disc * s) * 0.5;
    let mut roots = [qq / a, C64::default()];
    roots[1] = if qq.norm() > 0.0 { cc / qq } else { -b / a - roots[0] };

    let mut pairs: Vec<EigPair> = roots
        .iter()
        .map(|&alpha| {
            let t: CVec = p.iter().zip(q).map(|(pi, qi)| pi * alpha + qi * (1.0 - alpha)).collect();
            let tn = norm(&t);
            if tn <= 1e-14 * scale_ref.sqrt() {
                EigPair { value: 0.0, vector: unit_orthogonal_to(p) }
            } else {
                let lambda = dot(&e, &t).re;
                EigPair { value: lambda, vector: scale(&t, c(1.0 / tn, 0.0)) }
            }
        })
        .collect();
    pairs.sort_by(|x, y| y.value.total_cmp(&x.value));
    let second = pairs.pop().unwrap();
    let first = pairs.pop().unwrap();
    Ok(Rank2Eig { pairs: [first, second], degenerate: false })
}

/// Distance modulo a global phase: min over φ ∈ [0, 2π) of ‖x − y e^{iφ}‖.
pub fn dist(x: &[C64], y: &[C64]) -> Result<f64> {
    check_len("dist", y.len(), x.len())?;
    // Rotate y onto x and measure directly; the expanded form
    // ‖x‖² + ‖y‖² − 2|yᴴx| cancels catastrophically near zero.
    let ip = dot(y, x);
    let rot = if ip.norm() > 0.0 { ip / ip.norm() } else { c(1.0, 0.0) };
    Ok(x.iter().zip(y).map(|(a, b)| (a - b * rot).norm_sqr()).sum::<f64>().sqrt())
}

/// Distance modulo sign for real vectors; equals `dist` on their complex embedding.
pub fn rdist(x: &[f64], y: &[f64]) -> f64 {
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let s = if xy < 0.0 { -1.0 } else { 1.0 };
    x.iter().zip(y).map(|(a, b)| (a - s * b).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct SpectralNorm {
    pub sigma: f64,
    /// Right singular vector.
    pub vector: CVec,
    pub converged: bool,
}

/// Largest singular value of `a` by power iteration on AᴴA.
pub fn spectral_norm(a: &CMat, tol: f64, warm_start: Option<&[C64]>) -> SpectralNorm {
    let n = a.cols;
    let mut v = match warm_start {
        Some(w) if w.len() == n && norm(w) > 0.0 => scale(w, c(1.0 / norm(w), 0.0)),
        _ => random_unit(n, 0x5eed),
    };
    let mut sigma_sq = 0.0;
    for _ in 0..DEFAULT_MAX_ITER {
        let av = a.matvec(&v);
        let w = a.adjoint_matvec(&av);
        sigma_sq = norm_sq(&av);
        if sigma_sq == 0.0 {
            return SpectralNorm { sigma: 0.0, vector: v, converged: true };
        }
        let resid = norm(&w.iter().zip(&v).map(|(wi, vi)| wi - vi * sigma_sq).collect::<CVec>());
        let wn = norm(&w);
        let next = scale(&w, c(1.0 / wn, 0.0));
        if resid <= tol * sigma_sq {
            return SpectralNorm { sigma: sigma_sq.sqrt(), vector: next, converged: true };
        }
        v = next;
    }
    SpectralNorm { sigma: sigma_sq.sqrt(), vector: v, converged: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let p = power_iteration(&CMat::identity(3), 1e-12, 100, 1).unwrap();
        assert!((p.value - 1.0).abs() < 1e-12);
        assert!((norm(&p.vector) - 1.0).abs() < 1e-12);

        let mut d = CMat::zeros(2, 2);
        d.data[0] = c(3.0, 0.0);
        d.data[3] = c(1.0, 0.0);
        let p = power_iteration(&d, 1e-12, 10_000, 1).unwrap();
        assert!((p.value - 3.0).abs() < 1e-10);
        assert!((p.vector[0].norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn negative_dominant_eigenvalue() {
        let mut d = CMat::zeros(2, 2);
        d.data[0] = c(1.0, 0.0);
        d.data[3] = c(-4.0, 0.0);
        let p = power_iteration(&d, 1e-12, 10_000, 1).unwrap();
        assert!((p.value + 4.0).abs() < 1e-10);
    }

    #[test]
    fn rank2_orthonormal() {
        let p = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let q = vec![c(0.0, 0.0), c(0.0, 1.0)];
        let r = rank2_eig(&p, &q).unwrap();
        assert!((r.pairs[0].value - 1.0).abs() < 1e-14);
        assert!((r.pairs[1].value + 1.0).abs() < 1e-14);
        assert!((dot(&r.pairs[0].vector, &p).norm() - 1.0).abs() < 1e-14);
        assert!((dot(&r.pairs[1].vector, &q).norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rank2_equal_inputs() {
        let p = vec![c(1.0, 2.0), c(0.5, -1.0)];
        let r = rank2_eig(&p, &p).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.pairs[0].value, 0.0);
        assert_eq!(r.pairs[1].value, 0.0);
    }

    #[test]
    fn dist_trivial_cases() {
        let x = vec![c(1.0, 0.0), c(0.0, 0.0)];
        let y = vec![c(0.0, 1.0), c(0.0, 0.0)];
        assert!(dist(&x, &x).unwrap() < 1e-15);
        assert!(dist(&x, &y).unwrap() < 1e-15);
        assert!(dist(&x, &[c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn spectral_norm_trivial() {
        let a = CMat::identity(4).scaled(2.0);
        assert!((spectral_norm(&a, 1e-12, None).sigma - 2.0).abs() < 1e-12);
        assert_eq!(spectral_norm(&CMat::zeros(3, 2), 1e-12, None).sigma, 0.0);
    }

    #[test]
    fn phase_align_makes_largest_entry_real() {
        let x = vec![c(0.1, 0.2), c(-1.0, 1.0), c(0.3, 0.0)];
        let y = phase_align(&x);
        assert!(y[1].im.abs() < 1e-15 && y[1].re > 0.0);
        assert!((norm(&y) - norm(&x)).abs() < 1e-14);
    }
}
