//! Error metrics and curve tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};

/// ‖est − truth‖²/‖truth‖²; `None` when the truth is zero.
pub fn rel_err_sq(est: &[f64], truth: &[f64]) -> Option<f64> {
    let t: f64 = truth.iter().map(|v| v * v).sum();
    if t == 0.0 {
        return None;
    }
    Some(est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t)
}

/// dist²(est, truth)/‖truth‖², the phase-invariant counterpart for complex
/// estimates.
pub fn rel_dist_sq(est: &[C64], truth: &[f64]) -> Option<f64> {
    let t = linalg::to_complex(truth);
    let n = linalg::norm_sq(&t);
    if n == 0.0 {
        return None;
    }
    linalg::dist(est, &t).ok().map(|d| d * d / n)
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Median (mean of the middle pair for even counts); NaN for empty input.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Named (x, y) series, exported as CSV with columns series, x, y.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

impl Curves {
    pub fn push(&mut self, name: &str, x: f64, y: f64) {
        match self.series.iter_mut().find(|(n, _)| n == name) {
            Some((_, pts)) => pts.push((x, y)),
            None => self.series.push((name.to_string(), vec![(x, y)])),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[(f64, f64)]> {
        self.series.iter().find(|(n, _)| n == name).map(|(_, p)| p.as_slice())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("series,x,y\n");
        for (name, pts) in &self.series {
            for (x, y) in pts {
                let _ = writeln!(s, "{name},{x:e},{y:e}");
            }
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("series,x,y") {
            return Err(Error::Format("curves CSV must start with header series,x,y".into()));
        }
        let mut c = Curves::default();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.rsplitn(3, ',').collect();
            if parts.len() != 3 {
                return Err(Error::Format(format!("curves CSV line {}: expected 3 fields", i + 2)));
            }
            let parse = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| Error::Format(format!("curves CSV line {}: bad number {s}", i + 2)))
            };
            c.push(parts[2], parse(parts[1])?, parse(parts[0])?);
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn relative_errors() {
        assert_eq!(rel_err_sq(&[0.0, 0.0], &[1.0, 1.0]), Some(1.0));
        assert_eq!(rel_err_sq(&[1.0], &[0.0]), None);
        let est = [c(0.0, 1.0), c(0.0, 2.0)];
        assert!(rel_dist_sq(&est, &[1.0, 2.0]).unwrap() < 1e-24);
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn curves_round_trip() {
        let mut cv = Curves::default();
        cv.push("wf", 0.25, 0.5);
        cv.push("dl", 0.25, 0.1);
        cv.push("wf", 0.5, 0.25);
        let back = Curves::from_csv(&cv.to_csv()).unwrap();
        assert_eq!(back, cv);
    }
}
