//! Natural cubic spline control paths.
//!
//! All channels share one knot grid. On interval `[t_i, t_{i+1}]` each channel
//! is stored as `a + b·s + c·s² + d·s³` with `s = t − t_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubicSplinePath {
    knots: Vec<f64>,
    /// `coeffs[channel][interval] = [a, b, c, d]`
    coeffs: Vec<Vec<[f64; 4]>>,
}

/// Value and first two derivatives of every channel at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSample {
    pub value: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

/// Fit a natural cubic spline through `values[channel][k]` at `times[k]`.
pub fn fit_natural_cubic(times: &[f64], values: &[Vec<f64>]) -> Result<CubicSplinePath> {
    let n = times.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "a spline needs at least 2 samples, got {n}"
        )));
    }
    if values.is_empty() {
        return Err(Error::InvalidInput("a spline needs at least one channel".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("knot times must be finite".into()));
    }
    if let Some(k) = times.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(format!(
            "knot times must be strictly increasing (t[{}] = {} >= t[{}] = {})",
            k,
            times[k],
            k + 1,
            times[k + 1]
        )));
    }
    for (c, ch) in values.iter().enumerate() {
        if ch.len() != n {
            return Err(Error::dim(format!("spline channel {c}"), n, ch.len()));
        }
    }

    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let coeffs = values.iter().map(|y| fit_channel(&h, y)).collect();
    Ok(CubicSplinePath {
        knots: times.to_vec(),
        coeffs,
    })
}

fn fit_channel(h: &[f64], y: &[f64]) -> Vec<[f64; 4]> {
    let n = y.len();
    let moments = natural_moments(h, y);
    (0..n - 1)
        .map(|i| {
            let hi = h[i];
            let slope = (y[i + 1] - y[i]) / hi;
            [
                y[i],
                slope - hi * (2.0 * moments[i] + moments[i + 1]) / 6.0,
                moments[i] / 2.0,
                (moments[i + 1] - moments[i]) / (6.0 * hi),
            ]
        })
        .collect()
}

/// Second derivatives at the knots: tridiagonal moment system with
/// `M_0 = M_{n-1} = 0`, solved by the Thomas algorithm.
fn natural_moments(h: &[f64], y: &[f64]) -> Vec<f64> {
    let n = y.len();
    let mut m = vec![0.0; n];
    if n < 3 {
        return m;
    }
    let k = n - 2;
    let mut diag = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for j in 0..k {
        let i = j + 1;
        diag[j] = 2.0 * (h[i - 1] + h[i]);
        rhs[j] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
    }
    // sub[j] = h[j] couples row j to j-1, sup[j] = h[j+1] couples row j to j+1
    for j in 1..k {
        let w = h[j] / diag[j - 1];
        diag[j] -= w * h[j];
        rhs[j] -= w * rhs[j - 1];
    }
    m[k] = rhs[k - 1] / diag[k - 1];
    for j in (0..k - 1).rev() {
        m[j + 1] = (rhs[j] - h[j + 1] * m[j + 2]) / diag[j];
    }
    m
}

impl CubicSplinePath {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn channels(&self) -> usize {
        self.coeffs.len()
    }

    pub fn span(&self) -> (f64, f64) {
        (self.knots[0], *self.knots.last().unwrap())
    }

    /// Locate the interval containing `t`, tolerating round-off-sized
    /// overshoot of the endpoints.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (lo, hi) = self.span();
        let slack = 1e-12 * lo.abs().max(hi.abs()).max(hi - lo);
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::OutOfSpan { t, lo, hi });
        }
        let t = t.clamp(lo, hi);
        let last = self.knots.len() - 2;
        let idx = self.knots.partition_point(|&k| k <= t).saturating_sub(1).min(last);
        Ok((idx, t - self.knots[idx]))
    }

    pub fn eval(&self, t: f64) -> Result<SplineSample> {
        let c = self.channels();
        let mut s = SplineSample {
            value: vec![0.0; c],
            d1: vec![0.0; c],
            d2: vec![0.0; c],
        };
        self.eval_into(t, Some(&mut s.value), Some(&mut s.d1), Some(&mut s.d2))?;
        Ok(s)
    }

    pub fn value(&self, t: f64) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.channels()];
        self.eval_into(t, Some(&mut v), None, None)?;
        Ok(v)
    }

    pub fn derivative(&self, t: f64) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.channels()];
        self.eval_into(t, None, Some(&mut v), None)?;
        Ok(v)
    }

    /// Allocation-free evaluation; any output may be skipped.
    pub fn eval_into(
        &self,
        t: f64,
        value: Option<&mut [f64]>,
        d1: Option<&mut [f64]>,
        d2: Option<&mut [f64]>,
    ) -> Result<()> {
        let (i, s) = self.locate(t)?;
        if let Some(out) = value {
            for (o, ch) in out.iter_mut().zip(&self.coeffs) {
                let [a, b, c, d] = ch[i];
                *o = a + s * (b + s * (c + s * d));
            }
        }
        if let Some(out) = d1 {
            for (o, ch) in out.iter_mut().zip(&self.coeffs) {
                let [_, b, c, d] = ch[i];
                *o = b + s * (2.0 * c + 3.0 * s * d);
            }
        }
        if let Some(out) = d2 {
            for (o, ch) in out.iter_mut().zip(&self.coeffs) {
                let [_, _, c, d] = ch[i];
                *o = 2.0 * c + 6.0 * s * d;
            }
        }
        Ok(())
    }

    /// One-sided limits `(d1, d2)` of `channel` at interior knot `k`, taken
    /// from the interval on the left and on the right.
    pub fn knot_limits(&self, channel: usize, k: usize) -> ((f64, f64), (f64, f64)) {
        let ch = &self.coeffs[channel];
        let [_, bl, cl, dl] = ch[k - 1];
        let s = self.knots[k] - self.knots[k - 1];
        let left = (bl + s * (2.0 * cl + 3.0 * s * dl), 2.0 * cl + 6.0 * s * dl);
        let [_, br, cr, _] = ch[k];
        ((left.0, left.1), (br, 2.0 * cr))
    }
}

/// Free-function form of [`CubicSplinePath::eval`].
pub fn spline_eval(path: &CubicSplinePath, t: f64) -> Result<SplineSample> {
    path.eval(t)
}
