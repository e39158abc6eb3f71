//! Deterministic reductions, least squares, tridiagonal solves and splines.

use crate::error::{Error, Result};

const PAIRWISE_BLOCK: usize = 64;

/// Pairwise summation; the result depends only on the input order.
/// Deserializes JSON `null` (how non-finite floats serialize) back to NaN.
pub fn f64_or_nan<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    use serde::Deserialize;
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `Σ w_i f_i` with pairwise reduction.
pub fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), values.len());
    fn rec(w: &[f64], f: &[f64]) -> f64 {
        if w.len() <= PAIRWISE_BLOCK {
            let mut acc = 0.0;
            for (a, b) in w.iter().zip(f) {
                acc += a * b;
            }
            return acc;
        }
        let mid = w.len() / 2;
        rec(&w[..mid], &f[..mid]) + rec(&w[mid..], &f[mid..])
    }
    rec(weights, values)
}

/// Ordinary least-squares line `y = a + b x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Root-mean-square residual.
    pub rms: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidParameter("line fit needs at least two paired points".into()));
    }
    let n = xs.len() as f64;
    let mx = pairwise_sum(xs) / n;
    let my = pairwise_sum(ys) / n;
    let dx: Vec<f64> = xs.iter().map(|x| x - mx).collect();
    let dy: Vec<f64> = ys.iter().map(|y| y - my).collect();
    let sxx = weighted_sum(&dx, &dx);
    if sxx <= 0.0 {
        return Err(Error::InvalidParameter("line fit abscissae are all equal".into()));
    }
    let slope = weighted_sum(&dx, &dy) / sxx;
    let intercept = my - slope * mx;
    let res: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).collect();
    Ok(LineFit { intercept, slope, rms: (pairwise_sum(&res) / n).sqrt() })
}

/// Solves a tridiagonal system in place (Thomas algorithm).
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::InvalidParameter("tridiagonal band lengths differ".into()));
    }
    if n == 0 {
        return Ok(());
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 {
        return Err(Error::InvalidParameter("singular tridiagonal system".into()));
    }
    rhs[0] /= beta;
    for i in 1..n {
        c[i - 1] = upper[i - 1] / beta;
        beta = diag[i] - lower[i] * c[i - 1];
        if beta == 0.0 {
            return Err(Error::InvalidParameter("singular tridiagonal system".into()));
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Piecewise-linear interpolation on strictly increasing nodes, clamped at the ends.
pub fn interp_linear(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let k = xs.partition_point(|&v| v <= x).saturating_sub(1).min(n - 2);
    let t = (x - xs[k]) / (xs[k + 1] - xs[k]);
    ys[k] + t * (ys[k + 1] - ys[k])
}

/// Cubic spline with prescribed end slopes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClampedSpline {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

impl ClampedSpline {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, slope_start: f64, slope_end: f64) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::InvalidParameter("spline needs at least two knots".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidParameter("spline knots must be strictly increasing".into()));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let mut lower = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        diag[0] = h[0] / 3.0;
        upper[0] = h[0] / 6.0;
        rhs[0] = (ys[1] - ys[0]) / h[0] - slope_start;
        for i in 1..n - 1 {
            lower[i] = h[i - 1] / 6.0;
            diag[i] = (h[i - 1] + h[i]) / 3.0;
            upper[i] = h[i] / 6.0;
            rhs[i] = (ys[i + 1] - ys[i]) / h[i] - (ys[i] - ys[i - 1]) / h[i - 1];
        }
        lower[n - 1] = h[n - 2] / 6.0;
        diag[n - 1] = h[n - 2] / 3.0;
        rhs[n - 1] = slope_end - (ys[n - 1] - ys[n - 2]) / h[n - 2];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
        Ok(Self { xs, ys, m: rhs })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().unwrap())
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.xs.len();
        self.xs.partition_point(|&v| v <= x).saturating_sub(1).min(n - 2)
    }

    /// Value and first three derivatives at `x`.
    pub fn eval(&self, x: f64) -> [f64; 4] {
        let k = self.segment(x);
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let h = x1 - x0;
        let (m0, m1) = (self.m[k], self.m[k + 1]);
        let (y0, y1) = (self.ys[k], self.ys[k + 1]);
        let a = x1 - x;
        let b = x - x0;
        let f = m0 * a.powi(3) / (6.0 * h) + m1 * b.powi(3) / (6.0 * h)
            + (y0 / h - m0 * h / 6.0) * a
            + (y1 / h - m1 * h / 6.0) * b;
        let df = -m0 * a * a / (2.0 * h) + m1 * b * b / (2.0 * h) - (y0 / h - m0 * h / 6.0)
            + (y1 / h - m1 * h / 6.0);
        let d2f = m0 * a / h + m1 * b / h;
        let d3f = (m1 - m0) / h;
        [f, df, d2f, d3f]
    }
}
