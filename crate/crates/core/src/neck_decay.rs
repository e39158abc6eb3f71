//! Angular energy, the explicit supersolution on the trapezoidal region
//! `Ω_γ`, comparison checks and decay estimates in necks.
//!
//! On `Ω_γ = {(r, t) ∈ [R, 1] × [0, T) : 1 − t ≤ r^{2γ}}` the function
//!
//! `v = ((1 − t)₊ + r^{2ν})^{ν/2γ} / r^ν + (R/r)^ν + (ν + 1)/(ν² − μ²) · r^μ`
//!
//! satisfies `(∂_t − Δ_ν) v ≥ r^{μ−2}` with `Δ_ν = ∂_r² + r⁻¹∂_r − ν²r⁻²`.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldBundle;
use crate::flow::corotational::CorotationalState;
use crate::geometry::{DomainSpec, SurfaceDomain};
use crate::numerics::solve_tridiagonal;
use crate::scale_monitor::{AnalyzedState, EnergyProbe};
use crate::state::MapState;

type V3 = [f64; 3];

fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `∂_θ u` at node `i` about `p`, with the factor turning `|u_θ|²` into `σ⁻² r⁻² |u_θ|²`.
fn theta_derivative(d: &SurfaceDomain, fb: &FieldBundle, i: usize, p: [f64; 2]) -> Result<(V3, f64)> {
    let s2 = d.sigma2()[i];
    match d.spec() {
        DomainSpec::PolarDisk { .. } => {
            if p[0].hypot(p[1]) > 1e-12 {
                return Err(Error::Unsupported("polar domains measure angles about the origin only".into()));
            }
            // Computational coordinates are (ln r, θ) and σ² already carries r².
            Ok((fb.du[i][1], 1.0 / s2))
        }
        _ => {
            let x = d.displacement(p, d.position(i));
            let [ux, uy] = &fb.du[i];
            let ut = [0, 1, 2].map(|c| -x[1] * ux[c] + x[0] * uy[c]);
            let r2 = x[0] * x[0] + x[1] * x[1];
            Ok((ut, if r2 > 0.0 { 1.0 / (s2 * r2) } else { 0.0 }))
        }
    }
}

/// `f(r) = (∮ |u_θ|² dθ)^{1/2}` on the circle of radius `r` about `p`.
///
/// Uses the native θ-row when `r` is a row radius of a polar grid centred at `p`,
/// otherwise trapezoid quadrature of interpolated derivatives.
pub fn angular_energy(u: &MapState, fb: &FieldBundle, p: [f64; 2], r: f64) -> Result<f64> {
    let d = &*u.domain;
    if !(r > 0.0) {
        return Err(Error::InvalidParameter(format!("radius {r} must be positive")));
    }
    if let DomainSpec::PolarDisk { r_min, .. } = d.spec() {
        if p[0].hypot(p[1]) > 1e-12 {
            return Err(Error::Unsupported("polar domains measure angles about the origin only".into()));
        }
        let row = (r.ln() - r_min.ln()) / d.hx;
        if (row - row.round()).abs() < 1e-9 && row.round() >= 0.0 && (row.round() as usize) < d.nx {
            let i = row.round() as usize;
            let sum: f64 = (0..d.ny).map(|j| {
                let v = fb.du[d.idx(i, j)][1];
                dot(&v, &v)
            }).sum();
            return Ok((sum * d.hy).sqrt());
        }
    }
    let m = ((2.0 * PI * r / d.min_spacing()).ceil() as usize * 2).clamp(64, 1 << 16);
    let mut sum = 0.0;
    for k in 0..m {
        let th = 2.0 * PI * k as f64 / m as f64;
        let x = [p[0] + r * th.cos(), p[1] + r * th.sin()];
        if !d.contains(x) {
            return Err(Error::OutOfDomain(format!("circle of radius {r} about {p:?} leaves the domain")));
        }
        let st = d.interp_stencil(x).ok_or_else(|| Error::OutOfDomain(format!("no stencil at {x:?}")))?;
        // u_θ = −(y − p_y) u_x + (x − p_x) u_y is smooth, so it interpolates like the map.
        let mut v = [0.0; 3];
        for (n, w) in st {
            let (ut, _) = theta_derivative(d, fb, n, p)?;
            for c in 0..3 {
                v[c] += w * ut[c];
            }
        }
        sum += dot(&v, &v);
    }
    Ok((sum * 2.0 * PI / m as f64).sqrt())
}

/// Largest `(|du|² − 2r⁻²|u_θ|² − √2|S|) / max(|du|², 1)` over free interior nodes;
/// nonpositive up to round-off since `|du|² = 2r⁻²|u_θ|² + 2S_rr`.
pub fn radial_energy_defect(u: &MapState, fb: &FieldBundle, p: [f64; 2]) -> Result<f64> {
    let d = &*u.domain;
    let snorm = fb.stress_norm(d);
    let mut worst = f64::NEG_INFINITY;
    for i in 0..d.len() {
        if d.is_fixed(i) || !d.inside(i) {
            continue;
        }
        let (ut, scale) = theta_derivative(d, fb, i, p)?;
        if scale == 0.0 {
            continue;
        }
        let du2 = 2.0 * fb.energy_density[i];
        let defect = du2 - 2.0 * scale * dot(&ut, &ut) - 2f64.sqrt() * snorm[i];
        worst = worst.max(defect / du2.max(1.0));
    }
    Ok(worst)
}

/// Parameters `(γ, ν, μ, R)` of the supersolution on `Ω_γ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupersolutionParams {
    pub gamma: f64,
    pub nu: f64,
    pub mu: f64,
    /// Inner radius `R`.
    pub inner: f64,
}

/// `min[ν, ν²/γ − 3ν + 2]`, the supremum of admissible `μ`.
pub fn mu_upper(gamma: f64, nu: f64) -> f64 {
    nu.min(nu * nu / gamma - 3.0 * nu + 2.0)
}

impl SupersolutionParams {
    pub fn new(gamma: f64, nu: f64, mu: f64, inner: f64) -> Result<Self> {
        let p = Self { gamma, nu, mu, inner };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        if !(self.gamma >= 0.5 && self.gamma < 1.0) {
            e.push(format!("γ = {} must lie in [1/2, 1)", self.gamma));
        }
        if !(self.nu > self.gamma) {
            e.push(format!("empty μ interval: ν = {} must exceed γ = {}", self.nu, self.gamma));
        } else if !(self.nu <= 1.0) {
            e.push(format!("ν = {} must not exceed 1", self.nu));
        }
        let top = mu_upper(self.gamma, self.nu);
        if !(self.nu > self.gamma) {
        } else if !(top > 0.0) {
            e.push(format!("empty μ interval: min[ν, ν²/γ − 3ν + 2] = {top}"));
        } else if !(self.mu > 0.0 && self.mu < top) {
            e.push(format!("μ = {} must lie in (0, {top})", self.mu));
        }
        if !(self.inner > 0.0 && self.inner < 1.0) {
            e.push(format!("R = {} must lie in (0, 1)", self.inner));
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }

    /// `λ^{R,1}_γ(t) = max[R, (1 − t)₊^{1/2γ}]`.
    pub fn inner_boundary(&self, t: f64) -> f64 {
        self.inner.max((1.0 - t).max(0.0).powf(0.5 / self.gamma))
    }

    pub fn contains(&self, r: f64, t: f64) -> bool {
        t >= 0.0 && r <= 1.0 && r >= self.inner_boundary(t) * (1.0 - 1e-12)
    }

    /// `C_{μ,ν} = 3 + (ν + 1)/(ν² − μ²)`: bounds `v` on `∂Ω_γ` and `v/envelope` on `Ω_γ`.
    pub fn constant(&self) -> f64 {
        3.0 + (self.nu + 1.0) / (self.nu * self.nu - self.mu * self.mu)
    }

    /// `(λ^{R,1}_γ(t)/r)^ν + r^{min[μ, ν(ν/γ − 1)]}`.
    pub fn envelope(&self, r: f64, t: f64) -> f64 {
        let expo = self.mu.min(self.nu * (self.nu / self.gamma - 1.0));
        (self.inner_boundary(t) / r).powf(self.nu) + r.powf(expo)
    }

    fn value_unchecked(&self, r: f64, t: f64) -> f64 {
        let (g, n, m) = (self.gamma, self.nu, self.mu);
        let v0 = ((1.0 - t).max(0.0) + r.powf(2.0 * n)).powf(n / (2.0 * g)) / r.powf(n);
        v0 + (self.inner / r).powf(n) + (n + 1.0) / (n * n - m * m) * r.powf(m)
    }
}

/// `v(r, t)` on `Ω_γ`.
pub fn supersolution_value(params: &SupersolutionParams, r: f64, t: f64) -> Result<f64> {
    params.validate()?;
    if !params.contains(r, t) {
        return Err(Error::OutOfDomain(format!("(r, t) = ({r}, {t}) is outside Ω_γ")));
    }
    Ok(params.value_unchecked(r, t))
}

/// Log-uniform radial grid on `[R, 1]` and uniform time grid on `[0, t_max]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmegaGrid {
    pub radii: Vec<f64>,
    pub times: Vec<f64>,
}

impl OmegaGrid {
    pub fn new(inner: f64, n_r: usize, n_t: usize, t_max: f64) -> Result<Self> {
        if n_r < 3 || n_t < 3 {
            return Err(Error::InvalidParameter(format!("Ω_γ grid {n_r}×{n_t} is too small")));
        }
        if !(t_max > 1.0) {
            return Err(Error::InvalidParameter(format!("t_max = {t_max} must exceed 1")));
        }
        let s0 = inner.ln();
        let radii = (0..n_r).map(|j| (s0 * (1.0 - j as f64 / (n_r - 1) as f64)).exp()).collect();
        let times = (0..n_t).map(|k| t_max * k as f64 / (n_t - 1) as f64).collect();
        Ok(Self { radii, times })
    }

    fn h_s(&self) -> f64 {
        (self.radii[1] / self.radii[0]).ln()
    }

    fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }
}

/// Result of the finite-difference supersolution check.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupersolutionReport {
    pub params: SupersolutionParams,
    pub n_r: usize,
    pub n_t: usize,
    /// `min [(∂_t − Δ_ν)v − r^{μ−2}]` over grid nodes in `Ω_γ`.
    pub min_slack: f64,
    pub argmin: [f64; 2],
    /// Smallest slack relative to `r^{μ−2}`.
    pub min_relative_slack: f64,
    pub checked_nodes: usize,
    pub boundary_min: f64,
    pub boundary_sup: f64,
    pub constant: f64,
    /// `max v / (C · envelope)` over the grid; at most 1 when the envelope bound holds.
    pub envelope_ratio: f64,
    pub passed: bool,
    pub tolerance: f64,
}

/// `(∂_t − Δ_ν)v − r^{μ−2}` by finite differences.
///
/// Fourth-order stencils in `s = ln r`, where `Δ_ν = r⁻²(∂_s² − ν²)`, and in `t`.
/// The radial step is the grid step; the time step is the grid step capped at
/// `0.05·((1 − t)₊ + r^{2ν})`, the local time scale. Near `t = 1` only left
/// differences are used, since `v` has a kink there; past it `v` is independent of `t`.
pub fn supersolution_slack_fd(params: &SupersolutionParams, r: f64, t: f64, h_s: f64, dt_grid: f64) -> f64 {
    let v = |r: f64, t: f64| params.value_unchecked(r, t);
    let nu = params.nu;
    let s = r.ln();
    let h = h_s;
    let vs = |k: f64| v((s + k * h).exp(), t);
    let v0 = v(r, t);
    let d2 = (-vs(2.0) + 16.0 * vs(1.0) - 30.0 * v0 + 16.0 * vs(-1.0) - vs(-2.0)) / (12.0 * h * h);
    let lap = (d2 - nu * nu * v0) / (r * r);
    let scale = (1.0 - t).max(0.0) + r.powf(2.0 * nu);
    let dt = dt_grid.min(0.05 * scale);
    let vt_at = |k: f64| v(r, t + k * dt);
    let vt = if t > 1.0 {
        0.0
    } else if t + 2.0 * dt < 1.0 {
        (-vt_at(2.0) + 8.0 * vt_at(1.0) - 8.0 * vt_at(-1.0) + vt_at(-2.0)) / (12.0 * dt)
    } else {
        // `v` has a kink at t = 1; take the left derivative.
        (25.0 * v0 - 48.0 * vt_at(-1.0) + 36.0 * vt_at(-2.0) - 16.0 * vt_at(-3.0) + 3.0 * vt_at(-4.0)) / (12.0 * dt)
    };
    vt - lap - r.powf(params.mu - 2.0)
}

/// Checks `(∂_t − Δ_ν)v ≥ r^{μ−2}` on grid nodes of `Ω_γ`, the boundary bounds
/// `1 ≤ v ≤ C` on `∂Ω_γ` and the envelope `v ≤ C·envelope`.
pub fn verify_supersolution(params: &SupersolutionParams, n_r: usize, n_t: usize, tolerance: f64) -> Result<SupersolutionReport> {
    params.validate()?;
    let grid = OmegaGrid::new(params.inner, n_r, n_t, 1.5)?;
    let (h_s, dt) = (grid.h_s(), grid.dt());
    let c = params.constant();
    let mut rep = SupersolutionReport {
        params: *params,
        n_r,
        n_t,
        min_slack: f64::INFINITY,
        argmin: [f64::NAN; 2],
        min_relative_slack: f64::INFINITY,
        checked_nodes: 0,
        boundary_min: f64::INFINITY,
        boundary_sup: f64::NEG_INFINITY,
        constant: c,
        envelope_ratio: 0.0,
        passed: false,
        tolerance,
    };
    for &t in &grid.times {
        for &r in &grid.radii {
            if !params.contains(r, t) {
                continue;
            }
            let slack = supersolution_slack_fd(params, r, t, h_s, dt);
            rep.checked_nodes += 1;
            if slack < rep.min_slack {
                rep.min_slack = slack;
                rep.argmin = [r, t];
            }
            rep.min_relative_slack = rep.min_relative_slack.min(slack / r.powf(params.mu - 2.0));
            let v = params.value_unchecked(r, t);
            rep.envelope_ratio = rep.envelope_ratio.max(v / (c * params.envelope(r, t)));
        }
        for r in [1.0, params.inner_boundary(t)] {
            let v = params.value_unchecked(r, t);
            rep.boundary_min = rep.boundary_min.min(v);
            rep.boundary_sup = rep.boundary_sup.max(v);
        }
    }
    rep.passed = rep.min_slack >= -tolerance
        && rep.boundary_min >= 1.0 - 1e-12
        && rep.boundary_sup <= c
        && rep.envelope_ratio <= 1.0 + 1e-12;
    Ok(rep)
}

/// Samples of a function on the grid nodes of `Ω_γ`; NaN outside.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OmegaField {
    pub params: SupersolutionParams,
    pub grid: OmegaGrid,
    /// Row-major `[time][radius]`.
    pub values: Vec<f64>,
}

impl OmegaField {
    pub fn from_fn(params: &SupersolutionParams, grid: OmegaGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.times.len() * grid.radii.len());
        for &t in &grid.times {
            for &r in &grid.radii {
                values.push(if params.contains(r, t) { f(r, t) } else { f64::NAN });
            }
        }
        Self { params: *params, grid, values }
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.grid.radii.len() + j]
    }

    /// Whether the node is on the parabolic boundary: `r = 1` or the innermost node in `Ω_γ` at its time.
    pub fn on_boundary(&self, k: usize, j: usize) -> bool {
        let n = self.grid.radii.len();
        if self.get(k, j).is_nan() {
            return false;
        }
        j == n - 1 || j == 0 || self.get(k, j - 1).is_nan()
    }
}

/// Solves `(∂_t − Δ_ν) g = F` on `Ω_γ` by backward Euler in `s = ln r` with
/// Dirichlet data `b` on `r = 1` and on the moving inner boundary.
///
/// A node enters the active set when `Ω_γ` first covers it and takes its
/// boundary value at that time.
pub fn solve_model(
    params: &SupersolutionParams,
    grid: OmegaGrid,
    source: impl Fn(f64, f64) -> f64,
    boundary: impl Fn(f64, f64) -> f64,
) -> Result<OmegaField> {
    params.validate()?;
    let n = grid.radii.len();
    let (h_s, dt) = (grid.h_s(), grid.dt());
    let nu2 = params.nu * params.nu;
    let mut g = vec![f64::NAN; n];
    let mut values = Vec::with_capacity(grid.times.len() * n);
    for (k, &t) in grid.times.iter().enumerate() {
        let first = (0..n).find(|&j| params.contains(grid.radii[j], t)).unwrap_or(n - 1);
        if k == 0 {
            for j in first..n {
                g[j] = boundary(grid.radii[j], t);
            }
        } else {
            // Interior unknowns first+1 ..= n−2; Dirichlet at `first` and `n − 1`.
            for j in first..n {
                if g[j].is_nan() {
                    g[j] = boundary(grid.radii[j], t);
                }
            }
            g[first] = boundary(grid.radii[first], t);
            g[n - 1] = boundary(1.0, t);
            let lo = first + 1;
            if lo < n - 1 {
                let m = n - 1 - lo;
                let (mut a, mut b, mut c, mut rhs) = (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
                for (q, j) in (lo..n - 1).enumerate() {
                    let r = grid.radii[j];
                    let w = dt / (r * r * h_s * h_s);
                    a[q] = -w;
                    c[q] = -w;
                    b[q] = 1.0 + 2.0 * w + dt * nu2 / (r * r);
                    rhs[q] = g[j] + dt * source(r, t);
                    if j == lo {
                        rhs[q] += w * g[first];
                        a[q] = 0.0;
                    }
                    if j == n - 2 {
                        rhs[q] += w * g[n - 1];
                        c[q] = 0.0;
                    }
                }
                solve_tridiagonal(&a, &b, &c, &mut rhs)?;
                g[lo..n - 1].copy_from_slice(&rhs);
            }
        }
        for j in 0..n {
            values.push(if params.contains(grid.radii[j], t) { g[j] } else { f64::NAN });
        }
    }
    Ok(OmegaField { params: *params, grid, values })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub a: f64,
    /// `sup g` over boundary nodes.
    pub boundary_sup: f64,
    /// `max g / (A v)` over boundary nodes; must not exceed 1.
    pub boundary_ratio: f64,
    /// `max g / (A v)` over `Ω_γ`.
    pub supersolution_ratio: f64,
    /// `max g / (C A · envelope)` over `Ω_γ`.
    pub envelope_ratio: f64,
    pub passed: bool,
}

/// Checks the comparison conclusion `g ≤ A v ≤ C A · envelope` for samples
/// of a subsolution. The gate is `g ≤ A v` on the parabolic boundary, which
/// is implied by `g ≤ A` there since `v ≥ 1` on `∂Ω_γ`.
pub fn comparison_check(g: &OmegaField, a: f64, tolerance: f64) -> Result<ComparisonReport> {
    let p = &g.params;
    p.validate()?;
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("A = {a} must be positive")));
    }
    let (nt, nr) = (g.grid.times.len(), g.grid.radii.len());
    let mut bsup = f64::NEG_INFINITY;
    let mut bratio = f64::NEG_INFINITY;
    let mut sratio: f64 = f64::NEG_INFINITY;
    let mut eratio: f64 = f64::NEG_INFINITY;
    for k in 0..nt {
        for j in 0..nr {
            let val = g.get(k, j);
            if val.is_nan() {
                continue;
            }
            let (r, t) = (g.grid.radii[j], g.grid.times[k]);
            let ratio = val / (a * p.value_unchecked(r, t));
            if g.on_boundary(k, j) {
                bsup = bsup.max(val);
                bratio = bratio.max(ratio);
            }
            sratio = sratio.max(ratio);
            eratio = eratio.max(val / (p.constant() * a * p.envelope(r, t)));
        }
    }
    if bratio > 1.0 + tolerance {
        return Err(Error::Precondition(format!(
            "boundary data exceed A·v by a factor {bratio} (A = {a}, boundary sup {bsup})"
        )));
    }
    Ok(ComparisonReport {
        a,
        boundary_sup: bsup,
        boundary_ratio: bratio,
        supersolution_ratio: sratio,
        envelope_ratio: eratio,
        passed: sratio <= 1.0 + tolerance && eratio <= 1.0 + tolerance,
    })
}

/// Pointwise neck data about a centre.
pub trait NeckProbe: EnergyProbe {
    /// `sup |du|` on the circle of radius `r`.
    fn circle_gradient(&self, p: [f64; 2], r: f64) -> Result<f64>;
    fn angular(&self, p: [f64; 2], r: f64) -> Result<f64>;
}

impl NeckProbe for CorotationalState {
    fn circle_gradient(&self, p: [f64; 2], r: f64) -> Result<f64> {
        if p[0].hypot(p[1]) > 1e-12 {
            return Err(Error::Unsupported("corotational states are centred at the origin".into()));
        }
        let g = self.gradient();
        let x = (r / self.dr - 0.5).clamp(0.0, (g.len() - 1) as f64);
        let j = (x.floor() as usize).min(g.len() - 2);
        let w = x - j as f64;
        Ok(g[j] + w * (g[j + 1] - g[j]))
    }

    fn angular(&self, p: [f64; 2], r: f64) -> Result<f64> {
        if p[0].hypot(p[1]) > 1e-12 {
            return Err(Error::Unsupported("corotational states are centred at the origin".into()));
        }
        Ok(self.angular_energy(r))
    }
}

impl NeckProbe for AnalyzedState {
    fn circle_gradient(&self, p: [f64; 2], r: f64) -> Result<f64> {
        let d = &*self.state.domain;
        let m = ((2.0 * PI * r / d.min_spacing()).ceil() as usize * 2).clamp(64, 1 << 16);
        let mut sup: f64 = 0.0;
        for k in 0..m {
            let th = 2.0 * PI * k as f64 / m as f64;
            let x = [p[0] + r * th.cos(), p[1] + r * th.sin()];
            if !d.contains(x) {
                return Err(Error::OutOfDomain(format!("circle of radius {r} about {p:?} leaves the domain")));
            }
            let st = d.interp_stencil(x).ok_or_else(|| Error::OutOfDomain(format!("no stencil at {x:?}")))?;
            let e: f64 = st.iter().map(|(n, w)| w * self.fields.energy_density[*n]).sum();
            sup = sup.max((2.0 * e).sqrt());
        }
        Ok(sup)
    }

    fn angular(&self, p: [f64; 2], r: f64) -> Result<f64> {
        angular_energy(&self.state, &self.fields, p, r)
    }
}

/// Parameters of the neck decay bounds on `R ≤ r ≤ ρ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeckParams {
    pub rho: f64,
    pub epsilon: f64,
    /// `sup ‖S‖_{L^q}` over the window.
    pub sigma: f64,
    pub q: f64,
    pub nu: f64,
    pub gamma: f64,
    /// `sup |∂̄u|` over the window, for the ∂̄-bounded variant.
    pub delta: f64,
}

impl NeckParams {
    pub fn validate(&self) -> Result<()> {
        let mut e = Vec::new();
        if !(self.rho > 0.0) {
            e.push(format!("ρ = {} must be positive", self.rho));
        }
        if !(self.epsilon > 0.0) {
            e.push(format!("ε = {} must be positive", self.epsilon));
        }
        if !(self.sigma >= 0.0 && self.delta >= 0.0) {
            e.push("σ and δ must be nonnegative".into());
        }
        if !(self.q > 1.0) {
            e.push(format!("q = {} must exceed 1", self.q));
        }
        if !(self.gamma >= 0.5 && self.gamma < 1.0 && self.nu > self.gamma && self.nu <= 1.0) {
            e.push(format!("need 1/2 ≤ γ < ν ≤ 1, got γ = {}, ν = {}", self.gamma, self.nu));
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(e))
        }
    }

    /// `(R/r)^ν + (r/ρ)^{ν(ν/γ − 1)}`.
    pub fn profile(&self, inner: f64, r: f64) -> f64 {
        (inner / r).powf(self.nu) + (r / self.rho).powf(self.nu * (self.nu / self.gamma - 1.0))
    }
}

/// Neck samples at one time, with the inner radius `R` in force.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeckFrame {
    pub t: f64,
    pub inner: f64,
    /// `max E(U^r_{r/2})` over the sampled `r ∈ [R, 2ρ]`.
    pub max_annulus_energy: f64,
    /// `(r, r|du|, f)`.
    pub samples: Vec<[f64; 3]>,
}

/// Samples `r|du|` and `f` on `n` log-spaced radii in `[R, ρ]`.
pub fn neck_frame<P: NeckProbe>(probe: &P, p: [f64; 2], inner: f64, rho: f64, n: usize) -> Result<NeckFrame> {
    if !(inner > 0.0 && inner < rho) || n < 2 {
        return Err(Error::InvalidParameter(format!("neck [{inner}, {rho}] with {n} samples")));
    }
    let mut samples = Vec::with_capacity(n);
    let mut max_e: f64 = 0.0;
    for k in 0..n {
        let r = inner * (rho / inner).powf(k as f64 / (n - 1) as f64);
        samples.push([r, r * probe.circle_gradient(p, r)?, probe.angular(p, r)?]);
        if 2.0 * r <= probe.max_radius() {
            max_e = max_e.max(probe.annulus_energy(p, 0.5 * r, r)?);
        }
    }
    if 2.0 * rho <= probe.max_radius() {
        max_e = max_e.max(probe.annulus_energy(p, rho, 2.0 * rho)?);
    }
    Ok(NeckFrame { t: probe.time(), inner, max_annulus_energy: max_e, samples })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeckRow {
    pub t: f64,
    pub r: f64,
    pub f: f64,
    pub r_du: f64,
    /// `√ε((R/r)^ν + (r/ρ)^{ν(ν/γ−1)}) + √σ r^{1−1/q}`.
    pub bound: f64,
    pub ratio: f64,
    /// `√ε((R/r)^ν + (r/ρ)^{ν(ν/γ−1)})`, the angular-energy bound without constant.
    pub f_profile: f64,
}

/// Smallest constants for which the neck bounds hold on all samples.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeckDecayReport {
    pub params: NeckParams,
    /// `r|du| ≤ C(√ε·profile + √σ r^{1−1/q})`.
    pub c_fit: f64,
    /// `r|du| ≤ C(√ε·profile + δ r)`.
    pub c_dbar: f64,
    /// `f ≤ C √ε·profile`.
    pub c_f: f64,
    /// Every frame satisfies the small-annulus-energy hypothesis.
    pub hypothesis_ok: bool,
    pub rows: Vec<NeckRow>,
}

pub fn check_neck_decay(frames: &[NeckFrame], params: &NeckParams) -> Result<NeckDecayReport> {
    params.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidParameter("no neck frames".into()));
    }
    let se = params.epsilon.sqrt();
    let ss = params.sigma.sqrt();
    let mut rep = NeckDecayReport { params: *params, c_fit: 0.0, c_dbar: 0.0, c_f: 0.0, hypothesis_ok: true, rows: Vec::new() };
    for fr in frames {
        rep.hypothesis_ok &= fr.max_annulus_energy <= params.epsilon;
        for &[r, r_du, f] in &fr.samples {
            if r < fr.inner || r > params.rho {
                continue;
            }
            let prof = se * params.profile(fr.inner, r);
            let bound = prof + ss * r.powf(1.0 - 1.0 / params.q);
            let ratio = r_du / bound;
            rep.c_fit = rep.c_fit.max(ratio);
            rep.c_dbar = rep.c_dbar.max(r_du / (prof + params.delta * r));
            rep.c_f = rep.c_f.max(f / prof);
            rep.rows.push(NeckRow { t: fr.t, r, f, r_du, bound, ratio, f_profile: prof });
        }
    }
    Ok(rep)
}

impl NeckDecayReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::io::csv_writer(path, "r: radius; t: time; f: angular energy; r_du: r|du|; bound: decay bound without constant; ratio: r_du/bound; f_profile: angular-energy bound without constant")?;
        w.write_record(["r", "t", "f", "r_du", "bound", "ratio", "f_profile"])?;
        for row in &self.rows {
            w.serialize((row.r, row.t, row.f, row.r_du, row.bound, row.ratio, row.f_profile))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    proptest::proptest! {
        #[test]
        fn mu_interval_is_nonempty_for_admissible_gamma_nu(g in 0.5f64..0.99, frac in 0.01f64..1.0) {
            let nu = g + frac * (1.0 - g);
            proptest::prop_assert!(mu_upper(g, nu) > 0.0);
        }
    }

    #[test]
    fn worked_example_value() {
        let p = SupersolutionParams::new(0.5, 0.9, 0.5, 0.1).unwrap();
        let v = supersolution_value(&p, 1.0, 0.0).unwrap();
        let want = 2f64.powf(0.9) + 0.1f64.powf(0.9) + 1.9 / 0.56;
        assert!((v - want).abs() < 1e-12);
        assert!((v - 5.39).abs() < 0.01);
    }

    #[test]
    fn value_at_t_one_and_at_r_equal_inner() {
        let p = SupersolutionParams::new(0.6, 0.8, 0.3, 0.05).unwrap();
        let r = 0.4;
        let v = supersolution_value(&p, r, 1.0).unwrap();
        let rest = (0.05 / r).powf(0.8) + 1.8 / (0.64 - 0.09) * r.powf(0.3);
        assert!((v - rest - r.powf(0.8 * (0.8 / 0.6 - 1.0))).abs() < 1e-12);
        assert!(((p.inner / p.inner).powf(p.nu) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inadmissible_parameters_are_rejected() {
        assert!(SupersolutionParams::new(0.5, 0.5, 0.1, 0.1).is_err());
        assert!(SupersolutionParams::new(0.5, 0.9, 0.95, 0.1).is_err());
        let err = SupersolutionParams { gamma: 0.7, nu: 0.7, mu: 0.1, inner: 0.1 }.validate().unwrap_err().to_string();
        assert!(err.contains("ν"), "{err}");
        assert!(supersolution_value(&SupersolutionParams::new(0.5, 0.9, 0.5, 0.1).unwrap(), 0.2, 0.0).is_err());
    }
}
