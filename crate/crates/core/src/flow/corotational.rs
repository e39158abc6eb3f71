//! Corotational reduction `u = (h(r), kθ)` on the unit disk.
//!
//! `h_t = h_rr + h_r/r − k² sin(2h)/(2r²)` on the uniform grid `r_j = j Δr`,
//! with `h(0) ∈ πℤ` and `h(R)` held fixed.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SurfaceDomain;
use crate::numerics::{interp_linear, pairwise_sum};
use crate::scale_monitor::{energy_scale, EnergyProbe};
use crate::state::{corotational_point, MapState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorotationalState {
    pub k: i32,
    pub dr: f64,
    /// `h(r_j)` for `j = 0..=n`.
    pub h: Vec<f64>,
    pub t: f64,
}

/// Built-in radial profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialProfile {
    /// `h = h₁ r`.
    Linear { h1: f64 },
    /// `2 arctan(r/s) + (h₁ − 2 arctan(1/s)) r²`: a bubble of scale `s` inside data with `h(1) = h₁`.
    SeededBubble { h1: f64, scale: f64 },
    /// `2 arctan(r/s)`, a static bubble.
    Bubble { scale: f64 },
    /// Tabulated `(r, h)` pairs, linearly interpolated.
    Table { r: Vec<f64>, h: Vec<f64> },
}

impl RadialProfile {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            RadialProfile::Linear { h1 } => h1 * r,
            RadialProfile::SeededBubble { h1, scale } => 2.0 * (r / scale).atan() + (h1 - 2.0 * (1.0 / scale).atan()) * r * r,
            RadialProfile::Bubble { scale } => 2.0 * (r / scale).atan(),
            RadialProfile::Table { r: rs, h } => interp_linear(rs, h, r),
        }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        match self {
            RadialProfile::SeededBubble { scale, .. } | RadialProfile::Bubble { scale } if !(*scale > 0.0) => {
                e.push(format!("profile scale {scale} must be positive"))
            }
            RadialProfile::Table { r, h } => {
                if r.len() < 2 || r.len() != h.len() {
                    e.push("profile table needs matching r and h columns with at least two rows".into());
                } else if r.windows(2).any(|w| w[1] <= w[0]) {
                    e.push("profile table radii must increase".into());
                } else if r[0] > 0.0 || *r.last().unwrap() < 1.0 {
                    e.push("profile table must cover [0, 1]".into());
                }
            }
            _ => {}
        }
        e
    }
}

impl CorotationalState {
    /// Samples `h` on `n` cells of `[0, 1]`; `h(0)` is snapped to the nearest multiple of π.
    pub fn from_fn(n: usize, k: i32, h: impl Fn(f64) -> f64) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidParameter(format!("radial grid of {n} cells is too small")));
        }
        let dr = 1.0 / n as f64;
        let mut hv: Vec<f64> = (0..=n).map(|j| h(j as f64 * dr)).collect();
        hv[0] = PI * (hv[0] / PI).round();
        if hv.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { node: hv.iter().position(|x| !x.is_finite()).unwrap(), what: "radial profile" });
        }
        Ok(Self { k, dr, h: hv, t: 0.0 })
    }

    pub fn from_profile(n: usize, k: i32, profile: &RadialProfile) -> Result<Self> {
        Self::from_fn(n, k, |r| profile.eval(r))
    }

    pub fn cells(&self) -> usize {
        self.h.len() - 1
    }

    pub fn radius(&self, j: usize) -> f64 {
        j as f64 * self.dr
    }

    /// Linear interpolation of `h`.
    pub fn h_at(&self, r: f64) -> f64 {
        let x = (r / self.dr).clamp(0.0, self.cells() as f64);
        let j = (x.floor() as usize).min(self.cells() - 1);
        let t = x - j as f64;
        self.h[j] + t * (self.h[j + 1] - self.h[j])
    }

    fn cell_terms(&self, j: usize) -> (f64, f64, f64) {
        let hr = (self.h[j + 1] - self.h[j]) / self.dr;
        let rm = (j as f64 + 0.5) * self.dr;
        let s = self.k as f64 * (0.5 * (self.h[j] + self.h[j + 1])).sin() / rm;
        (hr, s, rm)
    }

    /// Per-cell energies `π (h_r² + k² sin²h / r²) r Δr` by the midpoint rule.
    pub fn cell_energies(&self) -> Vec<f64> {
        (0..self.cells())
            .map(|j| {
                let (hr, s, rm) = self.cell_terms(j);
                PI * (hr * hr + s * s) * rm * self.dr
            })
            .collect()
    }

    /// `[E, E_∂, E_∂̄]` with `E_∂ = (π/2)∫(h_r + k sin h/r)² r dr`.
    pub fn energies(&self) -> [f64; 3] {
        let (mut a, mut b) = (Vec::with_capacity(self.cells()), Vec::with_capacity(self.cells()));
        for j in 0..self.cells() {
            let (hr, s, rm) = self.cell_terms(j);
            a.push(0.5 * PI * (hr + s).powi(2) * rm * self.dr);
            b.push(0.5 * PI * (hr - s).powi(2) * rm * self.dr);
        }
        let (ea, eb) = (pairwise_sum(&a), pairwise_sum(&b));
        [ea + eb, ea, eb]
    }

    /// Nodal energy `π Σ r_{j+½}(Δh)²/Δr + π k² Σ_j w_j sin²h_j Δr / r_j`
    /// (trapezoid weights `w_j`, end node `r = 0` dropped since `sin h(0) = 0`).
    ///
    /// The radial stencil is its gradient flow in the `2πr Δr` inner product,
    /// so explicit steps within the stability limit never increase it.
    pub fn variational_energy(&self) -> f64 {
        let n = self.cells();
        let k2 = (self.k as f64).powi(2);
        let mut terms = Vec::with_capacity(2 * n);
        for j in 0..n {
            let dh = self.h[j + 1] - self.h[j];
            terms.push(PI * (j as f64 + 0.5) * dh * dh);
        }
        for j in 1..=n {
            let w = if j == n { 0.5 } else { 1.0 };
            terms.push(PI * k2 * w * self.h[j].sin().powi(2) / j as f64);
        }
        pairwise_sum(&terms)
    }

    /// `κ = 2πk (cos h(0) − cos h(R))`.
    pub fn kappa_exact(&self) -> f64 {
        2.0 * PI * self.k as f64 * (self.h[0].cos() - self.h[self.cells()].cos())
    }

    /// Cumulative ball energies at the nodes.
    pub fn cumulative_energy(&self) -> Vec<f64> {
        let cells = self.cell_energies();
        let mut cum = Vec::with_capacity(cells.len() + 1);
        let mut acc = 0.0;
        cum.push(0.0);
        for c in cells {
            acc += c;
            cum.push(acc);
        }
        cum
    }

    /// `|du|` at cell midpoints.
    pub fn gradient(&self) -> Vec<f64> {
        (0..self.cells())
            .map(|j| {
                let (hr, s, _) = self.cell_terms(j);
                (hr * hr + s * s).sqrt()
            })
            .collect()
    }

    /// `|∂̄u| = ½|h_r − k sin h / r|` at cell midpoints.
    pub fn dbar(&self) -> Vec<f64> {
        (0..self.cells())
            .map(|j| {
                let (hr, s, _) = self.cell_terms(j);
                0.5 * (hr - s).abs()
            })
            .collect()
    }

    /// `‖S‖_{L²}` with `|S| = ½√2 |h_r² − k² sin²h / r²|`.
    pub fn stress_l2(&self) -> f64 {
        let v: Vec<f64> = (0..self.cells())
            .map(|j| {
                let (hr, s, rm) = self.cell_terms(j);
                2.0 * PI * 0.5 * (hr * hr - s * s).powi(2) * rm * self.dr
            })
            .collect();
        pairwise_sum(&v).sqrt()
    }

    /// Angular energy `(∮|u_θ|²)^{1/2} = √(2π) |k sin h(r)|`.
    pub fn angular_energy(&self, r: f64) -> f64 {
        (2.0 * PI).sqrt() * (self.k as f64 * self.h_at(r).sin()).abs()
    }

    /// Largest change of `h` across a cell.
    pub fn max_jump(&self) -> f64 {
        self.h.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }

    /// Full 2D state of the lift `(h(r), kθ)`.
    pub fn lift(&self, domain: &SurfaceDomain) -> MapState {
        let mut u = MapState::from_fn(domain, |p| {
            let r = p[0].hypot(p[1]);
            corotational_point(self.h_at(r), self.k, p[1].atan2(p[0]))
        });
        u.t = self.t;
        u
    }

    pub fn report(&self) -> RadialReport {
        let [e, eh, eb] = self.energies();
        RadialReport {
            t: self.t,
            energy: e,
            variational_energy: self.variational_energy(),
            e_holo: eh,
            e_antiholo: eb,
            kappa: eh - eb,
            sup_du: self.gradient().into_iter().fold(0.0, f64::max),
            sup_dbar: self.dbar().into_iter().fold(0.0, f64::max),
            stress_l2: self.stress_l2(),
        }
    }
}

impl EnergyProbe for CorotationalState {
    fn time(&self) -> f64 {
        self.t
    }

    fn ball_energy(&self, center: [f64; 2], radius: f64) -> Result<f64> {
        require_origin(center)?;
        let cum = self.cumulative_energy();
        Ok(cum_at(self, &cum, radius))
    }

    fn annulus_energy(&self, center: [f64; 2], inner: f64, outer: f64) -> Result<f64> {
        require_origin(center)?;
        if !(outer > inner && inner >= 0.0) {
            return Err(Error::EmptyRegion(format!("annulus ({inner}, {outer})")));
        }
        let cum = self.cumulative_energy();
        Ok(cum_at(self, &cum, outer) - cum_at(self, &cum, inner))
    }

    fn sup_gradient(&self, center: [f64; 2], radius: f64) -> Result<f64> {
        require_origin(center)?;
        let g = self.gradient();
        Ok(g.iter().enumerate().filter(|(j, _)| (*j as f64 + 0.5) * self.dr <= radius).map(|(_, v)| *v).fold(0.0, f64::max))
    }

    fn scale_floor(&self) -> f64 {
        2.0 * self.dr
    }

    fn max_radius(&self) -> f64 {
        self.cells() as f64 * self.dr
    }
}

fn require_origin(center: [f64; 2]) -> Result<()> {
    if center[0].hypot(center[1]) > 1e-12 {
        return Err(Error::Unsupported("corotational states are centred at the origin".into()));
    }
    Ok(())
}

fn cum_at(s: &CorotationalState, cum: &[f64], r: f64) -> f64 {
    let x = (r / s.dr).clamp(0.0, s.cells() as f64);
    let j = (x.floor() as usize).min(s.cells() - 1);
    let t = x - j as f64;
    cum[j] + t * (cum[j + 1] - cum[j])
}

/// Integrated quantities of a radial state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialReport {
    pub t: f64,
    /// Midpoint-rule energy.
    pub energy: f64,
    /// Nodal energy dissipated exactly by the scheme.
    pub variational_energy: f64,
    pub e_holo: f64,
    pub e_antiholo: f64,
    pub kappa: f64,
    pub sup_du: f64,
    pub sup_dbar: f64,
    pub stress_l2: f64,
}

fn d_safety() -> f64 {
    0.5
}
fn d_jump() -> f64 {
    1.0
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorotationalConfig {
    #[serde(default = "d_safety")]
    pub dt_safety: f64,
    pub t_max: f64,
    /// Time between reports.
    pub report_interval: f64,
    /// Time between stored snapshots; 0 disables periodic snapshots.
    #[serde(default)]
    pub snapshot_interval: f64,
    /// Blowup when some cell jump `|Δh|` exceeds this.
    #[serde(default = "d_jump")]
    pub blowup_jump: f64,
    #[serde(default = "d_true")]
    pub stop_on_blowup: bool,
    #[serde(default)]
    pub restart_after_blowup: bool,
    /// `(ε, ρ)` of the monitored energy scale at the origin; a snapshot is kept whenever it changes.
    #[serde(default)]
    pub scale: Option<(f64, f64)>,
}

impl CorotationalConfig {
    pub fn new(t_max: f64, report_interval: f64) -> Self {
        serde_json::from_value(serde_json::json!({ "t_max": t_max, "report_interval": report_interval }))
            .expect("defaults deserialize")
    }

    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            e.push(format!("corotational.dt_safety = {} must lie in (0, 1]", self.dt_safety));
        }
        if !(self.t_max > 0.0) {
            e.push(format!("corotational.t_max = {} must be positive", self.t_max));
        }
        if !(self.report_interval > 0.0) {
            e.push(format!("corotational.report_interval = {} must be positive", self.report_interval));
        }
        if !(self.blowup_jump > 0.0) {
            e.push("corotational.blowup_jump must be positive".into());
        }
        e
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CorotationalTrace {
    pub reports: Vec<RadialReport>,
    /// Energy scale at each report, when monitored.
    pub lambdas: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<CorotationalState>,
    /// Detection time of the singularity.
    pub blowup_time: Option<f64>,
    /// Energy scale at the last report before detection.
    pub lambda_at_blowup: Option<f64>,
    pub restarts: Vec<super::RestartRecord>,
    pub restart_policy: String,
    pub steps: u64,
    pub dt: f64,
}

/// Explicit step `h ← h + dt·(h_rr + h_r/r − k² sin 2h/(2r²))` on interior nodes.
pub fn step_corotational(s: &mut CorotationalState, dt: f64, scratch: &mut Vec<f64>) {
    RadialKernel::new(s, dt).step(s, scratch);
}

/// Precomputed coefficients of the explicit radial update
/// `h_j ← A_j h_{j+1} + B_j h_{j−1} + D h_j − C_j sin 2h_j`.
struct RadialKernel {
    dt: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    diag: f64,
}

impl RadialKernel {
    fn new(s: &CorotationalState, dt: f64) -> Self {
        let n = s.cells();
        let inv2 = 1.0 / (s.dr * s.dr);
        let k2 = (s.k * s.k) as f64;
        let mut a = vec![0.0; n + 1];
        let mut b = vec![0.0; n + 1];
        let mut c = vec![0.0; n + 1];
        for j in 1..n {
            let r = j as f64 * s.dr;
            a[j] = dt * (inv2 + 0.5 / (s.dr * r));
            b[j] = dt * (inv2 - 0.5 / (s.dr * r));
            c[j] = dt * 0.5 * k2 / (r * r);
        }
        Self { dt, a, b, c, diag: 1.0 - 2.0 * dt * inv2 }
    }

    /// Advances one step and returns the largest cell jump `|Δh|` of the result.
    fn step(&self, s: &mut CorotationalState, scratch: &mut Vec<f64>) -> f64 {
        let n = s.cells();
        scratch.resize(n + 1, 0.0);
        scratch[0] = s.h[0];
        scratch[n] = s.h[n];
        let h = &s.h[..];
        let out = &mut scratch[1..n];
        let (a, b, c) = (&self.a[1..n], &self.b[1..n], &self.c[1..n]);
        let mut prev = s.h[0];
        let mut jump: f64 = 0.0;
        for (m, o) in out.iter_mut().enumerate() {
            let (hm, h0, hp) = (h[m], h[m + 1], h[m + 2]);
            *o = a[m] * hp + b[m] * hm + self.diag * h0 - c[m] * (2.0 * h0).sin();
            jump = jump.max((*o - prev).abs());
            prev = *o;
        }
        jump = jump.max((s.h[n] - prev).abs());
        std::mem::swap(&mut s.h, scratch);
        s.t += self.dt;
        jump
    }
}

/// Stable step `dt_safety Δr²/2`.
pub fn corotational_dt(s: &CorotationalState, dt_safety: f64) -> f64 {
    dt_safety * 0.5 * s.dr * s.dr
}

/// Integrates a radial state, recording reports, scales and snapshots.
pub fn run_corotational(s0: &CorotationalState, cfg: &CorotationalConfig) -> Result<CorotationalTrace> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let mut s = s0.clone();
    let dt = corotational_dt(&s, cfg.dt_safety);
    let mut tr = CorotationalTrace { restart_policy: super::RESTART_POLICY.into(), dt, ..Default::default() };
    let mut scratch = Vec::with_capacity(s.h.len());
    let kernel = RadialKernel::new(&s, dt);
    let lambda_of = |s: &CorotationalState| -> Result<Option<f64>> {
        match cfg.scale {
            Some((eps, rho)) => Ok(Some(energy_scale(s, eps, rho, [0.0; 2])?)),
            None => Ok(None),
        }
    };
    let mut last_lambda = lambda_of(&s)?;
    tr.reports.push(s.report());
    if let Some(l) = last_lambda {
        tr.lambdas.push(l);
    }
    tr.snapshots.push(s.clone());
    let steps_per_report = ((cfg.report_interval / dt).round() as u64).max(1);
    let mut next_snapshot = cfg.snapshot_interval;
    let mut since_report = 0u64;
    while s.t < cfg.t_max {
        let jump = kernel.step(&mut s, &mut scratch);
        tr.steps += 1;
        since_report += 1;
        let blown = jump > cfg.blowup_jump;
        if since_report < steps_per_report && !blown && s.t < cfg.t_max {
            continue;
        }
        since_report = 0;
        if blown {
            if tr.blowup_time.is_none() {
                tr.blowup_time = Some(s.t);
                tr.lambda_at_blowup = last_lambda;
            }
            tr.snapshots.push(s.clone());
            if cfg.restart_after_blowup {
                let before = s.energies()[0];
                let radius = (4.0 * last_lambda.unwrap_or(0.0)).max(4.0 * s.dr);
                restart_radial(&mut s, radius);
                tr.restarts.push(super::RestartRecord {
                    t: s.t,
                    center: [0.0; 2],
                    radius,
                    energy_before: before,
                    energy_after: s.energies()[0],
                });
                tr.snapshots.push(s.clone());
                last_lambda = lambda_of(&s)?;
                continue;
            }
            if cfg.stop_on_blowup {
                break;
            }
        }
        let l = lambda_of(&s)?;
        tr.reports.push(s.report());
        if let Some(v) = l {
            tr.lambdas.push(v);
        }
        let periodic = cfg.snapshot_interval > 0.0 && s.t >= next_snapshot;
        if l != last_lambda || periodic {
            tr.snapshots.push(s.clone());
            while cfg.snapshot_interval > 0.0 && next_snapshot <= s.t {
                next_snapshot += cfg.snapshot_interval;
            }
        }
        last_lambda = l;
    }
    if tr.snapshots.last().map(|x| x.t) != Some(s.t) {
        tr.snapshots.push(s.clone());
    }
    Ok(tr)
}

/// Body-map proxy: inside `r < a` replace `h` by the radial harmonic
/// extension `mπ + (h(a) − mπ)(r/a)^k`, with `mπ` the nearest pole value.
pub fn restart_radial(s: &mut CorotationalState, a: f64) {
    let ha = s.h_at(a);
    let m = PI * (ha / PI).round();
    let k = s.k.unsigned_abs() as i32;
    for j in 0..=s.cells() {
        let r = s.radius(j);
        if r < a {
            s.h[j] = m + (ha - m) * (r / a).powi(k.max(1));
        }
    }
    s.h[0] = m;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_profile_is_stationary() {
        let mut s = CorotationalState::from_fn(64, 1, |_| 0.0).unwrap();
        let mut sc = Vec::new();
        for _ in 0..100 {
            step_corotational(&mut s, 1e-5, &mut sc);
        }
        assert!(s.h.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn bubble_energy_matches_closed_form() {
        // E(2 arctan(r/s), B_1) = 4π/(1 + s²); E_∂̄ = 0; κ = E.
        let s = CorotationalState::from_profile(4096, 1, &RadialProfile::Bubble { scale: 0.5 }).unwrap();
        let [e, eh, eb] = s.energies();
        let exact = 4.0 * PI / 1.25;
        assert!((e - exact).abs() < 1e-5 * exact, "{e} vs {exact}");
        assert!(eb < 1e-6);
        assert!((eh - eb - s.kappa_exact()).abs() < 1e-5);
    }

    #[test]
    fn annulus_energy_is_cumulative_difference() {
        let s = CorotationalState::from_profile(512, 1, &RadialProfile::SeededBubble { h1: 1.5 * PI, scale: 0.1 }).unwrap();
        let a = s.annulus_energy([0.0; 2], 0.1, 0.3).unwrap();
        let b = s.ball_energy([0.0; 2], 0.3).unwrap() - s.ball_energy([0.0; 2], 0.1).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(s.annulus_energy([0.1, 0.0], 0.1, 0.3).is_err());
    }

    #[test]
    fn restart_removes_the_bubble_energy() {
        let mut s = CorotationalState::from_profile(2048, 1, &RadialProfile::Bubble { scale: 0.01 }).unwrap();
        let before = s.energies()[0];
        restart_radial(&mut s, 0.05);
        let after = s.energies()[0];
        assert!(before - after > 0.9 * 4.0 * PI * (1.0 - 0.04), "{before} {after}");
        assert_eq!(s.h[0], PI);
    }
}
