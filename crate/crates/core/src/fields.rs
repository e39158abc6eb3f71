//! Discrete differential calculus on map states.
//!
//! Conventions. The target complex structure is `J v = n × v` with `n = u` on
//! the round sphere and `n = e_z` in the orthonormal frame `(∂_ψ, φ⁻¹∂_θ)` of a
//! warped sphere. With `g = σ²|dz|²`,
//!
//! * `e   = ½ σ⁻² (|u_x|² + |u_y|²)`
//! * `e_∂ = ¼ σ⁻² |u_x − J u_y|²`, `e_∂̄ = ¼ σ⁻² |u_x + J u_y|²`
//! * `Φ   = ¼(|u_x|² − |u_y|²) − ½ i ⟨u_x, u_y⟩`, the `dz⊗dz` coefficient
//! * `S   = ⟨du⊗du⟩ − ½|du|² g = 2 Re(Φ dz⊗dz)`
//!
//! so that `E = E_∂ + E_∂̄` and `κ = E_∂ − E_∂̄ = 4π deg(u)` for maps of the
//! sphere.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SurfaceDomain, TargetMetric};
use crate::numerics::weighted_sum;
use crate::state::{chart_from_sphere, wrap_angle, MapState};

type V3 = [f64; 3];

#[inline]
fn dot(a: &V3, b: &V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross(a: &V3, b: &V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
fn axpy(a: f64, x: &V3, y: &V3) -> V3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

#[inline]
fn project(n: &V3, v: &V3) -> V3 {
    axpy(-dot(n, v), n, v)
}

/// First derivative along `axis` from value differences relative to the node.
/// Centered where both neighbours exist, one-sided second order otherwise.
pub(crate) fn derivative<const N: usize>(
    d: &SurfaceDomain,
    idx: usize,
    axis: usize,
    delta: &impl Fn(usize, usize) -> [f64; N],
) -> [f64; N] {
    let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
    let h = if axis == 0 { d.hx } else { d.hy };
    let fwd = d.neighbor(idx, di, dj);
    let bwd = d.neighbor(idx, -di, -dj);
    let mut out = [0.0; N];
    match (fwd, bwd) {
        (Some(f), Some(b)) => {
            let (a, c) = (delta(idx, f), delta(idx, b));
            for k in 0..N {
                out[k] = (a[k] - c[k]) / (2.0 * h);
            }
        }
        (Some(f), None) => {
            let f2 = d.neighbor(idx, 2 * di, 2 * dj).expect("grid too small for one-sided stencil");
            let (a, c) = (delta(idx, f), delta(idx, f2));
            for k in 0..N {
                out[k] = (4.0 * a[k] - c[k]) / (2.0 * h);
            }
        }
        (None, Some(b)) => {
            let b2 = d.neighbor(idx, -2 * di, -2 * dj).expect("grid too small for one-sided stencil");
            let (a, c) = (delta(idx, b), delta(idx, b2));
            for k in 0..N {
                out[k] = (-4.0 * a[k] + c[k]) / (2.0 * h);
            }
        }
        (None, None) => {}
    }
    out
}

/// Five-point Laplacian in computational coordinates (not scaled by `σ⁻²`);
/// zero where a neighbour is missing.
pub(crate) fn coordinate_laplacian<const N: usize>(
    d: &SurfaceDomain,
    idx: usize,
    delta: &impl Fn(usize, usize) -> [f64; N],
) -> [f64; N] {
    let mut out = [0.0; N];
    for (axis, h) in [(0usize, d.hx), (1, d.hy)] {
        let (di, dj) = if axis == 0 { (1, 0) } else { (0, 1) };
        let (Some(f), Some(b)) = (d.neighbor(idx, di, dj), d.neighbor(idx, -di, -dj)) else {
            return [0.0; N];
        };
        let (a, c) = (delta(idx, f), delta(idx, b));
        for k in 0..N {
            out[k] += (a[k] + c[k]) / (h * h);
        }
    }
    out
}

fn scalar_delta(f: &[f64]) -> impl Fn(usize, usize) -> [f64; 1] + '_ {
    move |a, b| [f[b] - f[a]]
}

/// Value differences in the representation of the target.
fn value_delta(u: &MapState) -> impl Fn(usize, usize) -> V3 + '_ {
    let warped = matches!(*u.target, TargetMetric::Warped(_));
    move |a, b| {
        let (x, y) = (u.values[a], u.values[b]);
        if warped {
            [y[0] - x[0], wrap_angle(y[1] - x[1]), 0.0]
        } else {
            [y[0] - x[0], y[1] - x[1], y[2] - x[2]]
        }
    }
}

/// Per-node differential data of a map state.
#[derive(Clone, Debug, Default)]
pub struct FieldBundle {
    /// `[u_x, u_y]` as tangent vectors (ambient for the round sphere, frame components when warped).
    pub du: Vec<[V3; 2]>,
    /// Unit normal defining `J = n ×`.
    pub normal: Vec<V3>,
    pub energy_density: Vec<f64>,
    pub e_holo: Vec<f64>,
    pub e_antiholo: Vec<f64>,
    /// Hopf coefficient from the tangent vectors.
    pub hopf: Option<Vec<Complex64>>,
    /// Hopf coefficient `ρ² w_z conj(w_z̄)` computed in a stereographic chart.
    pub hopf_chart: Option<Vec<Complex64>>,
    /// Direct stress `[S_xx, S_xy, S_yy]` in computational coordinates.
    pub stress: Option<Vec<[f64; 3]>>,
    /// Stress assembled as `2 Re Φ` from the chart coefficient.
    pub stress_from_hopf: Option<Vec<[f64; 3]>>,
    /// `max |S_direct − 2 Re Φ|` over interior nodes.
    pub stress_discrepancy: Option<f64>,
    pub tension: Option<Vec<V3>>,
}

impl FieldBundle {
    /// `du` by centered differences and the energy densities.
    pub fn compute(u: &MapState) -> Result<Self> {
        let d = &*u.domain;
        let sigma2 = d.sigma2();
        let delta = value_delta(u);
        let warp = match &*u.target {
            TargetMetric::Warped(p) => Some(p),
            TargetMetric::RoundSphere => None,
        };
        let per_node: Vec<([V3; 2], V3)> = (0..d.len())
            .into_par_iter()
            .map(|i| {
                let raw = [derivative(d, i, 0, &delta), derivative(d, i, 1, &delta)];
                match warp {
                    None => {
                        let n = u.values[i];
                        ([project(&n, &raw[0]), project(&n, &raw[1])], n)
                    }
                    Some(p) => {
                        let phi = p.eval(u.values[i][0])[0];
                        ([[raw[0][0], phi * raw[0][1], 0.0], [raw[1][0], phi * raw[1][1], 0.0]], [0.0, 0.0, 1.0])
                    }
                }
            })
            .collect();
        let mut fb = FieldBundle {
            du: Vec::with_capacity(d.len()),
            normal: Vec::with_capacity(d.len()),
            ..Default::default()
        };
        for (du, n) in per_node {
            fb.du.push(du);
            fb.normal.push(n);
        }
        let dens: Vec<(f64, f64, f64)> = (0..d.len())
            .into_par_iter()
            .map(|i| {
                let [ux, uy] = &fb.du[i];
                let n = &fb.normal[i];
                let juy = cross(n, uy);
                let s = 1.0 / sigma2[i];
                let minus = axpy(-1.0, &juy, ux);
                let plus = axpy(1.0, &juy, ux);
                (0.5 * s * (dot(ux, ux) + dot(uy, uy)), 0.25 * s * dot(&minus, &minus), 0.25 * s * dot(&plus, &plus))
            })
            .collect();
        for (i, (e, a, b)) in dens.into_iter().enumerate() {
            if !(e.is_finite() && a.is_finite() && b.is_finite()) {
                return Err(Error::NonFinite { node: i, what: "energy density" });
            }
            fb.energy_density.push(e);
            fb.e_holo.push(a);
            fb.e_antiholo.push(b);
        }
        Ok(fb)
    }

    /// Everything: differential, Hopf and stress by both routes, tension.
    pub fn full(u: &MapState) -> Result<Self> {
        let mut fb = Self::compute(u)?;
        fb.hopf_and_stress(u);
        fb.tension = Some(tension(u)?);
        Ok(fb)
    }

    /// Fills the Hopf coefficient and the stress by the direct and the chart routes.
    pub fn hopf_and_stress(&mut self, u: &MapState) {
        let d = &*u.domain;
        let hopf: Vec<Complex64> = self
            .du
            .iter()
            .map(|[ux, uy]| Complex64::new(0.25 * (dot(ux, ux) - dot(uy, uy)), -0.5 * dot(ux, uy)))
            .collect();
        let stress: Vec<[f64; 3]> = self
            .du
            .iter()
            .map(|[ux, uy]| {
                let half = 0.5 * (dot(ux, ux) + dot(uy, uy));
                [dot(ux, ux) - half, dot(ux, uy), dot(uy, uy) - half]
            })
            .collect();
        let chart: Vec<Complex64> = match &*u.target {
            TargetMetric::RoundSphere => (0..d.len()).into_par_iter().map(|i| chart_hopf(u, i)).collect(),
            TargetMetric::Warped(p) => {
                let delta = value_delta(u);
                (0..d.len())
                    .into_par_iter()
                    .map(|i| {
                        let [px, tx, _] = derivative(d, i, 0, &delta);
                        let [py, ty, _] = derivative(d, i, 1, &delta);
                        let phi = p.eval(u.values[i][0])[0];
                        let psi_z = 0.5 * Complex64::new(px, -py);
                        let th_z = 0.5 * Complex64::new(tx, -ty);
                        psi_z * psi_z + phi * phi * th_z * th_z
                    })
                    .collect()
            }
        };
        let from_hopf: Vec<[f64; 3]> = chart.iter().map(|p| [2.0 * p.re, -2.0 * p.im, -2.0 * p.re]).collect();
        let mut disc: f64 = 0.0;
        for i in 0..d.len() {
            if d.inside(i) && !d.is_fixed(i) {
                for c in 0..3 {
                    disc = disc.max((stress[i][c] - from_hopf[i][c]).abs());
                }
            }
        }
        self.hopf = Some(hopf);
        self.hopf_chart = Some(chart);
        self.stress = Some(stress);
        self.stress_from_hopf = Some(from_hopf);
        self.stress_discrepancy = Some(disc);
    }

    /// `|S|_g = σ⁻² (S_xx² + S_yy² + 2 S_xy²)^{1/2}` from the tangent vectors.
    pub fn stress_norm(&self, d: &SurfaceDomain) -> Vec<f64> {
        let s2 = d.sigma2();
        self.du
            .iter()
            .enumerate()
            .map(|(i, [ux, uy])| {
                let a = 0.5 * (dot(ux, ux) - dot(uy, uy));
                let b = dot(ux, uy);
                (2.0 * a * a + 2.0 * b * b).sqrt() / s2[i]
            })
            .collect()
    }

    /// `σ⁻²(κ density)`, i.e. `e_∂ − e_∂̄ = σ⁻² n·(u_x × u_y)`.
    pub fn kappa_density(&self) -> Vec<f64> {
        self.e_holo.iter().zip(&self.e_antiholo).map(|(a, b)| a - b).collect()
    }

    pub fn energy_report(&mut self, u: &MapState, q: f64) -> Result<EnergyReport> {
        let d = &*u.domain;
        if self.tension.is_none() {
            self.tension = Some(tension(u)?);
        }
        let tau = self.tension.as_ref().unwrap();
        // Frame components are orthonormal, so the target norm is Euclidean.
        let tau2: Vec<f64> = tau.iter().map(|t| dot(t, t)).collect();
        let snorm = self.stress_norm(d);
        let sq: Vec<f64> = snorm.iter().map(|s| s.powf(q)).collect();
        let e_holo = d.integrate(&self.e_holo);
        let e_anti = d.integrate(&self.e_antiholo);
        let mut sup_du: f64 = 0.0;
        let mut sup_dbar: f64 = 0.0;
        for i in 0..d.len() {
            if d.inside(i) {
                sup_du = sup_du.max((2.0 * self.energy_density[i]).sqrt());
                sup_dbar = sup_dbar.max(self.e_antiholo[i].sqrt());
            }
        }
        Ok(EnergyReport {
            t: u.t,
            energy: d.integrate(&self.energy_density),
            variational_energy: variational_energy(u),
            e_holo,
            e_antiholo: e_anti,
            kappa: e_holo - e_anti,
            sup_du,
            sup_dbar,
            stress_lq: d.integrate(&sq).powf(1.0 / q),
            tension_l2_sq: d.integrate(&tau2),
        })
    }

    /// Maximum of `|e_∂ + e_∂̄ − ½|du|²|` against an independent `|du|²`.
    pub fn splitting_defect(&self, d: &SurfaceDomain) -> f64 {
        let s2 = d.sigma2();
        (0..self.du.len())
            .map(|i| {
                let [ux, uy] = &self.du[i];
                let half = 0.5 * (ux.iter().map(|x| x * x).sum::<f64>() + uy.iter().map(|x| x * x).sum::<f64>()) / s2[i];
                (self.e_holo[i] + self.e_antiholo[i] - half).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|S| / (4√(e_∂ e_∂̄))` with the convention `0/0 = 0`.
    pub fn stress_bound_ratio(&self, d: &SurfaceDomain) -> f64 {
        let s = self.stress_norm(d);
        let mut worst: f64 = 0.0;
        for i in 0..s.len() {
            let bound = 4.0 * (self.e_holo[i] * self.e_antiholo[i]).sqrt();
            if s[i] > 0.0 {
                worst = worst.max(if bound > 0.0 { s[i] / bound } else { f64::INFINITY });
            }
        }
        worst
    }

    /// Per-node CSV rows: position, densities, stress and tension magnitude.
    pub fn write_csv(&self, u: &MapState, path: &std::path::Path) -> Result<()> {
        let d = &*u.domain;
        let mut w = crate::io::csv_writer(path, "x,y: physical position; e, e_holo, e_antiholo: energy densities; s_norm: |S|_g; tau2: |tension|^2")?;
        w.write_record(["x", "y", "e", "e_holo", "e_antiholo", "s_norm", "tau2"])?;
        let snorm = self.stress_norm(d);
        for i in 0..d.len() {
            let p = d.position(i);
            let t2 = self.tension.as_ref().map(|t| dot(&t[i], &t[i])).unwrap_or(f64::NAN);
            w.serialize((p[0], p[1], self.energy_density[i], self.e_holo[i], self.e_antiholo[i], snorm[i], t2))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `ρ² w_z conj(w_z̄)` in the stereographic chart chosen by the sign of `u₃`.
fn chart_hopf(u: &MapState, i: usize) -> Complex64 {
    let d = &*u.domain;
    let flipped = u.values[i][2] < 0.0;
    let w0 = chart_from_sphere(&u.values[i], flipped);
    let delta = |a: usize, b: usize| {
        let wa = if a == i { w0 } else { chart_from_sphere(&u.values[a], flipped) };
        let wb = chart_from_sphere(&u.values[b], flipped);
        let dw = wb - wa;
        [dw.re, dw.im]
    };
    let wx = derivative(d, i, 0, &delta);
    let wy = derivative(d, i, 1, &delta);
    let wx = Complex64::new(wx[0], wx[1]);
    let wy = Complex64::new(wy[0], wy[1]);
    let i_unit = Complex64::i();
    let wz = 0.5 * (wx - i_unit * wy);
    let wzb = 0.5 * (wx + i_unit * wy);
    let rho2 = 4.0 / (1.0 + w0.norm_sqr()).powi(2);
    rho2 * wz * wzb.conj()
}

/// Tension field `τ(u)`; zero on fixed nodes.
pub fn tension(u: &MapState) -> Result<Vec<V3>> {
    let d = &*u.domain;
    let s2 = d.sigma2();
    let delta = value_delta(u);
    match &*u.target {
        TargetMetric::RoundSphere => Ok((0..d.len())
            .into_par_iter()
            .map(|i| {
                if d.is_fixed(i) {
                    return [0.0; 3];
                }
                let lap = coordinate_laplacian(d, i, &delta);
                let p = project(&u.values[i], &lap);
                [p[0] / s2[i], p[1] / s2[i], p[2] / s2[i]]
            })
            .collect()),
        TargetMetric::Warped(prof) => {
            let pole_tol = 1e-8;
            let out: Vec<Result<V3>> = (0..d.len())
                .into_par_iter()
                .map(|i| {
                    if d.is_fixed(i) {
                        return Ok([0.0; 3]);
                    }
                    let psi = u.values[i][0];
                    if psi < pole_tol || psi > prof.psi_max() - pole_tol {
                        return Err(Error::PoleCrossing { node: i });
                    }
                    let [f, f1, ..] = prof.eval(psi);
                    let lap = coordinate_laplacian(d, i, &delta);
                    let gx = derivative(d, i, 0, &delta);
                    let gy = derivative(d, i, 1, &delta);
                    let grad_t2 = gx[1] * gx[1] + gy[1] * gy[1];
                    let grad_pt = gx[0] * gx[1] + gy[0] * gy[1];
                    let tpsi = (lap[0] - f * f1 * grad_t2) / s2[i];
                    let ttheta = (lap[1] + 2.0 * f1 / f * grad_pt) / s2[i];
                    Ok([tpsi, f * ttheta, 0.0])
                })
                .collect();
            out.into_iter().collect()
        }
    }
}

/// Integrated quantities at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    /// `∫ e` from the nodal density.
    pub energy: f64,
    /// Edge-difference energy whose exact time derivative along the scheme is `−∫|τ|²`.
    pub variational_energy: f64,
    pub e_holo: f64,
    pub e_antiholo: f64,
    pub kappa: f64,
    pub sup_du: f64,
    pub sup_dbar: f64,
    pub stress_lq: f64,
    pub tension_l2_sq: f64,
}

/// `Σ_i (w_i/σ_i²) · ½ · mean over available one-sided differences of |Δu|²/h²`.
///
/// The five-point Laplacian is the exact gradient of this energy on the torus,
/// so the explicit flow dissipates it at the discrete rate `∫|τ|²`.
pub fn variational_energy(u: &MapState) -> f64 {
    let d = &*u.domain;
    let s2 = d.sigma2();
    let w = d.weights();
    let sq = |a: usize, b: usize| -> f64 {
        let (x, y) = (u.values[a], u.values[b]);
        match &*u.target {
            TargetMetric::RoundSphere => (0..3).map(|c| (y[c] - x[c]).powi(2)).sum(),
            TargetMetric::Warped(p) => {
                let phi = p.eval(0.5 * (x[0] + y[0]))[0];
                (y[0] - x[0]).powi(2) + (phi * wrap_angle(y[1] - x[1])).powi(2)
            }
        }
    };
    let dens: Vec<f64> = (0..d.len())
        .into_par_iter()
        .map(|i| {
            if w[i] == 0.0 {
                return 0.0;
            }
            let mut acc = 0.0;
            for (di, dj, h) in [(1isize, 0isize, d.hx), (0, 1, d.hy)] {
                let pair: Vec<f64> = [d.neighbor(i, di, dj), d.neighbor(i, -di, -dj)].into_iter().flatten().map(|n| sq(i, n)).collect();
                if !pair.is_empty() {
                    acc += pair.iter().sum::<f64>() / (pair.len() as f64 * h * h);
                }
            }
            0.5 * acc / s2[i]
        })
        .collect();
    d.integrate(&dens)
}

pub fn energy_report(u: &MapState, q: f64) -> Result<EnergyReport> {
    FieldBundle::compute(u)?.energy_report(u, q)
}

/// Energy of `u` in a region.
pub fn local_energy(u: &MapState, fb: &FieldBundle, region: &crate::geometry::Region) -> Result<f64> {
    u.domain.integrate_region(region, &fb.energy_density)
}

/// Nodes whose stencils up to `depth` rings stay inside the free interior.
pub fn interior_mask(d: &SurfaceDomain, depth: isize) -> Vec<bool> {
    (0..d.len())
        .map(|i| {
            for di in -depth..=depth {
                for dj in -depth..=depth {
                    match d.neighbor(i, di, dj) {
                        Some(n) if !d.is_fixed(n) && d.inside(n) => {}
                        _ => return false,
                    }
                }
            }
            true
        })
        .collect()
}

/// Nodewise residual of a parabolic inequality or identity.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `max(D, 0)` over checked nodes.
    pub max_positive: f64,
    /// `max |R|` of the exact identity over checked nodes.
    pub max_abs_identity: f64,
    pub checked_nodes: usize,
    #[serde(skip)]
    pub field: Vec<f64>,
}

/// Split and full Bochner residuals between two consecutive flow states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BochnerReport {
    /// `½(∂_t − Δ)e_∂̄ + |∇∂̄u|² + K_Σ e_∂̄ − C_N e_∂̄²`.
    pub antiholomorphic: ResidualReport,
    /// `(∂_t − Δ)e + |∇du|² − A e² − B e` with `A = 2 sup K_N`, `B = −2 min K_Σ`.
    pub full: ResidualReport,
}

/// Covariant derivatives `∇_x V, ∇_y V` of a tangent field along the map.
fn covariant_derivative(u: &MapState, field: &[V3], i: usize) -> [V3; 2] {
    let d = &*u.domain;
    let delta = |a: usize, b: usize| {
        let (x, y) = (field[a], field[b]);
        [y[0] - x[0], y[1] - x[1], y[2] - x[2]]
    };
    let raw = [derivative(d, i, 0, &delta), derivative(d, i, 1, &delta)];
    match &*u.target {
        TargetMetric::RoundSphere => [project(&u.values[i], &raw[0]), project(&u.values[i], &raw[1])],
        TargetMetric::Warped(p) => {
            // Frame connection: ∇(a e_ψ + b e_θ) = (da − b φ' dθ) e_ψ + (db + a φ' dθ) e_θ.
            let vd = value_delta(u);
            let f1 = p.eval(u.values[i][0])[1];
            let th = [derivative(d, i, 0, &vd)[1], derivative(d, i, 1, &vd)[1]];
            let v = field[i];
            [0, 1].map(|k| [raw[k][0] - v[1] * f1 * th[k], raw[k][1] + v[0] * f1 * th[k], 0.0])
        }
    }
}

/// Connection form `ω = −(ln σ)_y dx + (ln σ)_x dy` of the orthonormal frame `σ⁻¹∂`.
fn domain_connection(d: &SurfaceDomain, i: usize) -> [f64; 2] {
    let s2 = d.sigma2();
    let delta = |a: usize, b: usize| [0.5 * (s2[b].ln() - s2[a].ln())];
    let gx = derivative(d, i, 0, &delta)[0];
    let gy = derivative(d, i, 1, &delta)[0];
    [-gy, gx]
}

struct BochnerTerms {
    e: Vec<f64>,
    e_bar: Vec<f64>,
    e_holo: Vec<f64>,
    grad_dbar2: Vec<f64>,
    grad_du2: Vec<f64>,
}

fn bochner_terms(u: &MapState, mask: &[bool]) -> Result<BochnerTerms> {
    let d = &*u.domain;
    let fb = FieldBundle::compute(u)?;
    let s2 = d.sigma2();
    // β = σ⁻¹ ½(u_x + J u_y) and the frame components du(e_a) = σ⁻¹ u_a.
    let beta: Vec<V3> = (0..d.len())
        .map(|i| {
            let [ux, uy] = &fb.du[i];
            let b = axpy(1.0, &cross(&fb.normal[i], uy), ux);
            let s = 0.5 / s2[i].sqrt();
            [s * b[0], s * b[1], s * b[2]]
        })
        .collect();
    let e1: Vec<V3> = (0..d.len()).map(|i| fb.du[i][0].map(|x| x / s2[i].sqrt())).collect();
    let e2: Vec<V3> = (0..d.len()).map(|i| fb.du[i][1].map(|x| x / s2[i].sqrt())).collect();
    let mut grad_dbar2 = vec![0.0; d.len()];
    let mut grad_du2 = vec![0.0; d.len()];
    for i in 0..d.len() {
        if !mask[i] {
            continue;
        }
        let w = domain_connection(d, i);
        let n = &fb.normal[i];
        let db = covariant_derivative(u, &beta, i);
        let d1 = covariant_derivative(u, &e1, i);
        let d2 = covariant_derivative(u, &e2, i);
        let mut gb = 0.0;
        let mut gd = 0.0;
        for k in 0..2 {
            let jb = cross(n, &beta[i]);
            let t = axpy(w[k], &jb, &db[k]);
            gb += dot(&t, &t);
            let a = axpy(-w[k], &e2[i], &d1[k]);
            let b = axpy(w[k], &e1[i], &d2[k]);
            gd += dot(&a, &a) + dot(&b, &b);
        }
        grad_dbar2[i] = gb / s2[i];
        grad_du2[i] = gd / s2[i];
    }
    Ok(BochnerTerms {
        e: fb.energy_density,
        e_bar: fb.e_antiholo,
        e_holo: fb.e_holo,
        grad_dbar2,
        grad_du2,
    })
}

fn target_curvature_field(u: &MapState) -> Vec<f64> {
    u.values.iter().map(|v| u.target.curvature_at(v[0])).collect()
}

/// Split Bochner and full Bochner residuals from two consecutive states.
pub fn bochner_residual(prev: &MapState, next: &MapState, dt: f64) -> Result<BochnerReport> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let d = &*prev.domain;
    let mask = interior_mask(d, 2);
    let a = bochner_terms(prev, &mask)?;
    let b = bochner_terms(next, &mask)?;
    let s2 = d.sigma2();
    let ks = d.gauss_curvature();
    let c_n = prev.target.curvature_bound();
    let min_ks = ks.iter().cloned().fold(f64::INFINITY, f64::min);
    let (ka, kb) = match &*prev.target {
        TargetMetric::RoundSphere => (vec![1.0; d.len()], vec![1.0; d.len()]),
        _ => (target_curvature_field(prev), target_curvature_field(next)),
    };
    let lap = |f: &[f64], i: usize| coordinate_laplacian(d, i, &scalar_delta(f))[0] / s2[i];
    let mut split = ResidualReport { max_positive: 0.0, max_abs_identity: 0.0, checked_nodes: 0, field: vec![0.0; d.len()] };
    let mut full = split.clone();
    for i in 0..d.len() {
        if !mask[i] {
            continue;
        }
        let avg = |x: f64, y: f64| 0.5 * (x + y);
        let eb = avg(a.e_bar[i], b.e_bar[i]);
        let eh = avg(a.e_holo[i], b.e_holo[i]);
        let e = avg(a.e[i], b.e[i]);
        let kn = avg(ka[i], kb[i]);
        let dt_eb = (b.e_bar[i] - a.e_bar[i]) / dt;
        let lap_eb = avg(lap(&a.e_bar, i), lap(&b.e_bar, i));
        let g_b = avg(a.grad_dbar2[i], b.grad_dbar2[i]);
        let core = 0.5 * (dt_eb - lap_eb) + g_b + ks[i] * eb;
        let dval = core - c_n * eb * eb;
        split.field[i] = dval;
        split.max_positive = split.max_positive.max(dval);
        split.max_abs_identity = split.max_abs_identity.max((core - kn * (eb * eb - eb * eh)).abs());
        split.checked_nodes += 1;

        let dt_e = (b.e[i] - a.e[i]) / dt;
        let lap_e = avg(lap(&a.e, i), lap(&b.e, i));
        let g_d = avg(a.grad_du2[i], b.grad_du2[i]);
        let core_f = dt_e - lap_e + g_d;
        let fval = core_f - 2.0 * c_n * e * e + 2.0 * min_ks * e;
        full.field[i] = fval;
        full.max_positive = full.max_positive.max(fval);
        let exact = -2.0 * ks[i] * e + 2.0 * kn * (eh - eb).powi(2);
        full.max_abs_identity = full.max_abs_identity.max((core_f - exact).abs());
        full.checked_nodes += 1;
    }
    Ok(BochnerReport { antiholomorphic: split, full })
}

/// Residual of `∂_t e + |τ|² − div div S` between two consecutive states.
pub fn pointwise_energy_residual(prev: &MapState, next: &MapState, dt: f64) -> Result<ResidualReport> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt = {dt} must be positive")));
    }
    let d = &*prev.domain;
    let mask = interior_mask(d, 2);
    let s2 = d.sigma2();
    let terms = |u: &MapState| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let mut fb = FieldBundle::compute(u)?;
        fb.hopf_and_stress(u);
        let tau = tension(u)?;
        let tau2: Vec<f64> = tau.iter().map(|t| dot(t, t)).collect();
        let s = fb.stress.as_ref().unwrap();
        // α_j = σ⁻² ∂_i S_ij, then div α = σ⁻² ∂_j α_j.
        let comp = |c: usize| -> Vec<f64> { s.iter().map(|v| v[c]).collect() };
        let (sxx, sxy, syy) = (comp(0), comp(1), comp(2));
        let dx = |f: &[f64], i| derivative(d, i, 0, &scalar_delta(f))[0];
        let dy = |f: &[f64], i| derivative(d, i, 1, &scalar_delta(f))[0];
        let ax: Vec<f64> = (0..d.len()).map(|i| (dx(&sxx, i) + dy(&sxy, i)) / s2[i]).collect();
        let ay: Vec<f64> = (0..d.len()).map(|i| (dx(&sxy, i) + dy(&syy, i)) / s2[i]).collect();
        let divdiv: Vec<f64> = (0..d.len()).map(|i| (dx(&ax, i) + dy(&ay, i)) / s2[i]).collect();
        Ok((fb.energy_density, tau2, divdiv))
    };
    let (ea, ta, da) = terms(prev)?;
    let (eb, tb, db) = terms(next)?;
    let mut rep = ResidualReport { max_positive: 0.0, max_abs_identity: 0.0, checked_nodes: 0, field: vec![0.0; d.len()] };
    for i in 0..d.len() {
        if !mask[i] {
            continue;
        }
        let r = (eb[i] - ea[i]) / dt + 0.5 * (ta[i] + tb[i]) - 0.5 * (da[i] + db[i]);
        rep.field[i] = r;
        rep.max_positive = rep.max_positive.max(r);
        rep.max_abs_identity = rep.max_abs_identity.max(r.abs());
        rep.checked_nodes += 1;
    }
    Ok(rep)
}

/// `∫|S|^q` restricted to a region, to the power `1/q`.
pub fn stress_lq(u: &MapState, fb: &FieldBundle, q: f64) -> f64 {
    let s: Vec<f64> = fb.stress_norm(&u.domain).iter().map(|x| x.powf(q)).collect();
    weighted_sum(u.domain.weights(), &s).powf(1.0 / q)
}
