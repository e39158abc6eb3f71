//! Map states on a discretized domain and the standard families of initial data.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{SurfaceDomain, TargetMetric};

/// `u(w) = (2 Re w, 2 Im w, 1 − |w|²)/(1 + |w|²)`; `w = 0` is the north pole.
pub fn sphere_from_chart(w: Complex64) -> [f64; 3] {
    if !w.re.is_finite() || !w.im.is_finite() {
        return [0.0, 0.0, -1.0];
    }
    let n2 = w.norm_sqr();
    if n2 > 1e200 {
        return [0.0, 0.0, -1.0];
    }
    let d = 1.0 + n2;
    [2.0 * w.re / d, 2.0 * w.im / d, (1.0 - n2) / d]
}

/// Chart coordinate of `u`: `(u₁ + i u₂)/(1 + u₃)` when `flipped` is false,
/// else `(u₁ − i u₂)/(1 − u₃)`, the coordinate `1/w` near the south pole.
pub fn chart_from_sphere(u: &[f64; 3], flipped: bool) -> Complex64 {
    if flipped {
        Complex64::new(u[0], -u[1]) / (1.0 - u[2])
    } else {
        Complex64::new(u[0], u[1]) / (1.0 + u[2])
    }
}

/// Unit vector of the corotational ansatz `(h(r), kθ)`.
pub fn corotational_point(h: f64, k: i32, theta: f64) -> [f64; 3] {
    let (s, c) = h.sin_cos();
    let (st, ct) = (k as f64 * theta).sin_cos();
    [s * ct, s * st, c]
}

/// Time-stamped grid of map values.
///
/// Round-sphere values are unit vectors; warped-sphere values are `(ψ, θ, 0)`.
#[derive(Clone, Debug)]
pub struct MapState {
    pub domain: Arc<SurfaceDomain>,
    pub target: Arc<TargetMetric>,
    pub values: Vec<[f64; 3]>,
    pub t: f64,
}

impl MapState {
    pub fn new(domain: Arc<SurfaceDomain>, target: Arc<TargetMetric>, values: Vec<[f64; 3]>, t: f64) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(Error::InvalidParameter(format!(
                "{} values for a domain with {} nodes",
                values.len(),
                domain.len()
            )));
        }
        let s = Self { domain, target, values, t };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { node: i, what: "map value" });
            }
            match &*self.target {
                TargetMetric::RoundSphere => {
                    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if (n - 1.0).abs() > 1e-10 {
                        return Err(Error::InvalidParameter(format!("node {i} has |u| = {n}")));
                    }
                }
                TargetMetric::Warped(p) => {
                    if v[0] < 0.0 || v[0] > p.psi_max() {
                        return Err(Error::InvalidParameter(format!("node {i} has ψ = {} out of range", v[0])));
                    }
                }
            }
        }
        Ok(())
    }

    /// Round-sphere map from a function of the physical position.
    pub fn from_fn(domain: &SurfaceDomain, f: impl Fn([f64; 2]) -> [f64; 3]) -> Self {
        let values = (0..domain.len()).map(|i| normalized(f(domain.position(i)))).collect();
        Self { domain: Arc::new(domain.clone()), target: Arc::new(TargetMetric::RoundSphere), values, t: 0.0 }
    }

    pub fn constant(domain: &SurfaceDomain, target: &TargetMetric, value: [f64; 3]) -> Self {
        let value = match target {
            TargetMetric::RoundSphere => normalized(value),
            TargetMetric::Warped(_) => value,
        };
        Self {
            domain: Arc::new(domain.clone()),
            target: Arc::new(target.clone()),
            values: vec![value; domain.len()],
            t: 0.0,
        }
    }

    /// Round-sphere map given by a chart function `w(z)` of `z = x + iy`.
    pub fn from_chart(domain: &SurfaceDomain, w: impl Fn(Complex64) -> Complex64) -> Self {
        Self::from_fn(domain, |p| sphere_from_chart(w(Complex64::new(p[0], p[1]))))
    }

    /// `w(z) = (z/scale)^d`; degree `d` for positive `d`, antiholomorphic `z̄` for negative `d`.
    pub fn holomorphic(domain: &SurfaceDomain, degree: i32, scale: f64) -> Self {
        Self::from_chart(domain, move |z| {
            let z = z / scale;
            if degree >= 0 {
                z.powi(degree)
            } else {
                z.conj().powi(-degree)
            }
        })
    }

    /// Lift of a radial profile `h(r)` with winding `k`.
    pub fn corotational(domain: &SurfaceDomain, k: i32, h: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(domain, |p| corotational_point(h(p[0].hypot(p[1])), k, p[1].atan2(p[0])))
    }

    /// Holomorphic data plus a smooth random perturbation of the given amplitude.
    pub fn perturbed_holomorphic(domain: &SurfaceDomain, degree: i32, scale: f64, amplitude: f64, seed: u64) -> Self {
        let base = Self::holomorphic(domain, degree, scale);
        let bump = SmoothField::new(seed, 4, amplitude, domain);
        let values = (0..domain.len())
            .map(|i| {
                let u = base.values[i];
                let d = bump.eval(domain.position(i));
                normalized([u[0] + d[0], u[1] + d[1], u[2] + d[2]])
            })
            .collect();
        Self { values, ..base }
    }

    /// `u = π⁻¹(w)` for the stereographic projection `π` and a seeded smooth
    /// complex field `w = Σ a_m cos(k_m·x + φ_m)`; smooth for every amplitude.
    pub fn random_smooth(domain: &SurfaceDomain, seed: u64, modes: usize, amplitude: f64) -> Self {
        let field = SmoothField::new(seed, modes, amplitude, domain);
        Self::from_fn(domain, |p| {
            let d = field.eval(p);
            sphere_from_chart(Complex64::new(d[0], d[1]))
        })
    }

    /// Warped-target map from a round-sphere map, via `ψ = arccos u₃`, `θ = atan2(u₂, u₁)`.
    pub fn to_warped(&self, target: &TargetMetric) -> Result<Self> {
        let TargetMetric::Warped(p) = target else {
            return Err(Error::InvalidParameter("target is not warped".into()));
        };
        let scale = p.psi_max() / PI;
        let values = self
            .values
            .iter()
            .map(|u| [u[2].clamp(-1.0, 1.0).acos() * scale, u[1].atan2(u[0]).rem_euclid(2.0 * PI), 0.0])
            .collect();
        Ok(Self { domain: self.domain.clone(), target: Arc::new(target.clone()), values, t: self.t })
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    /// Bilinear interpolation at a physical point.
    pub fn interpolate(&self, p: [f64; 2]) -> Option<[f64; 3]> {
        let stencil = self.domain.interp_stencil(p)?;
        Some(match &*self.target {
            TargetMetric::RoundSphere => {
                let mut acc = [0.0; 3];
                for (i, w) in stencil {
                    for c in 0..3 {
                        acc[c] += w * self.values[i][c];
                    }
                }
                normalized(acc)
            }
            TargetMetric::Warped(_) => {
                let theta0 = self.values[stencil[0].0][1];
                let mut acc = [0.0; 3];
                for (i, w) in stencil {
                    let v = self.values[i];
                    acc[0] += w * v[0];
                    acc[1] += w * (theta0 + wrap_angle(v[1] - theta0));
                }
                acc[1] = acc[1].rem_euclid(2.0 * PI);
                acc
            }
        })
    }

    /// Largest change of the map value across any grid edge.
    pub fn max_edge_jump(&self) -> f64 {
        let d = &self.domain;
        let mut m: f64 = 0.0;
        for i in 0..d.len() {
            if !d.inside(i) {
                continue;
            }
            for (di, dj) in [(1, 0), (0, 1)] {
                if let Some(n) = d.neighbor(i, di, dj) {
                    m = m.max(self.target.distance(&self.values[i], &self.values[n]));
                }
            }
        }
        m
    }
}

/// Wraps an angle difference into `(−π, π]`.
pub fn wrap_angle(d: f64) -> f64 {
    let w = d.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

pub fn normalized(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Seeded sum of plane waves. On the torus the wave vectors are lattice
/// vectors; elsewhere the waves live on `π⁻¹(x) ∈ S²`, so they stay resolved
/// on polar grids that reach far out.
struct SmoothField {
    periodic: bool,
    modes: Vec<([f64; 3], [f64; 3], [f64; 3])>,
}

impl SmoothField {
    fn new(seed: u64, modes: usize, amplitude: f64, domain: &SurfaceDomain) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lattice = match domain.spec() {
            crate::geometry::DomainSpec::FlatTorus { length, .. } => Some(2.0 * PI / length),
            _ => None,
        };
        let modes = (0..modes)
            .map(|_| {
                let k = match lattice {
                    Some(base) => [base * rng.gen_range(-2i32..=2) as f64, base * rng.gen_range(-2i32..=2) as f64, 0.0],
                    None => [0; 3].map(|_| rng.gen_range(-2.0..2.0)),
                };
                let a = [0; 3].map(|_| amplitude * rng.gen_range(-1.0..1.0));
                let ph = [0; 3].map(|_| rng.gen_range(0.0..2.0 * PI));
                (k, a, ph)
            })
            .collect();
        Self { periodic: lattice.is_some(), modes }
    }

    fn eval(&self, p: [f64; 2]) -> [f64; 3] {
        let x = if self.periodic { [p[0], p[1], 0.0] } else { sphere_from_chart(Complex64::new(p[0], p[1])) };
        let mut out = [0.0; 3];
        for (k, a, ph) in &self.modes {
            let arg = k[0] * x[0] + k[1] * x[1] + k[2] * x[2];
            for c in 0..3 {
                out[c] += a[c] * (arg + ph[c]).cos();
            }
        }
        out
    }
}
