//! Domain surfaces, quadrature, regions and target metrics.
//!
//! Every domain carries the conformal metric `g = σ² (dx² + dy²)` written in
//! its computational coordinates. For the polar disk the computational
//! coordinates are `(s, θ)` with `s = ln r`, so `σ²` includes the factor `r²`.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{pairwise_sum, weighted_sum, ClampedSpline};

fn default_torus_length() -> f64 {
    2.0 * PI
}

/// Conformal factor of the underlying physical surface.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conformal {
    #[default]
    Flat,
    /// `4/(1+r²)²`, the unit round sphere in a stereographic chart.
    RoundSphere,
}

/// Serializable description of a domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainSpec {
    FlatTorus {
        n: usize,
        #[serde(default = "default_torus_length")]
        length: f64,
    },
    UnitDisk {
        n: usize,
    },
    PolarDisk {
        n_r: usize,
        n_theta: usize,
        r_min: f64,
        r_max: f64,
        #[serde(default)]
        conformal: Conformal,
    },
}

impl DomainSpec {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        match *self {
            DomainSpec::FlatTorus { n, length } => {
                if n < 8 {
                    errs.push(format!("flat_torus.n = {n} must be at least 8"));
                }
                if !(length > 0.0 && length.is_finite()) {
                    errs.push(format!("flat_torus.length = {length} must be positive"));
                }
            }
            DomainSpec::UnitDisk { n } => {
                if n < 9 {
                    errs.push(format!("unit_disk.n = {n} must be at least 9"));
                }
            }
            DomainSpec::PolarDisk { n_r, n_theta, r_min, r_max, .. } => {
                if n_r < 8 || n_theta < 8 {
                    errs.push(format!("polar_disk grid {n_r}x{n_theta} must be at least 8x8"));
                }
                if !(r_min > 0.0 && r_max > r_min && r_max.is_finite()) {
                    errs.push(format!("polar_disk radii need 0 < r_min < r_max, got {r_min}, {r_max}"));
                }
            }
        }
        errs
    }

    pub fn build(&self) -> Result<SurfaceDomain> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        Ok(match *self {
            DomainSpec::FlatTorus { n, length } => SurfaceDomain::build_torus(n, length),
            DomainSpec::UnitDisk { n } => SurfaceDomain::build_disk(n),
            DomainSpec::PolarDisk { n_r, n_theta, r_min, r_max, conformal } => {
                SurfaceDomain::build_polar(n_r, n_theta, r_min, r_max, conformal)
            }
        })
    }
}

/// A discretized conformal domain surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDomain {
    spec: DomainSpec,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
    x0: f64,
    y0: f64,
    periodic: [bool; 2],
    sigma2: Vec<f64>,
    gauss: Vec<f64>,
    fixed: Vec<bool>,
    weights: Vec<f64>,
}

impl SurfaceDomain {
    pub fn flat_torus(n: usize, length: f64) -> Result<Self> {
        DomainSpec::FlatTorus { n, length }.build()
    }

    pub fn unit_disk(n: usize) -> Result<Self> {
        DomainSpec::UnitDisk { n }.build()
    }

    /// Log-uniform radial spacing on `[r_min, r_max]`, uniform periodic angle.
    pub fn polar_disk(n_r: usize, n_theta: usize, r_min: f64, r_max: f64, conformal: Conformal) -> Result<Self> {
        DomainSpec::PolarDisk { n_r, n_theta, r_min, r_max, conformal }.build()
    }

    fn build_torus(n: usize, length: f64) -> Self {
        let h = length / n as f64;
        let len = n * n;
        Self {
            spec: DomainSpec::FlatTorus { n, length },
            nx: n,
            ny: n,
            hx: h,
            hy: h,
            x0: 0.0,
            y0: 0.0,
            periodic: [true, true],
            sigma2: vec![1.0; len],
            gauss: vec![0.0; len],
            fixed: vec![false; len],
            weights: vec![h * h; len],
        }
    }

    fn build_disk(n: usize) -> Self {
        let h = 2.0 / (n - 1) as f64;
        let mut d = Self {
            spec: DomainSpec::UnitDisk { n },
            nx: n,
            ny: n,
            hx: h,
            hy: h,
            x0: -1.0,
            y0: -1.0,
            periodic: [false, false],
            sigma2: vec![1.0; n * n],
            gauss: vec![0.0; n * n],
            fixed: vec![false; n * n],
            weights: vec![0.0; n * n],
        };
        for idx in 0..n * n {
            let p = d.position(idx);
            d.fixed[idx] = p[0].hypot(p[1]) >= 1.0 - 1e-12;
            let (e1, e2) = d.cell_vectors(idx);
            d.weights[idx] = h * h * ball_cell_fraction(p, 1.0, e1, e2);
        }
        d
    }

    fn build_polar(n_r: usize, n_theta: usize, r_min: f64, r_max: f64, conformal: Conformal) -> Self {
        let (s0, s1) = (r_min.ln(), r_max.ln());
        let hs = (s1 - s0) / (n_r - 1) as f64;
        let ht = 2.0 * PI / n_theta as f64;
        let len = n_r * n_theta;
        let mut d = Self {
            spec: DomainSpec::PolarDisk { n_r, n_theta, r_min, r_max, conformal },
            nx: n_r,
            ny: n_theta,
            hx: hs,
            hy: ht,
            x0: s0,
            y0: 0.0,
            periodic: [false, true],
            sigma2: vec![0.0; len],
            gauss: vec![0.0; len],
            fixed: vec![false; len],
            weights: vec![0.0; len],
        };
        for idx in 0..len {
            let (i, _) = d.ij(idx);
            let r = (s0 + i as f64 * hs).exp();
            let phys = match conformal {
                Conformal::Flat => 1.0,
                Conformal::RoundSphere => 4.0 / (1.0 + r * r).powi(2),
            };
            d.sigma2[idx] = r * r * phys;
            d.gauss[idx] = match conformal {
                Conformal::Flat => 0.0,
                Conformal::RoundSphere => 1.0,
            };
            let end = i == 0 || i == n_r - 1;
            d.fixed[idx] = end;
            d.weights[idx] = hs * ht * d.sigma2[idx] * if end { 0.5 } else { 1.0 };
        }
        d
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn ij(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }

    pub fn is_periodic(&self, axis: usize) -> bool {
        self.periodic[axis]
    }

    /// Neighbour offset by `(di, dj)`, wrapping periodic axes.
    pub fn neighbor(&self, idx: usize, di: isize, dj: isize) -> Option<usize> {
        let (i, j) = self.ij(idx);
        let wrap = |v: usize, d: isize, n: usize, periodic: bool| -> Option<usize> {
            let w = v as isize + d;
            if periodic {
                Some(w.rem_euclid(n as isize) as usize)
            } else if w < 0 || w >= n as isize {
                None
            } else {
                Some(w as usize)
            }
        };
        let ni = wrap(i, di, self.nx, self.periodic[0])?;
        let nj = wrap(j, dj, self.ny, self.periodic[1])?;
        Some(self.idx(ni, nj))
    }

    /// Computational coordinates of a node.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let (i, j) = self.ij(idx);
        [self.x0 + i as f64 * self.hx, self.y0 + j as f64 * self.hy]
    }

    /// Physical position in the plane.
    pub fn position(&self, idx: usize) -> [f64; 2] {
        let [x, y] = self.coords(idx);
        match self.spec {
            DomainSpec::PolarDisk { .. } => {
                let r = x.exp();
                [r * y.cos(), r * y.sin()]
            }
            _ => [x, y],
        }
    }

    /// Physical cell edge vectors at a node.
    pub fn cell_vectors(&self, idx: usize) -> ([f64; 2], [f64; 2]) {
        match self.spec {
            DomainSpec::PolarDisk { .. } => {
                let [s, t] = self.coords(idx);
                let r = s.exp();
                ([r * self.hx * t.cos(), r * self.hx * t.sin()], [-r * self.hy * t.sin(), r * self.hy * t.cos()])
            }
            _ => ([self.hx, 0.0], [0.0, self.hy]),
        }
    }

    /// `σ²` of the metric in computational coordinates.
    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    /// Gauss curvature of the domain metric at each node.
    pub fn gauss_curvature(&self) -> &[f64] {
        &self.gauss
    }

    pub fn is_fixed(&self, idx: usize) -> bool {
        self.fixed[idx]
    }

    pub fn fixed_mask(&self) -> &[bool] {
        &self.fixed
    }

    /// Area weights of the metric `g`; zero outside the domain.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn inside(&self, idx: usize) -> bool {
        self.weights[idx] > 0.0
    }

    /// Length in `g` of one grid step at a node.
    pub fn local_spacing(&self, idx: usize) -> f64 {
        self.sigma2[idx].sqrt() * self.hx.max(self.hy)
    }

    /// Smallest `g`-length of a grid step over the domain.
    pub fn min_spacing(&self) -> f64 {
        (0..self.len()).filter(|&i| self.inside(i)).map(|i| self.local_spacing(i)).fold(f64::INFINITY, f64::min)
    }

    /// Physical grid spacing used as the floor for energy-scale scans.
    pub fn mesh_spacing(&self) -> f64 {
        match self.spec {
            DomainSpec::PolarDisk { r_min, .. } => r_min * self.hx.exp().max(1.0 + self.hy),
            _ => self.hx.max(self.hy),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.spec {
            DomainSpec::FlatTorus { length, .. } => length / 2f64.sqrt(),
            DomainSpec::UnitDisk { .. } => 2.0,
            DomainSpec::PolarDisk { r_max, .. } => 2.0 * r_max,
        }
    }

    /// Default upper bound for ball radii in the energy-scale definitions.
    pub fn default_r0(&self) -> f64 {
        0.25 * self.diameter()
    }

    /// Displacement `x − p`, using the minimal image on the torus.
    pub fn displacement(&self, p: [f64; 2], x: [f64; 2]) -> [f64; 2] {
        let mut d = [x[0] - p[0], x[1] - p[1]];
        if let DomainSpec::FlatTorus { length, .. } = self.spec {
            for v in &mut d {
                *v -= length * (*v / length).round();
            }
        }
        d
    }

    /// Quadrature weights restricted to a region.
    pub fn region_weights(&self, region: &Region) -> Result<Vec<f64>> {
        region.validate()?;
        let w = match *region {
            Region::Whole => self.weights.clone(),
            Region::Ball { center, radius } => (0..self.len())
                .map(|i| {
                    if self.weights[i] == 0.0 {
                        return 0.0;
                    }
                    let (e1, e2) = self.cell_vectors(i);
                    let d = self.displacement(center, self.position(i));
                    self.weights[i] * ball_cell_fraction(d, radius, e1, e2)
                })
                .collect(),
            Region::Annulus { center, inner, outer } => (0..self.len())
                .map(|i| {
                    if self.weights[i] == 0.0 {
                        return 0.0;
                    }
                    let (e1, e2) = self.cell_vectors(i);
                    let d = self.displacement(center, self.position(i));
                    let f = ball_cell_fraction(d, outer, e1, e2) - ball_cell_fraction(d, inner, e1, e2);
                    self.weights[i] * f.max(0.0)
                })
                .collect(),
        };
        if pairwise_sum(&w) <= 0.0 {
            return Err(Error::EmptyRegion(format!("{region:?}")));
        }
        Ok(w)
    }

    pub fn integrate(&self, density: &[f64]) -> f64 {
        weighted_sum(&self.weights, density)
    }

    pub fn integrate_region(&self, region: &Region, density: &[f64]) -> Result<f64> {
        let w = self.region_weights(region)?;
        Ok(weighted_sum(&w, density))
    }

    /// Whether a physical point lies in the closed domain.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match self.spec {
            DomainSpec::FlatTorus { .. } => true,
            DomainSpec::UnitDisk { .. } => p[0].hypot(p[1]) <= 1.0,
            DomainSpec::PolarDisk { r_min, r_max, .. } => {
                let r = p[0].hypot(p[1]);
                r >= r_min * (1.0 - 1e-12) && r <= r_max * (1.0 + 1e-12)
            }
        }
    }

    /// Bilinear interpolation stencil at a physical point.
    pub fn interp_stencil(&self, p: [f64; 2]) -> Option<[(usize, f64); 4]> {
        let (fi, fj) = match self.spec {
            DomainSpec::FlatTorus { length, .. } => {
                (p[0].rem_euclid(length) / self.hx, p[1].rem_euclid(length) / self.hy)
            }
            DomainSpec::UnitDisk { .. } => ((p[0] - self.x0) / self.hx, (p[1] - self.y0) / self.hy),
            DomainSpec::PolarDisk { .. } => {
                let r = p[0].hypot(p[1]);
                if r <= 0.0 {
                    return None;
                }
                (((r.ln() - self.x0) / self.hx), p[1].atan2(p[0]).rem_euclid(2.0 * PI) / self.hy)
            }
        };
        let tol = 1e-9;
        if !self.periodic[0] && (fi < -tol || fi > (self.nx - 1) as f64 + tol) {
            return None;
        }
        if !self.periodic[1] && (fj < -tol || fj > (self.ny - 1) as f64 + tol) {
            return None;
        }
        let clamp = |f: f64, n: usize, periodic: bool| -> (usize, f64) {
            if periodic {
                let b = f.floor();
                ((b as isize).rem_euclid(n as isize) as usize, f - b)
            } else {
                let f = f.clamp(0.0, (n - 1) as f64);
                let b = (f.floor() as usize).min(n - 2);
                (b, f - b as f64)
            }
        };
        let (i0, tx) = clamp(fi, self.nx, self.periodic[0]);
        let (j0, ty) = clamp(fj, self.ny, self.periodic[1]);
        let base = self.idx(i0, j0);
        let ix = self.neighbor(base, 1, 0)?;
        let iy = self.neighbor(base, 0, 1)?;
        let ixy = self.neighbor(base, 1, 1)?;
        Some([
            (base, (1.0 - tx) * (1.0 - ty)),
            (ix, tx * (1.0 - ty)),
            (iy, (1.0 - tx) * ty),
            (ixy, tx * ty),
        ])
    }
}

/// Fraction of a parallelogram cell inside a disc of radius `radius`, with
/// the disc boundary replaced by its tangent line at the nearest point.
/// `d` is the displacement from the disc centre to the cell centre.
pub fn ball_cell_fraction(d: [f64; 2], radius: f64, e1: [f64; 2], e2: [f64; 2]) -> f64 {
    let dist = d[0].hypot(d[1]);
    let size = e1[0].hypot(e1[1]) + e2[0].hypot(e2[1]);
    if dist <= 1e-14 * size {
        let area = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
        return (PI * radius * radius / area).min(1.0);
    }
    let n = [d[0] / dist, d[1] / dist];
    let a1 = (n[0] * e1[0] + n[1] * e1[1]).abs();
    let a2 = (n[0] * e2[0] + n[1] * e2[1]).abs();
    trapezoid_cdf(radius - dist, a1.max(a2), a1.min(a2))
}

/// CDF at `c` of `a U₁ + b U₂` with `U` uniform on `[-½, ½]` and `a ≥ b ≥ 0`.
fn trapezoid_cdf(c: f64, a: f64, b: f64) -> f64 {
    let hi = 0.5 * (a + b);
    if c <= -hi {
        return 0.0;
    }
    if c >= hi {
        return 1.0;
    }
    if b <= 1e-12 * a {
        return (c / a + 0.5).clamp(0.0, 1.0);
    }
    let k = 0.5 * (a - b);
    if c < -k {
        (c + hi).powi(2) / (2.0 * a * b)
    } else if c <= k {
        b / (2.0 * a) + (c + k) / a
    } else {
        1.0 - (hi - c).powi(2) / (2.0 * a * b)
    }
}

/// Integration region in physical coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Whole,
    Ball { center: [f64; 2], radius: f64 },
    /// `U^outer_inner(center) = B_outer \ B_inner`.
    Annulus { center: [f64; 2], inner: f64, outer: f64 },
}

impl Region {
    fn validate(&self) -> Result<()> {
        match *self {
            Region::Whole => Ok(()),
            Region::Ball { radius, .. } if radius > 0.0 && radius.is_finite() => Ok(()),
            Region::Annulus { inner, outer, .. } if inner >= 0.0 && outer > inner && outer.is_finite() => Ok(()),
            _ => Err(Error::EmptyRegion(format!("{self:?}"))),
        }
    }
}

/// Serializable description of a warped profile `φ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileSpec {
    /// `φ(ψ) = Σ_k a_k sin(kψ)` on `[0, π]`.
    SineSeries { coefficients: Vec<f64> },
    /// Two-column CSV table `(ψ, φ)` interpolated by a clamped cubic spline.
    Table { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    RoundSphere,
    WarpedSphere { profile: ProfileSpec },
}

impl TargetSpec {
    pub fn build(&self, base_dir: Option<&Path>) -> Result<TargetMetric> {
        match self {
            TargetSpec::RoundSphere => Ok(TargetMetric::RoundSphere),
            TargetSpec::WarpedSphere { profile } => {
                let p = match profile {
                    ProfileSpec::SineSeries { coefficients } => WarpProfile::sine_series(coefficients.clone())?,
                    ProfileSpec::Table { path } => {
                        let full = match base_dir {
                            Some(b) if path.is_relative() => b.join(path),
                            _ => path.clone(),
                        };
                        WarpProfile::from_csv(&full)?
                    }
                };
                Ok(TargetMetric::Warped(p))
            }
        }
    }
}

/// Rotationally symmetric profile `dψ² + φ(ψ)² dθ²` on `[0, ψ_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpProfile {
    kind: ProfileKind,
    psi_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum ProfileKind {
    Sine(Vec<f64>),
    Spline(ClampedSpline),
}

impl WarpProfile {
    pub fn sine_series(coefficients: Vec<f64>) -> Result<Self> {
        let p = Self { kind: ProfileKind::Sine(coefficients), psi_max: PI };
        p.checked()
    }

    pub fn table(psi: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        let psi_max = *psi.last().ok_or_else(|| Error::InvalidParameter("empty profile table".into()))?;
        let spline = ClampedSpline::new(psi, phi, 1.0, -1.0)?;
        Self { kind: ProfileKind::Spline(spline), psi_max }.checked()
    }

    /// Reads `ψ, φ` rows; lines starting with `#` and a non-numeric header are skipped.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?;
        let (mut psi, mut phi) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() < 2 {
                continue;
            }
            match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    psi.push(a);
                    phi.push(b);
                }
                _ if psi.is_empty() => continue,
                _ => return Err(Error::InvalidParameter(format!("bad profile row {:?}", rec))),
            }
        }
        Self::table(psi, phi)
    }

    fn checked(self) -> Result<Self> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Smooth-closing conditions and positivity in the interior.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let tol = 1e-8;
        let [f0, d0, ..] = self.eval(0.0);
        let [f1, d1, ..] = self.eval(self.psi_max);
        if f0.abs() > tol || f1.abs() > tol {
            errs.push(format!("profile must vanish at both poles, got φ(0) = {f0}, φ(ψ_max) = {f1}"));
        }
        if (d0 - 1.0).abs() > tol || (d1 + 1.0).abs() > tol {
            errs.push(format!("profile slopes must be +1 and -1 at the poles, got {d0} and {d1}"));
        }
        let n = 2000;
        if (1..n).any(|k| self.eval(self.psi_max * k as f64 / n as f64)[0] <= 0.0) {
            errs.push("profile must be positive between the poles".into());
        }
        errs
    }

    pub fn psi_max(&self) -> f64 {
        self.psi_max
    }

    /// `[φ, φ', φ'', φ''']` at `ψ`.
    pub fn eval(&self, psi: f64) -> [f64; 4] {
        match &self.kind {
            ProfileKind::Sine(a) => {
                let mut out = [0.0; 4];
                for (k, &ak) in a.iter().enumerate() {
                    let k = (k + 1) as f64;
                    let (s, c) = (k * psi).sin_cos();
                    out[0] += ak * s;
                    out[1] += ak * k * c;
                    out[2] -= ak * k * k * s;
                    out[3] -= ak * k * k * k * c;
                }
                out
            }
            ProfileKind::Spline(s) => s.eval(psi.clamp(0.0, self.psi_max)),
        }
    }

    /// `K = −φ''/φ`, with the limit `−φ'''/φ'` at the poles.
    pub fn curvature(&self, psi: f64) -> f64 {
        let [f, d1, d2, d3] = self.eval(psi);
        let pole_gap = psi.min(self.psi_max - psi);
        if pole_gap < 1e-6 {
            let [_, e1, _, e3] = self.eval(if psi < 0.5 * self.psi_max { 0.0 } else { self.psi_max });
            -e3 / e1
        } else if f.abs() < 1e-300 {
            -d3 / d1
        } else {
            -d2 / f
        }
    }
}

/// Target surface metric.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetMetric {
    /// Unit round sphere, values stored as unit vectors in R³.
    RoundSphere,
    /// Warped sphere, values stored as `(ψ, θ)`.
    Warped(WarpProfile),
}

/// Outcome of a sampled curvature sign check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureCheck {
    pub min_curvature: f64,
    pub argmin_psi: f64,
    pub max_curvature: f64,
    pub nonnegative: bool,
}

impl TargetMetric {
    pub fn curvature_at(&self, psi: f64) -> f64 {
        match self {
            TargetMetric::RoundSphere => 1.0,
            TargetMetric::Warped(p) => p.curvature(psi),
        }
    }

    pub fn check_nonneg_curvature(&self, samples: usize) -> CurvatureCheck {
        let psi_max = match self {
            TargetMetric::RoundSphere => PI,
            TargetMetric::Warped(p) => p.psi_max(),
        };
        let n = samples.max(2);
        let mut out = CurvatureCheck {
            min_curvature: f64::INFINITY,
            argmin_psi: 0.0,
            max_curvature: f64::NEG_INFINITY,
            nonnegative: true,
        };
        for k in 0..=n {
            let psi = psi_max * k as f64 / n as f64;
            let kk = self.curvature_at(psi);
            if kk < out.min_curvature {
                out.min_curvature = kk;
                out.argmin_psi = psi;
            }
            out.max_curvature = out.max_curvature.max(kk);
        }
        out.nonnegative = out.min_curvature >= -1e-9;
        out
    }

    /// `sup K`, the constant `C_N` in the splitting estimates.
    pub fn curvature_bound(&self) -> f64 {
        self.check_nonneg_curvature(4000).max_curvature
    }

    /// Default regularity threshold `4π / sup K`.
    pub fn epsilon0(&self) -> f64 {
        let c = self.curvature_bound();
        if c > 0.0 {
            4.0 * PI / c
        } else {
            f64::INFINITY
        }
    }

    /// Upper bound for the intrinsic distance between two target values.
    pub fn distance(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        match self {
            TargetMetric::RoundSphere => {
                let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                let cr = [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]];
                (cr[0].hypot(cr[1]).hypot(cr[2])).atan2(c)
            }
            TargetMetric::Warped(p) => {
                // Meridian leg plus the shorter latitude leg.
                let dtheta = {
                    let d = (a[1] - b[1]).rem_euclid(2.0 * PI);
                    d.min(2.0 * PI - d)
                };
                let phi = p.eval(a[0])[0].abs().min(p.eval(b[0])[0].abs());
                (a[0] - b[0]).abs() + phi * dtheta
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            TargetMetric::RoundSphere => PI,
            TargetMetric::Warped(p) => p.psi_max(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn torus_weights_sum_to_area() {
        let d = SurfaceDomain::flat_torus(32, 2.0 * PI).unwrap();
        assert!((pairwise_sum(d.weights()) - 4.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn disk_area_converges_at_second_order() {
        let err = |n| (pairwise_sum(SurfaceDomain::unit_disk(n).unwrap().weights()) - PI).abs();
        let (e1, e2) = (err(65), err(129));
        assert!(e1 < 5e-3, "{e1}");
        assert!(e2 < e1 / 3.0, "{e1} {e2}");
    }

    #[test]
    fn annulus_weights_converge_at_second_order() {
        // Exact annulus area between radii 0.2 and 0.55, centred off-grid.
        let exact = PI * (0.55f64.powi(2) - 0.2f64.powi(2));
        let reg = Region::Annulus { center: [0.113, -0.071], inner: 0.2, outer: 0.55 };
        let mut errs = Vec::new();
        for n in [41, 81, 161, 321] {
            let d = SurfaceDomain::unit_disk(n).unwrap();
            errs.push((pairwise_sum(&d.region_weights(&reg).unwrap()) - exact).abs());
        }
        let order = (errs[0] / errs[3]).log2() / 3.0;
        assert!(order >= 2.0 - 0.05, "errors {errs:?}, order {order}");
    }

    #[test]
    fn polar_weights_match_annulus_area() {
        let d = SurfaceDomain::polar_disk(200, 64, 0.01, 1.0, Conformal::Flat).unwrap();
        let exact = PI * (1.0 - 1e-4);
        assert!((pairwise_sum(d.weights()) - exact).abs() < 1e-3 * exact);
        let round = SurfaceDomain::polar_disk(400, 64, 1e-3, 1e3, Conformal::RoundSphere).unwrap();
        assert!((pairwise_sum(round.weights()) - 4.0 * PI).abs() < 1e-3 * 4.0 * PI);
    }

    #[test]
    fn torus_ball_uses_minimal_image() {
        let d = SurfaceDomain::flat_torus(64, 1.0).unwrap();
        let w = d.region_weights(&Region::Ball { center: [0.0, 0.0], radius: 0.2 }).unwrap();
        assert!((pairwise_sum(&w) - PI * 0.04).abs() < 2e-3);
    }

    #[test]
    fn invalid_regions_are_rejected() {
        let d = SurfaceDomain::unit_disk(33).unwrap();
        assert!(matches!(d.region_weights(&Region::Ball { center: [0.0, 0.0], radius: 0.0 }), Err(Error::EmptyRegion(_))));
        assert!(d.region_weights(&Region::Annulus { center: [0.0, 0.0], inner: 0.5, outer: 0.4 }).is_err());
        assert!(d.region_weights(&Region::Ball { center: [5.0, 5.0], radius: 0.5 }).is_err());
    }

    #[test]
    fn sine_profile_curvature_and_pole_limit() {
        let round = WarpProfile::sine_series(vec![1.0]).unwrap();
        for psi in [0.0, 0.3, 1.5, PI] {
            assert!((round.curvature(psi) - 1.0).abs() < 1e-9);
        }
        // sinψ(1 + ½ sin²ψ) = ψ + ψ³/3 + O(ψ⁵), so K(0) = −2.
        let p = WarpProfile::sine_series(vec![1.375, 0.0, -0.125]).unwrap();
        assert!((p.curvature(0.0) + 2.0).abs() < 1e-12);
        assert!(!TargetMetric::Warped(p).check_nonneg_curvature(1000).nonnegative);
    }

    #[test]
    fn dumbbell_profile_has_negative_curvature_at_equator() {
        let p = WarpProfile::sine_series(vec![1.0 / 1.6, 0.0, 0.2 / 1.6]).unwrap();
        let k = p.curvature(PI / 2.0);
        // φ(π/2) = 0.8/1.6 and φ''(π/2) = 0.8/1.6.
        assert!((k + 1.0).abs() < 1e-12, "{k}");
        let check = TargetMetric::Warped(p).check_nonneg_curvature(1000);
        assert!(!check.nonnegative);
        assert!((check.argmin_psi - PI / 2.0).abs() < 0.01);
    }

    #[test]
    fn profile_validation_reports_violations() {
        assert!(WarpProfile::sine_series(vec![0.5]).is_err());
        assert!(WarpProfile::sine_series(vec![1.0, 0.1, 0.0, -0.05]).is_ok());
    }

    #[test]
    fn table_profile_reproduces_sine() {
        let n = 400;
        let psi: Vec<f64> = (0..=n).map(|k| PI * k as f64 / n as f64).collect();
        let phi: Vec<f64> = psi.iter().map(|p| p.sin()).collect();
        let p = WarpProfile::table(psi, phi).unwrap();
        for x in [0.0, 0.7, 1.9, 3.0] {
            assert!((p.curvature(x) - 1.0).abs() < 1e-3, "{x}: {}", p.curvature(x));
        }
        assert!((TargetMetric::Warped(p).epsilon0() - 4.0 * PI).abs() < 1e-2);
    }

    #[test]
    fn table_profile_loads_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.csv");
        let mut text = String::from("# round profile\npsi,phi\n");
        for k in 0..=200 {
            let psi = PI * k as f64 / 200.0;
            text.push_str(&format!("{psi},{}\n", psi.sin()));
        }
        std::fs::write(&path, text).unwrap();
        let spec = TargetSpec::WarpedSphere { profile: ProfileSpec::Table { path: "phi.csv".into() } };
        let t = spec.build(Some(dir.path())).unwrap();
        assert!((t.curvature_at(1.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn round_epsilon0_is_four_pi() {
        assert!((TargetMetric::RoundSphere.epsilon0() - 4.0 * PI).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn cell_fraction_is_a_fraction(dx in -2.0f64..2.0, dy in -2.0f64..2.0, r in 0.01f64..2.0, h in 0.01f64..0.3) {
            let f = ball_cell_fraction([dx, dy], r, [h, 0.0], [0.0, h]);
            prop_assert!((0.0..=1.0).contains(&f));
        }

        #[test]
        fn cell_fraction_is_monotone_in_radius(dx in -1.0f64..1.0, dy in -1.0f64..1.0, r in 0.01f64..1.0, dr in 0.0f64..0.5) {
            let h = 0.05;
            let a = ball_cell_fraction([dx, dy], r, [h, 0.0], [0.0, h]);
            let b = ball_cell_fraction([dx, dy], r + dr, [h, 0.0], [0.0, h]);
            prop_assert!(b >= a - 1e-15);
        }

        #[test]
        fn region_energy_is_additive(r1 in 0.05f64..0.4, gap in 0.01f64..0.4) {
            let d = SurfaceDomain::unit_disk(41).unwrap();
            let c = [0.05, -0.02];
            let f: Vec<f64> = (0..d.len()).map(|i| { let p = d.position(i); 1.0 + p[0] * p[0] }).collect();
            let ball = d.integrate_region(&Region::Ball { center: c, radius: r1 }, &f).unwrap();
            let ann = d.integrate_region(&Region::Annulus { center: c, inner: r1, outer: r1 + gap }, &f).unwrap();
            let big = d.integrate_region(&Region::Ball { center: c, radius: r1 + gap }, &f).unwrap();
            prop_assert!((ball + ann - big).abs() < 1e-12);
        }
    }
}
