//! Bubble-tree extraction at a singular time.
//!
//! Concentration points are found from unresolved gradients across late
//! snapshots. At each point the energy centre of mass and the outer energy
//! scale fix a blow-up chart; the rescaled map on a reference log-polar grid is
//! the bubble. Nested concentrations inside a bubble are extracted recursively
//! up to a fixed depth. Neck annuli between bubble and body are accounted for
//! by energy and oscillation, and the energy identity compares the energy left
//! in a small ball with the sum of bubble energies.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::corotational::CorotationalState;
use crate::flow::harmonic_extension;
use crate::geometry::{Conformal, DomainSpec, Region, SurfaceDomain, TargetMetric};
use crate::scale_monitor::{energy_scale, AnalyzedState, EnergyProbe};
use crate::state::MapState;

/// Parameters of concentration detection, extraction and neck accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    /// Energy threshold of the scales; `None` means `0.1·ε₀` of the target.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Outer radius `ρ` of the scales at a concentration point.
    pub rho: f64,
    /// A node is flagged when `|du|·ℓ` exceeds this.
    #[serde(default = "d_threshold")]
    pub threshold: f64,
    /// Length `ℓ` of the detection test; `None` uses the local grid spacing.
    #[serde(default)]
    pub length: Option<f64>,
    /// Consecutive snapshots a cluster must persist through, ending at the last one.
    #[serde(default = "d_persistence")]
    pub persistence: usize,
    /// Largest reference radius in units of the bubble scale.
    #[serde(default = "d_reference_radius")]
    pub reference_radius: f64,
    /// Inner radius of the reference grid in units of the bubble scale.
    #[serde(default = "d_reference_inner")]
    pub reference_inner: f64,
    /// Cells per direction of the reference grid.
    #[serde(default = "d_reference_cells")]
    pub reference_cells: usize,
    /// `(α, β)` ladder for neck annuli `U^{βρ}_{αλ}`; α must increase and β decrease.
    #[serde(default = "d_ladder")]
    pub neck_ladder: Vec<(f64, f64)>,
    /// Radius, in bubble units, of the ball that must hold `ε` for a nested bubble.
    #[serde(default = "d_child_radius")]
    pub child_radius: f64,
    #[serde(default = "d_max_depth")]
    pub max_depth: usize,
    /// A bubble is holomorphic when `E_∂̄ ≤ dbar_tolerance·E`.
    #[serde(default = "d_dbar_tolerance")]
    pub dbar_tolerance: f64,
    /// Radius of the energy-identity ball; `None` uses `ρ/2`.
    #[serde(default)]
    pub identity_radius: Option<f64>,
    /// Neck smallness threshold `δ₀`; `None` means `0.1·ε₀`.
    #[serde(default)]
    pub neck_delta: Option<f64>,
}

fn d_threshold() -> f64 {
    0.5
}
fn d_persistence() -> usize {
    2
}
fn d_reference_radius() -> f64 {
    64.0
}
fn d_reference_inner() -> f64 {
    1e-3
}
fn d_reference_cells() -> usize {
    128
}
fn d_ladder() -> Vec<(f64, f64)> {
    vec![(4.0, 1.0), (8.0, 0.5), (16.0, 0.25), (32.0, 0.125)]
}
fn d_child_radius() -> f64 {
    0.02
}
fn d_max_depth() -> usize {
    3
}
fn d_dbar_tolerance() -> f64 {
    0.01
}

impl TreeConfig {
    pub fn new(rho: f64) -> Self {
        serde_json::from_value(serde_json::json!({ "rho": rho })).expect("defaults deserialize")
    }

    pub fn epsilon_for(&self, target: &TargetMetric) -> f64 {
        self.epsilon.unwrap_or(0.1 * target.epsilon0())
    }

    pub fn neck_delta_for(&self, target: &TargetMetric) -> f64 {
        self.neck_delta.unwrap_or(0.1 * target.epsilon0())
    }

    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if let Some(eps) = self.epsilon {
            if !(eps > 0.0) {
                e.push(format!("bubble_tree.epsilon = {eps} must be positive"));
            }
        }
        if !(self.rho > 0.0) {
            e.push(format!("bubble_tree.rho = {} must be positive", self.rho));
        }
        if !(self.threshold > 0.0) {
            e.push("bubble_tree.threshold must be positive".into());
        }
        if self.length.is_some_and(|l| !(l > 0.0)) {
            e.push("bubble_tree.length must be positive".into());
        }
        if self.persistence == 0 {
            e.push("bubble_tree.persistence must be at least 1".into());
        }
        if !(self.reference_inner > 0.0 && self.reference_radius > 10.0 * self.reference_inner) {
            e.push("bubble_tree reference grid needs 0 < 10·reference_inner < reference_radius".into());
        }
        if self.reference_cells < 16 {
            e.push("bubble_tree.reference_cells must be at least 16".into());
        }
        let ladder_ok = self.neck_ladder.iter().all(|&(a, b)| a > 0.0 && b > 0.0 && b <= 1.0)
            && self.neck_ladder.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 <= w[0].1);
        if !ladder_ok {
            e.push("bubble_tree.neck_ladder must have α increasing, β decreasing, 0 < β ≤ 1".into());
        }
        if !(self.child_radius > 0.0 && self.child_radius < 1.0) {
            e.push("bubble_tree.child_radius must lie in (0, 1)".into());
        }
        if !(self.dbar_tolerance >= 0.0) {
            e.push("bubble_tree.dbar_tolerance must be nonnegative".into());
        }
        if self.identity_radius.is_some_and(|r| !(r > 0.0)) {
            e.push("bubble_tree.identity_radius must be positive".into());
        }
        if self.neck_delta.is_some_and(|d| !(d > 0.0)) {
            e.push("bubble_tree.neck_delta must be positive".into());
        }
        e
    }
}

/// A persistent concentration point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub center: [f64; 2],
    /// Time of the last snapshot in which it was flagged.
    pub t: f64,
    /// Largest `|du|·ℓ` in the cluster at that time.
    pub peak: f64,
    /// Consecutive snapshots, ending at the last one, in which it was flagged.
    pub streak: usize,
    /// Energy in `B_{4λ}` at the last snapshot, used for ordering.
    pub energy: f64,
}

struct Cluster {
    center: [f64; 2],
    peak: f64,
    radius: f64,
}

fn clusters(u: &AnalyzedState, cfg: &TreeConfig, eps: f64) -> Result<Vec<Cluster>> {
    let d = &*u.state.domain;
    let mut flagged: Vec<(f64, usize)> = (0..d.len())
        .filter(|&i| d.inside(i) && !d.is_fixed(i))
        .map(|i| {
            let len = cfg.length.unwrap_or_else(|| d.local_spacing(i));
            ((2.0 * u.fields.energy_density[i]).sqrt() * len, i)
        })
        .filter(|&(v, _)| v > cfg.threshold)
        .collect();
    flagged.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let rho = cfg.rho.min(u.max_radius());
    let mut out: Vec<Cluster> = Vec::new();
    for (v, i) in flagged {
        let x = d.position(i);
        let near = out.iter().any(|c| {
            let dx = d.displacement(c.center, x);
            dx[0].hypot(dx[1]) <= c.radius
        });
        if near {
            continue;
        }
        let lambda = energy_scale(u, eps, rho, x)?;
        let floor = 4.0 * cfg.length.unwrap_or_else(|| d.local_spacing(i));
        out.push(Cluster { center: x, peak: v, radius: (4.0 * lambda).max(floor) });
    }
    Ok(out)
}

/// Points where `|du|·ℓ > threshold` in each of the last `persistence`
/// snapshots, clustered at scale `4λ` and ordered by decreasing energy.
pub fn detect_concentrations(snapshots: &[AnalyzedState], cfg: &TreeConfig) -> Result<Vec<Candidate>> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let Some(last) = snapshots.last() else {
        return Ok(Vec::new());
    };
    let eps = cfg.epsilon_for(&last.state.target);
    let per: Vec<Vec<Cluster>> = snapshots.iter().map(|s| clusters(s, cfg, eps)).collect::<Result<_>>()?;
    let d = &*last.state.domain;
    let mut out = Vec::new();
    for c in per.last().unwrap() {
        // Walk back while some cluster of the earlier snapshot covers this one.
        let mut streak = 1;
        let mut at = c.center;
        for earlier in per.iter().rev().skip(1) {
            let hit = earlier.iter().find(|e| {
                let dx = d.displacement(e.center, at);
                dx[0].hypot(dx[1]) <= e.radius.max(c.radius)
            });
            match hit {
                Some(e) => {
                    streak += 1;
                    at = e.center;
                }
                None => break,
            }
        }
        if streak >= cfg.persistence.min(snapshots.len()) {
            let energy = last.ball_energy(c.center, c.radius)?;
            out.push(Candidate { center: c.center, t: last.state.t, peak: c.peak, streak, energy });
        }
    }
    out.sort_by(|a, b| b.energy.total_cmp(&a.energy));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Holomorphic,
    Antiholomorphic,
    Neither,
}

/// One extracted bubble and its nested bubbles.
#[derive(Clone, Serialize, Deserialize)]
pub struct Bubble {
    /// Energy centre of mass `q`.
    pub center: [f64; 2],
    /// Outer energy scale `λ_{ε,ρ/2,q}`.
    pub scale: f64,
    /// Radius of the ball about `q` holding half of the rescaled energy.
    pub half_energy_radius: f64,
    /// `λ_{ε,·,0}` of the rescaled map; 1 up to the radius-grid step.
    pub normalized_scale: f64,
    /// Reference radius in units of `scale`.
    pub reference_radius: f64,
    /// Radius, in units of `scale`, of the ball the bubble energies are measured on:
    /// the neck midpoint `√(λ·reach)/λ`, so body energy near `q` is not counted.
    pub core_radius: f64,
    /// Energy of the rescaled map on the core ball, outside the balls of its nested bubbles.
    pub energy: f64,
    pub e_holo: f64,
    pub e_antiholo: f64,
    pub orientation: Orientation,
    pub depth: usize,
    /// A further concentration sits below the depth limit.
    pub inconclusive: bool,
    pub children: Vec<Bubble>,
    #[serde(skip)]
    pub state: Option<MapState>,
}

impl std::fmt::Debug for Bubble {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bubble")
            .field("center", &self.center)
            .field("scale", &self.scale)
            .field("half_energy_radius", &self.half_energy_radius)
            .field("normalized_scale", &self.normalized_scale)
            .field("reference_radius", &self.reference_radius)
            .field("core_radius", &self.core_radius)
            .field("energy", &self.energy)
            .field("e_holo", &self.e_holo)
            .field("e_antiholo", &self.e_antiholo)
            .field("orientation", &self.orientation)
            .field("depth", &self.depth)
            .field("inconclusive", &self.inconclusive)
            .field("children", &self.children)
            .finish_non_exhaustive()
    }
}

impl Bubble {
    /// Energy of this bubble and all nested ones.
    pub fn total_energy(&self) -> f64 {
        self.energy + self.children.iter().map(Bubble::total_energy).sum::<f64>()
    }

    pub fn count(&self) -> usize {
        1 + self.children.iter().map(Bubble::count).sum::<usize>()
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a Bubble>) {
        out.push(self);
        for c in &self.children {
            c.walk(out);
        }
    }
}

/// Distance from `p` to the edge of the domain; infinite-free on the torus.
pub fn distance_to_edge(d: &SurfaceDomain, p: [f64; 2]) -> f64 {
    match *d.spec() {
        DomainSpec::FlatTorus { length, .. } => 0.5 * length,
        DomainSpec::UnitDisk { .. } => 1.0 - p[0].hypot(p[1]),
        DomainSpec::PolarDisk { r_max, .. } => r_max - p[0].hypot(p[1]),
    }
}

fn energy_center(u: &AnalyzedState, p: [f64; 2], radius: f64) -> Result<[f64; 2]> {
    let d = &*u.state.domain;
    let w = d.region_weights(&Region::Ball { center: p, radius })?;
    let (mut m, mut mx, mut my) = (0.0, 0.0, 0.0);
    for i in 0..d.len() {
        if w[i] == 0.0 {
            continue;
        }
        let e = w[i] * u.fields.energy_density[i];
        let x = d.displacement(p, d.position(i));
        m += e;
        mx += e * x[0];
        my += e * x[1];
    }
    if !(m > 0.0) {
        return Ok(p);
    }
    Ok([p[0] + mx / m, p[1] + my / m])
}

/// `v(x) = u(q + λx)` on a log-polar grid `r ∈ [r_in, R]`.
pub fn rescale(u: &MapState, q: [f64; 2], lambda: f64, inner: f64, radius: f64, cells: usize) -> Result<MapState> {
    let reference = Arc::new(SurfaceDomain::polar_disk(cells, cells, inner, radius, Conformal::Flat)?);
    let mut values = Vec::with_capacity(reference.len());
    for i in 0..reference.len() {
        let x = reference.position(i);
        let y = [q[0] + lambda * x[0], q[1] + lambda * x[1]];
        let v = u.interpolate(y).ok_or_else(|| Error::OutOfDomain(format!("rescaled point {y:?} leaves the source grid")))?;
        values.push(v);
    }
    MapState::new(reference, u.target.clone(), values, u.t)
}

fn half_energy_radius(v: &AnalyzedState, total: f64, inner: f64, outer: f64) -> Result<f64> {
    let (mut lo, mut hi) = (inner, outer);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if v.ball_energy([0.0; 2], mid)? < 0.5 * total {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Extracts the bubble concentrating at `p`.
///
/// `reach` bounds the physical radius of the blow-up chart, for instance by
/// half the distance to another concentration point.
pub fn extract_bubble(u: &AnalyzedState, p: [f64; 2], cfg: &TreeConfig, reach: Option<f64>) -> Result<Bubble> {
    extract_at_depth(u, p, cfg, cfg.rho, reach, 0)
}

fn extract_at_depth(u: &AnalyzedState, p: [f64; 2], cfg: &TreeConfig, rho: f64, reach: Option<f64>, depth: usize) -> Result<Bubble> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let d = &*u.state.domain;
    let eps = cfg.epsilon_for(&u.state.target);
    let rho = rho.min(u.max_radius());
    let floor = u.scale_floor();
    let outer = energy_scale(u, eps, rho, p)?;
    if !(outer > floor) {
        return Err(Error::Precondition(format!(
            "outer energy scale {outer:e} at {p:?} is not above the mesh floor {floor:e}"
        )));
    }
    let q = energy_center(u, p, outer)?;
    let lambda = energy_scale(u, eps, 0.5 * rho, q)?;
    if !(lambda > floor) {
        return Err(Error::Precondition(format!("bubble scale {lambda:e} at {q:?} is not above the mesh floor {floor:e}")));
    }
    let mut avail = distance_to_edge(d, q);
    if let Some(r) = reach {
        avail = avail.min(r);
    }
    let radius = cfg.reference_radius.min(avail / lambda);
    if !(radius > 10.0 * cfg.reference_inner) {
        return Err(Error::Precondition(format!("no room for a blow-up chart at {q:?}: reach {avail:e}, scale {lambda:e}")));
    }
    if let DomainSpec::PolarDisk { r_min, .. } = *d.spec() {
        if lambda * cfg.reference_inner < r_min - q[0].hypot(q[1]) {
            return Err(Error::Precondition(format!(
                "reference grid reaches below the source grid: λ·r_in = {:e} < r_min = {r_min:e}",
                lambda * cfg.reference_inner
            )));
        }
    }
    let state = rescale(&u.state, q, lambda, cfg.reference_inner, radius, cfg.reference_cells)?;
    let v = AnalyzedState::new(state)?;
    let vd = &*v.state.domain;
    let core_radius = (avail / lambda).sqrt().min(radius);
    let core = Region::Ball { center: [0.0; 2], radius: core_radius };
    let measured = [
        vd.integrate_region(&core, &v.fields.energy_density)?,
        vd.integrate_region(&core, &v.fields.e_holo)?,
        vd.integrate_region(&core, &v.fields.e_antiholo)?,
    ];
    let normalized_scale = energy_scale(&v, eps, (0.5 * rho / lambda).min(v.max_radius()), [0.0; 2])?;
    let half = half_energy_radius(&v, measured[0], cfg.reference_inner, core_radius)?;

    // Nested concentration: the densest node holding ε within the child radius.
    let mut children = Vec::new();
    let mut inconclusive = false;
    let mut removed = [0.0; 3];
    let densest = (0..vd.len()).filter(|&i| vd.inside(i)).max_by(|&a, &b| v.fields.energy_density[a].total_cmp(&v.fields.energy_density[b]));
    if let Some(i) = densest {
        let c = vd.position(i);
        let delta = cfg.child_radius;
        if c[0].hypot(c[1]) + delta <= core_radius && v.ball_energy(c, delta)? >= eps {
            if depth + 1 >= cfg.max_depth {
                inconclusive = true;
            } else {
                // Extract from the source so the child chart is not limited by the reference grid.
                let at = [q[0] + lambda * c[0], q[1] + lambda * c[1]];
                let child = extract_at_depth(u, at, cfg, 2.0 * delta * lambda, Some(delta * lambda), depth + 1);
                match child {
                    Ok(ch) => {
                        let region = Region::Ball { center: c, radius: delta };
                        removed[0] = vd.integrate_region(&region, &v.fields.energy_density)?;
                        removed[1] = vd.integrate_region(&region, &v.fields.e_holo)?;
                        removed[2] = vd.integrate_region(&region, &v.fields.e_antiholo)?;
                        children.push(ch);
                    }
                    Err(Error::Precondition(_)) => inconclusive = true,
                    Err(e) => return Err(e),
                }
            }
        }
    }
    let energy = measured[0] - removed[0];
    let e_holo = measured[1] - removed[1];
    let e_antiholo = measured[2] - removed[2];
    let orientation = if e_antiholo <= cfg.dbar_tolerance * energy {
        Orientation::Holomorphic
    } else if e_holo <= cfg.dbar_tolerance * energy {
        Orientation::Antiholomorphic
    } else {
        Orientation::Neither
    };
    Ok(Bubble {
        center: q,
        scale: lambda,
        half_energy_radius: half * lambda,
        normalized_scale,
        reference_radius: radius,
        core_radius,
        energy,
        e_holo,
        e_antiholo,
        orientation,
        depth,
        inconclusive,
        children,
        state: Some(v.state),
    })
}

/// Energy and oscillation of `u` on the neck annulus `U^{βρ}_{αλ}(p)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeckAccount {
    pub alpha: f64,
    pub beta: f64,
    pub inner: f64,
    pub outer: f64,
    pub energy: f64,
    /// Largest target distance between sampled nodes of the annulus.
    pub oscillation: f64,
}

/// Nodes used for the oscillation; larger sets are thinned by a fixed stride.
const OSC_SAMPLES: usize = 2048;

pub fn neck_accounting(u: &AnalyzedState, p: [f64; 2], lambda: f64, rho: f64, alpha: f64, beta: f64) -> Result<NeckAccount> {
    let (inner, outer) = (alpha * lambda, beta * rho);
    if !(inner > 0.0 && outer > inner) {
        return Err(Error::InvalidParameter(format!("neck U^{{{outer}}}_{{{inner}}} is empty")));
    }
    let energy = u.annulus_energy(p, inner, outer)?;
    let d = &*u.state.domain;
    let nodes: Vec<usize> = (0..d.len())
        .filter(|&i| {
            let x = d.displacement(p, d.position(i));
            let r = x[0].hypot(x[1]);
            d.inside(i) && r >= inner && r <= outer
        })
        .collect();
    let stride = nodes.len().div_ceil(OSC_SAMPLES).max(1);
    let sample: Vec<[f64; 3]> = nodes.iter().step_by(stride).map(|&i| u.state.values[i]).collect();
    let mut osc: f64 = 0.0;
    for (a, x) in sample.iter().enumerate() {
        for y in &sample[a + 1..] {
            osc = osc.max(u.state.target.distance(x, y));
        }
    }
    Ok(NeckAccount { alpha, beta, inner, outer, energy, oscillation: osc })
}

/// Whether the narrowest neck of a ladder still holds at least `δ₀`, i.e. the
/// neck energy does not vanish and the no-neck conclusion fails.
pub fn neck_flagged(necks: &[NeckAccount], delta0: f64) -> bool {
    necks.last().is_some_and(|n| n.energy >= delta0)
}

/// Energy identity at one concentration point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub center: [f64; 2],
    pub radius: f64,
    /// `E(u, B_r(p))` at the analysed time.
    pub ball_energy: f64,
    /// `E(body, B_r(p))`; tends to 0 with `r`.
    pub body_energy: f64,
    pub bubble_energy: f64,
    /// `|E(u, B_r) − Σ E(φ_k)|`.
    pub residual: f64,
    /// Every bubble in the tree is holomorphic.
    pub holomorphic: bool,
}

/// Compares the energy in `B_r(q)` with the bubble energies of the tree rooted at `q`.
pub fn energy_identity_check(u: &AnalyzedState, body: Option<&AnalyzedState>, bubble: &Bubble, radius: f64) -> Result<IdentityCheck> {
    let ball = u.ball_energy(bubble.center, radius)?;
    let body_energy = match body {
        Some(b) => b.ball_energy(bubble.center, radius)?,
        None => 0.0,
    };
    let total = bubble.total_energy();
    let mut all = Vec::new();
    bubble.walk(&mut all);
    Ok(IdentityCheck {
        center: bubble.center,
        radius,
        ball_energy: ball,
        body_energy,
        bubble_energy: total,
        residual: (ball - total).abs(),
        holomorphic: all.iter().all(|b| b.orientation == Orientation::Holomorphic),
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BubbleTree {
    pub t: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub candidates: Vec<Candidate>,
    /// Root bubbles, in the order they were processed (decreasing candidate energy).
    pub bubbles: Vec<Bubble>,
    /// Neck ladder per root bubble.
    pub necks: Vec<Vec<NeckAccount>>,
    /// Per root bubble: the narrowest neck still holds `δ₀`.
    pub neck_flags: Vec<bool>,
    pub identity: Vec<IdentityCheck>,
    /// Largest identity residual; 0 when nothing concentrates.
    pub energy_identity_residual: f64,
    pub inconclusive: bool,
    pub restart_policy: String,
    /// Candidates at which extraction failed its precondition, with the reason.
    pub skipped: Vec<(Candidate, String)>,
    #[serde(skip)]
    pub body_map: Option<MapState>,
}

impl BubbleTree {
    pub fn all_bubbles(&self) -> Vec<&Bubble> {
        let mut out = Vec::new();
        for b in &self.bubbles {
            b.walk(&mut out);
        }
        out
    }
}

/// Lifts radial snapshots onto the log-polar disk `r_min ≤ r ≤ 1` for planar analysis.
pub fn lift_radial(states: &[CorotationalState], n_r: usize, n_theta: usize, r_min: f64) -> Result<Vec<AnalyzedState>> {
    let d = SurfaceDomain::polar_disk(n_r, n_theta, r_min, 1.0, Conformal::Flat)?;
    states.par_iter().map(|s| AnalyzedState::new(s.lift(&d))).collect()
}

/// Detects concentrations over `snapshots` and analyses the last one.
pub fn build_bubble_tree(snapshots: &[AnalyzedState], cfg: &TreeConfig) -> Result<BubbleTree> {
    let candidates = detect_concentrations(snapshots, cfg)?;
    let Some(late) = snapshots.last() else {
        return Err(Error::InvalidParameter("no snapshots to analyse".into()));
    };
    let d = &*late.state.domain;
    let eps = cfg.epsilon_for(&late.state.target);
    let mut tree = BubbleTree {
        t: late.state.t,
        epsilon: eps,
        rho: cfg.rho,
        candidates: candidates.clone(),
        bubbles: Vec::new(),
        necks: Vec::new(),
        neck_flags: Vec::new(),
        identity: Vec::new(),
        energy_identity_residual: 0.0,
        inconclusive: false,
        restart_policy: crate::flow::RESTART_POLICY.into(),
        skipped: Vec::new(),
        body_map: None,
    };
    let mut body = late.state.clone();
    let mut excised = false;
    for (k, c) in candidates.iter().enumerate() {
        let others = candidates
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .map(|(_, o)| {
                let dx = d.displacement(c.center, o.center);
                0.5 * dx[0].hypot(dx[1])
            })
            .fold(f64::INFINITY, f64::min);
        let reach = others.min(cfg.rho);
        let bubble = match extract_bubble(late, c.center, cfg, Some(reach)) {
            Ok(b) => b,
            Err(Error::Precondition(msg)) => {
                tree.skipped.push((c.clone(), msg));
                continue;
            }
            Err(e) => return Err(e),
        };
        let rho = reach.min(cfg.rho);
        let necks = cfg
            .neck_ladder
            .iter()
            .filter(|&&(a, b)| a * bubble.scale < b * rho)
            .map(|&(a, b)| neck_accounting(late, bubble.center, bubble.scale, rho, a, b))
            .collect::<Result<Vec<_>>>()?;
        tree.inconclusive |= bubble.inconclusive || bubble.children.iter().any(|c| c.inconclusive);
        if matches!(*late.state.target, TargetMetric::RoundSphere) {
            body = harmonic_extension(&body, bubble.center, 4.0 * bubble.scale)?;
            excised = true;
        }
        tree.neck_flags.push(neck_flagged(&necks, cfg.neck_delta_for(&late.state.target)));
        tree.necks.push(necks);
        tree.bubbles.push(bubble);
    }
    let body = if excised { Some(AnalyzedState::new(body)?) } else { None };
    for b in &tree.bubbles {
        let radius = cfg.identity_radius.unwrap_or(0.5 * cfg.rho);
        let chk = energy_identity_check(late, body.as_ref(), b, radius)?;
        tree.energy_identity_residual = tree.energy_identity_residual.max(chk.residual);
        tree.identity.push(chk);
    }
    tree.body_map = body.map(|b| b.state);
    Ok(tree)
}
