//! Time integration of `∂_t u = τ(u)`.

pub mod corotational;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{tension, EnergyReport, FieldBundle};
use crate::geometry::{SurfaceDomain, TargetMetric};
use crate::scale_monitor::{energy_scale, AnalyzedState};
use crate::state::{normalized, MapState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CflMode {
    #[default]
    SupGradient,
    Fixed,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    Euler,
    /// Second-order Runge–Kutta; the default, since first-order time error
    /// dominates the global energy balance at moderate resolution.
    #[default]
    Heun,
}

fn d_safety() -> f64 {
    0.5
}
fn d_dt_min() -> f64 {
    1e-12
}
fn d_jump() -> f64 {
    1.0
}
fn d_tol() -> f64 {
    1e-3
}
fn d_q() -> f64 {
    2.0
}
fn d_steps() -> usize {
    50_000_000
}
fn d_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    #[serde(default = "d_safety")]
    pub dt_safety: f64,
    #[serde(default)]
    pub cfl_mode: CflMode,
    /// Step for `CflMode::Fixed`.
    #[serde(default)]
    pub fixed_dt: Option<f64>,
    #[serde(default)]
    pub integrator: Integrator,
    pub t_max: f64,
    /// Time between stored snapshots; 0 stores only the endpoints.
    #[serde(default)]
    pub snapshot_cadence: f64,
    /// Time between energy reports; 0 reports every step.
    #[serde(default)]
    pub report_cadence: f64,
    #[serde(default = "d_true")]
    pub stop_on_blowup: bool,
    #[serde(default)]
    pub restart_after_blowup: bool,
    #[serde(default = "d_dt_min")]
    pub dt_min: f64,
    /// Blowup when `sup |du|·(grid step)` exceeds this.
    #[serde(default = "d_jump")]
    pub gradient_threshold: f64,
    /// Relative tolerance of the global energy identity.
    #[serde(default = "d_tol")]
    pub energy_tolerance: f64,
    #[serde(default = "d_true")]
    pub abort_on_identity_violation: bool,
    #[serde(default = "d_q")]
    pub stress_q: f64,
    #[serde(default = "d_steps")]
    pub max_steps: usize,
    /// `(ε, ρ)` for the energy scale at a detected singularity.
    #[serde(default)]
    pub blowup_scale: Option<(f64, f64)>,
}

impl FlowConfig {
    pub fn new(t_max: f64) -> Self {
        serde_json::from_value(serde_json::json!({ "t_max": t_max })).expect("defaults deserialize")
    }

    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        if !(self.dt_safety > 0.0 && self.dt_safety <= 1.0) {
            e.push(format!("flow.dt_safety = {} must lie in (0, 1]", self.dt_safety));
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            e.push(format!("flow.t_max = {} must be positive", self.t_max));
        }
        if self.cfl_mode == CflMode::Fixed && !self.fixed_dt.is_some_and(|d| d > 0.0) {
            e.push("flow.fixed_dt must be positive when cfl_mode is fixed".into());
        }
        if self.snapshot_cadence < 0.0 || self.report_cadence < 0.0 {
            e.push("flow cadences must be nonnegative".into());
        }
        if !(self.gradient_threshold > 0.0) {
            e.push(format!("flow.gradient_threshold = {} must be positive", self.gradient_threshold));
        }
        if !(self.stress_q >= 1.0) {
            e.push(format!("flow.stress_q = {} must be at least 1", self.stress_q));
        }
        if !(self.energy_tolerance > 0.0) {
            e.push("flow.energy_tolerance must be positive".into());
        }
        e
    }
}

/// Linear stability limit `1 / (2σ⁻²(h_x⁻² + h_y⁻²))` over free nodes.
pub fn stability_dt(d: &SurfaceDomain) -> f64 {
    let inv = 1.0 / (d.hx * d.hx) + 1.0 / (d.hy * d.hy);
    (0..d.len())
        .filter(|&i| !d.is_fixed(i))
        .map(|i| d.sigma2()[i] / (2.0 * inv))
        .fold(f64::INFINITY, f64::min)
}

/// `dt = dt_safety · min(σ²h²/4, 1/(2 sup|du|² + ε_machine))`.
pub fn cfl_dt(d: &SurfaceDomain, fb: &FieldBundle, cfg: &FlowConfig) -> f64 {
    if cfg.cfl_mode == CflMode::Fixed {
        return cfg.fixed_dt.unwrap_or(0.0);
    }
    let sup2 = (0..d.len()).filter(|&i| d.inside(i)).map(|i| 2.0 * fb.energy_density[i]).fold(0.0, f64::max);
    cfg.dt_safety * stability_dt(d).min(1.0 / (2.0 * sup2 + f64::EPSILON))
}

fn advance(u: &MapState, tau: &[[f64; 3]], dt: f64) -> Result<MapState> {
    let d = &*u.domain;
    let mut next = u.clone();
    next.t = u.t + dt;
    match &*u.target {
        TargetMetric::RoundSphere => {
            for i in 0..d.len() {
                if d.is_fixed(i) {
                    continue;
                }
                let v = u.values[i];
                let t = tau[i];
                next.values[i] = normalized([v[0] + dt * t[0], v[1] + dt * t[1], v[2] + dt * t[2]]);
            }
        }
        TargetMetric::Warped(p) => {
            for i in 0..d.len() {
                if d.is_fixed(i) {
                    continue;
                }
                let v = u.values[i];
                let phi = p.eval(v[0])[0];
                let psi = v[0] + dt * tau[i][0];
                if !(psi > 0.0 && psi < p.psi_max()) {
                    return Err(Error::PoleCrossing { node: i });
                }
                next.values[i] = [psi, (v[1] + dt * tau[i][1] / phi).rem_euclid(2.0 * std::f64::consts::PI), 0.0];
            }
        }
    }
    Ok(next)
}

/// One explicit step with the given `dt`.
pub fn step_with_dt(u: &MapState, dt: f64, integrator: Integrator) -> Result<MapState> {
    let tau = tension(u)?;
    match integrator {
        Integrator::Euler => advance(u, &tau, dt),
        Integrator::Heun => {
            let mid = advance(u, &tau, dt)?;
            let tau2 = tension(&mid)?;
            let avg: Vec<[f64; 3]> = match &*u.target {
                TargetMetric::RoundSphere => tau
                    .iter()
                    .zip(&tau2)
                    .enumerate()
                    .map(|(i, (a, b))| {
                        // Transport τ(u₁) back to T_u by projection before averaging.
                        let n = u.values[i];
                        let pb = b[0] * n[0] + b[1] * n[1] + b[2] * n[2];
                        [0, 1, 2].map(|c| 0.5 * (a[c] + b[c] - pb * n[c]))
                    })
                    .collect(),
                TargetMetric::Warped(_) => tau.iter().zip(&tau2).map(|(a, b)| [0, 1, 2].map(|c| 0.5 * (a[c] + b[c]))).collect(),
            };
            advance(u, &avg, dt)
        }
    }
}

/// One step with the CFL time step; returns the new state and the step used.
pub fn step_2d(u: &MapState, cfg: &FlowConfig) -> Result<(MapState, f64)> {
    let fb = FieldBundle::compute(u)?;
    let dt = cfl_dt(&u.domain, &fb, cfg);
    if !(dt >= cfg.dt_min) {
        return Err(Error::Precondition(format!("time step {dt:e} below dt_min {:e}", cfg.dt_min)));
    }
    Ok((step_with_dt(u, dt, cfg.integrator)?, dt))
}

/// Diagnostic scalar heat step `f + dt σ⁻² Δ_h f` with the same stencil as the tension.
pub fn heat_step(d: &SurfaceDomain, f: &[f64], dt: f64) -> Vec<f64> {
    let delta = |a: usize, b: usize| [f[b] - f[a]];
    (0..d.len())
        .map(|i| {
            if d.is_fixed(i) {
                f[i]
            } else {
                f[i] + dt * crate::fields::coordinate_laplacian(d, i, &delta)[0] / d.sigma2()[i]
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlowupReason {
    DtUnderflow,
    GradientUnresolved,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingularEvent {
    pub t: f64,
    pub location: [f64; 2],
    pub sup_du: f64,
    pub reason: BlowupReason,
    /// Energy scale at the location when detected, if a scale was configured.
    pub lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub t: f64,
    pub center: [f64; 2],
    pub radius: f64,
    pub energy_before: f64,
    pub energy_after: f64,
}

/// Continuation rule after a singular time, recorded in outputs.
pub const RESTART_POLICY: &str = "harmonic-extension";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FlowTrace {
    pub reports: Vec<EnergyReport>,
    /// Cumulative `∫∫|τ|²` at each report.
    pub dissipation: Vec<f64>,
    #[serde(skip)]
    pub snapshots: Vec<MapState>,
    pub singular_events: Vec<SingularEvent>,
    pub restarts: Vec<RestartRecord>,
    pub restart_policy: String,
    /// `max |E(t) + ∫∫|τ|² − E(t₀)| / E(0)` over smooth intervals, for the variational energy.
    pub max_identity_violation: f64,
    /// `max (E_{n+1} − E_n)/dt_n²`, clipped at 0.
    pub max_energy_increase_rate: f64,
    pub max_dbar_increase_rate: f64,
    /// `max |κ(t) − κ(0)| / max(|κ(0)|, 1)` before the first singular time.
    pub kappa_drift: f64,
    pub steps: usize,
    pub min_dt: f64,
    pub max_dt: f64,
}

struct Step {
    fb: FieldBundle,
    report: EnergyReport,
}

fn analyze(u: &MapState, q: f64) -> Result<Step> {
    let mut fb = FieldBundle::compute(u)?;
    let report = fb.energy_report(u, q)?;
    Ok(Step { fb, report })
}

/// Integrates until `t_max`, a detected singular time, or `max_steps`.
pub fn run_flow(u0: &MapState, cfg: &FlowConfig) -> Result<FlowTrace> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    let d = u0.domain.clone();
    let mut u = u0.clone();
    let mut cur = analyze(&u, cfg.stress_q)?;
    let e0 = cur.report.variational_energy;
    let kappa0 = cur.report.kappa;
    let mut tr = FlowTrace { restart_policy: RESTART_POLICY.into(), min_dt: f64::INFINITY, ..Default::default() };
    tr.reports.push(cur.report);
    tr.dissipation.push(0.0);
    tr.snapshots.push(u.clone());
    let (mut e_ref, mut diss_since_ref, mut diss_total) = (e0, 0.0, 0.0);
    let mut next_report = cfg.report_cadence;
    let mut next_snapshot = cfg.snapshot_cadence;
    let scale = e0.max(1e-300);
    while u.t < cfg.t_max && tr.steps < cfg.max_steps {
        // Blowup detection on the current state.
        let mut worst = (0.0, 0usize);
        for i in 0..d.len() {
            if d.inside(i) {
                let jump = (2.0 * cur.fb.energy_density[i]).sqrt() * d.local_spacing(i);
                if jump > worst.0 {
                    worst = (jump, i);
                }
            }
        }
        let mut dt = cfl_dt(&d, &cur.fb, cfg);
        let reason = if worst.0 > cfg.gradient_threshold {
            Some(BlowupReason::GradientUnresolved)
        } else if dt < cfg.dt_min {
            Some(BlowupReason::DtUnderflow)
        } else {
            None
        };
        if let Some(reason) = reason {
            let location = d.position(worst.1);
            let lambda = match cfg.blowup_scale {
                Some((eps, rho)) => {
                    let probe = AnalyzedState { state: u.clone(), fields: cur.fb.clone() };
                    Some(energy_scale(&probe, eps, rho.min(0.5 * d.diameter()), location)?)
                }
                None => None,
            };
            tr.singular_events.push(SingularEvent {
                t: u.t,
                location,
                sup_du: cur.report.sup_du,
                reason,
                lambda,
            });
            if cfg.restart_after_blowup {
                let radius = (4.0 * lambda.unwrap_or(0.0)).max(4.0 * d.local_spacing(worst.1));
                let before = cur.report.energy;
                u = harmonic_extension(&u, location, radius)?;
                cur = analyze(&u, cfg.stress_q)?;
                tr.restarts.push(RestartRecord { t: u.t, center: location, radius, energy_before: before, energy_after: cur.report.energy });
                e_ref = cur.report.variational_energy;
                diss_since_ref = 0.0;
                continue;
            }
            break;
        }
        dt = dt.min(cfg.t_max - u.t).max(f64::MIN_POSITIVE);
        let next = step_with_dt(&u, dt, cfg.integrator)?;
        let new = analyze(&next, cfg.stress_q)?;
        tr.steps += 1;
        tr.min_dt = tr.min_dt.min(dt);
        tr.max_dt = tr.max_dt.max(dt);
        let step_diss = 0.5 * dt * (cur.report.tension_l2_sq + new.report.tension_l2_sq);
        diss_since_ref += step_diss;
        diss_total += step_diss;
        let de = new.report.variational_energy - cur.report.variational_energy;
        let db = new.report.e_antiholo - cur.report.e_antiholo;
        tr.max_energy_increase_rate = tr.max_energy_increase_rate.max(de / (dt * dt));
        tr.max_dbar_increase_rate = tr.max_dbar_increase_rate.max(db / (dt * dt));
        let violation = (new.report.variational_energy + diss_since_ref - e_ref).abs() / scale;
        tr.max_identity_violation = tr.max_identity_violation.max(violation);
        if tr.singular_events.is_empty() {
            tr.kappa_drift = tr.kappa_drift.max((new.report.kappa - kappa0).abs() / kappa0.abs().max(1.0));
        }
        if cfg.abort_on_identity_violation && violation > 10.0 * cfg.energy_tolerance {
            return Err(Error::EnergyIdentity { t: next.t, violation: violation * scale, tolerance: cfg.energy_tolerance * scale });
        }
        u = next;
        cur = new;
        let done = u.t >= cfg.t_max;
        if u.t >= next_report || done {
            tr.reports.push(cur.report);
            tr.dissipation.push(diss_total);
            while next_report <= u.t && cfg.report_cadence > 0.0 {
                next_report += cfg.report_cadence;
            }
        }
        if (cfg.snapshot_cadence > 0.0 && u.t >= next_snapshot) || done {
            tr.snapshots.push(u.clone());
            while next_snapshot <= u.t && cfg.snapshot_cadence > 0.0 {
                next_snapshot += cfg.snapshot_cadence;
            }
        }
    }
    if tr.snapshots.last().map(|s| s.t) != Some(u.t) {
        tr.snapshots.push(u.clone());
    }
    if tr.reports.last().map(|r| r.t) != Some(u.t) {
        tr.reports.push(cur.report);
        tr.dissipation.push(diss_total);
    }
    Ok(tr)
}

/// Replaces values in `B_radius(center)` by the discrete harmonic extension of
/// the surrounding values, then projects back to the sphere.
pub fn harmonic_extension(u: &MapState, center: [f64; 2], radius: f64) -> Result<MapState> {
    if !matches!(*u.target, TargetMetric::RoundSphere) {
        return Err(Error::Unsupported("restart by harmonic extension needs the round target".into()));
    }
    let d = &*u.domain;
    let unknown: Vec<usize> = (0..d.len())
        .filter(|&i| {
            let x = d.displacement(center, d.position(i));
            !d.is_fixed(i) && x[0].hypot(x[1]) <= radius
        })
        .collect();
    let mut v = u.values.clone();
    let (wx, wy) = (1.0 / (d.hx * d.hx), 1.0 / (d.hy * d.hy));
    for _ in 0..20_000 {
        let mut change: f64 = 0.0;
        for &i in &unknown {
            let mut acc = [0.0; 3];
            for (di, dj, w) in [(1, 0, wx), (-1, 0, wx), (0, 1, wy), (0, -1, wy)] {
                let n = d.neighbor(i, di, dj).expect("free nodes have four neighbours");
                for c in 0..3 {
                    acc[c] += w * v[n][c];
                }
            }
            let new = acc.map(|a| a / (2.0 * (wx + wy)));
            for c in 0..3 {
                change = change.max((new[c] - v[i][c]).abs());
            }
            v[i] = new;
        }
        if change < 1e-12 {
            break;
        }
    }
    for &i in &unknown {
        let n = (v[i][0] * v[i][0] + v[i][1] * v[i][1] + v[i][2] * v[i][2]).sqrt();
        if n < 1e-8 {
            return Err(Error::Precondition("harmonic extension passes through the origin of R³".into()));
        }
        v[i] = normalized(v[i]);
    }
    Ok(MapState { values: v, ..u.clone() })
}
