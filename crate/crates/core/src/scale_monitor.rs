//! Energy scales, local energy growth, ε-regularity checks and blowup-rate fits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldBundle;
use crate::geometry::Region;
use crate::numerics::fit_line;
use crate::state::MapState;

/// Ratio between consecutive radii of the scale search.
pub const RADIUS_RATIO: f64 = 1.090_507_732_665_257_7; // 2^{1/8}

/// Local energies of one time slice.
pub trait EnergyProbe {
    fn time(&self) -> f64;
    fn ball_energy(&self, center: [f64; 2], radius: f64) -> Result<f64>;
    fn annulus_energy(&self, center: [f64; 2], inner: f64, outer: f64) -> Result<f64>;
    /// `sup |du|` over `B_radius(center)`.
    fn sup_gradient(&self, center: [f64; 2], radius: f64) -> Result<f64>;
    /// Smallest radius the scale search may test.
    fn scale_floor(&self) -> f64;
    /// Largest admissible outer radius.
    fn max_radius(&self) -> f64;
}

/// A map state together with its differential fields.
#[derive(Clone, Debug)]
pub struct AnalyzedState {
    pub state: MapState,
    pub fields: FieldBundle,
}

impl AnalyzedState {
    pub fn new(state: MapState) -> Result<Self> {
        let fields = FieldBundle::compute(&state)?;
        Ok(Self { state, fields })
    }
}

impl EnergyProbe for AnalyzedState {
    fn time(&self) -> f64 {
        self.state.t
    }

    fn ball_energy(&self, center: [f64; 2], radius: f64) -> Result<f64> {
        self.state.domain.integrate_region(&Region::Ball { center, radius }, &self.fields.energy_density)
    }

    fn annulus_energy(&self, center: [f64; 2], inner: f64, outer: f64) -> Result<f64> {
        self.state.domain.integrate_region(&Region::Annulus { center, inner, outer }, &self.fields.energy_density)
    }

    fn sup_gradient(&self, center: [f64; 2], radius: f64) -> Result<f64> {
        let d = &*self.state.domain;
        let mut m: f64 = 0.0;
        let mut any = false;
        for i in 0..d.len() {
            if !d.inside(i) {
                continue;
            }
            let x = d.displacement(center, d.position(i));
            if x[0].hypot(x[1]) <= radius {
                any = true;
                m = m.max((2.0 * self.fields.energy_density[i]).sqrt());
            }
        }
        if any {
            Ok(m)
        } else {
            Err(Error::EmptyRegion(format!("no node within {radius} of {center:?}")))
        }
    }

    fn scale_floor(&self) -> f64 {
        2.0 * self.state.domain.mesh_spacing()
    }

    fn max_radius(&self) -> f64 {
        0.5 * self.state.domain.diameter()
    }
}

/// Radii `ρ·2^{−j/8}`, `j ≥ 1`, down to `floor`.
pub fn radius_grid(rho: f64, floor: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut j = 1;
    loop {
        let r = rho * 2f64.powf(-(j as f64) / 8.0);
        if r < floor {
            break;
        }
        out.push(r);
        j += 1;
    }
    out
}

/// Outer energy scale: the largest grid radius `r < ρ` with
/// `E(U^r_{r/2}(p)) ≥ ε`, or 0 if every annulus down to the floor holds less.
pub fn energy_scale<P: EnergyProbe + ?Sized>(u: &P, epsilon: f64, rho: f64, p: [f64; 2]) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidParameter(format!("ε = {epsilon} must be positive")));
    }
    if !(rho > 0.0) || rho > u.max_radius() {
        return Err(Error::InvalidParameter(format!("ρ = {rho} outside (0, {}]", u.max_radius())));
    }
    for r in radius_grid(rho, u.scale_floor()) {
        if u.annulus_energy(p, 0.5 * r, r)? >= epsilon {
            return Ok(r);
        }
    }
    Ok(0.0)
}

/// `λ(t)` and companion traces for fixed `(ε, ρ, p)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ScaleTrace {
    pub epsilon: f64,
    pub rho: f64,
    pub center: [f64; 2],
    pub mesh_floor: f64,
    pub times: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub stress_lq: Vec<f64>,
    pub sup_dbar: Vec<f64>,
}

impl ScaleTrace {
    pub fn new(epsilon: f64, rho: f64, center: [f64; 2], mesh_floor: f64) -> Self {
        Self { epsilon, rho, center, mesh_floor, ..Default::default() }
    }

    /// Appends a sample; times must increase strictly.
    pub fn push(&mut self, t: f64, lambda: f64, stress_lq: f64, sup_dbar: f64) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if !(t > last) {
                return Err(Error::InvalidParameter(format!("trace time {t} does not exceed {last}")));
            }
        }
        if !(0.0..=self.rho).contains(&lambda) {
            return Err(Error::InvalidParameter(format!("λ = {lambda} outside [0, ρ]")));
        }
        self.times.push(t);
        self.lambdas.push(lambda);
        self.stress_lq.push(stress_lq);
        self.sup_dbar.push(sup_dbar);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = crate::io::csv_writer(path, "t: time; lambda: outer energy scale; stress_lq: L^q norm of the stress; sup_dbar: sup of the antiholomorphic differential")?;
        w.write_record(["t", "lambda", "stress_lq", "sup_dbar"])?;
        for i in 0..self.len() {
            w.serialize((self.times[i], self.lambdas[i], self.stress_lq[i], self.sup_dbar[i]))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Window of the rate fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitWindow {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitStatus {
    Fitted,
    Inconclusive { reason: String },
}

/// Log-log power law and the two one-parameter laws, fitted against `s = T − t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub status: FitStatus,
    pub blowup_time: f64,
    pub points: usize,
    #[serde(deserialize_with = "crate::numerics::f64_or_nan")]
    pub t_start: f64,
    #[serde(deserialize_with = "crate::numerics::f64_or_nan")]
    pub t_end: f64,
    pub window: FitWindow,
    /// Slope of `log λ` against `log s`.
    pub exponent: Option<f64>,
    pub power_intercept: Option<f64>,
    pub power_rms: Option<f64>,
    /// `λ = κ s / |log s|²`.
    pub cdy_kappa: Option<f64>,
    pub cdy_rms: Option<f64>,
    /// `λ = c s^{1/2}`.
    pub half_rms: Option<f64>,
    /// `λ = c s`.
    pub linear_rms: Option<f64>,
}

fn one_parameter_rms(ys: &[f64], base: &[f64]) -> (f64, f64) {
    let n = ys.len() as f64;
    let c = ys.iter().zip(base).map(|(y, b)| y - b).sum::<f64>() / n;
    let rms = (ys.iter().zip(base).map(|(y, b)| (y - b - c).powi(2)).sum::<f64>() / n).sqrt();
    (c, rms)
}

/// Fits the trace against `T − t` over resolved points; fewer than 20 yields an inconclusive fit.
pub fn fit_blowup_rate(trace: &ScaleTrace, blowup_time: f64, window: FitWindow) -> RateFit {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ts = Vec::new();
    for (&t, &l) in trace.times.iter().zip(&trace.lambdas) {
        let s = blowup_time - t;
        if s > 0.0 && s < 1.0 && l > 0.0 && l >= window.lambda_min && l <= window.lambda_max && s.ln().abs() > 1e-3 {
            xs.push(s.ln());
            ys.push(l.ln());
            ts.push(t);
        }
    }
    let mut fit = RateFit {
        status: FitStatus::Fitted,
        blowup_time,
        points: xs.len(),
        t_start: ts.first().copied().unwrap_or(f64::NAN),
        t_end: ts.last().copied().unwrap_or(f64::NAN),
        window,
        exponent: None,
        power_intercept: None,
        power_rms: None,
        cdy_kappa: None,
        cdy_rms: None,
        half_rms: None,
        linear_rms: None,
    };
    if xs.len() < 20 {
        fit.status = FitStatus::Inconclusive { reason: format!("{} resolved points, need 20", xs.len()) };
        return fit;
    }
    match fit_line(&xs, &ys) {
        Ok(line) => {
            fit.exponent = Some(line.slope);
            fit.power_intercept = Some(line.intercept);
            fit.power_rms = Some(line.rms);
        }
        Err(e) => {
            fit.status = FitStatus::Inconclusive { reason: e.to_string() };
            return fit;
        }
    }
    let cdy_base: Vec<f64> = xs.iter().map(|&x| x - 2.0 * x.abs().ln()).collect();
    let (c, rms) = one_parameter_rms(&ys, &cdy_base);
    fit.cdy_kappa = Some(c.exp());
    fit.cdy_rms = Some(rms);
    let half: Vec<f64> = xs.iter().map(|x| 0.5 * x).collect();
    fit.half_rms = Some(one_parameter_rms(&ys, &half).1);
    fit.linear_rms = Some(one_parameter_rms(&ys, &xs).1);
    fit
}

/// Extrapolated blowup time from detections on a fine and a coarse grid.
pub fn richardson_blowup_time(t_fine: f64, t_coarse: f64, refinement: f64, order: f64) -> f64 {
    t_fine + (t_fine - t_coarse) / (refinement.powf(order) - 1.0)
}

/// Exponents fitted at `T − δ` and `T + δ`.
pub fn rate_sensitivity(trace: &ScaleTrace, blowup_time: f64, delta: f64, window: FitWindow) -> [Option<f64>; 2] {
    [fit_blowup_rate(trace, blowup_time - delta, window).exponent, fit_blowup_rate(trace, blowup_time + delta, window).exponent]
}

/// Smallest `C` with `E(t₂, B_{R/2}) ≤ E(t₁, B_R) + C σ (t₂ − t₁)/R^{2/q}` over all sampled pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub constant: f64,
    pub pairs: usize,
    pub sigma: f64,
    /// `sup ‖S‖_{L^q} ≤ σ` over the window.
    pub stress_hypothesis: bool,
}

pub fn check_local_energy_growth<P: EnergyProbe>(
    probes: &[P],
    stress_lq: &[f64],
    radius: f64,
    p: [f64; 2],
    q: f64,
    sigma: f64,
) -> Result<GrowthCheck> {
    let big: Vec<f64> = probes.iter().map(|u| u.ball_energy(p, radius)).collect::<Result<_>>()?;
    let small: Vec<f64> = probes.iter().map(|u| u.ball_energy(p, 0.5 * radius)).collect::<Result<_>>()?;
    let mut c: f64 = 0.0;
    let mut pairs = 0;
    for a in 0..probes.len() {
        for b in a + 1..probes.len() {
            let dt = probes[b].time() - probes[a].time();
            if dt <= 0.0 {
                continue;
            }
            pairs += 1;
            let excess = small[b] - big[a];
            if excess > 0.0 {
                c = c.max(excess * radius.powf(2.0 / q) / (sigma * dt));
            }
        }
    }
    Ok(GrowthCheck {
        constant: c,
        pairs,
        sigma,
        stress_hypothesis: stress_lq.iter().all(|&s| s <= sigma * (1.0 + 1e-12)),
    })
}

/// One ε-regularity sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityCheck {
    pub center: [f64; 2],
    pub radius: f64,
    pub start_time: f64,
    /// `E(u(τ), B_R) + sup_t E(u(t), U^R_{R/2})`.
    pub epsilon_used: f64,
    /// `sup R |du|` over `B_{R/2} × [τ + R²/2, T)`.
    pub observed: f64,
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegularityReport {
    pub checks: Vec<RegularityCheck>,
    /// Single constant bounding every check.
    pub max_constant: f64,
    pub bounded: bool,
}

/// Records `R sup|du| / √ε` wherever the small-energy hypothesis holds with `ε ≤ epsilon`.
pub fn check_epsilon_regularity<P: EnergyProbe>(probes: &[P], balls: &[([f64; 2], f64)], epsilon: f64) -> Result<RegularityReport> {
    let mut checks = Vec::new();
    for &(center, radius) in balls {
        let annulus: Vec<f64> = probes.iter().map(|u| u.annulus_energy(center, 0.5 * radius, radius)).collect::<Result<_>>()?;
        for a in 0..probes.len() {
            let tau = probes[a].time();
            let hyp = probes[a].ball_energy(center, radius)? + annulus[a..].iter().cloned().fold(0.0, f64::max);
            if hyp > epsilon {
                continue;
            }
            let mut observed: f64 = 0.0;
            let mut any = false;
            for u in &probes[a..] {
                if u.time() >= tau + 0.5 * radius * radius {
                    any = true;
                    observed = observed.max(radius * u.sup_gradient(center, 0.5 * radius)?);
                }
            }
            if !any {
                continue;
            }
            let constant = if observed == 0.0 { 0.0 } else { observed / hyp.max(f64::MIN_POSITIVE).sqrt() };
            checks.push(RegularityCheck { center, radius, start_time: tau, epsilon_used: hyp, observed, constant });
        }
    }
    let max_constant = checks.iter().map(|c| c.constant).fold(0.0, f64::max);
    Ok(RegularityReport { bounded: max_constant.is_finite(), checks, max_constant })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DbarStatus {
    Passed,
    Failed,
    Skipped { reason: String },
}

/// Uniform bound on `|∂̄u|` after time `τ` for almost holomorphic data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DbarCheck {
    pub status: DbarStatus,
    /// `sup_{t ≥ τ} sup |∂̄u| / (δ (τ^{-1/2} + 1))`.
    pub constant: f64,
    pub sup_dbar: f64,
    pub sup_stress_l2: f64,
    /// `2√2 sup|∂̄u| E(0)^{1/2}`, the bound on `‖S‖_{L²}` implied by `|S| ≤ 2√2 (e_∂ e_∂̄)^{1/2}`.
    pub stress_l2_bound: f64,
}

/// Samples: `(t, sup|∂̄u|, ‖S‖_{L²})`.
pub fn check_dbar_sup_bound(
    samples: &[(f64, f64, f64)],
    e_dbar0: f64,
    energy0: f64,
    delta: f64,
    tau: f64,
    epsilon0: f64,
    max_constant: f64,
) -> DbarCheck {
    let skipped = |reason: String| DbarCheck {
        status: DbarStatus::Skipped { reason },
        constant: f64::NAN,
        sup_dbar: f64::NAN,
        sup_stress_l2: f64::NAN,
        stress_l2_bound: f64::NAN,
    };
    if e_dbar0 > delta * delta {
        return skipped(format!("E_dbar(u0) = {e_dbar0} exceeds δ² = {}", delta * delta));
    }
    if delta * delta >= epsilon0 {
        return skipped(format!("δ² = {} is not below ε0 = {epsilon0}", delta * delta));
    }
    if !(tau > 0.0) {
        return skipped(format!("τ = {tau} must be positive"));
    }
    let late: Vec<&(f64, f64, f64)> = samples.iter().filter(|s| s.0 >= tau).collect();
    if late.is_empty() {
        return skipped("no samples after τ".into());
    }
    let sup_dbar = late.iter().map(|s| s.1).fold(0.0, f64::max);
    let sup_stress = samples.iter().map(|s| s.2).fold(0.0, f64::max);
    let scale = delta * (1.0 / tau.sqrt() + 1.0);
    let constant = if sup_dbar == 0.0 { 0.0 } else { sup_dbar / scale };
    let all_dbar = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let stress_l2_bound = 2.0 * 2f64.sqrt() * all_dbar * energy0.sqrt();
    let ok = constant.is_finite() && constant <= max_constant && sup_stress <= stress_l2_bound * (1.0 + 1e-8) + 1e-14;
    DbarCheck {
        status: if ok { DbarStatus::Passed } else { DbarStatus::Failed },
        constant,
        sup_dbar,
        sup_stress_l2: sup_stress,
        stress_l2_bound,
    }
}
