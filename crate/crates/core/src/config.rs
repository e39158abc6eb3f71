//! Experiment configuration, orchestration and run manifests.
//!
//! A run directory holds `config.json`, the raw traces (`energy_trace.csv`,
//! `scale_trace.csv`, `neck_decay.csv`), the reports (`rate_fit.json`,
//! `neck_report.json`, `supersolution_report.json`, `bubble_tree.json`),
//! snapshot directories, the `plot_*.csv` files and `manifest.json`. Every
//! file except the manifest is a deterministic function of the config.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bubble_tree::{build_bubble_tree, lift_radial, Bubble, BubbleTree, TreeConfig};
use crate::error::{Error, Result};
use crate::fields::energy_report;
use crate::flow::corotational::{run_corotational, CorotationalConfig, CorotationalState, RadialProfile};
use crate::flow::{run_flow, FlowConfig};
use crate::geometry::{DomainSpec, SurfaceDomain, TargetMetric, TargetSpec};
use crate::io::{self, SnapshotSet};
use crate::neck_decay::{
    check_neck_decay, comparison_check, neck_frame, solve_model, verify_supersolution, ComparisonReport, NeckDecayReport,
    NeckParams, OmegaGrid, SupersolutionParams, SupersolutionReport,
};
use crate::scale_monitor::{energy_scale, fit_blowup_rate, AnalyzedState, EnergyProbe, FitWindow, RateFit, ScaleTrace};
use crate::state::MapState;

fn one() -> f64 {
    1.0
}
fn one_i() -> i32 {
    1
}
fn two() -> f64 {
    2.0
}
fn three() -> usize {
    3
}
fn origin() -> Vec<[f64; 2]> {
    vec![[0.0, 0.0]]
}
fn d_inner() -> f64 {
    0.01
}
fn d_cells() -> usize {
    512
}
fn d_tol() -> f64 {
    1e-6
}
fn d_true() -> bool {
    true
}
fn d_comparison_cells() -> usize {
    256
}
fn d_inner_factor() -> f64 {
    20.0
}
fn d_samples() -> usize {
    24
}
fn d_frames() -> usize {
    4
}
fn d_lift_r() -> usize {
    512
}
fn d_lift_theta() -> usize {
    32
}
fn d_lift_min() -> f64 {
    1e-6
}
fn d_resolved() -> f64 {
    8.0
}

/// Initial map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    /// `w(z) = (z/scale)^degree` in the stereographic chart.
    Holomorphic {
        degree: i32,
        #[serde(default = "one")]
        scale: f64,
    },
    /// Corotational profile `h(r)` with `h(0) = 0`, sampled on `cells` radial cells of `[0, 1]`.
    Corotational {
        #[serde(default = "one_i")]
        k: i32,
        cells: usize,
        profile: RadialProfile,
    },
    PerturbedHolomorphic {
        degree: i32,
        #[serde(default = "one")]
        scale: f64,
        amplitude: f64,
        seed: u64,
    },
    RandomSmooth {
        seed: u64,
        #[serde(default = "three")]
        modes: usize,
        amplitude: f64,
    },
}

impl InitialData {
    pub fn validate(&self) -> Vec<String> {
        let mut e = Vec::new();
        match self {
            InitialData::Holomorphic { degree, scale } | InitialData::PerturbedHolomorphic { degree, scale, .. } => {
                if *degree == 0 {
                    e.push("initial.degree must be nonzero".into());
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    e.push(format!("initial.scale = {scale} must be positive"));
                }
            }
            InitialData::Corotational { k, cells, profile } => {
                if *k < 1 {
                    e.push(format!("initial.k = {k} must be at least 1"));
                }
                if *cells < 16 {
                    e.push(format!("initial.cells = {cells} must be at least 16"));
                }
                e.extend(profile.validate().into_iter().map(|m| format!("initial.profile: {m}")));
            }
            InitialData::RandomSmooth { modes, .. } if *modes == 0 => e.push("initial.modes must be at least 1".into()),
            _ => {}
        }
        if let InitialData::PerturbedHolomorphic { amplitude, .. } | InitialData::RandomSmooth { amplitude, .. } = self {
            if !amplitude.is_finite() {
                e.push("initial.amplitude must be finite".into());
            }
        }
        e
    }

    /// The initial state on a planar domain, with values in `target`.
    pub fn planar(&self, domain: &SurfaceDomain, target: &TargetMetric) -> Result<MapState> {
        let round = match self {
            InitialData::Holomorphic { degree, scale } => MapState::holomorphic(domain, *degree, *scale),
            InitialData::Corotational { k, profile, .. } => MapState::corotational(domain, *k, |r| profile.eval(r)),
            InitialData::PerturbedHolomorphic { degree, scale, amplitude, seed } => {
                MapState::perturbed_holomorphic(domain, *degree, *scale, *amplitude, *seed)
            }
            InitialData::RandomSmooth { seed, modes, amplitude } => MapState::random_smooth(domain, *seed, *modes, *amplitude),
        };
        match target {
            TargetMetric::RoundSphere => Ok(round),
            TargetMetric::Warped(_) => round.to_warped(target),
        }
    }
}

/// Energy-scale monitor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// `None` uses `0.1·ε₀`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub rho: f64,
    #[serde(default = "origin")]
    pub centers: Vec<[f64; 2]>,
    #[serde(default = "two")]
    pub q: f64,
    /// `None` uses `λ ∈ [4·floor, ρ/5]`, with `floor` the scale-search floor.
    #[serde(default)]
    pub fit_window: Option<FitWindow>,
    /// Overrides the detected singular time in the rate fit.
    #[serde(default)]
    pub blowup_time: Option<f64>,
}

/// Supersolution sweep and comparison oracle; runs without any flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupersolutionConfig {
    /// `(γ, ν, μ)` triples.
    pub triples: Vec<[f64; 3]>,
    #[serde(default = "d_inner")]
    pub inner: f64,
    #[serde(default = "d_cells")]
    pub n_r: usize,
    #[serde(default = "d_cells")]
    pub n_t: usize,
    #[serde(default = "d_tol")]
    pub tolerance: f64,
    /// Also solve the forced model problem and run the comparison check.
    #[serde(default = "d_true")]
    pub comparison: bool,
    #[serde(default = "d_comparison_cells")]
    pub comparison_cells: usize,
}

/// Neck decay check at the monitored centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeckConfig {
    pub gamma: f64,
    pub nu: f64,
    #[serde(default = "two")]
    pub q: f64,
    /// `None` uses the monitor's `ρ`.
    #[serde(default)]
    pub rho: Option<f64>,
    /// `None` uses the monitor's `ε`.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Inner radius `R = inner_factor·λ(t)`.
    #[serde(default = "d_inner_factor")]
    pub inner_factor: f64,
    #[serde(default = "d_samples")]
    pub samples: usize,
    /// Number of late resolved snapshots used as frames.
    #[serde(default = "d_frames")]
    pub frames: usize,
}

/// Log-polar grid that radial snapshots are lifted onto for planar analyses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    #[serde(default = "d_lift_r")]
    pub n_r: usize,
    #[serde(default = "d_lift_theta")]
    pub n_theta: usize,
    #[serde(default = "d_lift_min")]
    pub r_min: f64,
    /// Late analysis snapshots need `λ ≥ resolved_cells · floor`.
    #[serde(default = "d_resolved")]
    pub resolved_cells: f64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

/// Assertions deciding the exit status; each is enabled by setting it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssertionConfig {
    /// `max |E(t) + ∫∫|τ|² − E(0)| / E(0)` along a planar flow.
    #[serde(default)]
    pub energy_identity: Option<f64>,
    /// `max |κ(t) − κ(0)| / |κ(0)|` before any singular time.
    #[serde(default)]
    pub kappa_drift: Option<f64>,
    /// Largest `(E_∂̄(t+dt) − E_∂̄(t))/dt²` along a planar flow.
    #[serde(default)]
    pub dbar_increase_rate: Option<f64>,
    /// Whether a singular time must (true) or must not (false) occur.
    #[serde(default)]
    pub blowup: Option<bool>,
    #[serde(default)]
    pub rate_exponent_min: Option<f64>,
    /// The `(T−t)/|log(T−t)|²` law fits better than `(T−t)^{1/2}`.
    #[serde(default)]
    pub log_corrected_law: Option<bool>,
    /// Upper bound for the fitted neck constant.
    #[serde(default)]
    pub neck_constant_max: Option<f64>,
    #[serde(default)]
    pub bubble_count: Option<usize>,
    /// Relative distance of every bubble energy to the nearest positive multiple of `ε₀`.
    #[serde(default)]
    pub bubble_quantization: Option<f64>,
    /// Energy-identity residual as a fraction of `ε₀`.
    #[serde(default)]
    pub tree_identity: Option<f64>,
    #[serde(default)]
    pub holomorphic_bubbles: Option<bool>,
}

/// Analyses over a snapshot sequence; shared by runs and `analyze`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Target description; needed for warped snapshots without one in the index.
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub epsilon0: Option<f64>,
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub monitor: Option<MonitorConfig>,
    #[serde(default)]
    pub neck: Option<NeckConfig>,
    #[serde(default)]
    pub bubble_tree: Option<TreeConfig>,
    #[serde(default)]
    pub lift: Option<LiftConfig>,
    #[serde(default)]
    pub assertions: AssertionConfig,
}

/// A complete experiment.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub domain: Option<DomainSpec>,
    #[serde(default)]
    pub target: Option<TargetSpec>,
    #[serde(default)]
    pub initial: Option<InitialData>,
    /// Planar flow on `domain`.
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    /// Corotational flow of `initial.kind = corotational` data.
    #[serde(default)]
    pub radial_flow: Option<CorotationalConfig>,
    /// `ε₀`; `None` uses `4π / sup K_N`.
    #[serde(default)]
    pub epsilon0: Option<f64>,
    /// `R₀`; `None` uses a quarter of the domain diameter.
    #[serde(default)]
    pub r0: Option<f64>,
    #[serde(default)]
    pub monitor: Option<MonitorConfig>,
    #[serde(default)]
    pub supersolution: Option<SupersolutionConfig>,
    #[serde(default)]
    pub neck: Option<NeckConfig>,
    #[serde(default)]
    pub bubble_tree: Option<TreeConfig>,
    #[serde(default)]
    pub lift: Option<LiftConfig>,
    #[serde(default)]
    pub assertions: AssertionConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Directory that relative paths in the config resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Thresholds shared by every check.
#[derive(Clone, Copy, Debug)]
struct Scales {
    epsilon0: f64,
    r0: f64,
}

fn check_epsilon(errs: &mut Vec<String>, what: &str, eps: Option<f64>, eps0: f64) {
    if let Some(e) = eps {
        if !(e > 0.0) {
            errs.push(format!("{what} = {e} must be positive"));
        } else if e >= eps0 {
            errs.push(format!("{what} = {e} violates ε < ε₀ = {eps0}"));
        }
    }
}

fn check_rho(errs: &mut Vec<String>, what: &str, rho: Option<f64>, r0: f64) {
    if let Some(r) = rho {
        if !(r > 0.0) {
            errs.push(format!("{what} = {r} must be positive"));
        } else if r > r0 {
            errs.push(format!("{what} = {r} violates ρ ≤ R₀ = {r0}"));
        }
    }
}

impl AnalysisConfig {
    fn validate_into(&self, errs: &mut Vec<String>, s: Scales, radial: bool) {
        if let Some(m) = &self.monitor {
            check_epsilon(errs, "monitor.epsilon", m.epsilon, s.epsilon0);
            check_rho(errs, "monitor.rho", Some(m.rho), s.r0);
            if m.centers.is_empty() {
                errs.push("monitor.centers must not be empty".into());
            }
            if radial && m.centers.iter().any(|c| c[0].hypot(c[1]) > 0.0) {
                errs.push("monitor.centers: corotational runs are centred at the origin".into());
            }
            if !(m.q > 1.0) {
                errs.push(format!("monitor.q = {} must exceed 1", m.q));
            }
            if let Some(w) = m.fit_window {
                if !(w.lambda_min > 0.0 && w.lambda_max > w.lambda_min) {
                    errs.push("monitor.fit_window needs 0 < lambda_min < lambda_max".into());
                }
            }
        }
        if let Some(n) = &self.neck {
            if self.monitor.is_none() {
                errs.push("neck requires a monitor section for the scale λ(t)".into());
            }
            check_epsilon(errs, "neck.epsilon", n.epsilon, s.epsilon0);
            check_rho(errs, "neck.rho", n.rho, s.r0);
            let p = NeckParams {
                rho: n.rho.or(self.monitor.as_ref().map(|m| m.rho)).unwrap_or(1.0),
                epsilon: n.epsilon.unwrap_or(1.0),
                sigma: 0.0,
                q: n.q,
                nu: n.nu,
                gamma: n.gamma,
                delta: 0.0,
            };
            if let Err(Error::Config(m)) = p.validate() {
                errs.extend(m.into_iter().map(|x| format!("neck: {x}")));
            }
            if !(n.inner_factor > 1.0) {
                errs.push(format!("neck.inner_factor = {} must exceed 1", n.inner_factor));
            }
            if n.samples < 2 || n.frames == 0 {
                errs.push("neck needs at least 2 samples and 1 frame".into());
            }
        }
        if let Some(t) = &self.bubble_tree {
            errs.extend(t.validate());
            check_epsilon(errs, "bubble_tree.epsilon", t.epsilon, s.epsilon0);
            check_rho(errs, "bubble_tree.rho", Some(t.rho), s.r0);
        }
        if let Some(l) = &self.lift {
            if l.n_r < 8 || l.n_theta < 8 || !(l.r_min > 0.0 && l.r_min < 1.0) || !(l.resolved_cells >= 1.0) {
                errs.push("lift needs n_r, n_theta ≥ 8, 0 < r_min < 1 and resolved_cells ≥ 1".into());
            }
        }
        if !(s.epsilon0 > 0.0) {
            errs.push(format!("epsilon0 = {} must be positive", s.epsilon0));
        }
    }

    fn is_empty(&self) -> bool {
        self.monitor.is_none() && self.neck.is_none() && self.bubble_tree.is_none()
    }
}

impl ExperimentConfig {
    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            target: self.target.clone(),
            epsilon0: self.epsilon0,
            r0: self.r0,
            monitor: self.monitor.clone(),
            neck: self.neck.clone(),
            bubble_tree: self.bubble_tree.clone(),
            lift: self.lift.clone(),
            assertions: self.assertions.clone(),
        }
    }

    fn radial(&self) -> bool {
        self.radial_flow.is_some()
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let target = match &self.target {
            None => {
                errs.push("target: missing (required)".into());
                None
            }
            Some(t) => match t.build(self.base_dir.as_deref()) {
                Ok(m) => Some(m),
                Err(e) => {
                    errs.push(format!("target: {e}"));
                    None
                }
            },
        };
        if let Some(d) = &self.domain {
            errs.extend(d.validate().into_iter().map(|m| format!("domain: {m}")));
        }
        match (&self.initial, &self.flow, &self.radial_flow) {
            (None, None, None) => {}
            (None, _, _) => errs.push("a flow section needs initial data".into()),
            (Some(_), None, None) => errs.push("initial data need a flow or radial_flow section".into()),
            (Some(_), Some(_), Some(_)) => errs.push("flow and radial_flow are mutually exclusive".into()),
            (Some(init), flow, radial) => {
                errs.extend(init.validate());
                if let Some(f) = flow {
                    errs.extend(f.validate().into_iter().map(|m| format!("flow: {m}")));
                    if self.domain.is_none() {
                        errs.push("flow needs a domain".into());
                    }
                }
                if let Some(r) = radial {
                    errs.extend(r.validate().into_iter().map(|m| format!("radial_flow: {m}")));
                    if !matches!(init, InitialData::Corotational { .. }) {
                        errs.push("radial_flow needs corotational initial data".into());
                    }
                    if !matches!(self.target, None | Some(TargetSpec::RoundSphere)) {
                        errs.push("radial_flow supports the round target only".into());
                    }
                }
            }
        }
        if let Some(s) = &self.supersolution {
            if s.triples.is_empty() {
                errs.push("supersolution.triples must not be empty".into());
            }
            for (i, &[g, n, m]) in s.triples.iter().enumerate() {
                let p = SupersolutionParams { gamma: g, nu: n, mu: m, inner: s.inner };
                if let Err(Error::Config(msgs)) = p.validate() {
                    errs.extend(msgs.into_iter().map(|x| format!("supersolution.triples[{i}] (γ={g}, ν={n}, μ={m}): {x}")));
                }
            }
            if s.n_r < 8 || s.n_t < 8 || s.comparison_cells < 8 {
                errs.push("supersolution grids need at least 8 cells per axis".into());
            }
            if !(s.tolerance >= 0.0) {
                errs.push("supersolution.tolerance must be nonnegative".into());
            }
        }
        let a = self.analysis();
        if !a.is_empty() && self.initial.is_none() {
            errs.push("monitor, neck and bubble_tree analyse a flow; add initial data and a flow section".into());
        }
        if self.initial.is_none() && self.supersolution.is_none() {
            errs.push("config enables neither a flow nor a supersolution check".into());
        }
        let epsilon0 = self.epsilon0.or(target.as_ref().map(TargetMetric::epsilon0)).unwrap_or(f64::NAN);
        let r0 = self.r0.unwrap_or_else(|| self.default_r0());
        if let Some(r) = self.r0 {
            if !(r > 0.0) {
                errs.push(format!("r0 = {r} must be positive"));
            }
        }
        if target.is_some() {
            a.validate_into(&mut errs, Scales { epsilon0, r0 }, self.radial());
        }
        errs
    }

    fn default_r0(&self) -> f64 {
        match (&self.domain, self.radial()) {
            (_, true) => 0.5,
            (Some(d), false) => d.build().map(|d| d.default_r0()).unwrap_or(f64::INFINITY),
            (None, false) => f64::INFINITY,
        }
    }

    fn scales(&self, target: &TargetMetric) -> Scales {
        Scales { epsilon0: self.epsilon0.unwrap_or_else(|| target.epsilon0()), r0: self.r0.unwrap_or_else(|| self.default_r0()) }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        io::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}

/// Parses and validates a JSON config; relative paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(vec![format!("{}: {e}", path.display())]))?;
    parse_config(&text, path.parent())
}

pub fn parse_config(text: &str, base_dir: Option<&Path>) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON config: {e}")]))?;
    cfg.base_dir = base_dir.map(Path::to_path_buf);
    let errs = cfg.validate();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

/// Run directory: an explicit `output_dir` (relative ones under `root`), else `root/<name>`.
pub fn resolve_output_dir(cfg: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    let root = root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    match &cfg.output_dir {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => root.join(p),
        None => root.join(cfg.name.as_deref().unwrap_or("run")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub name: String,
    #[serde(deserialize_with = "crate::numerics::f64_or_nan")]
    pub value: f64,
    #[serde(deserialize_with = "crate::numerics::f64_or_nan")]
    pub limit: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Record of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub wall_clock_seconds: f64,
    pub files: Vec<ManifestFile>,
    pub assertions: Vec<AssertionOutcome>,
    pub passed: bool,
    /// Weak continuation used after singular times, when any occurred.
    #[serde(default)]
    pub restart_policy: Option<String>,
    /// Analyses that could not be carried out, with the reason.
    #[serde(default)]
    pub notes: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

struct RunLog {
    dir: PathBuf,
    files: Vec<PathBuf>,
    assertions: Vec<AssertionOutcome>,
    notes: Vec<String>,
    restart_policy: Option<String>,
}

impl RunLog {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new(), assertions: Vec::new(), notes: Vec::new(), restart_policy: None }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = io::write_json(&self.path(name), value)?;
        self.files.push(p);
        Ok(())
    }

    fn check(&mut self, name: &str, value: f64, limit: f64, passed: bool) {
        self.assertions.push(AssertionOutcome { name: name.into(), value, limit, passed });
    }

    fn finish(mut self, hash: String, start: Instant) -> Result<RunManifest> {
        self.files.sort();
        self.files.dedup();
        let mut files = Vec::new();
        for p in &self.files {
            let rel = p.strip_prefix(&self.dir).unwrap_or(p);
            let path = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
            files.push(ManifestFile { path, sha256: io::sha256_file(p)?, bytes: std::fs::metadata(p)?.len() });
        }
        let passed = self.assertions.iter().all(|a| a.passed);
        let m = RunManifest {
            config_hash: hash,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            files,
            assertions: self.assertions,
            passed,
            restart_policy: self.restart_policy,
            notes: self.notes,
        };
        io::write_json(&self.dir.join(MANIFEST_FILE), &m)?;
        Ok(m)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComparisonRun {
    pub gamma: f64,
    pub nu: f64,
    pub mu: f64,
    pub amplitude: f64,
    pub report: ComparisonReport,
}

/// Contents of `supersolution_report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SupersolutionSummary {
    pub sweeps: Vec<SupersolutionReport>,
    pub comparisons: Vec<ComparisonRun>,
    pub min_slack: f64,
    pub passed: bool,
}

/// Sweeps every triple and, if enabled, compares a directly solved forced problem against `A·v`.
pub fn run_supersolution(cfg: &SupersolutionConfig) -> Result<SupersolutionSummary> {
    let sweeps = cfg
        .triples
        .par_iter()
        .map(|&[g, n, m]| verify_supersolution(&SupersolutionParams::new(g, n, m, cfg.inner)?, cfg.n_r, cfg.n_t, cfg.tolerance))
        .collect::<Result<Vec<_>>>()?;
    let a = 2.0;
    let comparisons = if cfg.comparison {
        cfg.triples
            .par_iter()
            .map(|&[g, n, m]| {
                let p = SupersolutionParams::new(g, n, m, cfg.inner)?;
                let grid = OmegaGrid::new(cfg.inner, cfg.comparison_cells, cfg.comparison_cells, 1.5)?;
                let sol = solve_model(&p, grid, |r, _| a * r.powf(m - 2.0), |_, _| a)?;
                Ok(ComparisonRun { gamma: g, nu: n, mu: m, amplitude: a, report: comparison_check(&sol, a, 1e-9)? })
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let min_slack = sweeps.iter().map(|s| s.min_slack).fold(f64::INFINITY, f64::min);
    let passed = sweeps.iter().all(|s| s.passed) && comparisons.iter().all(|c| c.report.passed);
    Ok(SupersolutionSummary { sweeps, comparisons, min_slack, passed })
}

/// Outcome of a run or analysis.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl RunOutcome {
    pub fn passed(&self) -> bool {
        self.manifest.passed
    }
}

/// Flow summary written to `flow_summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FlowSummary {
    pub kind: String,
    pub steps: u64,
    pub final_time: f64,
    pub singular_times: Vec<f64>,
    pub singular_locations: Vec<[f64; 2]>,
    pub restarts: Vec<crate::flow::RestartRecord>,
    pub restart_policy: String,
    pub max_identity_violation: Option<f64>,
    pub max_dbar_increase_rate: Option<f64>,
    pub kappa_drift: f64,
}

const ENERGY_DOC: &str = "t: time; energy: Dirichlet energy; variational_energy: energy dissipated exactly by the scheme; e_holo, e_antiholo: split energies; kappa: e_holo - e_antiholo; sup_du, sup_dbar: sup norms; stress: stress norm (L^q, q from the monitor, L^2 for radial runs)";

fn write_energy_trace(path: &Path, rows: &[[f64; 9]]) -> Result<()> {
    let mut w = io::csv_writer(path, ENERGY_DOC)?;
    w.write_record(["t", "energy", "variational_energy", "e_holo", "e_antiholo", "kappa", "sup_du", "sup_dbar", "stress"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the configured pipeline into `out`: supersolution, flow, monitors, neck and bubble tree.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    std::fs::create_dir_all(out)?;
    let mut log = RunLog::new(out);
    log.json("config.json", cfg)?;
    let target = cfg.target.as_ref().expect("validated").build(cfg.base_dir.as_deref())?;
    let scales = cfg.scales(&target);

    if let Some(s) = &cfg.supersolution {
        let summary = run_supersolution(s)?;
        log.json("supersolution_report.json", &summary)?;
        log.check("supersolution.min_slack", summary.min_slack, -s.tolerance, summary.sweeps.iter().all(|x| x.passed));
        if s.comparison {
            let worst = summary.comparisons.iter().map(|c| c.report.supersolution_ratio).fold(0.0, f64::max);
            log.check("supersolution.comparison_ratio", worst, 1.0, summary.comparisons.iter().all(|c| c.report.passed));
        }
    }

    let Some(init) = &cfg.initial else {
        let manifest = log.finish(cfg.hash(), start)?;
        return Ok(RunOutcome { dir: out.to_path_buf(), manifest });
    };
    let analysis = cfg.analysis();
    let a = &cfg.assertions;
    let (set, trace, blowup) = if let Some(rcfg) = &cfg.radial_flow {
        let InitialData::Corotational { k, cells, profile } = init else { unreachable!("validated") };
        let s0 = CorotationalState::from_profile(*cells, *k, profile)?;
        let mut rcfg = rcfg.clone();
        let eps = cfg.monitor.as_ref().map(|m| m.epsilon.unwrap_or(0.1 * scales.epsilon0));
        if rcfg.scale.is_none() {
            rcfg.scale = cfg.monitor.as_ref().map(|m| (eps.expect("monitor"), m.rho));
        }
        let tr = run_corotational(&s0, &rcfg)?;
        let rows: Vec<[f64; 9]> = tr
            .reports
            .iter()
            .map(|r| [r.t, r.energy, r.variational_energy, r.e_holo, r.e_antiholo, r.kappa, r.sup_du, r.sup_dbar, r.stress_l2])
            .collect();
        write_energy_trace(&log.path("energy_trace.csv"), &rows)?;
        log.files.push(log.path("energy_trace.csv"));
        let kappa0 = rows[0][5];
        let end = tr.blowup_time.unwrap_or(f64::INFINITY);
        let drift = rows.iter().filter(|r| r[0] < end).map(|r| (r[5] - kappa0).abs() / kappa0.abs().max(1.0)).fold(0.0, f64::max);
        let summary = FlowSummary {
            kind: "radial".into(),
            steps: tr.steps,
            final_time: tr.snapshots.last().map_or(0.0, |s| s.t),
            singular_times: tr.blowup_time.into_iter().collect(),
            singular_locations: tr.blowup_time.map(|_| [0.0, 0.0]).into_iter().collect(),
            restarts: tr.restarts.clone(),
            restart_policy: tr.restart_policy.clone(),
            max_identity_violation: None,
            max_dbar_increase_rate: None,
            kappa_drift: drift,
        };
        log.json("flow_summary.json", &summary)?;
        if let Some(lim) = a.kappa_drift {
            log.check("flow.kappa_drift", drift, lim, drift <= lim);
        }
        let files = io::write_radial_snapshots(&log.path("snapshots"), &tr.snapshots)?;
        log.files.extend(files);
        let trace = cfg.monitor.as_ref().map(|m| -> Result<ScaleTrace> {
            let mut st = ScaleTrace::new(eps.expect("monitor"), m.rho, [0.0, 0.0], s0.scale_floor());
            for (r, &l) in tr.reports.iter().zip(&tr.lambdas) {
                if st.times.last().map_or(true, |&t| r.t > t) {
                    st.push(r.t, l, r.stress_l2, r.sup_dbar)?;
                }
            }
            Ok(st)
        });
        if !tr.restarts.is_empty() {
            log.restart_policy = Some(tr.restart_policy.clone());
        }
        (SnapshotSet::Radial(tr.snapshots), trace.transpose()?, tr.blowup_time)
    } else {
        let fcfg = cfg.flow.as_ref().expect("validated");
        let domain = cfg.domain.as_ref().expect("validated").build()?;
        let u0 = init.planar(&domain, &target)?;
        let mut fcfg = fcfg.clone();
        if let (None, Some(m)) = (fcfg.blowup_scale, &cfg.monitor) {
            fcfg.blowup_scale = Some((m.epsilon.unwrap_or(0.1 * scales.epsilon0), m.rho));
        }
        let tr = run_flow(&u0, &fcfg)?;
        let rows: Vec<[f64; 9]> = tr
            .reports
            .iter()
            .map(|r| [r.t, r.energy, r.variational_energy, r.e_holo, r.e_antiholo, r.kappa, r.sup_du, r.sup_dbar, r.stress_lq])
            .collect();
        write_energy_trace(&log.path("energy_trace.csv"), &rows)?;
        log.files.push(log.path("energy_trace.csv"));
        let summary = FlowSummary {
            kind: "planar".into(),
            steps: tr.steps as u64,
            final_time: tr.snapshots.last().map_or(0.0, |s| s.t),
            singular_times: tr.singular_events.iter().map(|e| e.t).collect(),
            singular_locations: tr.singular_events.iter().map(|e| e.location).collect(),
            restarts: tr.restarts.clone(),
            restart_policy: tr.restart_policy.clone(),
            max_identity_violation: Some(tr.max_identity_violation),
            max_dbar_increase_rate: Some(tr.max_dbar_increase_rate),
            kappa_drift: tr.kappa_drift,
        };
        log.json("flow_summary.json", &summary)?;
        if let Some(lim) = a.energy_identity {
            log.check("flow.energy_identity", tr.max_identity_violation, lim, tr.max_identity_violation <= lim);
        }
        if let Some(lim) = a.kappa_drift {
            log.check("flow.kappa_drift", tr.kappa_drift, lim, tr.kappa_drift <= lim);
        }
        if let Some(lim) = a.dbar_increase_rate {
            log.check("flow.dbar_increase_rate", tr.max_dbar_increase_rate, lim, tr.max_dbar_increase_rate <= lim);
        }
        let files = io::write_map_snapshots(&log.path("snapshots"), &tr.snapshots, cfg.target.as_ref())?;
        log.files.extend(files);
        if !tr.restarts.is_empty() {
            log.restart_policy = Some(tr.restart_policy.clone());
        }
        let t = tr.singular_events.first().map(|e| e.t);
        (SnapshotSet::Planar(tr.snapshots), None, t)
    };
    if let Some(want) = a.blowup {
        log.check("flow.blowup", blowup.map_or(0.0, |t| t), if want { 1.0 } else { 0.0 }, blowup.is_some() == want);
    }
    analyze_into(&mut log, &set, &analysis, scales, trace, blowup)?;
    emit_all_plots(&mut log)?;
    let manifest = log.finish(cfg.hash(), start)?;
    Ok(RunOutcome { dir: out.to_path_buf(), manifest })
}

/// Runs the analyses of `analysis.json` over a snapshot directory written by a run.
pub fn analyze_snapshots(snapshot_dir: &Path, analysis: &AnalysisConfig, out: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let idx = io::SnapshotIndex::load(snapshot_dir)?;
    let set = io::read_snapshots(snapshot_dir, analysis.target.as_ref())?;
    let (target, radial, r0_default) = match &set {
        SnapshotSet::Radial(_) => (TargetMetric::RoundSphere, true, 0.5),
        SnapshotSet::Planar(s) => {
            let d = &s.first().ok_or_else(|| Error::InvalidParameter("empty snapshot directory".into()))?.domain;
            ((*s[0].target).clone(), false, d.default_r0())
        }
    };
    let scales = Scales { epsilon0: analysis.epsilon0.unwrap_or_else(|| target.epsilon0()), r0: analysis.r0.unwrap_or(r0_default) };
    let mut errs = Vec::new();
    analysis.validate_into(&mut errs, scales, radial);
    if analysis.is_empty() {
        errs.push("analysis config enables no analysis".into());
    }
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    std::fs::create_dir_all(out)?;
    let mut log = RunLog::new(out);
    log.json("analysis.json", analysis)?;
    let blowup = analysis.monitor.as_ref().and_then(|m| m.blowup_time);
    analyze_into(&mut log, &set, analysis, scales, None, blowup)?;
    emit_all_plots(&mut log)?;
    let hash = io::sha256_hex(&[serde_json::to_vec(analysis)?, serde_json::to_vec(&idx)?].concat());
    let manifest = log.finish(hash, start)?;
    Ok(RunOutcome { dir: out.to_path_buf(), manifest })
}

/// Per-snapshot probes, built lazily since planar field bundles are costly.
enum Probes<'a> {
    Planar(Vec<AnalyzedState>),
    Radial(&'a [CorotationalState]),
}

impl Probes<'_> {
    fn len(&self) -> usize {
        match self {
            Probes::Planar(v) => v.len(),
            Probes::Radial(v) => v.len(),
        }
    }

    fn time(&self, i: usize) -> f64 {
        match self {
            Probes::Planar(v) => v[i].time(),
            Probes::Radial(v) => v[i].t,
        }
    }

    fn floor(&self) -> f64 {
        match self {
            Probes::Planar(v) => v[0].scale_floor(),
            Probes::Radial(v) => v[0].scale_floor(),
        }
    }

    fn lambda(&self, i: usize, eps: f64, rho: f64, c: [f64; 2]) -> Result<f64> {
        match self {
            Probes::Planar(v) => energy_scale(&v[i], eps, rho, c),
            Probes::Radial(v) => energy_scale(&v[i], eps, rho, c),
        }
    }

    /// `(stress norm, sup |∂̄u|)`.
    fn stress_dbar(&self, i: usize, q: f64) -> Result<(f64, f64)> {
        match self {
            Probes::Planar(v) => {
                let r = energy_report(&v[i].state, q)?;
                Ok((r.stress_lq, r.sup_dbar))
            }
            Probes::Radial(v) => {
                let r = v[i].report();
                Ok((r.stress_l2, r.sup_dbar))
            }
        }
    }

    fn frame(&self, i: usize, c: [f64; 2], inner: f64, rho: f64, n: usize) -> Result<crate::neck_decay::NeckFrame> {
        match self {
            Probes::Planar(v) => neck_frame(&v[i], c, inner, rho, n),
            Probes::Radial(v) => neck_frame(&v[i], c, inner, rho, n),
        }
    }
}

/// Contents of `neck_report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NeckSummary {
    pub center: [f64; 2],
    pub frame_times: Vec<f64>,
    pub frame_inner_radii: Vec<f64>,
    pub params: NeckParams,
    pub c_fit: f64,
    pub c_dbar: f64,
    pub c_f: f64,
    pub hypothesis_ok: bool,
}

fn analyze_into(
    log: &mut RunLog,
    set: &SnapshotSet,
    a: &AnalysisConfig,
    scales: Scales,
    trace: Option<ScaleTrace>,
    blowup: Option<f64>,
) -> Result<()> {
    let blowup = a.monitor.as_ref().and_then(|m| m.blowup_time).or(blowup);
    let probes = match set {
        SnapshotSet::Planar(v) => {
            if a.is_empty() {
                return Ok(());
            }
            Probes::Planar(v.par_iter().map(|s| AnalyzedState::new(s.clone())).collect::<Result<Vec<_>>>()?)
        }
        SnapshotSet::Radial(v) => Probes::Radial(v),
    };
    if probes.len() == 0 {
        return Err(Error::InvalidParameter("no snapshots to analyse".into()));
    }
    let asrt = &a.assertions;
    // Snapshot indices at or before the singular time.
    let before: Vec<usize> = (0..probes.len()).filter(|&i| blowup.map_or(true, |t| probes.time(i) <= t)).collect();
    let mut lambdas_at: Vec<Option<f64>> = vec![None; probes.len()];

    if let Some(m) = &a.monitor {
        let eps = m.epsilon.unwrap_or(0.1 * scales.epsilon0);
        let floor = probes.floor();
        let mut traces = Vec::new();
        for (k, &c) in m.centers.iter().enumerate() {
            let st = match (&trace, k) {
                (Some(t), 0) => t.clone(),
                _ => {
                    let mut st = ScaleTrace::new(eps, m.rho, c, floor);
                    for i in 0..probes.len() {
                        let t = probes.time(i);
                        if st.times.last().map_or(true, |&last| t > last) {
                            let (s, d) = probes.stress_dbar(i, m.q)?;
                            st.push(t, probes.lambda(i, eps, m.rho, c)?, s, d)?;
                        }
                    }
                    st
                }
            };
            let name = if k == 0 { "scale_trace.csv".to_string() } else { format!("scale_trace_{k}.csv") };
            st.write_csv(&log.path(&name))?;
            log.files.push(log.path(&name));
            traces.push(st);
        }
        for &i in &before {
            lambdas_at[i] = Some(probes.lambda(i, eps, m.rho, m.centers[0])?);
        }
        if let Some(t_sing) = blowup {
            let window = m.fit_window.unwrap_or(FitWindow { lambda_min: 4.0 * floor, lambda_max: 0.2 * m.rho });
            let fit = fit_blowup_rate(&traces[0], t_sing, window);
            log.json("rate_fit.json", &fit)?;
            rate_assertions(log, asrt, &fit);
        } else if asrt.rate_exponent_min.is_some() || asrt.log_corrected_law.is_some() {
            log.check("rate.exponent", f64::NAN, asrt.rate_exponent_min.unwrap_or(f64::NAN), false);
            log.notes.push("rate fit requested but no singular time was detected or configured".into());
        }

        if let Some(n) = &a.neck {
            let rho = n.rho.unwrap_or(m.rho);
            let c = m.centers[0];
            let mut picked: Vec<(usize, f64)> = before
                .iter()
                .filter_map(|&i| lambdas_at[i].map(|l| (i, l)))
                .filter(|&(_, l)| l >= 4.0 * floor && n.inner_factor * l < 0.5 * rho)
                .collect();
            if blowup.is_none() {
                picked.clear();
            }
            let keep = picked.len().saturating_sub(n.frames);
            let picked = picked.split_off(keep);
            if picked.is_empty() {
                log.notes.push("neck: no resolved snapshot with inner_factor·λ < ρ/2 before a singular time".into());
                if let Some(lim) = asrt.neck_constant_max {
                    log.check("neck.constant", f64::NAN, lim, false);
                }
            } else {
                let mut frames = Vec::new();
                let (mut sigma, mut delta): (f64, f64) = (0.0, 0.0);
                for &(i, l) in &picked {
                    frames.push(probes.frame(i, c, n.inner_factor * l, rho, n.samples)?);
                    let (s, d) = probes.stress_dbar(i, n.q)?;
                    sigma = sigma.max(s);
                    delta = delta.max(d);
                }
                let params = NeckParams { rho, epsilon: n.epsilon.unwrap_or(eps), sigma, q: n.q, nu: n.nu, gamma: n.gamma, delta };
                let rep: NeckDecayReport = check_neck_decay(&frames, &params)?;
                rep.write_csv(&log.path("neck_decay.csv"))?;
                log.files.push(log.path("neck_decay.csv"));
                log.json(
                    "neck_report.json",
                    &NeckSummary {
                        center: c,
                        frame_times: frames.iter().map(|f| f.t).collect(),
                        frame_inner_radii: frames.iter().map(|f| f.inner).collect(),
                        params,
                        c_fit: rep.c_fit,
                        c_dbar: rep.c_dbar,
                        c_f: rep.c_f,
                        hypothesis_ok: rep.hypothesis_ok,
                    },
                )?;
                if let Some(lim) = asrt.neck_constant_max {
                    log.check("neck.constant", rep.c_fit, lim, rep.c_fit.is_finite() && rep.c_fit <= lim);
                }
            }
        }
    }

    if let Some(tcfg) = &a.bubble_tree {
        // Late snapshots whose scale is resolved by the grid.
        let lift = a.lift.clone().unwrap_or_default();
        let floor = probes.floor();
        let resolved: Vec<usize> = before
            .iter()
            .copied()
            .filter(|&i| lambdas_at[i].map_or(true, |l| l >= lift.resolved_cells * floor))
            .collect();
        let keep = resolved.len().saturating_sub(tcfg.persistence.max(1) + 1);
        let chosen = &resolved[keep..];
        let snaps: Vec<AnalyzedState> = match (&probes, set) {
            (Probes::Planar(v), _) => chosen.iter().map(|&i| v[i].clone()).collect(),
            (Probes::Radial(_), SnapshotSet::Radial(v)) => {
                let states: Vec<CorotationalState> = chosen.iter().map(|&i| v[i].clone()).collect();
                lift_radial(&states, lift.n_r, lift.n_theta, lift.r_min)?
            }
            _ => unreachable!(),
        };
        // On a log-polar lift |du|·h is scale invariant; detect against the radial cell instead.
        let mut tcfg = tcfg.clone();
        if let (SnapshotSet::Radial(v), None) = (set, tcfg.length) {
            tcfg.length = Some(v[0].dr);
        }
        if snaps.is_empty() {
            log.notes.push("bubble tree: no resolved snapshot to analyse".into());
        } else {
            let tree = build_bubble_tree(&snaps, &tcfg)?;
            tree_outputs(log, &tree, a.target.as_ref())?;
            tree_assertions(log, asrt, &tree, scales.epsilon0, tcfg.dbar_tolerance);
        }
    }
    Ok(())
}

fn rate_assertions(log: &mut RunLog, a: &AssertionConfig, fit: &RateFit) {
    if let Some(lim) = a.rate_exponent_min {
        let e = fit.exponent.unwrap_or(f64::NAN);
        log.check("rate.exponent", e, lim, e >= lim);
    }
    if let Some(want) = a.log_corrected_law {
        let (c, h) = (fit.cdy_rms.unwrap_or(f64::NAN), fit.half_rms.unwrap_or(f64::NAN));
        log.check("rate.log_corrected_rms", c, h, (c < h) == want);
    }
}

fn tree_outputs(log: &mut RunLog, tree: &BubbleTree, target: Option<&TargetSpec>) -> Result<()> {
    log.json("bubble_tree.json", tree)?;
    let mut all = Vec::new();
    for b in &tree.bubbles {
        b.walk(&mut all);
    }
    for (k, b) in all.iter().enumerate() {
        if let Some(s) = &b.state {
            let files = io::write_map_snapshots(&log.path(&format!("bubbles/bubble_{k:02}")), std::slice::from_ref(s), target)?;
            log.files.extend(files);
        }
    }
    if let Some(body) = &tree.body_map {
        let files = io::write_map_snapshots(&log.path("bubbles/body"), std::slice::from_ref(body), target)?;
        log.files.extend(files);
    }
    Ok(())
}

fn tree_assertions(log: &mut RunLog, a: &AssertionConfig, tree: &BubbleTree, eps0: f64, dbar_tol: f64) {
    let all: Vec<&Bubble> = tree.all_bubbles();
    if let Some(n) = a.bubble_count {
        log.check("tree.bubble_count", all.len() as f64, n as f64, all.len() == n);
    }
    if let Some(tol) = a.bubble_quantization {
        let worst = all
            .iter()
            .map(|b| {
                let m = (b.energy / eps0).round().max(1.0);
                (b.energy / (m * eps0) - 1.0).abs()
            })
            .fold(0.0, f64::max);
        log.check("tree.bubble_quantization", worst, tol, !all.is_empty() && worst <= tol);
    }
    if let Some(tol) = a.tree_identity {
        let r = tree.energy_identity_residual / eps0;
        log.check("tree.energy_identity", r, tol, r <= tol);
    }
    if let Some(want) = a.holomorphic_bubbles {
        let holo = all.iter().all(|b| b.orientation == crate::bubble_tree::Orientation::Holomorphic);
        let worst = all.iter().map(|b| b.e_antiholo / b.energy.max(f64::MIN_POSITIVE)).fold(0.0, f64::max);
        log.check("tree.holomorphic", worst, dbar_tol, holo == want);
    }
}

/// Plot-ready data sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    /// `E, E_∂, E_∂̄, κ` against `t`.
    Energy,
    /// `log λ` against `log(T − t)`.
    Rate,
    /// `f` and its decay bound against `r` at the neck frames.
    Neck,
}

impl PlotKind {
    pub const ALL: [PlotKind; 3] = [PlotKind::Energy, PlotKind::Rate, PlotKind::Neck];

    pub fn file_name(self) -> &'static str {
        match self {
            PlotKind::Energy => "plot_energy.csv",
            PlotKind::Rate => "plot_rate.csv",
            PlotKind::Neck => "plot_neck.csv",
        }
    }
}

/// Writes the tidy CSV for `kind` from a run directory's artifacts; `None` if they are absent.
pub fn emit_plot_data(run_dir: &Path, kind: PlotKind) -> Result<Option<PathBuf>> {
    let out = run_dir.join(kind.file_name());
    match kind {
        PlotKind::Energy => {
            let src = run_dir.join("energy_trace.csv");
            if !src.exists() {
                return Ok(None);
            }
            let mut w = io::csv_writer(&out, "t: time; energy: Dirichlet energy; e_holo: holomorphic energy; e_antiholo: antiholomorphic energy; kappa: e_holo - e_antiholo")?;
            w.write_record(["t", "energy", "e_holo", "e_antiholo", "kappa"])?;
            for row in io::csv_reader(&src)?.deserialize::<[f64; 9]>() {
                let r = row?;
                w.serialize([r[0], r[1], r[3], r[4], r[5]])?;
            }
            w.flush()?;
        }
        PlotKind::Rate => {
            let (src, fit) = (run_dir.join("scale_trace.csv"), run_dir.join("rate_fit.json"));
            if !src.exists() || !fit.exists() {
                return Ok(None);
            }
            let fit: RateFit = serde_json::from_reader(std::fs::File::open(fit)?)?;
            let mut w = io::csv_writer(
                &out,
                "log_t: ln(T - t); log_lambda: ln(lambda); in_window: 1 if the point entered the fit; power_fit: fitted line intercept + exponent*log_t",
            )?;
            w.write_record(["log_t", "log_lambda", "in_window", "power_fit"])?;
            for row in io::csv_reader(&src)?.deserialize::<[f64; 4]>() {
                let [t, l, _, _] = row?;
                let s = fit.blowup_time - t;
                if s > 0.0 && l > 0.0 {
                    let inside = l >= fit.window.lambda_min && l <= fit.window.lambda_max && s < 1.0;
                    let line = match (fit.power_intercept, fit.exponent) {
                        (Some(c), Some(p)) => c + p * s.ln(),
                        _ => f64::NAN,
                    };
                    w.serialize((s.ln(), l.ln(), u8::from(inside), line))?;
                }
            }
            w.flush()?;
        }
        PlotKind::Neck => {
            let (src, rep) = (run_dir.join("neck_decay.csv"), run_dir.join("neck_report.json"));
            if !src.exists() || !rep.exists() {
                return Ok(None);
            }
            let rep: NeckSummary = serde_json::from_reader(std::fs::File::open(rep)?)?;
            let mut w = io::csv_writer(
                &out,
                "t: frame time; r: radius; f: angular energy; f_bound: c_f times the decay profile; r_du: r|du|; r_du_bound: c_fit times the gradient bound",
            )?;
            w.write_record(["t", "r", "f", "f_bound", "r_du", "r_du_bound"])?;
            for row in io::csv_reader(&src)?.deserialize::<[f64; 7]>() {
                let [r, t, f, r_du, bound, _, prof] = row?;
                w.serialize([t, r, f, rep.c_f * prof, r_du, rep.c_fit * bound])?;
            }
            w.flush()?;
        }
    }
    Ok(Some(out))
}

fn emit_all_plots(log: &mut RunLog) -> Result<()> {
    for kind in PlotKind::ALL {
        if let Some(p) = emit_plot_data(&log.dir, kind)? {
            log.files.push(p);
        }
    }
    Ok(())
}

/// Manifest of a run directory together with any checksum mismatches.
#[derive(Clone, Debug)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub mismatches: Vec<String>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.manifest.passed && self.mismatches.is_empty()
    }
}

/// Loads `manifest.json` and re-verifies every listed checksum.
pub fn report_run(run_dir: &Path) -> Result<RunReport> {
    let manifest: RunManifest = serde_json::from_reader(std::fs::File::open(run_dir.join(MANIFEST_FILE))?)?;
    let mut mismatches = Vec::new();
    for f in &manifest.files {
        let p = run_dir.join(&f.path);
        match io::sha256_file(&p) {
            Ok(h) if h == f.sha256 => {}
            Ok(_) => mismatches.push(format!("{}: checksum differs", f.path)),
            Err(e) => mismatches.push(format!("{}: {e}", f.path)),
        }
    }
    Ok(RunReport { manifest, mismatches })
}
