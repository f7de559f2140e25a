//! Declarative experiment configuration (TOML) and its validation.

use kinlab::carleman::DEFAULT_RADIUS;
use kinlab::ensemble::{Basis, FourierModeFn, Phase, G0};
use kinlab::kinetic::Scaling;
use kinlab::sim::Direction;
use kinlab::trees::TrajectoryMode;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    #[serde(default = "one")]
    pub coef: f64,
    pub k: [i32; 2],
    pub basis: Basis,
    #[serde(default)]
    pub phase: Phase,
}

fn one() -> f64 {
    1.0
}

pub fn g0_of(terms: &[Term]) -> G0 {
    G0 { terms: terms.iter().map(|t| (t.coef, FourierModeFn { k: t.k, basis: t.basis, phase: t.phase })).collect() }
}

fn default_h() -> Vec<Term> {
    vec![Term { coef: 1.0, k: [1, 0], basis: Basis::V1, phase: Phase::Cos }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n: Option<usize>,
    pub alpha: Option<f64>,
    pub eps: Option<f64>,
    pub beta: f64,
    pub replicas: usize,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        EnsembleSection { n: None, alpha: None, eps: None, beta: 1.0, replicas: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveSection {
    pub t: f64,
    pub direction: Direction,
    /// Output rows every `segment` time units.
    pub segment: f64,
    pub max_events: u64,
    pub record_events: bool,
    /// Start from this snapshot instead of a Gibbs sample.
    pub input: Option<PathBuf>,
    /// Also run forward–flip–forward–flip and report the deviation.
    pub reverse_check: bool,
}

impl Default for EvolveSection {
    fn default() -> Self {
        EvolveSection {
            t: 1.0,
            direction: Direction::Forward,
            segment: 0.25,
            max_events: 50_000_000,
            record_events: false,
            input: None,
            reverse_check: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObservablesSection {
    pub h: Vec<Term>,
    pub h_tilde: Vec<Term>,
    pub times: Option<Vec<f64>>,
    pub t_max: f64,
    pub n_times: usize,
    pub replicas: usize,
    /// Add the kinetic-solver prediction as a column.
    pub kinetic_oracle: bool,
    pub oracle_n_v: usize,
    /// Marginal: datum g0, time and bins.
    pub g0: Vec<Term>,
    pub t: f64,
    pub nx: usize,
    pub nv: usize,
}

impl Default for ObservablesSection {
    fn default() -> Self {
        ObservablesSection {
            h: default_h(),
            h_tilde: default_h(),
            times: None,
            t_max: 1.0,
            n_times: 5,
            replicas: 200,
            kinetic_oracle: true,
            oracle_n_v: 32,
            g0: vec![Term { coef: 1.0, k: [1, 0], basis: Basis::One, phase: Phase::Cos }],
            t: 0.0,
            nx: 8,
            nv: 10,
        }
    }
}

impl ObservablesSection {
    pub fn time_grid(&self) -> Vec<f64> {
        match &self.times {
            Some(t) => t.clone(),
            None => {
                let n = self.n_times.max(1);
                (0..=n).map(|i| self.t_max * i as f64 / n as f64).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticSection {
    pub n_v: usize,
    pub v_max: Option<f64>,
    pub n_angle: usize,
    pub alpha: f64,
    pub scaling: Scaling,
    pub times: Vec<f64>,
    pub datum: Vec<Term>,
    /// Lift the [hydro] modes instead of `datum`.
    pub from_hydro: bool,
    pub dt_max: f64,
    pub cfl: f64,
    /// Grids for `coeffs`.
    pub grids: Vec<usize>,
    pub spectral_gap: bool,
}

impl Default for KineticSection {
    fn default() -> Self {
        KineticSection {
            n_v: 32,
            v_max: None,
            n_angle: kinlab::kinetic::DEFAULT_NANGLE,
            alpha: 1.0,
            scaling: Scaling::Acoustic,
            times: vec![0.5, 1.0],
            datum: default_h(),
            from_hydro: false,
            dt_max: 0.01,
            cfl: 0.1,
            grids: vec![32, 48],
            spectral_gap: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HydroSystem {
    Acoustic,
    Stokes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: [i32; 2],
    /// Real cosine amplitudes.
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub u: [f64; 2],
    #[serde(default)]
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HydroSection {
    pub system: HydroSystem,
    pub modes: Vec<ModeSpec>,
    pub times: Vec<f64>,
    pub mu: Option<f64>,
    pub kappa: Option<f64>,
    /// Project the velocity onto divergence-free fields first.
    pub leray: bool,
}

impl Default for HydroSection {
    fn default() -> Self {
        HydroSection {
            system: HydroSystem::Acoustic,
            modes: vec![ModeSpec { k: [1, 0], rho: 1.0, u: [0.0, 0.0], theta: 0.0 }],
            times: vec![0.0, 0.5, 1.0],
            mu: None,
            kappa: None,
            leray: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreesTask {
    Duhamel,
    Shift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Probe {
    pub x: [f64; 2],
    pub v: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreesSection {
    pub task: TreesTask,
    pub mode: TrajectoryMode,
    pub t: f64,
    pub alpha: f64,
    pub beta: f64,
    pub g0: Vec<Term>,
    pub probes: Vec<Probe>,
    /// Snap probe velocities to the oracle grid nodes.
    pub snap_to_grid: bool,
    pub samples: usize,
    pub s_max: usize,
    pub n0: Option<u64>,
    pub slice: Option<f64>,
    pub velocity_cutoff: Option<f64>,
    pub eps: Option<f64>,
    pub antithetic: bool,
    pub kinetic_oracle: bool,
    pub oracle_n_v: usize,
    /// Dump this many per-sample records of the first probe as JSONL.
    pub trace: usize,
    /// Shift-bound check.
    pub pairs: usize,
}

impl Default for TreesSection {
    fn default() -> Self {
        TreesSection {
            task: TreesTask::Duhamel,
            mode: TrajectoryMode::Boltzmann,
            t: 0.5,
            alpha: 1.0,
            beta: 1.0,
            g0: default_h(),
            probes: vec![Probe { x: [0.13, 0.5], v: [-0.8, 0.5] }],
            snap_to_grid: true,
            samples: 100_000,
            s_max: 4,
            n0: None,
            slice: None,
            velocity_cutoff: None,
            eps: None,
            antithetic: true,
            kinetic_oracle: true,
            oracle_n_v: 32,
            trace: 0,
            pairs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecollideSection {
    pub z1: Probe,
    pub t: f64,
    pub s: usize,
    pub eps: Vec<f64>,
    pub beta: f64,
    pub samples: usize,
}

impl Default for RecollideSection {
    fn default() -> Self {
        RecollideSection {
            z1: Probe { x: [0.5, 0.5], v: [0.5, -0.3] },
            t: 1.0,
            s: 3,
            eps: (7..=11).map(|k| 2f64.powi(-k)).collect(),
            beta: 1.0,
            samples: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CumulantsSection {
    pub d: usize,
    pub n: usize,
    pub trials: usize,
    pub product_trials: usize,
}

impl Default for CumulantsSection {
    fn default() -> Self {
        CumulantsSection { d: 3, n: 4, trials: 50, product_trials: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CarlemanSection {
    pub pivot: [f64; 2],
    pub radius: f64,
    /// Random (v*, ν*, v̄) triples for the orthogonality check.
    pub pairs: usize,
    pub pushforward_samples: usize,
    pub scan_samples: usize,
    /// v_j − v̄ for the off-pivot scans.
    pub far_offset: [f64; 2],
    pub deltas: Vec<f64>,
    pub dists: Vec<f64>,
}

impl Default for CarlemanSection {
    fn default() -> Self {
        CarlemanSection {
            pivot: [0.1, -0.3],
            radius: DEFAULT_RADIUS,
            pairs: 1_000_000,
            pushforward_samples: 400_000,
            scan_samples: 20_000,
            far_offset: [0.6, 0.8],
            deltas: (5..=10).map(|k| 2f64.powi(-k)).collect(),
            dists: (1..=8).map(|k| 2f64.powi(-k)).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub evolve: EvolveSection,
    #[serde(default)]
    pub observables: ObservablesSection,
    #[serde(default)]
    pub kinetic: KineticSection,
    #[serde(default)]
    pub hydro: HydroSection,
    #[serde(default)]
    pub trees: TreesSection,
    #[serde(default)]
    pub recollide: RecollideSection,
    #[serde(default)]
    pub cumulants: CumulantsSection,
    #[serde(default)]
    pub carleman: CarlemanSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config error at `{path}`: {message}")]
    Schema { path: String, message: String },
    #[error("bad override `{0}`: expected section.key=value")]
    Override(String),
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| ConfigError::Schema { path: ".".into(), message: e.to_string() })?;
        serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            path: e.path().to_string(),
            message: e.inner().message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml_str(&text)
    }

    /// Apply `section.key=value` overrides (value in TOML syntax; bare words are strings).
    pub fn with_overrides(&self, sets: &[String]) -> Result<Self, ConfigError> {
        if sets.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = toml::Value::try_from(self).map_err(|e| ConfigError::Schema { path: ".".into(), message: e.to_string() })?;
        for s in sets {
            let (key, raw) = s.split_once('=').ok_or_else(|| ConfigError::Override(s.clone()))?;
            let value: toml::Value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
                Ok(mut t) => t.remove("v").expect("parsed key"),
                Err(_) => toml::Value::String(raw.to_string()),
            };
            let mut node = &mut doc;
            let parts: Vec<&str> = key.trim().split('.').collect();
            for (i, p) in parts.iter().enumerate() {
                let table = node.as_table_mut().ok_or_else(|| ConfigError::Override(s.clone()))?;
                if i + 1 == parts.len() {
                    table.insert((*p).to_string(), value.clone());
                    break;
                }
                node = table.entry((*p).to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let text = toml::to_string(&doc).map_err(|e| ConfigError::Schema { path: ".".into(), message: e.to_string() })?;
        Self::from_toml_str(&text)
    }

    /// Canonical serialisation used for the config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        Sha256::digest(self.canonical_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// (N, α, ε) resolved from any two of the three.
    pub fn ensemble_triple(&self) -> Option<(usize, f64, f64)> {
        let e = &self.ensemble;
        match (e.n, e.alpha, e.eps) {
            (Some(n), Some(a), _) => Some((n, a, a / n as f64)),
            (Some(n), None, Some(eps)) => Some((n, eps * n as f64, eps)),
            (None, Some(a), Some(eps)) => Some(((a / eps).round() as usize, a, eps)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub level: Level,
    pub fields: Vec<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lvl = match self.level {
            Level::Error => "error",
            Level::Warning => "warning",
        };
        write!(f, "{lvl} [{}]: {}", self.fields.join(", "), self.message)
    }
}

/// Which sections a command reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Needs {
    Ensemble,
    Kinetic,
    Hydro,
    Trees,
    Recollide,
    Cumulants,
    Carleman,
}

/// Schema-independent consistency checks; `needs` selects the sections
/// that must be complete (all present sections are sanity-checked).
pub fn validate(cfg: &ExperimentConfig, needs: &[Needs]) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut err = |fields: &[&str], message: String| {
        out.push(Diagnostic { level: Level::Error, fields: fields.iter().map(|s| s.to_string()).collect(), message })
    };
    if cfg.seed.is_none() {
        err(&["seed"], "seed is mandatory".into());
    }
    if cfg.workers == Some(0) {
        err(&["workers"], "workers must be ≥ 1".into());
    }
    let e = &cfg.ensemble;
    if let (Some(n), Some(a), Some(eps)) = (e.n, e.alpha, e.eps) {
        if (eps * n as f64 - a).abs() > 1e-14 * a.abs().max(1.0) {
            err(
                &["ensemble.eps", "ensemble.n", "ensemble.alpha"],
                format!("eps·N = {} differs from alpha = {a} (Boltzmann–Grad scaling requires eps·N = alpha)", eps * n as f64),
            );
        }
    }
    if let (None, Some(a), Some(eps)) = (e.n, e.alpha, e.eps) {
        let n = a / eps;
        if (n - n.round()).abs() > 1e-9 * n {
            err(&["ensemble.n", "ensemble.alpha", "ensemble.eps"], format!("alpha/eps = {n} is not an integer particle count"));
        }
    }
    if !(e.beta > 0.0) {
        err(&["ensemble.beta"], format!("beta must be > 0, got {}", e.beta));
    }
    let mut warnings = Vec::new();
    match cfg.ensemble_triple() {
        Some((n, a, eps)) => {
            if n == 0 || !(a > 0.0) {
                err(&["ensemble.n", "ensemble.alpha"], "N and alpha must be positive".into());
            } else if eps >= 0.5 {
                err(&["ensemble.eps"], format!("eps = {eps} must be < 1/2"));
            } else {
                let phi = n as f64 * PI * eps * eps / 4.0;
                if phi > 0.3 {
                    warnings.push(Diagnostic {
                        level: Level::Warning,
                        fields: vec!["ensemble.n".into(), "ensemble.alpha".into()],
                        message: format!("area fraction {phi:.3} > 0.3: dense regime, Gibbs sampling may be slow"),
                    });
                }
            }
        }
        None if needs.contains(&Needs::Ensemble) => {
            err(&["ensemble.n", "ensemble.alpha", "ensemble.eps"], "two of N, alpha, eps are required".into())
        }
        None => {}
    }
    let sorted = |v: &[f64]| v.iter().all(|t| *t >= 0.0 && t.is_finite()) && v.windows(2).all(|w| w[1] >= w[0]);
    if let Some(t) = &cfg.observables.times {
        if !sorted(t) {
            err(&["observables.times"], "times must be nonnegative and nondecreasing".into());
        }
    }
    let k = &cfg.kinetic;
    let grid_ok = |n: usize| n >= 4 && n % 2 == 0;
    if !grid_ok(k.n_v) {
        err(&["kinetic.n_v"], format!("n_v must be even and ≥ 4, got {}", k.n_v));
    }
    if !grid_ok(k.n_angle) {
        err(&["kinetic.n_angle"], format!("n_angle must be even and ≥ 4, got {}", k.n_angle));
    }
    if k.grids.iter().any(|&n| !grid_ok(n)) {
        err(&["kinetic.grids"], "grid sizes must be even and ≥ 4".into());
    }
    if k.v_max.is_some_and(|v| !(v > 0.0)) {
        err(&["kinetic.v_max"], "v_max must be > 0".into());
    }
    if !sorted(&k.times) {
        err(&["kinetic.times"], "times must be nonnegative and nondecreasing".into());
    }
    if !(k.alpha > 0.0) {
        err(&["kinetic.alpha"], "alpha must be > 0".into());
    }
    if !sorted(&cfg.hydro.times) {
        err(&["hydro.times"], "times must be nonnegative and nondecreasing".into());
    }
    let tr = &cfg.trees;
    if tr.alpha * tr.t > 2.0 {
        err(&["trees.alpha", "trees.t"], format!("alpha·t = {} exceeds the series regime (≤ 2)", tr.alpha * tr.t));
    }
    if tr.mode == TrajectoryMode::Bbgky && tr.eps.is_none() && needs.contains(&Needs::Trees) {
        err(&["trees.eps"], "BBGKY mode needs eps".into());
    }
    if tr.task == TreesTask::Shift && tr.eps.is_none() && needs.contains(&Needs::Trees) {
        err(&["trees.eps"], "the shift check needs eps".into());
    }
    let r = &cfg.recollide;
    if r.eps.iter().any(|&x| !(x > 0.0 && x < 0.5)) {
        err(&["recollide.eps"], "eps values must lie in (0, 1/2)".into());
    }
    let c = &cfg.cumulants;
    if (c.d as f64).powi(c.n as i32) > 1e6 {
        err(&["cumulants.d", "cumulants.n"], format!("d^N = {} exceeds 10^6", (c.d as f64).powi(c.n as i32)));
    }
    if !(cfg.carleman.radius > 0.0) {
        err(&["carleman.radius"], "radius must be > 0".into());
    }
    out.extend(warnings);
    out
}
