//! Experiment decks, hypothesis checks and seeded runs.
//!
//! A deck is a TOML document:
//!
//! ```toml
//! kind = "trap"
//! seeds = [1, 2, 3]
//!
//! [model]
//! dim = 3
//! count = 5
//! kappa_factor = 1.5
//!
//! [model.frequencies]
//! mode = "random"
//! scale = 0.2
//!
//! [model.influence]
//! kind = "linear-hat"
//! beta = 1.2
//!
//! [framework]
//! gamma0 = 0.5
//!
//! [integration]
//! h = 0.01
//! t_end = 100.0
//! ```

mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{
    big_gamma, kappa_c, kappa_trapping, lambda1, restoring_factor, threshold_report,
    FrameworkParams,
};
use crate::dynamics::{hex_digest, EnsembleState, IntegrationSettings, ModelConfig};
use crate::geometry::{
    distance_from_identity, geodesic_distance, matrix_from_csv, random_skew_direction,
    sample_ball, sample_haar, Matrix, MatrixJson, Rotation, Skew,
};
use crate::influence::{InfluenceFunction, InfluenceSpec};

pub use run::{run, RunReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        2
    }

    /// `{"error": ..., "message": ...}` for stderr.
    pub fn to_json_value(&self) -> Value {
        let kind = match self {
            HarnessError::Spec(_) => "spec",
            HarnessError::Io { .. } => "io",
        };
        json!({"error": kind, "message": self.to_string()})
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

fn spec_err(e: impl fmt::Display) -> HarnessError {
    HarnessError::Spec(e.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentKind {
    Simulate,
    Trap,
    Herd,
    Stability,
    Sync,
    Equilibrium,
    Fixedpoint,
    Reduce2d,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::Simulate,
        ExperimentKind::Trap,
        ExperimentKind::Herd,
        ExperimentKind::Stability,
        ExperimentKind::Sync,
        ExperimentKind::Equilibrium,
        ExperimentKind::Fixedpoint,
        ExperimentKind::Reduce2d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Trap => "trap",
            ExperimentKind::Herd => "herd",
            ExperimentKind::Stability => "stability",
            ExperimentKind::Sync => "sync",
            ExperimentKind::Equilibrium => "equilibrium",
            ExperimentKind::Fixedpoint => "fixedpoint",
            ExperimentKind::Reduce2d => "reduce2d",
        }
    }

    fn needs_framework(self) -> bool {
        !matches!(
            self,
            ExperimentKind::Simulate | ExperimentKind::Reduce2d | ExperimentKind::Fixedpoint
        )
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| spec_err(format!("unknown experiment kind {s}")))
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub kind: Option<ExperimentKind>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub model: ModelSpec,
    #[serde(default)]
    pub framework: Option<FrameworkSpec>,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub integration: IntegrationSettings,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub stability: StabilitySpec,
    #[serde(default)]
    pub fixedpoint: FixedPointSpec,
    #[serde(default)]
    pub equilibrium: EquilibriumSpec,
    #[serde(default)]
    pub reduce2d: Reduce2dSpec,
    /// Run even when hypotheses fail (negative controls).
    #[serde(default)]
    pub override_hypotheses: bool,
    /// Directory that relative file references resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub dim: usize,
    pub count: usize,
    #[serde(default)]
    pub kappa: Option<f64>,
    /// Coupling as a multiple of the threshold relevant to the experiment.
    #[serde(default)]
    pub kappa_factor: Option<f64>,
    #[serde(default)]
    pub frequencies: FrequencySpec,
    pub influence: InfluenceSpec,
    #[serde(default)]
    pub attraction: Option<MatrixSource>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyMode {
    #[default]
    Random,
    Explicit,
    Rates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrequencySpec {
    pub mode: FrequencyMode,
    /// Norm of every random frequency.
    pub scale: f64,
    /// Frequencies are drawn from their own stream, independent of the run seeds.
    pub seed: u64,
    /// Copy oscillator 0's frequency to everyone.
    pub homogeneous: bool,
    /// Conjugate block-rate frequencies by a Haar rotation.
    pub conjugate: bool,
    /// Row-major matrices, one per oscillator (or one to broadcast).
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
    /// Block rates per oscillator (or one list to broadcast).
    pub rates: Option<Vec<Vec<f64>>>,
    /// JSON array of `{dim, entries}` objects.
    pub file: Option<PathBuf>,
}

impl Default for FrequencySpec {
    fn default() -> Self {
        FrequencySpec {
            mode: FrequencyMode::Random,
            scale: 0.1,
            seed: 0,
            homogeneous: false,
            conjugate: false,
            matrices: None,
            rates: None,
            file: None,
        }
    }
}

/// A matrix given inline as rows, or by a JSON/CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSource {
    #[serde(default)]
    pub rows: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameworkSpec {
    /// Defaults to the support bound of the influence profile.
    #[serde(default)]
    pub beta: Option<f64>,
    pub gamma0: f64,
    #[serde(default)]
    pub leaders: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialMode {
    /// Uniform radius in `[0, radius)` around the attraction point.
    #[default]
    Ball,
    Haar,
    /// Leaders in `B_{γ0}`, followers in `B_{Γ_i}`.
    Herd,
    Explicit,
    /// Planar phases (n = 2).
    Phases,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSpec {
    pub mode: InitialMode,
    /// Defaults to `γ0`.
    pub radius: Option<f64>,
    /// Followers are drawn within this fraction of `Γ_i`.
    pub follower_factor: f64,
    pub matrices: Option<Vec<Vec<Vec<f64>>>>,
    pub file: Option<PathBuf>,
    pub phases: Option<Vec<f64>>,
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec {
            mode: InitialMode::Ball,
            radius: None,
            follower_factor: 0.99,
            matrices: None,
            file: None,
            phases: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
    /// Skip trajectory CSVs.
    pub no_trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySpec {
    /// Geodesic size of the perturbation; defaults to `γ0 / 10`.
    pub perturbation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointSpec {
    pub scan_points: usize,
    /// Bisection bracket; skips the coupling precondition.
    pub bracket: Option<[f64; 2]>,
    /// Defaults to the solver bracket.
    pub scan_range: Option<[f64; 2]>,
    pub scan_tol: f64,
}

impl Default for FixedPointSpec {
    fn default() -> Self {
        FixedPointSpec {
            scan_points: 10_001,
            bracket: None,
            scan_range: None,
            scan_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumSpec {
    pub branches: Option<Vec<Vec<bool>>>,
    pub stationarity_horizon: f64,
    pub stationarity_tol: f64,
    pub agreement_tol: f64,
}

impl Default for EquilibriumSpec {
    fn default() -> Self {
        EquilibriumSpec {
            branches: None,
            stationarity_horizon: 10.0,
            stationarity_tol: 1e-7,
            agreement_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Reduce2dSpec {
    pub tolerance: f64,
}

impl Default for Reduce2dSpec {
    fn default() -> Self {
        Reduce2dSpec { tolerance: 1e-6 }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(spec_err)
    }

    /// Parses a deck; relative file references resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut spec = Self::from_toml_str(&text)?;
        spec.base_dir = path.parent().map(Path::to_path_buf);
        Ok(spec)
    }

    pub fn kind(&self) -> Result<ExperimentKind> {
        self.kind
            .ok_or_else(|| spec_err("experiment kind missing (set `kind` or pick a subcommand)"))
    }

    /// SHA-256 of the canonical JSON form, ignoring where artifacts go.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output.dir = None;
        hex_digest(
            serde_json::to_string(&canonical)
                .expect("spec serializes")
                .as_bytes(),
        )
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("winfree-out"))
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    fn read(&self, path: &Path) -> Result<String> {
        let full = self.resolve(path);
        std::fs::read_to_string(&full).map_err(|e| HarnessError::Io {
            path: full,
            message: e.to_string(),
        })
    }
}

/// ChaCha20 stream for oscillator `i` of a given purpose; streams are
/// independent, so one oscillator's draws never shift another's.
pub fn oscillator_rng(seed: u64, purpose: u64, i: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 32) | i as u64);
    rng
}

pub(crate) const STREAM_FREQUENCY: u64 = 1;
pub(crate) const STREAM_INITIAL: u64 = 2;
pub(crate) const STREAM_PERTURBATION: u64 = 3;

fn matrix_from_rows(rows: &[Vec<f64>], n: usize) -> Result<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(spec_err(format!("expected a {n}×{n} matrix")));
    }
    Ok(Matrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn matrices_from_file(spec: &ExperimentSpec, path: &Path) -> Result<Vec<Matrix>> {
    let text = spec.read(path)?;
    let list: Vec<MatrixJson> = serde_json::from_str(&text).map_err(spec_err)?;
    list.iter()
        .map(|m| m.to_matrix().map_err(spec_err))
        .collect()
}

fn broadcast<T: Clone>(items: Vec<T>, count: usize, what: &str) -> Result<Vec<T>> {
    match items.len() {
        1 => Ok(vec![items[0].clone(); count]),
        k if k == count => Ok(items),
        k => Err(spec_err(format!("{what}: got {k} entries for {count} oscillators"))),
    }
}

fn build_frequencies(spec: &ExperimentSpec) -> Result<Vec<Skew>> {
    let m = &spec.model;
    let fs = &m.frequencies;
    let n = m.dim;
    let mut out = match fs.mode {
        FrequencyMode::Random => (0..m.count)
            .map(|i| {
                let mut rng = oscillator_rng(fs.seed, STREAM_FREQUENCY, i);
                random_skew_direction(n, &mut rng).scaled(fs.scale)
            })
            .collect(),
        FrequencyMode::Explicit => {
            let mats = match (&fs.matrices, &fs.file) {
                (Some(rows), None) => rows
                    .iter()
                    .map(|r| matrix_from_rows(r, n))
                    .collect::<Result<Vec<_>>>()?,
                (None, Some(path)) => matrices_from_file(spec, path)?,
                _ => {
                    return Err(spec_err(
                        "explicit frequencies need exactly one of `matrices` or `file`",
                    ))
                }
            };
            broadcast(mats, m.count, "frequencies")?
                .into_iter()
                .map(|x| Skew::new(x).map_err(spec_err))
                .collect::<Result<Vec<_>>>()?
        }
        FrequencyMode::Rates => {
            let rates = fs
                .rates
                .clone()
                .ok_or_else(|| spec_err("rate frequencies need `rates`"))?;
            broadcast(rates, m.count, "rates")?
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let w = Skew::from_block_rates(n, r).map_err(spec_err)?;
                    if fs.conjugate {
                        let mut rng = oscillator_rng(fs.seed, STREAM_FREQUENCY, i);
                        let p = sample_haar(n, &mut rng).map_err(spec_err)?;
                        Ok(w.conjugated(p.matrix()))
                    } else {
                        Ok(w)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if fs.homogeneous && !out.is_empty() {
        let first = out[0].clone();
        out.iter_mut().for_each(|w| *w = first.clone());
    }
    Ok(out)
}

fn build_attraction(spec: &ExperimentSpec) -> Result<Option<Rotation>> {
    let Some(src) = &spec.model.attraction else {
        return Ok(None);
    };
    let n = spec.model.dim;
    let m = match (&src.rows, &src.file) {
        (Some(rows), None) => matrix_from_rows(rows, n)?,
        (None, Some(path)) => {
            let text = spec.read(path)?;
            let parsed = if path.extension().is_some_and(|e| e == "csv") {
                matrix_from_csv(&text)
            } else {
                crate::geometry::matrix_from_json(&text)
            };
            parsed.map_err(spec_err)?
        }
        _ => return Err(spec_err("attraction needs exactly one of `rows` or `file`")),
    };
    Rotation::new(m).map(Some).map_err(spec_err)
}

fn build_influence(spec: &ExperimentSpec) -> Result<InfluenceFunction> {
    let mut ispec = spec.model.influence.clone();
    if let Some(Value::String(path)) = ispec.params.get("csv") {
        let full = spec.resolve(Path::new(path));
        ispec.params.insert(
            "csv".into(),
            Value::String(full.to_string_lossy().into_owned()),
        );
    }
    ispec.build().map_err(spec_err)
}

fn build_framework(
    spec: &ExperimentSpec,
    kind: ExperimentKind,
    influence: &InfluenceFunction,
) -> Result<Option<FrameworkParams>> {
    let Some(f) = &spec.framework else {
        if kind.needs_framework() {
            return Err(spec_err(format!("{kind} needs a [framework] section")));
        }
        return Ok(None);
    };
    let beta = f.beta.unwrap_or_else(|| influence.beta());
    let mut leaders = f.leaders.clone();
    if leaders.is_empty() && kind == ExperimentKind::Herd {
        leaders.push(0);
    }
    if let Some(&l) = leaders.iter().find(|&&l| l >= spec.model.count) {
        return Err(spec_err(format!("leader index {l} out of range")));
    }
    // Range violations surface as (F_A1) in the validation report.
    Ok(Some(
        FrameworkParams::new(beta, f.gamma0, leaders.clone())
            .unwrap_or_else(|_| FrameworkParams::unchecked(beta, f.gamma0, leaders)),
    ))
}

/// `max‖Ω‖ / (sin γ · Ĩ(γ))`, the fixed-point solver's coupling bound.
pub fn kappa_fixed_point(fw: &FrameworkParams, influence: &InfluenceFunction, max_omega: f64) -> f64 {
    let i_gamma = influence.eval(fw.gamma);
    if i_gamma > 0.0 {
        max_omega / (fw.gamma.sin() * i_gamma)
    } else {
        f64::INFINITY
    }
}

fn resolve_kappa(
    spec: &ExperimentSpec,
    kind: ExperimentKind,
    fw: Option<&FrameworkParams>,
    influence: &InfluenceFunction,
    max_omega: f64,
) -> Result<f64> {
    let m = &spec.model;
    match (m.kappa, m.kappa_factor) {
        (Some(k), None) => Ok(k),
        (None, Some(factor)) => {
            let fw = fw.ok_or_else(|| spec_err("kappa_factor needs a [framework] section"))?;
            let base = match kind {
                ExperimentKind::Herd => kappa_c(fw, influence, max_omega, m.count, fw.n0.min(m.count)),
                ExperimentKind::Fixedpoint => Ok(kappa_fixed_point(fw, influence, max_omega)),
                _ => kappa_trapping(fw, influence, max_omega),
            }
            .unwrap_or(f64::INFINITY);
            if !base.is_finite() {
                let params = check_params("F_A1", fw, influence);
                let reason = if params.ok {
                    "the influence vanishes at gamma".to_string()
                } else {
                    params.detail
                };
                return Err(spec_err(format!("kappa_factor has no finite threshold: {reason}")));
            }
            Ok(factor * base)
        }
        _ => Err(spec_err("set exactly one of model.kappa or model.kappa_factor")),
    }
}

/// Model, framework and the per-seed initial ensembles of a deck.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub kind: ExperimentKind,
    pub cfg: ModelConfig,
    pub framework: Option<FrameworkParams>,
    pub initial: Vec<(u64, EnsembleState)>,
}

pub fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    let kind = spec.kind()?;
    let m = &spec.model;
    if m.dim < 2 || m.count == 0 {
        return Err(spec_err("need dim ≥ 2 and count ≥ 1"));
    }
    if spec.seeds.is_empty() {
        return Err(spec_err("seeds must not be empty"));
    }
    if kind == ExperimentKind::Reduce2d && m.dim != 2 {
        return Err(spec_err("reduce2d needs dim = 2"));
    }
    let influence = build_influence(spec)?;
    let frequencies = build_frequencies(spec)?;
    let attraction = build_attraction(spec)?;
    let fw = build_framework(spec, kind, &influence)?;
    let max_omega = frequencies.iter().map(Skew::norm).fold(0.0, f64::max);
    let kappa = resolve_kappa(spec, kind, fw.as_ref(), &influence, max_omega)?;
    let cfg = ModelConfig::new(kappa, frequencies, influence, attraction).map_err(spec_err)?;
    let initial = spec
        .seeds
        .iter()
        .map(|&seed| Ok((seed, initial_state(spec, &cfg, fw.as_ref(), seed)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Prepared {
        kind,
        cfg,
        framework: fw,
        initial,
    })
}

fn initial_state(
    spec: &ExperimentSpec,
    cfg: &ModelConfig,
    fw: Option<&FrameworkParams>,
    seed: u64,
) -> Result<EnsembleState> {
    let ini = &spec.initial;
    let (n, count) = (cfg.dim(), cfg.count());
    let q = cfg.attraction.matrix();
    let around_q = |r: Rotation| Rotation::new(r.matrix() * q).map_err(spec_err);
    let default_radius = || {
        ini.radius
            .or(fw.map(|f| f.gamma0))
            .ok_or_else(|| spec_err("ball initial data needs initial.radius or a framework"))
    };
    let rotations = match ini.mode {
        InitialMode::Ball => {
            let radius = default_radius()?;
            (0..count)
                .map(|i| {
                    let mut rng = oscillator_rng(seed, STREAM_INITIAL, i);
                    around_q(sample_ball(n, radius, &mut rng).map_err(spec_err)?)
                })
                .collect::<Result<Vec<_>>>()?
        }
        InitialMode::Haar => (0..count)
            .map(|i| {
                let mut rng = oscillator_rng(seed, STREAM_INITIAL, i);
                sample_haar(n, &mut rng).map_err(spec_err)
            })
            .collect::<Result<Vec<_>>>()?,
        InitialMode::Herd => {
            let fw = fw.ok_or_else(|| spec_err("herd initial data needs a framework"))?;
            let leader_radius = default_radius()?;
            (0..count)
                .map(|i| {
                    let radius = if fw.leaders.contains(&i) {
                        leader_radius
                    } else {
                        let g = big_gamma(
                            fw,
                            &cfg.influence,
                            cfg.frequencies[i].norm(),
                            cfg.kappa,
                            count,
                        )
                        .map_err(spec_err)?;
                        ini.follower_factor * g
                    };
                    let mut rng = oscillator_rng(seed, STREAM_INITIAL, i);
                    around_q(sample_ball(n, radius, &mut rng).map_err(spec_err)?)
                })
                .collect::<Result<Vec<_>>>()?
        }
        InitialMode::Explicit => {
            let mats = match (&ini.matrices, &ini.file) {
                (Some(rows), None) => rows
                    .iter()
                    .map(|r| matrix_from_rows(r, n))
                    .collect::<Result<Vec<_>>>()?,
                (None, Some(path)) => matrices_from_file(spec, path)?,
                _ => {
                    return Err(spec_err(
                        "explicit initial data needs exactly one of `matrices` or `file`",
                    ))
                }
            };
            broadcast(mats, count, "initial data")?
                .into_iter()
                .map(|m| Rotation::new(m).map_err(spec_err))
                .collect::<Result<Vec<_>>>()?
        }
        InitialMode::Phases => {
            if n != 2 {
                return Err(spec_err("phase initial data needs dim = 2"));
            }
            let phases = ini
                .phases
                .clone()
                .ok_or_else(|| spec_err("phase initial data needs `phases`"))?;
            broadcast(phases, count, "phases")?
                .into_iter()
                .map(|p| around_q(Rotation::planar(p)))
                .collect::<Result<Vec<_>>>()?
        }
    };
    Ok(EnsembleState::new(rotations))
}

/// One itemized hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub id: String,
    pub ok: bool,
    pub detail: String,
    pub values: BTreeMap<String, Value>,
}

impl HypothesisCheck {
    fn new(id: &str, ok: bool, detail: String) -> Self {
        HypothesisCheck {
            id: id.into(),
            ok,
            detail,
            values: BTreeMap::new(),
        }
    }

    fn value(mut self, key: &str, v: impl Serialize) -> Self {
        self.values
            .insert(key.into(), serde_json::to_value(v).expect("value serializes"));
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub kind: ExperimentKind,
    pub checks: Vec<HypothesisCheck>,
    pub thresholds: Option<Value>,
    pub override_hypotheses: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.ok)
    }

    pub fn violations(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.ok)
            .map(|c| c.id.as_str())
            .collect()
    }

    /// Whether the run may go ahead.
    pub fn proceed(&self) -> bool {
        self.passed() || self.override_hypotheses
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "kind": self.kind,
            "passed": self.passed(),
            "violations": self.violations(),
            "override_hypotheses": self.override_hypotheses,
            "checks": self.checks,
            "thresholds": self.thresholds,
        })
    }
}

/// Parses, prepares and validates a deck.
pub fn validate_framework(spec: &ExperimentSpec) -> Result<ValidationReport> {
    let prepared = prepare(spec)?;
    Ok(validate_prepared(spec, &prepared))
}

fn check_params(id: &str, fw: &FrameworkParams, influence: &InfluenceFunction) -> HypothesisCheck {
    let upper = 2.0 * (fw.beta / 2.0).sin();
    let mut problems = Vec::new();
    if !(fw.beta > 0.0 && fw.beta < std::f64::consts::FRAC_PI_2) {
        problems.push(format!("beta = {:?} not in (0, π/2)", fw.beta));
    }
    if !(fw.gamma0 > 0.0 && fw.gamma0 < upper) {
        problems.push(format!(
            "gamma0 = {:?} not in (0, 2 sin(beta/2) = {upper:?})",
            fw.gamma0
        ));
    }
    if !(fw.gamma < fw.beta) {
        problems.push(format!("gamma = {:?} not below beta", fw.gamma));
    }
    if fw.beta != influence.beta() {
        problems.push(format!(
            "beta = {:?} differs from the influence support bound {:?}",
            fw.beta,
            influence.beta()
        ));
    }
    let detail = if problems.is_empty() {
        "0 < beta < π/2, 0 < gamma0 < 2 sin(beta/2), gamma < beta".to_string()
    } else {
        format!("({id}) violated: {}", problems.join("; "))
    };
    HypothesisCheck::new(id, problems.is_empty(), detail)
        .value("beta", fw.beta)
        .value("gamma0", fw.gamma0)
        .value("gamma", fw.gamma)
        .value("gamma0_upper", upper)
}

fn check_coupling(id: &str, kappa: f64, threshold: f64, name: &str) -> HypothesisCheck {
    let ok = kappa > threshold;
    let detail = if ok {
        format!("kappa = {kappa:?} > {name} = {threshold:?}")
    } else {
        format!("({id}) violated: kappa = {kappa:?} ≤ {name} = {threshold:?}")
    };
    HypothesisCheck::new(id, ok, detail)
        .value("kappa", kappa)
        .value(name, threshold)
}

fn check_ball(
    id: &str,
    prepared: &Prepared,
    indices: &[usize],
    radius: impl Fn(usize) -> Option<f64>,
    what: &str,
) -> HypothesisCheck {
    let q = &prepared.cfg.attraction;
    let mut offenders = Vec::new();
    let mut worst: f64 = 0.0;
    for (seed, state) in &prepared.initial {
        for &i in indices {
            let d = geodesic_distance(q, &state.rotations[i]).unwrap_or(f64::INFINITY);
            worst = worst.max(d);
            if !matches!(radius(i), Some(r) if d < r) {
                offenders.push(json!({"seed": seed, "i": i, "dist": d, "radius": radius(i)}));
            }
        }
    }
    let ok = offenders.is_empty();
    let detail = if ok {
        format!("all initial data in {what}")
    } else {
        format!("({id}) violated: {} initial rotations outside {what}", offenders.len())
    };
    HypothesisCheck::new(id, ok, detail)
        .value("max_distance", worst)
        .value("offenders", offenders)
}

fn validate_prepared(spec: &ExperimentSpec, p: &Prepared) -> ValidationReport {
    let cfg = &p.cfg;
    let kind = p.kind;
    let mut checks = Vec::new();
    let mut thresholds = None;
    let all: Vec<usize> = (0..cfg.count()).collect();
    let max_omega = cfg.max_frequency_norm();

    if let Some(fw) = &p.framework {
        let f = &cfg.influence;
        let i_gamma = f.eval(fw.gamma);
        let k_trap = if i_gamma > 0.0 {
            max_omega / (i_gamma * restoring_factor(fw.gamma))
        } else {
            f64::INFINITY
        };
        thresholds = threshold_report(fw, cfg)
            .ok()
            .map(|t| serde_json::to_value(t).expect("report serializes"));
        let l1 = lambda1(fw, f, cfg.kappa);
        let gamma0 = fw.gamma0;
        let in_ball = |id: &str, idx: &[usize]| {
            check_ball(id, p, idx, |_| Some(gamma0), "B_{gamma0}")
        };
        let lambda_check = || {
            HypothesisCheck::new(
                "lambda1-positive",
                l1 > 0.0,
                if l1 > 0.0 {
                    format!("lambda1 = {l1:?} > 0")
                } else {
                    format!("(lambda1-positive) violated: lambda1 = {l1:?} ≤ 0")
                },
            )
            .value("lambda1", l1)
            .value("lip_star", f.lip_star_bound())
            .value("influence_at_gamma", i_gamma)
        };
        match kind {
            ExperimentKind::Sync => {
                checks.push(check_params("F_B1", fw, f));
                let homogeneous = cfg.is_homogeneous();
                checks.push(HypothesisCheck::new(
                    "F_B-homogeneous",
                    homogeneous,
                    if homogeneous {
                        "all natural frequencies equal".into()
                    } else {
                        "(F_B-homogeneous) violated: natural frequencies differ".into()
                    },
                ));
                checks.push(check_coupling("F_B2", cfg.kappa, k_trap, "kappa_trap"));
                checks.push(in_ball("F_B3", &all));
            }
            ExperimentKind::Herd => {
                checks.push(check_params("F_A1", fw, f));
                checks.push(in_ball("leaders-in-ball", &fw.leaders));
                let n = cfg.count();
                let kc = kappa_c(fw, f, max_omega, n, fw.n0.min(n)).unwrap_or(f64::INFINITY);
                checks.push(
                    check_coupling("kappa-c", cfg.kappa, kc, "kappa_c").value("n0", fw.n0),
                );
                let radius = |i: usize| {
                    big_gamma(fw, f, cfg.frequencies[i].norm(), cfg.kappa, n).ok()
                };
                checks.push(check_ball("gamma-balls", p, &all, radius, "B_{Gamma_i}"));
            }
            ExperimentKind::Fixedpoint => {
                checks.push(check_params("F_A1", fw, f));
                if spec.fixedpoint.bracket.is_none() {
                    checks.push(check_coupling(
                        "fixed-point-coupling",
                        cfg.kappa,
                        kappa_fixed_point(fw, f, max_omega),
                        "kappa_fixed_point",
                    ));
                }
            }
            ExperimentKind::Simulate | ExperimentKind::Reduce2d => {}
            _ => {
                checks.push(check_params("F_A1", fw, f));
                checks.push(check_coupling("F_A2", cfg.kappa, k_trap, "kappa_trap"));
                checks.push(in_ball("F_A3", &all));
                if matches!(kind, ExperimentKind::Stability | ExperimentKind::Equilibrium) {
                    checks.push(lambda_check());
                }
            }
        }
    }
    if kind == ExperimentKind::Reduce2d {
        let q_ok = distance_from_identity(&cfg.attraction).is_ok_and(|d| d == 0.0);
        checks.push(HypothesisCheck::new(
            "planar",
            cfg.dim() == 2 && q_ok,
            "dim = 2 with Q = I".into(),
        ));
    }
    ValidationReport {
        kind,
        checks,
        thresholds,
        override_hypotheses: spec.override_hypotheses,
    }
}
