//! The Winfree matrix model on SO(n) and its time integrators.
//!
//! `Ṙ_i = A_i R_i` with generator
//! `A_i = Ω_i + (κ⟨I⟩/2)(Q R_iᵀ − R_i Qᵀ)` and `⟨I⟩ = (1/N) Σ_j Ĩ(d(Q, R_j))`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{
    exp_so_series, geodesic_distance, matrix_to_json, GeometryError, Matrix, MatrixJson, Rotation, Skew,
    Tolerances,
};
use crate::influence::InfluenceFunction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("state does not match the configuration: {0}")]
    StateMismatch(String),
    #[error("step size and horizon must be positive and finite (h = {h}, t_end = {t_end})")]
    InvalidSteps { h: f64, t_end: f64 },
    #[error("orthogonality defect {defect:e} at t = {t} exceeds {tol:e}")]
    InvariantViolation { t: f64, defect: f64, tol: f64 },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub kappa: f64,
    pub frequencies: Vec<Skew>,
    pub influence: InfluenceFunction,
    pub attraction: Rotation,
}

impl ModelConfig {
    /// `attraction` defaults to the identity.
    pub fn new(
        kappa: f64,
        frequencies: Vec<Skew>,
        influence: InfluenceFunction,
        attraction: Option<Rotation>,
    ) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(DynamicsError::InvalidConfig(format!(
                "coupling must be positive, got {kappa}"
            )));
        }
        let n = match frequencies.first() {
            Some(w) => w.dim(),
            None => return Err(DynamicsError::InvalidConfig("need N ≥ 1".into())),
        };
        if let Some(w) = frequencies.iter().find(|w| w.dim() != n) {
            return Err(DynamicsError::InvalidConfig(format!(
                "frequency of size {} in a dimension-{n} ensemble",
                w.dim()
            )));
        }
        let attraction = attraction.unwrap_or_else(|| Rotation::identity(n));
        if attraction.dim() != n {
            return Err(DynamicsError::InvalidConfig(format!(
                "attraction point has size {}, expected {n}",
                attraction.dim()
            )));
        }
        Ok(ModelConfig {
            kappa,
            frequencies,
            influence,
            attraction,
        })
    }

    pub fn dim(&self) -> usize {
        self.attraction.dim()
    }

    pub fn count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn max_frequency_norm(&self) -> f64 {
        self.frequencies.iter().map(Skew::norm).fold(0.0, f64::max)
    }

    pub fn is_homogeneous(&self) -> bool {
        let first = self.frequencies[0].matrix();
        self.frequencies.iter().all(|w| w.matrix() == first)
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(
            kappa,
            self.frequencies.clone(),
            self.influence.clone(),
            Some(self.attraction.clone()),
        )
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "kappa": self.kappa,
            "frequencies": self.frequencies.iter().map(|w| MatrixJson::from_matrix(w.matrix())).collect::<Vec<_>>(),
            "influence": self.influence.to_json_value(),
            "attraction": MatrixJson::from_matrix(self.attraction.matrix()),
        })
    }

    /// SHA-256 of the canonical JSON form, lowercase hex.
    pub fn hash(&self) -> String {
        hex_digest(self.to_json_value().to_string().as_bytes())
    }
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleState {
    pub t: f64,
    pub rotations: Vec<Rotation>,
}

impl EnsembleState {
    pub fn new(rotations: Vec<Rotation>) -> Self {
        EnsembleState { t: 0.0, rotations }
    }

    fn check(&self, cfg: &ModelConfig) -> Result<()> {
        if self.rotations.len() != cfg.count() {
            return Err(DynamicsError::StateMismatch(format!(
                "{} rotations for {} oscillators",
                self.rotations.len(),
                cfg.count()
            )));
        }
        if let Some(r) = self.rotations.iter().find(|r| r.dim() != cfg.dim()) {
            return Err(DynamicsError::StateMismatch(format!(
                "rotation of size {} in a dimension-{} model",
                r.dim(),
                cfg.dim()
            )));
        }
        Ok(())
    }

    pub fn max_orthogonality_defect(&self) -> f64 {
        self.rotations
            .iter()
            .map(Rotation::orthogonality_defect)
            .fold(0.0, f64::max)
    }

    /// `Σ_i ‖R_i − S_i‖` in the half-Frobenius norm.
    pub fn l1_distance(&self, other: &EnsembleState) -> f64 {
        l1_distance(&self.rotations, &other.rotations)
    }
}

pub fn l1_distance(a: &[Rotation], b: &[Rotation]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| crate::geometry::norm(&(x.matrix() - y.matrix())))
        .sum()
}

/// `R_i ↦ R_i T`. Trajectories of the model with attraction `Q` map onto
/// trajectories of the model with attraction `QT`.
pub fn translate_right(state: &EnsembleState, t: &Rotation) -> Result<EnsembleState> {
    if let Some(r) = state.rotations.iter().find(|r| r.dim() != t.dim()) {
        return Err(DynamicsError::StateMismatch(format!(
            "cannot translate a size-{} rotation by a size-{} one",
            r.dim(),
            t.dim()
        )));
    }
    Ok(EnsembleState {
        t: state.t,
        rotations: state.rotations.iter().map(|r| r * t).collect(),
    })
}

/// `⟨I⟩ = (1/N) Σ_j Ĩ(d(Q, R_j))`.
pub fn mean_influence(rotations: &[Rotation], cfg: &ModelConfig) -> Result<f64> {
    let mut total = 0.0;
    for r in rotations {
        total += cfg.influence.eval_relative(&cfg.attraction, r).map_err(|e| match e {
            crate::influence::InfluenceError::Geometry(g) => DynamicsError::Geometry(g),
            other => DynamicsError::InvalidConfig(other.to_string()),
        })?;
    }
    Ok(total / rotations.len() as f64)
}

fn generator_matrices(rotations: &[Rotation], cfg: &ModelConfig) -> Result<(Vec<Matrix>, f64)> {
    let mean = mean_influence(rotations, cfg)?;
    let c = 0.5 * cfg.kappa * mean;
    let q = cfg.attraction.matrix();
    let gens = rotations
        .iter()
        .zip(&cfg.frequencies)
        .map(|(r, w)| {
            // M − Mᵀ is exactly antisymmetric in floating point.
            let m = q * r.matrix().transpose();
            w.matrix() + (&m - m.transpose()) * c
        })
        .collect();
    Ok((gens, mean))
}

/// Generators `A_i = Ṙ_i R_iᵀ` and the mean influence they were built from.
pub fn generators(state: &EnsembleState, cfg: &ModelConfig) -> Result<(Vec<Skew>, f64)> {
    state.check(cfg)?;
    let (gens, mean) = generator_matrices(&state.rotations, cfg)?;
    Ok((gens.into_iter().map(Skew::new_unchecked).collect(), mean))
}

/// `Ṙ_i = Ω_i R_i + (κ⟨I⟩/2)(Q R_iᵀ − R_i Qᵀ) R_i`.
pub fn rhs(state: &EnsembleState, cfg: &ModelConfig) -> Result<Vec<Matrix>> {
    state.check(cfg)?;
    let (gens, _) = generator_matrices(&state.rotations, cfg)?;
    Ok(gens
        .iter()
        .zip(&state.rotations)
        .map(|(a, r)| a * r.matrix())
        .collect())
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::InvalidSteps { h, t_end: f64::NAN })
    }
}

fn exp_skew(m: &Matrix) -> Rotation {
    exp_so_series(&Skew::new_unchecked((m - m.transpose()) * 0.5))
}

/// `R_i ← exp(h A_i) R_i`.
pub fn step_lie_euler(state: &EnsembleState, cfg: &ModelConfig, h: f64) -> Result<EnsembleState> {
    check_step(h)?;
    state.check(cfg)?;
    let (gens, _) = generator_matrices(&state.rotations, cfg)?;
    Ok(EnsembleState {
        t: state.t + h,
        rotations: gens
            .iter()
            .zip(&state.rotations)
            .map(|(a, r)| &exp_skew(&(a * h)) * r)
            .collect(),
    })
}

fn commutator(a: &Matrix, b: &Matrix) -> Matrix {
    a * b - b * a
}

/// `dexp⁻¹_Θ(k)` truncated after the second commutator.
fn dexpinv(theta: &Matrix, k: &Matrix) -> Matrix {
    let first = commutator(theta, k);
    let second = commutator(theta, &first);
    k - first * 0.5 + second * (1.0 / 12.0)
}

/// Classical RK4 in exponential coordinates (Munthe-Kaas).
pub fn step_rkmk4(state: &EnsembleState, cfg: &ModelConfig, h: f64) -> Result<EnsembleState> {
    check_step(h)?;
    state.check(cfg)?;
    let y0 = &state.rotations;
    let frames = |thetas: &[Matrix]| -> Vec<Rotation> {
        thetas
            .iter()
            .zip(y0)
            .map(|(t, r)| &exp_skew(t) * r)
            .collect()
    };
    let stage = |thetas: &[Matrix]| -> Result<Vec<Matrix>> {
        let (gens, _) = generator_matrices(&frames(thetas), cfg)?;
        Ok(gens
            .iter()
            .zip(thetas)
            .map(|(a, t)| dexpinv(t, a))
            .collect())
    };

    let (k1, _) = generator_matrices(y0, cfg)?;
    let t2: Vec<Matrix> = k1.iter().map(|k| k * (0.5 * h)).collect();
    let k2 = stage(&t2)?;
    let t3: Vec<Matrix> = k2.iter().map(|k| k * (0.5 * h)).collect();
    let k3 = stage(&t3)?;
    let t4: Vec<Matrix> = k3.iter().map(|k| k * h).collect();
    let k4 = stage(&t4)?;
    let theta: Vec<Matrix> = (0..y0.len())
        .map(|i| (&k1[i] + (&k2[i] + &k3[i]) * 2.0 + &k4[i]) * (h / 6.0))
        .collect();
    Ok(EnsembleState {
        t: state.t + h,
        rotations: frames(&theta),
    })
}

/// Nearest orthogonal matrix `U Vᵀ` from the SVD.
pub fn polar_orthonormalize(m: &Matrix) -> Rotation {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    Rotation::new_unchecked(u * v_t)
}

/// Classical RK4 on the ambient matrices followed by polar re-orthonormalization.
/// Stage influences are evaluated on the polar projections of the stage values.
pub fn step_ambient_rk4(
    state: &EnsembleState,
    cfg: &ModelConfig,
    h: f64,
) -> Result<EnsembleState> {
    check_step(h)?;
    state.check(cfg)?;
    let y0: Vec<Matrix> = state.rotations.iter().map(|r| r.matrix().clone()).collect();
    let field = |ys: &[Matrix]| -> Result<Vec<Matrix>> {
        let projected: Vec<Rotation> = ys.iter().map(polar_orthonormalize).collect();
        let mean = mean_influence(&projected, cfg)?;
        let c = 0.5 * cfg.kappa * mean;
        let q = cfg.attraction.matrix();
        Ok(ys
            .iter()
            .zip(&cfg.frequencies)
            .map(|(y, w)| {
                let m = q * y.transpose();
                (w.matrix() + (&m - m.transpose()) * c) * y
            })
            .collect())
    };
    let shift = |k: &[Matrix], a: f64| -> Vec<Matrix> {
        y0.iter().zip(k).map(|(y, k)| y + k * a).collect()
    };
    let k1 = field(&y0)?;
    let k2 = field(&shift(&k1, 0.5 * h))?;
    let k3 = field(&shift(&k2, 0.5 * h))?;
    let k4 = field(&shift(&k3, h))?;
    let rotations = (0..y0.len())
        .map(|i| {
            let y = &y0[i] + (&k1[i] + (&k2[i] + &k3[i]) * 2.0 + &k4[i]) * (h / 6.0);
            polar_orthonormalize(&y)
        })
        .collect();
    Ok(EnsembleState {
        t: state.t + h,
        rotations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    LieEuler,
    #[default]
    Rkmk4,
    AmbientRk4,
}

impl Stepper {
    pub fn step(self, state: &EnsembleState, cfg: &ModelConfig, h: f64) -> Result<EnsembleState> {
        match self {
            Stepper::LieEuler => step_lie_euler(state, cfg, h),
            Stepper::Rkmk4 => step_rkmk4(state, cfg, h),
            Stepper::AmbientRk4 => step_ambient_rk4(state, cfg, h),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Stepper::LieEuler => "lie-euler",
            Stepper::Rkmk4 => "rkmk4",
            Stepper::AmbientRk4 => "ambient-rk4",
        }
    }
}

impl fmt::Display for Stepper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stepper {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lie-euler" => Ok(Stepper::LieEuler),
            "rkmk4" => Ok(Stepper::Rkmk4),
            "ambient-rk4" => Ok(Stepper::AmbientRk4),
            other => Err(format!(
                "unknown stepper {other:?} (expected lie-euler, rkmk4 or ambient-rk4)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationSettings {
    pub stepper: Stepper,
    pub h: f64,
    pub t_end: f64,
    /// Record observables every `stride` steps (the final step is always recorded).
    pub stride: usize,
    /// Keep raw states every `state_stride` records; 0 keeps none.
    pub state_stride: usize,
}

impl Default for IntegrationSettings {
    fn default() -> Self {
        IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h: 1e-3,
            t_end: 10.0,
            stride: 10,
            state_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    /// `distances[k][i] = d(Q, R_i(t_k))`.
    pub distances: Vec<Vec<f64>>,
    pub trace_gaps: Vec<Vec<f64>>,
    pub mean_influence: Vec<f64>,
    /// Raw states with the sample index they were taken at.
    pub states: Vec<(usize, EnsembleState)>,
    /// Largest `‖RᵀR − I‖_F` seen over every accepted step.
    pub max_orthogonality_defect: f64,
    pub final_state: Option<EnsembleState>,
}

impl TrajectoryRecord {
    fn push(&mut self, state: &EnsembleState, cfg: &ModelConfig, keep_state: bool) -> Result<()> {
        let q = &cfg.attraction;
        let mut dists = Vec::with_capacity(state.rotations.len());
        let mut gaps = Vec::with_capacity(state.rotations.len());
        for r in &state.rotations {
            dists.push(geodesic_distance(q, r)?);
            // Trace gap of the relative rotation QᵀR.
            let rel = q.matrix().transpose() * r.matrix();
            gaps.push(r.dim() as f64 - rel.trace());
        }
        let mean = dists.iter().map(|&d| cfg.influence.eval(d)).sum::<f64>() / dists.len() as f64;
        if keep_state {
            self.states.push((self.times.len(), state.clone()));
        }
        self.times.push(state.t);
        self.distances.push(dists);
        self.trace_gaps.push(gaps);
        self.mean_influence.push(mean);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_distance(&self) -> f64 {
        self.distances
            .iter()
            .flatten()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn final_distances(&self) -> Vec<f64> {
        self.distances.last().cloned().unwrap_or_default()
    }

    /// One row per oscillator per sample: `t,i,dist,trace_gap,mean_influence`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,i,dist,trace_gap,mean_influence\n");
        for k in 0..self.times.len() {
            for i in 0..self.distances[k].len() {
                out.push_str(&format!(
                    "{:?},{},{:?},{:?},{:?}\n",
                    self.times[k], i, self.distances[k][i], self.trace_gaps[k][i], self.mean_influence[k]
                ));
            }
        }
        out
    }

    pub fn summary_json(&self, cfg: &ModelConfig, measured_rates: &[(&str, f64)]) -> Value {
        let rates: serde_json::Map<String, Value> = measured_rates
            .iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect();
        json!({
            "config_hash": cfg.hash(),
            "final_distances": self.final_distances(),
            "measured_rates": rates,
            "max_orthogonality_defect": self.max_orthogonality_defect,
            "samples": self.times.len(),
        })
    }

    /// Final rotations as JSON matrices.
    pub fn final_state_json(&self) -> Option<Vec<String>> {
        self.final_state
            .as_ref()
            .map(|s| s.rotations.iter().map(|r| matrix_to_json(r.matrix())).collect())
    }
}

/// Fixed-step integration from `initial` to `initial.t + t_end`.
///
/// Fails with [`DynamicsError::InvariantViolation`] as soon as an accepted
/// step leaves SO(n) by more than the default orthogonality tolerance.
pub fn integrate(
    cfg: &ModelConfig,
    initial: &EnsembleState,
    settings: &IntegrationSettings,
) -> Result<TrajectoryRecord> {
    let IntegrationSettings {
        stepper,
        h,
        t_end,
        stride,
        state_stride,
    } = *settings;
    if !(h > 0.0 && h.is_finite() && t_end >= 0.0 && t_end.is_finite()) {
        return Err(DynamicsError::InvalidSteps { h, t_end });
    }
    initial.check(cfg)?;
    let stride = stride.max(1);
    let tol = Tolerances::default().orth;
    let t0 = initial.t;
    let steps = (t_end / h - 1e-9).ceil().max(0.0) as usize;

    let mut record = TrajectoryRecord {
        max_orthogonality_defect: initial.max_orthogonality_defect(),
        ..Default::default()
    };
    let keep = |record: &TrajectoryRecord| state_stride > 0 && record.len() % state_stride == 0;
    let k0 = keep(&record);
    record.push(initial, cfg, k0)?;

    let mut state = initial.clone();
    for k in 1..=steps {
        let target = if k == steps { t0 + t_end } else { t0 + k as f64 * h };
        let mut next = stepper.step(&state, cfg, target - state.t)?;
        next.t = target;
        let defect = next.max_orthogonality_defect();
        if !(defect <= tol) {
            return Err(DynamicsError::InvariantViolation {
                t: target,
                defect,
                tol,
            });
        }
        record.max_orthogonality_defect = record.max_orthogonality_defect.max(defect);
        state = next;
        if k % stride == 0 || k == steps {
            let keep_now = keep(&record) || (k == steps && state_stride > 0);
            record.push(&state, cfg, keep_now)?;
        }
    }
    record.final_state = Some(state);
    Ok(record)
}

/// Integrates a pair of initial conditions under the same model and returns
/// both records plus `Σ_i ‖R_i^A − R_i^B‖` at every sample.
pub fn integrate_pair(
    cfg: &ModelConfig,
    a: &EnsembleState,
    b: &EnsembleState,
    settings: &IntegrationSettings,
) -> Result<(TrajectoryRecord, TrajectoryRecord, Vec<f64>)> {
    let settings = IntegrationSettings {
        state_stride: 1,
        ..*settings
    };
    let ra = integrate(cfg, a, &settings)?;
    let rb = integrate(cfg, b, &settings)?;
    let l1 = ra
        .states
        .iter()
        .zip(&rb.states)
        .map(|((_, x), (_, y))| x.l1_distance(y))
        .collect();
    Ok((ra, rb, l1))
}

/// Classical Winfree phase model `θ̇_i = ν_i − κ⟨Ĩ(|θ|)⟩ sin θ_i` integrated
/// with RK4; the n = 2 matrix model reduces to this through `θ ↦ R(θ)`.
/// Returns the phases at every step, starting with `theta0`.
pub fn winfree_phase_reference(
    nu: &[f64],
    kappa: f64,
    influence: &InfluenceFunction,
    theta0: &[f64],
    h: f64,
    t_end: f64,
) -> Vec<Vec<f64>> {
    let field = |theta: &[f64]| -> Vec<f64> {
        let mean = theta
            .iter()
            .map(|&t| influence.eval(wrap_angle(t).abs()))
            .sum::<f64>()
            / theta.len() as f64;
        theta
            .iter()
            .zip(nu)
            .map(|(&t, &w)| w - kappa * mean * t.sin())
            .collect()
    };
    let axpy = |y: &[f64], k: &[f64], a: f64| -> Vec<f64> {
        y.iter().zip(k).map(|(y, k)| y + a * k).collect()
    };
    let steps = (t_end / h - 1e-9).ceil().max(0.0) as usize;
    let mut out = vec![theta0.to_vec()];
    let mut y = theta0.to_vec();
    for k in 1..=steps {
        let dt = if k == steps { t_end - (k - 1) as f64 * h } else { h };
        let k1 = field(&y);
        let k2 = field(&axpy(&y, &k1, 0.5 * dt));
        let k3 = field(&axpy(&y, &k2, 0.5 * dt));
        let k4 = field(&axpy(&y, &k3, dt));
        y = (0..y.len())
            .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]))
            .collect();
        out.push(y.clone());
    }
    out
}

/// Representative of `θ` in `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let s = theta.sin();
    let c = theta.cos();
    s.atan2(c)
}

/// Phase of a planar rotation.
pub fn planar_phase(r: &Rotation) -> f64 {
    let m = r.matrix();
    (m[(1, 0)] - m[(0, 1)]).atan2(m[(0, 0)] + m[(1, 1)])
}
