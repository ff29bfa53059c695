//! Closed-form thresholds, rate constants and trajectory certificates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dynamics::{ModelConfig, TrajectoryRecord};
use crate::geometry::{norm, Rotation};
use crate::influence::InfluenceFunction;

/// Slack absorbed by every certificate for integrator error.
pub const EPS_CERT: f64 = 1e-6;
/// Relative tolerance on fitted exponential rates.
pub const TOL_RATE: f64 = 0.05;
/// ℓ¹ distances below this are treated as numerically zero.
pub const UNDERFLOW: f64 = 1e-12;
/// Fraction of the horizon discarded before rate fits.
pub const BURN_IN: f64 = 0.1;
/// Fraction of samples inspected by the herding tail check.
pub const HERD_TAIL: f64 = 0.2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("gamma0 = {0} outside the admissible range")]
    Domain(f64),
    #[error("(F_A1) violated: {0}")]
    Framework(String),
    #[error("infeasible framework: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

/// `γ = 2 arcsin(γ0 / 2)`.
pub fn gamma_of(gamma0: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&gamma0) {
        return Err(AnalysisError::Domain(gamma0));
    }
    Ok(2.0 * (gamma0 / 2.0).asin())
}

/// `sin(2 sin(γ/2))`, the restoring factor shared by every coupling threshold.
pub fn restoring_factor(gamma: f64) -> f64 {
    (2.0 * (gamma / 2.0).sin()).sin()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameworkParams {
    pub beta: f64,
    pub gamma0: f64,
    pub gamma: f64,
    /// Number of leaders initially inside `B_{γ0}`.
    pub n0: usize,
    /// Leader indices (the set `K`).
    pub leaders: Vec<usize>,
}

impl FrameworkParams {
    /// Checks `0 < β < π/2`, `0 < γ0 < 2 sin(β/2)` and `γ < β`.
    pub fn new(beta: f64, gamma0: f64, leaders: Vec<usize>) -> Result<Self> {
        if !(beta > 0.0 && beta < std::f64::consts::FRAC_PI_2) {
            return Err(AnalysisError::Framework(format!(
                "beta = {beta} must lie in (0, π/2)"
            )));
        }
        let upper = 2.0 * (beta / 2.0).sin();
        if !(gamma0 > 0.0 && gamma0 < upper) {
            return Err(AnalysisError::Framework(format!(
                "gamma0 = {gamma0} must lie in (0, 2 sin(beta/2) = {upper})"
            )));
        }
        let gamma = gamma_of(gamma0)?;
        if !(gamma < beta) {
            return Err(AnalysisError::Framework(format!(
                "gamma = {gamma} must be below beta = {beta}"
            )));
        }
        let n0 = leaders.len().max(1);
        Ok(FrameworkParams {
            beta,
            gamma0,
            gamma,
            n0,
            leaders,
        })
    }

    /// Same fields without the range checks, for negative controls.
    pub fn unchecked(beta: f64, gamma0: f64, leaders: Vec<usize>) -> Self {
        let gamma = 2.0 * (gamma0 / 2.0).clamp(-1.0, 1.0).asin();
        let n0 = leaders.len().max(1);
        FrameworkParams {
            beta,
            gamma0,
            gamma,
            n0,
            leaders,
        }
    }

    pub fn to_json_value(&self) -> Value {
        json!({
            "beta": self.beta,
            "gamma0": self.gamma0,
            "gamma": self.gamma,
            "n0": self.n0,
            "leaders": self.leaders,
        })
    }
}

fn influence_at_gamma(fw: &FrameworkParams, influence: &InfluenceFunction) -> Result<f64> {
    let value = influence.eval(fw.gamma);
    if value > 0.0 {
        Ok(value)
    } else {
        Err(AnalysisError::Infeasible(format!(
            "influence vanishes at gamma = {}",
            fw.gamma
        )))
    }
}

/// `max_j ‖Ω_j‖ / (Ĩ(γ) sin(2 sin(γ/2)))`.
pub fn kappa_trapping(
    fw: &FrameworkParams,
    influence: &InfluenceFunction,
    max_omega: f64,
) -> Result<f64> {
    let i_gamma = influence_at_gamma(fw, influence)?;
    Ok(max_omega / (i_gamma * restoring_factor(fw.gamma)))
}

/// `(N / N0) · κ_trap`; `N0 = 1` gives the single-leader threshold.
pub fn kappa_c(
    fw: &FrameworkParams,
    influence: &InfluenceFunction,
    max_omega: f64,
    n: usize,
    n0: usize,
) -> Result<f64> {
    if n0 == 0 || n0 > n {
        return Err(AnalysisError::Infeasible(format!(
            "need 1 ≤ N0 ≤ N, got N0 = {n0}, N = {n}"
        )));
    }
    Ok(n as f64 / n0 as f64 * kappa_trapping(fw, influence, max_omega)?)
}

fn check_ratio(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(AnalysisError::Infeasible(format!(
            "ratio N‖Ω_i‖ / (N0 κ Ĩ(γ)) = {x} exceeds 1"
        )))
    }
}

/// `sqrt(2 + 2 sqrt(1 − x²))`.
pub fn big_gamma_of_ratio(x: f64) -> Result<f64> {
    check_ratio(x)?;
    Ok((2.0 + 2.0 * (1.0 - x * x).sqrt()).sqrt())
}

/// `2 cos(arcsin(x) / 2)`, the other side of the half-angle identity.
pub fn half_angle_form(x: f64) -> f64 {
    2.0 * (x.asin() / 2.0).cos()
}

/// `2 arcsin(arcsin(x) / 2)`.
pub fn asymptotic_radius_of_ratio(x: f64) -> Result<f64> {
    check_ratio(x)?;
    Ok(2.0 * (x.asin() / 2.0).asin())
}

/// `x = N ‖Ω_i‖ / (N0 κ Ĩ(γ))`.
pub fn herding_ratio(
    fw: &FrameworkParams,
    influence: &InfluenceFunction,
    omega_norm: f64,
    kappa: f64,
    n: usize,
) -> Result<f64> {
    let i_gamma = influence_at_gamma(fw, influence)?;
    Ok(n as f64 * omega_norm / (fw.n0 as f64 * kappa * i_gamma))
}

/// Initial-data radius `Γ_i(γ)` for oscillator `i`.
pub fn big_gamma(
    fw: &FrameworkParams,
    influence: &InfluenceFunction,
    omega_norm: f64,
    kappa: f64,
    n: usize,
) -> Result<f64> {
    big_gamma_of_ratio(herding_ratio(fw, influence, omega_norm, kappa, n)?)
}

/// Eventual confinement radius for oscillator `i`.
pub fn asymptotic_radius(
    fw: &FrameworkParams,
    influence: &InfluenceFunction,
    omega_norm: f64,
    kappa: f64,
    n: usize,
) -> Result<f64> {
    asymptotic_radius_of_ratio(herding_ratio(fw, influence, omega_norm, kappa, n)?)
}

/// `λ1 = κ(cos γ · Ĩ(γ) − γ · Lip*I)`.
pub fn lambda1(fw: &FrameworkParams, influence: &InfluenceFunction, kappa: f64) -> f64 {
    kappa
        * (fw.gamma.cos() * influence.eval(fw.gamma) - fw.gamma * influence.lip_star_bound())
}

/// `λ2 = κ cos γ · Ĩ(γ)`.
pub fn lambda2(fw: &FrameworkParams, influence: &InfluenceFunction, kappa: f64) -> f64 {
    kappa * fw.gamma.cos() * influence.eval(fw.gamma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub kappa_trap: f64,
    pub kappa_c: f64,
    pub kappa_c_single: f64,
    /// `Γ_i(γ)`; `None` where the ratio exceeds 1.
    pub big_gamma: Vec<Option<f64>>,
    pub asymptotic_radius: Vec<Option<f64>>,
}

pub fn threshold_report(fw: &FrameworkParams, cfg: &ModelConfig) -> Result<ThresholdReport> {
    let f = &cfg.influence;
    let n = cfg.count();
    let max_omega = cfg.max_frequency_norm();
    let per = |map: fn(f64) -> Result<f64>| -> Result<Vec<Option<f64>>> {
        cfg.frequencies
            .iter()
            .map(|w| Ok(map(herding_ratio(fw, f, w.norm(), cfg.kappa, n)?).ok()))
            .collect()
    };
    Ok(ThresholdReport {
        kappa_trap: kappa_trapping(fw, f, max_omega)?,
        kappa_c: kappa_c(fw, f, max_omega, n, fw.n0.min(n))?,
        kappa_c_single: kappa_c(fw, f, max_omega, n, 1)?,
        big_gamma: per(big_gamma_of_ratio)?,
        asymptotic_radius: per(asymptotic_radius_of_ratio)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Outcome::Pass
    }
}

/// Serializes as `{name, hypotheses, outcome, witnesses}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub name: String,
    pub hypotheses: BTreeMap<String, Value>,
    pub outcome: Outcome,
    pub witnesses: BTreeMap<String, Value>,
}

impl Certificate {
    pub fn new(name: &str, outcome: Outcome) -> Self {
        Certificate {
            name: name.to_string(),
            hypotheses: BTreeMap::new(),
            outcome,
            witnesses: BTreeMap::new(),
        }
    }

    pub fn hypothesis(mut self, key: &str, value: impl Serialize) -> Self {
        self.hypotheses.insert(key.to_string(), json!(value));
        self
    }

    pub fn witness(mut self, key: &str, value: impl Serialize) -> Self {
        self.witnesses.insert(key.to_string(), json!(value));
        self
    }

    pub fn passed(&self) -> bool {
        self.outcome.passed()
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

/// PASS iff every recorded distance stays within `γ + ε_cert`.
pub fn certify_trapping(traj: &TrajectoryRecord, fw: &FrameworkParams) -> Certificate {
    let bound = fw.gamma + EPS_CERT;
    let first_violation = traj.distances.iter().enumerate().find_map(|(k, row)| {
        row.iter()
            .position(|&d| !(d <= bound))
            .map(|i| (traj.times[k], i, row[i]))
    });
    let mut cert = Certificate::new("trapping", Outcome::from_bool(first_violation.is_none()))
        .hypothesis("framework", fw.to_json_value())
        .hypothesis("eps_cert", EPS_CERT)
        .witness("bound", bound)
        .witness("max_distance", traj.max_distance())
        .witness("samples", traj.len());
    if let Some((t, i, d)) = first_violation {
        cert = cert.witness("first_violation", json!({"t": t, "i": i, "dist": d}));
    }
    cert
}

/// Leaders stay in `B̄_γ` throughout; every oscillator's distance over the
/// last 20% of samples sits below its asymptotic radius plus `ε_cert`.
pub fn certify_herding(
    traj: &TrajectoryRecord,
    fw: &FrameworkParams,
    cfg: &ModelConfig,
) -> Certificate {
    let leader_bound = fw.gamma + EPS_CERT;
    let mut leader_violation = None;
    for (k, row) in traj.distances.iter().enumerate() {
        if let Some(&l) = fw.leaders.iter().find(|&&l| !(row[l] <= leader_bound)) {
            leader_violation = Some(json!({"t": traj.times[k], "i": l, "dist": row[l]}));
            break;
        }
    }

    let n = cfg.count();
    let tail_start = ((1.0 - HERD_TAIL) * traj.len() as f64).floor() as usize;
    let mut radii = Vec::with_capacity(n);
    let mut tail_max = Vec::with_capacity(n);
    let mut tail_ok = true;
    for (i, w) in cfg.frequencies.iter().enumerate() {
        let radius = asymptotic_radius(fw, &cfg.influence, w.norm(), cfg.kappa, n).ok();
        let worst = traj.distances[tail_start..]
            .iter()
            .map(|row| row[i])
            .fold(0.0, f64::max);
        tail_ok &= matches!(radius, Some(r) if worst <= r + EPS_CERT);
        radii.push(radius);
        tail_max.push(worst);
    }

    let kc = kappa_c(
        fw,
        &cfg.influence,
        cfg.max_frequency_norm(),
        n,
        fw.n0.min(n),
    )
    .ok();
    let mut cert = Certificate::new(
        "herding",
        Outcome::from_bool(leader_violation.is_none() && tail_ok),
    )
    .hypothesis("framework", fw.to_json_value())
    .hypothesis("kappa", cfg.kappa)
    .hypothesis("kappa_c", kc)
    .hypothesis("tail_fraction", HERD_TAIL)
    .hypothesis("eps_cert", EPS_CERT)
    .witness("asymptotic_radius", &radii)
    .witness("tail_max_distance", &tail_max);
    if let Some(v) = leader_violation {
        cert = cert.witness("leader_violation", v);
    }
    cert
}

/// Least-squares line through `(t, ln v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
    pub samples: usize,
    pub t_start: f64,
    pub t_end: f64,
}

pub fn fit_log_slope(times: &[f64], values: &[f64]) -> Option<LogLinearFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&t, &v)| (t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mt;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / m)
        .sqrt();
    Some(LogLinearFit {
        slope,
        intercept,
        residual,
        samples: pts.len(),
        t_start: pts[0].0,
        t_end: pts[pts.len() - 1].0,
    })
}

/// Outcome of checking `v(t) ≤ e^{−λ(t − t0)} v(t0) (1 + ε_cert)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// Largest `v(t) / bound(t)` over the checked samples.
    pub worst_ratio: f64,
    pub samples_checked: usize,
    pub first_violation: Option<(f64, f64, f64)>,
}

/// Samples after `v` first drops below [`UNDERFLOW`] are skipped.
pub fn exponential_envelope(times: &[f64], values: &[f64], rate: f64) -> EnvelopeCheck {
    let (t0, v0) = (times[0], values[0]);
    let mut check = EnvelopeCheck {
        holds: true,
        worst_ratio: 0.0,
        samples_checked: 0,
        first_violation: None,
    };
    for (&t, &v) in times.iter().zip(values) {
        if v < UNDERFLOW {
            break;
        }
        let bound = (-rate * (t - t0)).exp() * v0 * (1.0 + EPS_CERT);
        check.samples_checked += 1;
        check.worst_ratio = check.worst_ratio.max(v / bound);
        if !(v <= bound) && check.holds {
            check.holds = false;
            check.first_violation = Some((t, v, bound));
        }
    }
    check
}

/// Analytic constants next to the measured decay of a distance series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Rate the measurement is held against (λ1 for ℓ¹ stability, λ2 for sync).
    pub target: f64,
    pub fit: Option<LogLinearFit>,
    pub envelope: EnvelopeCheck,
    /// Initial distance already below the underflow floor.
    pub degenerate: bool,
    pub slope_ok: bool,
}

impl RateReport {
    pub fn passed(&self) -> bool {
        self.degenerate || (self.envelope.holds && self.slope_ok)
    }

    pub fn measured_decay(&self) -> Option<f64> {
        self.fit.map(|f| -f.slope)
    }
}

/// Fits the decay of `values` after a 10% burn-in and before underflow, and
/// checks the pointwise envelope at `target`.
pub fn measure_rate(times: &[f64], values: &[f64], target: f64, l1: f64, l2: f64) -> RateReport {
    let degenerate = values.first().is_none_or(|&v| v < UNDERFLOW);
    let envelope = if degenerate {
        EnvelopeCheck {
            holds: true,
            worst_ratio: 0.0,
            samples_checked: 0,
            first_violation: None,
        }
    } else {
        exponential_envelope(times, values, target)
    };
    let horizon = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    let burn = times.first().copied().unwrap_or(0.0) + BURN_IN * horizon;
    let cut = values.iter().position(|&v| v < UNDERFLOW).unwrap_or(values.len());
    let (wt, wv): (Vec<f64>, Vec<f64>) = times[..cut]
        .iter()
        .zip(&values[..cut])
        .filter(|(&t, _)| t >= burn)
        .map(|(&t, &v)| (t, v))
        .unzip();
    let fit = if degenerate { None } else { fit_log_slope(&wt, &wv) };
    let slope_ok = match fit {
        Some(f) => f.slope <= -target * (1.0 - TOL_RATE),
        None => degenerate,
    };
    RateReport {
        lambda1: l1,
        lambda2: l2,
        target,
        fit,
        envelope,
        degenerate,
        slope_ok,
    }
}

/// ℓ¹ stability between two trajectories of the same model.
pub fn measure_l1_rate(
    times: &[f64],
    l1_distances: &[f64],
    fw: &FrameworkParams,
    cfg: &ModelConfig,
) -> RateReport {
    let l1 = lambda1(fw, &cfg.influence, cfg.kappa);
    let l2 = lambda2(fw, &cfg.influence, cfg.kappa);
    measure_rate(times, l1_distances, l1, l1, l2)
}

/// `max_{i<j} ‖R_i − R_j‖`.
pub fn max_pairwise_distance(rotations: &[Rotation]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..rotations.len() {
        for j in (i + 1)..rotations.len() {
            worst = worst.max(norm(&(rotations[i].matrix() - rotations[j].matrix())));
        }
    }
    worst
}

/// Pairwise synchronization at rate `λ2` from recorded states.
pub fn measure_sync_rate(
    traj: &TrajectoryRecord,
    fw: &FrameworkParams,
    cfg: &ModelConfig,
) -> (Vec<f64>, Vec<f64>, RateReport) {
    let times: Vec<f64> = traj.states.iter().map(|(_, s)| s.t).collect();
    let pairwise: Vec<f64> = traj
        .states
        .iter()
        .map(|(_, s)| max_pairwise_distance(&s.rotations))
        .collect();
    let l1 = lambda1(fw, &cfg.influence, cfg.kappa);
    let l2 = lambda2(fw, &cfg.influence, cfg.kappa);
    let report = measure_rate(&times, &pairwise, l2, l1, l2);
    (times, pairwise, report)
}

/// Per-pair version of the synchronization envelope:
/// `‖R_i(t) − R_j(t)‖ ≤ e^{−λ t} ‖R_i(0) − R_j(0)‖ (1 + ε_cert)` for all pairs.
pub fn pairwise_envelope(traj: &TrajectoryRecord, rate: f64) -> EnvelopeCheck {
    let states: Vec<_> = traj.states.iter().map(|(_, s)| s).collect();
    let times: Vec<f64> = states.iter().map(|s| s.t).collect();
    let n = states.first().map_or(0, |s| s.rotations.len());
    let mut merged = EnvelopeCheck {
        holds: true,
        worst_ratio: 0.0,
        samples_checked: 0,
        first_violation: None,
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let series: Vec<f64> = states
                .iter()
                .map(|s| norm(&(s.rotations[i].matrix() - s.rotations[j].matrix())))
                .collect();
            if series[0] < UNDERFLOW {
                continue;
            }
            let check = exponential_envelope(&times, &series, rate);
            merged.samples_checked += check.samples_checked;
            merged.worst_ratio = merged.worst_ratio.max(check.worst_ratio);
            if !check.holds && merged.holds {
                merged.holds = false;
                merged.first_violation = check.first_violation;
            }
        }
    }
    merged
}

pub fn rate_certificate(name: &str, report: &RateReport, fw: &FrameworkParams, cfg: &ModelConfig) -> Certificate {
    Certificate::new(name, Outcome::from_bool(report.passed()))
        .hypothesis("framework", fw.to_json_value())
        .hypothesis("kappa", cfg.kappa)
        .hypothesis("lip_star", cfg.influence.lip_star_bound())
        .hypothesis("influence_at_gamma", cfg.influence.eval(fw.gamma))
        .hypothesis("eps_cert", EPS_CERT)
        .hypothesis("tol_rate", TOL_RATE)
        .witness("lambda1", report.lambda1)
        .witness("lambda2", report.lambda2)
        .witness("target_rate", report.target)
        .witness("measured_decay", report.measured_decay())
        .witness("fit", report.fit)
        .witness("envelope", &report.envelope)
        .witness("degenerate", report.degenerate)
}

/// `parameter,outcome,measured,bound` rows.
pub fn sweep_csv(rows: &[(f64, Outcome, f64, f64)]) -> String {
    let mut out = String::from("parameter,outcome,measured,bound\n");
    for (p, o, m, b) in rows {
        let label = if o.passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!("{p:?},{label},{m:?},{b:?}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate, EnsembleState, IntegrationSettings};
    use crate::geometry::{random_skew_direction, sample_ball, Skew};
    use crate::influence::make_linear_hat;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::PI;

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_of(0.0).unwrap(), 0.0);
        assert!((gamma_of(1.0).unwrap() - PI / 3.0).abs() < 1e-15);
        for k in 1..200 {
            let g0 = 2.0 * k as f64 / 200.0;
            assert!(gamma_of(g0).unwrap() > g0);
        }
        assert!(gamma_of(-0.1).is_err());
        assert!(gamma_of(2.1).is_err());
    }

    #[test]
    fn framework_validation() {
        assert!(FrameworkParams::new(1.2, 0.5, vec![]).is_ok());
        let limit = 2.0 * (0.6f64).sin();
        assert!(matches!(
            FrameworkParams::new(1.2, limit, vec![]),
            Err(AnalysisError::Framework(_))
        ));
        assert!(FrameworkParams::new(1.6, 0.5, vec![]).is_err());
        assert!(FrameworkParams::new(1.2, 0.0, vec![]).is_err());
        let fw = FrameworkParams::new(1.2, 0.5, vec![0, 3]).unwrap();
        assert_eq!(fw.n0, 2);
    }

    /// Framework with a prescribed γ (inverse of `gamma_of`).
    fn fw_with_gamma(beta: f64, gamma: f64) -> FrameworkParams {
        FrameworkParams::new(beta, 2.0 * (gamma / 2.0).sin(), vec![]).unwrap()
    }

    #[test]
    fn kappa_trapping_values() {
        // Ĩ(0.5) = 0.5 for the hat with β = 1.
        let fw = fw_with_gamma(1.0, 0.5);
        let f = make_linear_hat(1.0).unwrap();
        assert!((f.eval(fw.gamma) - 0.5).abs() < 1e-15);
        let k = kappa_trapping(&fw, &f, 0.5).unwrap();
        assert!((k - 2.105_872_234_635_065).abs() < 1e-12);
        assert_eq!(kappa_trapping(&fw, &f, 0.0).unwrap(), 0.0);
        let steeper = make_linear_hat(0.8).unwrap();
        assert!(kappa_trapping(&fw, &steeper, 0.5).unwrap() > k);
        let dead = fw_with_gamma(1.2, 1.1);
        assert!(matches!(
            kappa_trapping(&dead, &make_linear_hat(1.05).unwrap(), 0.5),
            Err(AnalysisError::Infeasible(_))
        ));
    }

    #[test]
    fn kappa_c_scaling() {
        let fw = fw_with_gamma(1.0, 0.5);
        let f = make_linear_hat(1.0).unwrap();
        let trap = kappa_trapping(&fw, &f, 0.5).unwrap();
        assert_eq!(kappa_c(&fw, &f, 0.5, 7, 7).unwrap(), trap);
        let a = kappa_c(&fw, &f, 0.5, 10, 2).unwrap();
        assert!((a - 5.0 * trap).abs() < 1e-12);
        assert!(kappa_c(&fw, &f, 0.5, 10, 3).unwrap() <= a);
        assert!(kappa_c(&fw, &f, 0.6, 10, 2).unwrap() >= a);
        assert!(kappa_c(&fw, &f, 0.5, 3, 4).is_err());
        assert!(kappa_c(&fw, &f, 0.5, 3, 0).is_err());
    }

    #[test]
    fn big_gamma_values() {
        assert_eq!(big_gamma_of_ratio(0.0).unwrap(), 2.0);
        assert!((big_gamma_of_ratio(1.0).unwrap() - 2f64.sqrt()).abs() <= 1e-15);
        assert!((big_gamma_of_ratio(0.6).unwrap() - 1.897_366_596_101_027_6).abs() < 1e-15);
        assert!(big_gamma_of_ratio(1.01).is_err());
        for k in 0..=1000 {
            let x = k as f64 / 1000.0;
            assert!((half_angle_form(x) - big_gamma_of_ratio(x).unwrap()).abs() <= 1e-14);
        }
    }

    #[test]
    fn asymptotic_radius_properties() {
        assert_eq!(asymptotic_radius_of_ratio(0.0).unwrap(), 0.0);
        let mut prev = 0.0;
        for k in 1..=100 {
            let r = asymptotic_radius_of_ratio(k as f64 / 100.0).unwrap();
            assert!(r > prev);
            prev = r;
        }
        // Above κ_c the radius stays strictly inside B_γ.
        let fw = fw_with_gamma(1.2, 0.6);
        let f = make_linear_hat(1.2).unwrap();
        let kc = kappa_c(&fw, &f, 0.4, 5, 1).unwrap();
        for k in 1..=50 {
            let kappa = kc * (1.0 + k as f64 / 10.0);
            let ratio = restoring_factor(fw.gamma) * kc / kappa;
            assert!(asymptotic_radius_of_ratio(ratio).unwrap() < fw.gamma);
            let direct = asymptotic_radius(&fw, &f, 0.4, kappa, 5).unwrap();
            assert!((direct - asymptotic_radius_of_ratio(ratio).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn rates_are_ordered() {
        let fw = fw_with_gamma(1.2, 0.3);
        let f = make_linear_hat(1.2).unwrap();
        assert!(lambda2(&fw, &f, 3.0) >= lambda1(&fw, &f, 3.0));
        assert!(lambda1(&fw, &f, 3.0) > 0.0);
    }

    #[test]
    fn log_fit_recovers_slope() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let fit = fit_log_slope(&times, &values).unwrap();
        assert!((fit.slope + 0.7).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        let report = measure_rate(&times, &values, 0.7, 0.7, 1.0);
        assert!(report.passed());
        let too_slow = measure_rate(&times, &values, 0.8, 0.8, 1.0);
        assert!(!too_slow.envelope.holds && !too_slow.slope_ok);
        let zero = measure_rate(&times, &vec![0.0; 100], 0.7, 0.7, 1.0);
        assert!(zero.degenerate && zero.passed());
    }

    #[test]
    fn underflow_truncates_window() {
        let times: Vec<f64> = (0..200).map(|k| k as f64).collect();
        let values: Vec<f64> = times
            .iter()
            .map(|t| (-0.5 * t).exp().max(1e-16))
            .collect();
        let report = measure_rate(&times, &values, 0.5, 0.5, 0.5);
        assert!(report.passed());
        assert!(report.fit.unwrap().t_end < 60.0);
    }

    fn compliant_run(kappa_factor: f64, seed: u64) -> (TrajectoryRecord, FrameworkParams) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let fw = FrameworkParams::new(1.2, 0.5, vec![]).unwrap();
        let f = make_linear_hat(1.2).unwrap();
        let freqs: Vec<Skew> = (0..4).map(|_| random_skew_direction(3, &mut rng).scaled(0.3)).collect();
        let trap = kappa_trapping(&fw, &f, 0.3).unwrap();
        let cfg = ModelConfig::new(trap * kappa_factor, freqs, f, None).unwrap();
        let start = EnsembleState::new((0..4).map(|_| sample_ball(3, 0.5, &mut rng).unwrap()).collect());
        let settings = IntegrationSettings {
            h: 0.01,
            t_end: 20.0,
            stride: 10,
            state_stride: 0,
            ..Default::default()
        };
        (integrate(&cfg, &start, &settings).unwrap(), fw)
    }

    #[test]
    fn trapping_certificate_outcomes() {
        let (traj, fw) = compliant_run(1.1, 1);
        let cert = certify_trapping(&traj, &fw);
        assert!(cert.passed(), "{}", cert.to_json_string());
        let (weak, fw) = compliant_run(1e-6, 1);
        let cert = certify_trapping(&weak, &fw);
        assert!(!cert.passed());
        assert!(cert.witnesses.contains_key("first_violation"));
        let json: Value = serde_json::from_str(&cert.to_json_string()).unwrap();
        assert_eq!(json["outcome"], "FAIL");
        assert_eq!(json["name"], "trapping");
        assert!(json["hypotheses"]["framework"]["gamma"].is_number());
    }

    #[test]
    fn sweep_csv_layout() {
        let csv = sweep_csv(&[(1.0, Outcome::Pass, 0.5, 0.6), (2.0, Outcome::Fail, 0.7, 0.6)]);
        assert_eq!(
            csv,
            "parameter,outcome,measured,bound\n1.0,PASS,0.5,0.6\n2.0,FAIL,0.7,0.6\n"
        );
    }
}
