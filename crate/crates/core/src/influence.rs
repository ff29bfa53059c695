//! Radial influence profiles `Ĩ : [0, ∞) → [0, 1]`.
//!
//! Every profile is nonincreasing, equals 1 at the origin, vanishes from its
//! support endpoint `β < π/2` onward and carries an explicit Lipschitz
//! constant. The influence of a rotation is `I(R) = Ĩ(d(Q, R))`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geometry::{geodesic_distance, GeometryError, Rotation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InfluenceError {
    #[error("support endpoint beta = {0} must lie in (0, π/2)")]
    BetaOutOfRange(f64),
    #[error("continuum construction precondition failed: {0}")]
    ContinuumPrecondition(String),
    #[error("profile increases near r = {r}: {left} -> {right}")]
    NotMonotone { r: f64, left: f64, right: f64 },
    #[error("profile is nonzero ({value}) at r = {r} beyond the support endpoint")]
    SupportViolation { r: f64, value: f64 },
    #[error("profile limit at 0 is {value}, expected 1")]
    LimitAtZero { value: f64 },
    #[error("Lipschitz constant {lip} violated near r = {r} (slope {slope})")]
    LipschitzViolation { r: f64, slope: f64, lip: f64 },
    #[error("invalid tabulated profile: {0}")]
    Tabulated(String),
    #[error("invalid profile JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T> = std::result::Result<T, InfluenceError>;

#[derive(Debug, Clone, PartialEq)]
enum Profile {
    LinearHat,
    CosineTaper,
    Continuum {
        lambda_star: f64,
        kappa: f64,
        x0: f64,
        /// `r(1) = arcsin(λ*/κ)`.
        r_one: f64,
        /// `r(x0) = arcsin(λ*/(κ x0))`.
        r_x0: f64,
    },
    Tabulated {
        points: Vec<(f64, f64)>,
    },
}

/// A validated radial influence profile.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceFunction {
    profile: Profile,
    beta: f64,
    lip: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < FRAC_PI_2 {
        Ok(())
    } else {
        Err(InfluenceError::BetaOutOfRange(beta))
    }
}

/// `Ĩ(r) = max(0, 1 − r/β)`, Lipschitz constant `1/β`.
pub fn make_linear_hat(beta: f64) -> Result<InfluenceFunction> {
    check_beta(beta)?;
    InfluenceFunction {
        profile: Profile::LinearHat,
        beta,
        lip: 1.0 / beta,
    }
    .validated()
}

/// `Ĩ(r) = cos²(πr / 2β)` on `[0, β]`, Lipschitz constant `π / 2β`.
pub fn make_cosine_taper(beta: f64) -> Result<InfluenceFunction> {
    check_beta(beta)?;
    InfluenceFunction {
        profile: Profile::CosineTaper,
        beta,
        lip: PI / (2.0 * beta),
    }
    .validated()
}

/// Profile for which every `x ∈ [x0, 1]` solves the single-block homogeneous
/// fixed-point equation `x = Ĩ(arcsin(λ*/(κx)))`.
///
/// `Ĩ ≡ 1` on `[0, r(1)]`, `Ĩ(y) = λ*/(κ sin y)` on `[r(1), r(x0)]` (the inverse
/// of `r`), then a straight line down to `(β, 0)`.
pub fn make_continuum_influence(
    lambda_star: f64,
    kappa: f64,
    x0: f64,
    beta: f64,
) -> Result<InfluenceFunction> {
    check_beta(beta)?;
    let fail = |msg: String| Err(InfluenceError::ContinuumPrecondition(msg));
    if !(lambda_star > 0.0) || !(kappa > 0.0) {
        return fail(format!(
            "lambda_star = {lambda_star} and kappa = {kappa} must be positive"
        ));
    }
    let floor = lambda_star / kappa;
    if !(x0 > floor && x0 < 1.0) {
        return fail(format!("x0 = {x0} must lie in ({floor}, 1)"));
    }
    let r_one = floor.asin();
    let r_x0 = (floor / x0).asin();
    if !(beta > r_x0) {
        return fail(format!("beta = {beta} must exceed r(x0) = {r_x0}"));
    }
    // |d/dy λ*/(κ sin y)| = λ* cos y / (κ sin² y) is largest at y = r(1).
    let inverse_slope = kappa * r_one.cos() / lambda_star;
    let ramp_slope = x0 / (beta - r_x0);
    InfluenceFunction {
        profile: Profile::Continuum {
            lambda_star,
            kappa,
            x0,
            r_one,
            r_x0,
        },
        beta,
        lip: inverse_slope.max(ramp_slope),
    }
    .validated()
}

/// Piecewise-linear profile through `(r, value)` knots. The first knot must be
/// `(0, 1)`; values must be nonincreasing and reach 0 before `π/2`.
pub fn make_tabulated(points: Vec<(f64, f64)>) -> Result<InfluenceFunction> {
    let bad = |msg: &str| Err(InfluenceError::Tabulated(msg.to_string()));
    if points.len() < 2 {
        return bad("need at least two knots");
    }
    if points[0] != (0.0, 1.0) {
        return bad("first knot must be (0, 1)");
    }
    let mut lip: f64 = 0.0;
    for w in points.windows(2) {
        let ((r0, v0), (r1, v1)) = (w[0], w[1]);
        if !(r1 > r0) {
            return bad("knot radii must be strictly increasing");
        }
        if v1 > v0 {
            return Err(InfluenceError::NotMonotone {
                r: r1,
                left: v0,
                right: v1,
            });
        }
        if v1 < 0.0 {
            return bad("values must be nonnegative");
        }
        lip = lip.max((v0 - v1) / (r1 - r0));
    }
    let beta = match points.iter().find(|(_, v)| *v == 0.0) {
        Some(&(r, _)) => r,
        None => return bad("profile must reach 0"),
    };
    check_beta(beta)?;
    let support: Vec<(f64, f64)> = points.into_iter().filter(|&(r, _)| r <= beta).collect();
    InfluenceFunction {
        profile: Profile::Tabulated { points: support },
        beta,
        lip,
    }
    .validated()
}

/// Parses `r,value` rows (an optional non-numeric header line is skipped).
pub fn tabulated_from_csv(text: &str) -> Result<InfluenceFunction> {
    let mut points = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(InfluenceError::Tabulated(format!(
                "line {}: expected two columns",
                k + 1
            )));
        }
        match (fields[0].parse::<f64>(), fields[1].parse::<f64>()) {
            (Ok(r), Ok(v)) => points.push((r, v)),
            _ if k == 0 => continue,
            _ => {
                return Err(InfluenceError::Tabulated(format!(
                    "line {}: unparsable number",
                    k + 1
                )))
            }
        }
    }
    make_tabulated(points)
}

impl InfluenceFunction {
    /// `Ĩ(r)`. Negative radii are clamped to the origin where `Ĩ(0) = 1`.
    pub fn eval(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 1.0;
        }
        if r >= self.beta {
            return 0.0;
        }
        match &self.profile {
            Profile::LinearHat => 1.0 - r / self.beta,
            Profile::CosineTaper => (PI * r / (2.0 * self.beta)).cos().powi(2),
            Profile::Continuum {
                lambda_star,
                kappa,
                x0,
                r_one,
                r_x0,
            } => {
                if r <= *r_one {
                    1.0
                } else if r <= *r_x0 {
                    lambda_star / (kappa * r.sin())
                } else {
                    x0 * (self.beta - r) / (self.beta - r_x0)
                }
            }
            Profile::Tabulated { points } => {
                let k = points.partition_point(|&(knot, _)| knot <= r);
                let (r0, v0) = points[k - 1];
                match points.get(k) {
                    Some(&(r1, v1)) => v0 + (v1 - v0) * (r - r0) / (r1 - r0),
                    None => 0.0,
                }
            }
        }
    }

    /// `I(R) = Ĩ(d(I_n, R))`.
    pub fn eval_on_rotation(&self, r: &Rotation) -> Result<f64> {
        self.eval_relative(&Rotation::identity(r.dim()), r)
    }

    /// `Ĩ(d(Q, R))` for attraction point `Q`.
    pub fn eval_relative(&self, q: &Rotation, r: &Rotation) -> Result<f64> {
        Ok(self.eval(geodesic_distance(q, r)?))
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Lipschitz constant of the radial profile.
    pub fn lip(&self) -> f64 {
        self.lip
    }

    pub fn kind(&self) -> &'static str {
        match self.profile {
            Profile::LinearHat => "linear-hat",
            Profile::CosineTaper => "cosine-taper",
            Profile::Continuum { .. } => "continuum-constructed",
            Profile::Tabulated { .. } => "user-tabulated",
        }
    }

    /// `(β / sin β) · Lip Ĩ`, an upper bound on the Lipschitz constant of
    /// `R ↦ I(R)` with respect to the half-Frobenius norm.
    pub fn lip_star_bound(&self) -> f64 {
        self.beta / self.beta.sin() * self.lip
    }

    /// Monotonicity, support, limit-at-zero and Lipschitz checks on a
    /// uniform grid of `points` nodes over `[0, π]`.
    pub fn check_on_grid(&self, points: usize) -> Result<()> {
        let limit = self.eval(1e-8);
        if !((limit - 1.0).abs() <= self.lip * 1e-8 + 1e-15) {
            return Err(InfluenceError::LimitAtZero { value: limit });
        }
        let step = PI / (points - 1) as f64;
        let mut prev = (0.0, self.eval(0.0));
        for k in 1..points {
            let r = k as f64 * step;
            let v = self.eval(r);
            if v > prev.1 + 1e-15 {
                return Err(InfluenceError::NotMonotone {
                    r,
                    left: prev.1,
                    right: v,
                });
            }
            if r >= self.beta && v != 0.0 {
                return Err(InfluenceError::SupportViolation { r, value: v });
            }
            let slope = (prev.1 - v) / (r - prev.0);
            if slope > self.lip * (1.0 + 1e-9) + 1e-12 {
                return Err(InfluenceError::LipschitzViolation {
                    r,
                    slope,
                    lip: self.lip,
                });
            }
            prev = (r, v);
        }
        Ok(())
    }

    fn validated(self) -> Result<Self> {
        self.check_on_grid(10_001)?;
        Ok(self)
    }

    /// `{kind, beta, lip, params}`.
    pub fn to_json_value(&self) -> Value {
        let params = match &self.profile {
            Profile::LinearHat | Profile::CosineTaper => json!({}),
            Profile::Continuum {
                lambda_star,
                kappa,
                x0,
                ..
            } => json!({"lambda_star": lambda_star, "kappa": kappa, "x0": x0}),
            Profile::Tabulated { points } => json!({ "points": points }),
        };
        json!({
            "kind": self.kind(),
            "beta": self.beta,
            "lip": self.lip,
            "params": params,
        })
    }

    pub fn from_json_value(value: &Value) -> Result<Self> {
        let spec: InfluenceSpec = serde_json::from_value(value.clone())
            .map_err(|e| InfluenceError::Json(e.to_string()))?;
        spec.build()
    }
}

/// Declarative description of a profile, as found in experiment decks and in
/// the JSON form (`lip` is recomputed, never trusted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceSpec {
    pub kind: String,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub lip: Option<f64>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl InfluenceSpec {
    pub fn build(&self) -> Result<InfluenceFunction> {
        let beta = || {
            self.beta
                .ok_or_else(|| InfluenceError::Json(format!("{} needs beta", self.kind)))
        };
        let param = |key: &str| {
            self.params
                .get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| InfluenceError::Json(format!("missing numeric param {key}")))
        };
        match self.kind.as_str() {
            "linear-hat" => make_linear_hat(beta()?),
            "cosine-taper" => make_cosine_taper(beta()?),
            "continuum-constructed" => make_continuum_influence(
                param("lambda_star")?,
                param("kappa")?,
                param("x0")?,
                beta()?,
            ),
            "user-tabulated" => {
                if let Some(path) = self.params.get("csv").and_then(Value::as_str) {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| InfluenceError::Tabulated(format!("{path}: {e}")))?;
                    return tabulated_from_csv(&text);
                }
                let points: Vec<(f64, f64)> = self
                    .params
                    .get("points")
                    .cloned()
                    .map(serde_json::from_value)
                    .transpose()
                    .map_err(|e| InfluenceError::Json(e.to_string()))?
                    .ok_or_else(|| InfluenceError::Json("missing points".into()))?;
                make_tabulated(points)
            }
            other => Err(InfluenceError::Json(format!("unknown kind {other}"))),
        }
    }
}
