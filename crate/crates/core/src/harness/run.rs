use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use super::{
    kappa_fixed_point, oscillator_rng, prepare, validate_prepared, ExperimentKind, ExperimentSpec,
    HarnessError, Prepared, Result, ValidationReport, STREAM_PERTURBATION,
};
use crate::analysis::{
    certify_herding, certify_trapping, lambda1, lambda2, measure_l1_rate, measure_sync_rate,
    pairwise_envelope, rate_certificate, sweep_csv, Certificate, FrameworkParams, Outcome,
    EPS_CERT,
};
use crate::dynamics::{
    integrate, integrate_pair, l1_distance, planar_phase, winfree_phase_reference, wrap_angle,
    EnsembleState, IntegrationSettings, ModelConfig, TrajectoryRecord,
};
use crate::equilibria::{
    bisect_fixed_point, certify_relaxation, construct_equilibrium, dense_scan,
    distance_sandwich_violation, equilibrium_residual, solve_spectrum, EquilibriumEnsemble,
    FixedPointResult, FrequencySpectrum, EQUILIBRIUM_TOL, FIXED_POINT_TOL,
};
use crate::geometry::{exp_so, random_skew_direction, Rotation};

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub kind: ExperimentKind,
    /// 0 all PASS, 1 some certificate FAIL, 2 hypotheses violated.
    pub exit_code: i32,
    pub validation: ValidationReport,
    /// `(seed, certificate)` in seed order.
    pub certificates: Vec<(u64, Certificate)>,
    pub artifacts: Vec<PathBuf>,
    pub summary: Value,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.exit_code == 0
    }
}

struct SeedOutcome {
    seed: u64,
    certificates: Vec<Certificate>,
    files: Vec<(String, String)>,
    sweep: (Outcome, f64, f64),
    final_state: Option<EnsembleState>,
}

impl SeedOutcome {
    fn new(seed: u64) -> Self {
        SeedOutcome {
            seed,
            certificates: Vec::new(),
            files: Vec::new(),
            sweep: (Outcome::Pass, f64::NAN, f64::NAN),
            final_state: None,
        }
    }

    fn failed(seed: u64, stage: &str, message: String) -> Self {
        let cert = Certificate::new(stage, Outcome::Fail).witness("error", message);
        SeedOutcome {
            certificates: vec![cert],
            sweep: (Outcome::Fail, f64::NAN, f64::NAN),
            ..SeedOutcome::new(seed)
        }
    }

    fn passed(&self) -> bool {
        self.certificates.iter().all(Certificate::passed)
    }
}

struct Context<'a> {
    spec: &'a ExperimentSpec,
    prepared: &'a Prepared,
    settings: IntegrationSettings,
    trajectories: bool,
}

impl Context<'_> {
    fn cfg(&self) -> &ModelConfig {
        &self.prepared.cfg
    }

    fn fw(&self) -> &FrameworkParams {
        self.prepared
            .framework
            .as_ref()
            .expect("framework checked during preparation")
    }

    fn prefix(&self, seed: u64) -> String {
        format!("{}-seed{seed}", self.prepared.kind)
    }

    fn trajectory_file(&self, out: &mut SeedOutcome, name: &str, traj: &TrajectoryRecord) {
        if self.trajectories {
            out.files
                .push((format!("{}-{name}.csv", self.prefix(out.seed)), traj.to_csv()));
        }
    }
}

fn write_file(dir: &Path, name: &str, content: &str, artifacts: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| HarnessError::Io {
        path: path.clone(),
        message: e.to_string(),
    })?;
    artifacts.push(path);
    Ok(())
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

/// Validates the deck, runs every seed and writes the artifacts.
///
/// Spec and I/O problems are errors; violated hypotheses without the
/// override produce a report with exit code 2 and only `validation.json`.
pub fn run(spec: &ExperimentSpec) -> Result<RunReport> {
    let prepared = prepare(spec)?;
    let validation = validate_prepared(spec, &prepared);
    let dir = spec.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::Io {
        path: dir.clone(),
        message: e.to_string(),
    })?;
    let mut artifacts = Vec::new();
    write_file(
        &dir,
        "validation.json",
        &pretty(&validation.to_json_value()),
        &mut artifacts,
    )?;
    let kind = prepared.kind;
    if !validation.proceed() {
        let summary = json!({
            "kind": kind,
            "spec_hash": spec.hash(),
            "exit_code": 2,
            "violations": validation.violations(),
        });
        return Ok(RunReport {
            kind,
            exit_code: 2,
            validation,
            certificates: Vec::new(),
            artifacts,
            summary,
        });
    }

    let ctx = Context {
        spec,
        prepared: &prepared,
        settings: spec.integration,
        trajectories: !spec.output.no_trajectories,
    };
    let mut outcomes: Vec<SeedOutcome> = match kind {
        ExperimentKind::Fixedpoint => vec![run_fixedpoint(&ctx, prepared.initial[0].0)],
        ExperimentKind::Equilibrium => run_equilibrium(&ctx),
        _ => prepared
            .initial
            .par_iter()
            .map(|(seed, state)| run_seed(&ctx, *seed, state))
            .collect(),
    };
    outcomes.sort_by_key(|o| o.seed);

    let mut certificates = Vec::new();
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for o in &outcomes {
        for (name, content) in &o.files {
            write_file(&dir, name, content, &mut artifacts)?;
        }
        for cert in &o.certificates {
            let name = format!("{}-{}.json", ctx.prefix(o.seed), cert.name);
            write_file(&dir, &name, &format!("{}\n", cert.to_json_string()), &mut artifacts)?;
            certificates.push((o.seed, cert.clone()));
        }
        let (outcome, measured, bound) = o.sweep;
        rows.push((o.seed as f64, outcome, measured, bound));
        per_seed.push(json!({
            "seed": o.seed,
            "outcome": Outcome::from_bool(o.passed()),
            "certificates": o.certificates.iter().map(|c| json!({"name": c.name, "outcome": c.outcome})).collect::<Vec<_>>(),
        }));
    }
    write_file(&dir, &format!("{kind}-sweep.csv"), &sweep_csv(&rows), &mut artifacts)?;

    let all_pass = certificates.iter().all(|(_, c)| c.passed());
    let exit_code = if all_pass { 0 } else { 1 };
    let summary = json!({
        "kind": kind,
        "spec_hash": spec.hash(),
        "model_hash": prepared.cfg.hash(),
        "model": prepared.cfg.to_json_value(),
        "framework": prepared.framework.as_ref().map(FrameworkParams::to_json_value),
        "integration": {
            "stepper": spec.integration.stepper.name(),
            "h": spec.integration.h,
            "t_end": spec.integration.t_end,
            "stride": spec.integration.stride,
        },
        "override_hypotheses": spec.override_hypotheses,
        "violations": validation.violations(),
        "seeds": per_seed,
        "outcome": Outcome::from_bool(all_pass),
        "exit_code": exit_code,
    });
    write_file(&dir, "summary.json", &pretty(&summary), &mut artifacts)?;
    Ok(RunReport {
        kind,
        exit_code,
        validation,
        certificates,
        artifacts,
        summary,
    })
}

fn run_seed(ctx: &Context, seed: u64, initial: &EnsembleState) -> SeedOutcome {
    let result = match ctx.prepared.kind {
        ExperimentKind::Simulate => run_simulate(ctx, seed, initial),
        ExperimentKind::Trap => run_trap(ctx, seed, initial),
        ExperimentKind::Herd => run_herd(ctx, seed, initial),
        ExperimentKind::Stability => run_stability(ctx, seed, initial),
        ExperimentKind::Sync => run_sync(ctx, seed, initial),
        ExperimentKind::Reduce2d => run_reduce2d(ctx, seed, initial),
        ExperimentKind::Equilibrium | ExperimentKind::Fixedpoint => {
            unreachable!("handled without per-seed dispatch")
        }
    };
    result.unwrap_or_else(|e| SeedOutcome::failed(seed, "runtime-error", e))
}

type SeedResult = std::result::Result<SeedOutcome, String>;

fn integrate_with(
    cfg: &ModelConfig,
    initial: &EnsembleState,
    settings: &IntegrationSettings,
) -> std::result::Result<TrajectoryRecord, String> {
    integrate(cfg, initial, settings).map_err(|e| e.to_string())
}

fn run_simulate(ctx: &Context, seed: u64, initial: &EnsembleState) -> SeedResult {
    let settings = IntegrationSettings {
        state_stride: 0,
        ..ctx.settings
    };
    let traj = integrate_with(ctx.cfg(), initial, &settings)?;
    let mut out = SeedOutcome::new(seed);
    ctx.trajectory_file(&mut out, "trajectory", &traj);
    let summary = traj.summary_json(ctx.cfg(), &[]);
    out.files
        .push((format!("{}-summary.json", ctx.prefix(seed)), pretty(&summary)));
    out.sweep = (Outcome::Pass, traj.max_distance(), f64::NAN);
    out.final_state = traj.final_state;
    Ok(out)
}

fn run_trap(ctx: &Context, seed: u64, initial: &EnsembleState) -> SeedResult {
    let settings = IntegrationSettings {
        state_stride: 0,
        ..ctx.settings
    };
    let traj = integrate_with(ctx.cfg(), initial, &settings)?;
    let cert = certify_trapping(&traj, ctx.fw())
        .hypothesis("kappa", ctx.cfg().kappa)
        .hypothesis("max_omega", ctx.cfg().max_frequency_norm())
        .witness("max_orthogonality_defect", traj.max_orthogonality_defect);
    let mut out = SeedOutcome::new(seed);
    ctx.trajectory_file(&mut out, "trajectory", &traj);
    out.sweep = (cert.outcome, traj.max_distance(), ctx.fw().gamma + EPS_CERT);
    out.certificates.push(cert);
    Ok(out)
}

fn run_herd(ctx: &Context, seed: u64, initial: &EnsembleState) -> SeedResult {
    let settings = IntegrationSettings {
        state_stride: 0,
        ..ctx.settings
    };
    let traj = integrate_with(ctx.cfg(), initial, &settings)?;
    let cert = certify_herding(&traj, ctx.fw(), ctx.cfg())
        .witness("max_orthogonality_defect", traj.max_orthogonality_defect);
    let mut out = SeedOutcome::new(seed);
    ctx.trajectory_file(&mut out, "trajectory", &traj);
    let leader_max = ctx
        .fw()
        .leaders
        .iter()
        .flat_map(|&l| traj.distances.iter().map(move |row| row[l]))
        .fold(0.0, f64::max);
    out.sweep = (cert.outcome, leader_max, ctx.fw().gamma + EPS_CERT);
    out.certificates.push(cert);
    Ok(out)
}

/// `S_i = exp(δ u_i U_i) R_i` with `u_i` uniform in `[0, 1)`.
fn perturb(initial: &EnsembleState, delta: f64, seed: u64) -> EnsembleState {
    use rand::Rng;
    let rotations = initial
        .rotations
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut rng = oscillator_rng(seed, STREAM_PERTURBATION, i);
            let u: f64 = rng.random();
            let dir = random_skew_direction(r.dim(), &mut rng).scaled(delta * u);
            let m = exp_so(&dir).matrix() * r.matrix();
            Rotation::with_tolerance(m, 1e-10).expect("product of rotations")
        })
        .collect();
    EnsembleState {
        t: initial.t,
        rotations,
    }
}

fn run_stability(ctx: &Context, seed: u64, initial: &EnsembleState) -> SeedResult {
    let fw = ctx.fw();
    let cfg = ctx.cfg();
    let delta = ctx.spec.stability.perturbation.unwrap_or(0.1 * fw.gamma0);
    let other = perturb(initial, delta, seed);
    let (ra, rb, l1) = integrate_pair(cfg, initial, &other, &ctx.settings).map_err(|e| e.to_string())?;
    let times: Vec<f64> = ra.states.iter().map(|(_, s)| s.t).collect();
    let report = measure_l1_rate(&times, &l1, fw, cfg);
    let trap_a = certify_trapping(&ra, fw);
    let trap_b = certify_trapping(&rb, fw);
    let ok = report.passed() && trap_a.passed() && trap_b.passed();
    let cert = rate_certificate("l1-stability", &report, fw, cfg)
        .hypothesis("perturbation", delta)
        .witness("initial_l1_distance", l1.first().copied())
        .witness("final_l1_distance", l1.last().copied())
        .witness("slope_ok", report.slope_ok)
        .witness("trapped", [trap_a.passed(), trap_b.passed()]);
    let cert = Certificate {
        outcome: Outcome::from_bool(ok),
        ..cert
    };
    let mut out = SeedOutcome::new(seed);
    ctx.trajectory_file(&mut out, "trajectory-a", &ra);
    ctx.trajectory_file(&mut out, "trajectory-b", &rb);
    if ctx.trajectories {
        let mut csv = String::from("t,l1_distance\n");
        for (t, d) in times.iter().zip(&l1) {
            csv.push_str(&format!("{t:?},{d:?}\n"));
        }
        out.files.push((format!("{}-l1.csv", ctx.prefix(seed)), csv));
    }
    out.sweep = (
        cert.outcome,
        report.measured_decay().unwrap_or(f64::NAN),
        report.lambda1,
    );
    out.certificates.push(cert);
    Ok(out)
}

fn run_sync(ctx: &Context, seed: u64, initial: &EnsembleState) -> SeedResult {
    let fw = ctx.fw();
    let cfg = ctx.cfg();
    let settings = IntegrationSettings {
        state_stride: 1,
        ..ctx.settings
    };
    let traj = integrate_with(cfg, initial, &settings)?;
    let l1 = lambda1(fw, &cfg.influence, cfg.kappa);
    let l2 = lambda2(fw, &cfg.influence, cfg.kappa);
    let envelope = pairwise_envelope(&traj, l2);
    let (times, pairwise, report) = measure_sync_rate(&traj, fw, cfg);
    let ok = envelope.holds && l2 > l1;
    let cert = rate_certificate("synchronization", &report, fw, cfg)
        .hypothesis("homogeneous", cfg.is_homogeneous())
        .witness("pairwise_envelope", &envelope)
        .witness("lambda2_exceeds_lambda1", l2 > l1)
        .witness("slope_ok", report.slope_ok)
        .witness("initial_max_pairwise", pairwise.first().copied())
        .witness("final_max_pairwise", pairwise.last().copied());
    let cert = Certificate {
        outcome: Outcome::from_bool(ok),
        ..cert
    };
    let mut out = SeedOutcome::new(seed);
    ctx.trajectory_file(&mut out, "trajectory", &traj);
    if ctx.trajectories {
        let mut csv = String::from("t,max_pairwise\n");
        for (t, d) in times.iter().zip(&pairwise) {
            csv.push_str(&format!("{t:?},{d:?}\n"));
        }
        out.files.push((format!("{}-pairwise.csv", ctx.prefix(seed)), csv));
    }
    out.sweep = (cert.outcome, envelope.worst_ratio, 1.0 + EPS_CERT);
    out.certificates.push(cert);
    Ok(out)
}

fn run_reduce2d(ctx: &Context, seed: u64, initial: &EnsembleState) -> SeedResult {
    let cfg = ctx.cfg();
    let settings = IntegrationSettings {
        state_stride: 1,
        ..ctx.settings
    };
    let traj = integrate_with(cfg, initial, &settings)?;
    let nu: Vec<f64> = cfg
        .frequencies
        .iter()
        .map(|w| w.matrix()[(1, 0)])
        .collect();
    let theta0: Vec<f64> = initial.rotations.iter().map(planar_phase).collect();
    let h = settings.h;
    let reference = winfree_phase_reference(&nu, cfg.kappa, &cfg.influence, &theta0, h, settings.t_end);
    let mut worst: f64 = 0.0;
    let mut csv = String::from("t,i,matrix_phase,reference_phase,error\n");
    for (_, state) in &traj.states {
        let step = (((state.t - initial.t) / h).round() as usize).min(reference.len() - 1);
        for (i, r) in state.rotations.iter().enumerate() {
            let a = planar_phase(r);
            let b = reference[step][i];
            let err = wrap_angle(a - b).abs();
            worst = worst.max(err);
            csv.push_str(&format!("{:?},{i},{a:?},{:?},{err:?}\n", state.t, wrap_angle(b)));
        }
    }
    let tol = ctx.spec.reduce2d.tolerance;
    let cert = Certificate::new("planar-reduction", Outcome::from_bool(worst <= tol))
        .hypothesis("kappa", cfg.kappa)
        .hypothesis("frequencies", &nu)
        .hypothesis("influence", cfg.influence.to_json_value())
        .hypothesis("stepper", settings.stepper.name())
        .hypothesis("h", h)
        .hypothesis("tolerance", tol)
        .witness("max_phase_error", worst)
        .witness("t_end", settings.t_end);
    let mut out = SeedOutcome::new(seed);
    ctx.trajectory_file(&mut out, "trajectory", &traj);
    if ctx.trajectories {
        out.files.push((format!("{}-phases.csv", ctx.prefix(seed)), csv));
    }
    out.sweep = (cert.outcome, worst, tol);
    out.certificates.push(cert);
    Ok(out)
}

fn solve(ctx: &Context, spec: &FrequencySpectrum) -> std::result::Result<FixedPointResult, String> {
    match (ctx.spec.fixedpoint.bracket, &ctx.prepared.framework) {
        (Some([lo, hi]), _) => bisect_fixed_point(spec, lo, hi).map_err(|e| e.to_string()),
        (None, Some(fw)) => solve_spectrum(spec, fw).map_err(|e| e.to_string()),
        (None, None) => Err("fixed point needs a bracket or a framework".into()),
    }
}

fn run_fixedpoint(ctx: &Context, seed: u64) -> SeedOutcome {
    let inner = || -> SeedResult {
        let cfg = ctx.cfg();
        let spectrum = FrequencySpectrum::new(cfg).map_err(|e| e.to_string())?;
        let res = solve(ctx, &spectrum)?;
        let fp = &ctx.spec.fixedpoint;
        let [lo, hi] = fp.scan_range.unwrap_or([res.bracket.0, res.bracket.1]);
        let scan = dense_scan(&spectrum, lo, hi, fp.scan_points).map_err(|e| e.to_string())?;
        let interior_ok = fp.bracket.is_some() || res.x_star > res.interior_bound;
        let ok = res.residual <= FIXED_POINT_TOL && interior_ok;
        let mut cert = Certificate::new("fixed-point", Outcome::from_bool(ok))
            .hypothesis("kappa", cfg.kappa)
            .hypothesis("max_omega", cfg.max_frequency_norm())
            .hypothesis("influence", cfg.influence.to_json_value())
            .hypothesis("bracket", res.bracket)
            .hypothesis("tolerance", FIXED_POINT_TOL)
            .witness("x_star", res.x_star)
            .witness("residual", res.residual)
            .witness("iterations", res.iterations)
            .witness("interior_bound", res.interior_bound)
            .witness("scan_range", [lo, hi])
            .witness("scan_points", fp.scan_points)
            .witness("scan_sign_changes", scan.sign_changes())
            .witness("scan_max_abs_residual", scan.max_abs_residual())
            .witness("scan_near_zero_intervals", scan.near_zero_intervals(fp.scan_tol));
        if let Some(fw) = &ctx.prepared.framework {
            cert = cert
                .hypothesis("framework", fw.to_json_value())
                .hypothesis(
                    "kappa_fixed_point",
                    kappa_fixed_point(fw, &cfg.influence, cfg.max_frequency_norm()),
                );
        }
        let mut out = SeedOutcome::new(seed);
        out.files
            .push((format!("{}-scan.csv", ctx.prefix(seed)), scan.to_csv()));
        out.sweep = (cert.outcome, res.residual, FIXED_POINT_TOL);
        out.certificates.push(cert);
        Ok(out)
    };
    inner().unwrap_or_else(|e| SeedOutcome::failed(seed, "fixed-point", e))
}

fn equilibrium_certificate(
    ctx: &Context,
    ens: &EquilibriumEnsemble,
    res: &FixedPointResult,
) -> std::result::Result<Certificate, String> {
    let cfg = ctx.cfg();
    let eq = &ctx.spec.equilibrium;
    let residual = equilibrium_residual(&ens.rotations, cfg).map_err(|e| e.to_string())?;
    let sandwich = distance_sandwich_violation(ens, cfg).map_err(|e| e.to_string())?;
    let settings = IntegrationSettings {
        t_end: eq.stationarity_horizon,
        stride: usize::MAX,
        state_stride: 0,
        ..ctx.settings
    };
    let traj = integrate_with(cfg, &ens.state(), &settings)?;
    let drift = traj
        .final_state
        .as_ref()
        .map(|s| l1_distance(&s.rotations, &ens.rotations))
        .unwrap_or(f64::INFINITY);
    let ok = res.residual <= FIXED_POINT_TOL
        && ens.skew_residual <= EQUILIBRIUM_TOL
        && residual <= EQUILIBRIUM_TOL
        && sandwich <= EQUILIBRIUM_TOL
        && drift <= eq.stationarity_tol;
    Ok(Certificate::new("equilibrium", Outcome::from_bool(ok))
        .hypothesis("framework", ctx.fw().to_json_value())
        .hypothesis("kappa", cfg.kappa)
        .hypothesis("fixed_point_tol", FIXED_POINT_TOL)
        .hypothesis("equilibrium_tol", EQUILIBRIUM_TOL)
        .hypothesis("stationarity_tol", eq.stationarity_tol)
        .hypothesis("stationarity_horizon", eq.stationarity_horizon)
        .witness("x_star", res.x_star)
        .witness("fixed_point_residual", res.residual)
        .witness("skew_residual", ens.skew_residual)
        .witness("velocity_residual", residual)
        .witness("distance_sandwich_violation", sandwich)
        .witness("stationarity_drift", drift)
        .witness("ensemble", ens.to_json_value(cfg)))
}

fn run_equilibrium(ctx: &Context) -> Vec<SeedOutcome> {
    let cfg = ctx.cfg();
    let fw = ctx.fw();
    let first_seed = ctx.prepared.initial[0].0;
    let built = FrequencySpectrum::new(cfg)
        .map_err(|e| e.to_string())
        .and_then(|spectrum| solve(ctx, &spectrum))
        .and_then(|res| {
            let branches = ctx.spec.equilibrium.branches.as_deref();
            construct_equilibrium(cfg, res.x_star, branches)
                .map(|ens| (res, ens))
                .map_err(|e| e.to_string())
        });
    let (res, ens) = match built {
        Ok(v) => v,
        Err(e) => return vec![SeedOutcome::failed(first_seed, "equilibrium", e)],
    };
    let l1 = lambda1(fw, &cfg.influence, cfg.kappa);
    let settings = IntegrationSettings {
        state_stride: 1,
        ..ctx.settings
    };
    let mut outcomes: Vec<SeedOutcome> = ctx
        .prepared
        .initial
        .par_iter()
        .map(|(seed, initial)| {
            let traj = match integrate_with(cfg, initial, &settings) {
                Ok(t) => t,
                Err(e) => return SeedOutcome::failed(*seed, "relaxation", e),
            };
            let cert = certify_relaxation(&traj, &ens, fw, l1);
            let mut out = SeedOutcome::new(*seed);
            ctx.trajectory_file(&mut out, "trajectory", &traj);
            let final_l1 = traj
                .final_state
                .as_ref()
                .map(|s| l1_distance(&s.rotations, &ens.rotations))
                .unwrap_or(f64::INFINITY);
            out.sweep = (cert.outcome, final_l1, 1e-8);
            out.certificates.push(cert);
            out.final_state = traj.final_state;
            out
        })
        .collect();
    outcomes.sort_by_key(|o| o.seed);

    let first = &mut outcomes[0];
    match equilibrium_certificate(ctx, &ens, &res) {
        Ok(cert) => first.certificates.insert(0, cert),
        Err(e) => first.certificates.insert(
            0,
            Certificate::new("equilibrium", Outcome::Fail).witness("error", e),
        ),
    }
    first.files.push((
        format!("{}-angles.csv", ctx.prefix(first.seed)),
        crate::equilibria::angles_csv(&ens),
    ));

    if outcomes.len() > 1 {
        let tol = ctx.spec.equilibrium.agreement_tol;
        let finals: Vec<_> = outcomes.iter().map(|o| o.final_state.clone()).collect();
        let base = finals[0].as_ref();
        let gaps: Vec<f64> = finals
            .iter()
            .map(|s| match (base, s) {
                (Some(a), Some(b)) => l1_distance(&a.rotations, &b.rotations),
                _ => f64::INFINITY,
            })
            .collect();
        let worst = gaps.iter().copied().fold(0.0, f64::max);
        let seeds: Vec<u64> = outcomes.iter().map(|o| o.seed).collect();
        let cert = Certificate::new("uniqueness", Outcome::from_bool(worst <= tol))
            .hypothesis("agreement_tol", tol)
            .hypothesis("seeds", seeds)
            .witness("l1_gap_to_first", gaps)
            .witness("max_gap", worst);
        outcomes[0].certificates.push(cert);
    }
    outcomes
}
