//! Acceptance suite. Each test prints one PASS/FAIL line; run with
//! `cargo test -p winfree-so --release --test acceptance -- --nocapture --test-threads=1`.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use winfree_so::analysis::{
    big_gamma_of_ratio, certify_trapping, half_angle_form, kappa_trapping, lambda1, lambda2,
    measure_l1_rate, pairwise_envelope, FrameworkParams,
};
use winfree_so::dynamics::{
    integrate, integrate_pair, l1_distance, planar_phase, winfree_phase_reference, wrap_angle,
    EnsembleState, IntegrationSettings, ModelConfig, Stepper,
};
use winfree_so::equilibria::{
    certify_relaxation, check_skew_multiset, construct_equilibrium, dense_scan,
    distance_sandwich_violation, equilibrium_residual, solve_fixed_point, FrequencySpectrum,
};
use winfree_so::geometry::{
    distance_from_identity, exp_pade, exp_so, principal_angles, random_skew_direction,
    sample_ball, sample_haar, trace_gap, Rotation, Skew,
};
use winfree_so::influence::{make_continuum_influence, make_cosine_taper, make_linear_hat};

static SERIAL: Mutex<()> = Mutex::new(());

fn criterion(id: u32, name: &str, budget: Duration, body: impl FnOnce() -> (bool, String)) {
    let _guard = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let (ok, detail) = body();
    let elapsed = start.elapsed();
    let pass = ok && elapsed <= budget;
    let label = if pass { "PASS" } else { "FAIL" };
    println!("{label} criterion {id:>2} {name}: {detail}; runtime {elapsed:.2?} (budget {budget:?})");
    assert!(pass, "criterion {id} failed: {detail}; runtime {elapsed:?}");
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn random_frequencies(n: usize, count: usize, scale: f64, r: &mut ChaCha20Rng) -> Vec<Skew> {
    (0..count)
        .map(|_| {
            let s = scale * r.random_range(0.2..1.0);
            random_skew_direction(n, r).scaled(s)
        })
        .collect()
}

fn ball_state(n: usize, count: usize, radius: f64, r: &mut ChaCha20Rng) -> EnsembleState {
    EnsembleState::new(
        (0..count)
            .map(|_| sample_ball(n, radius, r).unwrap())
            .collect(),
    )
}

/// `γ0` with `γ = 2 arcsin(γ0/2)` equal to `gamma`.
fn gamma0_for(gamma: f64) -> f64 {
    2.0 * (gamma / 2.0).sin()
}

#[test]
fn c01_manifold_preservation() {
    criterion(1, "orthogonality over t in [0, 50]", Duration::from_secs(30), || {
        let settings = IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h: 1e-3,
            t_end: 50.0,
            stride: 1000,
            state_stride: 0,
        };
        let mut worst: f64 = 0.0;
        let mut parts = Vec::new();
        for n in [2usize, 3, 4, 6] {
            let mut r = rng(100 + n as u64);
            let freqs = random_frequencies(n, 10, 0.8, &mut r);
            let cfg = ModelConfig::new(2.0, freqs, make_linear_hat(1.2).unwrap(), None).unwrap();
            let rotations = (0..10)
                .map(|i| {
                    if i % 2 == 0 {
                        sample_ball(n, 1.0, &mut r).unwrap()
                    } else {
                        sample_haar(n, &mut r).unwrap()
                    }
                })
                .collect();
            let traj = integrate(&cfg, &EnsembleState::new(rotations), &settings).unwrap();
            worst = worst.max(traj.max_orthogonality_defect);
            parts.push(format!("n={n}: {:.1e}", traj.max_orthogonality_defect));
        }
        (
            worst <= 1e-10,
            format!("max defect {worst:.2e} <= 1e-10 ({})", parts.join(", ")),
        )
    });
}

#[test]
fn c02_planar_reduction() {
    criterion(2, "n = 2 matrix model vs scalar phase model", Duration::from_secs(5), || {
        let nu = [0.3, -0.2, 0.5, 0.1, -0.4];
        let theta0 = [0.4, -0.9, 1.3, 0.2, -1.45];
        let kappa = 1.0;
        let influence = make_cosine_taper(1.5).unwrap();
        let freqs = nu.iter().map(|&w| Skew::planar(w)).collect();
        let cfg = ModelConfig::new(kappa, freqs, influence.clone(), None).unwrap();
        let initial = EnsembleState::new(theta0.iter().map(|&t| Rotation::planar(t)).collect());
        let h = 1e-3;
        let settings = IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h,
            t_end: 10.0,
            stride: 100,
            state_stride: 1,
        };
        let traj = integrate(&cfg, &initial, &settings).unwrap();
        let reference = winfree_phase_reference(&nu, kappa, &influence, &theta0, h, 10.0);
        let mut worst: f64 = 0.0;
        for (_, s) in &traj.states {
            let k = (s.t / h).round() as usize;
            for (i, r) in s.rotations.iter().enumerate() {
                worst = worst.max(wrap_angle(planar_phase(r) - reference[k][i]).abs());
            }
        }
        let last = traj.states.last().unwrap().1.t;
        (
            worst <= 1e-6 && (last - 10.0).abs() < 1e-12,
            format!("max phase error {worst:.2e} <= 1e-6 through t = {last}"),
        )
    });
}

#[test]
fn c03_trace_gap_sandwich() {
    criterion(3, "4 sin^2(d/2) <= n - tr R <= d^2", Duration::from_secs(10), || {
        let slack = 1e-12;
        let mut violations = 0;
        let mut parts = Vec::new();
        for n in 3..=6usize {
            let mut r = rng(300 + n as u64);
            let (mut accepted, mut drawn) = (0usize, 0usize);
            while accepted < 10_000 {
                let rot = sample_haar(n, &mut r).unwrap();
                drawn += 1;
                let d = distance_from_identity(&rot).unwrap();
                if d > std::f64::consts::PI {
                    continue;
                }
                accepted += 1;
                let gap = trace_gap(&rot);
                let lower = 4.0 * (d / 2.0).sin().powi(2);
                if gap < lower - slack || gap > d * d + slack {
                    violations += 1;
                }
            }
            parts.push(format!("n={n}: {accepted}/{drawn}"));
        }
        (
            violations == 0,
            format!("{violations} violations; samples with d <= pi accepted/drawn {}", parts.join(", ")),
        )
    });
}

#[test]
fn c04_trapping_certificates() {
    criterion(4, "50 compliant trapping runs", Duration::from_secs(120), || {
        let beta = 1.2;
        let fw = FrameworkParams::new(beta, 0.5, vec![]).unwrap();
        let influence = make_linear_hat(beta).unwrap();
        let settings = IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h: 1e-2,
            t_end: 100.0,
            stride: 10,
            state_stride: 0,
        };
        let mut passed = 0;
        let mut worst: f64 = 0.0;
        for k in 0..50u64 {
            let mut r = rng(4000 + k);
            let scale = r.random_range(0.05..0.4);
            let freqs = random_frequencies(3, 5, scale, &mut r);
            let max_omega = freqs.iter().map(Skew::norm).fold(0.0, f64::max);
            let k_trap = kappa_trapping(&fw, &influence, max_omega).unwrap();
            let kappa = k_trap * r.random_range(1.05..3.0);
            let cfg = ModelConfig::new(kappa, freqs, influence.clone(), None).unwrap();
            let initial = ball_state(3, 5, fw.gamma0, &mut r);
            let traj = integrate(&cfg, &initial, &settings).unwrap();
            let cert = certify_trapping(&traj, &fw);
            worst = worst.max(traj.max_distance());
            passed += cert.passed() as usize;
        }
        (
            passed == 50,
            format!(
                "{passed}/50 PASS, max distance {worst:.6} <= gamma + 1e-6 = {:.6}",
                fw.gamma + 1e-6
            ),
        )
    });
}

#[test]
fn c05_l1_stability_envelope() {
    criterion(5, "paired trajectories contract at rate lambda1", Duration::from_secs(60), || {
        let beta = 1.2;
        let fw = FrameworkParams::new(beta, gamma0_for(0.3), vec![]).unwrap();
        let influence = make_linear_hat(beta).unwrap();
        let settings = IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h: 1e-3,
            t_end: 10.0,
            stride: 10,
            state_stride: 1,
        };
        let mut ok = true;
        let mut parts = Vec::new();
        for seed in 0..5u64 {
            let mut r = rng(5000 + seed);
            let freqs = random_frequencies(3, 5, 0.2, &mut r);
            let max_omega = freqs.iter().map(Skew::norm).fold(0.0, f64::max);
            let kappa = 2.0 * kappa_trapping(&fw, &influence, max_omega).unwrap();
            let cfg = ModelConfig::new(kappa, freqs, influence.clone(), None).unwrap();
            let a = ball_state(3, 5, 0.9 * fw.gamma0, &mut r);
            let b = EnsembleState::new(
                a.rotations
                    .iter()
                    .map(|x| {
                        let kick = exp_so(&random_skew_direction(3, &mut r).scaled(0.02));
                        Rotation::with_tolerance(kick.matrix() * x.matrix(), 1e-12).unwrap()
                    })
                    .collect(),
            );
            let (ra, rb, l1) = integrate_pair(&cfg, &a, &b, &settings).unwrap();
            let times: Vec<f64> = ra.states.iter().map(|(_, s)| s.t).collect();
            let report = measure_l1_rate(&times, &l1, &fw, &cfg);
            let trapped = certify_trapping(&ra, &fw).passed() && certify_trapping(&rb, &fw).passed();
            ok &= report.lambda1 > 0.0
                && report.envelope.holds
                && report.slope_ok
                && trapped
                && !report.degenerate;
            parts.push(format!(
                "lambda1 {:.3} measured {:.3} worst ratio {:.3}",
                report.lambda1,
                report.measured_decay().unwrap_or(f64::NAN),
                report.envelope.worst_ratio
            ));
        }
        (ok, parts.join("; "))
    });
}

#[test]
fn c06_homogeneous_synchronization() {
    criterion(6, "pairwise decay at rate lambda2", Duration::from_secs(30), || {
        let beta = 1.2;
        let fw = FrameworkParams::new(beta, 0.5, vec![]).unwrap();
        let influence = make_linear_hat(beta).unwrap();
        let settings = IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h: 1e-3,
            t_end: 10.0,
            stride: 20,
            state_stride: 1,
        };
        let mut ok = true;
        let mut parts = Vec::new();
        for seed in 0..3u64 {
            let mut r = rng(6000 + seed);
            let omega = random_skew_direction(3, &mut r).scaled(0.3);
            let kappa = 2.0 * kappa_trapping(&fw, &influence, omega.norm()).unwrap();
            let cfg = ModelConfig::new(kappa, vec![omega; 8], influence.clone(), None).unwrap();
            let initial = ball_state(3, 8, fw.gamma0, &mut r);
            let traj = integrate(&cfg, &initial, &settings).unwrap();
            let l1 = lambda1(&fw, &influence, kappa);
            let l2 = lambda2(&fw, &influence, kappa);
            let env = pairwise_envelope(&traj, l2);
            ok &= env.holds && l2 > l1 && env.samples_checked > 0;
            parts.push(format!(
                "lambda2 {l2:.3} > lambda1 {l1:.3}, worst ratio {:.3}",
                env.worst_ratio
            ));
        }
        (ok, parts.join("; "))
    });
}

#[test]
fn c07_equilibrium_construction_and_relaxation() {
    criterion(7, "equilibrium, stationarity and relaxation", Duration::from_secs(60), || {
        let beta = 1.2;
        let fw = FrameworkParams::new(beta, gamma0_for(0.3), vec![]).unwrap();
        let mut r = rng(7000);
        let freqs = random_frequencies(4, 5, 0.2, &mut r);
        let cfg = ModelConfig::new(4.0, freqs, make_linear_hat(beta).unwrap(), None).unwrap();

        let fp = solve_fixed_point(&cfg, &fw).unwrap();
        let ens = construct_equilibrium(&cfg, fp.x_star, None).unwrap();
        let velocity = equilibrium_residual(&ens.rotations, &cfg).unwrap();
        let sandwich = distance_sandwich_violation(&ens, &cfg).unwrap();

        let still = IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h: 1e-3,
            t_end: 10.0,
            stride: 1000,
            state_stride: 0,
        };
        let traj = integrate(&cfg, &ens.state(), &still).unwrap();
        let drift = l1_distance(&traj.final_state.unwrap().rotations, &ens.rotations);

        let relax = IntegrationSettings {
            stepper: Stepper::Rkmk4,
            h: 2e-3,
            t_end: 30.0,
            stride: 50,
            state_stride: 1,
        };
        let l1 = lambda1(&fw, &cfg.influence, cfg.kappa);
        let mut finals = Vec::new();
        let mut relaxed = true;
        for seed in [1u64, 2] {
            let initial = ball_state(4, 5, fw.gamma0, &mut rng(7100 + seed));
            let traj = integrate(&cfg, &initial, &relax).unwrap();
            let cert = certify_relaxation(&traj, &ens, &fw, l1);
            relaxed &= cert.passed();
            finals.push(traj.final_state.unwrap());
        }
        let agreement = finals[0].l1_distance(&finals[1]);
        let ok = fp.residual <= 1e-12
            && ens.skew_residual <= 1e-10
            && velocity <= 1e-10
            && sandwich <= 1e-10
            && drift <= 1e-7
            && relaxed
            && agreement <= 1e-8;
        (
            ok,
            format!(
                "x* {:.12} residual {:.1e}, skew residual {:.1e}, velocity {:.1e}, sandwich {:.1e}, drift {:.1e}, relaxation {}, limits agree to {:.1e}",
                fp.x_star, fp.residual, ens.skew_residual, velocity, sandwich, drift,
                if relaxed { "PASS" } else { "FAIL" }, agreement
            ),
        )
    });
}

#[test]
fn c08_continuum_witness() {
    criterion(8, "continuum of fixed points on [0.6, 1]", Duration::from_secs(5), || {
        let (kappa, lambda_star, x0, beta) = (2.0, 1.0, 0.6, 1.2);
        let influence = make_continuum_influence(lambda_star, kappa, x0, beta).unwrap();
        let cfg = ModelConfig::new(kappa, vec![Skew::planar(lambda_star); 3], influence, None)
            .unwrap();
        let spec = FrequencySpectrum::new(&cfg).unwrap();
        let scan = dense_scan(&spec, 0.6, 1.0, 1_000_000).unwrap();
        let worst = scan.max_abs_residual();
        (
            worst <= 1e-10 && scan.points.len() == 1_000_000,
            format!("max |x - f(x)| = {worst:.2e} over 1e6 points"),
        )
    });
}

#[test]
fn c09_half_angle_identity_and_endpoints() {
    criterion(9, "Gamma identity and endpoints", Duration::from_secs(5), || {
        let mut worst: f64 = 0.0;
        for k in 0..=100_000 {
            let x = k as f64 / 100_000.0;
            worst = worst.max((big_gamma_of_ratio(x).unwrap() - half_angle_form(x)).abs());
        }
        let g0 = (big_gamma_of_ratio(0.0).unwrap() - 2.0).abs();
        let g1 = (big_gamma_of_ratio(1.0).unwrap() - 2f64.sqrt()).abs();
        (
            worst <= 1e-14 && g0 <= 1e-15 && g1 <= 1e-15,
            format!("identity gap {worst:.1e}, |Gamma(0) - 2| = {g0:.1e}, |Gamma(1) - sqrt 2| = {g1:.1e}"),
        )
    });
}

/// Rotation angles from the eigenvalues of the complexified matrix, each
/// conjugate pair contributing its angle twice.
fn complex_eigen_angles(r: &Rotation) -> Vec<f64> {
    let m = r.matrix();
    let c = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| Complex::new(m[(i, j)], 0.0));
    let mut angles: Vec<f64> = c
        .schur()
        .eigenvalues()
        .expect("triangular complex Schur form")
        .iter()
        .map(|z| z.im.atan2(z.re).abs())
        .collect();
    angles.sort_by(|a, b| b.total_cmp(a));
    angles
}

#[test]
fn c10_oracle_equivalences() {
    criterion(10, "exp, canonical angles and multiset oracles", Duration::from_secs(30), || {
        let mut r = rng(10_000);

        let mut exp_gap: f64 = 0.0;
        for n in 2..=8usize {
            for _ in 0..200 {
                let scale = r.random_range(0.0..4.0);
                let x = random_skew_direction(n, &mut r).scaled(scale);
                let diff = (exp_so(&x).matrix() - exp_pade(x.matrix())).amax();
                exp_gap = exp_gap.max(diff);
            }
        }

        let mut angle_gap: f64 = 0.0;
        for n in 2..=8usize {
            for _ in 0..100 {
                let rot = sample_haar(n, &mut r).unwrap();
                let pa = principal_angles(&rot, 0.0).unwrap();
                let mut expected: Vec<f64> = pa.angles().iter().flat_map(|&a| [a, a]).collect();
                expected.resize(n, 0.0);
                expected.sort_by(|a, b| b.total_cmp(a));
                let got = complex_eigen_angles(&rot);
                for (a, b) in expected.iter().zip(&got) {
                    angle_gap = angle_gap.max((a - b).abs());
                }
            }
        }

        let (mut same, mut distinct) = (0, 0);
        for k in 0..1000 {
            let n = 3 + k % 4;
            let x = random_skew_direction(n, &mut r).scaled(r.random_range(0.1..2.0));
            let p = sample_haar(n, &mut r).unwrap();
            let y = x.conjugated(p.matrix());
            same += check_skew_multiset(&x, &y) as usize;
            distinct += (!check_skew_multiset(&x, &y.scaled(1.01))) as usize;
        }

        (
            exp_gap <= 1e-11 && angle_gap <= 1e-9 && same == 1000 && distinct == 1000,
            format!(
                "exp vs Pade {exp_gap:.1e}, angles vs complex eigenvalues {angle_gap:.1e}, multiset {same}/1000 conjugate pairs matched, {distinct}/1000 rescaled pairs rejected"
            ),
        )
    });
}
