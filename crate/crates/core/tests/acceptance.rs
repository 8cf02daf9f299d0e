//! End-to-end acceptance checks. Runs without the libtest harness so that
//! every criterion prints exactly one PASS/FAIL line.

use std::time::Instant;

use anaprior::certificates::build_certificate_at;
use anaprior::experiments::{
    certify, generate_scenario, oracle_solve, run_scenario, sweep, ScenarioConfig, ScenarioRun,
};
use anaprior::guarantees::{injectivity_constant, strong_nsp_check, uniqueness_from_certificate, NspOptions};
use anaprior::linops::{Matrix, Subspace, Vector};
use anaprior::norms::ACTIVE_TOL;
use anaprior::solver::solve_penalized;
use anaprior::{
    CertificateMode, DecomposableNorm, LinearOperator, Problem, SolverOptions, UniquenessStatus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Vector with about a third of its entries zeroed.
fn sparse_vec(n: usize, rng: &mut ChaCha8Rng) -> Vector {
    Vector::from_fn(n, |_, _| if rng.random_range(0..3) == 0 { 0.0 } else { 3.0 * rng.sample::<f64, _>(StandardNormal) })
}

/// Low-rank 2x3 matrices exercise the nuclear model with a nontrivial
/// normal space.
fn nuclear_vec(rng: &mut ChaCha8Rng) -> Vector {
    if rng.random_bool(0.5) {
        let a = gaussian_vec(2, rng);
        let b = gaussian_vec(3, rng);
        Vector::from_column_slice((a * b.transpose()).as_slice())
    } else {
        gaussian_vec(6, rng)
    }
}

fn norm_kinds() -> Vec<DecomposableNorm> {
    vec![
        DecomposableNorm::l1(6),
        DecomposableNorm::group(6, vec![vec![0, 1], vec![2, 3, 4], vec![5]]).unwrap(),
        DecomposableNorm::nuclear(2, 3),
    ]
}

fn criterion_1() -> Outcome {
    let tol = 1e-8;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for norm in norm_kinds() {
        for _ in 0..100 {
            let (u, w) = if matches!(norm, DecomposableNorm::Nuclear { .. }) {
                (nuclear_vec(&mut rng), nuclear_vec(&mut rng))
            } else {
                (sparse_vec(6, &mut rng), sparse_vec(6, &mut rng))
            };
            let tau = rng.random_range(0.05..3.0);
            let x = norm.prox(&u, tau).unwrap();
            if !norm.subdiff_membership(&x, &((&u - &x) / tau), tol).unwrap().is_member() {
                failures.push(format!("{} prox optimality", norm.kind_name()));
            }
            let moreau = (&x + norm.project_dual_ball(&(&u / tau), 1.0).unwrap() * tau - &u).amax();
            worst = worst.max(moreau / (1.0 + u.amax()));
            let cs = u.dot(&w) - norm.norm_value(&u).unwrap() * norm.dual_norm_value(&w).unwrap();
            worst = worst.max(cs.max(0.0));
            let model = norm.decompose_at(&u, ACTIVE_TOL).unwrap();
            let value = norm.norm_value(&u).unwrap();
            worst = worst.max((model.e.dot(&u) - value).abs() / (1.0 + value));
        }
    }
    Outcome {
        pass: failures.is_empty() && worst <= tol,
        detail: format!("300 instances, worst identity defect {worst:.2e}, {} membership failures", failures.len()),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let opts = SolverOptions::default();
    let mut worst_obj = 0.0_f64;
    let mut worst_image = 0.0_f64;
    let mut count = 0;
    for kind in 0..3 {
        for _ in 0..20 {
            let (m, n, norm) = match kind {
                0 => (rng.random_range(2..=5), rng.random_range(3..=6), None),
                1 => (rng.random_range(2..=5), 6, Some(DecomposableNorm::group(6, vec![vec![0, 1], vec![2, 3], vec![4, 5]]).unwrap())),
                _ => (rng.random_range(2..=5), 6, Some(DecomposableNorm::nuclear(2, 3))),
            };
            let p = if kind == 0 { rng.random_range(2..=6) } else { 6 };
            let norm = norm.unwrap_or_else(|| DecomposableNorm::l1(p));
            let phi = LinearOperator::new(gaussian(m, n, &mut rng));
            let analysis = LinearOperator::new(gaussian(p, n, &mut rng));
            let y = gaussian_vec(m, &mut rng);
            let lambda = rng.random_range(0.05..1.0);
            let Ok(problem) = Problem::new(phi, analysis, norm, y.clone(), lambda) else {
                continue;
            };
            let fs = solve_penalized(&problem, &opts).unwrap();
            let fo = oracle_solve(&problem, &opts).unwrap();
            worst_obj = worst_obj.max((fs.objective - fo.objective).abs() / (1.0 + fo.objective.abs()));
            let again = solve_penalized(&problem, &SolverOptions { seed: Some(count as u64 + 1), ..opts }).unwrap();
            let gap = (problem.phi.matrix() * (&fs.x_star - &again.x_star)).norm();
            worst_image = worst_image.max(gap / y.norm().max(f64::MIN_POSITIVE));
            count += 1;
        }
    }
    Outcome {
        pass: count == 60 && worst_obj <= 1e-6 && worst_image <= 1e-6,
        detail: format!("{count} instances, worst objective gap {worst_obj:.2e} (rel), worst image gap {worst_image:.2e} (rel)"),
    }
}

fn config(json: &str) -> ScenarioConfig {
    let cfg = ScenarioConfig::from_json(json).unwrap();
    cfg.validate().unwrap();
    cfg
}

fn family_configs(seed: u64) -> Vec<(&'static str, ScenarioConfig)> {
    let common = format!(r#""seed": {seed}, "epsilons": [0.0], "c": 2.0"#);
    vec![
        ("identity", config(&format!(
            r#"{{{common}, "dims": {{"m": 14, "n": 20, "p": 20}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "identity"}}, "norm": {{"kind": "l1"}}, "signal": {{"kind": "model_size", "size": 3}}}}"#
        ))),
        ("tv1d", config(&format!(
            r#"{{{common}, "dims": {{"m": 18, "n": 24, "p": 23}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "tv1d"}}, "norm": {{"kind": "l1"}}, "signal": {{"kind": "model_size", "size": 2}}}}"#
        ))),
        ("tv2d", config(&format!(
            r#"{{{common}, "dims": {{"m": 14, "n": 16, "p": 24}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "tv2d", "height": 4, "width": 4}}, "norm": {{"kind": "l1"}},
               "signal": {{"kind": "model_size", "size": 6}}}}"#
        ))),
        ("tight_frame", config(&format!(
            r#"{{{common}, "dims": {{"m": 14, "n": 16, "p": 20}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "tight_frame"}}, "norm": {{"kind": "l1"}}, "signal": {{"kind": "model_size", "size": 6}}}}"#
        ))),
    ]
}

fn criterion_3() -> Outcome {
    let mut worst_residual = 0.0_f64;
    let mut worst_alpha = 0.0_f64;
    let mut chain_breaks = 0;
    let mut per_family = Vec::new();
    for family in 0..4 {
        let mut used = 0;
        let mut seed = 0;
        let mut name = "";
        while used < 20 && seed < 200 {
            let (n, cfg) = family_configs(seed).swap_remove(family);
            name = n;
            seed += 1;
            let scenario = generate_scenario(&cfg).unwrap();
            let cert = certify(&scenario, &cfg).unwrap();
            if cert.c_phi <= 0.0 {
                continue;
            }
            let c = cert.certificate.expect("INJ(T0) holds, so the certificate exists");
            worst_residual = worst_residual.max(c.source_residual);
            worst_alpha = worst_alpha.max((cert.t0.project(&c.alpha).unwrap() - &cert.e0).amax());
            if !cert.ic_chain.unwrap().is_ordered(1e-7) {
                chain_breaks += 1;
            }
            used += 1;
        }
        per_family.push(format!("{name} {used}"));
    }
    let all = per_family.iter().all(|s| s.ends_with(" 20"));
    Outcome {
        pass: all && worst_residual <= 1e-7 && worst_alpha <= 1e-9 && chain_breaks == 0,
        detail: format!(
            "instances [{}], worst source residual {worst_residual:.2e}, worst |α_T0 - e0| {worst_alpha:.2e}, IC chain breaks {chain_breaks}",
            per_family.join(", ")
        ),
    }
}

/// `(trials, trials with valid preconditions, violations, trials whose
/// four checks did not all pass)`.
fn sweep_stats(run: &ScenarioRun) -> (usize, usize, usize, usize) {
    let valid = run.trials.iter().filter(|t| t.check.as_ref().is_some_and(|c| c.preconditions_valid)).count();
    let failed = run.trials.iter().filter(|t| !t.check.as_ref().is_some_and(|c| c.pass_all())).count();
    (run.trials.len(), valid, run.violations(), failed)
}

const EPSILONS: &str = r#""epsilons": [0.001, 0.01, 0.1], "trials": 50"#;

fn bound_configs() -> Vec<(&'static str, ScenarioConfig)> {
    vec![
        ("orthogonal l1", config(&format!(
            r#"{{"seed": 1, {EPSILONS}, "c": 4.0, "dims": {{"m": 16, "n": 16, "p": 16}}, "phi": {{"kind": "identity"}},
               "analysis": {{"kind": "identity"}}, "norm": {{"kind": "l1"}}, "signal": {{"kind": "model_size", "size": 3}}}}"#
        ))),
        ("gaussian tv1d", config(&format!(
            r#"{{"seed": 7, {EPSILONS}, "c": 2.0, "dims": {{"m": 26, "n": 32, "p": 31}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "tv1d"}}, "norm": {{"kind": "l1"}}, "signal": {{"kind": "model_size", "size": 2}}}}"#
        ))),
        ("gaussian tv1d n64", config(&format!(
            r#"{{"seed": 8, {EPSILONS}, "c": 2.0, "dims": {{"m": 52, "n": 64, "p": 63}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "tv1d"}}, "norm": {{"kind": "l1"}}, "signal": {{"kind": "model_size", "size": 3}}}}"#
        ))),
        ("convolution tv2d", config(&format!(
            r#"{{"seed": 3, {EPSILONS}, "c": 2.0, "dims": {{"m": 21, "n": 25, "p": 40}},
               "phi": {{"kind": "convolution", "kernel": [0.25, 0.5, 0.25]}},
               "analysis": {{"kind": "tv2d", "height": 5, "width": 5}}, "norm": {{"kind": "l1"}},
               "signal": {{"kind": "model_size", "size": 6}}}}"#
        ))),
        ("gaussian group", config(&format!(
            r#"{{"seed": 4, {EPSILONS}, "c": 3.0, "dims": {{"m": 9, "n": 12, "p": 12}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "identity"}},
               "norm": {{"kind": "group", "blocks": [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10], [11, 12]]}},
               "signal": {{"kind": "model_size", "size": 1}}}}"#
        ))),
        ("gaussian nuclear", config(&format!(
            r#"{{"seed": 2, {EPSILONS}, "c": 3.0, "dims": {{"m": 7, "n": 9, "p": 9}}, "phi": {{"kind": "gaussian"}},
               "analysis": {{"kind": "identity"}}, "norm": {{"kind": "nuclear", "nrows": 3, "ncols": 3}},
               "signal": {{"kind": "model_size", "size": 1}}}}"#
        ))),
    ]
}

fn criterion_4() -> Outcome {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut guaranteed = 0;
    let mut skipped = 0;
    for (name, base) in bound_configs() {
        let (mut trials, mut valid_all, mut violations_all, mut failed_all, mut max_sat) = (0, 0, 0, 0, 0.0_f64);
        for offset in 0..5 {
            let mut cfg = base.clone();
            cfg.seed += 100 * offset;
            let run = sweep(&cfg).unwrap();
            let Ok(bound) = &run.certification.bound else {
                skipped += 1;
                continue;
            };
            guaranteed += 1;
            max_sat = max_sat.max(bound.saturation);
            let (total, valid, violations, failed) = sweep_stats(&run);
            trials += total;
            valid_all += valid;
            violations_all += violations;
            failed_all += failed;
        }
        // Trials whose only invalid precondition is solver convergence are
        // still checked: every trial must pass.
        pass &= violations_all == 0 && failed_all == 0;
        lines.push(format!(
            "{name}: max sat {max_sat:.3}, {valid_all}/{trials} with all preconditions, {violations_all} violations, {failed_all} failed checks"
        ));
    }
    Outcome {
        pass: pass && guaranteed > 0,
        detail: format!("{guaranteed} guaranteed instances ({skipped} without guarantee skipped); {}", lines.join("; ")),
    }
}

/// Noiseless instance with a one-dimensional `ker(Φ)`. Even indices are
/// degenerate: two equal columns of `Φ`, one of them in the support, so the
/// null space inequality holds with equality.
fn uniqueness_instance(i: usize, rng: &mut ChaCha8Rng) -> (LinearOperator, LinearOperator, DecomposableNorm, Vector) {
    let n = 6;
    let mut a = gaussian(n - 1, n, rng);
    let mut x0 = Vector::zeros(n);
    let analysis = LinearOperator::identity(n);
    if i.is_multiple_of(2) {
        let c = a.column(0).clone_owned();
        a.set_column(1, &c);
        x0[0] = 1.0 + rng.random::<f64>();
        if rng.random_bool(0.5) {
            x0[3] = -1.0 - rng.random::<f64>();
        }
    } else {
        let k = rng.random_range(1..=3);
        for _ in 0..k {
            let idx = rng.random_range(0..n);
            x0[idx] = (1.0 + rng.random::<f64>()) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        }
    }
    (LinearOperator::new(a), analysis, DecomposableNorm::l1(n), x0)
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let opts = SolverOptions::default();
    let (mut matches, mut unique, mut cert_unique, mut cert_breaks) = (0, 0, 0, 0);
    let mut exhaustive = true;
    for i in 0..100 {
        let (phi, analysis, norm, x0) = uniqueness_instance(i, &mut rng);
        let y = phi.apply(&x0).unwrap();
        let u0 = analysis.apply(&x0).unwrap();
        let model = norm.decompose_at(&u0, ACTIVE_TOL).unwrap();
        let t = model.tangent_subspace();
        exhaustive &= phi.kernel_basis(1e-10).dim() == 1;
        let verdict = strong_nsp_check(&phi, &analysis, &t, &model.e, &norm, &NspOptions::default()).unwrap();
        exhaustive &= matches!(verdict.status, UniquenessStatus::UniqueCertified | UniquenessStatus::Violated);
        let problem = Problem::new(phi.clone(), analysis.clone(), norm.clone(), y, 0.0).unwrap();
        let tol = 1e-6 * (1.0 + x0.norm());
        let runs: Vec<Vector> = [1, 2]
            .iter()
            .map(|&s| solve_penalized(&problem, &SolverOptions { seed: Some(s + 10 * i as u64), ..opts }).unwrap().x_star)
            .collect();
        let recovers = runs.iter().all(|x| (x - &x0).norm() <= tol);
        if verdict.is_unique() == recovers {
            matches += 1;
        }
        unique += usize::from(verdict.is_unique());
        let cert = build_certificate_at(&phi, &analysis, &norm, &x0, CertificateMode::Full, &opts);
        if let Ok(cert) = cert {
            let s = Subspace::clone(&t).orthogonal_complement();
            let c_phi = injectivity_constant(&phi, &analysis, &s).unwrap();
            if uniqueness_from_certificate(&cert, c_phi).status == UniquenessStatus::UniqueCertified {
                cert_unique += 1;
                if (&runs[0] - &runs[1]).norm() > tol {
                    cert_breaks += 1;
                }
            }
        }
    }
    Outcome {
        pass: exhaustive && matches == 100 && cert_breaks == 0,
        detail: format!(
            "{matches}/100 verdicts match restarts ({unique} unique, {} violated); certificate-unique {cert_unique} with {cert_breaks} restart disagreements",
            100 - unique
        ),
    }
}

fn criterion_6() -> Outcome {
    let cfg = config(&format!(
        r#"{{"seed": 11, {EPSILONS}, "c": 2.0, "dims": {{"m": 28, "n": 32, "p": 34}}, "phi": {{"kind": "gaussian"}},
           "analysis": {{"kind": "tight_frame"}}, "norm": {{"kind": "l1"}}, "signal": {{"kind": "model_size", "size": 10}},
           "frame_mode": true}}"#
    ));
    let run = sweep(&cfg).unwrap();
    let Ok(bound) = &run.certification.bound else {
        return Outcome { pass: false, detail: "no frame-mode guarantee for the Parseval instance".into() };
    };
    let c2 = (bound.phi_norm + bound.c_phi) / (bound.c_phi * bound.c_a);
    let constants_ok = bound.frame_mode && (bound.c_l - 1.0).abs() <= 1e-9 && (bound.c2 - c2).abs() <= 1e-9 * c2;
    let (total, valid, violations, failed) = sweep_stats(&run);
    Outcome {
        pass: constants_ok && violations == 0 && failed == 0,
        detail: format!(
            "sat {:.3}, C_L = {:.12}, C = {:.4e}, {valid}/{total} with all preconditions, {violations} violations, {failed} failed checks",
            bound.saturation, bound.c_l, bound.total_c
        ),
    }
}

fn criterion_7() -> Outcome {
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut identical = true;
    let mut files = 0;
    for (name, cfg) in bound_configs().into_iter().filter(|(n, _)| !n.contains("tv1d")) {
        let mut cfg = cfg;
        cfg.trials = 3;
        for d in &dirs {
            run_scenario(&cfg, &d.path().join(name)).unwrap();
        }
        for file in ["results.csv", "certificate.csv", "summary.txt"] {
            let a = std::fs::read(dirs[0].path().join(name).join(file));
            let b = std::fs::read(dirs[1].path().join(name).join(file));
            if let (Ok(a), Ok(b)) = (a, b) {
                identical &= a == b;
                files += 1;
            }
        }
    }
    Outcome {
        pass: identical && files >= 8,
        detail: format!("{files} report files compared across two runs, identical = {identical}"),
    }
}

type Criterion = fn() -> Outcome;

fn main() {
    let criteria: [(&str, Criterion); 7] = [
        ("norm identities", criterion_1),
        ("solver vs oracle", criterion_2),
        ("certificates", criterion_3),
        ("stability bounds", criterion_4),
        ("uniqueness", criterion_5),
        ("frame mode", criterion_6),
        ("determinism", criterion_7),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| f == &id || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let verdict = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {id} ({name}): {verdict} [{:.1}s] {}", start.elapsed().as_secs_f64(), out.detail);
        failed += usize::from(!out.pass);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
