//! Scenario generation, the reference oracle, and the sweep that checks the
//! stability bounds on generated instances.

mod oracle;
mod report;
mod scenario;

pub use oracle::{first_order_residual, oracle_solve, ORACLE_MAX_DIM, ORACLE_RESIDUAL_TOL};
pub use report::{error_vs_eps_svg, write_results_csv};
pub use scenario::{
    circular_convolution, gaussian_matrix, gaussian_vector, generate_scenario, random_parseval_frame, tv1d, tv2d,
    AnalysisKind, Dims, NoiseDraw, PhiKind, Scenario, ScenarioConfig, SignalSpec,
};

use std::fmt::Write as _;
use std::path::Path;

use crate::certificates::{assemble_certificate, CertificateMode, DualCertificate};
use crate::error::{Error, Result};
use crate::guarantees::{
    injectivity_constant, stability_constants, strong_nsp_check, uniqueness_from_certificate, verify_bounds,
    BoundCheck, BoundCheckReport, NspOptions, StabilityBound, UniquenessVerdict,
};
use crate::linops::{Subspace, Vector};
use crate::norms::ACTIVE_TOL;
use crate::solver::{solve_penalized, IcGeometry, Problem, SolveReport};

/// The three irrepresentable-condition values `IC_{0,0} >= IC_{u̲,0} >= IC_{ū,z̄}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcChain {
    pub zero: f64,
    pub u_only: f64,
    pub full: f64,
}

impl IcChain {
    pub fn is_ordered(&self, tol: f64) -> bool {
        self.full <= self.u_only + tol && self.u_only <= self.zero + tol
    }
}

/// Everything derived from `x0` alone: model, certificate, constants and
/// uniqueness verdicts for noiseless data.
#[derive(Debug, Clone)]
pub struct Certification {
    pub t0: Subspace,
    pub e0: Vector,
    pub certificate: std::result::Result<DualCertificate, String>,
    pub ic_chain: Option<IcChain>,
    pub c_phi: f64,
    pub bound: std::result::Result<StabilityBound, String>,
    pub certificate_verdict: Option<UniquenessVerdict>,
    pub nsp_verdict: std::result::Result<UniquenessVerdict, String>,
}

/// Builds the model of `L*x0`, the IC chain, the certificate in `mode`, the
/// stability constants (frame mode uses `a = σ_min(L*)²`) and both
/// uniqueness verdicts. Stage failures are recorded, not raised.
pub fn certify(s: &Scenario, cfg: &ScenarioConfig) -> Result<Certification> {
    let u0 = s.analysis.apply(&s.x0)?;
    let model = s.norm.decompose_at(&u0, ACTIVE_TOL)?;
    let t0 = model.tangent_subspace();
    let s0 = t0.orthogonal_complement();
    let e0 = model.e.clone();
    let c_phi = injectivity_constant(&s.phi, &s.analysis, &s0)?;
    let nsp_verdict = strong_nsp_check(&s.phi, &s.analysis, &t0, &e0, &s.norm, &NspOptions {
        seed: cfg.seed,
        ..NspOptions::default()
    })
    .map_err(|e| e.to_string());

    let mut ic_chain = None;
    let certificate = (|| -> Result<DualCertificate> {
        let geom = IcGeometry::new(&s.phi, &s.analysis, &t0)?;
        let (p, m) = (s.analysis.rows(), s.phi.rows());
        let zero = geom.ic_value(&s.norm, &e0, &Vector::zeros(p), &Vector::zeros(m))?;
        let u_sol = geom.minimize_u(&s.norm, &e0, &cfg.solver)?;
        let full_sol = geom.minimize_full(&s.norm, &e0, &cfg.solver)?;
        ic_chain = Some(IcChain { zero, u_only: u_sol.value, full: full_sol.value });
        let (u, z, converged) = match cfg.certificate_mode {
            CertificateMode::Full => (full_sol.u, full_sol.z, full_sol.converged),
            CertificateMode::UOnly => (u_sol.u, u_sol.z, u_sol.converged),
            CertificateMode::Zero => (Vector::zeros(p), Vector::zeros(m), true),
        };
        assemble_certificate(&geom, &s.phi, &s.analysis, &s.norm, &e0, &u, &z, cfg.certificate_mode, converged)
    })()
    .map_err(|e| e.to_string());

    let bound = match &certificate {
        Err(e) => Err(format!("no certificate: {e}")),
        Ok(cert) => {
            let frame = if cfg.frame_mode {
                let sv = s.analysis.singular_values();
                let smin = if s.analysis.rows() >= s.analysis.cols() { sv.last().copied().unwrap_or(0.0) } else { 0.0 };
                Some(smin * smin)
            } else {
                None
            };
            stability_constants(&s.phi, &s.analysis, &s.norm, &t0, &s0, cert, cfg.c, frame).map_err(|e| e.to_string())
        }
    };
    let certificate_verdict = certificate.as_ref().ok().map(|c| uniqueness_from_certificate(c, c_phi));
    Ok(Certification {
        t0,
        e0,
        certificate,
        ic_chain,
        c_phi,
        bound,
        certificate_verdict,
        nsp_verdict,
    })
}

/// `Problem` for one draw with `λ = c ε`.
pub fn problem_for(s: &Scenario, draw: &NoiseDraw, c: f64) -> Result<Problem> {
    Problem::new(
        s.phi.clone(),
        s.analysis.clone(),
        s.norm.clone(),
        draw.y.clone(),
        c * draw.epsilon,
    )
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub epsilon: f64,
    pub trial: usize,
    pub solve: Option<SolveReport>,
    pub check: Option<BoundCheckReport>,
    pub error: Option<String>,
}

impl TrialOutcome {
    pub fn is_violation(&self) -> bool {
        self.check.as_ref().is_some_and(|c| c.is_violation())
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub scenario: Scenario,
    pub certification: Certification,
    pub trials: Vec<TrialOutcome>,
}

impl ScenarioRun {
    pub fn violations(&self) -> usize {
        self.trials.iter().filter(|t| t.is_violation()).count()
    }

    /// `1` iff some bound failed under valid preconditions, else `0`.
    pub fn exit_code(&self) -> i32 {
        if self.violations() > 0 {
            1
        } else {
            0
        }
    }

    pub fn summary_text(&self) -> String {
        let cfg = &self.config;
        let cert = &self.certification;
        let mut out = String::new();
        let Dims { m, n, p } = cfg.dims;
        let _ = writeln!(out, "seed: {}", cfg.seed);
        let _ = writeln!(out, "dims: M={m} N={n} P={p}");
        let _ = writeln!(out, "norm: {}", self.scenario.norm.kind_name());
        let _ = writeln!(out, "model_dim: {}", cert.t0.dim());
        let _ = writeln!(out, "certificate_mode: {}", mode_name(cfg.certificate_mode));
        match &cert.ic_chain {
            Some(ic) => {
                let _ = writeln!(out, "ic_zero: {}", ic.zero);
                let _ = writeln!(out, "ic_u_only: {}", ic.u_only);
                let _ = writeln!(out, "ic_full: {}", ic.full);
            }
            None => {
                let _ = writeln!(out, "ic_chain: unavailable");
            }
        }
        match &cert.certificate {
            Ok(c) => {
                let _ = writeln!(out, "saturation: {}", c.saturation);
                let _ = writeln!(out, "source_residual: {}", c.source_residual);
                let _ = writeln!(out, "eta_norm: {}", c.eta_norm());
                let _ = writeln!(out, "guarantee: {}", if c.has_guarantee() { "yes" } else { "no-guarantee" });
            }
            Err(e) => {
                let _ = writeln!(out, "certificate: failed ({e})");
            }
        }
        let _ = writeln!(out, "c_phi: {}", cert.c_phi);
        match &cert.bound {
            Ok(b) => {
                let _ = writeln!(out, "frame_mode: {}", b.frame_mode);
                let _ = writeln!(out, "c_l: {}", b.c_l);
                let _ = writeln!(out, "c1: {}", b.c1);
                let _ = writeln!(out, "c2: {}", b.c2);
                let _ = writeln!(out, "total_c: {}", b.total_c);
            }
            Err(e) => {
                let _ = writeln!(out, "stability: unavailable ({e})");
            }
        }
        if let Some(v) = &cert.certificate_verdict {
            let _ = writeln!(out, "uniqueness_certificate: {}", status_name(v));
        }
        match &cert.nsp_verdict {
            Ok(v) => {
                let _ = writeln!(out, "uniqueness_strong_nsp: {}", status_name(v));
            }
            Err(e) => {
                let _ = writeln!(out, "uniqueness_strong_nsp: failed ({e})");
            }
        }
        let valid = self
            .trials
            .iter()
            .filter(|t| t.check.as_ref().is_some_and(|c| c.preconditions_valid))
            .count();
        let passed = self
            .trials
            .iter()
            .filter(|t| t.check.as_ref().is_some_and(|c| c.pass_all()))
            .count();
        let _ = writeln!(out, "trials: {}", self.trials.len());
        let _ = writeln!(out, "trials_valid_preconditions: {valid}");
        let _ = writeln!(out, "trials_pass_all: {passed}");
        let _ = writeln!(out, "violations: {}", self.violations());
        for t in &self.trials {
            if let Some(e) = &t.error {
                let _ = writeln!(out, "error: epsilon={} trial={}: {e}", t.epsilon, t.trial);
            }
        }
        out
    }

    /// Writes `results.csv`, `summary.txt` and, when enabled and at least
    /// one `ε > 0` exists, `error_vs_eps.svg`.
    pub fn write_reports(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        write_results_csv(&self.trials, std::fs::File::create(out_dir.join("results.csv"))?)?;
        std::fs::write(out_dir.join("summary.txt"), self.summary_text())?;
        if self.config.plot {
            if let Some(svg) = error_vs_eps_svg(self) {
                std::fs::write(out_dir.join("error_vs_eps.svg"), svg)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn mode_name(m: CertificateMode) -> &'static str {
    match m {
        CertificateMode::Full => "full",
        CertificateMode::UOnly => "u_only",
        CertificateMode::Zero => "zero",
    }
}

pub fn status_name(v: &UniquenessVerdict) -> &'static str {
    use crate::guarantees::UniquenessStatus::*;
    match v.status {
        UniqueCertified => "unique_certified",
        UniqueUpToSampling => "unique_up_to_sampling",
        Undecided => "undecided",
        Violated => "violated",
    }
}

/// Observed errors with `NaN` bounds, for trials without stability
/// constants.
fn unguarded_check(s: &Scenario, cert: Option<&DualCertificate>, draw: &NoiseDraw, c: f64, rep: &SolveReport) -> BoundCheckReport {
    let diff = &rep.x_star - &s.x0;
    let observed_bregman = cert
        .and_then(|cert| {
            let u = s.analysis.apply(&rep.x_star).ok()?;
            let u0 = s.analysis.apply(&s.x0).ok()?;
            s.norm.bregman(&u, &u0, &cert.alpha, crate::certificates::CERTIFICATE_TOL).ok()
        })
        .unwrap_or(f64::NAN);
    let nan = |observed: f64| BoundCheck { observed, bound: f64::NAN, pass: false };
    BoundCheckReport {
        epsilon: draw.epsilon,
        c,
        preconditions_valid: false,
        precondition_notes: vec!["no stability guarantee".into()],
        prediction: nan((s.phi.matrix() * &diff).norm()),
        bregman: nan(observed_bregman),
        margin_l2: nan(f64::NAN),
        l2: nan(diff.norm()),
    }
}

/// Solves every draw of the scenario and checks the bounds. Per-trial
/// failures land in [`TrialOutcome::error`].
pub fn sweep(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    let scenario = generate_scenario(cfg)?;
    let certification = certify(&scenario, cfg)?;
    let mut trials = Vec::with_capacity(scenario.draws.len());
    for draw in &scenario.draws {
        let mut outcome = TrialOutcome {
            epsilon: draw.epsilon,
            trial: draw.trial,
            solve: None,
            check: None,
            error: None,
        };
        let result = problem_for(&scenario, draw, cfg.c).and_then(|problem| {
            let rep = solve_penalized(&problem, &cfg.solver)?;
            let check = match (&certification.certificate, &certification.bound) {
                (Ok(cert), Ok(bound)) => verify_bounds(&problem, &scenario.x0, cert, draw.epsilon, &rep, bound)?,
                (cert, _) => unguarded_check(&scenario, cert.as_ref().ok(), draw, cfg.c, &rep),
            };
            Ok((rep, check))
        });
        match result {
            Ok((rep, check)) => {
                outcome.solve = Some(rep);
                outcome.check = Some(check);
            }
            Err(e) => outcome.error = Some(e.to_string()),
        }
        trials.push(outcome);
    }
    Ok(ScenarioRun { config: cfg.clone(), scenario, certification, trials })
}

/// [`sweep`] followed by [`ScenarioRun::write_reports`].
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path) -> Result<ScenarioRun> {
    let run = sweep(cfg)?;
    run.write_reports(out_dir)?;
    Ok(run)
}

/// Solver against oracle on one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleComparison {
    pub epsilon: f64,
    pub trial: usize,
    pub objective_solver: f64,
    pub objective_oracle: f64,
    pub agree: bool,
}

/// Relative agreement threshold `|f_s − f_o| <= 1e−6 (1 + |f_o|)`.
pub const ORACLE_AGREEMENT_TOL: f64 = 1e-6;

/// Compares [`solve_penalized`] with [`oracle_solve`] on every draw with
/// `ε > 0`.
pub fn oracle_compare(cfg: &ScenarioConfig) -> Result<Vec<OracleComparison>> {
    let scenario = generate_scenario(cfg)?;
    let Dims { n, p, .. } = cfg.dims;
    if n > ORACLE_MAX_DIM || p > ORACLE_MAX_DIM {
        return Err(Error::Config(format!("oracle-compare needs N, P <= {ORACLE_MAX_DIM}")));
    }
    let mut out = Vec::new();
    for draw in scenario.draws.iter().filter(|d| d.epsilon > 0.0) {
        let problem = problem_for(&scenario, draw, cfg.c)?;
        let fs = solve_penalized(&problem, &cfg.solver)?.objective;
        let fo = oracle_solve(&problem, &cfg.solver)?.objective;
        out.push(OracleComparison {
            epsilon: draw.epsilon,
            trial: draw.trial,
            objective_solver: fs,
            objective_oracle: fo,
            agree: (fs - fo).abs() <= ORACLE_AGREEMENT_TOL * (1.0 + fo.abs()),
        });
    }
    Ok(out)
}
