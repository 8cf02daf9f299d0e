//! Uniqueness verdicts and stability bounds.
//!
//! The strong null space test evaluates, over unit vectors `h ∈ ker(Φ)`,
//!
//! ```text
//! g(h) = ‖P_S L*h‖ − ⟨P_T L*h, e⟩
//! ```
//!
//! which is the directional derivative of `‖L*·‖` at the minimizer along
//! `h`. Uniqueness holds when `g > 0` on the whole sphere. The primal norm
//! is used here; the condition is often printed with a dual-norm star, but
//! the directional-derivative computation produces the primal norm.
//!
//! The stability constant is assembled as
//!
//! ```text
//! C  = C1 (2 + c‖η‖) + C2 (1 + c‖η‖/2)² / (c (1 − ‖α_S‖*))
//! C1 = 1 / C_Φ
//! C2 = (‖Φ‖ + C_Φ) / (C_L C_Φ C_A)
//! ```
//!
//! with `C_Φ` the injectivity constant of `Φ` on `ker(L_S*)`, `C_L` the
//! smallest nonzero singular value of `L_S*` and `C_A` the coercivity
//! constant of the norm. In frame mode `C_L` becomes `√a` and `C_Φ` is taken
//! on the image of the canonical dual frame restricted to `T`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certificates::{check_source_condition, is_non_saturated, DualCertificate, SourceVerdict, CERTIFICATE_TOL};
use crate::error::{check_dim, Error, Result};
use crate::linops::{restricted_injectivity_constant, LinearOperator, Matrix, Subspace, Vector, RANK_CUTOFF};
use crate::norms::{DecomposableNorm, ACTIVE_TOL};
use crate::solver::{Problem, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UniquenessStatus {
    UniqueCertified,
    UniqueUpToSampling,
    Undecided,
    Violated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniquenessVerdict {
    pub status: UniquenessStatus,
    /// Unit vector of `ker(Φ)` at which the null space inequality fails.
    pub witness: Option<Vector>,
    /// Smallest value of the test function found, when one was evaluated.
    pub min_value: Option<f64>,
}

impl UniquenessVerdict {
    fn status(status: UniquenessStatus) -> Self {
        Self { status, witness: None, min_value: None }
    }

    pub fn is_unique(&self) -> bool {
        matches!(
            self.status,
            UniquenessStatus::UniqueCertified | UniquenessStatus::UniqueUpToSampling
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NspOptions {
    pub restarts: usize,
    pub margin: f64,
    pub seed: u64,
    pub iterations: usize,
}

impl Default for NspOptions {
    fn default() -> Self {
        Self { restarts: 64, margin: 1e-6, seed: 0, iterations: 400 }
    }
}

/// Values of `g` restricted to `ker(Φ)`, in kernel coordinates.
struct NspObjective<'a> {
    norm: &'a DecomposableNorm,
    kernel: Matrix,
    /// `P_S L* K`.
    s_part: Matrix,
    /// `Kᵀ L P_T e`.
    linear: Vector,
}

impl NspObjective<'_> {
    fn value(&self, c: &Vector) -> f64 {
        self.norm.norm_value(&(&self.s_part * c)).expect("dims") - self.linear.dot(c)
    }

    fn subgradient(&self, c: &Vector) -> Vector {
        let v = &self.s_part * c;
        let sub = self.norm.decompose_at(&v, ACTIVE_TOL).expect("dims").e;
        self.s_part.tr_mul(&sub) - &self.linear
    }
}

/// Tests `⟨P_T L*h, e⟩ < ‖P_S L*h‖` for all nonzero `h ∈ ker(Φ)`.
///
/// An injective `Φ` certifies uniqueness outright. A one-dimensional kernel
/// is decided exactly from the two unit vectors `±h`; values within
/// `opts.margin` of zero count as violations. Larger kernels are searched by
/// multi-start projected subgradient descent on the unit sphere, so a
/// positive outcome is only `UniqueUpToSampling`.
pub fn strong_nsp_check(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    t: &Subspace,
    e: &Vector,
    norm: &DecomposableNorm,
    opts: &NspOptions,
) -> Result<UniquenessVerdict> {
    check_dim("strong_nsp_check: L* vs phi", phi.cols(), analysis.cols())?;
    check_dim("strong_nsp_check: subspace", analysis.rows(), t.ambient_dim())?;
    check_dim("strong_nsp_check: e", t.ambient_dim(), e.len())?;
    let kernel = phi.kernel_basis(RANK_CUTOFF);
    if kernel.dim() == 0 {
        return Ok(UniquenessVerdict::status(UniquenessStatus::UniqueCertified));
    }
    let s = t.orthogonal_complement();
    let lk = analysis.matrix() * kernel.basis();
    let obj = NspObjective {
        norm,
        kernel: kernel.basis().clone(),
        s_part: s.projector().matrix() * &lk,
        linear: lk.tr_mul(&t.project(e)?),
    };
    let witness = |c: &Vector| &obj.kernel * c;

    if kernel.dim() == 1 {
        let plus = Vector::from_element(1, 1.0);
        let minus = -&plus;
        let (gp, gm) = (obj.value(&plus), obj.value(&minus));
        let (min, arg) = if gp <= gm { (gp, plus) } else { (gm, minus) };
        return Ok(if min > opts.margin {
            UniquenessVerdict {
                status: UniquenessStatus::UniqueCertified,
                witness: None,
                min_value: Some(min),
            }
        } else {
            UniquenessVerdict {
                status: UniquenessStatus::Violated,
                witness: Some(witness(&arg)),
                min_value: Some(min),
            }
        });
    }

    let k = kernel.dim();
    let mut starts: Vec<Vector> = Vec::with_capacity(opts.restarts + 2 * k);
    for j in 0..k {
        let mut ej = Vector::zeros(k);
        ej[j] = 1.0;
        starts.push(-&ej);
        starts.push(ej);
    }
    for r in 0..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(r as u64));
        let c = Vector::from_fn(k, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        starts.push(c.normalize());
    }
    let (min, arg) = starts
        .into_iter()
        .map(|c| sphere_descent(&obj, c, opts.iterations))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one start");
    Ok(if min <= 0.0 {
        UniquenessVerdict {
            status: UniquenessStatus::Violated,
            witness: Some(witness(&arg)),
            min_value: Some(min),
        }
    } else if min > opts.margin {
        UniquenessVerdict {
            status: UniquenessStatus::UniqueUpToSampling,
            witness: None,
            min_value: Some(min),
        }
    } else {
        UniquenessVerdict {
            status: UniquenessStatus::Undecided,
            witness: Some(witness(&arg)),
            min_value: Some(min),
        }
    })
}

fn sphere_descent(obj: &NspObjective<'_>, start: Vector, iterations: usize) -> (f64, Vector) {
    let mut c = start;
    let mut best = (obj.value(&c), c.clone());
    for it in 0..iterations {
        let g = obj.subgradient(&c);
        let tangent = &g - &c * c.dot(&g);
        let gn = tangent.norm();
        if gn == 0.0 {
            break;
        }
        let step = 0.5 / ((it + 1) as f64).sqrt();
        c = (&c - tangent * (step / gn)).normalize();
        let val = obj.value(&c);
        if val < best.0 {
            best = (val, c.clone());
        }
    }
    best
}

/// Unique iff `‖α_S‖* < 1` (up to [`SATURATION_MARGIN`]) and `C_Φ > 0`
/// (injectivity on `ker(L_S*)`).
///
/// [`SATURATION_MARGIN`]: crate::certificates::SATURATION_MARGIN
pub fn uniqueness_from_certificate(cert: &DualCertificate, c_phi: f64) -> UniquenessVerdict {
    if is_non_saturated(cert.saturation) && c_phi > 0.0 {
        UniquenessVerdict::status(UniquenessStatus::UniqueCertified)
    } else {
        UniquenessVerdict::status(UniquenessStatus::Undecided)
    }
}

/// `C_Φ`: injectivity constant of `Φ` on `ker(P_S L*)`. Values at the
/// numerical-rank floor are reported as zero.
pub fn injectivity_constant(phi: &LinearOperator, analysis: &LinearOperator, s: &Subspace) -> Result<f64> {
    check_dim("injectivity_constant", analysis.rows(), s.ambient_dim())?;
    let l_s_adj = LinearOperator::new(s.projector().matrix() * analysis.matrix());
    let ker = l_s_adj.kernel_basis_below(RANK_CUTOFF * analysis.operator_norm());
    let c = restricted_injectivity_constant(phi, &ker)?;
    Ok(if c <= RANK_CUTOFF * phi.operator_norm() { 0.0 } else { c })
}

fn is_coordinate_aligned(sub: &Subspace) -> bool {
    let p = sub.projector();
    let m = p.matrix();
    (0..m.nrows()).all(|i| {
        (0..m.ncols()).all(|j| {
            let target = if i == j { m[(i, i)].round() } else { 0.0 };
            (m[(i, j)] - target).abs() <= 1e-12 && (0.0..=1.0).contains(&target)
        })
    })
}

/// The weakened test for separable norms: unique iff `‖P_V α‖* < 1` and `Φ`
/// is injective on `ker(L_V*)`.
pub fn separable_uniqueness(
    cert: &DualCertificate,
    t: &Subspace,
    v: &Subspace,
    w: &Subspace,
    norm: &DecomposableNorm,
    phi: &LinearOperator,
    analysis: &LinearOperator,
) -> Result<UniquenessVerdict> {
    if !norm.is_separable() {
        return Err(Error::NotSeparable(format!("{} norm", norm.kind_name())));
    }
    let p = norm.ambient_dim();
    for sub in [t, v, w] {
        check_dim("separable_uniqueness: subspace", p, sub.ambient_dim())?;
    }
    let cross = |a: &Subspace, b: &Subspace| a.basis().tr_mul(b.basis()).amax();
    if v.dim() + w.dim() + t.dim() != p || [cross(v, w), cross(v, t), cross(w, t)].iter().any(|&x| x > 1e-10) {
        return Err(Error::InvalidPartition("V and W must be orthogonal with V ⊕ W = T⊥".into()));
    }
    if !is_coordinate_aligned(v) || !is_coordinate_aligned(w) {
        return Err(Error::InvalidPartition("V and W must be spanned by coordinates".into()));
    }
    if let DecomposableNorm::Group { blocks, .. } = norm {
        let pv = v.projector();
        for b in blocks {
            let inside = b.iter().filter(|&&i| pv.matrix()[(i, i)] > 0.5).count();
            if inside != 0 && inside != b.len() {
                return Err(Error::InvalidPartition("V splits a group block".into()));
            }
        }
    }
    let sat_v = norm.dual_norm_value(&v.project(&cert.alpha)?)?;
    let c_phi = injectivity_constant(phi, analysis, v)?;
    let status = if is_non_saturated(sat_v) && c_phi > 0.0 {
        UniquenessStatus::UniqueCertified
    } else {
        UniquenessStatus::Undecided
    };
    Ok(UniquenessVerdict::status(status))
}

/// Constants of the `ℓ2` stability bound `‖x⋆ − x0‖ <= C ε` under `λ = c ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct StabilityBound {
    pub c: f64,
    pub eta_norm: f64,
    /// `‖P_S α‖*` on the margin subspace.
    pub saturation: f64,
    pub c_phi: f64,
    pub c_l: f64,
    pub c_a: f64,
    pub phi_norm: f64,
    pub c1: f64,
    pub c2: f64,
    pub total_c: f64,
    pub frame_mode: bool,
    /// `S0 = T0⊥`, or `V ⊂ S0` for the separable variant.
    pub margin_subspace: Subspace,
}

impl StabilityBound {
    /// `C1 (2 + c‖η‖) + C2 (1 + c‖η‖/2)² / (c (1 − sat))`.
    pub fn assemble(c: f64, eta_norm: f64, saturation: f64, c1: f64, c2: f64) -> f64 {
        let ce = c * eta_norm;
        c1 * (2.0 + ce) + c2 * (1.0 + ce / 2.0).powi(2) / (c * (1.0 - saturation))
    }
}

/// Builds the stability constants for the certificate `cert` with
/// non-saturation measured on `margin` (normally `S0 = T0⊥`; a subspace `V`
/// of `S0` for separable norms). `frame_lower_bound = Some(a)` switches to
/// frame mode, which requires `ker(L*) = {0}` and `a <= λ_min(LL*)`.
#[allow(clippy::too_many_arguments)]
pub fn stability_constants(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    t0: &Subspace,
    margin: &Subspace,
    cert: &DualCertificate,
    c: f64,
    frame_lower_bound: Option<f64>,
) -> Result<StabilityBound> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("coupling c must be > 0, got {c}")));
    }
    check_dim("stability_constants: margin subspace", analysis.rows(), margin.ambient_dim())?;
    let saturation = norm.dual_norm_value(&margin.project(&cert.alpha)?)?;
    if !is_non_saturated(saturation) {
        return Err(Error::NoStabilityGuarantee(format!("saturation {saturation:.6} is not below 1")));
    }
    let phi_norm = phi.operator_norm();
    let c_a = norm.coercivity_constant();
    let l_m_adj = LinearOperator::new(margin.projector().matrix() * analysis.matrix());

    let (c_phi, c_l) = match frame_lower_bound {
        None => {
            let c_phi = injectivity_constant(phi, analysis, margin)?;
            let cut = RANK_CUTOFF * analysis.operator_norm();
            let c_l = l_m_adj
                .singular_values()
                .into_iter()
                .filter(|&v| v > cut)
                .fold(f64::INFINITY, f64::min);
            (c_phi, c_l)
        }
        Some(a) => {
            let sv = analysis.singular_values();
            let smin = if analysis.rows() >= analysis.cols() {
                sv.last().copied().unwrap_or(0.0)
            } else {
                0.0
            };
            if smin <= RANK_CUTOFF * sv.first().copied().unwrap_or(0.0) {
                return Err(Error::InvalidParameter("frame mode needs ker(L*) = {0}".into()));
            }
            if !(a > 0.0) || a > smin * smin * (1.0 + 1e-9) {
                return Err(Error::InvalidParameter(format!(
                    "frame bound a = {a} must lie in (0, {}]",
                    smin * smin
                )));
            }
            // canonical dual frame synthesis (LL*)⁻¹L
            let l = analysis.matrix().transpose();
            let frame_op = &l * analysis.matrix();
            let dual = frame_op
                .cholesky()
                .ok_or_else(|| Error::InvalidParameter("frame operator not positive definite".into()))?
                .solve(&l);
            let image = Subspace::span(&(dual * t0.projector().matrix()));
            let c = restricted_injectivity_constant(phi, &image)?;
            let c_phi = if c <= RANK_CUTOFF * phi_norm { 0.0 } else { c };
            (c_phi, a.sqrt())
        }
    };
    if !(c_phi > 0.0) {
        return Err(Error::NoStabilityGuarantee("restricted injectivity fails (C_Φ = 0)".into()));
    }
    let c1 = if c_phi.is_infinite() { 0.0 } else { 1.0 / c_phi };
    let c2 = if c_l.is_infinite() {
        0.0
    } else if c_phi.is_infinite() {
        1.0 / (c_l * c_a)
    } else {
        (phi_norm + c_phi) / (c_l * c_phi * c_a)
    };
    let eta_norm = cert.eta_norm();
    Ok(StabilityBound {
        c,
        eta_norm,
        saturation,
        c_phi,
        c_l,
        c_a,
        phi_norm,
        c1,
        c2,
        total_c: StabilityBound::assemble(c, eta_norm, saturation, c1, c2),
        frame_mode: frame_lower_bound.is_some(),
        margin_subspace: margin.clone(),
    })
}

/// `(ε (1 + c‖η‖/2)² / c, ε (2 + c‖η‖))`: Bregman and prediction bounds.
pub fn prediction_bregman_bounds(epsilon: f64, c: f64, eta_norm: f64) -> Result<(f64, f64)> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter(format!("coupling c must be > 0, got {c}")));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let ce = c * eta_norm;
    Ok((epsilon * (1.0 + ce / 2.0).powi(2) / c, epsilon * (2.0 + ce)))
}

/// `D / (C_A (1 − sat))`: bound on `‖L_S*(x⋆ − x0)‖₂`.
pub fn bregman_to_l2(bregman_value: f64, saturation: f64, c_a: f64) -> Result<f64> {
    if !(saturation < 1.0) {
        return Err(Error::NoStabilityGuarantee(format!("saturation {saturation} >= 1")));
    }
    if !(c_a > 0.0) || !(bregman_value >= 0.0) {
        return Err(Error::InvalidParameter("need c_a > 0 and a nonnegative Bregman value".into()));
    }
    Ok(bregman_value / (c_a * (1.0 - saturation)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(observed: f64, bound: f64, slack: f64) -> Self {
        Self {
            observed,
            bound,
            pass: observed <= bound * (1.0 + BOUND_REL_SLACK) + slack,
        }
    }
}

/// Relative slack on every bound.
pub const BOUND_REL_SLACK: f64 = 1e-6;
/// Absolute slack for solver inaccuracy, scaled by `1 + reference size`.
pub const SOLVER_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckReport {
    pub epsilon: f64,
    pub c: f64,
    pub preconditions_valid: bool,
    pub precondition_notes: Vec<String>,
    /// `‖Φx⋆ − Φx0‖₂` against `ε (2 + c‖η‖)`.
    pub prediction: BoundCheck,
    /// `D_α(L*x⋆, L*x0)` against `ε (1 + c‖η‖/2)² / c`.
    pub bregman: BoundCheck,
    /// `‖L_S*(x⋆ − x0)‖₂` against the Bregman bound over `C_A (1 − sat)`.
    pub margin_l2: BoundCheck,
    /// `‖x⋆ − x0‖₂` against `C ε`.
    pub l2: BoundCheck,
}

impl BoundCheckReport {
    pub fn pass_all(&self) -> bool {
        self.prediction.pass && self.bregman.pass && self.margin_l2.pass && self.l2.pass
    }

    /// A bound was exceeded although every hypothesis held.
    pub fn is_violation(&self) -> bool {
        self.preconditions_valid && !self.pass_all()
    }

    pub const CSV_HEADER: [&'static str; 12] = [
        "trial",
        "epsilon",
        "c",
        "observed_pred",
        "bound_pred",
        "observed_bregman",
        "bound_bregman",
        "observed_ls0",
        "bound_ls0",
        "observed_l2",
        "bound_l2",
        "pass_all",
    ];

    pub fn csv_row(&self, trial: usize) -> Vec<String> {
        let f = |v: f64| v.to_string();
        vec![
            trial.to_string(),
            f(self.epsilon),
            f(self.c),
            f(self.prediction.observed),
            f(self.prediction.bound),
            f(self.bregman.observed),
            f(self.bregman.bound),
            f(self.margin_l2.observed),
            f(self.margin_l2.bound),
            f(self.l2.observed),
            f(self.l2.bound),
            self.pass_all().to_string(),
        ]
    }
}

/// Compares the observed errors of a solved instance with the prediction,
/// Bregman, margin and `ℓ2` bounds. Failures never raise; a report whose
/// hypotheses fail (noise above `ε`, `λ ≠ cε`, invalid certificate, solver
/// not converged) is marked with `preconditions_valid = false`.
pub fn verify_bounds(
    problem: &Problem,
    x0: &Vector,
    cert: &DualCertificate,
    epsilon: f64,
    report: &SolveReport,
    bound: &StabilityBound,
) -> Result<BoundCheckReport> {
    let (phi, analysis, norm) = (&problem.phi, &problem.analysis, &problem.norm);
    check_dim("verify_bounds: x0", phi.cols(), x0.len())?;
    let c = bound.c;
    let mut notes = Vec::new();
    let noise = (&problem.y - phi.matrix() * x0).norm();
    if noise > epsilon * (1.0 + 1e-12) + 1e-14 * (1.0 + problem.y.norm()) {
        notes.push(format!("noise norm {noise:.6e} exceeds epsilon {epsilon:.6e}"));
    }
    if (problem.lambda - c * epsilon).abs() > 1e-12 * (1.0 + problem.lambda.abs()) {
        notes.push(format!("lambda {} differs from c*epsilon = {}", problem.lambda, c * epsilon));
    }
    if let SourceVerdict::Invalid(reason) = check_source_condition(phi, analysis, norm, x0, cert, CERTIFICATE_TOL)? {
        notes.push(format!("certificate invalid: {reason}"));
    }
    if !(is_non_saturated(bound.saturation) && bound.c_phi > 0.0) {
        notes.push("no stability guarantee for this certificate".into());
    }
    if !report.converged {
        notes.push(format!("solver not converged (residual {:.3e})", report.optimality_residual));
    }

    let (bregman_bound, prediction_bound) = prediction_bregman_bounds(epsilon, c, bound.eta_norm)?;
    let margin_bound = bregman_to_l2(bregman_bound, bound.saturation, bound.c_a)?;
    let diff = &report.x_star - x0;
    let u_star = analysis.apply(&report.x_star)?;
    let u0 = analysis.apply(x0)?;

    let observed_pred = (phi.matrix() * &diff).norm();
    let observed_bregman = norm
        .bregman(&u_star, &u0, &cert.alpha, CERTIFICATE_TOL)
        .unwrap_or(f64::NAN);
    let observed_margin = bound.margin_subspace.project(&(analysis.matrix() * &diff))?.norm();
    let observed_l2 = diff.norm();

    let size_y = problem.y.norm();
    let size_u = u0.norm();
    let size_x = x0.norm();
    Ok(BoundCheckReport {
        epsilon,
        c,
        preconditions_valid: notes.is_empty(),
        precondition_notes: notes,
        prediction: BoundCheck::new(observed_pred, prediction_bound, SOLVER_SLACK * (1.0 + size_y)),
        bregman: BoundCheck::new(observed_bregman, bregman_bound, SOLVER_SLACK * (1.0 + size_u)),
        margin_l2: BoundCheck::new(observed_margin, margin_bound, SOLVER_SLACK * (1.0 + size_u)),
        l2: BoundCheck::new(observed_l2, bound.total_c * epsilon, SOLVER_SLACK * (1.0 + size_x)),
    })
}
