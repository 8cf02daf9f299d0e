//! First-order primal-dual solver for the penalized problem, the `Ξ` map,
//! the `Γ` operator and the irrepresentable-condition programs.

use nalgebra::linalg::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linops::{restricted_injectivity_constant, LinearOperator, Matrix, Subspace, Vector, RANK_CUTOFF};
use crate::norms::{DecomposableNorm, ACTIVE_TOL};

/// Tolerance for the feasibility checks of `ic_value`.
pub const IC_FEASIBILITY_TOL: f64 = 1e-9;

/// `min_x ½‖y − Φx‖² + λ‖L*x‖`. `analysis` holds `L*` (`P x N`).
///
/// `lambda = 0` denotes the noiseless limit `λ → 0⁺`, whose minimizers are
/// those of `min ‖L*x‖` subject to `Φx = y`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub phi: LinearOperator,
    pub analysis: LinearOperator,
    pub norm: DecomposableNorm,
    pub y: Vector,
    pub lambda: f64,
}

impl Problem {
    pub fn new(
        phi: LinearOperator,
        analysis: LinearOperator,
        norm: DecomposableNorm,
        y: Vector,
        lambda: f64,
    ) -> Result<Self> {
        check_dim("problem: rows of phi vs len(y)", phi.rows(), y.len())?;
        check_dim("problem: cols of L* vs cols of phi", phi.cols(), analysis.cols())?;
        check_dim("problem: rows of L* vs norm dimension", norm.ambient_dim(), analysis.rows())?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        let stacked = LinearOperator::new(stack(phi.matrix(), analysis.matrix()));
        if stacked.kernel_basis(RANK_CUTOFF).dim() > 0 {
            return Err(Error::InvalidParameter(
                "ker(Φ) ∩ ker(L*) is nontrivial; the minimizer set is unbounded".into(),
            ));
        }
        Ok(Self { phi, analysis, norm, y, lambda })
    }

    pub fn with_data(&self, y: Vector, lambda: f64) -> Result<Self> {
        check_dim("problem data", self.phi.rows(), y.len())?;
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(Self { y, lambda, ..self.clone() })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.phi.rows(), self.phi.cols(), self.analysis.rows())
    }

    /// Objective value; for `lambda = 0` this is `‖L*x‖` (the limit problem)
    /// and feasibility is not checked.
    pub fn objective(&self, x: &Vector) -> f64 {
        let reg = self
            .norm
            .norm_value(&(self.analysis.matrix() * x))
            .expect("dimensions validated");
        if self.lambda == 0.0 {
            return reg;
        }
        0.5 * (&self.y - self.phi.matrix() * x).norm_squared() + self.lambda * reg
    }
}

fn stack(top: &Matrix, bottom: &Matrix) -> Matrix {
    let mut k = Matrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    k.rows_mut(0, top.nrows()).copy_from(top);
    k.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    k
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Random primal initialization; `None` starts from zero.
    pub seed: Option<u64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 200_000, seed: None }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("need max_iter >= 1 and tol > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub x_star: Vector,
    pub objective: f64,
    pub optimality_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

const CHECK_EVERY: usize = 10;

/// A saddle problem `min_x F(Kx)` with `G = 0`, solved by Chambolle–Pock.
pub(crate) trait SaddlePoint {
    fn operator(&self) -> &Matrix;
    /// In place `p <- prox_{σF*}(p)`.
    fn dual_prox(&self, p: &mut Vector, sigma: f64);
    /// Stopping measure at `(x, p)`; implementations keep their best iterate.
    fn progress(&mut self, x: &Vector, p: &Vector) -> f64;
}

pub(crate) struct PdOutcome {
    pub iterations: usize,
}

pub(crate) fn chambolle_pock<S: SaddlePoint>(
    problem: &mut S,
    x0: Vector,
    max_iter: usize,
    tol: f64,
) -> PdOutcome {
    let k = problem.operator().clone();
    let knorm = LinearOperator::new(k.clone()).operator_norm();
    let mut x = x0;
    let mut p = Vector::zeros(k.nrows());
    if knorm == 0.0 {
        problem.progress(&x, &p);
        return PdOutcome { iterations: 0 };
    }
    let step = 0.99 / knorm;
    let mut x_bar = x.clone();
    let mut x_old = x.clone();
    let mut kx = Vector::zeros(k.nrows());
    let mut ktp = Vector::zeros(k.ncols());
    if problem.progress(&x, &p) <= tol {
        return PdOutcome { iterations: 0 };
    }
    for it in 1..=max_iter {
        kx.gemv(1.0, &k, &x_bar, 0.0);
        p.axpy(step, &kx, 1.0);
        problem.dual_prox(&mut p, step);
        x_old.copy_from(&x);
        ktp.gemv_tr(1.0, &k, &p, 0.0);
        x.axpy(-step, &ktp, 1.0);
        x_bar.copy_from(&x);
        x_bar.axpy(-1.0, &x_old, 2.0);
        if (it % CHECK_EVERY == 0 || it == max_iter) && problem.progress(&x, &p) <= tol {
            return PdOutcome { iterations: it };
        }
    }
    PdOutcome { iterations: max_iter }
}

struct PenalizedSaddle<'a> {
    problem: &'a Problem,
    k: Matrix,
    phit_y_norm: f64,
    /// `‖L*‖ (‖x‖ + x_floor)` scales the level below which entries of `L*x`
    /// count as zero; `x_floor = ‖Φ*y‖ / ‖K‖²` keeps it away from zero when
    /// the minimizer is.
    l_norm: f64,
    x_floor: f64,
    best: Option<(f64, Vector)>,
}

impl PenalizedSaddle<'_> {
    fn m(&self) -> usize {
        self.problem.phi.rows()
    }
}

impl SaddlePoint for PenalizedSaddle<'_> {
    fn operator(&self) -> &Matrix {
        &self.k
    }

    fn dual_prox(&self, p: &mut Vector, sigma: f64) {
        let m = self.m();
        let lambda = self.problem.lambda;
        {
            let mut fid = p.rows_mut(0, m);
            if lambda > 0.0 {
                fid.axpy(-sigma, &self.problem.y, 1.0);
                fid /= 1.0 + sigma;
            } else {
                fid.axpy(-sigma, &self.problem.y, 1.0);
            }
        }
        let radius = if lambda > 0.0 { lambda } else { 1.0 };
        let q = p.rows(m, p.len() - m).into_owned();
        let q = self.problem.norm.project_dual_ball(&q, radius).expect("dimension checked");
        p.rows_mut(m, q.len()).copy_from(&q);
    }

    fn progress(&mut self, x: &Vector, p: &Vector) -> f64 {
        let pr = self.problem;
        let m = self.m();
        let u = pr.analysis.matrix() * x;
        let cut = ACTIVE_TOL * self.l_norm * (x.norm() + self.x_floor);
        let q = p.rows(m, p.len() - m).into_owned();
        let r = if pr.lambda > 0.0 {
            let alpha = pr.norm.subgradient_readout(&u, &(q / pr.lambda), cut).expect("dims");
            let grad = pr.phi.matrix().tr_mul(&(pr.phi.matrix() * x - &pr.y));
            let l_alpha = pr.analysis.matrix().tr_mul(&alpha);
            (grad + l_alpha * pr.lambda).norm() / (1.0 + self.phit_y_norm)
        } else {
            let alpha = pr.norm.subgradient_readout(&u, &q, cut).expect("dims");
            let eta = p.rows(0, m).into_owned();
            let l_alpha = pr.analysis.matrix().tr_mul(&alpha);
            let phit_eta = pr.phi.matrix().tr_mul(&eta);
            let stationarity = (&phit_eta + &l_alpha).norm() / (1.0 + phit_eta.norm() + l_alpha.norm());
            let feasibility = (pr.phi.matrix() * x - &pr.y).norm() / (1.0 + pr.y.norm());
            stationarity.max(feasibility)
        };
        if self.best.as_ref().is_none_or(|(b, _)| r < *b) {
            self.best = Some((r, x.clone()));
        }
        r
    }
}

/// Minimizes `½‖y − Φx‖² + λ‖L*x‖` by Chambolle–Pock on `K = (Φ; L*)` with
/// `τ = σ = 0.99/‖K‖`. The reported residual is
/// `‖Φ*(Φx − y) + λLα̂‖ / (1 + ‖Φ*y‖)` for a subgradient `α̂` read out of the
/// dual variable; the iterate with the smallest residual is returned.
pub fn solve_penalized(p: &Problem, opts: &SolverOptions) -> Result<SolveReport> {
    opts.validate()?;
    let n = p.phi.cols();
    let x0 = match opts.seed {
        None => Vector::zeros(n),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scale = (1.0 + p.y.norm()) / (n as f64).sqrt();
            Vector::from_fn(n, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
        }
    };
    let k = stack(p.phi.matrix(), p.analysis.matrix());
    let k_norm = LinearOperator::new(k.clone()).operator_norm();
    let phit_y_norm = p.phi.matrix().tr_mul(&p.y).norm();
    let mut saddle = PenalizedSaddle {
        problem: p,
        k,
        phit_y_norm,
        l_norm: p.analysis.operator_norm(),
        x_floor: if k_norm > 0.0 { phit_y_norm / (k_norm * k_norm) } else { 0.0 },
        best: None,
    };
    let outcome = chambolle_pock(&mut saddle, x0, opts.max_iter, opts.tol);
    let (residual, x_star) = saddle.best.expect("progress evaluated at least once");
    Ok(SolveReport {
        objective: p.objective(&x_star),
        x_star,
        optimality_residual: residual,
        iterations: outcome.iterations,
        converged: residual <= opts.tol,
    })
}

/// Operators attached to a model subspace `T` (with `S = T⊥`): `L_S`, its
/// pseudoinverse, the `Ξ` map and the reduced parametrizations of the
/// irrepresentable-condition programs.
#[derive(Debug, Clone)]
pub struct IcGeometry {
    phi: Matrix,
    s: Subspace,
    /// `L_T = L P_T` (`N x P`).
    l_t: Matrix,
    /// `L_S = L P_S` (`N x P`).
    l_s: Matrix,
    l_s_norm: f64,
    l_s_pinv: Matrix,
    im_l_s: Subspace,
    /// `B (BᵀΦᵀΦB)⁻¹ Bᵀ` for an orthonormal basis `B` of `ker(L_S*)`.
    xi: Matrix,
    /// Orthonormal basis of `P_S ker(L_S) = S ∩ ker(L)`.
    u_dirs: Matrix,
    /// Orthonormal basis of `{z : Φ*z ∈ Im(L_S)}`.
    z_basis: Matrix,
}

impl IcGeometry {
    /// Fails with `InjectivityViolated` unless `Φ` is injective on
    /// `ker(L_S*)`.
    pub fn new(phi: &LinearOperator, analysis: &LinearOperator, t: &Subspace) -> Result<Self> {
        check_dim("IC geometry: cols of L* vs cols of phi", phi.cols(), analysis.cols())?;
        check_dim("IC geometry: subspace vs rows of L*", analysis.rows(), t.ambient_dim())?;
        let s = t.orthogonal_complement();
        let l = analysis.matrix().transpose();
        let l_t = &l * t.projector().matrix();
        let l_s = &l * s.projector().matrix();
        // L_S can be numerically zero while L is not, so every rank decision
        // on it is taken relative to ‖L‖.
        let cut = RANK_CUTOFF * analysis.operator_norm();
        let l_s_op = LinearOperator::new(l_s.clone());
        let l_s_norm = l_s_op.operator_norm();
        let l_s_pinv = l_s_op.pseudoinverse_above(cut).into_matrix();
        let im_l_s = l_s_op.range_basis_above(cut);

        let ker = l_s_op.adjoint().kernel_basis_below(cut);
        let c_phi = restricted_injectivity_constant(phi, &ker)?;
        let n = phi.cols();
        let xi = if ker.dim() == 0 {
            Matrix::zeros(n, n)
        } else {
            if !(c_phi > RANK_CUTOFF * phi.operator_norm()) {
                return Err(Error::InjectivityViolated(format!(
                    "Φ restricted to ker(L_S*) has smallest singular value {c_phi:.3e}"
                )));
            }
            let pb = phi.matrix() * ker.basis();
            let gram = pb.tr_mul(&pb);
            let chol = Cholesky::new(gram).ok_or_else(|| {
                Error::InjectivityViolated("Gram matrix on ker(L_S*) not positive definite".into())
            })?;
            ker.basis() * chol.solve(&ker.basis().transpose())
        };

        let ker_l_s = l_s_op.kernel_basis_below(cut);
        let u_dirs = Subspace::span_above(&(s.projector().matrix() * ker_l_s.basis()), RANK_CUTOFF)
            .basis()
            .clone();

        let outside = im_l_s.orthogonal_complement();
        let constraint = outside.basis().transpose() * phi.matrix().transpose();
        let z_basis = if outside.dim() == 0 {
            Matrix::identity(phi.rows(), phi.rows())
        } else {
            LinearOperator::new(constraint)
                .kernel_basis_below(RANK_CUTOFF * phi.operator_norm())
                .basis()
                .clone()
        };

        Ok(Self {
            phi: phi.matrix().clone(),
            s,
            l_t,
            l_s,
            l_s_norm,
            l_s_pinv,
            im_l_s,
            xi,
            u_dirs,
            z_basis,
        })
    }

    pub fn normal_subspace(&self) -> &Subspace {
        &self.s
    }

    /// `Ξh = argmin_{x ∈ ker(L_S*)} ½‖Φx‖² − ⟨h, x⟩`.
    pub fn xi_apply(&self, h: &Vector) -> Result<Vector> {
        check_dim("xi_map", self.xi.ncols(), h.len())?;
        Ok(&self.xi * h)
    }

    /// `Γv = (L_S)⁺(Φ*ΦΞ − Id)L_T v`.
    pub fn gamma_apply(&self, v: &Vector) -> Result<Vector> {
        check_dim("gamma_apply", self.l_t.ncols(), v.len())?;
        let ltv = &self.l_t * v;
        let inner = self.phi.tr_mul(&(&self.phi * (&self.xi * &ltv))) - ltv;
        Ok(&self.l_s_pinv * inner)
    }

    /// `L_S` as a matrix (`N x P`).
    pub fn l_s(&self) -> &Matrix {
        &self.l_s
    }

    pub fn l_t(&self) -> &Matrix {
        &self.l_t
    }

    /// `(L_S)⁺ Φ* z`.
    pub fn z_term(&self, z: &Vector) -> Result<Vector> {
        check_dim("z term", self.phi.nrows(), z.len())?;
        Ok(&self.l_s_pinv * self.phi.tr_mul(z))
    }

    /// `IC_{u,z}(T, e) = ‖Γe + u_S + (L_S)⁺Φ*z‖*`, after checking
    /// `u ∈ ker(L_S)` and `Φ*z ∈ Im(L_S)`.
    pub fn ic_value(&self, norm: &DecomposableNorm, e: &Vector, u: &Vector, z: &Vector) -> Result<f64> {
        check_dim("ic_value: u", self.l_s.ncols(), u.len())?;
        let lsu = (&self.l_s * u).norm();
        if lsu > IC_FEASIBILITY_TOL * (1.0_f64).max(self.l_s_norm * u.norm()) {
            return Err(Error::Infeasible(format!("u is not in ker(L_S): ‖L_S u‖ = {lsu:.3e}")));
        }
        check_dim("ic_value: z", self.phi.nrows(), z.len())?;
        let phit_z = self.phi.tr_mul(z);
        let off = self.im_l_s.distance(&phit_z)?;
        if off > IC_FEASIBILITY_TOL * (1.0_f64).max(phit_z.norm()) {
            return Err(Error::Infeasible(format!(
                "Φ*z is not in Im(L_S): distance {off:.3e}"
            )));
        }
        let v = self.gamma_apply(e)? + self.s.project(u)? + &self.l_s_pinv * phit_z;
        norm.dual_norm_value(&v)
    }

    fn minimize(&self, norm: &DecomposableNorm, e: &Vector, with_z: bool, opts: &SolverOptions) -> Result<IcSolution> {
        opts.validate()?;
        check_dim("IC program: norm vs P", norm.ambient_dim(), self.l_s.ncols())?;
        let g = self.gamma_apply(e)?;
        let z_dirs = if with_z {
            &self.l_s_pinv * self.phi.tr_mul(&self.z_basis)
        } else {
            Matrix::zeros(g.len(), 0)
        };
        let (ku, kz) = (self.u_dirs.ncols(), z_dirs.ncols());
        let mut d = Matrix::zeros(g.len(), ku + kz);
        d.columns_mut(0, ku).copy_from(&self.u_dirs);
        d.columns_mut(ku, kz).copy_from(&z_dirs);
        let scale = 1.0_f64.max(LinearOperator::new(self.l_s_pinv.clone()).operator_norm() * LinearOperator::new(self.phi.clone()).operator_norm());
        let q = Subspace::span_above(&d, RANK_CUTOFF * scale).basis().clone();

        let mut saddle = IcSaddle {
            norm,
            g: g.clone(),
            q: q.clone(),
            best_primal: None,
            best_dual: f64::NEG_INFINITY,
        };
        let outcome = chambolle_pock(&mut saddle, Vector::zeros(q.ncols()), opts.max_iter, opts.tol);
        let (_, v) = saddle.best_primal.clone().expect("progress evaluated");
        let gap = saddle.gap();

        let w = LinearOperator::new(d).pseudoinverse().into_matrix() * (&q * v);
        let u = &self.u_dirs * w.rows(0, ku);
        let z = if with_z {
            &self.z_basis * w.rows(ku, kz)
        } else {
            Vector::zeros(self.phi.nrows())
        };
        let value = self.ic_value(norm, e, &u, &z)?;
        Ok(IcSolution {
            u,
            z,
            value,
            gap,
            iterations: outcome.iterations,
            converged: gap <= opts.tol * (1.0 + value.abs()),
        })
    }

    /// `(ū, z̄, IC_{ū,z̄}(T, e))`.
    pub fn minimize_full(&self, norm: &DecomposableNorm, e: &Vector, opts: &SolverOptions) -> Result<IcSolution> {
        self.minimize(norm, e, true, opts)
    }

    /// `(u̲, IC_{u̲,0}(T, e))`.
    pub fn minimize_u(&self, norm: &DecomposableNorm, e: &Vector, opts: &SolverOptions) -> Result<IcSolution> {
        self.minimize(norm, e, false, opts)
    }

    pub fn u_dims(&self) -> usize {
        self.u_dirs.ncols()
    }

    pub fn z_dims(&self) -> usize {
        self.z_basis.ncols()
    }
}

/// Minimizer of an irrepresentable-condition program.
#[derive(Debug, Clone, PartialEq)]
pub struct IcSolution {
    pub u: Vector,
    pub z: Vector,
    pub value: f64,
    /// Certified primal-dual gap.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// `min_v ‖g + Qv‖*` with `Q` orthonormal; the dual is
/// `max ⟨p, g⟩ s.t. ‖p‖ <= 1, Qᵀp = 0`.
struct IcSaddle<'a> {
    norm: &'a DecomposableNorm,
    g: Vector,
    q: Matrix,
    best_primal: Option<(f64, Vector)>,
    best_dual: f64,
}

impl IcSaddle<'_> {
    fn gap(&self) -> f64 {
        let primal = self.best_primal.as_ref().map_or(f64::INFINITY, |b| b.0);
        (primal - self.best_dual).max(0.0)
    }
}

impl SaddlePoint for IcSaddle<'_> {
    fn operator(&self) -> &Matrix {
        &self.q
    }

    fn dual_prox(&self, p: &mut Vector, sigma: f64) {
        p.axpy(sigma, &self.g, 1.0);
        *p = self.norm.project_primal_ball(p, 1.0).expect("dims");
    }

    fn progress(&mut self, v: &Vector, p: &Vector) -> f64 {
        let primal = self.norm.dual_norm_value(&(&self.g + &self.q * v)).expect("dims");
        if self.best_primal.as_ref().is_none_or(|(b, _)| primal < *b) {
            self.best_primal = Some((primal, v.clone()));
        }
        let feasible = p - &self.q * self.q.tr_mul(p);
        let scale = self.norm.norm_value(&feasible).expect("dims").max(1.0);
        self.best_dual = self.best_dual.max(feasible.dot(&self.g) / scale);
        let best = self.best_primal.as_ref().map_or(primal, |b| b.0);
        self.gap() / (1.0 + best.abs())
    }
}

pub fn xi_map(phi: &LinearOperator, analysis: &LinearOperator, t: &Subspace, h: &Vector) -> Result<Vector> {
    IcGeometry::new(phi, analysis, t)?.xi_apply(h)
}

pub fn gamma_apply(phi: &LinearOperator, analysis: &LinearOperator, t: &Subspace, v: &Vector) -> Result<Vector> {
    IcGeometry::new(phi, analysis, t)?.gamma_apply(v)
}

pub fn ic_value(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    t: &Subspace,
    e: &Vector,
    u: &Vector,
    z: &Vector,
) -> Result<f64> {
    IcGeometry::new(phi, analysis, t)?.ic_value(norm, e, u, z)
}

pub fn minimize_ic_full(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    t: &Subspace,
    e: &Vector,
    opts: &SolverOptions,
) -> Result<IcSolution> {
    IcGeometry::new(phi, analysis, t)?.minimize_full(norm, e, opts)
}

pub fn minimize_ic_u(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    t: &Subspace,
    e: &Vector,
    opts: &SolverOptions,
) -> Result<IcSolution> {
    IcGeometry::new(phi, analysis, t)?.minimize_u(norm, e, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn gaussian_vec(n: usize, rng: &mut ChaCha8Rng) -> Vector {
        Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
    }

    /// Orthonormal basis of the null space, computed by nalgebra's SVD
    /// without going through `LinearOperator`.
    fn null_space(a: &Matrix, tol: f64) -> Matrix {
        let n = a.ncols();
        let mut padded = Matrix::zeros(a.nrows().max(n), n);
        padded.rows_mut(0, a.nrows()).copy_from(a);
        let svd = padded.svd(false, true);
        let vt = svd.v_t.unwrap();
        let idx: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= tol).collect();
        Matrix::from_fn(n, idx.len(), |r, c| vt[(idx[c], r)])
    }

    /// Random `(Φ, L*, T, e)` with `T` spanned by `k` coordinates and `e`
    /// a sign pattern on them.
    fn instance(m: usize, n: usize, p: usize, k: usize, rng: &mut ChaCha8Rng) -> (LinearOperator, LinearOperator, Subspace, Vector) {
        let phi = LinearOperator::new(gaussian(m, n, rng));
        let analysis = LinearOperator::new(gaussian(p, n, rng));
        let support: Vec<usize> = (0..k).collect();
        let t = Subspace::coordinates(p, &support).unwrap();
        let e = Vector::from_fn(p, |i, _| if i < k { if i % 2 == 0 { 1.0 } else { -1.0 } } else { 0.0 });
        (phi, analysis, t, e)
    }

    fn opts() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn soft_threshold_example() {
        let id = LinearOperator::identity(2);
        let p = Problem::new(id.clone(), id, DecomposableNorm::l1(2), v(&[2.0, 0.5]), 1.0).unwrap();
        let r = solve_penalized(&p, &opts()).unwrap();
        assert!(r.converged);
        assert!((&r.x_star - v(&[1.0, 0.0])).norm() < 1e-8);
    }

    #[test]
    fn zero_data_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = LinearOperator::new(gaussian(4, 6, &mut rng));
        let p = Problem::new(phi, LinearOperator::identity(6), DecomposableNorm::l1(6), Vector::zeros(4), 0.3).unwrap();
        let r = solve_penalized(&p, &opts()).unwrap();
        assert!(r.x_star.norm() < 1e-9);
        assert!(r.converged);
    }

    #[test]
    fn converged_means_residual_below_tol() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = LinearOperator::new(gaussian(4, 6, &mut rng));
        let y = gaussian_vec(4, &mut rng);
        let p = Problem::new(phi, LinearOperator::identity(6), DecomposableNorm::l1(6), y, 0.1).unwrap();
        let loose = SolverOptions { tol: 1e-6, ..opts() };
        let r = solve_penalized(&p, &loose).unwrap();
        assert!(r.converged && r.optimality_residual <= 1e-6);
        let starved = SolverOptions { max_iter: 3, ..opts() };
        let r = solve_penalized(&p, &starved).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn restarts_share_the_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Duplicate columns make the minimizer non-unique.
        let mut a = gaussian(4, 6, &mut rng);
        let c0 = a.column(0).clone_owned();
        a.set_column(1, &c0);
        let y = gaussian_vec(4, &mut rng);
        let p = Problem::new(LinearOperator::new(a), LinearOperator::identity(6), DecomposableNorm::l1(6), y.clone(), 0.1)
            .unwrap();
        let r1 = solve_penalized(&p, &SolverOptions { seed: Some(1), ..opts() }).unwrap();
        let r2 = solve_penalized(&p, &SolverOptions { seed: Some(2), ..opts() }).unwrap();
        let gap = (p.phi.matrix() * (&r1.x_star - &r2.x_star)).norm();
        assert!(gap <= 1e-6 * y.norm(), "image gap {gap:e}");
    }

    #[test]
    fn rejects_unbounded_problems() {
        let phi = LinearOperator::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let analysis = LinearOperator::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let err = Problem::new(phi, analysis, DecomposableNorm::l1(1), v(&[1.0]), 1.0);
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn xi_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = gaussian(3, 3, &mut rng);
        let phi = LinearOperator::new(a.clone());
        let id = LinearOperator::identity(3);
        let h = v(&[0.3, -1.0, 2.0]);
        // S = {0}: unconstrained normal equations.
        let xi = xi_map(&phi, &id, &Subspace::full(3), &h).unwrap();
        let direct = (a.transpose() * &a).try_inverse().unwrap() * &h;
        assert!((xi - direct).norm() < 1e-9);
        // Orthonormal Φ, L = Id: projection onto T.
        let t = Subspace::coordinates(3, &[0, 2]).unwrap();
        let xi = xi_map(&id, &id, &t, &h).unwrap();
        assert!((xi - v(&[0.3, 0.0, 2.0])).norm() < 1e-12);
    }

    #[test]
    fn xi_optimality_on_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (phi, analysis, t, _) = instance(5, 6, 8, 4, &mut rng);
            let geom = IcGeometry::new(&phi, &analysis, &t).unwrap();
            let l_s_adj = geom.l_s().transpose();
            let b = null_space(&l_s_adj, 1e-9 * analysis.operator_norm());
            let h = geom.l_t() * gaussian_vec(8, &mut rng);
            let xi = geom.xi_apply(&h).unwrap();
            let residual = phi.matrix().tr_mul(&(phi.matrix() * &xi)) - &h;
            assert!((b.tr_mul(&residual)).norm() < 1e-9 * (1.0 + h.norm()));
            // Ξh itself lies in ker(L_S*).
            assert!((&l_s_adj * &xi).norm() < 1e-9 * (1.0 + xi.norm()));
        }
    }

    #[test]
    fn gamma_vanishes_for_orthogonal_design() {
        let id = LinearOperator::identity(4);
        let t = Subspace::coordinates(4, &[1, 3]).unwrap();
        let g = gamma_apply(&id, &id, &t, &v(&[0.0, 1.0, 0.0, -1.0])).unwrap();
        assert!(g.norm() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (phi, analysis, t, _) = instance(4, 5, 6, 2, &mut rng);
        assert!(gamma_apply(&phi, &analysis, &t, &Vector::zeros(6)).unwrap().norm() == 0.0);
    }

    #[test]
    fn l_s_gamma_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let (phi, analysis, t, _) = instance(5, 6, 8, 3, &mut rng);
            let geom = IcGeometry::new(&phi, &analysis, &t).unwrap();
            let x = gaussian_vec(8, &mut rng);
            let lhs = geom.l_s() * geom.gamma_apply(&x).unwrap();
            let ltv = geom.l_t() * &x;
            let rhs = phi.matrix().tr_mul(&(phi.matrix() * geom.xi_apply(&ltv).unwrap())) - ltv;
            assert!((lhs - &rhs).norm() < 1e-9 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn orthogonal_design_ic_is_zero() {
        let id = LinearOperator::identity(4);
        let l1 = DecomposableNorm::l1(4);
        let t = Subspace::coordinates(4, &[0]).unwrap();
        let e = v(&[1.0, 0.0, 0.0, 0.0]);
        let full = minimize_ic_full(&id, &id, &l1, &t, &e, &opts()).unwrap();
        let u = minimize_ic_u(&id, &id, &l1, &t, &e, &opts()).unwrap();
        assert!(full.value.abs() < 1e-12 && u.value.abs() < 1e-12);
        assert!(full.u.norm() < 1e-12 && full.z.norm() < 1e-12);
        let zero = ic_value(&id, &id, &l1, &t, &e, &Vector::zeros(4), &Vector::zeros(4)).unwrap();
        assert!(zero.abs() < 1e-12);
    }

    #[test]
    fn trivial_u_program_is_the_zero_value() {
        // L = Id: ker(L_S) = T, so u_S = 0 for every feasible u.
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let phi = LinearOperator::new(gaussian(4, 5, &mut rng));
        let id = LinearOperator::identity(5);
        let l1 = DecomposableNorm::l1(5);
        let t = Subspace::coordinates(5, &[0, 1]).unwrap();
        let e = v(&[1.0, -1.0, 0.0, 0.0, 0.0]);
        let geom = IcGeometry::new(&phi, &id, &t).unwrap();
        assert_eq!(geom.u_dims(), 0);
        let u = geom.minimize_u(&l1, &e, &opts()).unwrap();
        let zero = geom.ic_value(&l1, &e, &Vector::zeros(5), &Vector::zeros(4)).unwrap();
        assert!((u.value - zero).abs() < 1e-12);
    }

    #[test]
    fn ic_chain_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l1 = DecomposableNorm::l1(10);
        for _ in 0..20 {
            let (phi, analysis, t, e) = instance(7, 8, 10, 3, &mut rng);
            let geom = IcGeometry::new(&phi, &analysis, &t).unwrap();
            let zero = geom.ic_value(&l1, &e, &Vector::zeros(10), &Vector::zeros(7)).unwrap();
            let u = geom.minimize_u(&l1, &e, &opts()).unwrap();
            let full = geom.minimize_full(&l1, &e, &opts()).unwrap();
            assert!(full.value <= u.value + 1e-7 && u.value <= zero + 1e-7, "{} {} {}", full.value, u.value, zero);
        }
    }

    #[test]
    fn ic_minimum_beats_random_feasible_probes() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let l1 = DecomposableNorm::l1(10);
        // Redundant analysis operator (P > N) so both u and z directions exist.
        let (phi, analysis, t, e) = instance(6, 8, 10, 4, &mut rng);
        let geom = IcGeometry::new(&phi, &analysis, &t).unwrap();
        let full = geom.minimize_full(&l1, &e, &opts()).unwrap();
        let cut = 1e-9 * analysis.operator_norm();
        let ker_l_s = null_space(geom.l_s(), cut);
        let im_l_s = geom.l_s().clone().svd(true, false);
        let rank = im_l_s.singular_values.iter().filter(|&&s| s > cut).count();
        let u_basis = im_l_s.u.unwrap().columns(0, rank).clone_owned();
        let outside = Matrix::identity(8, 8) - &u_basis * u_basis.transpose();
        let z_basis = null_space(&(outside * phi.matrix().transpose()), 1e-9 * phi.operator_norm());
        assert!(ker_l_s.ncols() > 0 && z_basis.ncols() > 0);
        for _ in 0..1000 {
            let u = &ker_l_s * gaussian_vec(ker_l_s.ncols(), &mut rng);
            let z = &z_basis * gaussian_vec(z_basis.ncols(), &mut rng);
            let probe = geom.ic_value(&l1, &e, &u, &z).unwrap();
            assert!(full.value <= probe + 1e-7, "{} > {}", full.value, probe);
        }
    }

    /// Zooming grid search over the coefficients of the feasible
    /// directions: each round keeps a window two grid steps wide around
    /// the best point. Convexity keeps the minimizer inside.
    fn grid_oracle(g: &Vector, d: &Matrix) -> f64 {
        let k = d.ncols();
        let f = |w: &Vector| (g + d * w).amax();
        if k == 0 {
            return g.amax();
        }
        let steps = 40usize;
        let mut center = Vector::zeros(k);
        let mut half = 10.0 * (1.0 + g.norm()) * d.clone().pseudo_inverse(1e-12).unwrap().norm();
        let mut best = f(&center);
        for _ in 0..30 {
            let h = 2.0 * half / steps as f64;
            let total = (steps + 1).pow(k as u32);
            let mut next = center.clone();
            for idx in 0..total {
                let mut rem = idx;
                let w = Vector::from_fn(k, |i, _| {
                    let c = rem % (steps + 1);
                    rem /= steps + 1;
                    center[i] - half + h * c as f64
                });
                let val = f(&w);
                if val < best {
                    best = val;
                    next = w;
                }
            }
            center = next;
            half = 2.0 * h;
        }
        best
    }

    #[test]
    fn ic_matches_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let l1 = DecomposableNorm::l1(4);
        for k in [1, 2, 1, 2] {
            let (phi, analysis, t, e) = instance(3, 4, 4, k, &mut rng);
            let geom = IcGeometry::new(&phi, &analysis, &t).unwrap();
            let full = geom.minimize_full(&l1, &e, &opts()).unwrap();
            // Independent recomputation of Γe and the z directions.
            let l = analysis.matrix().transpose();
            let ps = t.orthogonal_complement().projector().into_matrix();
            let l_s = &l * &ps;
            let pinv = l_s.clone().pseudo_inverse(1e-9).unwrap();
            let b = null_space(&l_s.transpose(), 1e-9);
            let a = phi.matrix();
            let ab = a * &b;
            let xi = &b * (ab.transpose() * &ab).try_inverse().unwrap() * b.transpose();
            let lte = &l * t.projector().matrix() * &e;
            let g = &pinv * (a.transpose() * (a * (&xi * &lte)) - &lte);
            let proj_im = &l_s * &pinv;
            let outside = Matrix::identity(4, 4) - proj_im;
            let z_basis = null_space(&(outside * a.transpose()), 1e-9);
            let d = &pinv * a.transpose() * z_basis;
            let oracle = grid_oracle(&g, &d);
            assert!((full.value - oracle).abs() <= 1e-4, "{} vs {}", full.value, oracle);
        }
    }

    #[test]
    fn ic_value_formula_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let l1 = DecomposableNorm::l1(8);
        let (phi, analysis, t, e) = instance(6, 6, 8, 3, &mut rng);
        let geom = IcGeometry::new(&phi, &analysis, &t).unwrap();
        let l = analysis.matrix().transpose();
        let ps = t.orthogonal_complement().projector().into_matrix();
        let l_s = &l * &ps;
        let pinv = l_s.clone().pseudo_inverse(1e-9).unwrap();
        let ker = null_space(&l_s, 1e-9);
        let u = &ker * gaussian_vec(ker.ncols(), &mut rng);
        let a = phi.matrix();
        let b = null_space(&l_s.transpose(), 1e-9);
        let ab = a * &b;
        let xi = &b * (ab.transpose() * &ab).try_inverse().unwrap() * b.transpose();
        let lte = &l * t.projector().matrix() * &e;
        let gamma_e = &pinv * (a.transpose() * (a * (&xi * &lte)) - &lte);
        let outside = Matrix::identity(6, 6) - &l_s * &pinv;
        let zb = null_space(&(outside * a.transpose()), 1e-9);
        let z = &zb * gaussian_vec(zb.ncols(), &mut rng);
        let expected = (gamma_e + &ps * &u + &pinv * a.transpose() * &z).amax();
        let got = geom.ic_value(&l1, &e, &u, &z).unwrap();
        assert!((got - expected).abs() < 1e-9 * (1.0 + expected));
        // e = 0 drops the Γe term.
        let got0 = geom.ic_value(&l1, &Vector::zeros(8), &u, &z).unwrap();
        let expected0 = (&ps * &u + &pinv * a.transpose() * &z).amax();
        assert!((got0 - expected0).abs() < 1e-9 * (1.0 + expected0));
    }

    #[test]
    fn ic_value_rejects_infeasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let l1 = DecomposableNorm::l1(8);
        let (phi, analysis, t, e) = instance(6, 6, 8, 3, &mut rng);
        let geom = IcGeometry::new(&phi, &analysis, &t).unwrap();
        let bad_u = geom.ic_value(&l1, &e, &Vector::from_element(8, 1.0), &Vector::zeros(6));
        assert!(matches!(bad_u, Err(Error::Infeasible(m)) if m.contains("ker(L_S)")));
    }
}
