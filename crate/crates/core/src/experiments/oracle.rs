//! Brute-force reference solver for tiny instances: averaged subgradient
//! descent followed by a polish on candidate models.
//!
//! For ℓ1 and group norms every set of active blocks is a candidate: `x` is
//! restricted to the kernel of the inactive rows of `L*`, where the
//! objective is smooth, and damped Newton runs there. For the nuclear norm it uses the factorization
//! `L*x = vec(UVᵀ)` with `‖UVᵀ‖* = min (‖U‖² + ‖V‖²)/2`, which needs `L*`
//! to have full row rank.

use crate::error::{Error, Result};
use crate::linops::{thin_svd, LinearOperator, Matrix, Vector, RANK_CUTOFF};
use crate::norms::{DecomposableNorm, ACTIVE_TOL};
use crate::solver::{Problem, SolveReport, SolverOptions};

pub const ORACLE_MAX_DIM: usize = 8;
const SUBGRADIENT_CAP: usize = 10_000_000;
const THRESHOLDS: [f64; 5] = [1e-2, 1e-3, 1e-4, 1e-6, 1e-9];
/// Residual below which an oracle solution is reported as converged.
pub const ORACLE_RESIDUAL_TOL: f64 = 1e-7;

/// Reference minimizer for `N, P <= 8` and `λ > 0`. The subgradient phase
/// runs `min(opts.max_iter, 10⁷)` iterations; the returned point is the best
/// of the subgradient iterates and every polished candidate.
pub fn oracle_solve(p: &Problem, opts: &SolverOptions) -> Result<SolveReport> {
    let (_, n, pp) = p.dims();
    if n > ORACLE_MAX_DIM || pp > ORACLE_MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "oracle is limited to N, P <= {ORACLE_MAX_DIM}, got N = {n}, P = {pp}"
        )));
    }
    if !(p.lambda > 0.0) {
        return Err(Error::InvalidParameter("oracle needs lambda > 0".into()));
    }
    if opts.max_iter == 0 {
        return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
    }
    let iterations = opts.max_iter.min(SUBGRADIENT_CAP);
    let (sub_best, sub_avg) = subgradient_phase(p, iterations);

    let mut best = (p.objective(&sub_best), sub_best.clone());
    let mut consider = |x: Vector| {
        let f = p.objective(&x);
        if f.is_finite() && f < best.0 {
            best = (f, x);
        }
    };
    consider(sub_avg.clone());
    let l_norm = p.analysis.operator_norm();
    for start in [&sub_best, &sub_avg] {
        match &p.norm {
            DecomposableNorm::Nuclear { nrows, ncols } => {
                let levels = model_levels(&p.norm, &p.analysis.apply(start)?);
                let largest = levels.iter().copied().fold(0.0, f64::max);
                let mut ranks: Vec<usize> = THRESHOLDS
                    .iter()
                    .flat_map(|&thr| [thr * largest, thr * l_norm * start.norm()])
                    .map(|cut| levels.iter().filter(|&&v| v > cut).count().max(1))
                    .chain([levels.len()])
                    .collect();
                ranks.sort_unstable();
                ranks.dedup();
                for rank in ranks {
                    if let Some(x) = polish_low_rank(p, *nrows, *ncols, start, rank) {
                        consider(x);
                    }
                }
            }
            DecomposableNorm::L1 { .. } | DecomposableNorm::Group { .. } => {
                let blocks = coordinate_blocks(&p.norm);
                // Every active set is tried, so the model is never guessed.
                let nb = blocks.len();
                for mask in 0..(1usize << nb) {
                    let active: Vec<usize> = (0..nb).filter(|&b| mask & (1 << b) != 0).collect();
                    if let Some(x) = polish_blocks(p, &blocks, &active, start) {
                        consider(x);
                    }
                }
            }
        }
    }
    let (objective, x_star) = best;
    let residual = first_order_residual(p, &x_star);
    Ok(SolveReport {
        objective,
        optimality_residual: residual,
        iterations,
        converged: residual <= ORACLE_RESIDUAL_TOL,
        x_star,
    })
}

fn subgradient_phase(p: &Problem, iterations: usize) -> (Vector, Vector) {
    let phi = p.phi.matrix();
    let l_adj = p.analysis.matrix();
    let n = phi.ncols();
    let lip = p.phi.operator_norm().powi(2) + p.lambda * p.analysis.operator_norm().powi(2);
    let t0 = 1.0 / lip.max(f64::MIN_POSITIVE);
    let mut x = Vector::zeros(n);
    let mut avg = Vector::zeros(n);
    let mut weight = 0.0;
    let mut best = (p.objective(&x), x.clone());
    for k in 0..iterations {
        let u = l_adj * &x;
        let s = p.norm.decompose_at(&u, 0.0).expect("dims").e;
        let g = phi.tr_mul(&(phi * &x - &p.y)) + l_adj.tr_mul(&s) * p.lambda;
        let t = t0 / ((k + 1) as f64).sqrt();
        x.axpy(-t, &g, 1.0);
        weight += t;
        avg.axpy(t / weight, &(&x - &avg), 1.0);
        if k % 64 == 63 || k + 1 == iterations {
            let f = p.objective(&x);
            if f < best.0 {
                best = (f, x.clone());
            }
        }
    }
    (best.1, avg)
}

/// Entry magnitudes (ℓ1), block norms (group) or singular values (nuclear).
fn model_levels(norm: &DecomposableNorm, u: &Vector) -> Vec<f64> {
    match norm {
        DecomposableNorm::L1 { .. } => u.iter().map(|v| v.abs()).collect(),
        DecomposableNorm::Group { blocks, .. } => blocks
            .iter()
            .map(|b| b.iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt())
            .collect(),
        DecomposableNorm::Nuclear { nrows, ncols } => {
            thin_svd(&Matrix::from_column_slice(*nrows, *ncols, u.as_slice())).s
        }
    }
}

/// Blocks of a coordinate norm; the nuclear norm has none.
fn coordinate_blocks(norm: &DecomposableNorm) -> Vec<Vec<usize>> {
    match norm {
        DecomposableNorm::L1 { dim } => (0..*dim).map(|i| vec![i]).collect(),
        DecomposableNorm::Group { blocks, .. } => blocks.clone(),
        DecomposableNorm::Nuclear { .. } => Vec::new(),
    }
}

fn pinv_solve(h: &Matrix, g: &Vector) -> Vector {
    LinearOperator::new(h.clone()).pseudoinverse().matrix() * g
}

/// Smooth objective on `x = Bc` with the inactive rows of `L*` forced to
/// zero, minimized by damped Newton with backtracking on the full
/// objective.
fn polish_blocks(p: &Problem, blocks: &[Vec<usize>], active: &[usize], start: &Vector) -> Option<Vector> {
    let l_adj = p.analysis.matrix();
    let zero_rows: Vec<usize> = (0..blocks.len())
        .filter(|b| !active.contains(b))
        .flat_map(|b| blocks[b].clone())
        .collect();
    let n = l_adj.ncols();
    let mut c_rows = Matrix::zeros(zero_rows.len(), n);
    for (dst, &src) in zero_rows.iter().enumerate() {
        c_rows.set_row(dst, &l_adj.row(src));
    }
    let basis = LinearOperator::new(c_rows).kernel_basis(RANK_CUTOFF).basis().clone();
    if basis.ncols() == 0 {
        return Some(Vector::zeros(n));
    }
    let phi_b = p.phi.matrix() * &basis;
    let l_b = l_adj * &basis;
    let f = |c: &Vector| p.objective(&(&basis * c));
    let mut c = basis.tr_mul(start);
    let mut fc = f(&c);
    for _ in 0..100 {
        let lc = &l_b * &c;
        let mut grad = phi_b.tr_mul(&(&phi_b * &c - &p.y));
        let mut hess = phi_b.tr_mul(&phi_b);
        for &b in active {
            let idx = &blocks[b];
            let v = Vector::from_iterator(idx.len(), idx.iter().map(|&i| lc[i]));
            let nv = v.norm();
            if nv == 0.0 {
                continue;
            }
            let mut rows = Matrix::zeros(idx.len(), l_b.ncols());
            for (dst, &src) in idx.iter().enumerate() {
                rows.set_row(dst, &l_b.row(src));
            }
            let vhat = &v / nv;
            grad += rows.tr_mul(&vhat) * p.lambda;
            let curvature = (Matrix::identity(idx.len(), idx.len()) - &vhat * vhat.transpose()) / nv;
            hess += rows.tr_mul(&(curvature * &rows)) * p.lambda;
        }
        let step = -pinv_solve(&hess, &grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &c + &step * t;
            let ft = f(&trial);
            if ft < fc {
                c = trial;
                let decrease = fc - ft;
                fc = ft;
                accepted = decrease > 1e-16 * (1.0 + fc.abs());
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Some(&basis * c)
}

/// Gradient descent with Barzilai–Borwein steps on
/// `½‖y − Φ(A⁺vec(UVᵀ) + Kc)‖² + λ(‖U‖² + ‖V‖²)/2`, where `A = L*` and
/// `K` spans `ker(L*)`.
fn polish_low_rank(p: &Problem, nrows: usize, ncols: usize, start: &Vector, r: usize) -> Option<Vector> {
    let a = &p.analysis;
    let sv = a.singular_values();
    if a.rows() > a.cols() || sv.last().is_none_or(|&s| s <= RANK_CUTOFF * sv[0]) {
        return None;
    }
    let a_pinv = a.pseudoinverse().into_matrix();
    let ker = a.kernel_basis(RANK_CUTOFF).basis().clone();
    let phi = p.phi.matrix();
    let lam = p.lambda;

    let u0 = a.apply(start).ok()?;
    let m0 = Matrix::from_column_slice(nrows, ncols, u0.as_slice());
    let svd = thin_svd(&m0);
    let smax = svd.s.first().copied().unwrap_or(0.0);

    // packed variable: [vec(U) (nrows*r), vec(V) (ncols*r), c]
    let (nu, nv, nk) = (nrows * r, ncols * r, ker.ncols());
    let mut z = Vector::zeros(nu + nv + nk);
    for k in 0..r {
        let root = svd.s.get(k).copied().unwrap_or(0.0).sqrt().max(1e-3 * smax.sqrt());
        for i in 0..nrows {
            z[k * nrows + i] = svd.u[(i, k)] * root;
        }
        for j in 0..ncols {
            z[nu + k * ncols + j] = svd.v[(j, k)] * root;
        }
    }
    z.rows_mut(nu + nv, nk).copy_from(&ker.tr_mul(start));

    let unpack = |z: &Vector| {
        let uu = Matrix::from_column_slice(nrows, r, z.rows(0, nu).as_slice());
        let vv = Matrix::from_column_slice(ncols, r, z.rows(nu, nv).as_slice());
        let c = z.rows(nu + nv, nk).into_owned();
        (uu, vv, c)
    };
    let to_x = |uu: &Matrix, vv: &Matrix, c: &Vector| {
        let m = uu * vv.transpose();
        &a_pinv * Vector::from_column_slice(m.as_slice()) + &ker * c
    };
    let value_grad = |z: &Vector| {
        let (uu, vv, c) = unpack(z);
        let x = to_x(&uu, &vv, &c);
        let res = phi * &x - &p.y;
        let f = 0.5 * res.norm_squared() + 0.5 * lam * (uu.norm_squared() + vv.norm_squared());
        let gx = phi.tr_mul(&res);
        let gm_vec = a_pinv.tr_mul(&gx);
        let gm = Matrix::from_column_slice(nrows, ncols, gm_vec.as_slice());
        let gu = &gm * &vv + &uu * lam;
        let gv = gm.tr_mul(&uu) + &vv * lam;
        let mut g = Vector::zeros(z.len());
        g.rows_mut(0, nu).copy_from_slice(gu.as_slice());
        g.rows_mut(nu, nv).copy_from_slice(gv.as_slice());
        g.rows_mut(nu + nv, nk).copy_from(&ker.tr_mul(&gx));
        (f, g)
    };

    let (mut f, mut g) = value_grad(&z);
    let mut best = (f, z.clone());
    let mut step = 1e-2 / (1.0 + p.phi.operator_norm().powi(2));
    for _ in 0..200_000 {
        if g.norm() <= 1e-15 * (1.0 + f.abs()) {
            break;
        }
        let z_new = &z - &g * step;
        let (f_new, g_new) = value_grad(&z_new);
        if !f_new.is_finite() || f_new > f + 1e3 * (1.0 + f.abs()) {
            step *= 0.1;
            continue;
        }
        let s = &z_new - &z;
        let yk = &g_new - &g;
        let sy = s.dot(&yk);
        step = if sy > 0.0 { s.norm_squared() / sy } else { step * 2.0 };
        z = z_new;
        f = f_new;
        g = g_new;
        if f < best.0 {
            best = (f, z.clone());
        }
    }
    let (uu, vv, c) = unpack(&best.1);
    Some(to_x(&uu, &vv, &c))
}

/// `‖Φ*(Φx − y) + λLα‖ / (1 + ‖Φ*y‖)` for the subgradient `α` at `L*x`
/// whose normal part is the clipped least-squares fit.
pub fn first_order_residual(p: &Problem, x: &Vector) -> f64 {
    let phi = p.phi.matrix();
    let l_adj = p.analysis.matrix();
    let u = l_adj * x;
    let k_norm = (p.phi.operator_norm().powi(2) + p.analysis.operator_norm().powi(2)).sqrt();
    let x_floor = if k_norm > 0.0 { phi.tr_mul(&p.y).norm() / (k_norm * k_norm) } else { 0.0 };
    let model = match p.norm.decompose_above(&u, ACTIVE_TOL * p.analysis.operator_norm() * (x.norm() + x_floor)) {
        Ok(m) => m,
        Err(_) => return f64::INFINITY,
    };
    let grad = phi.tr_mul(&(phi * x - &p.y));
    let base = &grad + l_adj.tr_mul(&model.e) * p.lambda;
    let pp = u.len();
    let mut ls = Matrix::zeros(x.len(), pp);
    for i in 0..pp {
        let mut ei = Vector::zeros(pp);
        ei[i] = 1.0;
        ls.set_column(i, &(l_adj.tr_mul(&model.project_normal(&ei)) * p.lambda));
    }
    let w = -pinv_solve(&ls, &base);
    let normal = model.project_normal(&w);
    let clipped = model.project_normal(&p.norm.project_dual_ball(&normal, 1.0).expect("dims"));
    let r = base + l_adj.tr_mul(&clipped) * p.lambda;
    r.norm() / (1.0 + phi.tr_mul(&p.y).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn soft_threshold_closed_form() {
        let id = LinearOperator::identity(3);
        let y = v(&[2.0, 0.5, -1.5]);
        let p = Problem::new(id.clone(), id, DecomposableNorm::l1(3), y, 1.0).unwrap();
        let r = oracle_solve(&p, &SolverOptions { max_iter: 20_000, ..Default::default() }).unwrap();
        assert!((&r.x_star - v(&[1.0, 0.0, -0.5])).amax() < 1e-8);
    }

    #[test]
    fn large_lambda_gives_zero() {
        let phi = LinearOperator::from_rows(&[vec![1.0, 0.5], vec![0.0, 1.0]]).unwrap();
        let p = Problem::new(phi, LinearOperator::identity(2), DecomposableNorm::l1(2), v(&[1.0, 2.0]), 100.0).unwrap();
        let r = oracle_solve(&p, &SolverOptions { max_iter: 20_000, ..Default::default() }).unwrap();
        assert!(r.x_star.amax() < 1e-10);
    }

    #[test]
    fn guards() {
        let id = LinearOperator::identity(9);
        let p = Problem::new(id.clone(), id, DecomposableNorm::l1(9), Vector::zeros(9), 1.0).unwrap();
        assert!(oracle_solve(&p, &SolverOptions::default()).is_err());
        let id = LinearOperator::identity(2);
        let p = Problem::new(id.clone(), id, DecomposableNorm::l1(2), Vector::zeros(2), 0.0).unwrap();
        assert!(oracle_solve(&p, &SolverOptions::default()).is_err());
    }
}
