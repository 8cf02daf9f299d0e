//! Decomposable norms (ℓ1, group ℓ1-ℓ2, nuclear): values, duals, proximity
//! operators, model subspaces `(T, e)`, subgradient tests and Bregman
//! distances.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linops::{thin_svd, Matrix, Subspace, Vector};

/// Relative threshold for support, active-block and rank detection.
pub const ACTIVE_TOL: f64 = 1e-8;

/// A decomposable norm on `R^P`.
#[derive(Debug, Clone, PartialEq)]
pub enum DecomposableNorm {
    L1 { dim: usize },
    /// Blocks are 0-based, disjoint and cover `0..dim`.
    Group { dim: usize, blocks: Vec<Vec<usize>> },
    /// `P = nrows * ncols`; vectors are matrices vectorized column-major.
    Nuclear { nrows: usize, ncols: usize },
}

/// Norm description as it appears in configuration files. Group indices are
/// 1-based there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormSpec {
    L1,
    Group { blocks: Vec<Vec<usize>> },
    Nuclear { nrows: usize, ncols: usize },
}

impl NormSpec {
    pub fn build(&self, dim: usize) -> Result<DecomposableNorm> {
        match self {
            NormSpec::L1 => Ok(DecomposableNorm::l1(dim)),
            NormSpec::Group { blocks } => {
                let zero_based = blocks
                    .iter()
                    .map(|b| {
                        b.iter()
                            .map(|&i| {
                                i.checked_sub(1).ok_or_else(|| {
                                    Error::Config("group indices are 1-based".into())
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                DecomposableNorm::group(dim, zero_based)
            }
            NormSpec::Nuclear { nrows, ncols } => {
                let norm = DecomposableNorm::nuclear(*nrows, *ncols);
                check_dim("nuclear nrows*ncols", dim, norm.ambient_dim())?;
                Ok(norm)
            }
        }
    }
}

/// Outcome of a subgradient membership test.
#[derive(Debug, Clone, PartialEq)]
pub enum Membership {
    Member,
    NotMember(String),
}

impl Membership {
    pub fn is_member(&self) -> bool {
        matches!(self, Membership::Member)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ModelShape {
    Coordinates { active: Vec<bool> },
    LowRank { nrows: usize, ncols: usize, u: Matrix, v: Matrix },
}

/// Split `T⊥ = V ⊕ W` of a separable norm.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableSplit {
    pub v: Subspace,
    pub w: Subspace,
}

/// The model subspace `T` and vector `e ∈ T` describing the subdifferential
/// at a point: `∂‖·‖(u) = {α : P_T α = e, ‖P_{T⊥} α‖* <= 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionModel {
    pub e: Vector,
    pub separable: Option<SeparableSplit>,
    shape: ModelShape,
}

impl DecompositionModel {
    pub fn ambient_dim(&self) -> usize {
        self.e.len()
    }

    pub fn project_tangent(&self, x: &Vector) -> Vector {
        x - self.project_normal(x)
    }

    /// Projection onto `S = T⊥`.
    pub fn project_normal(&self, x: &Vector) -> Vector {
        match &self.shape {
            ModelShape::Coordinates { active } => Vector::from_fn(x.len(), |i, _| {
                if active[i] {
                    0.0
                } else {
                    x[i]
                }
            }),
            ModelShape::LowRank { nrows, ncols, u, v } => {
                let z = DMatrix::from_column_slice(*nrows, *ncols, x.as_slice());
                let left = &z - u * u.tr_mul(&z);
                let both = &left - (&left * v) * v.transpose();
                Vector::from_column_slice(both.as_slice())
            }
        }
    }

    pub fn tangent_subspace(&self) -> Subspace {
        match &self.shape {
            ModelShape::Coordinates { active } => {
                let idx: Vec<usize> = (0..active.len()).filter(|&i| active[i]).collect();
                Subspace::coordinates(active.len(), &idx).expect("indices in range")
            }
            ModelShape::LowRank { nrows, ncols, u, v } => {
                let (m, n, r) = (*nrows, *ncols, u.ncols());
                let u_perp = Subspace::from_orthonormal_unchecked(u.clone()).orthogonal_complement();
                let mut basis = Matrix::zeros(m * n, r * n + u_perp.dim() * r);
                let mut k = 0;
                for i in 0..r {
                    for j in 0..n {
                        let mut b = Matrix::zeros(m, n);
                        b.set_column(j, &u.column(i));
                        basis.set_column(k, &Vector::from_column_slice(b.as_slice()));
                        k += 1;
                    }
                }
                for l in 0..u_perp.dim() {
                    for j in 0..r {
                        let b = u_perp.basis().column(l) * v.column(j).transpose();
                        basis.set_column(k, &Vector::from_column_slice(b.as_slice()));
                        k += 1;
                    }
                }
                Subspace::from_orthonormal_unchecked(basis)
            }
        }
    }

    pub fn normal_subspace(&self) -> Subspace {
        match &self.shape {
            ModelShape::Coordinates { active } => {
                let idx: Vec<usize> = (0..active.len()).filter(|&i| !active[i]).collect();
                Subspace::coordinates(active.len(), &idx).expect("indices in range")
            }
            ModelShape::LowRank { .. } => self.tangent_subspace().orthogonal_complement(),
        }
    }

    pub fn tangent_dim(&self) -> usize {
        match &self.shape {
            ModelShape::Coordinates { active } => active.iter().filter(|&&a| a).count(),
            ModelShape::LowRank { nrows, ncols, u, .. } => {
                let r = u.ncols();
                r * (nrows + ncols - r)
            }
        }
    }
}

fn soft_threshold(x: f64, t: f64) -> f64 {
    x.signum() * (x.abs() - t).max(0.0)
}

/// Euclidean projection of a nonnegative vector onto `{s >= 0, Σ s <= r}`.
fn project_nonneg_l1_ball(s: &[f64], radius: f64) -> Vec<f64> {
    if s.iter().sum::<f64>() <= radius {
        return s.to_vec();
    }
    let theta = l1_ball_threshold(s, radius);
    s.iter().map(|&v| (v - theta).max(0.0)).collect()
}

/// Threshold `θ` such that `Σ max(|s_i| - θ, 0) = r`, assuming `Σ|s_i| > r`.
fn l1_ball_threshold(s: &[f64], radius: f64) -> f64 {
    let mut sorted: Vec<f64> = s.iter().map(|v| v.abs()).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (k, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let t = (cumsum - radius) / (k + 1) as f64;
        if v > t {
            theta = t;
        } else {
            break;
        }
    }
    theta.max(0.0)
}

impl DecomposableNorm {
    pub fn l1(dim: usize) -> Self {
        DecomposableNorm::L1 { dim }
    }

    pub fn group(dim: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; dim];
        for block in &blocks {
            if block.is_empty() {
                return Err(Error::InvalidPartition("empty group block".into()));
            }
            for &i in block {
                if i >= dim {
                    return Err(Error::InvalidPartition(format!(
                        "index {} outside 1..{dim}",
                        i + 1
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidPartition(format!(
                        "index {} appears in two blocks",
                        i + 1
                    )));
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "index {} not covered by any block",
                i + 1
            )));
        }
        Ok(DecomposableNorm::Group { dim, blocks })
    }

    pub fn nuclear(nrows: usize, ncols: usize) -> Self {
        DecomposableNorm::Nuclear { nrows, ncols }
    }

    pub fn ambient_dim(&self) -> usize {
        match self {
            DecomposableNorm::L1 { dim } | DecomposableNorm::Group { dim, .. } => *dim,
            DecomposableNorm::Nuclear { nrows, ncols } => nrows * ncols,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DecomposableNorm::L1 { .. } => "l1",
            DecomposableNorm::Group { .. } => "group",
            DecomposableNorm::Nuclear { .. } => "nuclear",
        }
    }

    /// ℓ1 and group norms split additively over any union of coordinates /
    /// blocks; the nuclear norm does not.
    pub fn is_separable(&self) -> bool {
        !matches!(self, DecomposableNorm::Nuclear { .. })
    }

    pub fn spec(&self) -> NormSpec {
        match self {
            DecomposableNorm::L1 { .. } => NormSpec::L1,
            DecomposableNorm::Group { blocks, .. } => NormSpec::Group {
                blocks: blocks
                    .iter()
                    .map(|b| b.iter().map(|i| i + 1).collect())
                    .collect(),
            },
            DecomposableNorm::Nuclear { nrows, ncols } => NormSpec::Nuclear {
                nrows: *nrows,
                ncols: *ncols,
            },
        }
    }

    fn check(&self, context: &'static str, u: &Vector) -> Result<()> {
        check_dim(context, self.ambient_dim(), u.len())
    }

    fn as_matrix(&self, u: &Vector) -> Matrix {
        let DecomposableNorm::Nuclear { nrows, ncols } = self else {
            unreachable!("matrix view only for nuclear norm")
        };
        DMatrix::from_column_slice(*nrows, *ncols, u.as_slice())
    }

    fn block_norms(blocks: &[Vec<usize>], u: &Vector) -> Vec<f64> {
        blocks
            .iter()
            .map(|b| b.iter().map(|&i| u[i] * u[i]).sum::<f64>().sqrt())
            .collect()
    }

    fn singular_values_of(&self, u: &Vector) -> Vec<f64> {
        let m = self.as_matrix(u);
        if m.is_empty() {
            return Vec::new();
        }
        m.singular_values().iter().copied().collect()
    }

    pub fn norm_value(&self, u: &Vector) -> Result<f64> {
        self.check("norm_value", u)?;
        Ok(match self {
            DecomposableNorm::L1 { .. } => u.iter().map(|v| v.abs()).sum(),
            DecomposableNorm::Group { blocks, .. } => Self::block_norms(blocks, u).iter().sum(),
            DecomposableNorm::Nuclear { .. } => self.singular_values_of(u).iter().sum(),
        })
    }

    pub fn dual_norm_value(&self, u: &Vector) -> Result<f64> {
        self.check("dual_norm_value", u)?;
        Ok(match self {
            DecomposableNorm::L1 { .. } => u.amax(),
            DecomposableNorm::Group { blocks, .. } => {
                Self::block_norms(blocks, u).into_iter().fold(0.0, f64::max)
            }
            DecomposableNorm::Nuclear { .. } => {
                self.singular_values_of(u).into_iter().fold(0.0, f64::max)
            }
        })
    }

    /// `argmin_z ½‖z − u‖² + τ‖z‖`.
    pub fn prox(&self, u: &Vector, tau: f64) -> Result<Vector> {
        self.check("prox", u)?;
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("prox step must be > 0, got {tau}")));
        }
        Ok(match self {
            DecomposableNorm::L1 { .. } => u.map(|v| soft_threshold(v, tau)),
            DecomposableNorm::Group { blocks, .. } => {
                let mut out = u.clone();
                for (b, n) in blocks.iter().zip(Self::block_norms(blocks, u)) {
                    let scale = if n > tau { 1.0 - tau / n } else { 0.0 };
                    for &i in b {
                        out[i] *= scale;
                    }
                }
                out
            }
            DecomposableNorm::Nuclear { .. } => {
                self.map_singular_values(u, |s| s.iter().map(|&v| (v - tau).max(0.0)).collect())
            }
        })
    }

    fn map_singular_values(&self, u: &Vector, f: impl FnOnce(&[f64]) -> Vec<f64>) -> Vector {
        let svd = thin_svd(&self.as_matrix(u));
        let s = f(&svd.s);
        let mut out = Matrix::zeros(svd.u.nrows(), svd.v.nrows());
        for (k, &sk) in s.iter().enumerate() {
            if sk != 0.0 {
                out += svd.u.column(k) * (svd.v.column(k).transpose() * sk);
            }
        }
        Vector::from_column_slice(out.as_slice())
    }

    /// Euclidean projection onto `{v : ‖v‖* <= radius}`.
    pub fn project_dual_ball(&self, u: &Vector, radius: f64) -> Result<Vector> {
        self.check("project_dual_ball", u)?;
        Ok(match self {
            DecomposableNorm::L1 { .. } => u.map(|v| v.clamp(-radius, radius)),
            DecomposableNorm::Group { blocks, .. } => {
                let mut out = u.clone();
                for (b, n) in blocks.iter().zip(Self::block_norms(blocks, u)) {
                    if n > radius {
                        for &i in b {
                            out[i] *= radius / n;
                        }
                    }
                }
                out
            }
            DecomposableNorm::Nuclear { .. } => {
                if self.dual_norm_value(u)? <= radius {
                    u.clone()
                } else {
                    self.map_singular_values(u, |s| s.iter().map(|&v| v.min(radius)).collect())
                }
            }
        })
    }

    /// Euclidean projection onto `{v : ‖v‖ <= radius}`.
    pub fn project_primal_ball(&self, u: &Vector, radius: f64) -> Result<Vector> {
        self.check("project_primal_ball", u)?;
        if self.norm_value(u)? <= radius {
            return Ok(u.clone());
        }
        Ok(match self {
            DecomposableNorm::L1 { .. } => {
                let theta = l1_ball_threshold(u.as_slice(), radius);
                u.map(|v| soft_threshold(v, theta))
            }
            DecomposableNorm::Group { blocks, .. } => {
                let norms = Self::block_norms(blocks, u);
                let target = project_nonneg_l1_ball(&norms, radius);
                let mut out = u.clone();
                for ((b, n), t) in blocks.iter().zip(norms).zip(target) {
                    let scale = if n > 0.0 { t / n } else { 0.0 };
                    for &i in b {
                        out[i] *= scale;
                    }
                }
                out
            }
            DecomposableNorm::Nuclear { .. } => {
                self.map_singular_values(u, |s| project_nonneg_l1_ball(s, radius))
            }
        })
    }

    /// Model `(T, e)` at `u`. Components below `tol` relative to the largest
    /// one count as inactive.
    pub fn decompose_at(&self, u: &Vector, tol: f64) -> Result<DecompositionModel> {
        self.check("decompose_at", u)?;
        let largest = match self {
            DecomposableNorm::L1 { .. } => u.amax(),
            DecomposableNorm::Group { blocks, .. } => Self::block_norms(blocks, u).into_iter().fold(0.0, f64::max),
            DecomposableNorm::Nuclear { .. } => thin_svd(&self.as_matrix(u)).s.first().copied().unwrap_or(0.0),
        };
        self.decompose_above(u, tol * largest)
    }

    /// Model `(T, e)` at `u` where entries (ℓ1), block norms (group) or
    /// singular values (nuclear) at or below the absolute level `cut` count
    /// as inactive.
    pub fn decompose_above(&self, u: &Vector, cut: f64) -> Result<DecompositionModel> {
        self.check("decompose_above", u)?;
        let p = self.ambient_dim();
        match self {
            DecomposableNorm::L1 { .. } => {
                let active: Vec<bool> = u.iter().map(|v| v.abs() > cut && *v != 0.0).collect();
                let e = Vector::from_fn(p, |i, _| if active[i] { u[i].signum() } else { 0.0 });
                Ok(DecompositionModel {
                    e,
                    separable: None,
                    shape: ModelShape::Coordinates { active },
                })
            }
            DecomposableNorm::Group { blocks, .. } => {
                let norms = Self::block_norms(blocks, u);
                let mut active = vec![false; p];
                let mut e = Vector::zeros(p);
                for (b, &n) in blocks.iter().zip(&norms) {
                    if n > cut && n > 0.0 {
                        for &i in b {
                            active[i] = true;
                            e[i] = u[i] / n;
                        }
                    }
                }
                Ok(DecompositionModel {
                    e,
                    separable: None,
                    shape: ModelShape::Coordinates { active },
                })
            }
            DecomposableNorm::Nuclear { nrows, ncols } => {
                let svd = thin_svd(&self.as_matrix(u));
                let r = svd.s.iter().filter(|&&s| s > cut && s > 0.0).count();
                let mut uu = svd.u.columns(0, r).into_owned();
                let mut vv = svd.v.columns(0, r).into_owned();
                for k in 0..r {
                    let first = uu.column(k).iter().copied().find(|x| x.abs() > 1e-12);
                    if first.is_some_and(|x| x < 0.0) {
                        uu.column_mut(k).neg_mut();
                        vv.column_mut(k).neg_mut();
                    }
                }
                let e = Vector::from_column_slice((&uu * vv.transpose()).as_slice());
                Ok(DecompositionModel {
                    e,
                    separable: None,
                    shape: ModelShape::LowRank {
                        nrows: *nrows,
                        ncols: *ncols,
                        u: uu,
                        v: vv,
                    },
                })
            }
        }
    }

    /// Model at `u` with the separable split `T⊥ = V ⊕ W`, where `V` is
    /// spanned by the given inactive coordinates (ℓ1) or inactive blocks
    /// (group), 0-based.
    pub fn decompose_at_separable(
        &self,
        u: &Vector,
        tol: f64,
        v_parts: &[usize],
    ) -> Result<DecompositionModel> {
        let mut model = self.decompose_at(u, tol)?;
        let ModelShape::Coordinates { active } = &model.shape else {
            return Err(Error::NotSeparable(format!("{} norm", self.kind_name())));
        };
        let p = self.ambient_dim();
        let mut in_v = vec![false; p];
        for &part in v_parts {
            let coords: Vec<usize> = match self {
                DecomposableNorm::L1 { .. } => vec![part],
                DecomposableNorm::Group { blocks, .. } => blocks
                    .get(part)
                    .cloned()
                    .ok_or_else(|| Error::InvalidPartition(format!("no block {part}")))?,
                DecomposableNorm::Nuclear { .. } => unreachable!(),
            };
            for i in coords {
                if i >= p {
                    return Err(Error::InvalidPartition(format!("coordinate {i} out of range")));
                }
                if active[i] {
                    return Err(Error::InvalidPartition(format!(
                        "coordinate {i} belongs to the model subspace T"
                    )));
                }
                in_v[i] = true;
            }
        }
        let v_idx: Vec<usize> = (0..p).filter(|&i| in_v[i]).collect();
        let w_idx: Vec<usize> = (0..p).filter(|&i| !in_v[i] && !active[i]).collect();
        model.separable = Some(SeparableSplit {
            v: Subspace::coordinates(p, &v_idx)?,
            w: Subspace::coordinates(p, &w_idx)?,
        });
        Ok(model)
    }

    /// Membership of `alpha` in `∂‖·‖(u)` up to `tol`.
    pub fn subdiff_membership(&self, u: &Vector, alpha: &Vector, tol: f64) -> Result<Membership> {
        self.check("subdiff_membership", alpha)?;
        let model = self.decompose_at(u, ACTIVE_TOL)?;
        Ok(self.membership_in_model(&model, alpha, tol))
    }

    pub fn membership_in_model(&self, model: &DecompositionModel, alpha: &Vector, tol: f64) -> Membership {
        let normal = model.project_normal(alpha);
        let tangent_gap = (alpha - &normal - &model.e).norm();
        if tangent_gap > tol {
            return Membership::NotMember(format!(
                "tangent component differs from e by {tangent_gap:.3e}"
            ));
        }
        let dual = self.dual_norm_value(&normal).expect("dimension checked");
        if dual > 1.0 + tol {
            return Membership::NotMember(format!("dual norm of normal component is {dual:.6}"));
        }
        Membership::Member
    }

    /// A subgradient at `u` built from an approximate one: its tangent part is
    /// replaced by `e` and its normal part is pulled into the dual unit ball.
    /// Components of `u` at or below `cut` are treated as zero.
    pub fn subgradient_readout(&self, u: &Vector, guess: &Vector, cut: f64) -> Result<Vector> {
        self.check("subgradient_readout", guess)?;
        let model = self.decompose_above(u, cut)?;
        let normal = model.project_normal(guess);
        let clipped = self.project_dual_ball(&normal, 1.0)?;
        Ok(&model.e + model.project_normal(&clipped))
    }

    /// Largest `C` with `‖x‖ >= C ‖x‖₂`; equal to one for all three norms.
    pub fn coercivity_constant(&self) -> f64 {
        1.0
    }

    /// `‖u‖ − ‖u0‖ − ⟨α, u − u0⟩`, after checking `α ∈ ∂‖·‖(u0)`.
    pub fn bregman(&self, u: &Vector, u0: &Vector, alpha: &Vector, tol: f64) -> Result<f64> {
        self.check("bregman", u)?;
        self.check("bregman", u0)?;
        if let Membership::NotMember(reason) = self.subdiff_membership(u0, alpha, tol)? {
            return Err(Error::NotSubgradient(reason));
        }
        Ok(self.norm_value(u)? - self.norm_value(u0)? - alpha.dot(&(u - u0)))
    }
}
