//! Dense linear-operator algebra: application, adjoints, subspaces,
//! projectors, pseudoinverses and the spectral constants that enter the
//! stability bounds.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Singular values at or below `RANK_CUTOFF * sigma_max` count as zero.
pub const RANK_CUTOFF: f64 = 1e-10;

const ORTHONORMAL_TOL: f64 = 1e-12;

/// A finite-dimensional linear map `R^cols -> R^rows` stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    mat: Matrix,
}

/// Thin SVD with singular values sorted in descending order.
pub(crate) struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub(crate) fn thin_svd(m: &Matrix) -> Svd {
    let (r, c) = m.shape();
    let k = r.min(c);
    if k == 0 {
        return Svd {
            u: Matrix::zeros(r, 0),
            s: Vec::new(),
            v: Matrix::zeros(c, 0),
        };
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut su = Matrix::zeros(r, k);
    let mut sv = Matrix::zeros(c, k);
    let mut s = Vec::with_capacity(k);
    for (dst, &src) in order.iter().enumerate() {
        su.set_column(dst, &u.column(src));
        sv.set_column(dst, &vt.row(src).transpose());
        s.push(svd.singular_values[src]);
    }
    Svd { u: su, s, v: sv }
}

/// SVD whose right factor is square (`cols x cols`), obtained by padding
/// short matrices with zero rows.
fn full_right_svd(m: &Matrix) -> Svd {
    let (r, c) = m.shape();
    if r >= c {
        return thin_svd(m);
    }
    let mut padded = Matrix::zeros(c, c);
    padded.rows_mut(0, r).copy_from(m);
    thin_svd(&padded)
}

fn columns_where(m: &Matrix, keep: impl Fn(usize) -> bool) -> Matrix {
    let idx: Vec<usize> = (0..m.ncols()).filter(|&j| keep(j)).collect();
    let mut out = Matrix::zeros(m.nrows(), idx.len());
    for (dst, &src) in idx.iter().enumerate() {
        out.set_column(dst, &m.column(src));
    }
    out
}

impl LinearOperator {
    pub fn new(mat: Matrix) -> Self {
        Self { mat }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        for row in rows {
            check_dim("matrix row length", ncols, row.len())?;
        }
        Ok(Self::new(Matrix::from_fn(nrows, ncols, |i, j| rows[i][j])))
    }

    pub fn identity(n: usize) -> Self {
        Self::new(Matrix::identity(n, n))
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(Matrix::zeros(rows, cols))
    }

    pub fn diag(d: &[f64]) -> Self {
        Self::new(Matrix::from_diagonal(&Vector::from_column_slice(d)))
    }

    pub fn rows(&self) -> usize {
        self.mat.nrows()
    }

    pub fn cols(&self) -> usize {
        self.mat.ncols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.mat
    }

    pub fn into_matrix(self) -> Matrix {
        self.mat
    }

    pub fn apply(&self, x: &Vector) -> Result<Vector> {
        check_dim("apply", self.cols(), x.len())?;
        Ok(&self.mat * x)
    }

    pub fn adjoint_apply(&self, y: &Vector) -> Result<Vector> {
        check_dim("adjoint_apply", self.rows(), y.len())?;
        Ok(self.mat.tr_mul(y))
    }

    pub fn adjoint(&self) -> LinearOperator {
        Self::new(self.mat.transpose())
    }

    /// `self * other`.
    pub fn compose(&self, other: &LinearOperator) -> Result<LinearOperator> {
        check_dim("compose", self.cols(), other.rows())?;
        Ok(Self::new(&self.mat * &other.mat))
    }

    /// Singular values in descending order (`min(rows, cols)` of them).
    pub fn singular_values(&self) -> Vec<f64> {
        if self.rows().min(self.cols()) == 0 {
            return Vec::new();
        }
        let mut s: Vec<f64> = self.mat.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    /// Largest singular value, `‖op‖_{2,2}`.
    pub fn operator_norm(&self) -> f64 {
        self.singular_values().first().copied().unwrap_or(0.0)
    }

    pub fn pseudoinverse(&self) -> LinearOperator {
        self.pseudoinverse_above(RANK_CUTOFF * self.operator_norm())
    }

    /// Pseudoinverse that inverts only singular values above the absolute
    /// level `cut`.
    pub fn pseudoinverse_above(&self, cut: f64) -> LinearOperator {
        let svd = thin_svd(&self.mat);
        let mut pinv = Matrix::zeros(self.cols(), self.rows());
        for (k, &s) in svd.s.iter().enumerate() {
            if s > cut && s > 0.0 {
                pinv += (svd.v.column(k) / s) * svd.u.column(k).transpose();
            }
        }
        Self::new(pinv)
    }

    pub fn pseudoinverse_apply(&self, y: &Vector) -> Result<Vector> {
        check_dim("pseudoinverse_apply", self.rows(), y.len())?;
        Ok(&self.pseudoinverse().mat * y)
    }

    /// Orthonormal basis of the null space: right singular vectors with
    /// `sigma <= tol * sigma_max`.
    pub fn kernel_basis(&self, tol: f64) -> Subspace {
        self.kernel_basis_below(tol * self.operator_norm())
    }

    /// Right singular vectors with `sigma <= cut` (absolute level).
    pub fn kernel_basis_below(&self, cut: f64) -> Subspace {
        let n = self.cols();
        if n == 0 {
            return Subspace::zero(0);
        }
        let svd = full_right_svd(&self.mat);
        Subspace::from_orthonormal_unchecked(columns_where(&svd.v, |j| svd.s[j] <= cut))
    }

    /// Orthonormal basis of the column space.
    pub fn range_basis(&self, tol: f64) -> Subspace {
        self.range_basis_above(tol * self.operator_norm())
    }

    /// Left singular vectors with `sigma > cut` (absolute level).
    pub fn range_basis_above(&self, cut: f64) -> Subspace {
        let svd = thin_svd(&self.mat);
        Subspace::from_orthonormal_unchecked(columns_where(&svd.u, |j| svd.s[j] > cut && svd.s[j] > 0.0))
    }

    /// The smallest singular value above `tol * sigma_max`.
    pub fn smallest_nonzero_singular_value(&self, tol: f64) -> Result<f64> {
        let s = self.singular_values();
        let smax = s.first().copied().unwrap_or(0.0);
        if smax == 0.0 {
            return Err(Error::ZeroOperator("smallest nonzero singular value"));
        }
        Ok(s.into_iter()
            .filter(|&v| v > tol * smax)
            .fold(f64::INFINITY, f64::min))
    }

    /// Reads the CSV matrix format: a `rows,cols` header line followed by
    /// one matrix row per line.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| Error::Config("empty matrix file".into()))??;
        let dims: Vec<usize> = header
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad matrix header: {e}")))?;
        let [rows, cols] = dims[..] else {
            return Err(Error::Config("matrix header must be `rows,cols`".into()));
        };
        let mut data = Vec::with_capacity(rows);
        for rec in records {
            let rec = rec?;
            let row: Vec<f64> = rec
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Config(format!("bad matrix entry: {e}")))?;
            check_dim("matrix csv columns", cols, row.len())?;
            data.push(row);
        }
        check_dim("matrix csv rows", rows, data.len())?;
        if rows == 0 {
            return Ok(Self::zeros(0, cols));
        }
        Self::from_rows(&data)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_writer(writer);
        wtr.write_record([self.rows().to_string(), self.cols().to_string()])?;
        for i in 0..self.rows() {
            wtr.write_record(self.mat.row(i).iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// A linear subspace of `R^ambient_dim` carried by an orthonormal basis.
/// An empty basis denotes `{0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    ambient_dim: usize,
    basis: Matrix,
}

impl Subspace {
    /// Validates that the columns of `basis` are orthonormal.
    pub fn new(basis: Matrix) -> Result<Self> {
        let gram = basis.tr_mul(&basis);
        let dev = (gram - Matrix::identity(basis.ncols(), basis.ncols())).amax();
        if dev > ORTHONORMAL_TOL {
            return Err(Error::NonOrthonormalBasis(dev));
        }
        Ok(Self::from_orthonormal_unchecked(basis))
    }

    pub(crate) fn from_orthonormal_unchecked(basis: Matrix) -> Self {
        Self {
            ambient_dim: basis.nrows(),
            basis,
        }
    }

    pub fn zero(ambient_dim: usize) -> Self {
        Self::from_orthonormal_unchecked(Matrix::zeros(ambient_dim, 0))
    }

    pub fn full(ambient_dim: usize) -> Self {
        Self::from_orthonormal_unchecked(Matrix::identity(ambient_dim, ambient_dim))
    }

    /// Span of the canonical basis vectors with the given (0-based) indices.
    pub fn coordinates(ambient_dim: usize, indices: &[usize]) -> Result<Self> {
        let mut basis = Matrix::zeros(ambient_dim, indices.len());
        for (k, &i) in indices.iter().enumerate() {
            if i >= ambient_dim {
                return Err(Error::InvalidParameter(format!(
                    "coordinate {i} outside ambient dimension {ambient_dim}"
                )));
            }
            basis[(i, k)] = 1.0;
        }
        Self::new(basis)
    }

    /// Orthonormalized span of the columns of `vectors`.
    pub fn span(vectors: &Matrix) -> Self {
        LinearOperator::new(vectors.clone()).range_basis(RANK_CUTOFF)
    }

    /// Span of the directions of `vectors` with singular value above the
    /// absolute level `cut`.
    pub fn span_above(vectors: &Matrix, cut: f64) -> Self {
        LinearOperator::new(vectors.clone()).range_basis_above(cut)
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn projector(&self) -> LinearOperator {
        LinearOperator::new(&self.basis * self.basis.transpose())
    }

    pub fn project(&self, v: &Vector) -> Result<Vector> {
        check_dim("project", self.ambient_dim, v.len())?;
        Ok(&self.basis * self.basis.tr_mul(v))
    }

    pub fn orthogonal_complement(&self) -> Subspace {
        if self.dim() == 0 {
            return Self::full(self.ambient_dim);
        }
        LinearOperator::new(self.basis.transpose()).kernel_basis(RANK_CUTOFF)
    }

    /// Distance from `v` to the subspace.
    pub fn distance(&self, v: &Vector) -> Result<f64> {
        Ok((v - self.project(v)?).norm())
    }
}

pub fn apply(op: &LinearOperator, x: &Vector) -> Result<Vector> {
    op.apply(x)
}

pub fn adjoint_apply(op: &LinearOperator, y: &Vector) -> Result<Vector> {
    op.adjoint_apply(y)
}

pub fn projector(sub: &Subspace) -> LinearOperator {
    sub.projector()
}

/// `op * P_sub`; its adjoint is `P_sub * op^T`.
pub fn restricted_operator(op: &LinearOperator, sub: &Subspace) -> Result<LinearOperator> {
    check_dim("restricted_operator", op.cols(), sub.ambient_dim())?;
    op.compose(&sub.projector())
}

pub fn pseudoinverse_apply(op: &LinearOperator, y: &Vector) -> Result<Vector> {
    op.pseudoinverse_apply(y)
}

pub fn kernel_basis(op: &LinearOperator, tol: f64) -> Subspace {
    op.kernel_basis(tol)
}

/// Smallest singular value of `phi` restricted to `sub`: the largest `C`
/// with `‖phi x‖ >= C ‖x‖` on `sub`. Zero means injectivity fails; the zero
/// subspace yields `+inf` (vacuously injective).
pub fn restricted_injectivity_constant(phi: &LinearOperator, sub: &Subspace) -> Result<f64> {
    check_dim("restricted_injectivity_constant", phi.cols(), sub.ambient_dim())?;
    if sub.dim() == 0 {
        return Ok(f64::INFINITY);
    }
    if phi.rows() < sub.dim() {
        return Ok(0.0);
    }
    let restricted = LinearOperator::new(phi.matrix() * sub.basis());
    Ok(restricted.singular_values().last().copied().unwrap_or(0.0))
}

pub fn smallest_nonzero_singular_value(op: &LinearOperator, tol: f64) -> Result<f64> {
    op.smallest_nonzero_singular_value(tol)
}

pub fn operator_norm(op: &LinearOperator) -> f64 {
    op.operator_norm()
}
