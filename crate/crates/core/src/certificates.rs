//! Dual certificates `(η, α)`: the source condition `Φ*η = Lα ∈ ∂R(x)`,
//! non-saturation, and the constructive certificate built from the
//! irrepresentable-condition minimizers.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linops::{LinearOperator, Subspace, Vector};
use crate::norms::{DecomposableNorm, Membership, ACTIVE_TOL};
use crate::solver::{IcGeometry, SolverOptions};

/// Relative tolerance on the range equation `Φ*η = Lα`.
pub const CERTIFICATE_TOL: f64 = 1e-7;

/// Saturations within this distance of 1 are treated as saturated: the
/// certificate is only computed to about this accuracy.
pub const SATURATION_MARGIN: f64 = 1e-7;

/// `‖α_S‖* < 1` with [`SATURATION_MARGIN`] to spare.
pub fn is_non_saturated(saturation: f64) -> bool {
    saturation < 1.0 - SATURATION_MARGIN
}

/// Which irrepresentable-condition minimizer feeds the certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMode {
    /// `(ū, z̄)` minimizing over both `u` and `z`.
    #[default]
    Full,
    /// `(u̲, 0)`.
    UOnly,
    /// `(0, 0)`.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    pub eta: Vector,
    pub alpha: Vector,
    /// `‖P_S α‖*` for the model's `S = T⊥`.
    pub saturation: f64,
    /// `‖Φ*η − Lα‖₂`.
    pub source_residual: f64,
    pub mode: CertificateMode,
    /// False when the IC program stopped before certifying its gap.
    pub ic_converged: bool,
}

impl DualCertificate {
    /// Strict non-saturation `‖α_S‖* < 1`; without it no guarantee follows.
    pub fn has_guarantee(&self) -> bool {
        is_non_saturated(self.saturation)
    }

    pub fn eta_norm(&self) -> f64 {
        self.eta.norm()
    }

    /// One header row and one record: `eta_1..eta_M, alpha_1..alpha_P,
    /// saturation, source_residual`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.eta.len())
            .map(|i| format!("eta_{i}"))
            .chain((1..=self.alpha.len()).map(|i| format!("alpha_{i}")))
            .chain(["saturation".to_string(), "source_residual".to_string()])
            .collect();
        wtr.write_record(&header)?;
        let row: Vec<String> = self
            .eta
            .iter()
            .chain(self.alpha.iter())
            .chain([self.saturation, self.source_residual].iter())
            .map(|v| v.to_string())
            .collect();
        wtr.write_record(&row)?;
        wtr.flush()?;
        Ok(())
    }

    /// Reads the record written by [`DualCertificate::write_csv`]. Mode and
    /// convergence flags are not part of the record and come back as
    /// `Full` / `true`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let m = header.iter().filter(|h| h.starts_with("eta_")).count();
        let p = header.iter().filter(|h| h.starts_with("alpha_")).count();
        let rec = rdr
            .records()
            .next()
            .ok_or_else(|| Error::Config("certificate file has no record".into()))??;
        check_dim("certificate record length", m + p + 2, rec.len())?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Config(format!("bad certificate entry: {e}")))?;
        Ok(Self {
            eta: Vector::from_column_slice(&vals[..m]),
            alpha: Vector::from_column_slice(&vals[m..m + p]),
            saturation: vals[m + p],
            source_residual: vals[m + p + 1],
            mode: CertificateMode::Full,
            ic_converged: true,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SourceVerdict {
    Valid,
    Invalid(String),
}

impl SourceVerdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, SourceVerdict::Valid)
    }
}

/// Valid iff `‖Φ*η − Lα‖ <= tol (1 + ‖Lα‖)` and `α ∈ ∂‖·‖(L*x)`.
pub fn check_source_condition(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    x: &Vector,
    cert: &DualCertificate,
    tol: f64,
) -> Result<SourceVerdict> {
    let l_alpha = analysis.adjoint_apply(&cert.alpha)?;
    let phit_eta = phi.adjoint_apply(&cert.eta)?;
    let gap = (&phit_eta - &l_alpha).norm();
    if gap > tol * (1.0 + l_alpha.norm()) {
        return Ok(SourceVerdict::Invalid(format!(
            "range equation Φ*η = Lα violated by {gap:.3e}"
        )));
    }
    let u = analysis.apply(x)?;
    Ok(match norm.subdiff_membership(&u, &cert.alpha, tol)? {
        Membership::Member => SourceVerdict::Valid,
        Membership::NotMember(reason) => SourceVerdict::Invalid(format!("α ∉ ∂‖·‖(L*x): {reason}")),
    })
}

/// Certificate from the irrepresentable-condition minimizers:
/// `η = ΦΞL_T e + z̄` and `α = e + Γe + ū_S + (L_S)⁺Φ*z̄`.
///
/// Fails with `InjectivityViolated` when `Φ` is not injective on
/// `ker(L_S*)`. A saturation `>= 1` still yields a certificate; check
/// [`DualCertificate::has_guarantee`].
pub fn build_certificate(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    t0: &Subspace,
    e0: &Vector,
    mode: CertificateMode,
    opts: &SolverOptions,
) -> Result<DualCertificate> {
    let geom = IcGeometry::new(phi, analysis, t0)?;
    build_from_geometry(&geom, phi, analysis, norm, t0, e0, mode, opts)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn build_from_geometry(
    geom: &IcGeometry,
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    t0: &Subspace,
    e0: &Vector,
    mode: CertificateMode,
    opts: &SolverOptions,
) -> Result<DualCertificate> {
    check_dim("build_certificate: e0", t0.ambient_dim(), e0.len())?;
    let (m, p) = (phi.rows(), t0.ambient_dim());
    let (u, z, converged) = match mode {
        CertificateMode::Full => {
            let sol = geom.minimize_full(norm, e0, opts)?;
            (sol.u, sol.z, sol.converged)
        }
        CertificateMode::UOnly => {
            let sol = geom.minimize_u(norm, e0, opts)?;
            (sol.u, sol.z, sol.converged)
        }
        CertificateMode::Zero => (Vector::zeros(p), Vector::zeros(m), true),
    };
    assemble_certificate(geom, phi, analysis, norm, e0, &u, &z, mode, converged)
}

/// `(η, α)` from given IC minimizers `(u, z)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn assemble_certificate(
    geom: &IcGeometry,
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    e0: &Vector,
    u: &Vector,
    z: &Vector,
    mode: CertificateMode,
    ic_converged: bool,
) -> Result<DualCertificate> {
    let lt_e = geom.l_t() * e0;
    let eta = phi.apply(&geom.xi_apply(&lt_e)?)? + z;
    let s = geom.normal_subspace();
    let alpha = e0 + geom.gamma_apply(e0)? + s.project(u)? + geom.z_term(z)?;
    let saturation = norm.dual_norm_value(&s.project(&alpha)?)?;
    let source_residual = (phi.adjoint_apply(&eta)? - analysis.adjoint_apply(&alpha)?).norm();
    Ok(DualCertificate {
        eta,
        alpha,
        saturation,
        source_residual,
        mode,
        ic_converged,
    })
}

/// Certificate for the model of `‖·‖` at `L*x`.
pub fn build_certificate_at(
    phi: &LinearOperator,
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    x: &Vector,
    mode: CertificateMode,
    opts: &SolverOptions,
) -> Result<DualCertificate> {
    let model = norm.decompose_at(&analysis.apply(x)?, ACTIVE_TOL)?;
    build_certificate(phi, analysis, norm, &model.tangent_subspace(), &model.e, mode, opts)
}

/// `1 − saturation`: the margin entering the stability constant.
pub fn certificate_quality(cert: &DualCertificate) -> f64 {
    1.0 - cert.saturation
}
