use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::certificates::CertificateMode;
use crate::error::{Error, Result};
use crate::linops::{LinearOperator, Matrix, Vector, RANK_CUTOFF};
use crate::norms::{DecomposableNorm, NormSpec, ACTIVE_TOL};
use crate::solver::SolverOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub p: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PhiKind {
    /// I.i.d. `N(0, 1/M)` entries.
    Gaussian,
    Identity,
    /// Circular convolution with `kernel` (centered), keeping `M` evenly
    /// spaced output samples.
    Convolution { kernel: Vec<f64> },
    FromFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalysisKind {
    Identity,
    /// Forward differences, `P = N − 1`.
    Tv1d,
    /// Horizontal then vertical forward differences on a row-major
    /// `height x width` grid, `P = 2hw − h − w`.
    Tv2d { height: usize, width: usize },
    /// Random Parseval frame: `L*` is `P x N` with orthonormal columns.
    TightFrame,
    FromFile { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SignalSpec {
    /// `u0 = L*x0` with `size` nonzero entries (ℓ1), active blocks (group)
    /// or rank (nuclear).
    ModelSize { size: usize },
    Explicit { x0: Vec<f64> },
}

fn default_trials() -> usize {
    1
}

fn default_plot() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub dims: Dims,
    pub phi: PhiKind,
    pub analysis: AnalysisKind,
    pub norm: NormSpec,
    pub signal: SignalSpec,
    /// Noise levels, nonnegative and ascending.
    pub epsilons: Vec<f64>,
    /// Noise draws per noise level.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Coupling `λ = c ε`.
    pub c: f64,
    #[serde(default)]
    pub certificate_mode: CertificateMode,
    #[serde(default)]
    pub frame_mode: bool,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_plot")]
    pub plot: bool,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a JSON config; relative `from_file` paths are resolved against
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let PhiKind::FromFile { path } = &mut cfg.phi {
            resolve(path);
        }
        if let AnalysisKind::FromFile { path } = &mut cfg.analysis {
            resolve(path);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let Dims { m, n, p } = self.dims;
        let bad = |msg: String| Err(Error::Config(msg));
        if n == 0 || m == 0 || p == 0 {
            return bad("dims must be positive".into());
        }
        match &self.phi {
            PhiKind::Identity if m != n => return bad(format!("identity phi needs M = N, got M = {m}, N = {n}")),
            PhiKind::Convolution { kernel } if kernel.is_empty() || m > n => {
                return bad("convolution needs a nonempty kernel and M <= N".into())
            }
            _ => {}
        }
        match &self.analysis {
            AnalysisKind::Identity if p != n => return bad(format!("identity L needs P = N, got P = {p}")),
            AnalysisKind::Tv1d if p + 1 != n => return bad(format!("tv1d needs P = N - 1, got P = {p}, N = {n}")),
            AnalysisKind::Tv2d { height, width } => {
                let (h, w) = (*height, *width);
                if h * w != n || 2 * h * w < h + w || 2 * h * w - h - w != p {
                    return bad(format!("tv2d({h},{w}) needs N = hw and P = 2hw - h - w"));
                }
            }
            AnalysisKind::TightFrame if p < n => return bad(format!("tight frame needs P >= N, got P = {p}")),
            _ => {}
        }
        if self.epsilons.is_empty() {
            return bad("epsilon list is empty".into());
        }
        if self.epsilons.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
            return bad("epsilons must be finite and nonnegative".into());
        }
        if self.epsilons.windows(2).any(|w| w[0] > w[1]) {
            return bad("epsilons must be ascending".into());
        }
        if !(self.c > 0.0) || !self.c.is_finite() {
            return bad(format!("coupling c must be > 0, got {}", self.c));
        }
        if self.trials == 0 {
            return bad("trials must be >= 1".into());
        }
        if self.solver.max_iter == 0 || !(self.solver.tol > 0.0) {
            return bad("solver needs max_iter >= 1 and tol > 0".into());
        }
        self.norm.build(p).map_err(|e| Error::Config(e.to_string()))?;
        if let SignalSpec::Explicit { x0 } = &self.signal {
            if x0.len() != n {
                return bad(format!("explicit x0 has length {}, expected N = {n}", x0.len()));
            }
        }
        Ok(())
    }
}

/// One noisy observation `y = Φx0 + w` with `‖w‖ <= ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub epsilon: f64,
    pub trial: usize,
    pub y: Vector,
    pub noise_norm: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub phi: LinearOperator,
    pub analysis: LinearOperator,
    pub norm: DecomposableNorm,
    pub x0: Vector,
    pub draws: Vec<NoiseDraw>,
}

pub fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

pub fn gaussian_vector<R: Rng>(n: usize, rng: &mut R) -> Vector {
    Vector::from_fn(n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z
    })
}

/// `L*` of 1-D forward differences, `(N − 1) x N`.
pub fn tv1d(n: usize) -> LinearOperator {
    let mut m = Matrix::zeros(n.saturating_sub(1), n);
    for i in 0..n.saturating_sub(1) {
        m[(i, i)] = -1.0;
        m[(i, i + 1)] = 1.0;
    }
    LinearOperator::new(m)
}

/// `L*` of 2-D forward differences on a row-major grid: all horizontal
/// differences first, then all vertical ones.
pub fn tv2d(height: usize, width: usize) -> LinearOperator {
    let n = height * width;
    let p = (2 * n).saturating_sub(height + width);
    let mut m = Matrix::zeros(p, n);
    let idx = |r: usize, c: usize| r * width + c;
    let mut row = 0;
    for r in 0..height {
        for c in 0..width.saturating_sub(1) {
            m[(row, idx(r, c))] = -1.0;
            m[(row, idx(r, c + 1))] = 1.0;
            row += 1;
        }
    }
    for r in 0..height.saturating_sub(1) {
        for c in 0..width {
            m[(row, idx(r, c))] = -1.0;
            m[(row, idx(r + 1, c))] = 1.0;
            row += 1;
        }
    }
    LinearOperator::new(m)
}

/// `P x N` analysis operator with orthonormal columns, so `LL* = Id`.
pub fn random_parseval_frame<R: Rng>(p: usize, n: usize, rng: &mut R) -> Result<LinearOperator> {
    if p < n {
        return Err(Error::InvalidParameter(format!("Parseval frame needs P >= N, got {p} < {n}")));
    }
    let g = gaussian_matrix(p, p, 1.0, rng);
    let q = g.qr().q();
    Ok(LinearOperator::new(q.columns(0, n).into_owned()))
}

/// Circular convolution with a centered kernel, sampled at `m` evenly
/// spaced outputs.
pub fn circular_convolution(m: usize, n: usize, kernel: &[f64]) -> LinearOperator {
    let center = kernel.len() / 2;
    let mut mat = Matrix::zeros(m, n);
    for i in 0..m {
        let out = i * n / m;
        for (t, &k) in kernel.iter().enumerate() {
            let j = (out + n * kernel.len() + t - center) % n;
            mat[(i, j)] += k;
        }
    }
    LinearOperator::new(mat)
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn load_operator(path: &Path, rows: usize, cols: usize, what: &str) -> Result<LinearOperator> {
    let op = LinearOperator::load(path)
        .map_err(|e| Error::Config(format!("cannot load {what} from {}: {e}", path.display())))?;
    if op.rows() != rows || op.cols() != cols {
        return Err(Error::Config(format!(
            "{what} in {} is {}x{}, expected {rows}x{cols}",
            path.display(),
            op.rows(),
            op.cols()
        )));
    }
    Ok(op)
}

const SIGNAL_ATTEMPTS: usize = 200;

/// Active entries (ℓ1), active blocks (group) or rank (nuclear) of `L*x`.
fn count_active(analysis: &LinearOperator, norm: &DecomposableNorm, x: &Vector) -> Result<usize> {
    let u = analysis.apply(x)?;
    let model = norm.decompose_at(&u, ACTIVE_TOL)?;
    Ok(match norm {
        DecomposableNorm::Group { blocks, .. } => blocks.iter().filter(|b| b.iter().any(|&i| model.e[i] != 0.0)).count(),
        _ => model.tangent_dim().min(u.len()),
    })
}

fn structured_signal(
    analysis: &LinearOperator,
    norm: &DecomposableNorm,
    size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vector> {
    let n = analysis.cols();
    match norm {
        DecomposableNorm::Nuclear { nrows, ncols } => {
            if size > (*nrows).min(*ncols) {
                return Err(Error::Config(format!("rank {size} exceeds min({nrows}, {ncols})")));
            }
            let sv = analysis.singular_values();
            let full_row_rank = analysis.rows() <= n
                && sv.last().is_some_and(|&s| s > RANK_CUTOFF * sv[0]);
            if !full_row_rank {
                return Err(Error::Config("low-rank signals need L* with full row rank".into()));
            }
            let a = gaussian_matrix(*nrows, size, 1.0, rng);
            let b = gaussian_matrix(*ncols, size, 1.0, rng);
            let u0 = a * b.transpose();
            analysis.pseudoinverse_apply(&Vector::from_column_slice(u0.as_slice()))
        }
        DecomposableNorm::L1 { dim } | DecomposableNorm::Group { dim, .. } => {
            let blocks: Vec<Vec<usize>> = match norm {
                DecomposableNorm::Group { blocks, .. } => blocks.clone(),
                _ => (0..*dim).map(|i| vec![i]).collect(),
            };
            if size > blocks.len() {
                return Err(Error::Config(format!(
                    "model size {size} exceeds the {} available blocks",
                    blocks.len()
                )));
            }
            // Zero out randomly chosen blocks one at a time, keeping x0 the
            // projection of a fixed Gaussian vector onto the kernel of the
            // zeroed rows, until exactly `size` blocks remain active.
            for _ in 0..SIGNAL_ATTEMPTS {
                let g = gaussian_vector(n, rng);
                let mut order: Vec<usize> = (0..blocks.len()).collect();
                order.shuffle(rng);
                let mut zero_rows: Vec<usize> = Vec::new();
                let mut x0 = g.clone();
                let mut active = count_active(analysis, norm, &x0)?;
                for &b in &order {
                    if active <= size {
                        break;
                    }
                    let u = analysis.apply(&x0)?;
                    if blocks[b].iter().all(|&i| u[i] == 0.0) {
                        continue;
                    }
                    zero_rows.extend(&blocks[b]);
                    let mut c = Matrix::zeros(zero_rows.len(), n);
                    for (dst, &src) in zero_rows.iter().enumerate() {
                        c.set_row(dst, &analysis.matrix().row(src));
                    }
                    x0 = LinearOperator::new(c).kernel_basis(RANK_CUTOFF).project(&g)?;
                    active = count_active(analysis, norm, &x0)?;
                }
                if active == size {
                    let u0 = analysis.apply(&x0)?;
                    let scale = if size == 0 || u0.norm() == 0.0 { 1.0 } else { (size as f64).sqrt() / u0.norm() };
                    return Ok(x0 * scale);
                }
            }
            Err(Error::Config(format!(
                "no signal with model size {size} found in the kernel of the remaining rows of L*"
            )))
        }
    }
}

/// Builds operators, the signal `x0` and every noise draw from the config.
/// Deterministic in `cfg.seed`: one ChaCha8 stream feeds, in order, the
/// operators, the signal and the noise draws (`ε` ascending, then trial).
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let Dims { m, n, p } = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let phi = match &cfg.phi {
        PhiKind::Gaussian => LinearOperator::new(gaussian_matrix(m, n, 1.0 / (m as f64).sqrt(), &mut rng)),
        PhiKind::Identity => LinearOperator::identity(n),
        PhiKind::Convolution { kernel } => circular_convolution(m, n, kernel),
        PhiKind::FromFile { path } => load_operator(path, m, n, "phi")?,
    };
    let analysis = match &cfg.analysis {
        AnalysisKind::Identity => LinearOperator::identity(n),
        AnalysisKind::Tv1d => tv1d(n),
        AnalysisKind::Tv2d { height, width } => tv2d(*height, *width),
        AnalysisKind::TightFrame => random_parseval_frame(p, n, &mut rng)?,
        AnalysisKind::FromFile { path } => load_operator(path, p, n, "L*")?,
    };
    let norm = cfg.norm.build(p).map_err(config_err)?;
    let x0 = match &cfg.signal {
        SignalSpec::ModelSize { size } => structured_signal(&analysis, &norm, *size, &mut rng)?,
        SignalSpec::Explicit { x0 } => Vector::from_column_slice(x0),
    };
    let clean = phi.apply(&x0)?;
    let mut draws = Vec::with_capacity(cfg.epsilons.len() * cfg.trials);
    for &epsilon in &cfg.epsilons {
        for trial in 0..cfg.trials {
            let g = gaussian_vector(m, &mut rng);
            let radius: f64 = rng.random::<f64>() * epsilon;
            let gn = g.norm();
            let w = if epsilon == 0.0 || gn == 0.0 { Vector::zeros(m) } else { g * (radius / gn) };
            draws.push(NoiseDraw {
                epsilon,
                trial,
                noise_norm: w.norm(),
                y: &clean + w,
            });
        }
    }
    Ok(Scenario { phi, analysis, norm, x0, draws })
}
