//! Dense symmetric matrix equations behind the optimal-transport filter.
//!
//! All solvers work in the eigenbasis of a symmetric covariance `Σ = V Λ Vᵀ`. There the
//! Lyapunov operator `G ↦ GΣ + ΣG` is diagonal, so `G̃_ij = C̃_ij / (λ_i + λ_j)` solves it
//! entry by entry. Rank decisions use a relative eigenvalue floor of [`RANK_TOL`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::LinearGaussianModel;

/// Eigenvalues at or below `RANK_TOL · λ_max` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Kernel-kernel block of the singular gain equation must be below this fraction of `‖RHS‖_F`.
pub const KERNEL_BLOCK_TOL: f64 = 1e-8;

/// Symmetric `d×d` matrix. Construction symmetrizes with `(M + Mᵀ)/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Symmetrizes a square matrix.
    ///
    /// # Panics
    /// If `m` is not square.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        assert!(m.is_square(), "SymMatrix requires a square matrix");
        let t = m.transpose();
        SymMatrix((m + t) * 0.5)
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self::symmetrize(m))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        SymMatrix(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(d: usize) -> Self {
        SymMatrix(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        SymMatrix(DMatrix::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn spectral(&self) -> SpectralDecomp {
        SpectralDecomp::new(self)
    }

    pub fn scale(&self, s: f64) -> Self {
        SymMatrix(&self.0 * s)
    }
}

impl std::ops::Deref for SymMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `M = V diag(λ) Vᵀ` with eigenvalues sorted in descending order.
#[derive(Debug, Clone)]
pub struct SpectralDecomp {
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    rank: usize,
}

impl SpectralDecomp {
    pub fn new(m: &SymMatrix) -> Self {
        Self::with_floor(m, 0.0)
    }

    /// As [`SpectralDecomp::new`], also treating eigenvalues at or below `floor` as zero.
    pub fn with_floor(m: &SymMatrix, floor: f64) -> Self {
        let d = m.dim();
        let eig = m.as_matrix().clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

        let eigenvalues = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
        let mut eigenvectors = DMatrix::zeros(d, d);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }
        let lmax = eigenvalues.get(0).copied().unwrap_or(0.0);
        let rank = if lmax > floor.max(0.0) {
            eigenvalues.iter().filter(|&&l| l > (RANK_TOL * lmax).max(floor)).count()
        } else {
            0
        };
        SpectralDecomp {
            eigenvalues,
            eigenvectors,
            rank,
        }
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_full_rank(&self) -> bool {
        self.rank == self.dim()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues[self.dim() - 1]
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn map_eigenvalues(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            self.eigenvectors[(i, j)] * f(self.eigenvalues[j])
        });
        let out = scaled * self.eigenvectors.transpose();
        let t = out.transpose();
        (out + t) * 0.5
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map_eigenvalues(|l| l)
    }

    /// Eigenvalues with the numerical kernel clamped to exactly zero.
    fn clamped_eigenvalues(&self) -> Vec<f64> {
        self.eigenvalues
            .iter()
            .enumerate()
            .map(|(i, &l)| if i < self.rank { l } else { 0.0 })
            .collect()
    }

    fn to_eigenbasis(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.eigenvectors.transpose() * m * &self.eigenvectors
    }

    fn rotate_back(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        &self.eigenvectors * m * self.eigenvectors.transpose()
    }
}

fn check_dim(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::DimensionMismatch(format!(
            "{what} has dimension {got}, model state dimension is {want}"
        )));
    }
    Ok(())
}

fn skew(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m - t) * 0.5
}

/// `Ricc(Σ) = AΣ + ΣAᵀ + Σ_B − Σ HᵀR⁻¹H Σ`.
pub fn ricc_rhs(model: &LinearGaussianModel, sigma: &SymMatrix) -> Result<SymMatrix> {
    check_dim("covariance", sigma.dim(), model.state_dim())?;
    let s = sigma.as_matrix();
    let a_s = model.a() * s;
    let a_s_t = a_s.transpose();
    let quad = s * model.info().as_matrix() * s;
    Ok(SymMatrix::symmetrize(
        a_s + a_s_t + model.process_cov().as_matrix() - quad,
    ))
}

/// Blockwise Lyapunov solve in the eigenbasis of `Σ`. Kernel-kernel entries are set to zero
/// and the Frobenius norm of the corresponding right-hand-side block is returned with `G`.
fn lyapunov_in_eigenbasis(decomp: &SpectralDecomp, rhs: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let d = decomp.dim();
    let r = decomp.rank();
    let lam = decomp.clamped_eigenvalues();
    let rt = decomp.to_eigenbasis(rhs);
    let mut kernel_sq = 0.0;
    let gt = DMatrix::from_fn(d, d, |i, j| {
        if i >= r && j >= r {
            kernel_sq += rt[(i, j)] * rt[(i, j)];
            0.0
        } else {
            rt[(i, j)] / (lam[i] + lam[j])
        }
    });
    let g = decomp.rotate_back(&gt);
    let gt = g.transpose();
    ((g + gt) * 0.5, kernel_sq.sqrt())
}

/// Symmetric `G` with `GΣ + ΣG = rhs` for `Σ ≻ 0`.
pub fn solve_lyapunov_spd(sigma: &SymMatrix, rhs: &SymMatrix) -> Result<SymMatrix> {
    if rhs.dim() != sigma.dim() {
        return Err(Error::DimensionMismatch(format!(
            "right-hand side is {0}×{0}, covariance is {1}×{1}",
            rhs.dim(),
            sigma.dim()
        )));
    }
    let decomp = sigma.spectral();
    if !decomp.is_full_rank() {
        return Err(Error::SingularCovariance {
            rank: decomp.rank(),
            dim: decomp.dim(),
        });
    }
    Ok(SymMatrix(lyapunov_in_eigenbasis(&decomp, rhs.as_matrix()).0))
}

/// `√Ricc(Q)`: the symmetric solution of `GQ + QG = Ricc(Q)`, for `Q ≻ 0`.
pub fn sqrt_ricc(model: &LinearGaussianModel, q: &SymMatrix) -> Result<SymMatrix> {
    let rhs = ricc_rhs(model, q)?;
    solve_lyapunov_spd(q, &rhs)
}

/// Skew-symmetric `Ω` such that `√Ricc(Q) = A − ½ Q HᵀR⁻¹H + ½ Σ_B Q⁻¹ + Ω Q⁻¹`.
///
/// `Ω` solves `ΩQ⁻¹ + Q⁻¹Ω = (Aᵀ − A) + ½(QM − MQ) + ½(Q⁻¹Σ_B − Σ_BQ⁻¹)` with `M = HᵀR⁻¹H`,
/// i.e. `Ω̃_ij = C̃_ij λ_iλ_j / (λ_i + λ_j)` in the eigenbasis of `Q`.
pub fn solve_omega(model: &LinearGaussianModel, q: &SymMatrix) -> Result<DMatrix<f64>> {
    check_dim("covariance", q.dim(), model.state_dim())?;
    let decomp = q.spectral();
    if !decomp.is_full_rank() {
        return Err(Error::SingularCovariance {
            rank: decomp.rank(),
            dim: decomp.dim(),
        });
    }
    let d = q.dim();
    let qm = q.as_matrix();
    let q_inv = decomp.map_eigenvalues(|l| 1.0 / l);
    let a = model.a();
    let m = model.info().as_matrix();
    let sb = model.process_cov().as_matrix();
    let rhs = (a.transpose() - a) + (qm * m - m * qm) * 0.5 + (&q_inv * sb - sb * &q_inv) * 0.5;

    let lam = decomp.eigenvalues();
    let rt = decomp.to_eigenbasis(&rhs);
    let ot = DMatrix::from_fn(d, d, |i, j| rt[(i, j)] * lam[i] * lam[j] / (lam[i] + lam[j]));
    Ok(skew(decomp.rotate_back(&ot)))
}

/// Moore–Penrose pseudo-inverse of a symmetric PSD matrix with its range and kernel projectors.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub pinv: SymMatrix,
    pub range_proj: SymMatrix,
    pub kernel_proj: SymMatrix,
}

pub fn pseudo_inverse(m: &SymMatrix) -> PseudoInverse {
    let decomp = m.spectral();
    let r = decomp.rank();
    let d = decomp.dim();
    let v = decomp.eigenvectors();
    let lam = decomp.eigenvalues();
    let build = |f: &dyn Fn(usize) -> f64| {
        let scaled = DMatrix::from_fn(d, d, |i, j| v[(i, j)] * f(j));
        SymMatrix::symmetrize(scaled * v.transpose())
    };
    PseudoInverse {
        pinv: build(&|j| if j < r { 1.0 / lam[j] } else { 0.0 }),
        range_proj: build(&|j| if j < r { 1.0 } else { 0.0 }),
        kernel_proj: build(&|j| if j < r { 0.0 } else { 1.0 }),
    }
}

/// Affine optimal transport map `T(x) = F x + b` from `N(m_x, Σ_x)` to `N(m_y, Σ_y)`.
#[derive(Debug, Clone)]
pub struct GaussianMap {
    pub linear: SymMatrix,
    pub offset: DVector<f64>,
}

impl GaussianMap {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self.linear.as_matrix() * x + &self.offset
    }
}

/// `F = Σ_y^{1/2} (Σ_y^{1/2} Σ_x Σ_y^{1/2})^{-1/2} Σ_y^{1/2}`, `b = m_y − F m_x`.
pub fn optimal_gaussian_map(
    mx: &DVector<f64>,
    sx: &SymMatrix,
    my: &DVector<f64>,
    sy: &SymMatrix,
) -> Result<GaussianMap> {
    let d = sx.dim();
    if sy.dim() != d || mx.len() != d || my.len() != d {
        return Err(Error::DimensionMismatch(
            "source and target Gaussians must share one dimension".into(),
        ));
    }
    for s in [sx, sy] {
        let decomp = s.spectral();
        if !decomp.is_full_rank() {
            return Err(Error::SingularCovariance {
                rank: decomp.rank(),
                dim: d,
            });
        }
    }
    let sy_half = sy.spectral().map_eigenvalues(f64::sqrt);
    let inner = SymMatrix::symmetrize(&sy_half * sx.as_matrix() * &sy_half);
    let inner_inv_half = inner.spectral().map_eigenvalues(|l| 1.0 / l.sqrt());
    let linear = SymMatrix::symmetrize(&sy_half * inner_inv_half * &sy_half);
    let offset = my - linear.as_matrix() * mx;
    Ok(GaussianMap { linear, offset })
}

/// Optimal drift gain and injected noise factor for a possibly singular covariance.
#[derive(Debug, Clone)]
pub struct SingularGain {
    /// Symmetric `G` solving `GΣ + ΣG = Ricc(Σ) − σσᵀ`, zero on `ker Σ × ker Σ`.
    pub gain: SymMatrix,
    /// `σ = P_K σ_B` (`d × q`).
    pub noise: DMatrix<f64>,
    pub rank: usize,
}

/// Minimum-noise pair `(G, σ)` for the singular-covariance filter.
///
/// `σ = P_K σ_B` projects the process noise onto the kernel of `Σ`; `G` is the blockwise
/// Lyapunov solution with the free kernel-kernel block set to zero. For `Σ ≻ 0` this is
/// `(√Ricc(Σ), 0)`.
pub fn solve_singular_gain(model: &LinearGaussianModel, sigma: &SymMatrix) -> Result<SingularGain> {
    solve_singular_gain_with_floor(model, sigma, 0.0)
}

/// [`solve_singular_gain`] with eigenvalues of `sigma` at or below `floor` counted as kernel.
pub fn solve_singular_gain_with_floor(model: &LinearGaussianModel, sigma: &SymMatrix, floor: f64) -> Result<SingularGain> {
    check_dim("covariance", sigma.dim(), model.state_dim())?;
    let decomp = SpectralDecomp::with_floor(sigma, floor);
    let d = decomp.dim();
    let r = decomp.rank();

    let mut rhs = ricc_rhs(model, sigma)?.into_inner();
    let noise = if r == d {
        DMatrix::zeros(d, model.noise_dim())
    } else {
        let vk = decomp.eigenvectors().columns(r, d - r);
        let kernel_proj = vk * vk.transpose();
        let noise = kernel_proj * model.sigma_b();
        rhs -= &noise * noise.transpose();
        noise
    };

    let (gain, kernel_block) = lyapunov_in_eigenbasis(&decomp, &rhs);
    let rhs_norm = rhs.norm();
    if kernel_block > KERNEL_BLOCK_TOL * rhs_norm {
        return Err(Error::InconsistentSingularSystem {
            ratio: kernel_block / rhs_norm,
        });
    }
    Ok(SingularGain {
        gain: SymMatrix(gain),
        noise,
        rank: r,
    })
}

/// Symmetric solution of `GΣ + ΣG = rhs` for PSD `Σ`, zero on `ker Σ × ker Σ`, together with the
/// Frobenius norm of the discarded kernel-kernel block of `rhs`.
pub fn solve_lyapunov_psd(sigma: &SymMatrix, rhs: &SymMatrix) -> (SymMatrix, f64) {
    let (g, k) = lyapunov_in_eigenbasis(&sigma.spectral(), rhs.as_matrix());
    (SymMatrix(g), k)
}
