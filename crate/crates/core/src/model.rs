//! Linear-Gaussian hidden-Markov model and Euler–Maruyama simulation of truth and
//! observation paths.
//!
//! ```text
//! dX = A X dt + σ_B dB,        X_0 ~ N(m_0, Σ_0)
//! dZ = H X dt + R^{1/2} dW
//! ```

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix_eq::SymMatrix;
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
    h: DMatrix<f64>,
    sigma_b: DMatrix<f64>,
    r: SymMatrix,
    m0: DVector<f64>,
    sigma0: SymMatrix,
    // derived
    process_cov: SymMatrix,
    r_inv: DMatrix<f64>,
    r_sqrt: DMatrix<f64>,
    gain_factor: DMatrix<f64>,
    info: SymMatrix,
    sigma0_sqrt: DMatrix<f64>,
}

impl LinearGaussianModel {
    /// Validates dimensions, `R ≻ 0` and `Σ_0 ⪰ 0`. Errors name the offending `model.*` key.
    pub fn new(
        a: DMatrix<f64>,
        h: DMatrix<f64>,
        sigma_b: DMatrix<f64>,
        r: DMatrix<f64>,
        m0: DVector<f64>,
        sigma0: DMatrix<f64>,
    ) -> Result<Self> {
        let d = a.nrows();
        if d == 0 || !a.is_square() {
            return Err(Error::config("model.a", "drift must be a non-empty square matrix"));
        }
        if h.ncols() != d || h.nrows() == 0 {
            return Err(Error::config(
                "model.h",
                format!("expected m×{d} observation matrix, got {}×{}", h.nrows(), h.ncols()),
            ));
        }
        let m = h.nrows();
        if sigma_b.nrows() != d || sigma_b.ncols() == 0 {
            return Err(Error::config(
                "model.sigma_b",
                format!("expected {d}×q noise factor, got {}×{}", sigma_b.nrows(), sigma_b.ncols()),
            ));
        }
        if r.nrows() != m || r.ncols() != m {
            return Err(Error::config("model.r", format!("expected {m}×{m} matrix")));
        }
        if m0.len() != d {
            return Err(Error::config("model.m0", format!("expected length {d}")));
        }
        if sigma0.nrows() != d || sigma0.ncols() != d {
            return Err(Error::config("model.sigma0", format!("expected {d}×{d} matrix")));
        }
        let all_finite = [&a, &h, &sigma_b, &r, &sigma0].iter().all(|x| x.iter().all(|v| v.is_finite()))
            && m0.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::config("model", "entries must be finite"));
        }

        let r = SymMatrix::from_matrix(r)?;
        let r_eig = r.spectral();
        if r_eig.rank() < m {
            return Err(Error::config("model.r", "observation-noise covariance must be positive definite"));
        }
        let sigma0 = SymMatrix::from_matrix(sigma0)?;
        let s0_eig = sigma0.spectral();
        if s0_eig.min_eigenvalue() < -1e-10 * s0_eig.max_eigenvalue().abs().max(1.0) {
            return Err(Error::config("model.sigma0", "prior covariance must be positive semidefinite"));
        }

        let r_inv = r_eig.map_eigenvalues(|l| 1.0 / l);
        let r_sqrt = r_eig.map_eigenvalues(f64::sqrt);
        let gain_factor = h.transpose() * &r_inv;
        let info = SymMatrix::symmetrize(&gain_factor * &h);
        let process_cov = SymMatrix::symmetrize(&sigma_b * sigma_b.transpose());
        let sigma0_sqrt = s0_eig.map_eigenvalues(|l| l.max(0.0).sqrt());

        Ok(LinearGaussianModel {
            a,
            h,
            sigma_b,
            r,
            m0,
            sigma0,
            process_cov,
            r_inv,
            r_sqrt,
            gain_factor,
            info,
            sigma0_sqrt,
        })
    }

    /// Scalar model `dX = a X dt + b dB`, `dZ = h X dt + √r dW`.
    pub fn scalar(a: f64, h: f64, b: f64, r: f64, m0: f64, s0: f64) -> Result<Self> {
        let one = |v| DMatrix::from_element(1, 1, v);
        Self::new(one(a), one(h), one(b), one(r), DVector::from_element(1, m0), one(s0))
    }

    /// Fully observed static model: `A = 0`, `σ_B = 0`, `H = I`, `R = σ_w² I`, `X_0 ~ N(0, σ_0² I)`.
    pub fn static_example(d: usize, sigma0: f64, sigma_w: f64) -> Result<Self> {
        if sigma0 <= 0.0 || sigma_w <= 0.0 {
            return Err(Error::config("static.sigma", "standard deviations must be positive"));
        }
        Self::new(
            DMatrix::zeros(d, d),
            DMatrix::identity(d, d),
            DMatrix::zeros(d, 1),
            DMatrix::identity(d, d) * sigma_w * sigma_w,
            DVector::zeros(d),
            DMatrix::identity(d, d) * sigma0 * sigma0,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.sigma_b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn sigma_b(&self) -> &DMatrix<f64> {
        &self.sigma_b
    }

    pub fn r(&self) -> &SymMatrix {
        &self.r
    }

    pub fn m0(&self) -> &DVector<f64> {
        &self.m0
    }

    pub fn sigma0(&self) -> &SymMatrix {
        &self.sigma0
    }

    /// `Σ_B = σ_B σ_Bᵀ`.
    pub fn process_cov(&self) -> &SymMatrix {
        &self.process_cov
    }

    pub fn r_inv(&self) -> &DMatrix<f64> {
        &self.r_inv
    }

    /// Symmetric square root of `R`.
    pub fn r_sqrt(&self) -> &DMatrix<f64> {
        &self.r_sqrt
    }

    /// `HᵀR⁻¹`, so the Kalman gain is `Σ · gain_factor`.
    pub fn gain_factor(&self) -> &DMatrix<f64> {
        &self.gain_factor
    }

    /// `HᵀR⁻¹H`.
    pub fn info(&self) -> &SymMatrix {
        &self.info
    }

    /// Symmetric square root of `Σ_0`.
    pub fn sigma0_sqrt(&self) -> &DMatrix<f64> {
        &self.sigma0_sqrt
    }

    /// Kalman-type gain `Σ HᵀR⁻¹` for any covariance.
    pub fn gain(&self, cov: &SymMatrix) -> DMatrix<f64> {
        cov.as_matrix() * &self.gain_factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    dt: f64,
    steps: usize,
}

impl TimeGrid {
    /// Grid covering `[0, horizon]`; the horizon must be an integer multiple of `dt`.
    pub fn new(dt: f64, horizon: f64) -> Result<Self> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(Error::config("grid.dt", "time step must be positive and finite"));
        }
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(Error::config("grid.horizon", "horizon must be positive and finite"));
        }
        let steps = (horizon / dt).round();
        if steps < 1.0 || (steps * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::config("grid.horizon", "horizon must be a positive integer multiple of grid.dt"));
        }
        Ok(TimeGrid {
            dt,
            steps: steps as usize,
        })
    }

    pub fn with_steps(dt: f64, steps: usize) -> Result<Self> {
        Self::new(dt, dt * steps as f64)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Simulated truth and observation increments. Row `k` of `x` is `X(t_k)`, row `k` of `dz`
/// is the increment over `[t_k, t_{k+1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub x: DMatrix<f64>,
    pub dz: DMatrix<f64>,
    pub seed: u64,
    pub grid: TimeGrid,
}

impl PathRecord {
    pub fn steps(&self) -> usize {
        self.dz.nrows()
    }

    pub fn state(&self, k: usize) -> DVector<f64> {
        self.x.row(k).transpose()
    }

    pub fn increment(&self, k: usize) -> DVector<f64> {
        self.dz.row(k).transpose()
    }

    /// Cumulative observation `Z(t_steps)`.
    pub fn total_observation(&self) -> DVector<f64> {
        self.dz.row_sum().transpose()
    }
}

/// Sub-streams of the path generator.
const PRIOR_STREAM: u64 = 0;
const PROCESS_STREAM: u64 = 1;
const OBS_STREAM: u64 = 2;

pub(crate) fn standard_normals<R: rand::Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Euler–Maruyama path on `grid` with `X_0 ~ N(m_0, Σ_0)`, drawn from `StreamKey::new(seed)`.
pub fn simulate_truth_obs(model: &LinearGaussianModel, grid: &TimeGrid, seed: u64) -> PathRecord {
    simulate_with_key(model, grid, &StreamKey::new(seed))
}

/// Same as [`simulate_truth_obs`] with an explicit stream key.
pub fn simulate_with_key(model: &LinearGaussianModel, grid: &TimeGrid, key: &StreamKey) -> PathRecord {
    let d = model.state_dim();
    let m = model.obs_dim();
    let q = model.noise_dim();
    let dt = grid.dt();
    let sdt = dt.sqrt();
    let steps = grid.steps();

    let mut x = DMatrix::zeros(steps + 1, d);
    let mut dz = DMatrix::zeros(steps, m);

    let prior = key.child(PRIOR_STREAM);
    let process = key.child(PROCESS_STREAM);
    let obs = key.child(OBS_STREAM);

    let xi = standard_normals(&mut prior.rng(0, 0), d);
    let mut state = model.m0() + model.sigma0_sqrt() * xi;
    x.row_mut(0).copy_from(&state.transpose());

    for k in 0..steps {
        let zeta = standard_normals(&mut obs.rng(k as u64, 0), m);
        let inc = model.h() * &state * dt + model.r_sqrt() * zeta * sdt;
        dz.row_mut(k).copy_from(&inc.transpose());

        let beta = standard_normals(&mut process.rng(k as u64, 0), q);
        state = &state + model.a() * &state * dt + model.sigma_b() * beta * sdt;
        x.row_mut(k + 1).copy_from(&state.transpose());
    }

    PathRecord {
        x,
        dz,
        seed: key.seed(),
        grid: *grid,
    }
}
