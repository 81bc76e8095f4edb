//! Kalman–Bucy reference filter, steady-state Riccati solution and stability margin.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::matrix_eq::{ricc_rhs, SymMatrix};
use crate::model::{LinearGaussianModel, PathRecord};

/// Loss of positive semidefiniteness beyond this fraction of `λ_max` is a blowup.
const PSD_TOL: f64 = 1e-8;
const ARE_TOL: f64 = 1e-10;
const ARE_MAX_STEPS: usize = 10_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: SymMatrix,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {}, covariance is {}×{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        Ok(GaussianBelief { mean, cov })
    }

    pub fn prior(model: &LinearGaussianModel) -> Self {
        GaussianBelief {
            mean: model.m0().clone(),
            cov: model.sigma0().clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One classical RK4 step of `dΣ/dt = Ricc(Σ)`.
pub fn riccati_rk4_step(model: &LinearGaussianModel, cov: &SymMatrix, dt: f64) -> Result<SymMatrix> {
    let s = cov.as_matrix();
    let k1 = ricc_rhs(model, cov)?.into_inner();
    let k2 = ricc_rhs(model, &SymMatrix::symmetrize(s + &k1 * (0.5 * dt)))?.into_inner();
    let k3 = ricc_rhs(model, &SymMatrix::symmetrize(s + &k2 * (0.5 * dt)))?.into_inner();
    let k4 = ricc_rhs(model, &SymMatrix::symmetrize(s + &k3 * dt))?.into_inner();
    Ok(SymMatrix::symmetrize(
        s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0),
    ))
}

fn check_psd(cov: &SymMatrix) -> Result<()> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup("covariance has non-finite entries".into()));
    }
    let eig = cov.spectral();
    let (lmin, lmax) = (eig.min_eigenvalue(), eig.max_eigenvalue());
    if lmin < -PSD_TOL * lmax.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NumericalBlowup(format!(
            "covariance lost positive semidefiniteness (λ_min = {lmin:e}, λ_max = {lmax:e})"
        )));
    }
    Ok(())
}

/// Mean by an Euler step with the gain `ΣHᵀR⁻¹` frozen over the step; covariance by RK4.
pub fn kalman_step(
    model: &LinearGaussianModel,
    belief: &GaussianBelief,
    dz: &DVector<f64>,
    dt: f64,
) -> Result<GaussianBelief> {
    if belief.dim() != model.state_dim() || dz.len() != model.obs_dim() {
        return Err(Error::DimensionMismatch("belief or increment does not match the model".into()));
    }
    let m = &belief.mean;
    let gain = model.gain(&belief.cov);
    let innovation = dz - model.h() * m * dt;
    let mean = m + model.a() * m * dt + gain * innovation;
    let cov = riccati_rk4_step(model, &belief.cov, dt)?;
    check_psd(&cov)?;
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup("mean has non-finite entries".into()));
    }
    Ok(GaussianBelief { mean, cov })
}

/// Beliefs at every grid time of `path`, starting from the prior.
pub fn run_kalman(model: &LinearGaussianModel, path: &PathRecord) -> Result<Vec<GaussianBelief>> {
    let dt = path.grid.dt();
    let mut out = Vec::with_capacity(path.steps() + 1);
    let mut belief = GaussianBelief::prior(model);
    out.push(belief.clone());
    for k in 0..path.steps() {
        belief = kalman_step(model, &belief, &path.increment(k), dt)?;
        out.push(belief.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub sigma_inf: SymMatrix,
    /// `min{−Re λ : λ ∈ Spec(A − Σ∞HᵀR⁻¹H)}`.
    pub lambda0: f64,
}

/// Spectral margin of the closed loop `A − Σ HᵀR⁻¹H`.
pub fn stability_margin(model: &LinearGaussianModel, sigma: &SymMatrix) -> f64 {
    let closed = model.a() - sigma.as_matrix() * model.info().as_matrix();
    closed
        .complex_eigenvalues()
        .iter()
        .map(|l| -l.re)
        .fold(f64::INFINITY, f64::min)
}

/// Steady-state covariance by integrating `dΣ/dt = Ricc(Σ)` from `Σ = I` until
/// `‖Ricc(Σ)‖_F ≤ 1e-10 (1 + ‖Σ‖_F)`.
pub fn solve_are(model: &LinearGaussianModel) -> Result<SteadyState> {
    let d = model.state_dim();
    let a_norm = model.a().norm();
    let m_norm = model.info().norm();
    let mut sigma = SymMatrix::identity(d);
    let mut converged = false;
    for _ in 0..ARE_MAX_STEPS {
        let resid = ricc_rhs(model, &sigma)?.norm();
        if resid <= ARE_TOL * (1.0 + sigma.norm()) {
            converged = true;
            break;
        }
        // RK4 is stable for h·|spectrum of the linearization| < 2.78.
        let h = 0.5 / (1.0 + 2.0 * (a_norm + m_norm * sigma.norm()));
        sigma = riccati_rk4_step(model, &sigma, h)?;
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalBlowup("Riccati integration diverged".into()));
        }
    }
    if !converged {
        return Err(Error::AreDivergence { steps: ARE_MAX_STEPS });
    }
    let lambda0 = stability_margin(model, &sigma);
    if lambda0.is_nan() || lambda0 <= 0.0 {
        return Err(Error::UnstableClosedLoop { lambda0 });
    }
    Ok(SteadyState {
        sigma_inf: sigma,
        lambda0,
    })
}
