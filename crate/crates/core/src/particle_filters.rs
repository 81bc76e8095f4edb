//! Finite-N controlled interacting particle filters.
//!
//! Particles are stored column-wise: an ensemble of `N` particles in `ℝ^d` is a `d × N`
//! matrix. Every variant computes its gain `K = Σ^{(N)} HᵀR⁻¹` from the same
//! [`empirical_moments`] call and takes one explicit Euler(–Maruyama) step with all
//! coefficients frozen over the step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::GaussianBelief;
use crate::matrix_eq::{solve_singular_gain_with_floor, sqrt_ricc, SymMatrix};
use crate::model::{standard_normals, LinearGaussianModel};
use crate::rng::StreamKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterVariant {
    StochasticFpf,
    DeterministicOptimalFpf,
    SingularOptimalFpf,
    PerturbedObsEnkf,
}

impl FilterVariant {
    pub const ALL: [FilterVariant; 4] = [
        FilterVariant::StochasticFpf,
        FilterVariant::DeterministicOptimalFpf,
        FilterVariant::SingularOptimalFpf,
        FilterVariant::PerturbedObsEnkf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterVariant::StochasticFpf => "stochastic_fpf",
            FilterVariant::DeterministicOptimalFpf => "deterministic_optimal_fpf",
            FilterVariant::SingularOptimalFpf => "singular_optimal_fpf",
            FilterVariant::PerturbedObsEnkf => "perturbed_obs_enkf",
        }
    }

    pub fn is_stochastic(self) -> bool {
        !matches!(self, FilterVariant::DeterministicOptimalFpf)
    }
}

impl std::str::FromStr for FilterVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        FilterVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown filter variant `{s}`"))
    }
}

/// Noise address for one time step: particle `i` draws from lane `i` of `key` at counter `step`.
#[derive(Debug, Clone, Copy)]
pub struct StepNoise {
    pub key: StreamKey,
    pub step: u64,
}

impl StepNoise {
    pub fn new(key: StreamKey, step: u64) -> Self {
        StepNoise { key, step }
    }

    fn particle(&self, i: usize) -> rand_chacha::ChaCha8Rng {
        self.key.rng(self.step, i as u64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: DMatrix<f64>,
    variant: FilterVariant,
}

fn check_finite(particles: &DMatrix<f64>) -> Result<()> {
    if particles.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericalBlowup("particle state has non-finite entries".into()))
    }
}

impl Ensemble {
    /// `particles` is `d × N` with one particle per column; requires `N ≥ 2`.
    pub fn new(particles: DMatrix<f64>, variant: FilterVariant) -> Result<Self> {
        if particles.ncols() < 2 {
            return Err(Error::TooFewParticles(particles.ncols()));
        }
        check_finite(&particles)?;
        Ok(Ensemble { particles, variant })
    }

    /// `N` i.i.d. draws from the model prior; particle `i` uses lane `i` of `key`.
    pub fn sample_prior(model: &LinearGaussianModel, n: usize, variant: FilterVariant, key: &StreamKey) -> Result<Self> {
        Self::new(sample_prior_particles(model, n, key), variant)
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn particle(&self, i: usize) -> DVector<f64> {
        self.particles.column(i).into_owned()
    }

    pub fn variant(&self) -> FilterVariant {
        self.variant
    }

    pub fn n(&self) -> usize {
        self.particles.ncols()
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    fn require(&self, expected: FilterVariant) -> Result<()> {
        if self.variant == expected {
            Ok(())
        } else {
            Err(Error::VariantMismatch {
                expected,
                found: self.variant,
            })
        }
    }

    fn stepped(&self, particles: DMatrix<f64>) -> Result<Ensemble> {
        check_finite(&particles)?;
        Ok(Ensemble {
            particles,
            variant: self.variant,
        })
    }
}

pub(crate) fn sample_prior_particles(model: &LinearGaussianModel, n: usize, key: &StreamKey) -> DMatrix<f64> {
    let d = model.state_dim();
    let mut x = DMatrix::zeros(d, n);
    for i in 0..n {
        let xi = standard_normals(&mut key.rng(0, i as u64), d);
        x.set_column(i, &(model.m0() + model.sigma0_sqrt() * xi));
    }
    x
}

/// Affinely maps the particles so their empirical mean and covariance equal `target` exactly.
/// Needs both the sample covariance and the target covariance to be positive definite.
pub fn match_moments(particles: &DMatrix<f64>, target: &GaussianBelief) -> Result<DMatrix<f64>> {
    let (mean, cov) = moments_of(particles);
    let eig = cov.spectral();
    if !eig.is_full_rank() {
        return Err(Error::SingularCovariance {
            rank: eig.rank(),
            dim: eig.dim(),
        });
    }
    let inv_half = eig.map_eigenvalues(|l| 1.0 / l.sqrt());
    let target_half = target.cov.spectral().map_eigenvalues(|l| l.max(0.0).sqrt());
    let map = target_half * inv_half;
    let mut out = particles.clone();
    for mut col in out.column_iter_mut() {
        let dev = &col - &mean;
        col.copy_from(&(&target.mean + &map * dev));
    }
    Ok(out)
}

fn moments_of(particles: &DMatrix<f64>) -> (DVector<f64>, SymMatrix) {
    let n = particles.ncols();
    let mean = particles.column_mean();
    let mut dev = particles.clone();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
    }
    let cov = SymMatrix::symmetrize(&dev * dev.transpose() / (n as f64 - 1.0));
    (mean, cov)
}

/// Ensemble mean and `(N−1)`-normalized covariance.
pub fn empirical_moments(ens: &Ensemble) -> GaussianBelief {
    let (mean, cov) = moments_of(&ens.particles);
    GaussianBelief { mean, cov }
}

/// Deviations `X^i − m` as columns.
fn deviations(particles: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let mut dev = particles.clone();
    for mut col in dev.column_iter_mut() {
        col -= mean;
    }
    dev
}

/// Common mean-transport part `A m dt + K (dz − H m dt)` of the optimal filters.
fn mean_shift(model: &LinearGaussianModel, mean: &DVector<f64>, gain: &DMatrix<f64>, dz: &DVector<f64>, dt: f64) -> DVector<f64> {
    model.a() * mean * dt + gain * (dz - model.h() * mean * dt)
}

fn check_inputs(model: &LinearGaussianModel, ens: &Ensemble, dz: &DVector<f64>) -> Result<()> {
    if ens.dim() != model.state_dim() || dz.len() != model.obs_dim() {
        return Err(Error::DimensionMismatch(format!(
            "ensemble dimension {} / increment length {} do not match model ({}, {})",
            ens.dim(),
            dz.len(),
            model.state_dim(),
            model.obs_dim()
        )));
    }
    Ok(())
}

/// Stochastic linear FPF:
/// `dXⁱ = AXⁱdt + σ_B dBⁱ + K (dZ − ½(HXⁱ + Hm) dt)`.
pub fn step_stochastic_fpf(
    model: &LinearGaussianModel,
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    noise: &StepNoise,
) -> Result<Ensemble> {
    ens.require(FilterVariant::StochasticFpf)?;
    check_inputs(model, ens, dz)?;
    let moments = empirical_moments(ens);
    let gain = model.gain(&moments.cov);
    let hm = model.h() * &moments.mean;
    let sdt = dt.sqrt();
    let q = model.noise_dim();
    let x = &ens.particles;
    let drift = model.a() * x * dt;
    let mut out = x + drift;
    for i in 0..ens.n() {
        let hx = model.h() * x.column(i);
        let innov = dz - (hx + &hm) * (0.5 * dt);
        let beta = standard_normals(&mut noise.particle(i), q);
        let inc = &gain * innov + model.sigma_b() * beta * sdt;
        let mut col = out.column_mut(i);
        col += inc;
    }
    ens.stepped(out)
}

/// Deterministic optimal-transport FPF:
/// `dXⁱ = A m dt + K (dZ − H m dt) + √Ricc(Σ)(Xⁱ − m) dt`.
pub fn step_det_fpf(model: &LinearGaussianModel, ens: &Ensemble, dz: &DVector<f64>, dt: f64) -> Result<Ensemble> {
    ens.require(FilterVariant::DeterministicOptimalFpf)?;
    check_inputs(model, ens, dz)?;
    let moments = empirical_moments(ens);
    let g = sqrt_ricc(model, &moments.cov)?;
    let gain = model.gain(&moments.cov);
    let shift = mean_shift(model, &moments.mean, &gain, dz, dt);
    let out = transport(&ens.particles, &moments.mean, &shift, g.as_matrix(), dt);
    ens.stepped(out)
}

/// `Xⁱ + shift + G (Xⁱ − m) dt` for every column.
fn transport(x: &DMatrix<f64>, mean: &DVector<f64>, shift: &DVector<f64>, g: &DMatrix<f64>, dt: f64) -> DMatrix<f64> {
    let dev = deviations(x, mean);
    let mut out = x + g * dev * dt;
    for mut col in out.column_iter_mut() {
        col += shift;
    }
    out
}

/// Optimal FPF for possibly singular `Σ^{(N)}`: the deterministic step plus `σ dBⁱ` with
/// `σ = σ_B − Σ Σ⁺ σ_B` and the matching minimum-norm gain.
pub fn step_singular_fpf(
    model: &LinearGaussianModel,
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    noise: &StepNoise,
) -> Result<Ensemble> {
    ens.require(FilterVariant::SingularOptimalFpf)?;
    check_inputs(model, ens, dz)?;
    let moments = empirical_moments(ens);
    // The summed mean carries rounding error up to about N·ε·max|X|; covariance eigenvalues
    // below its square are indistinguishable from zero.
    let floor = (4.0 * ens.n() as f64 * f64::EPSILON * ens.particles.amax()).powi(2);
    let sg = solve_singular_gain_with_floor(model, &moments.cov, floor)?;
    let gain = model.gain(&moments.cov);
    let shift = mean_shift(model, &moments.mean, &gain, dz, dt);
    let mut out = transport(&ens.particles, &moments.mean, &shift, sg.gain.as_matrix(), dt);
    if sg.rank < ens.dim() {
        let sdt = dt.sqrt();
        let q = model.noise_dim();
        for i in 0..ens.n() {
            let beta = standard_normals(&mut noise.particle(i), q);
            let mut col = out.column_mut(i);
            col += &sg.noise * beta * sdt;
        }
    }
    ens.stepped(out)
}

/// Perturbed-observation EnKF:
/// `dXⁱ = AXⁱdt + σ_B dBⁱ + K (dZ − HXⁱdt − R^{1/2} dWⁱ)`.
pub fn step_perturbed_enkf(
    model: &LinearGaussianModel,
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    noise: &StepNoise,
) -> Result<Ensemble> {
    ens.require(FilterVariant::PerturbedObsEnkf)?;
    check_inputs(model, ens, dz)?;
    let moments = empirical_moments(ens);
    let gain = model.gain(&moments.cov);
    let sdt = dt.sqrt();
    let (q, m) = (model.noise_dim(), model.obs_dim());
    let x = &ens.particles;
    let mut out = x + model.a() * x * dt;
    for i in 0..ens.n() {
        let mut rng = noise.particle(i);
        let beta = standard_normals(&mut rng, q);
        let omega = standard_normals(&mut rng, m);
        let innov = dz - model.h() * x.column(i) * dt - model.r_sqrt() * omega * sdt;
        let inc = &gain * innov + model.sigma_b() * beta * sdt;
        let mut col = out.column_mut(i);
        col += inc;
    }
    ens.stepped(out)
}

/// Dispatches on the ensemble's variant.
pub fn step_ensemble(
    model: &LinearGaussianModel,
    ens: &Ensemble,
    dz: &DVector<f64>,
    dt: f64,
    noise: &StepNoise,
) -> Result<Ensemble> {
    match ens.variant {
        FilterVariant::StochasticFpf => step_stochastic_fpf(model, ens, dz, dt, noise),
        FilterVariant::DeterministicOptimalFpf => step_det_fpf(model, ens, dz, dt),
        FilterVariant::SingularOptimalFpf => step_singular_fpf(model, ens, dz, dt, noise),
        FilterVariant::PerturbedObsEnkf => step_perturbed_enkf(model, ens, dz, dt, noise),
    }
}

/// Independent copies of the exact mean-field process, coupled to an [`Ensemble`] through
/// their initial condition and the observation path.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldEnsemble {
    particles: DMatrix<f64>,
}

impl MeanFieldEnsemble {
    /// Starts from exactly the particles of `ens`.
    pub fn coupled_to(ens: &Ensemble) -> Self {
        MeanFieldEnsemble {
            particles: ens.particles.clone(),
        }
    }

    pub fn from_particles(particles: DMatrix<f64>) -> Self {
        MeanFieldEnsemble { particles }
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn n(&self) -> usize {
        self.particles.ncols()
    }
}

/// `dX̄ⁱ = A m dt + K (dZ − H m dt) + √Ricc(Σ)(X̄ⁱ − m) dt` with the exact Kalman `(m, Σ)`.
pub fn step_mean_field(
    model: &LinearGaussianModel,
    mfe: &MeanFieldEnsemble,
    belief: &GaussianBelief,
    dz: &DVector<f64>,
    dt: f64,
) -> Result<MeanFieldEnsemble> {
    if belief.dim() != model.state_dim() || mfe.particles.nrows() != model.state_dim() {
        return Err(Error::DimensionMismatch("mean-field ensemble does not match the model".into()));
    }
    let g = sqrt_ricc(model, &belief.cov)?;
    let gain = model.gain(&belief.cov);
    let shift = mean_shift(model, &belief.mean, &gain, dz, dt);
    let out = transport(&mfe.particles, &belief.mean, &shift, g.as_matrix(), dt);
    check_finite(&out)?;
    Ok(MeanFieldEnsemble { particles: out })
}

/// Mean over particles of `‖Xⁱ − X̄ⁱ‖²`.
pub fn coupling_error(ens: &Ensemble, mfe: &MeanFieldEnsemble) -> f64 {
    (&ens.particles - &mfe.particles).norm_squared() / ens.n() as f64
}
