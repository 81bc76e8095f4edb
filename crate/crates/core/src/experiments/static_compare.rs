//! Static example: `X ~ N(0, σ₀²I_d)` observed as `dZ = X dt + σ_w dW` on `[0, 1]`.
//! The posterior mean of `aᵀX` is estimated by importance sampling (self-normalized and
//! with the exact normalizing constant) and by the stochastic linear FPF.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiments::{mean_and_stderr, par_map};
use crate::model::{standard_normals, LinearGaussianModel};
use crate::particle_filters::{step_stochastic_fpf, Ensemble, FilterVariant, StepNoise};
use crate::rng::StreamKey;

/// Log-weights below this underflow to zero when exponentiated without shifting.
const EXP_UNDERFLOW: f64 = -745.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Estimator {
    #[serde(rename = "PF")]
    Pf,
    #[serde(rename = "ModifiedPF")]
    ModifiedPf,
    #[serde(rename = "FPF")]
    Fpf,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Pf, Estimator::ModifiedPf, Estimator::Fpf];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Pf => "PF",
            Estimator::ModifiedPf => "ModifiedPF",
            Estimator::Fpf => "FPF",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown estimator `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MseFlag {
    /// Some trial had every unnormalized weight below the `exp` underflow threshold.
    DegenerateWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRecord {
    pub n: usize,
    pub d: usize,
    pub estimator: Estimator,
    pub mse: f64,
    pub std_err: f64,
    pub trials: usize,
    pub flag: Option<MseFlag>,
}

#[derive(Debug, Clone)]
pub struct StaticSettings {
    pub sigma0: f64,
    pub sigma_w: f64,
    pub dt: f64,
    pub trials: usize,
    pub seed: u64,
    pub estimators: Vec<Estimator>,
    /// Unit test-function direction; `None` means `1/√d · 1`.
    pub direction: Option<DVector<f64>>,
}

impl StaticSettings {
    pub fn new(sigma: f64, trials: usize, seed: u64) -> Self {
        StaticSettings {
            sigma0: sigma,
            sigma_w: sigma,
            dt: 1e-3,
            trials,
            seed,
            estimators: Estimator::ALL.to_vec(),
            direction: None,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        StaticSettings {
            sigma0: cfg.static_spec.sigma0,
            sigma_w: cfg.static_spec.sigma_w,
            dt: cfg.dt,
            trials: cfg.trials,
            seed: cfg.seed,
            estimators: Estimator::ALL.to_vec(),
            direction: cfg.static_spec.direction.as_ref().map(|v| DVector::from_column_slice(v)),
        }
    }

    fn steps(&self) -> usize {
        (1.0 / self.dt).round().max(1.0) as usize
    }

    pub fn direction(&self, d: usize) -> DVector<f64> {
        match &self.direction {
            Some(a) => a.clone(),
            None => DVector::from_element(d, 1.0 / (d as f64).sqrt()),
        }
    }

    /// `aᵀ E[X | Z₁]`.
    pub fn posterior_mean(&self, a: &DVector<f64>, z1: &DVector<f64>) -> f64 {
        let s0 = self.sigma0 * self.sigma0;
        a.dot(z1) * s0 / (s0 + self.sigma_w * self.sigma_w)
    }
}

/// `σ²/N · (3·2^d − ½)`: MSE of the exact-normalizer importance-sampling estimator of
/// `aᵀX`, `‖a‖ = 1`, for `σ₀ = σ_w = σ`.
pub fn mse_pf_exact(d: usize, n: usize, sigma: f64) -> f64 {
    sigma * sigma / n as f64 * (3.0 * 2f64.powi(d as i32) - 0.5)
}

/// `σ²(3d² + 2d)/N`: upper bound for the FPF estimator's MSE.
pub fn mse_fpf_bound(d: usize, n: usize, sigma: f64) -> f64 {
    let d = d as f64;
    sigma * sigma * (3.0 * d * d + 2.0 * d) / n as f64
}

/// Random inputs of one trial.
#[derive(Debug, Clone)]
pub struct TrialDraws {
    pub truth: DVector<f64>,
    /// Prior samples as columns.
    pub particles: DMatrix<f64>,
    /// Observation increments as columns, one per step.
    pub dz: DMatrix<f64>,
}

impl TrialDraws {
    pub fn total_observation(&self) -> DVector<f64> {
        self.dz.column_sum()
    }
}

pub fn draw_trial(d: usize, n: usize, settings: &StaticSettings, key: &StreamKey) -> TrialDraws {
    let truth = standard_normals(&mut key.rng(0, 0), d) * settings.sigma0;
    let mut rng = key.rng(1, 0);
    let particles = DMatrix::from_column_slice(d, n, standard_normals(&mut rng, d * n).as_slice()) * settings.sigma0;
    let steps = settings.steps();
    let dt = settings.dt;
    let noise = standard_normals(&mut key.rng(2, 0), d * steps);
    let mut dz = DMatrix::from_column_slice(d, steps, noise.as_slice()) * (settings.sigma_w * dt.sqrt());
    for mut col in dz.column_iter_mut() {
        col.axpy(dt, &truth, 1.0);
    }
    TrialDraws { truth, particles, dz }
}

/// Self-normalized importance sampling. Returns the estimate and whether the unshifted
/// weights would all have underflowed; `None` when the weights cannot be normalized at all.
pub fn pf_estimate(particles: &DMatrix<f64>, z1: &DVector<f64>, sigma_w: f64, a: &DVector<f64>) -> Option<(f64, bool)> {
    let logw: Vec<f64> = particles
        .column_iter()
        .map(|x| -(z1 - x).norm_squared() / (2.0 * sigma_w * sigma_w))
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    let est = particles
        .column_iter()
        .zip(&w)
        .map(|(x, wi)| wi * a.dot(&x))
        .sum::<f64>()
        / total;
    Some((est, max < EXP_UNDERFLOW))
}

/// Self-normalized weights (for inspection); sum to one.
pub fn pf_weights(particles: &DMatrix<f64>, z1: &DVector<f64>, sigma_w: f64) -> Vec<f64> {
    let logw: Vec<f64> = particles
        .column_iter()
        .map(|x| -(z1 - x).norm_squared() / (2.0 * sigma_w * sigma_w))
        .collect();
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Importance sampling with the exact normalizing constant
/// `E[exp(−‖Z₁−X‖²/2σ_w²) | Z₁] = (σ_w²/(σ_w²+σ₀²))^{d/2} exp(−‖Z₁‖²/2(σ_w²+σ₀²))`.
pub fn modified_pf_estimate(
    particles: &DMatrix<f64>,
    z1: &DVector<f64>,
    sigma0: f64,
    sigma_w: f64,
    a: &DVector<f64>,
) -> f64 {
    let (s0, sw) = (sigma0 * sigma0, sigma_w * sigma_w);
    let d = z1.len() as f64;
    let log_norm = 0.5 * d * (sw / (sw + s0)).ln() - z1.norm_squared() / (2.0 * (sw + s0));
    let n = particles.ncols() as f64;
    particles
        .column_iter()
        .map(|x| (-(z1 - x).norm_squared() / (2.0 * sw) - log_norm).exp() * a.dot(&x))
        .sum::<f64>()
        / n
}

/// Stochastic linear FPF estimate of `aᵀm₁`, computed through the ensemble moments.
///
/// With `A = 0`, `Σ_B = 0` the Euler step closes on the empirical moments:
/// `m' = m + K(dz − m dt)` and `Σ' = (I − K dt/2) Σ (I − K dt/2)`, `K = Σ/σ_w²`. Both stay
/// diagonal in the eigenbasis of the initial sample covariance, so each step is `O(d)`.
/// The result equals [`fpf_estimate_particles`] up to rounding.
pub fn fpf_estimate(particles: &DMatrix<f64>, dz: &DMatrix<f64>, sigma_w: f64, dt: f64, a: &DVector<f64>) -> f64 {
    let n = particles.ncols();
    let mean = particles.column_mean();
    let mut dev = particles.clone();
    for mut col in dev.column_iter_mut() {
        col -= &mean;
    }
    let cov = crate::matrix_eq::SymMatrix::symmetrize(&dev * dev.transpose() / (n as f64 - 1.0));
    let eig = cov.spectral();
    let v = eig.eigenvectors();
    let mut lam: Vec<f64> = eig.eigenvalues().iter().map(|l| l.max(0.0)).collect();
    let mut m = v.tr_mul(&mean);
    let at = v.tr_mul(a);
    let rotated = v.tr_mul(dz);
    let sw = sigma_w * sigma_w;
    for dzt in rotated.column_iter() {
        for j in 0..lam.len() {
            let k = lam[j] / sw;
            m[j] += k * (dzt[j] - m[j] * dt);
            lam[j] *= (1.0 - 0.5 * k * dt).powi(2);
        }
    }
    at.dot(&m)
}

/// Same estimator as [`fpf_estimate`], stepping every particle.
pub fn fpf_estimate_particles(
    particles: &DMatrix<f64>,
    dz: &DMatrix<f64>,
    sigma0: f64,
    sigma_w: f64,
    dt: f64,
    a: &DVector<f64>,
) -> Result<f64> {
    let d = particles.nrows();
    let model = LinearGaussianModel::static_example(d, sigma0, sigma_w)?;
    let mut ens = Ensemble::new(particles.clone(), FilterVariant::StochasticFpf)?;
    // Σ_B = 0, so the noise stream is never used.
    let key = StreamKey::new(0);
    for (k, col) in dz.column_iter().enumerate() {
        ens = step_stochastic_fpf(&model, &ens, &col.into_owned(), dt, &StepNoise::new(key, k as u64))?;
    }
    Ok(a.dot(&ens.particles().column_mean()))
}

/// Squared errors of one trial, in the order of `settings.estimators`; PF entries are
/// `None` when the weights could not be normalized.
struct TrialErrors {
    sq: Vec<Option<f64>>,
    underflow: bool,
}

fn run_trial(d: usize, n: usize, settings: &StaticSettings, a: &DVector<f64>, key: &StreamKey) -> TrialErrors {
    let draws = draw_trial(d, n, settings, key);
    let z1 = draws.total_observation();
    let exact = settings.posterior_mean(a, &z1);
    let mut underflow = false;
    let sq = settings
        .estimators
        .iter()
        .map(|e| match e {
            Estimator::Pf => pf_estimate(&draws.particles, &z1, settings.sigma_w, a).map(|(est, uf)| {
                underflow |= uf;
                (est - exact).powi(2)
            }),
            Estimator::ModifiedPf => Some(
                (modified_pf_estimate(&draws.particles, &z1, settings.sigma0, settings.sigma_w, a) - exact).powi(2),
            ),
            Estimator::Fpf => Some((fpf_estimate(&draws.particles, &draws.dz, settings.sigma_w, settings.dt, a) - exact).powi(2)),
        })
        .collect();
    TrialErrors { sq, underflow }
}

/// All estimators for one `(d, N)` cell over `settings.trials` trials with common random numbers.
pub fn static_cell(d: usize, n: usize, settings: &StaticSettings) -> Result<Vec<MseRecord>> {
    if d == 0 || n == 0 {
        return Err(Error::config("d_list/n_list", "dimension and ensemble size must be positive"));
    }
    if settings.estimators.contains(&Estimator::Fpf) && n < 2 {
        return Err(Error::TooFewParticles(n));
    }
    let a = settings.direction(d);
    if a.len() != d {
        return Err(Error::DimensionMismatch(format!("direction has length {}, d = {d}", a.len())));
    }
    let cell = StreamKey::new(settings.seed).child(d as u64).child(n as u64);
    let trials = par_map(settings.trials, |t| run_trial(d, n, settings, &a, &cell.child(t as u64)));

    let records = settings
        .estimators
        .iter()
        .enumerate()
        .map(|(j, &estimator)| {
            let sq: Vec<f64> = trials.iter().filter_map(|t| t.sq[j]).collect();
            let (mse, std_err) = mean_and_stderr(&sq);
            let degenerate = estimator == Estimator::Pf
                && (sq.len() < trials.len() || trials.iter().any(|t| t.underflow));
            MseRecord {
                n,
                d,
                estimator,
                mse,
                std_err,
                trials: sq.len(),
                flag: degenerate.then_some(MseFlag::DegenerateWeights),
            }
        })
        .collect();
    Ok(records)
}

/// Every `(d, N)` of the configuration, `d` outer.
pub fn run_static_compare(cfg: &ExperimentConfig) -> Result<Vec<MseRecord>> {
    let settings = StaticSettings::from_config(cfg);
    let mut out = Vec::new();
    for &d in &cfg.d_list {
        for &n in &cfg.n_list {
            out.extend(static_cell(d, n, &settings)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_formula_values() {
        assert!((mse_pf_exact(1, 100, 1.0) - 0.055).abs() < 1e-15);
        assert!((mse_fpf_bound(2, 50, 1.0) - 16.0 / 50.0).abs() < 1e-15);
    }

    #[test]
    fn moment_path_equals_particle_path() {
        let settings = StaticSettings {
            dt: 1e-2,
            ..StaticSettings::new(0.8, 1, 3)
        };
        for (d, n) in [(1, 5), (3, 12), (4, 3)] {
            let draws = draw_trial(d, n, &settings, &StreamKey::new(9).child(d as u64));
            let a = settings.direction(d);
            let fast = fpf_estimate(&draws.particles, &draws.dz, 0.8, 1e-2, &a);
            let slow = fpf_estimate_particles(&draws.particles, &draws.dz, 0.8, 0.8, 1e-2, &a).unwrap();
            assert!((fast - slow).abs() < 1e-10, "d={d} n={n}: {fast} vs {slow}");
        }
    }

    #[test]
    fn weights_normalized() {
        let settings = StaticSettings::new(1.0, 1, 0);
        let draws = draw_trial(3, 50, &settings, &StreamKey::new(1));
        let w = pf_weights(&draws.particles, &draws.total_observation(), 1.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn far_observation_is_flagged_not_nan() {
        let particles = DMatrix::from_column_slice(1, 3, &[0.0, 0.1, -0.2]);
        let z1 = DVector::from_element(1, 100.0);
        let (est, underflow) = pf_estimate(&particles, &z1, 0.1, &DVector::from_element(1, 1.0)).unwrap();
        assert!(underflow);
        assert!((est - 0.1).abs() < 1e-12);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let settings = StaticSettings {
            dt: 1e-2,
            ..StaticSettings::new(1.0, 40, 5)
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| static_cell(2, 20, &settings).unwrap())
        };
        assert_eq!(run(1), run(4));
    }
}
