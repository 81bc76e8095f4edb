//! Finite-N error against the Kalman–Bucy filter on a shared observation path.

use nalgebra::DVector;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiments::linear_fit;
use crate::kalman::{run_kalman, solve_are, GaussianBelief};
use crate::model::{simulate_with_key, LinearGaussianModel, PathRecord, TimeGrid};
use crate::particle_filters::{
    empirical_moments, match_moments, sample_prior_particles, step_ensemble, Ensemble, FilterVariant, StepNoise,
};
use crate::rng::StreamKey;

const PATH_STREAM: u64 = 0;
const INIT_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone)]
pub struct DecaySettings {
    pub grid: TimeGrid,
    pub variant: FilterVariant,
    pub n: usize,
    /// Affinely correct the initial particles to the prior's exact moments.
    pub exact_moments: bool,
    pub seed: u64,
}

impl DecaySettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(DecaySettings {
            grid: cfg.grid()?,
            variant: cfg.primary_variant(),
            n: cfg.n_list[0],
            exact_moments: cfg.exact_moments,
            seed: cfg.seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayRow {
    pub t: f64,
    pub truth: DVector<f64>,
    pub kalman_mean: DVector<f64>,
    pub emp_mean: DVector<f64>,
    /// `‖m^{(N)} − m‖₂`.
    pub err_mean: f64,
    /// `‖Σ^{(N)} − Σ‖_F`.
    pub err_cov: f64,
}

#[derive(Debug, Clone)]
pub struct DecayRun {
    pub rows: Vec<DecayRow>,
    /// The shared truth and observation path.
    pub path: PathRecord,
    /// Steady-state spectral margin; `None` when the closed loop has no positive margin.
    pub lambda0: Option<f64>,
    /// Fitted exponential rates over the final half of the horizon.
    pub mean_rate: Option<f64>,
    pub cov_rate: Option<f64>,
}

/// Rate `λ` of the least-squares fit `ln e(t) ≈ c − λt` over the final half of the rows.
pub fn fit_decay_rate(t: &[f64], err: &[f64]) -> Option<f64> {
    let start = t.len() / 2;
    let (ts, ls): (Vec<f64>, Vec<f64>) = t[start..]
        .iter()
        .zip(&err[start..])
        .filter(|(_, e)| **e > 0.0 && e.is_finite())
        .map(|(t, e)| (*t, e.ln()))
        .unzip();
    linear_fit(&ts, &ls).map(|(s, _)| -s)
}

pub fn decay_run(model: &LinearGaussianModel, settings: &DecaySettings) -> Result<DecayRun> {
    let lambda0 = match solve_are(model) {
        Ok(ss) => Some(ss.lambda0),
        Err(Error::UnstableClosedLoop { .. }) => None,
        Err(e) => return Err(e),
    };
    let key = StreamKey::new(settings.seed);
    let path = simulate_with_key(model, &settings.grid, &key.child(PATH_STREAM));
    let kalman = run_kalman(model, &path)?;

    let mut x = sample_prior_particles(model, settings.n, &key.child(INIT_STREAM));
    if settings.exact_moments {
        x = match_moments(&x, &GaussianBelief::prior(model))?;
    }
    let mut ens = Ensemble::new(x, settings.variant)?;
    let noise_key = key.child(NOISE_STREAM);
    let dt = settings.grid.dt();

    let mut rows = Vec::with_capacity(path.steps() + 1);
    for (k, exact) in kalman.iter().enumerate() {
        let emp = empirical_moments(&ens);
        rows.push(DecayRow {
            t: settings.grid.t(k),
            truth: path.state(k),
            err_mean: (&emp.mean - &exact.mean).norm(),
            err_cov: (emp.cov.as_matrix() - exact.cov.as_matrix()).norm(),
            kalman_mean: exact.mean.clone(),
            emp_mean: emp.mean,
        });
        if k < path.steps() {
            ens = step_ensemble(model, &ens, &path.increment(k), dt, &StepNoise::new(noise_key, k as u64))?;
        }
    }

    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let em: Vec<f64> = rows.iter().map(|r| r.err_mean).collect();
    let ec: Vec<f64> = rows.iter().map(|r| r.err_cov).collect();
    Ok(DecayRun {
        lambda0,
        mean_rate: fit_decay_rate(&t, &em),
        cov_rate: fit_decay_rate(&t, &ec),
        rows,
        path,
    })
}

/// Runs the first configured variant with the first ensemble size.
pub fn run_error_decay(cfg: &ExperimentConfig) -> Result<DecayRun> {
    let model = cfg.build_model()?;
    decay_run(&model, &DecaySettings::from_config(cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    #[test]
    fn fit_exact_exponential() {
        let t: Vec<f64> = (0..100).map(|k| k as f64 * 0.1).collect();
        let e: Vec<f64> = t.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
        assert!((fit_decay_rate(&t, &e).unwrap() - 1.7).abs() < 1e-10);
    }

    #[test]
    fn trivial_model_errors_constant() {
        let model = LinearGaussianModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(1, 2),
            DMatrix::zeros(2, 1),
            DMatrix::identity(1, 1),
            DVector::zeros(2),
            DMatrix::identity(2, 2),
        )
        .unwrap();
        let settings = DecaySettings {
            grid: TimeGrid::new(0.01, 1.0).unwrap(),
            variant: FilterVariant::DeterministicOptimalFpf,
            n: 10,
            exact_moments: false,
            seed: 4,
        };
        let run = decay_run(&model, &settings).unwrap();
        assert!(run.lambda0.is_none());
        let first = &run.rows[0];
        for r in &run.rows {
            assert!((r.err_mean - first.err_mean).abs() < 1e-12);
            assert!((r.err_cov - first.err_cov).abs() < 1e-12);
        }
    }
}
