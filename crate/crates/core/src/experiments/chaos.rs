//! Propagation of chaos: the deterministic optimal-transport FPF coupled to independent
//! mean-field copies through shared initial particles and observation path.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiments::{loglog_slope, mean_and_stderr, par_map};
use crate::kalman::{kalman_step, GaussianBelief};
use crate::model::{simulate_with_key, LinearGaussianModel, TimeGrid};
use crate::particle_filters::{
    coupling_error, sample_prior_particles, step_det_fpf, step_mean_field, Ensemble, FilterVariant, MeanFieldEnsemble,
};
use crate::rng::StreamKey;

#[derive(Debug, Clone)]
pub struct ChaosSettings {
    pub grid: TimeGrid,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Test function `f(x) = clamp(x₁, −clip, clip)`.
    pub clip: f64,
}

impl ChaosSettings {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(ChaosSettings {
            grid: cfg.grid()?,
            n_list: cfg.n_list.clone(),
            trials: cfg.trials,
            seed: cfg.seed,
            clip: cfg.chaos_clip,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOutcome {
    /// Mean of `‖Xⁱ − X̄ⁱ‖²` over particles at `t = 0`.
    pub initial_err2: f64,
    /// Same at the final time.
    pub final_err2: f64,
    /// `N⁻¹Σ f(Xⁱ_T) − E[f(X_T) | Z]`.
    pub cor1_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub trials: usize,
    pub err2_mean: f64,
    pub err2_stderr: f64,
    /// Root mean square over trials of the test-function error.
    pub cor1_stat: f64,
}

#[derive(Debug, Clone)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    /// Log-log slope of `err2_mean` against `N`.
    pub err2_slope: Option<f64>,
    /// Log-log slope of `cor1_stat` against `N`.
    pub cor1_slope: Option<f64>,
}

/// `E[clamp(X, −c, c)]` for `X ~ N(mu, s²)`.
pub fn clipped_gaussian_mean(mu: f64, s: f64, c: f64) -> f64 {
    if s.is_nan() || s <= 0.0 {
        return mu.clamp(-c, c);
    }
    let z = Normal::standard();
    let (lo, hi) = ((-c - mu) / s, (c - mu) / s);
    let inside = mu * (z.cdf(hi) - z.cdf(lo)) + s * (z.pdf(lo) - z.pdf(hi));
    -c * z.cdf(lo) + c * z.sf(hi) + inside
}

pub fn coupled_trial(
    model: &LinearGaussianModel,
    grid: &TimeGrid,
    n: usize,
    clip: f64,
    key: &StreamKey,
) -> Result<CoupledOutcome> {
    let d = model.state_dim();
    if n <= d {
        return Err(Error::SingularCovariance { rank: n.saturating_sub(1), dim: d });
    }
    let path = simulate_with_key(model, grid, &key.child(0));
    let mut ens = Ensemble::new(
        sample_prior_particles(model, n, &key.child(1)),
        FilterVariant::DeterministicOptimalFpf,
    )?;
    let mut mfe = MeanFieldEnsemble::coupled_to(&ens);
    let mut belief = GaussianBelief::prior(model);
    let initial_err2 = coupling_error(&ens, &mfe);
    let dt = grid.dt();
    for k in 0..path.steps() {
        let dz = path.increment(k);
        ens = step_det_fpf(model, &ens, &dz, dt)?;
        mfe = step_mean_field(model, &mfe, &belief, &dz, dt)?;
        belief = kalman_step(model, &belief, &dz, dt)?;
    }
    let empirical = ens.particles().row(0).iter().map(|x| x.clamp(-clip, clip)).sum::<f64>() / n as f64;
    let exact = clipped_gaussian_mean(belief.mean[0], belief.cov[(0, 0)].max(0.0).sqrt(), clip);
    Ok(CoupledOutcome {
        initial_err2,
        final_err2: coupling_error(&ens, &mfe),
        cor1_error: empirical - exact,
    })
}

pub fn chaos_run(model: &LinearGaussianModel, settings: &ChaosSettings) -> Result<ChaosReport> {
    let root = StreamKey::new(settings.seed);
    let mut rows = Vec::with_capacity(settings.n_list.len());
    for &n in &settings.n_list {
        let key = root.child(n as u64);
        let outcomes = par_map(settings.trials, |t| {
            coupled_trial(model, &settings.grid, n, settings.clip, &key.child(t as u64))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let err2: Vec<f64> = outcomes.iter().map(|o| o.final_err2).collect();
        let (err2_mean, err2_stderr) = mean_and_stderr(&err2);
        let cor1_stat = (outcomes.iter().map(|o| o.cor1_error.powi(2)).sum::<f64>() / outcomes.len() as f64).sqrt();
        rows.push(ChaosRow {
            n,
            trials: settings.trials,
            err2_mean,
            err2_stderr,
            cor1_stat,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let e2: Vec<f64> = rows.iter().map(|r| r.err2_mean).collect();
    let c1: Vec<f64> = rows.iter().map(|r| r.cor1_stat).collect();
    Ok(ChaosReport {
        err2_slope: loglog_slope(&ns, &e2),
        cor1_slope: loglog_slope(&ns, &c1),
        rows,
    })
}

pub fn run_chaos(cfg: &ExperimentConfig) -> Result<ChaosReport> {
    let model = cfg.build_model()?;
    chaos_run(&model, &ChaosSettings::from_config(cfg)?)
}
