//! Self-checks run by `otfpf validate`: matrix-equation residuals and ensemble invariants on
//! randomly generated models.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::kalman::solve_are;
use crate::matrix_eq::{pseudo_inverse, ricc_rhs, solve_omega, sqrt_ricc, SymMatrix};
use crate::model::LinearGaussianModel;
use crate::particle_filters::{empirical_moments, step_det_fpf, Ensemble, FilterVariant};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tol
    }
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let b = gaussian(rng, d, d);
    SymMatrix::symmetrize(&b * b.transpose() + DMatrix::identity(d, d) * 0.1)
}

fn random_model(rng: &mut ChaCha8Rng, d: usize) -> Result<LinearGaussianModel> {
    let m = 1 + d / 2;
    let r = random_spd(rng, m);
    LinearGaussianModel::new(
        gaussian(rng, d, d),
        gaussian(rng, m, d),
        gaussian(rng, d, d),
        r.into_inner(),
        DVector::zeros(d),
        DMatrix::identity(d, d),
    )
}

/// Runs every check with generator seed `seed`.
pub fn self_check(seed: u64) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lyap = 0.0f64;
    let mut skew = 0.0f64;
    let mut recon = 0.0f64;
    let mut pinv = 0.0f64;
    let mut moment = 0.0f64;
    for d in [1usize, 2, 3, 5] {
        for _ in 0..20 {
            let model = random_model(&mut rng, d)?;
            let q = random_spd(&mut rng, d);
            let ricc = ricc_rhs(&model, &q)?;
            let g = sqrt_ricc(&model, &q)?;
            let resid = g.as_matrix() * q.as_matrix() + q.as_matrix() * g.as_matrix() - ricc.as_matrix();
            lyap = lyap.max(resid.norm() / ricc.norm().max(1.0));

            let omega = solve_omega(&model, &q)?;
            skew = skew.max((&omega + omega.transpose()).norm());
            let q_inv = q.spectral().map_eigenvalues(|l| 1.0 / l);
            let rebuilt = model.a() - q.as_matrix() * model.info().as_matrix() * 0.5
                + model.process_cov().as_matrix() * &q_inv * 0.5
                + &omega * &q_inv;
            recon = recon.max((rebuilt - g.as_matrix()).norm() / g.norm().max(1.0));

            let k = 1 + (d - 1) / 2;
            let b = gaussian(&mut rng, d, k);
            let psd = SymMatrix::symmetrize(&b * b.transpose());
            let p = pseudo_inverse(&psd);
            let (m, mp) = (psd.as_matrix(), p.pinv.as_matrix());
            let scale = m.norm().max(1.0) * mp.norm().max(1.0);
            pinv = pinv.max((m * mp * m - m).norm() / scale).max((mp * m * mp - mp).norm() / scale);

            // One deterministic FPF step moves the empirical covariance by exactly
            // Ricc dt + G Σ G dt².
            let n = d + 3;
            let x = gaussian(&mut rng, d, n);
            let ens = Ensemble::new(x, FilterVariant::DeterministicOptimalFpf)?;
            let before = empirical_moments(&ens).cov;
            let g = sqrt_ricc(&model, &before)?;
            let dt = 1e-3;
            let after = empirical_moments(&step_det_fpf(&model, &ens, &DVector::zeros(model.obs_dim()), dt)?).cov;
            let predicted = before.as_matrix()
                + ricc_rhs(&model, &before)?.as_matrix() * dt
                + g.as_matrix() * before.as_matrix() * g.as_matrix() * (dt * dt);
            moment = moment.max((after.as_matrix() - predicted).norm() / before.norm());
        }
    }
    let scalar = LinearGaussianModel::scalar(0.0, 1.0, 1.0, 1.0, 0.0, 1.0)?;
    let ss = solve_are(&scalar)?;
    let are = (ss.sigma_inf[(0, 0)] - 1.0).abs().max((ss.lambda0 - 1.0).abs());

    Ok(vec![
        CheckResult { name: "lyapunov_residual", worst: lyap, tol: 1e-10 },
        CheckResult { name: "omega_skew", worst: skew, tol: 0.0 },
        CheckResult { name: "sqrt_ricc_reconstruction", worst: recon, tol: 1e-9 },
        CheckResult { name: "pseudo_inverse", worst: pinv, tol: 1e-9 },
        CheckResult { name: "det_fpf_moment_step", worst: moment, tol: 1e-10 },
        CheckResult { name: "scalar_are", worst: are, tol: 1e-8 },
    ])
}
