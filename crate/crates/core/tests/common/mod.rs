#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use otfpf::matrix_eq::SymMatrix;
use otfpf::model::LinearGaussianModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// `BBᵀ + εI` with eigenvalues spread over a few orders of magnitude.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> SymMatrix {
    let b = gaussian(rng, d, d);
    let eps = 10f64.powf(rng.random_range(-2.0..0.0));
    SymMatrix::symmetrize(&b * b.transpose() + DMatrix::identity(d, d) * eps)
}

/// Rank-`r` PSD matrix.
pub fn random_psd(rng: &mut ChaCha8Rng, d: usize, r: usize) -> SymMatrix {
    let b = gaussian(rng, d, r);
    SymMatrix::symmetrize(&b * b.transpose())
}

pub fn random_model(rng: &mut ChaCha8Rng, d: usize) -> LinearGaussianModel {
    let m = rng.random_range(1..=d);
    let q = rng.random_range(1..=d);
    let r = random_spd(rng, m);
    LinearGaussianModel::new(
        gaussian(rng, d, d),
        gaussian(rng, m, d),
        gaussian(rng, d, q),
        r.into_inner(),
        DVector::zeros(d),
        DMatrix::identity(d, d),
    )
    .unwrap()
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

/// Ricc written out entrywise with explicit loops.
pub fn naive_ricc(model: &LinearGaussianModel, s: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let a = model.a();
    let h = model.h();
    let sb = model.sigma_b();
    let rinv = inverse(model.r());
    let m = h.nrows();
    let q = sb.ncols();
    let mut out = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut v = 0.0;
            for k in 0..d {
                v += a[(i, k)] * s[(k, j)] + s[(i, k)] * a[(j, k)];
            }
            for k in 0..q {
                v += sb[(i, k)] * sb[(j, k)];
            }
            for k in 0..d {
                for l in 0..d {
                    let mut mkl = 0.0;
                    for p in 0..m {
                        for r in 0..m {
                            mkl += h[(p, k)] * rinv[(p, r)] * h[(r, l)];
                        }
                    }
                    v -= s[(i, k)] * mkl * s[(l, j)];
                }
            }
            out[(i, j)] = v;
        }
    }
    out
}

/// Solves `XS + SX = C` by the Kronecker-form linear system `(I⊗S + Sᵀ⊗I) vec X = vec C`.
pub fn kronecker_lyapunov(s: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let d = s.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let big = eye.kronecker(s) + s.transpose().kronecker(&eye);
    let rhs = DVector::from_column_slice(c.as_slice());
    let x = big.lu().solve(&rhs).expect("nonsingular Kronecker system");
    DMatrix::from_column_slice(d, d, x.as_slice())
}
