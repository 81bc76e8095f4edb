//! `(N, d)` grid of the static comparison and minimal-N level curves.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiments::linear_fit;
use crate::experiments::static_compare::{static_cell, Estimator, MseRecord, StaticSettings};

/// Smallest tested `N` whose MSE is at most `level`, for each `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelCurve {
    pub estimator: Estimator,
    pub level: f64,
    /// `(d, minimal N)`; `None` when no tested `N` reaches the level.
    pub points: Vec<(usize, Option<usize>)>,
}

impl LevelCurve {
    fn reached(&self) -> (Vec<f64>, Vec<f64>) {
        self.points
            .iter()
            .filter_map(|&(d, n)| n.map(|n| (d as f64, n as f64)))
            .unzip()
    }

    /// Fitted slope of `ln N` against `d`.
    pub fn loglinear_slope(&self) -> Option<f64> {
        let (d, n) = self.reached();
        let ln_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
        linear_fit(&d, &ln_n).map(|(s, _)| s)
    }

    /// Fitted slope of `ln N` against `ln d`.
    pub fn loglog_slope(&self) -> Option<f64> {
        let (d, n) = self.reached();
        let ln_d: Vec<f64> = d.iter().map(|v| v.ln()).collect();
        let ln_n: Vec<f64> = n.iter().map(|v| v.ln()).collect();
        linear_fit(&ln_d, &ln_n).map(|(s, _)| s)
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub records: Vec<MseRecord>,
    pub curves: Vec<LevelCurve>,
}

pub fn minimal_n_curve(records: &[MseRecord], estimator: Estimator, level: f64, d_list: &[usize]) -> LevelCurve {
    let points = d_list
        .iter()
        .map(|&d| {
            let n = records
                .iter()
                .filter(|r| r.estimator == estimator && r.d == d && r.mse <= level)
                .map(|r| r.n)
                .min();
            (d, n)
        })
        .collect();
    LevelCurve {
        estimator,
        level,
        points,
    }
}

pub fn sweep_with(settings: &StaticSettings, d_list: &[usize], n_list: &[usize], levels: &[f64]) -> Result<SweepReport> {
    let mut records = Vec::new();
    for &d in d_list {
        for &n in n_list {
            records.extend(static_cell(d, n, settings)?);
        }
    }
    let curves = settings
        .estimators
        .iter()
        .flat_map(|&e| levels.iter().map(move |&l| (e, l)))
        .map(|(e, l)| minimal_n_curve(&records, e, l, d_list))
        .collect();
    Ok(SweepReport { records, curves })
}

/// Importance sampling and FPF over the configured `d_list × n_list`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    let settings = StaticSettings {
        estimators: vec![Estimator::Pf, Estimator::Fpf],
        ..StaticSettings::from_config(cfg)
    };
    sweep_with(&settings, &cfg.d_list, &cfg.n_list, &cfg.static_spec.levels)
}
