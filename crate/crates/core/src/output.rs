//! CSV and manifest writers. Floats are written as `{:.16e}` so reruns compare byte for byte.

use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::experiments::chaos::ChaosRow;
use crate::experiments::decay::DecayRun;
use crate::experiments::static_compare::{MseFlag, MseRecord};
use crate::experiments::sweep::LevelCurve;
use crate::model::PathRecord;

pub const TRAJECTORY_HEADER: [&str; 4] = ["t", "kind", "component", "value"];
pub const MSE_HEADER: [&str; 7] = ["n", "d", "estimator", "mse", "std_err", "trials", "flag"];
pub const CHAOS_HEADER: [&str; 5] = ["n", "trials", "err2_mean", "err2_stderr", "cor1_stat"];
pub const LEVELS_HEADER: [&str; 4] = ["level", "estimator", "d", "min_n"];

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Long form: one row per `(t, kind, component)`; the error norms use component 0.
pub fn write_trajectory(path: &Path, run: &DecayRun) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRAJECTORY_HEADER)?;
    for row in &run.rows {
        let t = fmt_f64(row.t);
        for (kind, v) in [("truth", &row.truth), ("kalman_mean", &row.kalman_mean), ("emp_mean", &row.emp_mean)] {
            for (j, x) in v.iter().enumerate() {
                w.write_record([t.as_str(), kind, &j.to_string(), &fmt_f64(*x)])?;
            }
        }
        w.write_record([t.as_str(), "err_mean", "0", &fmt_f64(row.err_mean)])?;
        w.write_record([t.as_str(), "err_cov_fro", "0", &fmt_f64(row.err_cov)])?;
    }
    w.flush()?;
    Ok(())
}

/// Wide form `t, x_1..x_d, dz_1..dz_m`; the increment columns of the last row are empty.
pub fn write_path(path: &Path, rec: &PathRecord) -> Result<()> {
    let (d, m) = (rec.x.ncols(), rec.dz.ncols());
    let mut w = writer(path)?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=d).map(|j| format!("x_{j}")))
        .chain((1..=m).map(|j| format!("dz_{j}")))
        .collect();
    w.write_record(&header)?;
    for k in 0..=rec.steps() {
        let mut row = vec![fmt_f64(rec.grid.t(k))];
        row.extend(rec.x.row(k).iter().map(|v| fmt_f64(*v)));
        if k < rec.steps() {
            row.extend(rec.dz.row(k).iter().map(|v| fmt_f64(*v)));
        } else {
            row.extend(std::iter::repeat_n(String::new(), m));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mse(path: &Path, records: &[MseRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(MSE_HEADER)?;
    for r in records {
        let flag = match r.flag {
            Some(MseFlag::DegenerateWeights) => "DegenerateWeights",
            None => "",
        };
        w.write_record([
            r.n.to_string(),
            r.d.to_string(),
            r.estimator.name().to_string(),
            fmt_f64(r.mse),
            fmt_f64(r.std_err),
            r.trials.to_string(),
            flag.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_chaos(path: &Path, rows: &[ChaosRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(CHAOS_HEADER)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.trials.to_string(),
            fmt_f64(r.err2_mean),
            fmt_f64(r.err2_stderr),
            fmt_f64(r.cor1_stat),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Minimal ensemble size per level, estimator and dimension; empty `min_n` when not reached.
pub fn write_levels(path: &Path, curves: &[LevelCurve]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(LEVELS_HEADER)?;
    for c in curves {
        for &(d, n) in &c.points {
            w.write_record([
                fmt_f64(c.level),
                c.estimator.name().to_string(),
                d.to_string(),
                n.map(|n| n.to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub master_seed: u64,
    pub tool_version: String,
    pub outputs: Vec<String>,
    pub runtime_secs: f64,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
