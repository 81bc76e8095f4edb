//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "model": { "a": [[..]], "h": [[..]], "sigma_b": [[..]], "r": [[..]], "m0": [..], "sigma0": [[..]] },
//!   "grid": { "dt": 0.001, "horizon": 1.0 },
//!   "variants": ["deterministic_optimal_fpf"],
//!   "n_list": [100], "d_list": [1], "trials": 1000, "seed": 0,
//!   "static": { "sigma": 1.0, "sigma0": 1.0, "sigma_w": 1.0, "direction": [..], "levels": [..] },
//!   "chaos": { "clip": 1.0 },
//!   "init": { "exact_moments": false }
//! }
//! ```
//!
//! Everything is optional except `model` for the commands that simulate a user model; `r`
//! defaults to the identity.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{LinearGaussianModel, TimeGrid};
use crate::particle_filters::FilterVariant;

pub const DEFAULT_TRIALS: usize = 1000;
pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_LEVELS: [f64; 3] = [0.05, 0.1, 0.2];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub a: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub sigma_b: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub m0: Vec<f64>,
    pub sigma0: Vec<Vec<f64>>,
}

impl ModelSpec {
    pub fn build(&self) -> Result<LinearGaussianModel> {
        LinearGaussianModel::new(
            to_matrix(&self.a, "model.a")?,
            to_matrix(&self.h, "model.h")?,
            to_matrix(&self.sigma_b, "model.sigma_b")?,
            to_matrix(&self.r, "model.r")?,
            DVector::from_column_slice(&self.m0),
            to_matrix(&self.sigma0, "model.sigma0")?,
        )
    }
}

fn to_matrix(rows: &[Vec<f64>], key: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::config(key, "matrix must be non-empty"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::config(key, "matrix rows have unequal lengths"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticSpec {
    pub sigma0: f64,
    pub sigma_w: f64,
    /// Test-function direction `a` (unit norm); `None` means `1/√d · 1`.
    pub direction: Option<Vec<f64>>,
    /// MSE levels for the minimal-N curves of a sweep.
    pub levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub model: Option<ModelSpec>,
    pub dt: f64,
    pub horizon: f64,
    pub variants: Vec<FilterVariant>,
    pub n_list: Vec<usize>,
    pub d_list: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub static_spec: StaticSpec,
    pub chaos_clip: f64,
    pub exact_moments: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: None,
            dt: DEFAULT_DT,
            horizon: 1.0,
            variants: vec![FilterVariant::DeterministicOptimalFpf],
            n_list: vec![100],
            d_list: vec![1],
            trials: DEFAULT_TRIALS,
            seed: 0,
            static_spec: StaticSpec {
                sigma0: 1.0,
                sigma_w: 1.0,
                direction: None,
                levels: DEFAULT_LEVELS.to_vec(),
            },
            chaos_clip: 1.0,
            exact_moments: false,
        }
    }
}

impl ExperimentConfig {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.dt, self.horizon)
    }

    /// The user model; required by the `filter` and `chaos` experiments.
    pub fn build_model(&self) -> Result<LinearGaussianModel> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::config("model", "missing required key"))?
            .build()
    }

    pub fn primary_variant(&self) -> FilterVariant {
        self.variants[0]
    }

    /// Canonical JSON text: every field present, keys sorted.
    pub fn to_canonical_json(&self) -> String {
        let mut root = Map::new();
        if let Some(m) = &self.model {
            root.insert(
                "model".into(),
                json!({
                    "a": m.a, "h": m.h, "sigma_b": m.sigma_b, "r": m.r, "m0": m.m0, "sigma0": m.sigma0
                }),
            );
        }
        root.insert("grid".into(), json!({ "dt": self.dt, "horizon": self.horizon }));
        root.insert(
            "variants".into(),
            Value::Array(self.variants.iter().map(|v| Value::from(v.name())).collect()),
        );
        root.insert("n_list".into(), json!(self.n_list));
        root.insert("d_list".into(), json!(self.d_list));
        root.insert("trials".into(), json!(self.trials));
        root.insert("seed".into(), json!(self.seed));
        let mut st = Map::new();
        st.insert("sigma0".into(), json!(self.static_spec.sigma0));
        st.insert("sigma_w".into(), json!(self.static_spec.sigma_w));
        if let Some(dir) = &self.static_spec.direction {
            st.insert("direction".into(), json!(dir));
        }
        st.insert("levels".into(), json!(self.static_spec.levels));
        root.insert("static".into(), Value::Object(st));
        root.insert("chaos".into(), json!({ "clip": self.chaos_clip }));
        root.insert("init".into(), json!({ "exact_moments": self.exact_moments }));
        serde_json::to_string_pretty(&Value::Object(root)).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON text, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(path.display().to_string(), format!("cannot read file: {e}")))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::config("<root>", format!("invalid JSON: {e}")))?;
    let root = value
        .as_object()
        .ok_or_else(|| Error::config("<root>", "expected a JSON object"))?;
    check_keys(
        root,
        "",
        &["model", "grid", "variants", "n_list", "d_list", "trials", "seed", "static", "chaos", "init"],
    )?;

    let mut cfg = ExperimentConfig::default();

    if let Some(m) = root.get("model") {
        let obj = object(m, "model")?;
        check_keys(obj, "model.", &["a", "h", "sigma_b", "r", "m0", "sigma0"])?;
        let a = matrix(required(obj, "model.", "a")?, "model.a")?;
        let h = matrix(required(obj, "model.", "h")?, "model.h")?;
        let m = h.len();
        let r = match obj.get("r") {
            Some(v) => matrix(v, "model.r")?,
            None => (0..m).map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect(),
        };
        let spec = ModelSpec {
            a,
            h,
            sigma_b: matrix(required(obj, "model.", "sigma_b")?, "model.sigma_b")?,
            r,
            m0: vector(required(obj, "model.", "m0")?, "model.m0")?,
            sigma0: matrix(required(obj, "model.", "sigma0")?, "model.sigma0")?,
        };
        spec.build()?;
        cfg.model = Some(spec);
    }

    if let Some(g) = root.get("grid") {
        let obj = object(g, "grid")?;
        check_keys(obj, "grid.", &["dt", "horizon"])?;
        if let Some(v) = obj.get("dt") {
            cfg.dt = number(v, "grid.dt")?;
        }
        if let Some(v) = obj.get("horizon") {
            cfg.horizon = number(v, "grid.horizon")?;
        }
    }
    cfg.grid()?;

    if let Some(v) = root.get("variants") {
        let arr = v.as_array().ok_or_else(|| Error::config("variants", "expected an array of names"))?;
        if arr.is_empty() {
            return Err(Error::config("variants", "at least one variant is required"));
        }
        cfg.variants = arr
            .iter()
            .map(|x| {
                x.as_str()
                    .ok_or_else(|| Error::config("variants", "expected a string"))?
                    .parse()
                    .map_err(|e: String| Error::config("variants", e))
            })
            .collect::<Result<_>>()?;
    }

    if let Some(v) = root.get("n_list") {
        cfg.n_list = usize_list(v, "n_list")?;
        if cfg.n_list.iter().any(|&n| n < 2) {
            return Err(Error::config("n_list", "every ensemble size must be at least 2"));
        }
    }
    if let Some(v) = root.get("d_list") {
        cfg.d_list = usize_list(v, "d_list")?;
        if cfg.d_list.iter().any(|&d| d < 1) {
            return Err(Error::config("d_list", "dimensions must be positive"));
        }
    }
    if let Some(v) = root.get("trials") {
        cfg.trials = integer(v, "trials")? as usize;
        if cfg.trials < 1 {
            return Err(Error::config("trials", "at least one trial is required"));
        }
    }
    if let Some(v) = root.get("seed") {
        cfg.seed = integer(v, "seed")?;
    }

    if let Some(s) = root.get("static") {
        let obj = object(s, "static")?;
        check_keys(obj, "static.", &["sigma", "sigma0", "sigma_w", "direction", "levels"])?;
        if let Some(v) = obj.get("sigma") {
            let sigma = positive(v, "static.sigma")?;
            cfg.static_spec.sigma0 = sigma;
            cfg.static_spec.sigma_w = sigma;
        }
        if let Some(v) = obj.get("sigma0") {
            cfg.static_spec.sigma0 = positive(v, "static.sigma0")?;
        }
        if let Some(v) = obj.get("sigma_w") {
            cfg.static_spec.sigma_w = positive(v, "static.sigma_w")?;
        }
        if let Some(v) = obj.get("direction") {
            let dir = vector(v, "static.direction")?;
            let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::config("static.direction", "direction must have unit Euclidean norm"));
            }
            if cfg.d_list.iter().any(|&d| d != dir.len()) {
                return Err(Error::config("static.direction", "length must equal every entry of d_list"));
            }
            cfg.static_spec.direction = Some(dir);
        }
        if let Some(v) = obj.get("levels") {
            cfg.static_spec.levels = vector(v, "static.levels")?;
            if cfg.static_spec.levels.iter().any(|&l| l <= 0.0) {
                return Err(Error::config("static.levels", "levels must be positive"));
            }
        }
    }

    if let Some(c) = root.get("chaos") {
        let obj = object(c, "chaos")?;
        check_keys(obj, "chaos.", &["clip"])?;
        if let Some(v) = obj.get("clip") {
            cfg.chaos_clip = positive(v, "chaos.clip")?;
        }
    }

    if let Some(i) = root.get("init") {
        let obj = object(i, "init")?;
        check_keys(obj, "init.", &["exact_moments"])?;
        if let Some(v) = obj.get("exact_moments") {
            cfg.exact_moments = v
                .as_bool()
                .ok_or_else(|| Error::config("init.exact_moments", "expected a boolean"))?;
        }
    }

    Ok(cfg)
}

fn check_keys(obj: &Map<String, Value>, prefix: &str, allowed: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(Error::config(format!("{prefix}{k}"), "unknown key")),
        None => Ok(()),
    }
}

fn object<'a>(v: &'a Value, key: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::config(key, "expected an object"))
}

fn required<'a>(obj: &'a Map<String, Value>, prefix: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::config(format!("{prefix}{key}"), "missing required key"))
}

fn number(v: &Value, key: &str) -> Result<f64> {
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::config(key, "expected a finite number"))
}

fn positive(v: &Value, key: &str) -> Result<f64> {
    let x = number(v, key)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(Error::config(key, "must be positive"))
    }
}

fn integer(v: &Value, key: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::config(key, "expected a non-negative integer"))
}

fn usize_list(v: &Value, key: &str) -> Result<Vec<usize>> {
    let arr = v.as_array().ok_or_else(|| Error::config(key, "expected an array"))?;
    if arr.is_empty() {
        return Err(Error::config(key, "list must be non-empty"));
    }
    arr.iter().map(|x| integer(x, key).map(|n| n as usize)).collect()
}

fn vector(v: &Value, key: &str) -> Result<Vec<f64>> {
    let arr = v.as_array().ok_or_else(|| Error::config(key, "expected an array of numbers"))?;
    arr.iter().map(|x| number(x, key)).collect()
}

fn matrix(v: &Value, key: &str) -> Result<Vec<Vec<f64>>> {
    let arr = v.as_array().ok_or_else(|| Error::config(key, "expected an array of rows"))?;
    arr.iter().map(|row| vector(row, key)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_static_config() {
        let cfg = parse_config_str(r#"{ "static": { "sigma": 1.0 }, "d_list": [3] }"#).unwrap();
        assert!(cfg.model.is_none());
        assert_eq!(cfg.trials, 1000);
        assert!(!cfg.exact_moments);
        assert_eq!(cfg.static_spec.sigma0, 1.0);
        assert_eq!(cfg.static_spec.sigma_w, 1.0);
        let model = LinearGaussianModel::static_example(3, cfg.static_spec.sigma0, cfg.static_spec.sigma_w).unwrap();
        assert_eq!(model.h(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(model.a().norm(), 0.0);
        assert_eq!(model.process_cov().norm(), 0.0);
    }

    #[test]
    fn zero_dt_names_key() {
        let err = parse_config_str(r#"{ "grid": { "dt": 0 } }"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "grid.dt"), "{err}");
    }

    #[test]
    fn missing_and_bad_model_keys() {
        let err = parse_config_str(r#"{ "model": { "a": [[0]], "h": [[1]], "m0": [0], "sigma0": [[1]] } }"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "model.sigma_b"), "{err}");

        let err = parse_config_str(
            r#"{ "model": { "a": [[0]], "h": [[1]], "sigma_b": [[1]], "r": [[-1]], "m0": [0], "sigma0": [[1]] } }"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "model.r"), "{err}");

        let err = parse_config_str(
            r#"{ "model": { "a": [[0, 0], [0, 0]], "h": [[1, 0]], "sigma_b": [[1], [0]], "m0": [0, 0], "sigma0": [[1, 0], [0, -2]] } }"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "model.sigma0"), "{err}");

        let err = parse_config_str(
            r#"{ "model": { "a": [[0, 0], [0, 0]], "h": [[1, 0]], "sigma_b": [[1], [0]], "m0": [0], "sigma0": [[1, 0], [0, 1]] } }"#,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "model.m0"), "{err}");
    }

    #[test]
    fn unknown_key_rejected() {
        let err = parse_config_str(r#"{ "trails": 3 }"#).unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "trails"));
    }

    #[test]
    fn model_required_only_when_used() {
        let cfg = parse_config_str("{}").unwrap();
        let err = cfg.build_model().unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "model"));
    }

    #[test]
    fn default_r_is_identity() {
        let cfg = parse_config_str(
            r#"{ "model": { "a": [[-1, 0], [0, -1]], "h": [[1, 0], [0, 1]], "sigma_b": [[1], [1]], "m0": [0, 0], "sigma0": [[1, 0], [0, 1]] } }"#,
        )
        .unwrap();
        assert_eq!(cfg.model.unwrap().r, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn canonical_round_trip_and_hash() {
        let text = r#"{
            "model": { "a": [[-0.5, 1.0], [0.0, -1.0]], "h": [[1.0, 0.0]], "sigma_b": [[0.5, 0.0], [0.0, 0.5]],
                       "m0": [1.0, -1.0], "sigma0": [[1.0, 0.2], [0.2, 2.0]] },
            "grid": { "dt": 0.01, "horizon": 2.0 },
            "variants": ["stochastic_fpf", "perturbed_obs_enkf"],
            "n_list": [10, 20], "trials": 5, "seed": 17,
            "static": { "sigma": 0.7, "levels": [0.1] },
            "init": { "exact_moments": true }
        }"#;
        let cfg = parse_config_str(text).unwrap();
        let again = parse_config_str(&cfg.to_canonical_json()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(cfg.hash(), other.hash());
    }
}
