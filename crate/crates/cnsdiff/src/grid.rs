//! Cartesian expansion of a base config over `key=[v1,v2,...]` lists.

use cnsdiff_core::trainer::TrainConfig;
use serde_json::Value;

use crate::error::{Error, Result};

/// Short names accepted in `--vary`.
const ALIASES: &[(&str, &str)] = &[
    ("T", "steps"),
    ("K", "layers"),
    ("d", "dim"),
    ("s", "stride"),
    ("t0", "step_start"),
    ("tau", "temperature"),
    ("λ1", "lambda1"),
    ("λ2", "lambda2"),
    ("λ3", "lambda3"),
];

fn canonical(key: &str) -> &str {
    ALIASES
        .iter()
        .find(|(a, _)| *a == key)
        .map_or(key, |(_, k)| k)
}

/// One varied key and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<Value>,
}

/// Parse `T=[10,20];lambda2=[1e-6,1e-3]`.
pub fn parse_vary(spec: &str) -> Result<Vec<Axis>> {
    let mut axes = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, list) = part
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("`{part}` is not key=[values]")))?;
        let values: Vec<Value> = serde_json::from_str(list.trim())
            .map_err(|e| Error::Usage(format!("values of `{key}`: {e}")))?;
        if values.is_empty() {
            return Err(Error::Usage(format!("`{key}` has no values")));
        }
        let key = canonical(key.trim()).to_string();
        if axes.iter().any(|a: &Axis| a.key == key) {
            return Err(Error::Usage(format!("`{key}` varied twice")));
        }
        axes.push(Axis { key, values });
    }
    Ok(axes)
}

/// Axis name and chosen value, one per axis.
pub type Assignment = Vec<(String, Value)>;

/// Every combination, first axis slowest. Each config is re-validated.
pub fn expand(base: &TrainConfig, axes: &[Axis]) -> Result<Vec<(Assignment, TrainConfig)>> {
    let base = serde_json::to_value(base).expect("config serializes");
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut out = Vec::with_capacity(total);
    for n in 0..total {
        let mut rem = n;
        let mut picks = vec![0usize; axes.len()];
        for (i, a) in axes.iter().enumerate().rev() {
            picks[i] = rem % a.values.len();
            rem /= a.values.len();
        }
        let mut value = base.clone();
        let mut assignment = Vec::with_capacity(axes.len());
        for (a, &p) in axes.iter().zip(&picks) {
            let v = a.values[p].clone();
            value[a.key.as_str()] = v.clone();
            assignment.push((a.key.clone(), v));
        }
        let config: TrainConfig = serde_json::from_value(value).map_err(|e| Error::Config {
            path: "--vary".into(),
            message: e.to_string(),
        })?;
        config.validate().map_err(|e| Error::Config {
            path: "--vary".into(),
            message: e.to_string(),
        })?;
        out.push((assignment, config));
    }
    Ok(out)
}
