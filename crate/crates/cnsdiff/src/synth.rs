//! Synthetic dataset output: the dataset directory (with per-interaction
//! environments), a dense 0/1 preference matrix and a JSON sidecar with the
//! realized false-negative rates.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cnsdiff_core::corpus::{Dataset, GroundTruth};
use serde::{Deserialize, Serialize};

use crate::dataset;
use crate::error::{Error, Result};
use crate::json;

pub const PREFERENCES: &str = "preferences.csv";
pub const TRUTH: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub num_users: usize,
    pub num_items: usize,
    pub item_env_affinity: Vec<usize>,
    pub preferred_per_env: Vec<usize>,
    pub realized_fnr: Vec<f64>,
    pub expected_fnr: Vec<f64>,
}

pub fn write_synthetic(dir: &Path, ds: &Dataset, truth: &GroundTruth) -> Result<()> {
    dataset::write_dataset(dir, ds, Some(&truth.interaction_envs))?;
    let path = dir.join(PREFERENCES);
    let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = BufWriter::new(file);
    for u in 0..truth.num_users {
        let row: Vec<&str> = (0..truth.num_items)
            .map(|v| if truth.is_preferred(u, v) { "1" } else { "0" })
            .collect();
        writeln!(w, "{}", row.join(",")).map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    json::write(
        &dir.join(TRUTH),
        &TruthSidecar {
            num_users: truth.num_users,
            num_items: truth.num_items,
            item_env_affinity: truth.item_env_affinity.clone(),
            preferred_per_env: truth.preferred_per_env.clone(),
            realized_fnr: truth.realized_fnr.clone(),
            expected_fnr: truth.expected_fnr.clone(),
        },
    )
}

/// The row-major preference matrix written by [`write_synthetic`].
pub fn read_preferences(dir: &Path) -> Result<(TruthSidecar, Vec<bool>)> {
    let sidecar: TruthSidecar = json::read(&dir.join(TRUTH))?;
    let path = dir.join(PREFERENCES);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut out = Vec::with_capacity(sidecar.num_users * sidecar.num_items);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let before = out.len();
        for cell in line.split(',') {
            out.push(match cell.trim() {
                "1" => true,
                "0" => false,
                other => {
                    return Err(Error::Parse {
                        path: path.clone(),
                        line: i as u64 + 1,
                        message: format!("expected 0 or 1, found `{other}`"),
                    })
                }
            });
        }
        if out.len() - before != sidecar.num_items {
            return Err(Error::Parse {
                path: path.clone(),
                line: i as u64 + 1,
                message: format!("expected {} columns", sidecar.num_items),
            });
        }
    }
    if out.len() != sidecar.num_users * sidecar.num_items {
        return Err(Error::format(&path, "row count disagrees with truth.json"));
    }
    Ok((sidecar, out))
}
