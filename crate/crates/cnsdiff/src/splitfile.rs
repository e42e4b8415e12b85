//! Split manifests: the partition plus its parameters and counts, as JSON.

use std::path::Path;

use cnsdiff_core::corpus::SplitBundle;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test_iid: usize,
    pub test_ood: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub counts: SplitCounts,
    #[serde(flatten)]
    pub bundle: SplitBundle,
}

impl SplitManifest {
    pub fn new(bundle: SplitBundle) -> Self {
        let [train, val, test_iid, test_ood] = bundle.counts();
        Self {
            counts: SplitCounts {
                train,
                val,
                test_iid,
                test_ood,
            },
            bundle,
        }
    }
}

pub fn write_split(path: &Path, bundle: &SplitBundle) -> Result<()> {
    json::write(path, &SplitManifest::new(bundle.clone()))
}

/// Read a manifest and check its counts against the index arrays.
pub fn read_split(path: &Path) -> Result<SplitBundle> {
    let m: SplitManifest = json::read(path)?;
    if SplitManifest::new(m.bundle.clone()).counts != m.counts {
        return Err(Error::format(path, "counts disagree with index arrays"));
    }
    Ok(m.bundle)
}

/// Reject manifests whose indices do not fit `num_interactions` plus the
/// bundle's external records.
pub fn check_split(path: &Path, bundle: &SplitBundle, num_interactions: usize) -> Result<()> {
    let limit = num_interactions + bundle.external.len();
    let sets = [
        &bundle.train,
        &bundle.val,
        &bundle.test_iid,
        &bundle.test_ood,
    ];
    if let Some(&i) = sets.iter().flat_map(|s| s.iter()).find(|&&i| i >= limit) {
        return Err(Error::format(
            path,
            format!("index {i} out of range for a dataset of {num_interactions} interactions"),
        ));
    }
    if bundle.train.is_empty() {
        return Err(Error::format(path, "empty train set"));
    }
    Ok(())
}
