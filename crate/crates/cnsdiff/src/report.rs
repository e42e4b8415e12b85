//! Run artifacts: per-epoch CSVs, grouped reports, the lock file and the
//! hashed output manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cnsdiff_core::corpus::{popularity_buckets, Dataset, SplitBundle};
use cnsdiff_core::eval::{grouped_report, GroupBlock};
use cnsdiff_core::trainer::{Clock, EpochRecord, Model, NegativeRecord};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Wall-clock seconds since construction.
#[derive(Debug, Clone, Copy)]
pub struct WallClock(Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(Instant::now())
    }
}

impl Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Exclusive ownership of a run directory for the lifetime of the value.
#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
    lock: PathBuf,
}

impl RunDir {
    pub const LOCK: &'static str = ".lock";
    pub const CHECKPOINTS: &'static str = "checkpoints";

    pub fn acquire(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join(Self::CHECKPOINTS)).map_err(|e| Error::io(root, e))?;
        let lock = root.join(Self::LOCK);
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
        {
            Ok(_) => Ok(Self {
                root: root.to_path_buf(),
                lock,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(root.to_path_buf()))
            }
            Err(e) => Err(Error::io(&lock, e)),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

/// How ground-truth interactions are grouped in diagnostic reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupSpec {
    /// Equal-frequency buckets of item popularity, bucket 0 most popular.
    Popularity(usize),
    /// Equal-count buckets of interaction timestamps, bucket 0 earliest.
    Temporal(usize),
}

impl GroupSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, n) = s
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("groups `{s}` is not kind:count")))?;
        let n: usize = n
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("bad group count in `{s}`")))?;
        match kind {
            "popularity" => Ok(GroupSpec::Popularity(n)),
            "temporal" => Ok(GroupSpec::Temporal(n)),
            _ => Err(Error::Usage(format!("unknown group kind `{kind}`"))),
        }
    }

    pub fn count(&self) -> usize {
        match *self {
            GroupSpec::Popularity(n) | GroupSpec::Temporal(n) => n,
        }
    }
}

/// Which held-out set a grouped report restricts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Val,
    Iid,
    Ood,
}

impl Target {
    fn indices(self, split: &SplitBundle) -> &[usize] {
        match self {
            Target::Val => &split.val,
            Target::Iid => &split.test_iid,
            Target::Ood => &split.test_ood,
        }
    }
}

/// Grouped metrics on `target` at the model's current parameters. False
/// hard negative ratios are attached per group of the sampled item, for
/// item-level groupings only.
pub fn grouped(
    model: &Model,
    dataset: &Dataset,
    split: &SplitBundle,
    spec: GroupSpec,
    target: Target,
    negatives: &[NegativeRecord],
) -> Result<Vec<GroupBlock>> {
    let z = model.propagated();
    let indices = target.indices(split);
    let gt = split.user_items(dataset, indices);
    let num_groups = spec.count();
    match spec {
        GroupSpec::Popularity(n) => {
            let buckets = popularity_buckets(dataset.item_popularity(), n)?;
            let flags: Vec<(usize, bool)> = negatives
                .iter()
                .map(|r| (buckets[r.item], r.false_hard))
                .collect();
            Ok(grouped_report(
                &z,
                &gt,
                &model.sets.train,
                &|_, v| buckets[v],
                num_groups,
                &flags,
            )?)
        }
        GroupSpec::Temporal(n) => {
            let mut stamps: Vec<i64> = dataset.interactions().iter().map(|r| r.timestamp).collect();
            stamps.sort_unstable();
            let bucket_of = |ts: i64| {
                let rank = stamps.partition_point(|&s| s < ts);
                (rank * n / stamps.len()).min(n - 1)
            };
            let mut when = BTreeMap::new();
            for &i in indices {
                let r = split.interaction(dataset, i);
                when.insert((r.user, r.item), bucket_of(r.timestamp));
            }
            Ok(grouped_report(
                &z,
                &gt,
                &model.sets.train,
                &|u, v| when[&(u, v)],
                num_groups,
                &[],
            )?)
        }
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::format(path, e.to_string())
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// `epochs.csv`: one row per epoch, metric cells empty on unevaluated epochs.
pub fn write_epochs_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "epoch",
        "total",
        "bpr",
        "neg_sampling",
        "contrastive",
        "recall@10",
        "ndcg@10",
        "recall@20",
        "ndcg@20",
        "fhns_ratio",
        "seconds",
    ])
    .map_err(|e| csv_err(path, e))?;
    for r in records {
        let l = r.loss.as_ref();
        let v = r.val.as_ref();
        w.write_record([
            r.epoch.to_string(),
            opt(l.map(|l| l.total)),
            opt(l.map(|l| l.bpr)),
            opt(l.map(|l| l.neg_sampling)),
            opt(l.map(|l| l.contrastive)),
            opt(v.map(|m| m.recall_10)),
            opt(v.map(|m| m.ndcg_10)),
            opt(v.map(|m| m.recall_20)),
            opt(v.map(|m| m.ndcg_20)),
            opt(r.fhns_ratio),
            format!("{:.6}", r.seconds),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `(epoch, ratio)` for every epoch that drew negatives.
pub fn write_fhns_csv(path: &Path, rows: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["epoch", "ratio"])
        .map_err(|e| csv_err(path, e))?;
    for (epoch, ratio) in rows {
        w.write_record([epoch.to_string(), ratio.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `(metric, value, support)`; ranking metrics are supported by ground-truth
/// interactions, the false hard negative ratio by sampled negatives.
fn group_rows(block: &GroupBlock) -> Vec<(&'static str, f64, usize)> {
    let mut rows = Vec::new();
    if let Some(m) = &block.metrics {
        rows.extend([
            ("recall@10", m.recall_10, block.support),
            ("ndcg@10", m.ndcg_10, block.support),
            ("recall@20", m.recall_20, block.support),
            ("ndcg@20", m.ndcg_20, block.support),
        ]);
    }
    if let Some(f) = block.fhns {
        rows.push(("fhns_ratio", f, block.negatives));
    }
    rows
}

/// `grouped.csv`: `(group, metric, value, support)`, optionally prefixed by
/// an epoch column.
pub fn write_grouped_csv(path: &Path, blocks: &[(Option<usize>, Vec<GroupBlock>)]) -> Result<()> {
    let with_epoch = blocks.iter().any(|b| b.0.is_some());
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: &[&str] = if with_epoch {
        &["epoch", "group", "metric", "value", "support"]
    } else {
        &["group", "metric", "value", "support"]
    };
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (epoch, groups) in blocks {
        for b in groups {
            for (metric, value, support) in group_rows(b) {
                let mut row = Vec::with_capacity(5);
                if with_epoch {
                    row.push(epoch.map(|e| e.to_string()).unwrap_or_default());
                }
                row.extend([
                    b.group.to_string(),
                    metric.to_string(),
                    value.to_string(),
                    support.to_string(),
                ]);
                w.write_record(&row).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn hash_file(root: &Path, rel: &str) -> Result<FileHash> {
    let path = root.join(rel);
    let mut f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(&path, e))?;
        if n == 0 {
            break;
        }
        bytes += n as u64;
        hasher.update(&buf[..n]);
    }
    Ok(FileHash {
        path: rel.to_string(),
        sha256: format!("{:x}", hasher.finalize()),
        bytes,
    })
}

/// Every regular file under `root` except the lock and the manifest itself,
/// as sorted relative paths.
pub fn inventory(root: &Path) -> Result<Vec<FileHash>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let entry = entry.map_err(|e| Error::io(dir, e))?;
            let path = entry.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_string_lossy()
                    .replace('\\', "/");
                if rel != RunDir::LOCK && rel != MANIFEST {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut names = Vec::new();
    walk(root, root, &mut names)?;
    names.sort();
    names.iter().map(|n| hash_file(root, n)).collect()
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEcho {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub stepset: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Unix seconds.
    pub started: u64,
    pub finished: u64,
    pub data: Option<String>,
    pub split: Option<String>,
    pub split_params: Option<serde_json::Value>,
    pub config: serde_json::Value,
    pub schedule: Option<ScheduleEcho>,
    pub files: Vec<FileHash>,
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}
