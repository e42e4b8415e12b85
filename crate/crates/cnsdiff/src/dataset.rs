//! Interaction logs on disk: raw CSV ingestion and the indexed dataset
//! directory (`interactions.csv`, `user_ids.csv`, `item_ids.csv`,
//! `meta.json`, optionally `interaction_envs.csv`).

use std::fs;
use std::path::{Path, PathBuf};

use cnsdiff_core::corpus::{Dataset, FilterOptions, Interaction, RawRecord};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::json;

pub const INTERACTIONS: &str = "interactions.csv";
pub const USER_IDS: &str = "user_ids.csv";
pub const ITEM_IDS: &str = "item_ids.csv";
pub const META: &str = "meta.json";
pub const ENVS: &str = "interaction_envs.csv";

/// Header names of the four logical columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub user: String,
    pub item: String,
    pub timestamp: String,
    pub rating: String,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            user: "user_id".into(),
            item: "item_id".into(),
            timestamp: "timestamp".into(),
            rating: "rating".into(),
        }
    }
}

impl Schema {
    /// Parse `user_id=uid,rating=stars`; unnamed columns keep their logical
    /// name.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut s = Self::default();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, column) = part
                .split_once('=')
                .ok_or_else(|| Error::Usage(format!("schema entry `{part}` is not key=column")))?;
            let slot = match key.trim() {
                "user_id" | "user" => &mut s.user,
                "item_id" | "item" => &mut s.item,
                "timestamp" => &mut s.timestamp,
                "rating" => &mut s.rating,
                other => return Err(Error::Usage(format!("unknown schema column `{other}`"))),
            };
            *slot = column.trim().to_string();
        }
        Ok(s)
    }
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing column `{name}`"),
        })
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn field<T: std::str::FromStr>(
    record: &csv::StringRecord,
    idx: usize,
    name: &str,
    path: &Path,
) -> Result<T> {
    let raw = record.get(idx).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: line_of(record),
        message: format!("cannot parse {name} `{raw}`"),
    })
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(false).from_reader(file))
}

/// Rows of a UTF-8 CSV with a header, mapped through `schema`. When
/// `require_all` is false, missing timestamp and rating columns default to 0
/// and 1.0.
pub fn read_records(path: &Path, schema: &Schema, require_all: bool) -> Result<Vec<RawRecord>> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let user = column(&headers, &schema.user, path)?;
    let item = column(&headers, &schema.item, path)?;
    let (timestamp, rating) = if require_all {
        (
            Some(column(&headers, &schema.timestamp, path)?),
            Some(column(&headers, &schema.rating, path)?),
        )
    } else {
        (
            column(&headers, &schema.timestamp, path).ok(),
            column(&headers, &schema.rating, path).ok(),
        )
    };
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let timestamp = match timestamp {
            Some(i) => field::<i64>(&row, i, "timestamp", path)?,
            None => 0,
        };
        if timestamp < 0 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_of(&row),
                message: format!("negative timestamp {timestamp}"),
            });
        }
        let rating = match rating {
            Some(i) => field::<f64>(&row, i, "rating", path)?,
            None => 1.0,
        };
        out.push(RawRecord {
            user: row.get(user).unwrap_or("").trim().to_string(),
            item: row.get(item).unwrap_or("").trim().to_string(),
            timestamp,
            rating,
        });
    }
    Ok(out)
}

/// Ingest a raw log: threshold, deduplicate, apply floors, reindex.
pub fn load_interactions(path: &Path, schema: &Schema, opts: &FilterOptions) -> Result<Dataset> {
    let records = read_records(path, schema, true)?;
    Ok(Dataset::from_records(&records, opts)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub num_users: usize,
    pub num_items: usize,
    pub num_interactions: usize,
    pub has_envs: bool,
}

/// Write `dataset` into `dir`, with optional per-interaction environments.
pub fn write_dataset(dir: &Path, dataset: &Dataset, envs: Option<&[usize]>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(INTERACTIONS);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_error(&path, e))?;
    w.write_record(["user", "item", "timestamp", "rating"])
        .map_err(|e| csv_error(&path, e))?;
    for r in dataset.interactions() {
        w.write_record([
            r.user.to_string(),
            r.item.to_string(),
            r.timestamp.to_string(),
            r.rating.to_string(),
        ])
        .map_err(|e| csv_error(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_ids(&dir.join(USER_IDS), dataset.user_ids())?;
    write_ids(&dir.join(ITEM_IDS), dataset.item_ids())?;
    if let Some(envs) = envs {
        let path = dir.join(ENVS);
        write_pairs(
            &path,
            ["interaction", "env"],
            envs.iter().copied().enumerate(),
        )?;
    }
    json::write(
        &dir.join(META),
        &Meta {
            num_users: dataset.num_users(),
            num_items: dataset.num_items(),
            num_interactions: dataset.len(),
            has_envs: envs.is_some(),
        },
    )
}

/// Two-column integer CSV with a header.
pub fn write_pairs(
    path: &Path,
    header: [&str; 2],
    rows: impl Iterator<Item = (usize, usize)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for (a, b) in rows {
        w.write_record([a.to_string(), b.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["index", "id"])
        .map_err(|e| csv_error(path, e))?;
    for (i, id) in ids.iter().enumerate() {
        w.write_record([i.to_string(), id.clone()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_ids(path: &Path, expected: usize) -> Result<Vec<String>> {
    let mut rdr = reader(path)?;
    let mut ids = Vec::with_capacity(expected);
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let index: usize = field(&row, 0, "index", path)?;
        if index != ids.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_of(&row),
                message: format!("expected index {}, found {index}", ids.len()),
            });
        }
        ids.push(row.get(1).unwrap_or("").to_string());
    }
    if ids.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} ids, found {}", ids.len()),
        ));
    }
    Ok(ids)
}

/// Per-interaction environment labels of a dataset directory, if present.
pub fn read_envs(dir: &Path, num_interactions: usize) -> Result<Option<Vec<usize>>> {
    let path = dir.join(ENVS);
    if !path.exists() {
        return Ok(None);
    }
    let mut rdr = reader(&path)?;
    let mut envs = Vec::with_capacity(num_interactions);
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(&path, e))?;
        envs.push(field(&row, 1, "env", &path)?);
    }
    if envs.len() != num_interactions {
        return Err(Error::format(
            &path,
            format!("{} labels for {num_interactions} interactions", envs.len()),
        ));
    }
    Ok(Some(envs))
}

/// Load a dataset directory written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: Meta = json::read(&dir.join(META))?;
    let path = dir.join(INTERACTIONS);
    let mut rdr = reader(&path)?;
    let mut interactions = Vec::with_capacity(meta.num_interactions);
    for row in rdr.records() {
        let row = row.map_err(|e| csv_error(&path, e))?;
        interactions.push(Interaction {
            user: field(&row, 0, "user", &path)?,
            item: field(&row, 1, "item", &path)?,
            timestamp: field(&row, 2, "timestamp", &path)?,
            rating: field(&row, 3, "rating", &path)?,
        });
    }
    if interactions.len() != meta.num_interactions {
        return Err(Error::format(
            &path,
            format!(
                "meta.json declares {} interactions, found {}",
                meta.num_interactions,
                interactions.len()
            ),
        ));
    }
    let users = read_ids(&dir.join(USER_IDS), meta.num_users)?;
    let items = read_ids(&dir.join(ITEM_IDS), meta.num_items)?;
    Ok(Dataset::new(
        meta.num_users,
        meta.num_items,
        interactions,
        users,
        items,
    )?)
}

/// Relative paths that do not exist from the working directory are looked up
/// under `CNSDIFF_DATA_ROOT` when it is set.
pub fn resolve(path: &Path) -> PathBuf {
    if path.is_relative() && !path.exists() {
        if let Some(root) = std::env::var_os("CNSDIFF_DATA_ROOT") {
            return Path::new(&root).join(path);
        }
    }
    path.to_path_buf()
}

/// Item-to-environment export: `(item_id, env_id)` using original ids.
pub fn write_item_envs(path: &Path, dataset: &Dataset, item_env: &[usize]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(["item_id", "env_id"])
        .map_err(|e| csv_error(path, e))?;
    for (id, env) in dataset.item_ids().iter().zip(item_env) {
        w.write_record([id.clone(), env.to_string()])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
