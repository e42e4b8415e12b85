//! Drivers behind the `train`, `eval` and `diagnose` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use cnsdiff_core::corpus::{Dataset, SplitBundle};
use cnsdiff_core::eval::{self, GroupBlock};
use cnsdiff_core::trainer::{
    fit, sampling_pass, FinalBlock, FitEvent, Model, NegativeRecord, RunReport, TrainConfig,
};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::dataset::{read_dataset, read_envs, write_item_envs};
use crate::error::{Error, Result};
use crate::json;
use crate::report::{
    self, grouped, inventory, unix_now, write_epochs_csv, write_fhns_csv, write_grouped_csv,
    GroupSpec, RunDir, RunManifest, ScheduleEcho, Target, WallClock,
};
use crate::splitfile::{check_split, read_split};

pub const FINGERPRINT: &str = concat!("cnsdiff ", env!("CARGO_PKG_VERSION"));

/// Read and validate a run config; every failure is a config error.
pub fn load_config(path: &Path) -> Result<TrainConfig> {
    let config: TrainConfig = json::read(path).map_err(|e| match e {
        Error::Json { field, message, .. } => Error::Config {
            path: path.to_path_buf(),
            message: format!("at `{field}`: {message}"),
        },
        other => other,
    })?;
    config.validate().map_err(|e| Error::Config {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(config)
}

/// A dataset directory, its environment labels and a checked split.
pub struct Inputs {
    pub data: PathBuf,
    pub split_path: PathBuf,
    pub dataset: Dataset,
    pub envs: Option<Vec<usize>>,
    pub split: SplitBundle,
}

impl Inputs {
    pub fn load(data: &Path, split: &Path) -> Result<Self> {
        let dataset = read_dataset(data)?;
        let envs = read_envs(data, dataset.len())?;
        let bundle = read_split(split)?;
        check_split(split, &bundle, dataset.len())?;
        Ok(Self {
            data: data.to_path_buf(),
            split_path: split.to_path_buf(),
            dataset,
            envs,
            split: bundle,
        })
    }

    pub fn model(&self, config: TrainConfig) -> Result<Model> {
        Ok(Model::new(
            &self.dataset,
            &self.split,
            config,
            self.envs.as_deref(),
        )?)
    }
}

fn checkpoint_name(epoch: usize) -> String {
    format!("{}/epoch-{epoch:04}.ckpt", RunDir::CHECKPOINTS)
}

/// Train one configuration into `out`, writing the fixed run directory
/// layout. Checkpoints are kept for every evaluated epoch plus `best.ckpt`.
pub fn train(inputs: &Inputs, config: TrainConfig, out: &Path) -> Result<RunReport> {
    let started = unix_now();
    let dir = RunDir::acquire(out)?;
    json::write(&dir.path("config.json"), &config)?;
    let mut model = inputs.model(config.clone())?;
    write_item_envs(
        &dir.path("envs.csv"),
        &inputs.dataset,
        &model.params.env.item_env,
    )?;
    let clock = WallClock::start();
    let mut fhns = Vec::new();
    let mut failure = None;
    let (mut report, best) = fit(&mut model, &clock, &mut |event| match event {
        FitEvent::Epoch(o) => {
            if let Some(r) = o.record.fhns_ratio {
                fhns.push((o.record.epoch, r));
            }
        }
        FitEvent::Evaluated { epoch, model } => {
            if failure.is_none() {
                let ckpt = Checkpoint::capture(&model.config, &model.params, epoch);
                failure = write_checkpoint(&dir.path(&checkpoint_name(epoch)), &ckpt).err();
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    report.fingerprint = FINGERPRINT.to_string();
    let ckpt = Checkpoint::capture(&config, &best, report.best_epoch);
    write_checkpoint(&dir.path("checkpoints/best.ckpt"), &ckpt)?;
    model.params = best;
    let negatives = sampling_pass(&model, report.best_epoch)?;
    let blocks = grouped(
        &model,
        &inputs.dataset,
        &inputs.split,
        GroupSpec::Popularity(4),
        Target::Ood,
        &negatives,
    )?;
    write_grouped_csv(&dir.path("grouped.csv"), &[(None, blocks)])?;
    json::write(&dir.path("metrics.json"), &report)?;
    write_epochs_csv(&dir.path("epochs.csv"), &report.epochs)?;
    write_fhns_csv(&dir.path("fhns.csv"), &fhns)?;
    let stepset = config.stepset()?;
    let manifest = RunManifest {
        tool: "cnsdiff train".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "train".into(),
        started,
        finished: unix_now(),
        data: Some(inputs.data.display().to_string()),
        split: Some(inputs.split_path.display().to_string()),
        split_params: Some(serde_json::json!({
            "shift_kind": inputs.split.shift_kind,
            "seed": inputs.split.seed,
            "ratios": inputs.split.ratios,
            "ood_fraction": inputs.split.ood_fraction,
        })),
        config: serde_json::to_value(&config).expect("config serializes"),
        schedule: Some(ScheduleEcho {
            steps: config.steps,
            beta_start: config.beta_start,
            beta_end: config.beta_end,
            stepset: stepset.steps().to_vec(),
        }),
        files: inventory(&dir.root)?,
    };
    json::write(&dir.path(report::MANIFEST), &manifest)?;
    Ok(report)
}

/// Metric blocks of a single checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub epoch: usize,
    pub blocks: Vec<FinalBlock>,
    pub fhns_ratio: Option<f64>,
}

fn restored(inputs: &Inputs, path: &Path) -> Result<(Model, usize)> {
    let ckpt = read_checkpoint(path)?;
    let mut model = inputs.model(ckpt.header.config.clone())?;
    ckpt.restore(&mut model.params)?;
    Ok((model, ckpt.header.epoch))
}

fn ratio(negatives: &[NegativeRecord]) -> Option<f64> {
    (!negatives.is_empty())
        .then(|| negatives.iter().filter(|r| r.false_hard).count() as f64 / negatives.len() as f64)
}

/// Evaluate a checkpoint: val / iid / ood blocks in `metrics.json` and a
/// grouped report on `target` in `grouped.csv`.
pub fn evaluate(
    inputs: &Inputs,
    checkpoint: &Path,
    groups: GroupSpec,
    target: Target,
    out: &Path,
) -> Result<EvalReport> {
    let dir = RunDir::acquire(out)?;
    let (model, epoch) = restored(inputs, checkpoint)?;
    let z = model.propagated();
    let sets = &model.sets;
    let blocks = [
        ("val", &sets.val),
        ("iid", &sets.test_iid),
        ("ood", &sets.test_ood),
    ]
    .into_iter()
    .map(|(name, gt)| FinalBlock {
        split: name.into(),
        metrics: eval::rank_metrics(&z, gt, &sets.train),
    })
    .collect();
    let negatives = sampling_pass(&model, epoch)?;
    let g = grouped(
        &model,
        &inputs.dataset,
        &inputs.split,
        groups,
        target,
        &negatives,
    )?;
    write_grouped_csv(&dir.path("grouped.csv"), &[(None, g)])?;
    let report = EvalReport {
        epoch,
        blocks,
        fhns_ratio: ratio(&negatives),
    };
    json::write(&dir.path("metrics.json"), &report)?;
    Ok(report)
}

/// Checkpoints `epoch-NNNN.ckpt` of a run directory in epoch order.
pub fn checkpoint_series(run: &Path) -> Result<Vec<PathBuf>> {
    let dir = run.join(RunDir::CHECKPOINTS);
    let mut out: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("epoch-") && n.ends_with(".ckpt"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Recompute the false-hard-negative curve and grouped reports over a run's
/// checkpoint series, writing `fhns_curve.csv` and `grouped.csv` into `out`.
pub fn diagnose(
    run: &Path,
    groups: GroupSpec,
    target: Target,
    out: &Path,
) -> Result<Vec<(usize, f64)>> {
    let manifest: RunManifest = json::read(&run.join(report::MANIFEST))?;
    let (data, split) = manifest
        .data
        .zip(manifest.split)
        .ok_or_else(|| Error::format(run, "manifest does not name its data and split"))?;
    let inputs = Inputs::load(Path::new(&data), Path::new(&split))?;
    let series = checkpoint_series(run)?;
    if series.is_empty() {
        return Err(Error::format(run, "no epoch checkpoints"));
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut curve = Vec::with_capacity(series.len());
    let mut blocks: Vec<(Option<usize>, Vec<GroupBlock>)> = Vec::with_capacity(series.len());
    for path in &series {
        let (model, epoch) = restored(&inputs, path)?;
        let negatives = sampling_pass(&model, epoch)?;
        if let Some(r) = ratio(&negatives) {
            curve.push((epoch, r));
        }
        let g = grouped(
            &model,
            &inputs.dataset,
            &inputs.split,
            groups,
            target,
            &negatives,
        )?;
        blocks.push((Some(epoch), g));
    }
    write_fhns_csv(&out.join("fhns_curve.csv"), &curve)?;
    write_grouped_csv(&out.join("grouped.csv"), &blocks)?;
    Ok(curve)
}
