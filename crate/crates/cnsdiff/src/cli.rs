//! Argument parsing and dispatch. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use cnsdiff_core::corpus::{
    build_split, generate_synthetic, FilterOptions, ShiftKind, SplitOptions, SyntheticSpec,
};
use cnsdiff_core::gradcheck::{self, run_gradcheck};
use cnsdiff_core::trainer::TrainConfig;

use crate::dataset::{self, load_interactions, read_dataset, read_records, resolve, Schema};
use crate::error::{Error, Result};
use crate::grid::{expand, parse_vary, Assignment};
use crate::json;
use crate::report::{GroupSpec, Target};
use crate::run::{self, load_config, Inputs};
use crate::splitfile::write_split;
use crate::synth::write_synthetic;

#[derive(Debug, Parser)]
#[command(
    name = "cnsdiff",
    version,
    about = "Train and evaluate recommenders with diffusion-generated negatives"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Popularity,
    Temporal,
    Exposure,
    None,
}

impl From<KindArg> for ShiftKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Popularity => ShiftKind::Popularity,
            KindArg::Temporal => ShiftKind::Temporal,
            KindArg::Exposure => ShiftKind::Exposure,
            KindArg::None => ShiftKind::None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TargetArg {
    Val,
    Iid,
    Ood,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Val => Target::Val,
            TargetArg::Iid => Target::Iid,
            TargetArg::Ood => Target::Ood,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter and index a raw interaction CSV into a dataset directory.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Column remapping, e.g. `user_id=uid,rating=stars`.
        #[arg(long, default_value = "")]
        schema: String,
        #[arg(long, default_value_t = 1)]
        min_user: usize,
        #[arg(long, default_value_t = 1)]
        min_item: usize,
        #[arg(long, default_value_t = f64::NEG_INFINITY, allow_negative_numbers = true)]
        rating_threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a dataset into train / val / IID test / OOD test.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, default_value_t = 0.2)]
        ood_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fully exposed log (`user_id,item_id` with original ids).
        #[arg(long)]
        exposure_test: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a confounded synthetic dataset with its planted truth.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration into a run directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint with grouped diagnostics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        split: PathBuf,
        #[arg(long, default_value = "popularity:4")]
        groups: String,
        #[arg(long, value_enum, default_value = "ood")]
        target: TargetArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute FHNS curves and grouped reports over a run's checkpoints.
    Diagnose {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "popularity:4")]
        groups: String,
        #[arg(long, value_enum, default_value = "ood")]
        target: TargetArg,
        /// Defaults to `<run>/diagnose`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every parameter gradient.
    Gradcheck {
        /// Defaults to the built-in tiny configuration.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Expand a base config over value lists into one file per combination.
    Grid {
        #[arg(long)]
        config: PathBuf,
        /// e.g. `T=[10,20,50];lambda2=[1e-6,1e-3]`
        #[arg(long)]
        vary: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parse `argv` (including the program name) and run it.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Ingest {
            input,
            schema,
            min_user,
            min_item,
            rating_threshold,
            out,
        } => {
            let schema = Schema::parse(&schema)?;
            let opts = FilterOptions {
                min_user_interactions: min_user,
                min_item_interactions: min_item,
                rating_threshold,
            };
            let ds = load_interactions(&resolve(&input), &schema, &opts)?;
            dataset::write_dataset(&out, &ds, None)?;
            println!(
                "users={} items={} interactions={}",
                ds.num_users(),
                ds.num_items(),
                ds.len()
            );
        }
        Command::Split {
            data,
            kind,
            ood_fraction,
            seed,
            exposure_test,
            out,
        } => {
            if matches!(kind, KindArg::Exposure) != exposure_test.is_some() {
                return Err(Error::Usage(
                    "--exposure-test is required with, and only with, --kind exposure".into(),
                ));
            }
            let ds = read_dataset(&resolve(&data))?;
            let external = exposure_test
                .map(|p| read_records(&resolve(&p), &Schema::default(), false))
                .transpose()?;
            let opts = SplitOptions {
                kind: kind.into(),
                ood_fraction,
                seed,
                ..SplitOptions::default()
            };
            let bundle = build_split(&ds, &opts, external.as_deref())?;
            write_split(&out, &bundle)?;
            let [train, val, iid, ood] = bundle.counts();
            println!("train={train} val={val} test_iid={iid} test_ood={ood}");
            if bundle.short_users > 0 {
                eprintln!(
                    "warning: {} users with fewer than 2 interactions kept entirely in train",
                    bundle.short_users
                );
            }
        }
        Command::Synth { spec, out } => {
            let spec: SyntheticSpec = json::read(&spec).map_err(|e| match e {
                Error::Json {
                    path,
                    field,
                    message,
                } => Error::Config {
                    path,
                    message: format!("at `{field}`: {message}"),
                },
                other => other,
            })?;
            let (ds, truth) = generate_synthetic(&spec)?;
            write_synthetic(&out, &ds, &truth)?;
            println!(
                "users={} items={} interactions={} realized_fnr={:?}",
                ds.num_users(),
                ds.num_items(),
                ds.len(),
                truth.realized_fnr
            );
        }
        Command::Train {
            data,
            split,
            config,
            out,
        } => {
            let config = load_config(&config)?;
            let inputs = Inputs::load(&resolve(&data), &resolve(&split))?;
            let report = run::train(&inputs, config, &out)?;
            println!("best_epoch={}", report.best_epoch);
            for b in &report.test {
                println!(
                    "{}: recall@20={:.4} ndcg@20={:.4}",
                    b.split, b.metrics.recall_20, b.metrics.ndcg_20
                );
            }
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            groups,
            target,
            out,
        } => {
            let groups = GroupSpec::parse(&groups)?;
            let inputs = Inputs::load(&resolve(&data), &resolve(&split))?;
            let report = run::evaluate(&inputs, &checkpoint, groups, target.into(), &out)?;
            for b in &report.blocks {
                println!(
                    "{}: recall@20={:.4} ndcg@20={:.4}",
                    b.split, b.metrics.recall_20, b.metrics.ndcg_20
                );
            }
        }
        Command::Diagnose {
            run: dir,
            groups,
            target,
            out,
        } => {
            let groups = GroupSpec::parse(&groups)?;
            let out = out.unwrap_or_else(|| dir.join("diagnose"));
            let curve = run::diagnose(&dir, groups, target.into(), &out)?;
            for (epoch, r) in curve {
                println!("epoch {epoch}: fhns_ratio={r:.6}");
            }
        }
        Command::Gradcheck { config } => {
            let config = match config {
                Some(p) => load_config(&p)?,
                None => gradcheck::tiny_config(),
            };
            let report = run_gradcheck(config)?;
            for t in &report.tensors {
                println!(
                    "{:<20} entries={:<4} max_rel={:.3e} max_abs={:.3e} failures={}",
                    t.name, t.entries, t.max_rel, t.max_abs, t.failures
                );
            }
            println!("max relative error: {:.3e}", report.max_rel());
            return Ok(if report.passed() { 0 } else { 1 });
        }
        Command::Grid { config, vary, out } => {
            let base = load_config(&config)?;
            let axes = parse_vary(&vary)?;
            let configs = expand(&base, &axes)?;
            write_grid(&out, &configs)?;
            println!("{} configs written to {}", configs.len(), out.display());
        }
    }
    Ok(0)
}

fn write_grid(out: &Path, configs: &[(Assignment, TrainConfig)]) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let index = out.join("grid.csv");
    let mut w = csv::Writer::from_path(&index).map_err(|e| Error::format(&index, e.to_string()))?;
    let mut header = vec!["file".to_string()];
    if let Some((assignment, _)) = configs.first() {
        header.extend(assignment.iter().map(|(k, _)| k.clone()));
    }
    w.write_record(&header)
        .map_err(|e| Error::format(&index, e.to_string()))?;
    for (i, (assignment, config)) in configs.iter().enumerate() {
        let name = format!("config-{i:03}.json");
        json::write(&out.join(&name), config)?;
        let mut row = vec![name];
        row.extend(assignment.iter().map(|(_, v)| v.to_string()));
        w.write_record(&row)
            .map_err(|e| Error::format(&index, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&index, e))
}
