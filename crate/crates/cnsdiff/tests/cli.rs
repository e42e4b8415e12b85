use std::fs;
use std::path::{Path, PathBuf};

use cnsdiff::cli::run_command;
use cnsdiff::report::{inventory, RunManifest};
use cnsdiff::run::EvalReport;
use cnsdiff_core::corpus::SyntheticSpec;
use cnsdiff_core::gradcheck::tiny_config;
use cnsdiff_core::trainer::{RunReport, TrainConfig};
use tempfile::TempDir;

fn cli(args: &[&dyn AsRef<std::ffi::OsStr>]) -> i32 {
    let mut argv = vec![std::ffi::OsString::from("cnsdiff")];
    argv.extend(args.iter().map(|a| a.as_ref().to_os_string()));
    run_command(argv)
}

/// A synthetic dataset, a popularity split and a tiny config under `root`.
struct Fixture {
    root: TempDir,
}

impl Fixture {
    fn new(epochs: usize) -> Self {
        let root = tempfile::tempdir().unwrap();
        let spec = SyntheticSpec::uniform_exposure(40, 30, 2, 0.8, 0.3, 0);
        fs::write(
            root.path().join("spec.json"),
            serde_json::to_string(&spec).unwrap(),
        )
        .unwrap();
        let config = TrainConfig {
            epochs,
            ..tiny_config()
        };
        fs::write(
            root.path().join("config.json"),
            serde_json::to_string(&config).unwrap(),
        )
        .unwrap();
        let f = Self { root };
        assert_eq!(
            cli(&[
                &"synth",
                &"--spec",
                &f.path("spec.json"),
                &"--out",
                &f.data()
            ]),
            0
        );
        assert_eq!(
            cli(&[
                &"split",
                &"--data",
                &f.data(),
                &"--kind",
                &"popularity",
                &"--out",
                &f.split()
            ]),
            0
        );
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.path().join(name)
    }

    fn data(&self) -> PathBuf {
        self.path("data")
    }

    fn split(&self) -> PathBuf {
        self.path("split.json")
    }

    fn train(&self, out: &str) -> i32 {
        cli(&[
            &"train",
            &"--data",
            &self.data(),
            &"--split",
            &self.split(),
            &"--config",
            &self.path("config.json"),
            &"--out",
            &self.path(out),
        ])
    }
}

fn report(run: &Path) -> RunReport {
    serde_json::from_slice(&fs::read(run.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert_eq!(cli(&[&"--help"]), 0);
    assert_eq!(cli(&[&"train", &"--bogus"]), 2);
    assert_eq!(cli(&[]), 2);
    assert_eq!(
        cli(&[
            &"split",
            &"--data",
            &"x",
            &"--kind",
            &"sideways",
            &"--out",
            &"y"
        ]),
        2
    );
}

#[test]
fn gradcheck_passes_on_the_tiny_instance() {
    assert_eq!(cli(&[&"gradcheck"]), 0);
}

#[test]
fn config_errors_exit_two_and_missing_data_exits_one() {
    let f = Fixture::new(1);
    fs::write(f.path("bad.json"), r#"{"epochs": 1, "learning_rate": 0.1}"#).unwrap();
    fs::write(f.path("invalid.json"), r#"{"epochs": 1, "dim": 0}"#).unwrap();
    for bad in ["bad.json", "invalid.json"] {
        let code = cli(&[
            &"train",
            &"--data",
            &f.data(),
            &"--split",
            &f.split(),
            &"--config",
            &f.path(bad),
            &"--out",
            &f.path("run"),
        ]);
        assert_eq!(code, 2, "{bad}");
    }
    let code = cli(&[
        &"train",
        &"--data",
        &f.path("nowhere"),
        &"--split",
        &f.split(),
        &"--config",
        &f.path("config.json"),
        &"--out",
        &f.path("run"),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn zero_epochs_reports_only_the_initial_evaluation() {
    let f = Fixture::new(0);
    assert_eq!(f.train("run"), 0);
    let r = report(&f.path("run"));
    assert_eq!(r.epochs.len(), 1);
    assert_eq!(r.epochs[0].epoch, 0);
    assert!(r.epochs[0].val.is_some() && r.epochs[0].loss.is_none());
    assert_eq!(r.best_epoch, 0);
}

#[test]
fn evaluating_the_best_checkpoint_reproduces_the_run_metrics() {
    let f = Fixture::new(3);
    assert_eq!(f.train("run"), 0);
    let r = report(&f.path("run"));
    let code = cli(&[
        &"eval",
        &"--checkpoint",
        &f.path("run/checkpoints/best.ckpt"),
        &"--data",
        &f.data(),
        &"--split",
        &f.split(),
        &"--out",
        &f.path("eval"),
    ]);
    assert_eq!(code, 0);
    let e: EvalReport =
        serde_json::from_slice(&fs::read(f.path("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(e.epoch, r.best_epoch);
    for split in ["iid", "ood"] {
        let block = e.blocks.iter().find(|b| b.split == split).unwrap();
        assert_eq!(Some(&block.metrics), r.final_block(split), "{split}");
    }
    assert!(f.path("eval/grouped.csv").exists());
}

#[test]
fn identical_runs_hash_identically_and_leave_inputs_untouched() {
    let f = Fixture::new(2);
    let before = inventory(&f.data()).unwrap();
    let split_before = fs::read(f.split()).unwrap();
    assert_eq!(f.train("a"), 0);
    assert_eq!(f.train("b"), 0);
    let manifest = |run: &str| -> RunManifest {
        serde_json::from_slice(&fs::read(f.path(run).join("manifest.json")).unwrap()).unwrap()
    };
    let (a, b) = (manifest("a"), manifest("b"));
    // epochs.csv carries wall-clock seconds; everything else must match
    let untimed_files = |m: &RunManifest| -> Vec<_> {
        m.files
            .iter()
            .filter(|h| h.path != "epochs.csv")
            .cloned()
            .collect()
    };
    assert_eq!(untimed_files(&a).len(), a.files.len() - 1);
    assert_eq!(untimed_files(&a), untimed_files(&b));
    let untimed = |run: &str| -> Vec<String> {
        fs::read_to_string(f.path(run).join("epochs.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(untimed("a"), untimed("b"));
    assert!(a.files.iter().any(|h| h.path == "metrics.json"));
    assert_eq!(inventory(&f.data()).unwrap(), before);
    assert_eq!(fs::read(f.split()).unwrap(), split_before);
    assert!(!f.path("a/.lock").exists());
}

#[test]
fn a_locked_run_directory_is_refused() {
    let f = Fixture::new(1);
    fs::create_dir_all(f.path("run")).unwrap();
    fs::write(f.path("run/.lock"), "").unwrap();
    assert_eq!(f.train("run"), 1);
    assert!(!f.path("run/metrics.json").exists());
}

#[test]
fn diagnose_reads_back_every_checkpoint() {
    let f = Fixture::new(2);
    assert_eq!(f.train("run"), 0);
    assert_eq!(cli(&[&"diagnose", &"--run", &f.path("run")]), 0);
    let curve = fs::read_to_string(f.path("run/diagnose/fhns_curve.csv")).unwrap();
    // header plus epochs 0, 1, 2
    assert_eq!(curve.lines().count(), 4);
}

#[test]
fn ingest_indexes_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv");
    fs::write(
        &raw,
        "user_id,item_id,timestamp,rating\nu,a,1,5\nu,b,2,5\nu,c,3,5\n",
    )
    .unwrap();
    let out = dir.path().join("ds");
    assert_eq!(cli(&[&"ingest", &"--input", &raw, &"--out", &out]), 0);
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["num_users"], 1);
    assert_eq!(meta["num_items"], 3);

    let rows: String = (0..10).map(|u| format!("u{u},x,{u},1\n")).collect();
    fs::write(&raw, format!("user_id,item_id,timestamp,rating\n{rows}")).unwrap();
    let code = cli(&[
        &"ingest",
        &"--input",
        &raw,
        &"--min-user",
        &"2",
        &"--out",
        &dir.path().join("empty"),
    ]);
    assert_eq!(code, 1);
}

#[test]
fn grid_expands_the_cartesian_product() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("grid");
    let vary = "T=[10,20,30,40,50];lambda2=[1e-6,1e-5,1e-4,1e-3,1e-2]";
    let base = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.json");
    assert_eq!(
        cli(&[
            &"grid",
            &"--config",
            &base,
            &"--vary",
            &vary,
            &"--out",
            &out
        ]),
        0
    );
    let configs = fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "json")
        })
        .count();
    assert_eq!(configs, 25);
    let c: TrainConfig =
        serde_json::from_slice(&fs::read(out.join("config-024.json")).unwrap()).unwrap();
    assert_eq!((c.steps, c.lambda2), (50, 1e-2));
}
