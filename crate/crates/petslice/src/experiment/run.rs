//! The single-experiment pipeline: generate → preprocess → split → train →
//! score → evaluate, with cached stages and a deterministic artifact layout.
//!
//! The experiment directory is fully reproducible: rerunning with the same
//! config and master seed rewrites every artifact byte-identically (reusing
//! cached stages when present). Wall-clock timestamps appear only in the
//! `experiment.log` sidecar.
//!
//! Layout: `experiment.json` (config echo, hash, stage hashes), `split.json`,
//! `model/` (checkpoint and training log), `scores/` (one CSV per test set),
//! `reports/<set>/` (report JSON plus ROC/PR/sweep CSVs), `summary.txt` and
//! `summary.csv`, and `cache/` (unless the cache lives elsewhere).

use super::stages::{SampleLookup, StageCache, StageRef};
use super::ExperimentConfig;
use crate::classifier::{
    build_model, read_scores_csv, score_dataset, train, write_scores_csv, write_training_log,
};
use crate::datasplit::{regime_assemble, SplitManifest};
use crate::metrics::{evaluate, write_curve_csv, write_sweep_csv, EvalOptions, EvalReport};
use crate::phantom::{generate_cohort, load_manifest, save_cohort};
use crate::preprocess::{build_slice_dataset, DatasetManifest};
use crate::seed::derive_seed;
use crate::{Error, Result};
use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

/// How far [`run_experiment`] goes. Stages are ordered and cumulative:
/// `Train` implies everything up to and including training and test-set
/// scoring; `Evaluate` adds reports and the summary tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Preprocess,
    Split,
    Train,
    Evaluate,
}

/// Invocation parameters that do not belong to the experiment's identity.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Last stage to run (default: the whole pipeline).
    pub through: Stage,
    /// Rebuild every stage even when cached.
    pub force: bool,
    /// Echo stage progress to stdout (the CLI sets this; tests stay quiet).
    pub echo: bool,
    /// Config hash stamped into artifacts. A grid passes its own hash so
    /// that cell reports compare without forcing; defaults to the
    /// experiment's config hash.
    pub provenance_hash: Option<String>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            through: Stage::Evaluate,
            force: false,
            echo: false,
            provenance_hash: None,
        }
    }
}

/// What one invocation produced.
#[derive(Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    /// Hash embedded in artifacts (equals `config_hash` outside a grid).
    pub provenance_hash: String,
    /// Stage label → stage hash, for the stages that ran.
    pub stages: BTreeMap<String, String>,
    /// Test-set name → report, when the pipeline ran through evaluation.
    pub reports: BTreeMap<String, EvalReport>,
}

/// Appends timestamped lines to the log sidecar; optionally echoes the
/// message (without the timestamp) to stdout.
struct StageLog {
    file: fs::File,
    echo: bool,
}

impl StageLog {
    fn open(path: &Path, echo: bool) -> Result<Self> {
        let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(StageLog { file, echo })
    }

    fn line(&mut self, msg: &str) -> Result<()> {
        let ts = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        writeln!(self.file, "[{ts}] {msg}")?;
        if self.echo {
            println!("{msg}");
        }
        Ok(())
    }

    fn stage(&mut self, label: &str, stage: &StageRef) -> Result<()> {
        let how = if stage.cache_hit { "cache hit" } else { "built" };
        self.line(&format!("{label}: {how} ({})", stage.hash))
    }
}

/// Runs the pipeline described by `config` up to `opts.through`.
///
/// Every stage failure is wrapped with the stage name; partially built
/// stage directories are renamed to `*.incomplete` by the cache layer, so
/// nothing half-written is ever mistaken for a finished artifact.
pub fn run_experiment(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory: set out_dir or pass --out".into()))?;
    fs::create_dir_all(&out)?;
    let cache_root = config.cache_dir.clone().unwrap_or_else(|| out.join("cache"));
    let cache = StageCache::new(&cache_root)?;
    let config_hash = config.config_hash()?;
    let provenance = opts
        .provenance_hash
        .clone()
        .unwrap_or_else(|| config_hash.clone());
    let mut log = StageLog::open(&out.join("experiment.log"), opts.echo)?;
    log.line(&format!("experiment {config_hash} starting"))?;

    let mut summary = RunSummary {
        out_dir: out.clone(),
        config_hash,
        provenance_hash: provenance.clone(),
        stages: BTreeMap::new(),
        reports: BTreeMap::new(),
    };

    // -- generate: one cohort per center -----------------------------------
    let mut cohorts: BTreeMap<&str, StageRef> = BTreeMap::new();
    for (role, profile) in [
        ("internal", &config.profiles.internal),
        ("external", &config.profiles.external),
    ] {
        let label = format!("cohort-{role}");
        let seed = derive_seed(config.master_seed, &format!("generate:{role}"));
        let key = serde_json::json!({ "profile": profile, "seed": seed });
        let stage = cache
            .ensure(&label, &key, opts.force, |dir| {
                let cohort = generate_cohort(profile, seed)?;
                save_cohort(dir, &cohort)?;
                Ok(())
            })
            .map_err(|e| e.in_stage(&label))?;
        log.stage(&label, &stage)?;
        summary.stages.insert(label, stage.hash.clone());
        cohorts.insert(role, stage);
    }
    if opts.through == Stage::Generate {
        return finish(config, summary, &mut log);
    }

    // -- preprocess: one packed dataset per center -------------------------
    let mut datasets: BTreeMap<&str, StageRef> = BTreeMap::new();
    for role in ["internal", "external"] {
        let cohort = &cohorts[role];
        let label = format!("dataset-{role}");
        let key = serde_json::json!({
            "cohort": cohort.hash,
            "input_mode": config.preprocess.input_mode,
            "target": config.preprocess.target,
        });
        let cohort_dir = cohort.dir.clone();
        let stage = cache
            .ensure(&label, &key, opts.force, |dir| {
                let records = load_manifest(&cohort_dir.join("manifest.json"))?;
                build_slice_dataset(
                    &cohort_dir,
                    &records,
                    config.preprocess.input_mode,
                    config.preprocess.target,
                    dir,
                )?;
                Ok(())
            })
            .map_err(|e| e.in_stage(&label))?;
        log.stage(&label, &stage)?;
        summary.stages.insert(label, stage.hash.clone());
        datasets.insert(role, stage);
    }
    if opts.through == Stage::Preprocess {
        return finish(config, summary, &mut log);
    }

    // -- split --------------------------------------------------------------
    let spec = config.split.to_spec(
        derive_seed(config.master_seed, "split"),
        config.center_pair(),
    );
    let split_key = serde_json::json!({
        "datasets": [datasets["internal"].hash, datasets["external"].hash],
        "spec": spec,
    });
    let split_stage = cache
        .ensure("split", &split_key, opts.force, |dir| {
            let internal = DatasetManifest::load(&datasets["internal"].dir.join("dataset.json"))?;
            let external = DatasetManifest::load(&datasets["external"].dir.join("dataset.json"))?;
            let manifest = regime_assemble(&internal, &external, &spec)?;
            manifest.save(&dir.join("split.json"))
        })
        .map_err(|e| e.in_stage("split"))?;
    log.stage("split", &split_stage)?;
    summary.stages.insert("split".into(), split_stage.hash.clone());
    copy_file(&split_stage.dir.join("split.json"), &out.join("split.json"))?;
    if opts.through == Stage::Split {
        return finish(config, summary, &mut log);
    }

    // -- train + score ------------------------------------------------------
    let train_cfg = config
        .train
        .to_train_config(derive_seed(config.master_seed, "train"));
    let init_seed = derive_seed(config.master_seed, "model-init");
    let train_key = serde_json::json!({
        "split": split_stage.hash,
        "datasets": [datasets["internal"].hash, datasets["external"].hash],
        "model": config.model,
        "train": train_cfg,
        "init_seed": init_seed,
    });
    let train_stage = cache
        .ensure("train", &train_key, opts.force, |dir| {
            let manifest = SplitManifest::load(&split_stage.dir.join("split.json"))?;
            let mut lookup =
                SampleLookup::open(&[&datasets["internal"].dir, &datasets["external"].dir])?;
            let train_set = lookup.slice_set(&manifest.sets.train)?;
            let val_set = lookup.slice_set(&manifest.sets.val)?;
            let mut model = build_model(&config.model, init_seed)?;
            let (checkpoint, epochs) = train(&mut model, &train_set, &val_set, &train_cfg)?;
            checkpoint.save(&dir.join("checkpoint.json"))?;
            write_training_log(&dir.join("training_log.csv"), &epochs)?;
            let mut best = checkpoint.restore()?;
            for (name, ids) in &manifest.sets.tests {
                let set = lookup.slice_set(ids)?;
                let rows = score_dataset(&mut best, &set, train_cfg.threshold)?;
                write_scores_csv(&dir.join(format!("scores_test_{name}.csv")), &rows)?;
            }
            Ok(())
        })
        .map_err(|e| e.in_stage("train"))?;
    log.stage("train", &train_stage)?;
    summary.stages.insert("train".into(), train_stage.hash.clone());

    // deliver model artifacts and provenance-stamped scores into the cell
    copy_file(
        &train_stage.dir.join("checkpoint.json"),
        &out.join("model").join("checkpoint.json"),
    )?;
    copy_file(
        &train_stage.dir.join("training_log.csv"),
        &out.join("model").join("training_log.csv"),
    )?;
    let split_manifest = SplitManifest::load(&out.join("split.json"))?;
    for name in split_manifest.sets.tests.keys() {
        let cached = train_stage.dir.join(format!("scores_test_{name}.csv"));
        let text = fs::read_to_string(&cached)
            .map_err(|e| Error::Format(format!("{}: {e}", cached.display())))?;
        let stamped = format!("# config_hash={provenance}\n{text}");
        let dest = out.join("scores").join(format!("test_{name}.csv"));
        fs::create_dir_all(dest.parent().expect("scores dir has a parent"))?;
        fs::write(&dest, stamped)?;
    }
    if opts.through == Stage::Train {
        return finish(config, summary, &mut log);
    }

    // -- evaluate: reports are re-derived from the scores artifacts ---------
    for name in split_manifest.sets.tests.keys() {
        let label = format!("evaluate:{name}");
        let report = evaluate_scores(
            &out.join("scores").join(format!("test_{name}.csv")),
            train_cfg.threshold,
            &provenance,
            &out.join("reports").join(name),
        )
        .map_err(|e| e.in_stage(&label))?;
        log.line(&format!("{label}: auroc {:.4}, auprc {:.4}", report.auroc, report.auprc))?;
        summary.reports.insert(name.clone(), report);
    }
    write_summary_tables(&out, &provenance, &summary.reports)?;
    finish(config, summary, &mut log)
}

/// Builds one test set's report from its scores CSV and writes the report
/// JSON plus the ROC/PR/sweep CSVs.
fn evaluate_scores(
    scores_path: &Path,
    threshold: f64,
    provenance: &str,
    report_dir: &Path,
) -> Result<EvalReport> {
    let rows = read_scores_csv(scores_path)?;
    let scored = crate::metrics::ScoredSet::new(rows, threshold)?;
    let options = EvalOptions {
        bin_width: 1.0,
        config_hash: provenance.to_string(),
    };
    let report = evaluate(&scored, &options)?;
    report.save(&report_dir.join("report.json"))?;
    write_curve_csv(&report_dir.join("roc.csv"), &report.roc_points)?;
    write_curve_csv(&report_dir.join("pr.csv"), &report.pr_points)?;
    write_sweep_csv(&report_dir.join("sweep.csv"), &report.sensitivity_sweep)?;
    Ok(report)
}

/// Writes `summary.txt` and `summary.csv`: AUROC/AUPRC per test set.
fn write_summary_tables(
    out: &Path,
    provenance: &str,
    reports: &BTreeMap<String, EvalReport>,
) -> Result<()> {
    let mut csv = format!("# config_hash={provenance}\n");
    csv.push_str("test_set,n_rows,n_positives,auroc,auprc\n");
    let mut text = format!("config {provenance}\n");
    text.push_str(&format!(
        "{:<12} {:>7} {:>10} {:>8} {:>8}\n",
        "test set", "slices", "positives", "AUROC", "AUPRC"
    ));
    for (name, r) in reports {
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            r.n_rows, r.n_positives, r.auroc, r.auprc
        ));
        text.push_str(&format!(
            "{name:<12} {:>7} {:>10} {:>8.4} {:>8.4}\n",
            r.n_rows, r.n_positives, r.auroc, r.auprc
        ));
    }
    fs::write(out.join("summary.csv"), csv)?;
    fs::write(out.join("summary.txt"), text)?;
    Ok(())
}

/// Writes the `experiment.json` provenance record and closes the log.
fn finish(
    config: &ExperimentConfig,
    summary: RunSummary,
    log: &mut StageLog,
) -> Result<RunSummary> {
    let record = serde_json::json!({
        "config_hash": summary.config_hash,
        "provenance_hash": summary.provenance_hash,
        "stages": summary.stages,
        "config": config,
    });
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    fs::write(summary.out_dir.join("experiment.json"), text)?;
    log.line("experiment finished")?;
    Ok(summary)
}

/// `fs::copy` with directory creation and a path-carrying error.
fn copy_file(from: &Path, to: &Path) -> Result<()> {
    if let Some(parent) = to.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::copy(from, to)
        .map_err(|e| Error::Format(format!("copy {} -> {}: {e}", from.display(), to.display())))?;
    Ok(())
}
