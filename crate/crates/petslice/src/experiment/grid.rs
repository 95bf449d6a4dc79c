//! The experiment grid: every configured (split kind, regime) cell run at
//! every master seed, sharing one stage cache, summarized in one table.
//!
//! Layout: `grid.json` (config echo and hash), `cache/` (shared stages),
//! `seed-<seed>/<cell>/` (one experiment directory per cell and seed), and
//! `summary.txt` / `summary.csv` over all reports present.

use super::run::{run_experiment, RunOptions, Stage};
use super::{
    default_train_fraction, default_val_fraction, hash_of_json, ExperimentConfig,
    PreprocessSettings, ProfilePair, SplitSettings, TrainSettings,
};
use crate::classifier::ModelConfig;
use crate::datasplit::{Regime, SplitKind};
use crate::metrics::EvalReport;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::PathBuf;

/// One grid cell: a named (split kind, regime) combination.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpec {
    pub name: String,
    pub split_kind: SplitKind,
    pub regime: Regime,
}

/// The full {slice, patient} × {CAW, CAG} grid, named `<kind>_<regime>`.
pub fn default_cells() -> Vec<CellSpec> {
    let mut cells = Vec::new();
    for kind in [SplitKind::Slice, SplitKind::Patient] {
        for regime in [Regime::Caw, Regime::Cag] {
            cells.push(CellSpec {
                name: format!("{}_{}", kind.tag(), regime.tag()),
                split_kind: kind,
                regime,
            });
        }
    }
    cells
}

/// A multi-seed grid: shared profiles, preprocessing, model, and training,
/// with the split kind and regime varying per cell and everything repeated
/// per master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub master_seeds: Vec<u64>,
    pub profiles: ProfilePair,
    #[serde(default)]
    pub preprocess: PreprocessSettings,
    #[serde(default = "default_cells")]
    pub cells: Vec<CellSpec>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction_of_train: f64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default, skip_serializing)]
    pub out_dir: Option<PathBuf>,
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.master_seeds.is_empty() {
            return Err(Error::Config("grid needs at least one master seed".into()));
        }
        if self.cells.is_empty() {
            return Err(Error::Config("grid needs at least one cell".into()));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            if cell.name.is_empty()
                || !cell
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::Config(format!(
                    "cell name '{}' must be non-empty and filesystem-safe",
                    cell.name
                )));
            }
            if self.cells[..i].iter().any(|c| c.name == cell.name) {
                return Err(Error::Config(format!("duplicate cell name '{}'", cell.name)));
            }
        }
        // every cell config must validate on its own
        for cell in &self.cells {
            self.cell_config(self.master_seeds[0], cell).validate()?;
        }
        Ok(())
    }

    /// 16-hex FNV-1a hash of the canonical JSON form (locations excluded).
    /// This is the hash every cell artifact embeds.
    pub fn config_hash(&self) -> Result<String> {
        Ok(hash_of_json(&serde_json::to_string(self)?))
    }

    /// The fully-resolved experiment config for one (seed, cell) pair.
    /// Locations are left unset; the runner fills them in.
    pub fn cell_config(&self, master_seed: u64, cell: &CellSpec) -> ExperimentConfig {
        ExperimentConfig {
            master_seed,
            profiles: self.profiles.clone(),
            preprocess: self.preprocess,
            split: SplitSettings {
                split_kind: cell.split_kind,
                regime: cell.regime,
                train_fraction: self.train_fraction,
                val_fraction_of_train: self.val_fraction_of_train,
            },
            model: self.model.clone(),
            train: self.train.clone(),
            out_dir: None,
            cache_dir: None,
        }
    }
}

/// Invocation parameters for [`run_grid`].
#[derive(Debug, Clone, Default)]
pub struct GridOptions {
    /// Run only the named cell (all seeds); summaries still cover whatever
    /// reports exist in the grid directory.
    pub cell: Option<String>,
    /// Rebuild every stage even when cached.
    pub force: bool,
    /// Echo stage progress to stdout.
    pub echo: bool,
}

/// One (cell, seed, test set) line of the grid summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub cell: String,
    pub master_seed: u64,
    pub test_set: String,
    pub n_rows: usize,
    pub n_positives: usize,
    pub auroc: f64,
    pub auprc: f64,
}

/// Seed-averaged AUROC/AUPRC for one (cell, test set).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanRow {
    pub cell: String,
    pub test_set: String,
    pub n_seeds: usize,
    pub auroc: f64,
    pub auprc: f64,
}

/// Everything a finished grid invocation knows.
#[derive(Debug)]
pub struct GridSummary {
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub rows: Vec<SummaryRow>,
    pub means: Vec<MeanRow>,
}

impl GridSummary {
    /// The seed-averaged table in the layout of the summary file: models as
    /// rows, one line per test set.
    pub fn to_text(&self) -> String {
        let mut text = format!("grid {}\n", self.config_hash);
        text.push_str(&format!(
            "{:<16} {:<10} {:>6} {:>8} {:>8}\n",
            "model", "test set", "seeds", "AUROC", "AUPRC"
        ));
        for m in &self.means {
            text.push_str(&format!(
                "{:<16} {:<10} {:>6} {:>8.4} {:>8.4}\n",
                m.cell, m.test_set, m.n_seeds, m.auroc, m.auprc
            ));
        }
        text.push_str("\nper seed:\n");
        text.push_str(&format!(
            "{:<16} {:>12} {:<10} {:>7} {:>10} {:>8} {:>8}\n",
            "model", "seed", "test set", "slices", "positives", "AUROC", "AUPRC"
        ));
        for r in &self.rows {
            text.push_str(&format!(
                "{:<16} {:>12} {:<10} {:>7} {:>10} {:>8.4} {:>8.4}\n",
                r.cell, r.master_seed, r.test_set, r.n_rows, r.n_positives, r.auroc, r.auprc
            ));
        }
        text
    }

    /// Long-format CSV over the per-seed rows.
    pub fn to_csv(&self) -> String {
        let mut csv = format!("# config_hash={}\n", self.config_hash);
        csv.push_str("cell,master_seed,test_set,n_rows,n_positives,auroc,auprc\n");
        for r in &self.rows {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.cell, r.master_seed, r.test_set, r.n_rows, r.n_positives, r.auroc, r.auprc
            ));
        }
        csv
    }
}

/// Runs the grid: every configured cell at every master seed (optionally
/// filtered to one cell), then writes `summary.txt` and `summary.csv` over
/// all reports present in the grid directory.
pub fn run_grid(config: &GridConfig, opts: &GridOptions) -> Result<GridSummary> {
    config.validate()?;
    let out = config
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("no output directory: set out_dir or pass --out".into()))?;
    fs::create_dir_all(&out)?;
    let grid_hash = config.config_hash()?;
    if let Some(name) = &opts.cell {
        if !config.cells.iter().any(|c| &c.name == name) {
            let known: Vec<&str> = config.cells.iter().map(|c| c.name.as_str()).collect();
            return Err(Error::Config(format!(
                "unknown grid cell '{name}'; configured cells: {known:?}"
            )));
        }
    }

    let record = serde_json::json!({ "config_hash": grid_hash, "config": config });
    let mut text = serde_json::to_string_pretty(&record)?;
    text.push('\n');
    fs::write(out.join("grid.json"), text)?;

    for &seed in &config.master_seeds {
        for cell in &config.cells {
            if opts.cell.as_ref().is_some_and(|name| name != &cell.name) {
                continue;
            }
            let mut cell_config = config.cell_config(seed, cell);
            cell_config.out_dir = Some(out.join(format!("seed-{seed}")).join(&cell.name));
            cell_config.cache_dir = Some(out.join("cache"));
            let run_opts = RunOptions {
                through: Stage::Evaluate,
                force: opts.force,
                echo: opts.echo,
                provenance_hash: Some(grid_hash.clone()),
            };
            if opts.echo {
                println!("== cell {} seed {seed} ==", cell.name);
            }
            run_experiment(&cell_config, &run_opts)
                .map_err(|e| e.in_stage(&format!("cell {} seed {seed}", cell.name)))?;
        }
    }

    let summary = summarize(config, &out, &grid_hash)?;
    fs::write(out.join("summary.csv"), summary.to_csv())?;
    fs::write(out.join("summary.txt"), summary.to_text())?;
    Ok(summary)
}

/// Collects every report present under the grid directory, in config order
/// (cells, then seeds, then test sets alphabetically), and averages over
/// seeds per (cell, test set).
fn summarize(config: &GridConfig, out: &std::path::Path, grid_hash: &str) -> Result<GridSummary> {
    let mut rows = Vec::new();
    for cell in &config.cells {
        for &seed in &config.master_seeds {
            let reports_dir = out
                .join(format!("seed-{seed}"))
                .join(&cell.name)
                .join("reports");
            if !reports_dir.is_dir() {
                continue;
            }
            let mut sets: Vec<String> = fs::read_dir(&reports_dir)?
                .filter_map(|e| {
                    let e = e.ok()?;
                    let name = e.file_name().into_string().ok()?;
                    e.path().join("report.json").is_file().then_some(name)
                })
                .collect();
            sets.sort();
            for set in sets {
                let report = EvalReport::load(&reports_dir.join(&set).join("report.json"))?;
                rows.push(SummaryRow {
                    cell: cell.name.clone(),
                    master_seed: seed,
                    test_set: set,
                    n_rows: report.n_rows,
                    n_positives: report.n_positives,
                    auroc: report.auroc,
                    auprc: report.auprc,
                });
            }
        }
    }

    let mut means = Vec::new();
    for cell in &config.cells {
        let mut sets: Vec<&str> = rows
            .iter()
            .filter(|r| r.cell == cell.name)
            .map(|r| r.test_set.as_str())
            .collect();
        sets.sort();
        sets.dedup();
        for set in sets {
            let group: Vec<&SummaryRow> = rows
                .iter()
                .filter(|r| r.cell == cell.name && r.test_set == set)
                .collect();
            let n = group.len() as f64;
            means.push(MeanRow {
                cell: cell.name.clone(),
                test_set: set.to_string(),
                n_seeds: group.len(),
                auroc: group.iter().map(|r| r.auroc).sum::<f64>() / n,
                auprc: group.iter().map(|r| r.auprc).sum::<f64>() / n,
            });
        }
    }

    Ok(GridSummary {
        out_dir: out.to_path_buf(),
        config_hash: grid_hash.to_string(),
        rows,
        means,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::super::tests::tiny_config;
    use super::*;

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("petslice_grid_{tag}_{}", std::process::id()));
        if dir.exists() {
            fs::remove_dir_all(&dir).unwrap();
        }
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    /// A grid wrapping the tiny experiment config: two cells, one seed.
    pub(crate) fn tiny_grid(seeds: Vec<u64>) -> GridConfig {
        let base = tiny_config(0);
        GridConfig {
            master_seeds: seeds,
            profiles: base.profiles,
            preprocess: base.preprocess,
            cells: vec![
                CellSpec {
                    name: "slice_caw".into(),
                    split_kind: SplitKind::Slice,
                    regime: Regime::Caw,
                },
                CellSpec {
                    name: "patient_cag".into(),
                    split_kind: SplitKind::Patient,
                    regime: Regime::Cag,
                },
            ],
            train_fraction: base.split.train_fraction,
            val_fraction_of_train: base.split.val_fraction_of_train,
            model: base.model,
            train: base.train,
            out_dir: None,
        }
    }

    #[test]
    fn default_cells_cover_the_two_by_two_grid() {
        let cells = default_cells();
        let names: Vec<&str> = cells.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["slice_caw", "slice_cag", "patient_caw", "patient_cag"]);
    }

    #[test]
    fn grid_validation_rejects_empty_and_duplicate_cells() {
        let mut grid = tiny_grid(vec![1]);
        grid.validate().unwrap();
        grid.cells[1].name = "slice_caw".into();
        assert!(grid.validate().is_err(), "duplicate names");
        let grid = tiny_grid(vec![]);
        assert!(grid.validate().is_err(), "no seeds");
        let mut grid = tiny_grid(vec![1]);
        grid.cells[0].name = "has space".into();
        assert!(grid.validate().is_err(), "unsafe cell name");
    }

    #[test]
    fn grid_hash_ignores_location_and_tracks_cells() {
        let a = tiny_grid(vec![1, 2]);
        let mut b = a.clone();
        b.out_dir = Some(PathBuf::from("/elsewhere"));
        assert_eq!(a.config_hash().unwrap(), b.config_hash().unwrap());
        let mut c = a.clone();
        c.cells.pop();
        assert_ne!(a.config_hash().unwrap(), c.config_hash().unwrap());
    }

    #[test]
    fn unknown_cell_filter_is_rejected_up_front() {
        let root = tempdir("badcell");
        let mut grid = tiny_grid(vec![1]);
        grid.out_dir = Some(root.join("grid"));
        let err = run_grid(
            &grid,
            &GridOptions {
                cell: Some("nope".into()),
                ..GridOptions::default()
            },
        )
        .unwrap_err();
        assert!(err.to_string().contains("unknown grid cell"), "{err}");
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn tiny_grid_runs_cells_with_a_shared_cache_and_summarizes() {
        let root = tempdir("run");
        let mut grid = tiny_grid(vec![11]);
        grid.out_dir = Some(root.join("grid"));
        let summary = run_grid(&grid, &GridOptions::default()).unwrap();

        // two cells x two test sets, in cell-config order
        assert_eq!(summary.rows.len(), 4);
        assert_eq!(summary.means.len(), 4);
        let cells: Vec<&str> = summary.rows.iter().map(|r| r.cell.as_str()).collect();
        assert_eq!(cells, ["slice_caw", "slice_caw", "patient_cag", "patient_cag"]);
        for row in &summary.rows {
            assert!(row.n_rows > 0);
            assert!((0.0..=1.0).contains(&row.auroc), "{row:?}");
        }
        for (mean, row) in summary.means.iter().zip(&summary.rows) {
            assert_eq!((&mean.cell, &mean.test_set), (&row.cell, &row.test_set));
            assert_eq!(mean.n_seeds, 1);
            assert_eq!(mean.auroc, row.auroc, "one seed: mean == value");
        }

        // cells share cohort and dataset stages: 2 cohorts + 2 datasets
        // + 2 splits + 2 trainings, not 4 + 4 + 2 + 2
        let cache = root.join("grid").join("cache");
        let mut stages: Vec<String> = fs::read_dir(&cache)
            .unwrap()
            .map(|e| {
                let name = e.unwrap().file_name().into_string().unwrap();
                name.split_once('-').unwrap().0.to_string()
            })
            .collect();
        stages.sort();
        let counts: Vec<usize> = ["cohort", "dataset", "split", "train"]
            .iter()
            .map(|label| stages.iter().filter(|s| s == label).count())
            .collect();
        assert_eq!(stages.len(), 8, "{stages:?}");
        assert_eq!(counts, [2, 2, 2, 2], "{stages:?}");

        // every cell report is stamped with the grid hash
        let report = EvalReport::load(
            &root
                .join("grid")
                .join("seed-11")
                .join("patient_cag")
                .join("reports")
                .join("internal")
                .join("report.json"),
        )
        .unwrap();
        assert_eq!(report.config_hash, summary.config_hash);

        // summary files exist and the CSV leads with the grid hash
        let csv = fs::read_to_string(root.join("grid").join("summary.csv")).unwrap();
        assert!(csv.starts_with(&format!("# config_hash={}\n", summary.config_hash)));
        assert_eq!(csv.lines().count(), 1 + 1 + 4);
        assert!(root.join("grid").join("summary.txt").is_file());
        assert!(root.join("grid").join("grid.json").is_file());

        // filtering to one cell re-runs from cache and still summarizes all
        let filtered = run_grid(
            &grid,
            &GridOptions {
                cell: Some("patient_cag".into()),
                ..GridOptions::default()
            },
        )
        .unwrap();
        assert_eq!(filtered.rows.len(), 4);
        fs::remove_dir_all(&root).unwrap();
    }

    #[test]
    fn cell_config_inherits_shared_settings_and_varies_the_split() {
        let grid = tiny_grid(vec![5]);
        let slice = grid.cell_config(5, &grid.cells[0]);
        let patient = grid.cell_config(5, &grid.cells[1]);
        assert_eq!(slice.master_seed, 5);
        assert_eq!(slice.split.split_kind, SplitKind::Slice);
        assert_eq!(slice.split.regime, Regime::Caw);
        assert_eq!(patient.split.split_kind, SplitKind::Patient);
        assert_eq!(patient.split.regime, Regime::Cag);
        assert_eq!(slice.model, patient.model);
        assert_eq!(slice.profiles, patient.profiles);
        slice.validate().unwrap();
        patient.validate().unwrap();
    }
}
