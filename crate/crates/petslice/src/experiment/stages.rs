//! Content-addressed stage cache and packed-dataset access for the runner.
//!
//! Each expensive stage writes into `<cache>/<label>-<hash>`, where the hash
//! covers the stage label and a canonical JSON key of everything the stage
//! depends on (its config subtree plus the hashes of upstream stages). A
//! stage directory is valid exactly when it contains `stage.json`, which is
//! written last inside a work directory that is renamed into place — so a
//! crash can never leave a half-built directory that looks finished.
//! Concurrent runs sharing a cache serialize per stage through a lock file.

use super::hash_of_json;
use crate::classifier::{SliceSet, TrainSample};
use crate::datasplit::SampleId;
use crate::preprocess::{DatasetManifest, PackedDataset};
use crate::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

const LOCK_POLL: Duration = Duration::from_millis(200);
const LOCK_TIMEOUT: Duration = Duration::from_secs(600);

/// A completed stage: its hash, where it lives, and whether it was reused.
#[derive(Debug, Clone)]
pub(crate) struct StageRef {
    pub hash: String,
    pub dir: PathBuf,
    pub cache_hit: bool,
}

/// The stage cache root.
pub(crate) struct StageCache {
    root: PathBuf,
}

impl StageCache {
    pub fn new(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(StageCache {
            root: root.to_path_buf(),
        })
    }

    /// Stable 16-hex hash of a stage label plus the canonical JSON of its key.
    pub fn stage_hash(label: &str, key: &impl Serialize) -> Result<String> {
        let mut canonical = String::from(label);
        canonical.push('\n');
        canonical.push_str(&serde_json::to_string(key)?);
        Ok(hash_of_json(&canonical))
    }

    /// Returns the stage directory, building it first if needed.
    ///
    /// `build` fills a work directory; on success it is committed by an
    /// atomic rename, on failure it is kept as `<label>-<hash>.incomplete`
    /// for inspection. With `force` the stage is rebuilt even if cached.
    pub fn ensure(
        &self,
        label: &str,
        key: &impl Serialize,
        force: bool,
        build: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<StageRef> {
        let hash = Self::stage_hash(label, key)?;
        let dir = self.root.join(format!("{label}-{hash}"));
        let done = |cache_hit| StageRef {
            hash: hash.clone(),
            dir: dir.clone(),
            cache_hit,
        };
        if !force && dir.join("stage.json").is_file() {
            return Ok(done(true));
        }

        let _lock = StageLock::acquire(&self.root.join(format!("{label}-{hash}.lock")))?;
        // another process may have built the stage while we waited
        if !force && dir.join("stage.json").is_file() {
            return Ok(done(true));
        }

        let wip = self
            .root
            .join(format!("{label}-{hash}.wip-{}", std::process::id()));
        if wip.exists() {
            fs::remove_dir_all(&wip)?;
        }
        fs::create_dir_all(&wip)?;
        match build(&wip) {
            Ok(()) => {
                let marker = serde_json::json!({
                    "stage": label,
                    "config_hash": hash,
                    "key": serde_json::to_value(key)?,
                });
                let mut text = serde_json::to_string_pretty(&marker)?;
                text.push('\n');
                fs::write(wip.join("stage.json"), text)?;
                if dir.exists() {
                    fs::remove_dir_all(&dir)?;
                }
                fs::rename(&wip, &dir)?;
                Ok(done(false))
            }
            Err(e) => {
                let incomplete = self.root.join(format!("{label}-{hash}.incomplete"));
                let _ = fs::remove_dir_all(&incomplete);
                let _ = fs::rename(&wip, &incomplete);
                Err(e)
            }
        }
    }
}

/// Exclusive per-stage lock: a file created with `create_new`, removed on
/// drop. Waiting runs poll until the holder finishes or the timeout passes.
struct StageLock {
    path: PathBuf,
}

impl StageLock {
    fn acquire(path: &Path) -> Result<StageLock> {
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(_) => {
                    return Ok(StageLock {
                        path: path.to_path_buf(),
                    })
                }
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    if start.elapsed() > LOCK_TIMEOUT {
                        return Err(Error::invalid(format!(
                            "gave up waiting for stage lock {} after {}s; if no other \
                             run is active, remove the lock file and retry",
                            path.display(),
                            LOCK_TIMEOUT.as_secs()
                        )));
                    }
                    std::thread::sleep(LOCK_POLL);
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

impl Drop for StageLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Random access over the packed center datasets, addressed by [`SampleId`].
/// Patient ids embed the center name, so they are unique across datasets;
/// collisions are rejected at construction.
pub(crate) struct SampleLookup {
    sources: Vec<(PackedDataset, DatasetManifest)>,
    index: BTreeMap<SampleId, (usize, usize)>,
    height: usize,
    width: usize,
}

impl SampleLookup {
    /// Opens every dataset directory (each holding `dataset.json` plus the
    /// packed tensor file) and indexes their samples.
    pub fn open(dirs: &[&Path]) -> Result<Self> {
        let mut sources = Vec::with_capacity(dirs.len());
        let mut index = BTreeMap::new();
        let mut shape = None;
        for (src, dir) in dirs.iter().enumerate() {
            let manifest = DatasetManifest::load(&dir.join("dataset.json"))?;
            let dims = (manifest.channels, manifest.height, manifest.width);
            match shape {
                None => shape = Some(dims),
                Some(expected) if expected != dims => {
                    return Err(Error::shape(format!(
                        "dataset {} has sample shape {dims:?}, expected {expected:?}",
                        dir.display()
                    )))
                }
                Some(_) => {}
            }
            for (row, sample) in manifest.samples.iter().enumerate() {
                let id = SampleId(sample.patient_id.clone(), sample.slice_index);
                if index.insert(id, (src, row)).is_some() {
                    return Err(Error::invalid(format!(
                        "sample ({}, {}) appears in more than one dataset",
                        sample.patient_id, sample.slice_index
                    )));
                }
            }
            let packed = PackedDataset::open(dir, &manifest)?;
            sources.push((packed, manifest));
        }
        let (_, height, width) = shape.ok_or_else(|| Error::invalid("no datasets to open"))?;
        Ok(SampleLookup {
            sources,
            index,
            height,
            width,
        })
    }

    /// Materializes the listed samples, in list order, as a [`SliceSet`].
    pub fn slice_set(&mut self, ids: &[SampleId]) -> Result<SliceSet> {
        let mut samples = Vec::with_capacity(ids.len());
        for id in ids {
            let &(src, row) = self.index.get(id).ok_or_else(|| {
                Error::invalid(format!(
                    "sample ({}, {}) is not in any dataset",
                    id.patient_id(),
                    id.slice_index()
                ))
            })?;
            let (packed, manifest) = &mut self.sources[src];
            let record = &manifest.samples[row];
            samples.push(TrainSample {
                sample_id: id.clone(),
                center_id: record.center_id.clone(),
                label: record.label,
                tumor_suvmax: record.tumor_suvmax,
                input: packed.input(record)?,
            });
        }
        SliceSet::new(samples, self.height, self.width)
    }
}
