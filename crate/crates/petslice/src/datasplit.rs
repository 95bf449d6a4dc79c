//! Slice-level vs. patient-level splits, the CAW/CAG training regimes, and
//! leakage auditing.
//!
//! A split is a pure function of a dataset manifest and a [`SplitSpec`]: the
//! candidate units (slices or patient IDs) are sorted, shuffled with a seeded
//! generator, and partitioned by the configured fractions, so the same inputs
//! always yield bit-identical manifests. Slice-level splits scatter a
//! patient's slices across train and test (the leakage the audit is built to
//! expose); patient-level splits keep every slice with its patient.
//!
//! Regimes differ in how the two centers feed the pools: center-aware-local
//! (CAW) trains on the internal center only and keeps the external center
//! entirely for testing, while center-aware-global (CAG) trains on 80% of
//! each center and tests on the held-out 20% of each.

use crate::preprocess::DatasetManifest;
use crate::seed::{derive_seed, rng_from};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

/// Granularity of the random partition: independent slices, or whole
/// patients with all their slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Slice,
    Patient,
}

impl SplitKind {
    pub fn tag(self) -> &'static str {
        match self {
            SplitKind::Slice => "slice",
            SplitKind::Patient => "patient",
        }
    }
}

/// Training regime: CAW trains within the internal center and treats the
/// external center as a pure test cohort; CAG pools 80% of both centers for
/// training and tests on the 20% held out from each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Regime {
    Caw,
    Cag,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::Caw => "caw",
            Regime::Cag => "cag",
        }
    }
}

/// The two cohorts a regime draws from. `internal` is the training center;
/// `external` is the other center.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterPair {
    pub internal: String,
    pub external: String,
}

/// Everything that determines a split. Two runs with equal specs over equal
/// manifests produce identical [`SplitManifest`]s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub split_kind: SplitKind,
    pub regime: Regime,
    /// Fraction of units (slices or patients) assigned to the train pool.
    pub train_fraction: f64,
    /// Fraction of the train pool later carved out as validation.
    pub val_fraction_of_train: f64,
    pub seed: u64,
    pub centers: CenterPair,
}

impl SplitSpec {
    /// The paper-standard 80:20 split with an 80:20 train/val sub-split.
    pub fn new(
        split_kind: SplitKind,
        regime: Regime,
        seed: u64,
        internal: &str,
        external: &str,
    ) -> Self {
        SplitSpec {
            split_kind,
            regime,
            train_fraction: 0.8,
            val_fraction_of_train: 0.2,
            seed,
            centers: CenterPair {
                internal: internal.to_string(),
                external: external.to_string(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("val_fraction_of_train", self.val_fraction_of_train),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::invalid(format!(
                    "{name} must lie strictly between 0 and 1, got {f}"
                )));
            }
        }
        if self.centers.internal == self.centers.external {
            return Err(Error::invalid(format!(
                "internal and external centers must differ, both are '{}'",
                self.centers.internal
            )));
        }
        Ok(())
    }
}

/// Reference to one dataset sample, serialized as a `[patient_id,
/// slice_index]` pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SampleId(pub String, pub usize);

impl SampleId {
    pub fn patient_id(&self) -> &str {
        &self.0
    }

    pub fn slice_index(&self) -> usize {
        self.1
    }
}

/// Size and patient membership of one split set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSummary {
    pub slices: usize,
    pub patients: Vec<String>,
}

fn summarize(ids: &[SampleId]) -> SetSummary {
    let patients: BTreeSet<&str> = ids.iter().map(|id| id.patient_id()).collect();
    SetSummary {
        slices: ids.len(),
        patients: patients.into_iter().map(String::from).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSets {
    pub train: Vec<SampleId>,
    pub val: Vec<SampleId>,
    pub tests: BTreeMap<String, Vec<SampleId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: SetSummary,
    pub val: SetSummary,
    pub tests: BTreeMap<String, SetSummary>,
}

/// A complete, validated partition: the sample sets plus per-set bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub spec: SplitSpec,
    pub sets: SplitSets,
    pub summary: SplitSummary,
}

impl SplitManifest {
    fn assemble(
        spec: &SplitSpec,
        train: Vec<SampleId>,
        val: Vec<SampleId>,
        tests: BTreeMap<String, Vec<SampleId>>,
    ) -> Result<Self> {
        let manifest = SplitManifest {
            summary: SplitSummary {
                train: summarize(&train),
                val: summarize(&val),
                tests: tests.iter().map(|(k, v)| (k.clone(), summarize(v))).collect(),
            },
            sets: SplitSets { train, val, tests },
            spec: spec.clone(),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Named sets in a fixed order: train, val, then tests alphabetically.
    pub fn named_sets(&self) -> Vec<(String, &[SampleId])> {
        let mut out: Vec<(String, &[SampleId])> = vec![
            ("train".to_string(), self.sets.train.as_slice()),
            ("val".to_string(), self.sets.val.as_slice()),
        ];
        for (name, ids) in &self.sets.tests {
            out.push((format!("test:{name}"), ids.as_slice()));
        }
        out
    }

    /// Total number of samples across all sets.
    pub fn total_slices(&self) -> usize {
        self.named_sets().iter().map(|(_, ids)| ids.len()).sum()
    }

    /// Checks the structural invariants: sets pairwise disjoint at the sample
    /// level and summary counts/patient lists consistent with the sets.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<&SampleId> = HashSet::new();
        for (name, ids) in self.named_sets() {
            for id in ids {
                if !seen.insert(id) {
                    return Err(Error::invalid(format!(
                        "sample ({}, {}) appears in more than one set (found again in {name})",
                        id.patient_id(),
                        id.slice_index()
                    )));
                }
            }
        }
        let check = |name: &str, ids: &[SampleId], summary: &SetSummary| {
            if summary.slices != ids.len() || *summary != summarize(ids) {
                return Err(Error::invalid(format!(
                    "summary for {name} disagrees with its sample list"
                )));
            }
            Ok(())
        };
        check("train", &self.sets.train, &self.summary.train)?;
        check("val", &self.sets.val, &self.summary.val)?;
        for (name, ids) in &self.sets.tests {
            let summary = self
                .summary
                .tests
                .get(name)
                .ok_or_else(|| Error::invalid(format!("summary missing test set {name}")))?;
            check(name, ids, summary)?;
        }
        if self.summary.tests.len() != self.sets.tests.len() {
            return Err(Error::invalid("summary lists a test set with no samples"));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let manifest: SplitManifest = serde_json::from_slice(&bytes)?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Patient overlap between the training side (train ∪ val) and the test
/// sets: the offending patient IDs and how many test slices they contribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub patient_overlap: BTreeSet<String>,
    pub overlap_slice_count: usize,
}

fn items(ds: &DatasetManifest) -> Vec<(SampleId, String)> {
    let mut out: Vec<(SampleId, String)> = ds
        .samples
        .iter()
        .map(|s| {
            (
                SampleId(s.patient_id.clone(), s.slice_index),
                s.center_id.clone(),
            )
        })
        .collect();
    out.sort();
    out
}

fn center_label(ds: &DatasetManifest) -> String {
    ds.centers.keys().cloned().collect::<Vec<_>>().join("+")
}

/// Partition count for `n` units at `fraction`, clamped so both sides are
/// non-empty; `n < 2` cannot satisfy that.
fn take_count(n: usize, fraction: f64, what: &str) -> Result<usize> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "cannot split {n} {what} into non-empty parts"
        )));
    }
    Ok(((n as f64 * fraction).round() as usize).clamp(1, n - 1))
}

fn shuffled<T: Ord>(mut units: Vec<T>, seed: u64, label: &str) -> Vec<T> {
    units.sort();
    units.shuffle(&mut rng_from(derive_seed(seed, label)));
    units
}

/// Core slice-granularity partition of one dataset into (train-pool, test).
fn split_slices(ds: &DatasetManifest, spec: &SplitSpec) -> Result<(Vec<SampleId>, Vec<SampleId>)> {
    if ds.samples.is_empty() {
        return Err(Error::invalid("dataset contains no slices"));
    }
    let ids: Vec<SampleId> = items(ds).into_iter().map(|(id, _)| id).collect();
    let label = format!("slice-split:{}", center_label(ds));
    let mut ids = shuffled(ids, spec.seed, &label);
    let n_train = take_count(ids.len(), spec.train_fraction, "slices")?;
    let test = ids.split_off(n_train);
    Ok((ids, test))
}

/// Core patient-granularity partition of one dataset into (train-pool,
/// test). Under CAG the 80:20 draw happens within each center so both test
/// sets keep their advertised share; under CAW the dataset's patients are
/// pooled.
fn split_patients(
    ds: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<(Vec<SampleId>, Vec<SampleId>)> {
    if ds.samples.is_empty() {
        return Err(Error::invalid("dataset contains no slices"));
    }
    let mut by_patient: BTreeMap<String, (String, Vec<SampleId>)> = BTreeMap::new();
    for (id, center) in items(ds) {
        by_patient
            .entry(id.patient_id().to_string())
            .or_insert_with(|| (center, Vec::new()))
            .1
            .push(id);
    }
    let mut strata: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (patient, (center, _)) in &by_patient {
        let stratum = match spec.regime {
            Regime::Cag => center.clone(),
            Regime::Caw => center_label(ds),
        };
        strata.entry(stratum).or_default().push(patient.clone());
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (stratum, patients) in strata {
        let n = patients.len();
        if n < 2 {
            return Err(Error::invalid(format!(
                "center group '{stratum}' has {n} patient(s); at least 2 are needed for a patient-level split"
            )));
        }
        let label = format!("patient-split:{stratum}");
        let mut patients = shuffled(patients, spec.seed, &label);
        let n_train = take_count(n, spec.train_fraction, "patients")?;
        let test_patients = patients.split_off(n_train);
        for p in patients {
            train.extend(by_patient[&p].1.iter().cloned());
        }
        for p in test_patients {
            test.extend(by_patient[&p].1.iter().cloned());
        }
    }
    Ok((train, test))
}

fn split_pool(ds: &DatasetManifest, spec: &SplitSpec) -> Result<(Vec<SampleId>, Vec<SampleId>)> {
    match spec.split_kind {
        SplitKind::Slice => split_slices(ds, spec),
        SplitKind::Patient => split_patients(ds, spec),
    }
}

fn finish(
    spec: &SplitSpec,
    pool: Vec<SampleId>,
    tests: BTreeMap<String, Vec<SampleId>>,
) -> Result<SplitManifest> {
    let (mut train, mut val) = train_val_split(&pool, spec)?;
    train.sort();
    val.sort();
    let tests = tests
        .into_iter()
        .map(|(name, mut ids)| {
            ids.sort();
            (name, ids)
        })
        .collect();
    SplitManifest::assemble(spec, train, val, tests)
}

/// Uniform random 80:20 partition of individual slices, ignoring patient
/// membership entirely — the leakage-prone protocol.
pub fn slice_level_split(ds: &DatasetManifest, spec: &SplitSpec) -> Result<SplitManifest> {
    spec.validate()?;
    if spec.split_kind != SplitKind::Slice {
        return Err(Error::invalid(format!(
            "slice_level_split requires split_kind=slice, spec says {}",
            spec.split_kind.tag()
        )));
    }
    let (pool, test) = split_slices(ds, spec)?;
    finish(spec, pool, BTreeMap::from([("test".to_string(), test)]))
}

/// 80:20 partition over patient IDs (within each center under CAG); every
/// slice follows its patient, so train and test never share a patient.
pub fn patient_level_split(ds: &DatasetManifest, spec: &SplitSpec) -> Result<SplitManifest> {
    spec.validate()?;
    if spec.split_kind != SplitKind::Patient {
        return Err(Error::invalid(format!(
            "patient_level_split requires split_kind=patient, spec says {}",
            spec.split_kind.tag()
        )));
    }
    let (pool, test) = split_patients(ds, spec)?;
    finish(spec, pool, BTreeMap::from([("test".to_string(), test)]))
}

fn expect_single_center(ds: &DatasetManifest, expected: &str, role: &str) -> Result<()> {
    let found: Vec<&String> = ds.centers.keys().collect();
    if found.len() != 1 || found[0] != expected {
        return Err(Error::invalid(format!(
            "{role} dataset holds centers {found:?}, spec expects only '{expected}'"
        )));
    }
    Ok(())
}

/// Builds the full regime manifest from the two center datasets.
///
/// CAW: train pool = 80% of the internal center; tests = the held-out 20% of
/// the internal center plus 100% of the external center. CAG: train pool =
/// 80% of each center combined; tests = the held-out 20% of each center.
/// Either way the train pool is then carved into train/val.
pub fn regime_assemble(
    internal: &DatasetManifest,
    external: &DatasetManifest,
    spec: &SplitSpec,
) -> Result<SplitManifest> {
    spec.validate()?;
    expect_single_center(internal, &spec.centers.internal, "internal")?;
    expect_single_center(external, &spec.centers.external, "external")?;
    let same_shape = internal.input_mode == external.input_mode
        && (internal.channels, internal.height, internal.width)
            == (external.channels, external.height, external.width);
    if !same_shape {
        return Err(Error::invalid(
            "internal and external datasets have different input shapes or modes",
        ));
    }

    let (pool, tests) = match spec.regime {
        Regime::Caw => {
            let (pool, internal_test) = split_pool(internal, spec)?;
            let external_test: Vec<SampleId> =
                items(external).into_iter().map(|(id, _)| id).collect();
            (
                pool,
                BTreeMap::from([
                    ("internal".to_string(), internal_test),
                    ("external".to_string(), external_test),
                ]),
            )
        }
        Regime::Cag => {
            let (pool_i, test_i) = split_pool(internal, spec)?;
            let (pool_e, test_e) = split_pool(external, spec)?;
            let mut pool = pool_i;
            pool.extend(pool_e);
            (
                pool,
                BTreeMap::from([
                    ("internal".to_string(), test_i),
                    ("external".to_string(), test_e),
                ]),
            )
        }
    };
    let manifest = finish(spec, pool, tests)?;
    let expected = internal.samples.len() + external.samples.len();
    if manifest.total_slices() != expected {
        return Err(Error::invalid(format!(
            "regime sets hold {} slices, datasets hold {expected}",
            manifest.total_slices()
        )));
    }
    Ok(manifest)
}

/// Carves validation samples out of a train pool at the parent split's
/// granularity: slice-level parents split by slice, patient-level parents by
/// patient (so validation never shares a patient with training).
pub fn train_val_split(
    pool: &[SampleId],
    spec: &SplitSpec,
) -> Result<(Vec<SampleId>, Vec<SampleId>)> {
    spec.validate()?;
    if pool.is_empty() {
        return Err(Error::invalid("train pool is empty"));
    }
    let train_share = 1.0 - spec.val_fraction_of_train;
    match spec.split_kind {
        SplitKind::Slice => {
            let mut ids = shuffled(pool.to_vec(), spec.seed, "val-split");
            let n_train = take_count(ids.len(), train_share, "pool slices")?;
            let val = ids.split_off(n_train);
            Ok((ids, val))
        }
        SplitKind::Patient => {
            let mut by_patient: BTreeMap<String, Vec<SampleId>> = BTreeMap::new();
            for id in pool {
                by_patient
                    .entry(id.patient_id().to_string())
                    .or_default()
                    .push(id.clone());
            }
            let patients: Vec<String> = by_patient.keys().cloned().collect();
            let mut patients = shuffled(patients, spec.seed, "val-split");
            let n_train = take_count(patients.len(), train_share, "pool patients")?;
            let val_patients = patients.split_off(n_train);
            let collect = |names: &[String]| {
                names
                    .iter()
                    .flat_map(|p| by_patient[p].iter().cloned())
                    .collect::<Vec<_>>()
            };
            Ok((collect(&patients), collect(&val_patients)))
        }
    }
}

/// Reports the patients shared between the training side (train ∪ val) and
/// any test set, along with the number of test slices those patients
/// contribute. Patient-level splits always audit clean by construction.
pub fn leakage_audit(manifest: &SplitManifest) -> LeakageReport {
    let trainval: BTreeSet<&str> = manifest
        .sets
        .train
        .iter()
        .chain(&manifest.sets.val)
        .map(|id| id.patient_id())
        .collect();
    let mut patient_overlap = BTreeSet::new();
    let mut overlap_slice_count = 0;
    for ids in manifest.sets.tests.values() {
        for id in ids {
            if trainval.contains(id.patient_id()) {
                patient_overlap.insert(id.patient_id().to_string());
                overlap_slice_count += 1;
            }
        }
    }
    LeakageReport {
        patient_overlap,
        overlap_slice_count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{CenterCount, InputMode, PatientRange, SampleRecord};

    /// Fabricates a dataset manifest: `(center, n_patients, slices_each)`
    /// triples, slice 0 of every patient positive.
    fn fake_dataset(centers: &[(&str, usize, usize)]) -> DatasetManifest {
        let mut samples = Vec::new();
        let mut patients = Vec::new();
        let mut center_counts = BTreeMap::new();
        for (center, n_patients, n_slices) in centers {
            for p in 0..*n_patients {
                let pid = format!("{center}_p{p:03}");
                patients.push(PatientRange {
                    patient_id: pid.clone(),
                    center_id: center.to_string(),
                    first_sample: samples.len(),
                    n_slices: *n_slices,
                });
                for k in 0..*n_slices {
                    let label = u8::from(k == 0);
                    samples.push(SampleRecord {
                        patient_id: pid.clone(),
                        center_id: center.to_string(),
                        slice_index: k,
                        label,
                        tumor_suvmax: (label == 1).then_some(5.0),
                        offset: 16 + (samples.len() * 4) as u64,
                    });
                }
            }
            center_counts.insert(
                center.to_string(),
                CenterCount {
                    slices: n_patients * n_slices,
                    positives: *n_patients,
                },
            );
        }
        DatasetManifest {
            input_mode: InputMode::Ppp,
            channels: 3,
            height: 8,
            width: 8,
            data_file: "samples.bin".to_string(),
            samples,
            patients,
            centers: center_counts,
        }
    }

    fn spec(kind: SplitKind, regime: Regime, seed: u64) -> SplitSpec {
        SplitSpec::new(kind, regime, seed, "bccv", "smhs")
    }

    #[test]
    fn hundred_slices_split_80_20() {
        let ds = fake_dataset(&[("bccv", 10, 10)]);
        let m = slice_level_split(&ds, &spec(SplitKind::Slice, Regime::Caw, 1)).unwrap();
        let pool = m.sets.train.len() + m.sets.val.len();
        assert_eq!(pool, 80);
        assert_eq!(m.sets.tests["test"].len(), 20);
        // the pool itself is 80:20 train/val
        assert_eq!(m.sets.train.len(), 64);
        assert_eq!(m.sets.val.len(), 16);
        assert_eq!(m.total_slices(), 100);
    }

    #[test]
    fn five_patients_give_four_to_the_pool_and_one_to_test() {
        let ds = fake_dataset(&[("bccv", 5, 12)]);
        let m = patient_level_split(&ds, &spec(SplitKind::Patient, Regime::Caw, 3)).unwrap();
        let pool_patients: BTreeSet<&str> = m
            .sets
            .train
            .iter()
            .chain(&m.sets.val)
            .map(|id| id.patient_id())
            .collect();
        assert_eq!(pool_patients.len(), 4);
        assert_eq!(m.summary.tests["test"].patients.len(), 1);
        assert_eq!(m.sets.tests["test"].len(), 12);
        assert_eq!(m.total_slices(), 60);
    }

    #[test]
    fn slice_split_leaks_patients_and_audit_reports_them() {
        let ds = fake_dataset(&[("bccv", 4, 16)]);
        let m = slice_level_split(&ds, &spec(SplitKind::Slice, Regime::Caw, 5)).unwrap();
        let report = leakage_audit(&m);
        assert!(
            !report.patient_overlap.is_empty(),
            "4 patients x 16 slices virtually always share a patient across sets"
        );
        assert!(report.overlap_slice_count > 0);
        // every reported patient really does appear on both sides
        let trainval: BTreeSet<&str> = m
            .sets
            .train
            .iter()
            .chain(&m.sets.val)
            .map(|id| id.patient_id())
            .collect();
        let test: BTreeSet<&str> = m.sets.tests["test"].iter().map(|id| id.patient_id()).collect();
        for p in &report.patient_overlap {
            assert!(trainval.contains(p.as_str()) && test.contains(p.as_str()));
        }
    }

    #[test]
    fn patient_split_never_leaks() {
        for seed in 0..20 {
            let ds = fake_dataset(&[("bccv", 9, 8)]);
            let m = patient_level_split(&ds, &spec(SplitKind::Patient, Regime::Caw, seed)).unwrap();
            let report = leakage_audit(&m);
            assert!(report.patient_overlap.is_empty());
            assert_eq!(report.overlap_slice_count, 0);
            // val never shares a patient with train either
            let train: BTreeSet<&str> = m.sets.train.iter().map(|id| id.patient_id()).collect();
            assert!(m.sets.val.iter().all(|id| !train.contains(id.patient_id())));
        }
    }

    #[test]
    fn single_patient_slice_split_overlap_is_that_patient() {
        let ds = fake_dataset(&[("bccv", 1, 30)]);
        let m = slice_level_split(&ds, &spec(SplitKind::Slice, Regime::Caw, 9)).unwrap();
        let report = leakage_audit(&m);
        assert_eq!(
            report.patient_overlap,
            BTreeSet::from(["bccv_p000".to_string()])
        );
        assert_eq!(report.overlap_slice_count, m.sets.tests["test"].len());
    }

    #[test]
    fn same_seed_is_bit_identical_and_different_seed_is_not() {
        let ds = fake_dataset(&[("bccv", 6, 10)]);
        for kind in [SplitKind::Slice, SplitKind::Patient] {
            let split = |s: &SplitSpec| match kind {
                SplitKind::Slice => slice_level_split(&ds, s).unwrap(),
                SplitKind::Patient => patient_level_split(&ds, s).unwrap(),
            };
            let a = split(&spec(kind, Regime::Caw, 11));
            let b = split(&spec(kind, Regime::Caw, 11));
            let c = split(&spec(kind, Regime::Caw, 12));
            assert_eq!(a, b);
            assert_eq!(
                serde_json::to_vec(&a).unwrap(),
                serde_json::to_vec(&b).unwrap()
            );
            assert_ne!(a.sets, c.sets);
        }
    }

    #[test]
    fn caw_keeps_the_external_center_whole_and_out_of_training() {
        let internal = fake_dataset(&[("bccv", 10, 12)]);
        let external = fake_dataset(&[("smhs", 8, 12)]);
        let m =
            regime_assemble(&internal, &external, &spec(SplitKind::Patient, Regime::Caw, 21))
                .unwrap();
        // external test holds every external slice
        assert_eq!(m.sets.tests["external"].len(), 96);
        assert_eq!(m.summary.tests["external"].patients.len(), 8);
        // nothing from the external center reaches train or val
        let external_patients: BTreeSet<&str> =
            external.samples.iter().map(|s| s.patient_id.as_str()).collect();
        for id in m.sets.train.iter().chain(&m.sets.val) {
            assert!(!external_patients.contains(id.patient_id()));
        }
        assert_eq!(m.total_slices(), 120 + 96);
    }

    #[test]
    fn cag_tests_hold_twenty_percent_of_each_center() {
        let internal = fake_dataset(&[("bccv", 10, 12)]);
        let external = fake_dataset(&[("smhs", 5, 12)]);
        let m = regime_assemble(&internal, &external, &spec(SplitKind::Patient, Regime::Cag, 22))
            .unwrap();
        // 2 of 10 internal patients and 1 of 5 external patients held out
        assert_eq!(m.summary.tests["internal"].patients.len(), 2);
        assert_eq!(m.summary.tests["external"].patients.len(), 1);
        assert_eq!(m.sets.tests["internal"].len(), 24);
        assert_eq!(m.sets.tests["external"].len(), 12);
        // train pool draws from both centers
        let pool_centers: BTreeSet<&str> = m
            .sets
            .train
            .iter()
            .chain(&m.sets.val)
            .map(|id| {
                if id.patient_id().starts_with("bccv") {
                    "bccv"
                } else {
                    "smhs"
                }
            })
            .collect();
        assert_eq!(pool_centers.len(), 2);
        assert_eq!(m.total_slices(), 120 + 60);
    }

    #[test]
    fn cag_slice_split_holds_twenty_percent_of_each_centers_slices() {
        let internal = fake_dataset(&[("bccv", 10, 10)]);
        let external = fake_dataset(&[("smhs", 4, 10)]);
        let m = regime_assemble(&internal, &external, &spec(SplitKind::Slice, Regime::Cag, 23))
            .unwrap();
        assert_eq!(m.sets.tests["internal"].len(), 20);
        assert_eq!(m.sets.tests["external"].len(), 8);
        assert_eq!(m.total_slices(), 140);
    }

    #[test]
    fn train_val_split_respects_parent_granularity() {
        // slice parent: plain 80:20 over the pool
        let pool: Vec<SampleId> = (0..100).map(|i| SampleId(format!("p{:02}", i / 10), i)).collect();
        let s = spec(SplitKind::Slice, Regime::Caw, 31);
        let (train, val) = train_val_split(&pool, &s).unwrap();
        assert_eq!((train.len(), val.len()), (80, 20));

        // patient parent: no patient spans train and val
        let s = spec(SplitKind::Patient, Regime::Caw, 31);
        let (train, val) = train_val_split(&pool, &s).unwrap();
        let train_p: BTreeSet<&str> = train.iter().map(|id| id.patient_id()).collect();
        let val_p: BTreeSet<&str> = val.iter().map(|id| id.patient_id()).collect();
        assert!(train_p.is_disjoint(&val_p));
        assert_eq!(val_p.len(), 2); // 20% of 10 patients
        assert_eq!(train.len() + val.len(), 100);

        // determinism
        let again = train_val_split(&pool, &s).unwrap();
        assert_eq!(again, (train, val));
    }

    #[test]
    fn degenerate_pools_and_datasets_are_rejected() {
        let s = spec(SplitKind::Slice, Regime::Caw, 41);
        assert!(train_val_split(&[], &s).is_err());
        assert!(train_val_split(&[SampleId("p".into(), 0)], &s).is_err());

        let empty = fake_dataset(&[]);
        assert!(slice_level_split(&empty, &s).is_err());

        // patient-level needs at least 2 patients per center group
        let one = fake_dataset(&[("bccv", 1, 40)]);
        let err = patient_level_split(&one, &spec(SplitKind::Patient, Regime::Caw, 41))
            .unwrap_err()
            .to_string();
        assert!(err.contains("patient"), "unexpected message: {err}");

        // CAG stratification rejects a 1-patient center even when the pooled
        // count would be fine
        let lopsided = fake_dataset(&[("bccv", 6, 8), ("smhs", 1, 8)]);
        assert!(
            patient_level_split(&lopsided, &spec(SplitKind::Patient, Regime::Cag, 41)).is_err()
        );
    }

    #[test]
    fn spec_and_center_mismatches_are_rejected() {
        let mut bad = spec(SplitKind::Slice, Regime::Caw, 51);
        bad.centers.external = "bccv".to_string();
        let ds = fake_dataset(&[("bccv", 4, 10)]);
        assert!(slice_level_split(&ds, &bad).is_err());

        let mut bad = spec(SplitKind::Slice, Regime::Caw, 51);
        bad.train_fraction = 1.0;
        assert!(slice_level_split(&ds, &bad).is_err());

        // wrong kind for the entry point
        assert!(patient_level_split(&ds, &spec(SplitKind::Slice, Regime::Caw, 51)).is_err());
        assert!(slice_level_split(&ds, &spec(SplitKind::Patient, Regime::Caw, 51)).is_err());

        // regime_assemble checks center identity
        let internal = fake_dataset(&[("bccv", 4, 10)]);
        let wrong = fake_dataset(&[("other", 4, 10)]);
        assert!(
            regime_assemble(&internal, &wrong, &spec(SplitKind::Slice, Regime::Caw, 51)).is_err()
        );
    }

    #[test]
    fn manifest_round_trips_and_validates() {
        let internal = fake_dataset(&[("bccv", 5, 10)]);
        let external = fake_dataset(&[("smhs", 4, 10)]);
        let m = regime_assemble(&internal, &external, &spec(SplitKind::Patient, Regime::Cag, 61))
            .unwrap();
        m.validate().unwrap();

        let dir = std::env::temp_dir().join(format!("petslice_split_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("split.json");
        m.save(&path).unwrap();
        let loaded = SplitManifest::load(&path).unwrap();
        assert_eq!(loaded, m);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn duplicated_sample_fails_validation() {
        let ds = fake_dataset(&[("bccv", 4, 10)]);
        let mut m = slice_level_split(&ds, &spec(SplitKind::Slice, Regime::Caw, 71)).unwrap();
        let stolen = m.sets.tests.get_mut("test").unwrap().pop().unwrap();
        m.sets.train.push(stolen);
        assert!(m.validate().is_err());
    }
}
