//! Packed slice datasets: one little-endian f32 tensor file plus a JSON
//! manifest with per-sample records and per-patient slice ranges.

use super::{preprocess_patient, InputMode};
use crate::phantom::{load_patient, PatientRecord};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

/// Magic prefix of a packed tensor file; followed by three little-endian
/// u32 values (channels, height, width).
const MAGIC: &[u8; 4] = b"PSD1";
const HEADER_LEN: u64 = 16;

/// One sample's row in the dataset manifest: identity, ground truth, and the
/// byte offset of its tensor in the packed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub patient_id: String,
    pub center_id: String,
    pub slice_index: usize,
    pub label: u8,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tumor_suvmax: Option<f32>,
    pub offset: u64,
}

/// Contiguous sample range belonging to one patient (samples are ordered by
/// patient, then slice); the split module partitions over these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRange {
    pub patient_id: String,
    pub center_id: String,
    pub first_sample: usize,
    pub n_slices: usize,
}

/// Per-center bookkeeping printed with the manifest summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CenterCount {
    pub slices: usize,
    pub positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub input_mode: InputMode,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Packed tensor file name, relative to the manifest's directory.
    pub data_file: String,
    pub samples: Vec<SampleRecord>,
    pub patients: Vec<PatientRange>,
    pub centers: BTreeMap<String, CenterCount>,
}

impl DatasetManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Bytes per packed sample tensor.
    pub fn sample_len(&self) -> u64 {
        (self.channels * self.height * self.width * 4) as u64
    }
}

/// Preprocesses a saved cohort into a packed dataset under `out_dir`
/// (`samples.bin` + `dataset.json`). Samples are ordered by the manifest's
/// patient order, then slice index, and labels are cross-checked against the
/// cohort's ground-truth table.
pub fn build_slice_dataset(
    cohort_dir: &Path,
    records: &[PatientRecord],
    mode: InputMode,
    target: (usize, usize),
    out_dir: &Path,
) -> Result<DatasetManifest> {
    if records.is_empty() {
        return Err(Error::invalid("cohort manifest lists no patients"));
    }
    fs::create_dir_all(out_dir)?;
    let data_file = "samples.bin".to_string();
    let mut file = fs::File::create(out_dir.join(&data_file))?;
    file.write_all(MAGIC)?;
    for dim in [3u32, target.0 as u32, target.1 as u32] {
        file.write_all(&dim.to_le_bytes())?;
    }

    let mut samples = Vec::new();
    let mut patients = Vec::new();
    let mut centers: BTreeMap<String, CenterCount> = BTreeMap::new();
    let mut offset = HEADER_LEN;
    for record in records {
        let vol = load_patient(cohort_dir, record)?;
        let slice_samples = preprocess_patient(&vol, mode, target)
            .map_err(|e| e.in_stage(&format!("preprocess {}", record.patient_id)))?;
        patients.push(PatientRange {
            patient_id: record.patient_id.clone(),
            center_id: record.center_id.clone(),
            first_sample: samples.len(),
            n_slices: slice_samples.len(),
        });
        for (sample, truth) in slice_samples.iter().zip(&record.slices) {
            if sample.label != truth.label {
                return Err(Error::Format(format!(
                    "{} slice {}: preprocessed label {} disagrees with ground truth {}",
                    record.patient_id, sample.slice_index, sample.label, truth.label
                )));
            }
            let mut bytes = Vec::with_capacity(sample.input.len() * 4);
            for v in &sample.input {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            file.write_all(&bytes)?;
            let count = centers.entry(sample.center_id.clone()).or_default();
            count.slices += 1;
            count.positives += usize::from(sample.label == 1);
            samples.push(SampleRecord {
                patient_id: sample.patient_id.clone(),
                center_id: sample.center_id.clone(),
                slice_index: sample.slice_index,
                label: sample.label,
                tumor_suvmax: sample.tumor_suvmax,
                offset,
            });
            offset += bytes.len() as u64;
        }
    }
    file.flush()?;

    let manifest = DatasetManifest {
        input_mode: mode,
        channels: 3,
        height: target.0,
        width: target.1,
        data_file,
        samples,
        patients,
        centers,
    };
    manifest.save(&out_dir.join("dataset.json"))?;
    Ok(manifest)
}

/// Random access into a packed tensor file, validating its header against
/// the manifest on open.
#[derive(Debug)]
pub struct PackedDataset {
    file: fs::File,
    sample_len: usize,
}

impl PackedDataset {
    pub fn open(dir: &Path, manifest: &DatasetManifest) -> Result<Self> {
        let path = dir.join(&manifest.data_file);
        let mut file =
            fs::File::open(&path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut header = [0u8; HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("{}: header: {e}", path.display())))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format(format!(
                "{}: not a packed dataset file",
                path.display()
            )));
        }
        let dim = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes")) as usize;
        let (c, h, w) = (dim(4), dim(8), dim(12));
        if (c, h, w) != (manifest.channels, manifest.height, manifest.width) {
            return Err(Error::Format(format!(
                "{}: file shape {c}x{h}x{w} disagrees with manifest {}x{}x{}",
                path.display(),
                manifest.channels,
                manifest.height,
                manifest.width
            )));
        }
        let payload = file.metadata()?.len() - HEADER_LEN;
        let expect = manifest.sample_len() * manifest.samples.len() as u64;
        if payload != expect {
            return Err(Error::Format(format!(
                "{}: payload {payload} bytes, manifest expects {expect}",
                path.display()
            )));
        }
        Ok(PackedDataset {
            file,
            sample_len: manifest.sample_len() as usize,
        })
    }

    /// Reads one sample's tensor values.
    pub fn input(&mut self, record: &SampleRecord) -> Result<Vec<f32>> {
        self.file.seek(SeekFrom::Start(record.offset))?;
        let mut bytes = vec![0u8; self.sample_len];
        self.file.read_exact(&mut bytes)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_cohort, save_cohort, CenterProfile};

    fn tiny_profile(n: usize) -> CenterProfile {
        CenterProfile {
            n_patients: n,
            dims: (24, 24, 24),
            target_positive_fraction: 0.15,
            tmtv_mean_ml: 15.0,
            tmtv_range_ml: 10.0,
            ..CenterProfile::center_a(n)
        }
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir =
            std::env::temp_dir().join(format!("petslice_ds_{tag}_{}", std::process::id()));
        if dir.exists() {
            std::fs::remove_dir_all(&dir).unwrap();
        }
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn dataset_counts_and_labels_reconcile() {
        let dir = tempdir("counts");
        let cohort = generate_cohort(&tiny_profile(3), 51).unwrap();
        let records = save_cohort(&dir.join("cohort"), &cohort).unwrap();
        let manifest = build_slice_dataset(
            &dir.join("cohort"),
            &records,
            InputMode::Ppp,
            (16, 16),
            &dir.join("ds"),
        )
        .unwrap();

        assert_eq!(manifest.samples.len(), 3 * 24);
        assert_eq!(manifest.patients.len(), 3);
        // positive fraction matches a recount of the ground-truth table
        let truth_pos: usize = records
            .iter()
            .flat_map(|r| &r.slices)
            .filter(|s| s.label == 1)
            .count();
        let sample_pos = manifest.samples.iter().filter(|s| s.label == 1).count();
        assert_eq!(truth_pos, sample_pos);
        let center = manifest.centers.get("center_a").unwrap();
        assert_eq!(center.slices, 72);
        assert_eq!(center.positives, truth_pos);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn packed_inputs_round_trip_and_stay_in_unit_range() {
        let dir = tempdir("roundtrip");
        let cohort = generate_cohort(&tiny_profile(2), 52).unwrap();
        let records = save_cohort(&dir.join("cohort"), &cohort).unwrap();
        let manifest = build_slice_dataset(
            &dir.join("cohort"),
            &records,
            InputMode::Ppc,
            (12, 12),
            &dir.join("ds"),
        )
        .unwrap();

        let mut packed = PackedDataset::open(&dir.join("ds"), &manifest).unwrap();
        // spot-check the first patient's slices against direct preprocessing
        let direct =
            super::super::preprocess_patient(&cohort[0], InputMode::Ppc, (12, 12)).unwrap();
        for (record, want) in manifest.samples.iter().zip(&direct) {
            let got = packed.input(record).unwrap();
            assert_eq!(got, want.input);
            assert!(got.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn rebuilding_is_bit_identical() {
        let dir = tempdir("deterministic");
        let cohort = generate_cohort(&tiny_profile(2), 53).unwrap();
        let records = save_cohort(&dir.join("cohort"), &cohort).unwrap();
        for out in ["ds1", "ds2"] {
            build_slice_dataset(
                &dir.join("cohort"),
                &records,
                InputMode::Ppp,
                (16, 16),
                &dir.join(out),
            )
            .unwrap();
        }
        let bin1 = std::fs::read(dir.join("ds1/samples.bin")).unwrap();
        let bin2 = std::fs::read(dir.join("ds2/samples.bin")).unwrap();
        assert_eq!(bin1, bin2);
        let json1 = std::fs::read(dir.join("ds1/dataset.json")).unwrap();
        let json2 = std::fs::read(dir.join("ds2/dataset.json")).unwrap();
        assert_eq!(json1, json2);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_volume_file_reports_its_path() {
        let dir = tempdir("missing");
        let cohort = generate_cohort(&tiny_profile(1), 54).unwrap();
        let records = save_cohort(&dir.join("cohort"), &cohort).unwrap();
        let pet_header = dir.join("cohort").join(&records[0].files.pet);
        std::fs::remove_file(&pet_header).unwrap();
        let err = build_slice_dataset(
            &dir.join("cohort"),
            &records,
            InputMode::Ppp,
            (12, 12),
            &dir.join("ds"),
        )
        .unwrap_err();
        assert!(
            err.to_string().contains(&records[0].files.pet),
            "error should name the missing file: {err}"
        );
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn manifest_round_trips_through_json() {
        let dir = tempdir("manifest_json");
        let cohort = generate_cohort(&tiny_profile(1), 55).unwrap();
        let records = save_cohort(&dir.join("cohort"), &cohort).unwrap();
        let manifest = build_slice_dataset(
            &dir.join("cohort"),
            &records,
            InputMode::Ppc,
            (12, 12),
            &dir.join("ds"),
        )
        .unwrap();
        let loaded = DatasetManifest::load(&dir.join("ds/dataset.json")).unwrap();
        assert_eq!(loaded, manifest);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
