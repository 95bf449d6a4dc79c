//! Volume and cohort manifest files.
//!
//! Each volume is a `<id>.vol.json` header plus a `<id>.vol.raw` payload in
//! little-endian order, x fastest. A cohort manifest is a JSON array of
//! patient records carrying the file names and the per-slice ground truth.

use super::{slice_ground_truth, Grid3, PatientVolume, SliceTruth};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub modality: String,
    pub dtype: String,
}

/// Header file names of one patient's three volumes, relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientFiles {
    pub pet: String,
    pub ct: String,
    pub mask: String,
}

/// One manifest row: where the volumes live and what each slice contains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub center_id: String,
    pub files: PatientFiles,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub slices: Vec<SliceTruth>,
}

/// `fs::read` with the offending path attached to the error.
fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn raw_name(header_name: &str) -> Result<String> {
    header_name
        .strip_suffix(".vol.json")
        .map(|stem| format!("{stem}.vol.raw"))
        .ok_or_else(|| Error::Format(format!("volume header name {header_name:?} must end in .vol.json")))
}

fn write_volume_f32(
    dir: &Path,
    id: &str,
    modality: &str,
    grid: &Grid3<f32>,
    spacing_mm: (f64, f64, f64),
) -> Result<String> {
    let header = VolumeHeader {
        dims: [grid.nx(), grid.ny(), grid.nz()],
        spacing_mm: [spacing_mm.0, spacing_mm.1, spacing_mm.2],
        modality: modality.to_string(),
        dtype: "f32le".to_string(),
    };
    let name = format!("{id}.vol.json");
    fs::write(dir.join(&name), serde_json::to_vec_pretty(&header)?)?;
    let mut raw = Vec::with_capacity(grid.len() * 4);
    for v in grid.data() {
        raw.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(dir.join(raw_name(&name)?), raw)?;
    Ok(name)
}

fn write_volume_u8(
    dir: &Path,
    id: &str,
    grid: &Grid3<u8>,
    spacing_mm: (f64, f64, f64),
) -> Result<String> {
    let header = VolumeHeader {
        dims: [grid.nx(), grid.ny(), grid.nz()],
        spacing_mm: [spacing_mm.0, spacing_mm.1, spacing_mm.2],
        modality: "MASK".to_string(),
        dtype: "u8".to_string(),
    };
    let name = format!("{id}.vol.json");
    fs::write(dir.join(&name), serde_json::to_vec_pretty(&header)?)?;
    fs::write(dir.join(raw_name(&name)?), grid.data())?;
    Ok(name)
}

fn read_header(dir: &Path, name: &str, want_modality: &str, want_dtype: &str) -> Result<VolumeHeader> {
    let header: VolumeHeader = serde_json::from_slice(&read_file(&dir.join(name))?)?;
    if header.modality != want_modality {
        return Err(Error::Format(format!(
            "{name}: modality {:?}, expected {want_modality:?}",
            header.modality
        )));
    }
    if header.dtype != want_dtype {
        return Err(Error::Format(format!(
            "{name}: dtype {:?}, expected {want_dtype:?}",
            header.dtype
        )));
    }
    Ok(header)
}

fn read_volume_f32(dir: &Path, name: &str, want_modality: &str) -> Result<(VolumeHeader, Grid3<f32>)> {
    let header = read_header(dir, name, want_modality, "f32le")?;
    let raw = read_file(&dir.join(raw_name(name)?))?;
    let n = header.dims.iter().product::<usize>();
    if raw.len() != n * 4 {
        return Err(Error::Format(format!(
            "{name}: payload is {} bytes, dims {:?} need {}",
            raw.len(),
            header.dims,
            n * 4
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let grid = Grid3::from_vec(header.dims[0], header.dims[1], header.dims[2], data)?;
    Ok((header, grid))
}

fn read_volume_u8(dir: &Path, name: &str) -> Result<(VolumeHeader, Grid3<u8>)> {
    let header = read_header(dir, name, "MASK", "u8")?;
    let raw = read_file(&dir.join(raw_name(name)?))?;
    let n = header.dims.iter().product::<usize>();
    if raw.len() != n {
        return Err(Error::Format(format!(
            "{name}: payload is {} bytes, dims {:?} need {n}",
            raw.len(),
            header.dims
        )));
    }
    let grid = Grid3::from_vec(header.dims[0], header.dims[1], header.dims[2], raw)?;
    Ok((header, grid))
}

/// Writes one patient's PET/CT/mask volume files into `dir` and returns the
/// manifest row (with freshly computed per-slice ground truth).
pub fn save_patient(dir: &Path, vol: &PatientVolume) -> Result<PatientRecord> {
    vol.validate()?;
    fs::create_dir_all(dir)?;
    let pet = write_volume_f32(dir, &format!("{}_pet", vol.patient_id), "PET", &vol.pet, vol.spacing_mm)?;
    let ct = write_volume_f32(dir, &format!("{}_ct", vol.patient_id), "CT", &vol.ct, vol.spacing_mm)?;
    let mask = write_volume_u8(dir, &format!("{}_mask", vol.patient_id), &vol.tumor_mask, vol.spacing_mm)?;
    Ok(PatientRecord {
        patient_id: vol.patient_id.clone(),
        center_id: vol.center_id.clone(),
        files: PatientFiles { pet, ct, mask },
        dims: [vol.pet.nx(), vol.pet.ny(), vol.pet.nz()],
        spacing_mm: [vol.spacing_mm.0, vol.spacing_mm.1, vol.spacing_mm.2],
        slices: slice_ground_truth(vol),
    })
}

/// Reads a patient's volumes back from the directory holding its files.
pub fn load_patient(dir: &Path, record: &PatientRecord) -> Result<PatientVolume> {
    let (pet_header, pet) = read_volume_f32(dir, &record.files.pet, "PET")?;
    let (_, ct) = read_volume_f32(dir, &record.files.ct, "CT")?;
    let (_, mask) = read_volume_u8(dir, &record.files.mask)?;
    if pet_header.dims != record.dims {
        return Err(Error::Format(format!(
            "{}: header dims {:?} disagree with manifest dims {:?}",
            record.patient_id, pet_header.dims, record.dims
        )));
    }
    let vol = PatientVolume {
        patient_id: record.patient_id.clone(),
        center_id: record.center_id.clone(),
        pet,
        ct,
        spacing_mm: (
            record.spacing_mm[0],
            record.spacing_mm[1],
            record.spacing_mm[2],
        ),
        tumor_mask: mask,
    };
    vol.validate()?;
    Ok(vol)
}

pub fn save_manifest(path: &Path, records: &[PatientRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_vec_pretty(records)?)?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<Vec<PatientRecord>> {
    Ok(serde_json::from_slice(&read_file(path)?)?)
}

/// Writes every patient of a cohort plus a `manifest.json` into `dir`.
pub fn save_cohort(dir: &Path, cohort: &[PatientVolume]) -> Result<Vec<PatientRecord>> {
    let records = cohort
        .iter()
        .map(|vol| save_patient(dir, vol))
        .collect::<Result<Vec<_>>>()?;
    save_manifest(&dir.join("manifest.json"), &records)?;
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_cohort, CenterProfile};

    fn tiny_profile() -> CenterProfile {
        CenterProfile {
            n_patients: 2,
            dims: (24, 24, 24),
            target_positive_fraction: 0.15,
            tmtv_mean_ml: 15.0,
            tmtv_range_ml: 10.0,
            ..CenterProfile::center_a(2)
        }
    }

    #[test]
    fn patient_round_trip_is_lossless() {
        let cohort = generate_cohort(&tiny_profile(), 11).unwrap();
        let dir = tempdir("patient_round_trip");
        let record = save_patient(&dir, &cohort[0]).unwrap();
        let loaded = load_patient(&dir, &record).unwrap();
        assert_eq!(loaded, cohort[0]);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn cohort_manifest_round_trip() {
        let cohort = generate_cohort(&tiny_profile(), 12).unwrap();
        let dir = tempdir("cohort_manifest");
        let records = save_cohort(&dir, &cohort).unwrap();
        assert_eq!(records.len(), 2);
        let loaded = load_manifest(&dir.join("manifest.json")).unwrap();
        assert_eq!(loaded, records);
        // slice truth in the manifest matches a recomputation from the volumes
        for (record, vol) in loaded.iter().zip(&cohort) {
            assert_eq!(record.slices, crate::phantom::slice_ground_truth(vol));
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn modality_and_size_mismatches_are_rejected() {
        let cohort = generate_cohort(&tiny_profile(), 13).unwrap();
        let dir = tempdir("mismatches");
        let record = save_patient(&dir, &cohort[0]).unwrap();

        // swapped modality: read the CT file where PET is expected
        let mut swapped = record.clone();
        swapped.files.pet = record.files.ct.clone();
        assert!(load_patient(&dir, &swapped).is_err());

        // truncated payload
        let raw = dir.join(record.files.pet.replace(".vol.json", ".vol.raw"));
        let bytes = std::fs::read(&raw).unwrap();
        std::fs::write(&raw, &bytes[..bytes.len() - 4]).unwrap();
        assert!(load_patient(&dir, &record).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    fn tempdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("petslice_io_{tag}_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
