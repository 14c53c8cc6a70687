//! Dataset manifests: CSV listings of image/mask pairs with a train/test
//! split and free-form tags.
//!
//! Columns: `case_id,image_path,mask_path,split,tags` with `;`-separated
//! tags. Paths are resolved relative to the manifest file's directory.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::io::probe_dtype;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("duplicate case_id {0:?}")]
    DuplicateCaseId(String),
    #[error("unknown split {0:?} (expected train or test)")]
    UnknownSplit(String),
    #[error("case {case_id}: referenced file {path:?} is missing or unreadable: {reason}")]
    BadReference {
        case_id: String,
        path: PathBuf,
        reason: String,
    },
    #[error("case {case_id}: {path:?} has dtype {found}, expected {expected}")]
    WrongDtype {
        case_id: String,
        path: PathBuf,
        expected: &'static str,
        found: &'static str,
    },
    #[error("row {row}: expected 5 columns, found {found}")]
    BadColumnCount { row: usize, found: usize },
    #[error("empty split field for case {0:?}")]
    EmptySplit(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn parse(token: &str) -> Result<Self, ManifestError> {
        match token {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "" => Err(ManifestError::EmptySplit(String::new())),
            other => Err(ManifestError::UnknownSplit(other.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub case_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub split: Split,
    pub tags: Vec<String>,
}

impl ManifestEntry {
    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.iter().any(|t| t == tag)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Load and validate a manifest. Every referenced file must exist and carry
/// the expected RVOL1 dtype (payloads are not read here).
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, ManifestError> {
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 5 {
            return Err(ManifestError::BadColumnCount {
                row: row + 2, // 1-based, after the header line
                found: record.len(),
            });
        }
        let case_id = record[0].to_string();
        if !seen.insert(case_id.clone()) {
            return Err(ManifestError::DuplicateCaseId(case_id));
        }
        let split = Split::parse(&record[3])
            .map_err(|e| match e {
                ManifestError::EmptySplit(_) => ManifestError::EmptySplit(case_id.clone()),
                other => other,
            })?;
        let tags: Vec<String> = record[4]
            .split(';')
            .filter(|t| !t.is_empty())
            .map(|t| t.to_string())
            .collect();
        let entry = ManifestEntry {
            case_id,
            image_path: base.join(&record[1]),
            mask_path: base.join(&record[2]),
            split,
            tags,
        };
        check_reference(&entry.case_id, &entry.image_path, "int16")?;
        check_reference(&entry.case_id, &entry.mask_path, "uint8")?;
        entries.push(entry);
    }
    Ok(DatasetManifest { entries })
}

fn check_reference(
    case_id: &str,
    path: &Path,
    expected: &'static str,
) -> Result<(), ManifestError> {
    match probe_dtype(path) {
        Ok(found) if found == expected => Ok(()),
        Ok(found) => Err(ManifestError::WrongDtype {
            case_id: case_id.to_string(),
            path: path.to_path_buf(),
            expected,
            found,
        }),
        Err(e) => Err(ManifestError::BadReference {
            case_id: case_id.to_string(),
            path: path.to_path_buf(),
            reason: e.to_string(),
        }),
    }
}

/// Write a manifest CSV. Paths are written as given (callers pass paths
/// relative to the manifest's directory).
pub fn save_manifest(
    rows: &[(String, String, String, Split, Vec<String>)],
    path: &Path,
) -> Result<(), ManifestError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["case_id", "image_path", "mask_path", "split", "tags"])?;
    for (case_id, image, mask, split, tags) in rows {
        w.write_record([case_id, image, mask, split.as_str(), &tags.join(";")])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::io::{save_mask, save_volume};
    use crate::volgrid::{Dims3, LabelVolume, Spacing3, Volume3};

    fn write_pair(dir: &Path, stem: &str) -> (String, String) {
        let dims = Dims3::new(2, 2, 2).unwrap();
        let sp = Spacing3::isotropic(1.0).unwrap();
        let v = Volume3::new(dims, sp, vec![0; 8]).unwrap();
        let m = LabelVolume::new(dims, sp, vec![0; 8]).unwrap();
        let img = format!("{stem}.rvol");
        let mask = format!("{stem}_mask.rvol");
        save_volume(&v, &dir.join(&img)).unwrap();
        save_mask(&m, &dir.join(&mask)).unwrap();
        (img, mask)
    }

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn two_row_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (i1, m1) = write_pair(dir.path(), "a");
        let (i2, m2) = write_pair(dir.path(), "b");
        let p = write_manifest(
            dir.path(),
            &format!(
                "case_id,image_path,mask_path,split,tags\na,{i1},{m1},train,\nb,{i2},{m2},test,tumor;effusion\n"
            ),
        );
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_eq!(m.split(Split::Train).count(), 1);
        assert!(m.entries[1].has_tag("tumor"));
    }

    #[test]
    fn duplicate_case_id_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (i1, m1) = write_pair(dir.path(), "a");
        let p = write_manifest(
            dir.path(),
            &format!("case_id,image_path,mask_path,split,tags\na,{i1},{m1},train,\na,{i1},{m1},test,\n"),
        );
        assert!(matches!(
            load_manifest(&p),
            Err(ManifestError::DuplicateCaseId(id)) if id == "a"
        ));
    }

    #[test]
    fn unknown_split_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (i1, m1) = write_pair(dir.path(), "a");
        let p = write_manifest(
            dir.path(),
            &format!("case_id,image_path,mask_path,split,tags\na,{i1},{m1},validation,\n"),
        );
        assert!(matches!(
            load_manifest(&p),
            Err(ManifestError::UnknownSplit(s)) if s == "validation"
        ));
    }

    #[test]
    fn missing_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (_, m1) = write_pair(dir.path(), "a");
        let p = write_manifest(
            dir.path(),
            &format!("case_id,image_path,mask_path,split,tags\na,missing.rvol,{m1},train,\n"),
        );
        assert!(matches!(
            load_manifest(&p),
            Err(ManifestError::BadReference { .. })
        ));
    }

    #[test]
    fn swapped_dtype_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (i1, m1) = write_pair(dir.path(), "a");
        let p = write_manifest(
            dir.path(),
            &format!("case_id,image_path,mask_path,split,tags\na,{m1},{i1},train,\n"),
        );
        assert!(matches!(
            load_manifest(&p),
            Err(ManifestError::WrongDtype { .. })
        ));
    }
}
