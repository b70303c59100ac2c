//! Scan provenance records, cohort manifests and split assignments.
//!
//! Manifests are CSV files with the header
//! `patient_id,scan_id,acquisition_date,label,volume_path,dataset_id`;
//! split assignments are a second CSV `patient_id,split`. Splits are
//! patient-level so that no patient leaks across train/val/test.

use crate::error::{Error, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

/// Diagnosis label attached to a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Cn,
    Mci,
    Ad,
    /// Scans without a diagnosis; usable for pre-training only.
    Unlabeled,
}

impl Label {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "CN" => Ok(Label::Cn),
            "MCI" => Ok(Label::Mci),
            "AD" => Ok(Label::Ad),
            "UNLABELED" | "" => Ok(Label::Unlabeled),
            other => Err(Error::validation(format!("unknown label {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Cn => "CN",
            Label::Mci => "MCI",
            Label::Ad => "AD",
            Label::Unlabeled => "UNLABELED",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Train/validation/test partition tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TRAIN" => Ok(Split::Train),
            "VAL" | "VALIDATION" => Ok(Split::Val),
            "TEST" => Ok(Split::Test),
            other => Err(Error::validation(format!("unknown split {other:?}"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "TRAIN",
            Split::Val => "VAL",
            Split::Test => "TEST",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Provenance for one scan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub patient_id: String,
    pub scan_id: String,
    pub acquisition_date: NaiveDate,
    pub label: Label,
    pub volume_path: PathBuf,
    pub dataset_id: String,
}

/// A record that failed ingestion, with the reason.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectedRecord {
    pub line: usize,
    pub reason: String,
}

/// Cohort-level scan collection plus per-patient split assignment.
#[derive(Debug, Clone, Default)]
pub struct Manifest {
    records: Vec<ScanRecord>,
    split_assignment: BTreeMap<String, Split>,
}

impl Manifest {
    /// Builds a manifest, enforcing (patient_id, scan_id) uniqueness.
    pub fn new(records: Vec<ScanRecord>, split_assignment: BTreeMap<String, Split>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert((r.patient_id.clone(), r.scan_id.clone())) {
                return Err(Error::validation(format!(
                    "duplicate (patient_id, scan_id) = ({}, {})",
                    r.patient_id, r.scan_id
                )));
            }
        }
        Ok(Self { records, split_assignment })
    }

    pub fn records(&self) -> &[ScanRecord] {
        &self.records
    }

    pub fn split_assignment(&self) -> &BTreeMap<String, Split> {
        &self.split_assignment
    }

    pub fn split_of(&self, patient_id: &str) -> Option<Split> {
        self.split_assignment.get(patient_id).copied()
    }

    /// Patients in the manifest, sorted, deduplicated.
    pub fn patient_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .records
            .iter()
            .map(|r| r.patient_id.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        ids.sort();
        ids
    }

    /// Records of one patient sorted by acquisition date (then scan id).
    pub fn scans_of(&self, patient_id: &str) -> Vec<&ScanRecord> {
        let mut scans: Vec<&ScanRecord> =
            self.records.iter().filter(|r| r.patient_id == patient_id).collect();
        scans.sort_by(|a, b| {
            a.acquisition_date.cmp(&b.acquisition_date).then(a.scan_id.cmp(&b.scan_id))
        });
        scans
    }
}

const MANIFEST_HEADER: [&str; 6] =
    ["patient_id", "scan_id", "acquisition_date", "label", "volume_path", "dataset_id"];

/// Result of reading a manifest: accepted records plus per-record rejections.
#[derive(Debug)]
pub struct ManifestLoad {
    pub manifest: Manifest,
    pub rejected: Vec<RejectedRecord>,
}

/// Reads a manifest CSV and a split CSV.
///
/// Unparseable rows are rejected individually and reported rather than
/// failing the whole load; structural problems (bad header, duplicate keys,
/// conflicting split rows) are hard errors.
pub fn load_manifest(manifest_csv: &Path, split_csv: &Path) -> Result<ManifestLoad> {
    let mut reader = csv::Reader::from_path(manifest_csv)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != MANIFEST_HEADER {
            return Err(Error::config(format!(
                "{}: expected header {:?}, got {:?}",
                manifest_csv.display(),
                MANIFEST_HEADER.join(","),
                got.join(",")
            )));
        }
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2; // header is line 1
        let row = row?;
        match parse_record(&row) {
            Ok(rec) => records.push(rec),
            Err(e) => rejected.push(RejectedRecord { line, reason: e.to_string() }),
        }
    }

    let split_assignment = load_split_csv(split_csv)?;
    let manifest = Manifest::new(records, split_assignment)?;
    Ok(ManifestLoad { manifest, rejected })
}

fn parse_record(row: &csv::StringRecord) -> Result<ScanRecord> {
    if row.len() != MANIFEST_HEADER.len() {
        return Err(Error::validation(format!("expected 6 fields, got {}", row.len())));
    }
    let date_str = row[2].trim();
    let acquisition_date = NaiveDate::parse_from_str(date_str, "%Y-%m-%d")
        .map_err(|e| Error::validation(format!("bad acquisition_date {date_str:?}: {e}")))?;
    let patient_id = row[0].trim().to_string();
    let scan_id = row[1].trim().to_string();
    if patient_id.is_empty() || scan_id.is_empty() {
        return Err(Error::validation("empty patient_id or scan_id".to_string()));
    }
    Ok(ScanRecord {
        patient_id,
        scan_id,
        acquisition_date,
        label: Label::parse(&row[3])?,
        volume_path: PathBuf::from(row[4].trim()),
        dataset_id: row[5].trim().to_string(),
    })
}

fn load_split_csv(split_csv: &Path) -> Result<BTreeMap<String, Split>> {
    let mut reader = csv::Reader::from_path(split_csv)?;
    {
        let headers = reader.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        if got != ["patient_id", "split"] {
            return Err(Error::config(format!(
                "{}: expected header patient_id,split, got {:?}",
                split_csv.display(),
                got.join(",")
            )));
        }
    }
    let mut map = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let pid = row[0].trim().to_string();
        let split = Split::parse(&row[1])?;
        if let Some(prev) = map.insert(pid.clone(), split) {
            if prev != split {
                return Err(Error::validation(format!(
                    "patient {pid} assigned to both {prev} and {split}"
                )));
            }
        }
    }
    Ok(map)
}

/// Writes the manifest and split CSVs in the standard formats.
pub fn save_manifest(manifest: &Manifest, manifest_csv: &Path, split_csv: &Path) -> Result<()> {
    if let Some(dir) = manifest_csv.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(manifest_csv)?;
    w.write_record(MANIFEST_HEADER)?;
    for r in manifest.records() {
        w.write_record([
            r.patient_id.as_str(),
            r.scan_id.as_str(),
            &r.acquisition_date.format("%Y-%m-%d").to_string(),
            r.label.as_str(),
            &r.volume_path.display().to_string(),
            r.dataset_id.as_str(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(manifest_csv, e))?;

    let mut w = csv::Writer::from_path(split_csv)?;
    w.write_record(["patient_id", "split"])?;
    for (pid, split) in manifest.split_assignment() {
        w.write_record([pid.as_str(), split.as_str()])?;
    }
    w.flush().map_err(|e| Error::io(split_csv, e))?;
    Ok(())
}
