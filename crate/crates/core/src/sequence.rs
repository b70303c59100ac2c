//! Chronologically ordered scan sequences with bounded inter-scan gaps.

use crate::error::{Error, Result};
use crate::manifest::ScanRecord;
use crate::permutation::{MAX_SEQ_LEN, MIN_SEQ_LEN};
use chrono::NaiveDate;

/// Days per year used to convert date differences to fractional years.
pub const DAYS_PER_YEAR: f64 = 365.25;

/// Default inter-scan gap bounds in years, inclusive at both ends.
pub const DEFAULT_MIN_GAP_YEARS: f64 = 1.0;
pub const DEFAULT_MAX_GAP_YEARS: f64 = 2.5;

/// Fractional years between two dates.
pub fn gap_years(earlier: NaiveDate, later: NaiveDate) -> f64 {
    (later - earlier).num_days() as f64 / DAYS_PER_YEAR
}

/// A 2–4 scan sequence of one patient, strictly increasing in date, with
/// every consecutive gap inside the configured bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    scans: Vec<ScanRecord>,
    gaps_years: Vec<f64>,
    patient_id: String,
}

impl Sequence {
    /// Validates and builds a sequence under the given gap bounds (years,
    /// inclusive).
    pub fn new(scans: Vec<ScanRecord>, min_gap: f64, max_gap: f64) -> Result<Self> {
        let n = scans.len();
        if !(MIN_SEQ_LEN..=MAX_SEQ_LEN).contains(&n) {
            return Err(Error::validation(format!(
                "sequence length must be in {MIN_SEQ_LEN}..={MAX_SEQ_LEN}, got {n}"
            )));
        }
        let patient_id = scans[0].patient_id.clone();
        if scans.iter().any(|s| s.patient_id != patient_id) {
            return Err(Error::validation("sequence mixes patients"));
        }
        let mut gaps = Vec::with_capacity(n - 1);
        for pair in scans.windows(2) {
            if pair[1].acquisition_date <= pair[0].acquisition_date {
                return Err(Error::validation(format!(
                    "scan dates not strictly increasing for patient {patient_id}"
                )));
            }
            let gap = gap_years(pair[0].acquisition_date, pair[1].acquisition_date);
            if gap < min_gap || gap > max_gap {
                return Err(Error::validation(format!(
                    "gap {gap:.3} y outside [{min_gap}, {max_gap}] for patient {patient_id}"
                )));
            }
            gaps.push(gap);
        }
        Ok(Self { scans, gaps_years: gaps, patient_id })
    }

    /// Builds with the default [1.0, 2.5] year bounds.
    pub fn with_default_gaps(scans: Vec<ScanRecord>) -> Result<Self> {
        Self::new(scans, DEFAULT_MIN_GAP_YEARS, DEFAULT_MAX_GAP_YEARS)
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn scans(&self) -> &[ScanRecord] {
        &self.scans
    }

    pub fn gaps_years(&self) -> &[f64] {
        &self.gaps_years
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    /// Total elapsed time between first and last scan.
    pub fn span_years(&self) -> f64 {
        self.gaps_years.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::Label;
    use std::path::PathBuf;

    fn scan(pid: &str, sid: &str, days: i64) -> ScanRecord {
        ScanRecord {
            patient_id: pid.to_string(),
            scan_id: sid.to_string(),
            acquisition_date: NaiveDate::from_ymd_opt(2015, 1, 1).unwrap()
                + chrono::Duration::days(days),
            label: Label::Unlabeled,
            volume_path: PathBuf::from(format!("{pid}_{sid}.raw")),
            dataset_id: "t".to_string(),
        }
    }

    #[test]
    fn accepts_in_bound_gaps() {
        let s = Sequence::with_default_gaps(vec![scan("p", "a", 0), scan("p", "b", 400)]).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.gaps_years()[0] - 400.0 / DAYS_PER_YEAR).abs() < 1e-12);
    }

    #[test]
    fn rejects_short_and_long_gaps() {
        // 0.5 years: too close.
        assert!(Sequence::with_default_gaps(vec![scan("p", "a", 0), scan("p", "b", 183)]).is_err());
        // 3 years: too far.
        assert!(
            Sequence::with_default_gaps(vec![scan("p", "a", 0), scan("p", "b", 1096)]).is_err()
        );
    }

    #[test]
    fn bounds_are_inclusive() {
        // Exactly 1.0 year (365.25 days is not a whole day count; use a gap
        // whose year value lands exactly on the bound via custom bounds).
        let s = Sequence::new(vec![scan("p", "a", 0), scan("p", "b", 400)], 400.0 / DAYS_PER_YEAR, 2.5);
        assert!(s.is_ok());
        let s = Sequence::new(vec![scan("p", "a", 0), scan("p", "b", 400)], 1.0, 400.0 / DAYS_PER_YEAR);
        assert!(s.is_ok());
    }

    #[test]
    fn rejects_non_increasing_dates_and_length() {
        assert!(Sequence::with_default_gaps(vec![scan("p", "a", 0), scan("p", "b", 0)]).is_err());
        assert!(Sequence::with_default_gaps(vec![scan("p", "a", 0)]).is_err());
        let five: Vec<_> = (0..5).map(|i| scan("p", &format!("s{i}"), i * 400)).collect();
        assert!(Sequence::with_default_gaps(five).is_err());
    }

    #[test]
    fn rejects_mixed_patients() {
        assert!(Sequence::with_default_gaps(vec![scan("p", "a", 0), scan("q", "b", 400)]).is_err());
    }
}
