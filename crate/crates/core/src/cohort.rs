//! Sequence pools: gap-constrained extraction from a manifest, downstream
//! task set construction, and per-epoch per-patient sampling.

use crate::error::{Error, Result};
use crate::manifest::{Label, Manifest, ScanRecord, Split};
use crate::permutation::{MAX_SEQ_LEN, MIN_SEQ_LEN};
use crate::sequence::{gap_years, Sequence};
use crate::task::{TaskDataset, TaskKind, TaskSample};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// All gap-valid sequences of one split, grouped by patient.
#[derive(Debug, Clone)]
pub struct SequencePool {
    split: Split,
    by_patient: BTreeMap<String, Vec<Sequence>>,
}

impl SequencePool {
    pub fn split(&self) -> Split {
        self.split
    }

    pub fn by_patient(&self) -> &BTreeMap<String, Vec<Sequence>> {
        &self.by_patient
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        self.by_patient.keys().map(|s| s.as_str()).collect()
    }

    pub fn num_patients(&self) -> usize {
        self.by_patient.len()
    }

    /// All sequences of the given length, patient order.
    pub fn sequences_of_len(&self, n: usize) -> Vec<&Sequence> {
        self.by_patient.values().flatten().filter(|s| s.len() == n).collect()
    }

    /// Sequence lengths that at least one patient has.
    pub fn available_lengths(&self) -> Vec<usize> {
        (MIN_SEQ_LEN..=MAX_SEQ_LEN)
            .filter(|&n| self.by_patient.values().flatten().any(|s| s.len() == n))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.by_patient.is_empty()
    }
}

/// Counts and exclusion reasons from one extraction run; serialized as the
/// JSON extraction report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub split: String,
    pub patients_considered: usize,
    pub patients_with_sequences: usize,
    pub single_scan_patients: usize,
    pub unassigned_patients: usize,
    /// Sequence counts keyed by length ("2", "3", "4").
    pub sequences_by_length: BTreeMap<String, usize>,
    /// Patients having at least one sequence of each length.
    pub patients_by_length: BTreeMap<String, usize>,
    pub rejected_records: usize,
}

/// Extracts every chronological scan subset of length 2..=`max_len` whose
/// consecutive within-subset gaps all lie in `[min_gap, max_gap]` years.
///
/// Subsets may skip scans; the gap bound applies between chosen neighbours.
/// Patients with a single scan contribute nothing.
pub fn extract_sequences(
    manifest: &Manifest,
    split: Split,
    min_gap: f64,
    max_gap: f64,
    max_len: usize,
) -> Result<(SequencePool, ExtractionReport)> {
    if !(min_gap < max_gap) {
        return Err(Error::validation(format!(
            "min_gap {min_gap} must be below max_gap {max_gap}"
        )));
    }
    if !(MIN_SEQ_LEN..=MAX_SEQ_LEN).contains(&max_len) {
        return Err(Error::validation(format!(
            "max_len must be in {MIN_SEQ_LEN}..={MAX_SEQ_LEN}, got {max_len}"
        )));
    }

    let mut by_patient = BTreeMap::new();
    let mut patients_considered = 0;
    let mut single_scan_patients = 0;
    let mut unassigned_patients = 0;
    let mut sequences_by_length: BTreeMap<String, usize> = BTreeMap::new();
    let mut patients_by_length: BTreeMap<String, usize> = BTreeMap::new();

    for pid in manifest.patient_ids() {
        match manifest.split_of(&pid) {
            Some(s) if s == split => {}
            Some(_) => continue,
            None => {
                unassigned_patients += 1;
                continue;
            }
        }
        patients_considered += 1;
        let scans = manifest.scans_of(&pid);
        if scans.len() < 2 {
            single_scan_patients += 1;
            continue;
        }
        let seqs = enumerate_patient_sequences(&scans, min_gap, max_gap, max_len)?;
        if seqs.is_empty() {
            continue;
        }
        for n in MIN_SEQ_LEN..=max_len {
            let count = seqs.iter().filter(|s| s.len() == n).count();
            if count > 0 {
                *sequences_by_length.entry(n.to_string()).or_default() += count;
                *patients_by_length.entry(n.to_string()).or_default() += 1;
            }
        }
        by_patient.insert(pid, seqs);
    }

    let report = ExtractionReport {
        split: split.as_str().to_string(),
        patients_considered,
        patients_with_sequences: by_patient.len(),
        single_scan_patients,
        unassigned_patients,
        sequences_by_length,
        patients_by_length,
        rejected_records: 0,
    };
    Ok((SequencePool { split, by_patient }, report))
}

/// Depth-first enumeration over date-sorted scans. Extending a prefix only
/// ever increases the next gap, so the scan loop breaks at the first
/// too-distant candidate.
fn enumerate_patient_sequences(
    scans: &[&ScanRecord],
    min_gap: f64,
    max_gap: f64,
    max_len: usize,
) -> Result<Vec<Sequence>> {
    let mut out = Vec::new();
    let mut prefix: Vec<usize> = Vec::new();
    for start in 0..scans.len() {
        prefix.push(start);
        extend(scans, min_gap, max_gap, max_len, &mut prefix, &mut out)?;
        prefix.pop();
    }
    Ok(out)
}

fn extend(
    scans: &[&ScanRecord],
    min_gap: f64,
    max_gap: f64,
    max_len: usize,
    prefix: &mut Vec<usize>,
    out: &mut Vec<Sequence>,
) -> Result<()> {
    if prefix.len() == max_len {
        return Ok(());
    }
    let last = *prefix.last().expect("prefix never empty here");
    for next in last + 1..scans.len() {
        let gap = gap_years(scans[last].acquisition_date, scans[next].acquisition_date);
        if gap > max_gap {
            break;
        }
        if gap < min_gap {
            continue;
        }
        prefix.push(next);
        let records: Vec<ScanRecord> = prefix.iter().map(|&i| scans[i].clone()).collect();
        out.push(Sequence::new(records, min_gap, max_gap)?);
        extend(scans, min_gap, max_gap, max_len, prefix, out)?;
        prefix.pop();
    }
    Ok(())
}

/// Train/val/test pools extracted with the same parameters.
#[derive(Debug, Clone)]
pub struct PoolSet {
    pub train: SequencePool,
    pub val: SequencePool,
    pub test: SequencePool,
}

impl PoolSet {
    pub fn extract(
        manifest: &Manifest,
        min_gap: f64,
        max_gap: f64,
        max_len: usize,
    ) -> Result<(Self, Vec<ExtractionReport>)> {
        let (train, r1) = extract_sequences(manifest, Split::Train, min_gap, max_gap, max_len)?;
        let (val, r2) = extract_sequences(manifest, Split::Val, min_gap, max_gap, max_len)?;
        let (test, r3) = extract_sequences(manifest, Split::Test, min_gap, max_gap, max_len)?;
        Ok((Self { train, val, test }, vec![r1, r2, r3]))
    }

    pub fn pool(&self, split: Split) -> &SequencePool {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Exclusions hit while building classification sets.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub triplets_considered: usize,
    pub mixed_label_excluded: usize,
    pub unlabeled_excluded: usize,
    pub samples_per_set: usize,
}

const STABLE_CLASS_NAMES: [&str; 3] = ["CN", "MCI", "AD"];

fn stable_class_of(label: Label) -> Option<usize> {
    match label {
        Label::Cn => Some(0),
        Label::Mci => Some(1),
        Label::Ad => Some(2),
        Label::Unlabeled => None,
    }
}

/// Builds the three stable-classification datasets (1, 2 and 3 input images)
/// from label-constant triplets.
///
/// Sample `k` of the pair set is the prefix of triplet `k` with the last scan
/// dropped, and sample `k` of the single set keeps only the first scan, so
/// all three sets share counts and patient membership.
pub fn build_classification_sets(
    pools: &PoolSet,
) -> Result<([TaskDataset; 3], ClassificationReport)> {
    let mut report = ClassificationReport::default();
    let mut parts: [[Vec<TaskSample>; 3]; 3] = Default::default(); // [k-1][split]

    for (split_idx, pool) in [&pools.train, &pools.val, &pools.test].iter().enumerate() {
        for seqs in pool.by_patient().values() {
            for seq in seqs.iter().filter(|s| s.len() == 3) {
                report.triplets_considered += 1;
                let labels: Vec<Label> = seq.scans().iter().map(|s| s.label).collect();
                if labels.contains(&Label::Unlabeled) {
                    report.unlabeled_excluded += 1;
                    continue;
                }
                if labels.windows(2).any(|w| w[0] != w[1]) {
                    report.mixed_label_excluded += 1;
                    continue;
                }
                let class = stable_class_of(labels[0]).expect("unlabeled filtered above");
                for k in 1..=3usize {
                    parts[k - 1][split_idx].push(TaskSample {
                        scans: seq.scans()[..k].to_vec(),
                        gaps_years: seq.gaps_years()[..k - 1].to_vec(),
                        class,
                    });
                }
            }
        }
    }

    report.samples_per_set =
        parts[0].iter().map(|p| p.len()).sum::<usize>();

    let class_names: Vec<String> = STABLE_CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    let mut datasets = Vec::with_capacity(3);
    for (k, [train, val, test]) in (1..=3usize).zip(parts.into_iter()) {
        let ds = TaskDataset {
            task_kind: TaskKind::StableClassification,
            num_input_images: k,
            class_names: class_names.clone(),
            train,
            val,
            test,
        };
        ds.validate()?;
        datasets.push(ds);
    }
    let [single, pair, triplet]: [TaskDataset; 3] =
        datasets.try_into().expect("exactly three datasets built");
    Ok(([single, pair, triplet], report))
}

/// Builds the conversion detection (2-image) and future conversion
/// prediction (1-image) datasets for one `from → to` transition.
///
/// A pair whose scans are both `from` is a stable negative; a pair going
/// `from → to` is a positive. The pair's outcome is read off the second
/// scan's label. The prediction set keeps the first scan of each detection
/// pair with the same binary label.
pub fn build_conversion_sets(
    pools: &PoolSet,
    from_label: Label,
    to_label: Label,
) -> Result<(TaskDataset, TaskDataset)> {
    if from_label == to_label {
        return Err(Error::validation("conversion task needs distinct labels"));
    }
    let class_names =
        vec![format!("stable_{}", from_label.as_str()), format!("to_{}", to_label.as_str())];

    let mut detection_parts: [Vec<TaskSample>; 3] = Default::default();
    let mut prediction_parts: [Vec<TaskSample>; 3] = Default::default();

    for (split_idx, pool) in [&pools.train, &pools.val, &pools.test].iter().enumerate() {
        for seqs in pool.by_patient().values() {
            for seq in seqs.iter().filter(|s| s.len() == 2) {
                let first = &seq.scans()[0];
                let second = &seq.scans()[1];
                if first.label != from_label {
                    continue;
                }
                let class = if second.label == from_label {
                    0
                } else if second.label == to_label {
                    1
                } else {
                    continue;
                };
                detection_parts[split_idx].push(TaskSample {
                    scans: seq.scans().to_vec(),
                    gaps_years: seq.gaps_years().to_vec(),
                    class,
                });
                prediction_parts[split_idx].push(TaskSample {
                    scans: vec![first.clone()],
                    gaps_years: vec![],
                    class,
                });
            }
        }
    }

    let [dtr, dva, dte] = detection_parts;
    let detection = TaskDataset {
        task_kind: TaskKind::ConversionDetection,
        num_input_images: 2,
        class_names: class_names.clone(),
        train: dtr,
        val: dva,
        test: dte,
    };
    let [ptr, pva, pte] = prediction_parts;
    let prediction = TaskDataset {
        task_kind: TaskKind::FutureConversion,
        num_input_images: 1,
        class_names,
        train: ptr,
        val: pva,
        test: pte,
    };
    detection.validate()?;
    prediction.validate()?;
    Ok((detection, prediction))
}

/// Length filter for an epoch's sample draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthFilter {
    Any,
    Exact(usize),
}

/// Draws at most one sequence per patient, uniformly among that patient's
/// eligible sequences. Patients with no eligible sequence are skipped for
/// this epoch. Deterministic given the seed.
pub fn sample_epoch(pool: &SequencePool, filter: LengthFilter, rng_seed: u64) -> Vec<Sequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::new();
    for seqs in pool.by_patient().values() {
        let eligible: Vec<&Sequence> = match filter {
            LengthFilter::Any => seqs.iter().collect(),
            LengthFilter::Exact(n) => seqs.iter().filter(|s| s.len() == n).collect(),
        };
        if eligible.is_empty() {
            continue;
        }
        let pick = rng.gen_range(0..eligible.len());
        out.push(eligible[pick].clone());
    }
    out
}

/// Shuffles samples into minibatches; used by every training loop.
pub fn shuffle_indices(len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    idx.shuffle(rng);
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use std::collections::BTreeMap;
    use std::path::PathBuf;

    fn scan(pid: &str, idx: usize, days: i64, label: Label) -> ScanRecord {
        ScanRecord {
            patient_id: pid.to_string(),
            scan_id: format!("s{idx}"),
            acquisition_date: NaiveDate::from_ymd_opt(2010, 1, 1).unwrap()
                + chrono::Duration::days(days),
            label,
            volume_path: PathBuf::from(format!("{pid}_s{idx}.raw")),
            dataset_id: "t".to_string(),
        }
    }

    fn years_to_days(y: f64) -> i64 {
        (y * 365.25).round() as i64
    }

    fn manifest_one_patient(years: &[f64]) -> Manifest {
        let records: Vec<ScanRecord> = years
            .iter()
            .enumerate()
            .map(|(i, &y)| scan("p1", i, years_to_days(y), Label::Mci))
            .collect();
        let mut split = BTreeMap::new();
        split.insert("p1".to_string(), Split::Train);
        Manifest::new(records, split).unwrap()
    }

    #[test]
    fn worked_example_counts() {
        let m = manifest_one_patient(&[0.0, 1.2, 2.4, 4.0]);
        let (pool, report) = extract_sequences(&m, Split::Train, 1.0, 2.5, 4).unwrap();
        let seqs = &pool.by_patient()["p1"];
        let count = |n: usize| seqs.iter().filter(|s| s.len() == n).count();
        assert_eq!(count(2), 4);
        assert_eq!(count(3), 3);
        assert_eq!(count(4), 1);
        assert_eq!(report.sequences_by_length["2"], 4);
        assert_eq!(report.sequences_by_length["4"], 1);
    }

    #[test]
    fn out_of_bound_gaps_give_empty_pool() {
        for years in [[0.0, 0.5], [0.0, 3.0]] {
            let m = manifest_one_patient(&years);
            let (pool, _) = extract_sequences(&m, Split::Train, 1.0, 2.5, 4).unwrap();
            assert!(pool.is_empty());
        }
    }

    #[test]
    fn empty_manifest_is_empty_pool() {
        let m = Manifest::new(vec![], BTreeMap::new()).unwrap();
        let (pool, report) = extract_sequences(&m, Split::Train, 1.0, 2.5, 4).unwrap();
        assert!(pool.is_empty());
        assert_eq!(report.patients_considered, 0);
    }

    #[test]
    fn single_scan_patient_omitted() {
        let records = vec![scan("p1", 0, 0, Label::Cn)];
        let mut split = BTreeMap::new();
        split.insert("p1".to_string(), Split::Train);
        let m = Manifest::new(records, split).unwrap();
        let (pool, report) = extract_sequences(&m, Split::Train, 1.0, 2.5, 4).unwrap();
        assert!(pool.is_empty());
        assert_eq!(report.single_scan_patients, 1);
    }

    fn poolset_from(manifest: &Manifest) -> PoolSet {
        PoolSet::extract(manifest, 1.0, 2.5, 4).unwrap().0
    }

    #[test]
    fn classification_sets_align() {
        // Two stable triplet patients, one mixed-label patient.
        let mut records = Vec::new();
        for (pid, label) in [("a", Label::Mci), ("b", Label::Ad)] {
            for (i, y) in [0.0, 1.2, 2.4].iter().enumerate() {
                records.push(scan(pid, i, years_to_days(*y), label));
            }
        }
        for (i, (y, label)) in
            [(0.0, Label::Cn), (1.2, Label::Mci), (2.4, Label::Mci)].iter().enumerate()
        {
            records.push(scan("c", i, years_to_days(*y), *label));
        }
        let mut split = BTreeMap::new();
        for pid in ["a", "b", "c"] {
            split.insert(pid.to_string(), Split::Train);
        }
        let m = Manifest::new(records, split).unwrap();
        let pools = poolset_from(&m);
        let ([single, pair, triplet], report) = build_classification_sets(&pools).unwrap();

        assert_eq!(report.mixed_label_excluded, 1);
        assert_eq!(triplet.train.len(), 2);
        assert_eq!(pair.train.len(), 2);
        assert_eq!(single.train.len(), 2);
        for k in 0..2 {
            assert_eq!(pair.train[k].scans, triplet.train[k].scans[..2].to_vec());
            assert_eq!(single.train[k].scans, triplet.train[k].scans[..1].to_vec());
            assert_eq!(single.train[k].class, triplet.train[k].class);
        }
        assert_eq!(triplet.train[0].class, 1); // MCI
        assert_eq!(triplet.train[1].class, 2); // AD
    }

    #[test]
    fn conversion_sets_label_by_second_scan() {
        let mut records = Vec::new();
        // converter MCI -> AD
        records.push(scan("a", 0, 0, Label::Mci));
        records.push(scan("a", 1, years_to_days(1.5), Label::Ad));
        // stable MCI
        records.push(scan("b", 0, 0, Label::Mci));
        records.push(scan("b", 1, years_to_days(1.5), Label::Mci));
        // wrong source class
        records.push(scan("c", 0, 0, Label::Cn));
        records.push(scan("c", 1, years_to_days(1.5), Label::Ad));
        let mut split = BTreeMap::new();
        for pid in ["a", "b", "c"] {
            split.insert(pid.to_string(), Split::Train);
        }
        let m = Manifest::new(records, split).unwrap();
        let pools = poolset_from(&m);
        let (detection, prediction) =
            build_conversion_sets(&pools, Label::Mci, Label::Ad).unwrap();

        assert_eq!(detection.train.len(), 2);
        let classes: Vec<usize> = detection.train.iter().map(|s| s.class).collect();
        assert!(classes.contains(&0) && classes.contains(&1));
        assert_eq!(prediction.train.len(), 2);
        for (d, p) in detection.train.iter().zip(&prediction.train) {
            assert_eq!(d.scans[0], p.scans[0]);
            assert_eq!(d.class, p.class);
            assert_eq!(p.scans.len(), 1);
        }
    }

    #[test]
    fn sample_epoch_one_per_patient_and_deterministic() {
        let mut records = Vec::new();
        for pid in ["a", "b", "c"] {
            for (i, y) in [0.0, 1.2, 2.4, 3.6].iter().enumerate() {
                records.push(scan(pid, i, years_to_days(*y), Label::Cn));
            }
        }
        let mut split = BTreeMap::new();
        for pid in ["a", "b", "c"] {
            split.insert(pid.to_string(), Split::Train);
        }
        let m = Manifest::new(records, split).unwrap();
        let (pool, _) = extract_sequences(&m, Split::Train, 1.0, 2.5, 4).unwrap();

        let drawn = sample_epoch(&pool, LengthFilter::Exact(2), 7);
        assert_eq!(drawn.len(), 3);
        let mut pids: Vec<&str> = drawn.iter().map(|s| s.patient_id()).collect();
        pids.dedup();
        assert_eq!(pids.len(), 3);
        assert!(drawn.iter().all(|s| s.len() == 2));

        let again = sample_epoch(&pool, LengthFilter::Exact(2), 7);
        assert_eq!(drawn, again);

        // No quadruplet pool for a patient whose max gap chain is shorter.
        let none = sample_epoch(&pool, LengthFilter::Exact(4), 7);
        assert_eq!(none.len(), 3); // all patients here have quads
    }

    #[test]
    fn epoch_skips_patients_without_length() {
        let mut records = Vec::new();
        // patient a: only a pair; patient b: quadruplet.
        for (i, y) in [0.0, 1.2].iter().enumerate() {
            records.push(scan("a", i, years_to_days(*y), Label::Cn));
        }
        for (i, y) in [0.0, 1.2, 2.4, 3.6].iter().enumerate() {
            records.push(scan("b", i, years_to_days(*y), Label::Cn));
        }
        let mut split = BTreeMap::new();
        split.insert("a".to_string(), Split::Train);
        split.insert("b".to_string(), Split::Train);
        let m = Manifest::new(records, split).unwrap();
        let (pool, _) = extract_sequences(&m, Split::Train, 1.0, 2.5, 4).unwrap();

        let quads = sample_epoch(&pool, LengthFilter::Exact(4), 3);
        assert_eq!(quads.len(), 1);
        assert_eq!(quads[0].patient_id(), "b");
    }
}
