//! Labeled downstream task datasets.

use crate::error::{Error, Result};
use crate::manifest::ScanRecord;
use serde::{Deserialize, Serialize};

/// The three downstream task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// 3-class diagnosis of label-stable patients.
    StableClassification,
    /// Did a diagnosis transition occur between two scans?
    ConversionDetection,
    /// Will a transition occur within the gap window after a single scan?
    FutureConversion,
}

impl TaskKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::StableClassification => "stable_classification",
            TaskKind::ConversionDetection => "conversion_detection",
            TaskKind::FutureConversion => "future_conversion",
        }
    }
}

/// One labeled sample: 1–3 chronologically ordered scans plus the gaps
/// between them.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub scans: Vec<ScanRecord>,
    pub gaps_years: Vec<f64>,
    /// Index into the dataset's `class_names`.
    pub class: usize,
}

impl TaskSample {
    pub fn patient_id(&self) -> &str {
        &self.scans[0].patient_id
    }
}

/// Train/val/test samples for one downstream task.
#[derive(Debug, Clone)]
pub struct TaskDataset {
    pub task_kind: TaskKind,
    pub num_input_images: usize,
    pub class_names: Vec<String>,
    pub train: Vec<TaskSample>,
    pub val: Vec<TaskSample>,
    pub test: Vec<TaskSample>,
}

impl TaskDataset {
    /// Validates sample arity and class indices across all partitions.
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.num_input_images) {
            return Err(Error::validation(format!(
                "num_input_images must be 1..=3, got {}",
                self.num_input_images
            )));
        }
        if self.class_names.len() < 2 {
            return Err(Error::DegenerateDataset(format!(
                "{} task has {} classes",
                self.task_kind.as_str(),
                self.class_names.len()
            )));
        }
        for (name, part) in
            [("train", &self.train), ("val", &self.val), ("test", &self.test)]
        {
            for s in part {
                if s.scans.len() != self.num_input_images {
                    return Err(Error::validation(format!(
                        "{name} sample has {} scans, dataset expects {}",
                        s.scans.len(),
                        self.num_input_images
                    )));
                }
                if s.gaps_years.len() + 1 != s.scans.len() {
                    return Err(Error::validation(format!(
                        "{name} sample has {} gaps for {} scans",
                        s.gaps_years.len(),
                        s.scans.len()
                    )));
                }
                if s.class >= self.class_names.len() {
                    return Err(Error::validation(format!(
                        "{name} sample class {} out of range",
                        s.class
                    )));
                }
            }
        }
        Ok(())
    }

    /// Errors unless every class appears in the training partition; a task
    /// with zero positives or zero negatives cannot be trained.
    pub fn check_trainable(&self) -> Result<()> {
        self.validate()?;
        for (c, name) in self.class_names.iter().enumerate() {
            if !self.train.iter().any(|s| s.class == c) {
                return Err(Error::DegenerateDataset(format!(
                    "{} task: class {name:?} absent from the training partition",
                    self.task_kind.as_str()
                )));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}
