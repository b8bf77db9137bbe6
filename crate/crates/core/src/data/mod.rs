//! Long-format trial data: subjects, visit schedule and per-visit outcome slots.

mod io;
mod report;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_long, write_long, ColumnMap, LoadOptions, WriteOptions};
pub use report::{
    descriptives, pattern_table, DescriptiveRow, DescriptiveTable, PatternRow, PatternTable,
};

/// Lowest utility attainable under the UK EQ-5D-3L tariff.
pub const UTILITY_FLOOR: f64 = -0.594;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid visit schedule: {0}")]
    InvalidSchedule(String),
    #[error("duplicate subject id `{0}`")]
    DuplicateSubject(String),
    #[error("subject `{id}`: expected {expected} {outcome} slots, found {found}")]
    SlotCount {
        id: String,
        outcome: Outcome,
        expected: usize,
        found: usize,
    },
    #[error("subject `{id}`: non-finite {outcome} value at visit {visit}")]
    NonFinite {
        id: String,
        outcome: Outcome,
        visit: usize,
    },
    #[error("subject `{id}`: covariate set differs from the first subject")]
    CovariateMismatch { id: String },
    #[error("missing column `{0}` in header")]
    MissingColumn(String),
    #[error("line {line}: duplicate row for subject `{id}` at time {time}")]
    DuplicateRow { line: u64, id: String, time: usize },
    #[error("line {line}, column `{column}`: arm value `{value}` is not 0 or 1")]
    InvalidArm {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column `{column}`: `{value}` is not a number or the missing token")]
    InvalidNumber {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}, column `{column}`: time index `{value}` outside 1..={max}")]
    InvalidTime {
        line: u64,
        column: String,
        value: String,
        max: usize,
    },
    #[error("line {line}, column `{column}`: required field is empty")]
    EmptyField { line: u64, column: String },
    #[error("line {line}: subject `{id}` changes arm")]
    InconsistentArm { line: u64, id: String },
    #[error("line {line}: subject `{id}` has conflicting values for covariate `{name}`")]
    InconsistentCovariate { line: u64, id: String, name: String },
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("covariate `{0}` has no observed values")]
    CovariateAllMissing(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Intervention,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Control, Arm::Intervention];

    pub fn index(self) -> usize {
        match self {
            Arm::Control => 0,
            Arm::Intervention => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Arm> {
        match i {
            0 => Some(Arm::Control),
            1 => Some(Arm::Intervention),
            _ => None,
        }
    }

    /// Treatment indicator used in design matrices.
    pub fn indicator(self) -> f64 {
        self.index() as f64
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Control => "control",
            Arm::Intervention => "intervention",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Utility,
    Cost,
}

impl Outcome {
    pub const BOTH: [Outcome; 2] = [Outcome::Utility, Outcome::Cost];

    /// Single-letter prefix used in pattern headers and report rows (`U`, `C`).
    pub fn letter(self) -> char {
        match self {
            Outcome::Utility => 'U',
            Outcome::Cost => 'C',
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Utility => "utility",
            Outcome::Cost => "cost",
        })
    }
}

/// One randomised participant. Outcome vectors hold one slot per scheduled visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub arm: Arm,
    pub utility: Vec<Option<f64>>,
    pub cost: Vec<Option<f64>>,
    #[serde(default)]
    pub covariates: BTreeMap<String, Option<f64>>,
}

impl SubjectRecord {
    pub fn new(id: impl Into<String>, arm: Arm, utility: Vec<Option<f64>>, cost: Vec<Option<f64>>) -> Self {
        SubjectRecord {
            id: id.into(),
            arm,
            utility,
            cost,
            covariates: BTreeMap::new(),
        }
    }

    pub fn with_covariate(mut self, name: impl Into<String>, value: Option<f64>) -> Self {
        self.covariates.insert(name.into(), value);
        self
    }

    pub fn outcome(&self, outcome: Outcome) -> &[Option<f64>] {
        match outcome {
            Outcome::Utility => &self.utility,
            Outcome::Cost => &self.cost,
        }
    }

    pub fn outcome_mut(&mut self, outcome: Outcome) -> &mut Vec<Option<f64>> {
        match outcome {
            Outcome::Utility => &mut self.utility,
            Outcome::Cost => &mut self.cost,
        }
    }

    /// All utility and all cost slots observed.
    pub fn is_complete(&self) -> bool {
        self.utility.iter().chain(&self.cost).all(Option::is_some)
    }

    pub fn n_observed(&self) -> usize {
        self.utility
            .iter()
            .chain(&self.cost)
            .filter(|v| v.is_some())
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum DataWarning {
    UtilityOutOfRange { id: String, visit: usize, value: f64 },
    NegativeCost { id: String, visit: usize, value: f64 },
    NoObservedOutcomes { id: String },
}

impl fmt::Display for DataWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataWarning::UtilityOutOfRange { id, visit, value } => write!(
                f,
                "subject `{id}` visit {visit}: utility {value} outside [{UTILITY_FLOOR}, 1]"
            ),
            DataWarning::NegativeCost { id, visit, value } => {
                write!(f, "subject `{id}` visit {visit}: negative cost {value}")
            }
            DataWarning::NoObservedOutcomes { id } => {
                write!(f, "subject `{id}` has no observed utility or cost values")
            }
        }
    }
}

/// Validated long-format trial data.
///
/// Visits are indexed `0..J` internally; reports and labels use 1-based visit numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct TrialDataset {
    subjects: Vec<SubjectRecord>,
    visit_times: Vec<f64>,
    arm_labels: [String; 2],
}

#[derive(Deserialize)]
struct RawDataset {
    subjects: Vec<SubjectRecord>,
    visit_times: Vec<f64>,
    arm_labels: [String; 2],
}

impl TryFrom<RawDataset> for TrialDataset {
    type Error = DataError;

    fn try_from(raw: RawDataset) -> Result<Self, DataError> {
        TrialDataset::new(raw.subjects, raw.visit_times, raw.arm_labels)
    }
}

pub fn default_arm_labels() -> [String; 2] {
    ["control".to_string(), "intervention".to_string()]
}

pub(crate) fn validate_schedule(visit_times: &[f64]) -> Result<(), DataError> {
    if visit_times.is_empty() {
        return Err(DataError::InvalidSchedule("no visits".into()));
    }
    if visit_times[0] != 0.0 {
        return Err(DataError::InvalidSchedule(format!(
            "first visit time must be 0, got {}",
            visit_times[0]
        )));
    }
    if visit_times.iter().any(|t| !t.is_finite()) {
        return Err(DataError::InvalidSchedule("non-finite visit time".into()));
    }
    if visit_times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DataError::InvalidSchedule(
            "visit times must be strictly increasing".into(),
        ));
    }
    Ok(())
}

impl TrialDataset {
    pub fn new(
        subjects: Vec<SubjectRecord>,
        visit_times: Vec<f64>,
        arm_labels: [String; 2],
    ) -> Result<Self, DataError> {
        validate_schedule(&visit_times)?;
        let j = visit_times.len();
        let mut seen = HashSet::with_capacity(subjects.len());
        let covariate_keys: Option<BTreeSet<&String>> =
            subjects.first().map(|s| s.covariates.keys().collect());
        for s in &subjects {
            if !seen.insert(s.id.as_str()) {
                return Err(DataError::DuplicateSubject(s.id.clone()));
            }
            for outcome in Outcome::BOTH {
                let slots = s.outcome(outcome);
                if slots.len() != j {
                    return Err(DataError::SlotCount {
                        id: s.id.clone(),
                        outcome,
                        expected: j,
                        found: slots.len(),
                    });
                }
                if let Some(visit) = slots.iter().position(|v| v.is_some_and(|x| !x.is_finite())) {
                    return Err(DataError::NonFinite {
                        id: s.id.clone(),
                        outcome,
                        visit: visit + 1,
                    });
                }
            }
            if let Some(keys) = &covariate_keys {
                if !s.covariates.keys().eq(keys.iter().copied()) {
                    return Err(DataError::CovariateMismatch { id: s.id.clone() });
                }
            }
        }
        Ok(TrialDataset {
            subjects,
            visit_times,
            arm_labels,
        })
    }

    /// Same schedule and labels, different subjects.
    pub fn with_subjects(&self, subjects: Vec<SubjectRecord>) -> Result<Self, DataError> {
        TrialDataset::new(subjects, self.visit_times.clone(), self.arm_labels.clone())
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn into_subjects(self) -> Vec<SubjectRecord> {
        self.subjects
    }

    pub fn visit_times(&self) -> &[f64] {
        &self.visit_times
    }

    pub fn n_visits(&self) -> usize {
        self.visit_times.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn arm_labels(&self) -> &[String; 2] {
        &self.arm_labels
    }

    pub fn arm_sizes(&self) -> [usize; 2] {
        let mut sizes = [0, 0];
        for s in &self.subjects {
            sizes[s.arm.index()] += 1;
        }
        sizes
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.subjects
            .first()
            .map(|s| s.covariates.keys().cloned().collect())
            .unwrap_or_default()
    }

    /// Ids of subjects with no observed utility and no observed cost.
    pub fn subjects_without_outcomes(&self) -> Vec<&str> {
        self.subjects
            .iter()
            .filter(|s| s.n_observed() == 0)
            .map(|s| s.id.as_str())
            .collect()
    }

    pub fn warnings(&self) -> Vec<DataWarning> {
        let mut out = Vec::new();
        for s in &self.subjects {
            for (j, u) in s.utility.iter().enumerate() {
                if let Some(u) = *u {
                    if !(UTILITY_FLOOR..=1.0).contains(&u) {
                        out.push(DataWarning::UtilityOutOfRange {
                            id: s.id.clone(),
                            visit: j + 1,
                            value: u,
                        });
                    }
                }
            }
            for (j, c) in s.cost.iter().enumerate() {
                if let Some(c) = *c {
                    if c < 0.0 {
                        out.push(DataWarning::NegativeCost {
                            id: s.id.clone(),
                            visit: j + 1,
                            value: c,
                        });
                    }
                }
            }
            if s.n_observed() == 0 {
                out.push(DataWarning::NoObservedOutcomes { id: s.id.clone() });
            }
        }
        out
    }

    /// Replaces missing values of the named covariates by their observed mean, pooled over
    /// both arms. Outcome slots are untouched.
    pub fn mean_impute_covariates(&self, names: &[String]) -> Result<TrialDataset, DataError> {
        let known = self.covariate_names();
        let mut means = Vec::with_capacity(names.len());
        for name in names {
            if !known.contains(name) {
                return Err(DataError::UnknownCovariate(name.clone()));
            }
            let observed: Vec<f64> = self
                .subjects
                .iter()
                .filter_map(|s| s.covariates[name])
                .collect();
            if observed.is_empty() {
                return Err(DataError::CovariateAllMissing(name.clone()));
            }
            means.push(observed.iter().sum::<f64>() / observed.len() as f64);
        }
        let mut out = self.clone();
        for s in &mut out.subjects {
            for (name, mean) in names.iter().zip(&means) {
                let slot = s.covariates.get_mut(name).expect("validated above");
                if slot.is_none() {
                    *slot = Some(*mean);
                }
            }
        }
        Ok(out)
    }

    /// Applies `f` to every observed value of one outcome.
    pub fn map_outcome(&self, outcome: Outcome, f: impl Fn(f64) -> f64) -> TrialDataset {
        let mut out = self.clone();
        for s in &mut out.subjects {
            for v in s.outcome_mut(outcome).iter_mut().flatten() {
                *v = f(*v);
            }
        }
        out
    }

    /// Wide view of one outcome: one row per subject, one column per visit.
    pub fn outcome_matrix(&self, outcome: Outcome) -> Vec<Vec<Option<f64>>> {
        self.subjects
            .iter()
            .map(|s| s.outcome(outcome).to_vec())
            .collect()
    }
}
