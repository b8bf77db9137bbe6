use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{MmrmError, MmrmSpec};
use crate::data::{Arm, TrialDataset};
use crate::linalg::first_dependent_column;

/// Observed rows of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDesign {
    pub id: String,
    pub arm: Arm,
    /// 0-based visits with an observed outcome, increasing.
    pub visits: Vec<usize>,
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

/// Cell-means design over the observed rows: one indicator per visit (no global
/// intercept), treatment-by-visit indicators, then covariate main effects.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub labels: Vec<String>,
    pub n_visits: usize,
    /// Sorted by subject id.
    pub subjects: Vec<SubjectDesign>,
    /// Subjects with no observed value of the outcome.
    pub n_excluded: usize,
    /// Means of the covariates over the included subjects, in `spec.extra_covariates` order.
    pub covariate_means: Vec<f64>,
}

pub fn time_label(visit: usize) -> String {
    format!("TIME_{}", visit + 1)
}

pub fn treatment_label(visit: usize) -> String {
    format!("TIME_{}:TRT", visit + 1)
}

/// Visits (0-based) that carry a treatment-by-visit term.
pub fn treatment_visits(spec: &MmrmSpec, n_visits: usize) -> Vec<usize> {
    if !spec.arm_effects {
        return Vec::new();
    }
    let first = usize::from(spec.constrained_baseline);
    (first..n_visits).collect()
}

pub fn coefficient_labels(spec: &MmrmSpec, n_visits: usize) -> Vec<String> {
    let mut labels: Vec<String> = (0..n_visits).map(time_label).collect();
    labels.extend(treatment_visits(spec, n_visits).into_iter().map(treatment_label));
    labels.extend(spec.extra_covariates.iter().cloned());
    labels
}

pub fn build_design(data: &TrialDataset, spec: &MmrmSpec) -> Result<Design, MmrmError> {
    let j = data.n_visits();
    let labels = coefficient_labels(spec, j);
    let p = labels.len();
    let trt_visits = treatment_visits(spec, j);
    let trt_column: BTreeMap<usize, usize> = trt_visits
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, j + k))
        .collect();
    let cov_offset = j + trt_visits.len();
    let known = data.covariate_names();
    for name in &spec.extra_covariates {
        if !known.contains(name) {
            return Err(MmrmError::UnknownCovariate(name.clone()));
        }
    }

    let mut ordered: Vec<_> = data.subjects().iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut subjects = Vec::with_capacity(ordered.len());
    let mut n_excluded = 0;
    for s in ordered {
        let slots = s.outcome(spec.outcome);
        let visits: Vec<usize> = (0..j).filter(|&v| slots[v].is_some()).collect();
        if visits.is_empty() {
            n_excluded += 1;
            continue;
        }
        let mut cov = Vec::with_capacity(spec.extra_covariates.len());
        for name in &spec.extra_covariates {
            match s.covariates[name] {
                Some(v) => cov.push(v),
                None => {
                    return Err(MmrmError::CovariateMissing {
                        id: s.id.clone(),
                        name: name.clone(),
                    })
                }
            }
        }
        let mut x = DMatrix::zeros(visits.len(), p);
        for (row, &v) in visits.iter().enumerate() {
            x[(row, v)] = 1.0;
            if s.arm == Arm::Intervention {
                if let Some(&col) = trt_column.get(&v) {
                    x[(row, col)] = 1.0;
                }
            }
            for (k, value) in cov.iter().enumerate() {
                x[(row, cov_offset + k)] = *value;
            }
        }
        let y = DVector::from_iterator(visits.len(), visits.iter().map(|&v| slots[v].unwrap()));
        subjects.push(SubjectDesign {
            id: s.id.clone(),
            arm: s.arm,
            visits,
            x,
            y,
        });
    }

    if subjects.is_empty() {
        return Err(MmrmError::NoSubjects);
    }

    let mut xtx = DMatrix::zeros(p, p);
    for s in &subjects {
        xtx += s.x.tr_mul(&s.x);
    }
    if let Some(col) = first_dependent_column(&xtx) {
        return Err(MmrmError::RankDeficient {
            coefficient: labels[col].clone(),
        });
    }

    let covariate_means = (0..spec.extra_covariates.len())
        .map(|k| {
            subjects.iter().map(|s| s.x[(0, cov_offset + k)]).sum::<f64>() / subjects.len() as f64
        })
        .collect();

    Ok(Design {
        labels,
        n_visits: j,
        subjects,
        n_excluded,
        covariate_means,
    })
}

impl Design {
    pub fn n_observations(&self) -> usize {
        self.subjects.iter().map(|s| s.visits.len()).sum()
    }

    pub fn n_coefficients(&self) -> usize {
        self.labels.len()
    }

    /// Copy with every outcome value multiplied by `factor`.
    pub(crate) fn scaled(&self, factor: f64) -> Design {
        let mut out = self.clone();
        for s in &mut out.subjects {
            s.y *= factor;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_arm_labels, Outcome, SubjectRecord};

    fn data(subjects: Vec<SubjectRecord>) -> TrialDataset {
        TrialDataset::new(subjects, vec![0.0, 0.25, 0.75], default_arm_labels()).unwrap()
    }

    fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
    }

    #[test]
    fn intervention_subject_with_gap() {
        let d = data(vec![
            SubjectRecord::new("a", Arm::Intervention, vec![Some(0.1), None, Some(0.3)], vec![None; 3]),
            SubjectRecord::new("b", Arm::Control, vec![Some(0.1), Some(0.2), Some(0.3)], vec![None; 3]),
            SubjectRecord::new("c", Arm::Intervention, vec![Some(0.1), Some(0.2), None], vec![None; 3]),
        ]);
        let design = build_design(&d, &MmrmSpec::new(Outcome::Utility)).unwrap();
        assert_eq!(design.labels, ["TIME_1", "TIME_2", "TIME_3", "TIME_2:TRT", "TIME_3:TRT"]);
        let a = &design.subjects[0];
        assert_eq!(rows(&a.x), vec![vec![1.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0, 1.0]]);
        let b = &design.subjects[1];
        assert_eq!(b.x.columns(0, 3), DMatrix::<f64>::identity(3, 3));
        assert_eq!(b.x.columns(3, 2).abs().sum(), 0.0);
    }

    #[test]
    fn unconstrained_has_baseline_treatment_term() {
        let d = data(vec![
            SubjectRecord::new("a", Arm::Intervention, vec![Some(0.1), Some(0.2), Some(0.3)], vec![None; 3]),
            SubjectRecord::new("b", Arm::Control, vec![Some(0.1), Some(0.2), Some(0.3)], vec![None; 3]),
        ]);
        let design = build_design(&d, &MmrmSpec::new(Outcome::Utility).unconstrained()).unwrap();
        assert_eq!(design.labels[3], "TIME_1:TRT");
        assert_eq!(design.subjects[0].x[(0, 3)], 1.0);
    }

    #[test]
    fn unobserved_visit_names_coefficient() {
        let d = data(vec![
            SubjectRecord::new("a", Arm::Intervention, vec![Some(0.1), Some(0.2), None], vec![None; 3]),
            SubjectRecord::new("b", Arm::Control, vec![Some(0.1), Some(0.2), None], vec![None; 3]),
        ]);
        let err = build_design(&d, &MmrmSpec::new(Outcome::Utility)).unwrap_err();
        assert!(matches!(err, MmrmError::RankDeficient { coefficient } if coefficient == "TIME_3"));
    }

    #[test]
    fn excluded_and_covariate_errors() {
        let d = data(vec![
            SubjectRecord::new("a", Arm::Control, vec![None; 3], vec![Some(1.0); 3]).with_covariate("age", Some(1.0)),
            SubjectRecord::new("b", Arm::Control, vec![None; 3], vec![Some(1.0); 3]).with_covariate("age", None),
        ]);
        let spec = MmrmSpec::new(Outcome::Utility);
        assert!(matches!(build_design(&d, &spec), Err(MmrmError::NoSubjects)));
        let spec = MmrmSpec::new(Outcome::Cost).without_arm_effects().with_covariates(&["age"]);
        assert!(matches!(build_design(&d, &spec), Err(MmrmError::CovariateMissing { .. })));
        let spec = MmrmSpec::new(Outcome::Cost).with_covariates(&["bmi"]);
        assert!(matches!(build_design(&d, &spec), Err(MmrmError::UnknownCovariate(_))));
    }
}
