//! Mixed model for repeated measures, fitted by maximum likelihood on each subject's
//! observed rows.
//!
//! The mean model uses cell-means coding: one coefficient per visit (`TIME_j`), a
//! treatment-by-visit coefficient (`TIME_j:TRT`) at every visit or, for the constrained
//! model, at follow-up visits only, and optional baseline covariates as main effects.
//! Fixed effects are profiled out by GLS; the covariance parameters are found by BFGS on
//! the profiled log-likelihood.

mod covariance;
mod design;
mod likelihood;
pub mod optim;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use covariance::CovarianceStructure;
pub use design::{build_design, coefficient_labels, time_label, treatment_label, Design, SubjectDesign};
pub use likelihood::{loglik, profile_beta, Profile, ProfiledLikelihood};

use crate::data::{Arm, Outcome, TrialDataset};
use crate::linalg::{normal_critical, valid_level};
use optim::{maximize, BfgsOptions};

#[derive(Debug, Error)]
pub enum MmrmError {
    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),
    #[error("subject `{id}`: covariate `{name}` is missing (impute covariates before fitting)")]
    CovariateMissing { id: String, name: String },
    #[error("no subject has an observed value of the outcome")]
    NoSubjects,
    #[error("coefficient `{coefficient}` is not identified by the observed data")]
    RankDeficient { coefficient: String },
    #[error("covariance parameter vector has length {found}, expected {expected}")]
    ThetaLength { expected: usize, found: usize },
    #[error("covariance submatrix is numerically singular")]
    SingularCovariance,
    #[error("GLS information matrix is numerically singular")]
    SingularInformation,
    #[error(
        "optimizer did not converge after {iterations} iterations \
         (loglik {loglik}, gradient max-norm {gradient_norm})"
    )]
    NotConverged {
        iterations: usize,
        loglik: f64,
        gradient_norm: f64,
        theta: Vec<f64>,
    },
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("{0}")]
    Shape(String),
}

fn default_true() -> bool {
    true
}

/// Model definition for one outcome. Estimation is always full maximum likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmrmSpec {
    pub outcome: Outcome,
    /// No treatment term at the first visit.
    #[serde(default = "default_true")]
    pub constrained_baseline: bool,
    #[serde(default)]
    pub covariance: CovarianceStructure,
    #[serde(default)]
    pub extra_covariates: Vec<String>,
    /// Include `TIME_j:TRT` terms. Switched off only for single-arm data.
    #[serde(default = "default_true")]
    pub arm_effects: bool,
}

impl MmrmSpec {
    pub fn new(outcome: Outcome) -> Self {
        MmrmSpec {
            outcome,
            constrained_baseline: true,
            covariance: CovarianceStructure::Unstructured,
            extra_covariates: Vec::new(),
            arm_effects: true,
        }
    }

    pub fn unconstrained(mut self) -> Self {
        self.constrained_baseline = false;
        self
    }

    pub fn with_covariance(mut self, covariance: CovarianceStructure) -> Self {
        self.covariance = covariance;
        self
    }

    pub fn with_covariates<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.extra_covariates = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn without_arm_effects(mut self) -> Self {
        self.arm_effects = false;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    /// Max-norm of the profiled log-likelihood gradient in the optimizer's parameters.
    pub gradient_norm: f64,
    pub start_loglik: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iterations: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMmrm {
    pub spec: MmrmSpec,
    pub n_visits: usize,
    pub coefficients: Vec<String>,
    pub beta: Vec<f64>,
    /// Row-major; rows and columns follow `coefficients`.
    pub vcov_beta: Vec<Vec<f64>>,
    /// Row-major marginal covariance; rows and columns follow visits.
    pub sigma: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub n_subjects_used: usize,
    pub n_subjects_excluded: usize,
    pub n_observations: usize,
    /// Means of `spec.extra_covariates` over the subjects used.
    pub covariate_means: Vec<f64>,
    pub convergence: Convergence,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |r, c| rows[r][c])
}

impl FittedMmrm {
    /// A fit assembled from externally estimated coefficients and their covariance, for
    /// applying contrasts. The marginal covariance is left as the identity.
    pub fn from_estimates(
        spec: MmrmSpec,
        n_visits: usize,
        beta: Vec<f64>,
        vcov_beta: Vec<Vec<f64>>,
    ) -> Result<Self, MmrmError> {
        let coefficients = coefficient_labels(&spec, n_visits);
        let p = coefficients.len();
        if beta.len() != p || vcov_beta.len() != p || vcov_beta.iter().any(|r| r.len() != p) {
            return Err(MmrmError::Shape(format!("expected {p} coefficients and a {p}x{p} covariance")));
        }
        Ok(FittedMmrm {
            covariate_means: vec![0.0; spec.extra_covariates.len()],
            spec,
            n_visits,
            coefficients,
            beta,
            vcov_beta,
            sigma: to_rows(&DMatrix::identity(n_visits, n_visits)),
            theta: Vec::new(),
            loglik: 0.0,
            n_subjects_used: 0,
            n_subjects_excluded: 0,
            n_observations: 0,
            convergence: Convergence {
                converged: true,
                iterations: 0,
                gradient_norm: 0.0,
                start_loglik: 0.0,
            },
        })
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.coefficients.iter().position(|c| c == label)
    }

    pub fn coefficient(&self, label: &str) -> Option<f64> {
        self.index_of(label).map(|i| self.beta[i])
    }

    pub fn sigma_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.sigma)
    }

    pub fn vcov_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.vcov_beta)
    }

    pub fn se(&self, i: usize) -> f64 {
        self.vcov_beta[i][i].max(0.0).sqrt()
    }

    /// Whether arm `arm` has a treatment term at 0-based `visit`.
    pub fn treatment_label(&self, arm: Arm, visit: usize) -> Option<String> {
        if arm == Arm::Control {
            return None;
        }
        let label = treatment_label(visit);
        self.index_of(&label).map(|_| label)
    }
}

/// Power of two near the spread of the observed outcomes. Fitting on `y / scale` keeps
/// the optimizer well conditioned for any currency unit, and rescaling by a power of two
/// is exact.
fn outcome_scale(design: &Design) -> f64 {
    let values: Vec<f64> = design.subjects.iter().flat_map(|s| s.y.iter().copied()).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd.is_normal()) {
        return 1.0;
    }
    let exponent = ((sd.to_bits() >> 52) & 0x7ff) as i64 - 1023;
    2f64.powi(exponent as i32)
}

/// Pairwise-complete covariance of residuals from the arm-by-visit means.
fn starting_covariance(design: &Design) -> DMatrix<f64> {
    let j = design.n_visits;
    let mut sums = [vec![0.0; j], vec![0.0; j]];
    let mut counts = [vec![0usize; j], vec![0usize; j]];
    for s in &design.subjects {
        for (row, &v) in s.visits.iter().enumerate() {
            sums[s.arm.index()][v] += s.y[row];
            counts[s.arm.index()][v] += 1;
        }
    }
    let cell_mean = |arm: usize, v: usize| {
        if counts[arm][v] > 0 {
            sums[arm][v] / counts[arm][v] as f64
        } else {
            (sums[0][v] + sums[1][v]) / (counts[0][v] + counts[1][v]) as f64
        }
    };
    let mut cross = DMatrix::<f64>::zeros(j, j);
    let mut pairs = DMatrix::<f64>::zeros(j, j);
    for s in &design.subjects {
        let arm = s.arm.index();
        let resid: Vec<f64> = s
            .visits
            .iter()
            .enumerate()
            .map(|(row, &v)| s.y[row] - cell_mean(arm, v))
            .collect();
        for (a, &va) in s.visits.iter().enumerate() {
            for (b, &vb) in s.visits.iter().enumerate() {
                cross[(va, vb)] += resid[a] * resid[b];
                pairs[(va, vb)] += 1.0;
            }
        }
    }
    let mut cov = DMatrix::zeros(j, j);
    for a in 0..j {
        for b in 0..j {
            if pairs[(a, b)] >= 2.0 {
                cov[(a, b)] = cross[(a, b)] / (pairs[(a, b)] - 1.0);
            }
        }
    }
    let known: Vec<f64> = (0..j).map(|a| cov[(a, a)]).filter(|v| *v > 0.0).collect();
    let fallback = if known.is_empty() {
        1.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    for a in 0..j {
        if !(cov[(a, a)] > 0.0) {
            cov[(a, a)] = fallback;
            for b in 0..j {
                if b != a {
                    cov[(a, b)] = 0.0;
                    cov[(b, a)] = 0.0;
                }
            }
        }
    }
    cov
}

pub fn fit(data: &TrialDataset, spec: &MmrmSpec) -> Result<FittedMmrm, MmrmError> {
    fit_with(data, spec, &FitOptions::default())
}

pub fn fit_with(data: &TrialDataset, spec: &MmrmSpec, opts: &FitOptions) -> Result<FittedMmrm, MmrmError> {
    let design = build_design(data, spec)?;
    fit_design(&design, spec, opts)
}

pub fn fit_design(design: &Design, spec: &MmrmSpec, opts: &FitOptions) -> Result<FittedMmrm, MmrmError> {
    let scale = outcome_scale(design);
    let scaled = design.scaled(1.0 / scale);
    let objective = ProfiledLikelihood::new(&scaled, spec.covariance);
    let theta0 = spec.covariance.theta_from_covariance(&starting_covariance(&scaled));

    let bfgs = BfgsOptions {
        max_iterations: opts.max_iterations,
        ..BfgsOptions::default()
    };
    let outcome = maximize(
        |theta| objective.evaluate(theta).map(|p| (p.loglik, p.gradient)),
        theta0,
        &bfgs,
    )?;
    let log_scale_shift = design.n_observations() as f64 * scale.ln();
    if !outcome.converged {
        return Err(MmrmError::NotConverged {
            iterations: outcome.iterations,
            loglik: outcome.value - log_scale_shift,
            gradient_norm: outcome.gradient_norm(),
            theta: spec.covariance.rescale_theta(&outcome.x, scale),
        });
    }

    let profile = objective.evaluate(&outcome.x)?;
    let vcov = profile
        .information
        .clone()
        .cholesky()
        .ok_or(MmrmError::SingularInformation)?
        .inverse();
    let scale2 = scale * scale;
    let beta: DVector<f64> = &profile.beta * scale;
    let vcov = (&vcov + vcov.transpose()) * (0.5 * scale2);
    let sigma = &profile.sigma * scale2;

    Ok(FittedMmrm {
        spec: spec.clone(),
        n_visits: design.n_visits,
        coefficients: design.labels.clone(),
        beta: beta.iter().copied().collect(),
        vcov_beta: to_rows(&vcov),
        sigma: to_rows(&sigma),
        theta: spec.covariance.rescale_theta(&outcome.x, scale),
        loglik: profile.loglik - log_scale_shift,
        n_subjects_used: design.subjects.len(),
        n_subjects_excluded: design.n_excluded,
        n_observations: design.n_observations(),
        covariate_means: design.covariate_means.clone(),
        convergence: Convergence {
            converged: true,
            iterations: outcome.iterations,
            gradient_norm: outcome.gradient_norm(),
            start_loglik: outcome.start_value - log_scale_shift,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientInterval {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Normal-quantile Wald intervals for every fixed effect.
pub fn wald_ci(fit: &FittedMmrm, level: f64) -> Result<Vec<CoefficientInterval>, MmrmError> {
    if !valid_level(level) {
        return Err(MmrmError::InvalidLevel(level));
    }
    let z = normal_critical(level);
    Ok(fit
        .coefficients
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let se = fit.se(i);
            let estimate = fit.beta[i];
            CoefficientInterval {
                label: label.clone(),
                estimate,
                se,
                lower: estimate - z * se,
                upper: estimate + z * se,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_fit(beta: Vec<f64>, se: Vec<f64>) -> FittedMmrm {
        let p = beta.len();
        let vcov = (0..p)
            .map(|i| (0..p).map(|j| if i == j { se[i] * se[i] } else { 0.0 }).collect())
            .collect();
        FittedMmrm::from_estimates(MmrmSpec::new(Outcome::Utility), 3, beta, vcov).unwrap()
    }

    #[test]
    fn wald_interval_hand_values() {
        let fit = hand_fit(vec![0.0, 2.0, 0.0, 0.0, 0.0], vec![1.0, 0.0, 1.0, 1.0, 1.0]);
        let ci = wald_ci(&fit, 0.95).unwrap();
        assert!((ci[0].lower + 1.959_964).abs() < 1e-6 && (ci[0].upper - 1.959_964).abs() < 1e-6);
        assert_eq!((ci[1].lower, ci[1].upper), (2.0, 2.0));
        let half = wald_ci(&fit, 0.5).unwrap();
        assert!((half[2].upper - 0.674_489_75).abs() < 1e-8);
        for bad in [0.0, 1.0, -0.1, 1.5] {
            assert!(matches!(wald_ci(&fit, bad), Err(MmrmError::InvalidLevel(_))));
        }
    }

    #[test]
    fn from_estimates_checks_shape() {
        let err = FittedMmrm::from_estimates(MmrmSpec::new(Outcome::Cost), 3, vec![0.0; 4], vec![vec![0.0; 4]; 4]);
        assert!(err.is_err());
    }

    #[test]
    fn scale_is_power_of_two() {
        for sd in [0.3, 1.0, 1500.0, 7.9e6] {
            let exponent = ((f64::to_bits(sd) >> 52) & 0x7ff) as i64 - 1023;
            let s = 2f64.powi(exponent as i32);
            assert!(s <= sd && sd < 2.0 * s);
        }
    }
}
