//! Reference analyses: complete cases, and multiple imputation pooled with Rubin's rules.
//!
//! Both analyse per-subject QALYs and follow-up cost totals with an ordinary regression
//! on treatment and the baseline value of the same outcome.

mod mi;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mi::{mi_impute, MiOptions};

use crate::contrasts::{auc, qaly_by_arm, totalcost_by_arm, ContrastError, QalyWeights};
use crate::data::{Arm, Outcome, SubjectRecord, TrialDataset};
use crate::linalg::{ols, LinalgError};
use crate::mmrm::{fit, MmrmError, MmrmSpec};

#[derive(Debug, Error)]
pub enum ComparatorError {
    #[error("no complete cases in the {0:?} arm")]
    NoCompleters(Arm),
    #[error("{quantity} regression: {source}")]
    Regression {
        quantity: Quantity,
        #[source]
        source: LinalgError,
    },
    #[error("subject `{0}` has missing outcomes; analyses need complete data")]
    Incomplete(String),
    #[error("multiple imputation needs at least 2 imputations, got {0}")]
    TooFewImputations(usize),
    #[error("imputed datasets differ in shape from the first")]
    ShapeMismatch,
    #[error("{arm:?} arm: {variable} has no observed values to impute from")]
    NothingObserved { arm: Arm, variable: String },
    #[error("{arm:?} arm: imputation model for {variable} is singular")]
    SingularImputation { arm: Arm, variable: String },
    #[error("within-imputation variances must be as many as the estimates")]
    PoolLength,
    #[error(transparent)]
    Fit(#[from] MmrmError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "QALYs")]
    Qalys,
    #[serde(rename = "Total costs")]
    TotalCosts,
}

impl std::fmt::Display for Quantity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Quantity::Qalys => "QALYs",
            Quantity::TotalCosts => "Total costs",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub se: f64,
}

/// Adjusted arm means (at the pooled mean baseline) and the treatment effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantityEstimate {
    pub control: Estimate,
    pub intervention: Estimate,
    pub incremental: Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    pub n_subjects: usize,
    pub qalys: QuantityEstimate,
    pub total_costs: QuantityEstimate,
}

impl Analysis {
    pub fn get(&self, q: Quantity) -> &QuantityEstimate {
        match q {
            Quantity::Qalys => &self.qalys,
            Quantity::TotalCosts => &self.total_costs,
        }
    }
}

/// Subjects with every utility and cost slot observed.
pub fn completers(data: &TrialDataset) -> Vec<&SubjectRecord> {
    data.subjects().iter().filter(|s| s.is_complete()).collect()
}

/// `quantity ~ 1 + TRT + baseline` on fully observed subjects.
fn regress(subjects: &[&SubjectRecord], w: &QalyWeights, quantity: Quantity) -> Result<QuantityEstimate, ComparatorError> {
    let n = subjects.len();
    let mut x = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    for (i, s) in subjects.iter().enumerate() {
        let (value, baseline) = match quantity {
            Quantity::Qalys => {
                let u: Vec<f64> = s.utility.iter().map(|v| v.expect("complete")).collect();
                (auc(&u, w)?, u[0])
            }
            Quantity::TotalCosts => (
                s.cost[1..].iter().map(|v| v.expect("complete")).sum(),
                s.cost[0].expect("complete"),
            ),
        };
        x[(i, 0)] = 1.0;
        x[(i, 1)] = s.arm.indicator();
        x[(i, 2)] = baseline;
        y[i] = value;
    }
    let fit = ols(&x, &y).map_err(|source| ComparatorError::Regression { quantity, source })?;
    let baseline_mean = x.column(2).mean();
    let at = |trt: f64| {
        let (estimate, se) = fit.contrast(&DVector::from_vec(vec![1.0, trt, baseline_mean]));
        Estimate { estimate, se }
    };
    Ok(QuantityEstimate {
        control: at(0.0),
        intervention: at(1.0),
        incremental: Estimate {
            estimate: fit.beta[1],
            se: fit.se(1),
        },
    })
}

fn analyze_subjects(subjects: &[&SubjectRecord], w: &QalyWeights) -> Result<Analysis, ComparatorError> {
    for arm in Arm::BOTH {
        if !subjects.iter().any(|s| s.arm == arm) {
            return Err(ComparatorError::NoCompleters(arm));
        }
    }
    Ok(Analysis {
        n_subjects: subjects.len(),
        qalys: regress(subjects, w, Quantity::Qalys)?,
        total_costs: regress(subjects, w, Quantity::TotalCosts)?,
    })
}

/// Complete-case analysis: subjects missing any outcome slot are dropped from both
/// quantities.
pub fn cca(data: &TrialDataset, w: &QalyWeights) -> Result<Analysis, ComparatorError> {
    analyze_subjects(&completers(data), w)
}

/// The complete-case regressions on data with no missing outcomes.
pub fn analyze_complete(data: &TrialDataset, w: &QalyWeights) -> Result<Analysis, ComparatorError> {
    if let Some(s) = data.subjects().iter().find(|s| !s.is_complete()) {
        return Err(ComparatorError::Incomplete(s.id.clone()));
    }
    analyze_subjects(&data.subjects().iter().collect::<Vec<_>>(), w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pooled {
    pub estimate: f64,
    /// Mean within-imputation variance.
    pub within: f64,
    /// Variance of the estimates across imputations.
    pub between: f64,
    pub total: f64,
    pub se: f64,
}

/// Rubin's rules: `T = W + (1 + 1/M) B`.
pub fn rubin_pool(estimates: &[f64], variances: &[f64]) -> Result<Pooled, ComparatorError> {
    let m = estimates.len();
    if m < 2 {
        return Err(ComparatorError::TooFewImputations(m));
    }
    if variances.len() != m {
        return Err(ComparatorError::PoolLength);
    }
    let mf = m as f64;
    // identical inputs pool to themselves exactly
    let mean = |v: &[f64]| if v.iter().all(|x| *x == v[0]) { v[0] } else { v.iter().sum::<f64>() / mf };
    let estimate = mean(estimates);
    let within = mean(variances);
    let between = estimates.iter().map(|e| (e - estimate).powi(2)).sum::<f64>() / (mf - 1.0);
    let total = within + (1.0 + 1.0 / mf) * between;
    Ok(Pooled {
        estimate,
        within,
        between,
        total,
        se: total.sqrt(),
    })
}

/// Pooled MI analysis, with the full Rubin decomposition for each increment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiAnalysis {
    pub n_imputations: usize,
    pub pooled: Analysis,
    pub qaly_increment: Pooled,
    pub cost_increment: Pooled,
}

pub fn mi_analyze(completed: &[TrialDataset], w: &QalyWeights) -> Result<MiAnalysis, ComparatorError> {
    let m = completed.len();
    if m < 2 {
        return Err(ComparatorError::TooFewImputations(m));
    }
    let first = &completed[0];
    for d in completed {
        if d.n_subjects() != first.n_subjects() || d.n_visits() != first.n_visits() || d.arm_sizes() != first.arm_sizes() {
            return Err(ComparatorError::ShapeMismatch);
        }
    }
    let analyses = completed
        .iter()
        .map(|d| analyze_complete(d, w))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = |pick: &dyn Fn(&Analysis) -> Estimate| -> Result<Pooled, ComparatorError> {
        let est: Vec<f64> = analyses.iter().map(|a| pick(a).estimate).collect();
        let var: Vec<f64> = analyses.iter().map(|a| pick(a).se.powi(2)).collect();
        rubin_pool(&est, &var)
    };
    let as_estimate = |p: Pooled| Estimate {
        estimate: p.estimate,
        se: p.se,
    };
    let mut out = [QuantityEstimate {
        control: Estimate { estimate: 0.0, se: 0.0 },
        intervention: Estimate { estimate: 0.0, se: 0.0 },
        incremental: Estimate { estimate: 0.0, se: 0.0 },
    }; 2];
    let mut increments = Vec::new();
    for (slot, q) in [Quantity::Qalys, Quantity::TotalCosts].into_iter().enumerate() {
        let control = pool(&|a| a.get(q).control)?;
        let intervention = pool(&|a| a.get(q).intervention)?;
        let incremental = pool(&|a| a.get(q).incremental)?;
        out[slot] = QuantityEstimate {
            control: as_estimate(control),
            intervention: as_estimate(intervention),
            incremental: as_estimate(incremental),
        };
        increments.push(incremental);
    }
    Ok(MiAnalysis {
        n_imputations: m,
        pooled: Analysis {
            n_subjects: first.n_subjects(),
            qalys: out[0],
            total_costs: out[1],
        },
        qaly_increment: increments[0],
        cost_increment: increments[1],
    })
}

/// The mixed-model pipeline in the same layout: constrained models with unstructured
/// covariance, follow-up costs.
pub fn lmm_analysis(data: &TrialDataset, w: &QalyWeights, utility: &MmrmSpec, cost: &MmrmSpec) -> Result<Analysis, ComparatorError> {
    let fit_u = fit(data, utility)?;
    let fit_c = fit(data, cost)?;
    let level = 0.95;
    let q = qaly_by_arm(&fit_u, w, level)?;
    let c = totalcost_by_arm(&fit_c, false, level)?;
    let est = |r: &crate::contrasts::ContrastResult| Estimate {
        estimate: r.estimate,
        se: r.se,
    };
    Ok(Analysis {
        n_subjects: fit_u.n_subjects_used.max(fit_c.n_subjects_used),
        qalys: QuantityEstimate {
            control: est(&q.control),
            intervention: est(&q.intervention),
            incremental: est(&q.incremental),
        },
        total_costs: QuantityEstimate {
            control: est(&c.control),
            intervention: est(&c.intervention),
            incremental: est(&c.incremental),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "CCA")]
    Cca,
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "LMM")]
    Lmm,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Cca, Method::Mi, Method::Lmm];
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cca => "CCA",
            Method::Mi => "MI",
            Method::Lmm => "LMM",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cca" => Ok(Method::Cca),
            "mi" => Ok(Method::Mi),
            "lmm" | "mmrm" => Ok(Method::Lmm),
            other => Err(format!("unknown method `{other}` (expected cca, mi or lmm)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub analysis: Analysis,
}

/// Incremental SE of a method relative to complete cases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeRatio {
    pub method: Method,
    pub quantity: Quantity,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub n_subjects: usize,
    pub n_completers: usize,
    pub n_imputations: usize,
    pub seed: u64,
    pub methods: Vec<MethodResult>,
    pub se_ratios: Vec<SeRatio>,
}

pub fn compare_methods(
    data: &TrialDataset,
    w: &QalyWeights,
    n_imputations: usize,
    seed: u64,
) -> Result<MethodComparison, ComparatorError> {
    let cc = cca(data, w)?;
    let imputed = mi_impute(data, n_imputations, seed, &MiOptions::default())?;
    let mi = mi_analyze(&imputed, w)?.pooled;
    let lmm = lmm_analysis(data, w, &MmrmSpec::new(Outcome::Utility), &MmrmSpec::new(Outcome::Cost))?;
    let mut se_ratios = Vec::new();
    for (method, a) in [(Method::Mi, &mi), (Method::Lmm, &lmm)] {
        for q in [Quantity::Qalys, Quantity::TotalCosts] {
            se_ratios.push(SeRatio {
                method,
                quantity: q,
                ratio: a.get(q).incremental.se / cc.get(q).incremental.se,
            });
        }
    }
    Ok(MethodComparison {
        n_subjects: data.n_subjects(),
        n_completers: cc.n_subjects,
        n_imputations,
        seed,
        methods: vec![
            MethodResult { method: Method::Cca, analysis: cc },
            MethodResult { method: Method::Mi, analysis: mi },
            MethodResult { method: Method::Lmm, analysis: lmm },
        ],
        se_ratios,
    })
}

impl MethodComparison {
    pub fn get(&self, method: Method) -> Option<&Analysis> {
        self.methods.iter().find(|m| m.method == method).map(|m| &m.analysis)
    }

    /// One row per method and quantity.
    pub fn write_delimited<W: Write>(&self, mut sink: W, delimiter: u8) -> Result<(), ComparatorError> {
        let d = (delimiter as char).to_string();
        let header = [
            "method",
            "quantity",
            "control",
            "control_se",
            "intervention",
            "intervention_se",
            "incremental",
            "incremental_se",
            "se_ratio_vs_cca",
        ];
        writeln!(sink, "{}", header.join(&d))?;
        for m in &self.methods {
            for q in [Quantity::Qalys, Quantity::TotalCosts] {
                let e = m.analysis.get(q);
                let ratio = if m.method == Method::Cca {
                    1.0
                } else {
                    self.se_ratios
                        .iter()
                        .find(|r| r.method == m.method && r.quantity == q)
                        .map_or(f64::NAN, |r| r.ratio)
                };
                let fields = [
                    m.method.to_string(),
                    q.to_string(),
                    e.control.estimate.to_string(),
                    e.control.se.to_string(),
                    e.intervention.estimate.to_string(),
                    e.intervention.se.to_string(),
                    e.incremental.estimate.to_string(),
                    e.incremental.se.to_string(),
                    ratio.to_string(),
                ];
                writeln!(sink, "{}", fields.join(&d))?;
            }
        }
        Ok(())
    }
}
