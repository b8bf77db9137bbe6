//! Linear combinations of fitted fixed effects: marginal means, QALYs, total costs and
//! their increments, with plug-in standard errors.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{validate_schedule, Arm, DataError, Outcome};
use crate::linalg::{normal_critical, valid_level};
use crate::mmrm::{time_label, FittedMmrm};

#[derive(Debug, Error)]
pub enum ContrastError {
    #[error("contrast has no weights")]
    EmptyWeights,
    #[error("coefficient `{0}` is not in the fitted model")]
    UnknownLabel(String),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("{what}: expected length {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("QALY weights need at least 2 visits, found {0}")]
    TooFewVisits(usize),
    #[error("invalid visit schedule: {0}")]
    Schedule(String),
    #[error("discount multipliers must be finite and positive")]
    InvalidDiscount,
    #[error("model was fitted to {found:?}, expected {expected:?}")]
    WrongOutcome { expected: Outcome, found: Outcome },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sparse weights over coefficient labels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContrastWeights(pub BTreeMap<String, f64>);

impl ContrastWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn unit(label: &str) -> Self {
        let mut w = Self::new();
        w.add(label, 1.0);
        w
    }

    /// Adds `weight` to whatever `label` already carries.
    pub fn add(&mut self, label: &str, weight: f64) {
        *self.0.entry(label.to_string()).or_insert(0.0) += weight;
    }

    pub fn get(&self, label: &str) -> f64 {
        self.0.get(label).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        ContrastWeights(self.0.iter().map(|(k, v)| (k.clone(), v * factor)).collect())
    }

    /// `self - other`, keeping every label of either side.
    pub fn minus(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (k, v) in &other.0 {
            out.add(k, -v);
        }
        out
    }

    fn accumulate(&mut self, other: &Self, factor: f64) {
        for (k, v) in &other.0 {
            self.add(k, factor * v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub estimate: f64,
    pub se: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl ContrastResult {
    pub fn from_estimate(estimate: f64, se: f64, level: f64) -> Result<Self, ContrastError> {
        if !valid_level(level) {
            return Err(ContrastError::InvalidLevel(level));
        }
        let half = normal_critical(level) * se;
        Ok(ContrastResult {
            estimate,
            se,
            lower: estimate - half,
            upper: estimate + half,
            level,
        })
    }
}

/// Area-under-the-curve weights, in years, for each visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QalyWeights {
    /// Trapezoid weights before discounting; they sum to the study duration.
    pub undiscounted: Vec<f64>,
    pub discount: Vec<f64>,
}

impl QalyWeights {
    /// Discounted weights.
    pub fn values(&self) -> Vec<f64> {
        self.undiscounted.iter().zip(&self.discount).map(|(w, d)| w * d).collect()
    }

    pub fn len(&self) -> usize {
        self.undiscounted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.undiscounted.is_empty()
    }
}

/// Trapezoid rule: each interval's half-width goes to both of its end visits.
pub fn qaly_weights(visit_times: &[f64], discount: Option<&[f64]>) -> Result<QalyWeights, ContrastError> {
    let j = visit_times.len();
    if j < 2 {
        return Err(ContrastError::TooFewVisits(j));
    }
    validate_schedule(visit_times).map_err(|e| match e {
        DataError::InvalidSchedule(msg) => ContrastError::Schedule(msg),
        other => ContrastError::Schedule(other.to_string()),
    })?;
    let half: Vec<f64> = visit_times.windows(2).map(|w| (w[1] - w[0]) / 2.0).collect();
    let mut weights = vec![0.0; j];
    for (i, h) in half.iter().enumerate() {
        weights[i] += h;
        weights[i + 1] += h;
    }
    let discount = match discount {
        None => vec![1.0; j],
        Some(d) if d.len() != j => {
            return Err(ContrastError::LengthMismatch {
                what: "discount multipliers",
                expected: j,
                found: d.len(),
            })
        }
        Some(d) if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) => return Err(ContrastError::InvalidDiscount),
        Some(d) => d.to_vec(),
    };
    Ok(QalyWeights {
        undiscounted: weights,
        discount,
    })
}

pub fn auc(values: &[f64], weights: &QalyWeights) -> Result<f64, ContrastError> {
    if values.len() != weights.len() {
        return Err(ContrastError::LengthMismatch {
            what: "values",
            expected: weights.len(),
            found: values.len(),
        });
    }
    Ok(values.iter().zip(weights.values()).map(|(v, w)| v * w).sum())
}

/// `c'β` with standard error `sqrt(c' V c)` and a normal-quantile interval.
pub fn linear_contrast(fit: &FittedMmrm, weights: &ContrastWeights, level: f64) -> Result<ContrastResult, ContrastError> {
    if weights.is_empty() {
        return Err(ContrastError::EmptyWeights);
    }
    if !valid_level(level) {
        return Err(ContrastError::InvalidLevel(level));
    }
    let mut c = vec![0.0; fit.beta.len()];
    for (label, w) in &weights.0 {
        let i = fit.index_of(label).ok_or_else(|| ContrastError::UnknownLabel(label.clone()))?;
        c[i] = *w;
    }
    let estimate: f64 = c.iter().zip(&fit.beta).map(|(a, b)| a * b).sum();
    let mut var = 0.0;
    for (i, ci) in c.iter().enumerate() {
        if *ci == 0.0 {
            continue;
        }
        for (j, cj) in c.iter().enumerate() {
            var += ci * fit.vcov_beta[i][j] * cj;
        }
    }
    ContrastResult::from_estimate(estimate, var.max(0.0).sqrt(), level)
}

/// Weights for the model-based mean of `arm` at 0-based `visit`, with covariates held at
/// their sample means.
pub fn mean_weights(fit: &FittedMmrm, arm: Arm, visit: usize) -> ContrastWeights {
    let mut w = ContrastWeights::unit(&time_label(visit));
    if let Some(label) = fit.treatment_label(arm, visit) {
        w.add(&label, 1.0);
    }
    for (name, mean) in fit.spec.extra_covariates.iter().zip(&fit.covariate_means) {
        w.add(name, *mean);
    }
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalMean {
    pub arm: Arm,
    /// 1-based.
    pub visit: usize,
    pub result: ContrastResult,
}

pub fn marginal_means(fit: &FittedMmrm, level: f64) -> Result<Vec<MarginalMean>, ContrastError> {
    let mut out = Vec::with_capacity(2 * fit.n_visits);
    for arm in Arm::BOTH {
        for visit in 0..fit.n_visits {
            out.push(MarginalMean {
                arm,
                visit: visit + 1,
                result: linear_contrast(fit, &mean_weights(fit, arm, visit), level)?,
            });
        }
    }
    Ok(out)
}

/// Control, intervention and intervention-minus-control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmContrasts {
    pub control: ContrastResult,
    pub intervention: ContrastResult,
    pub incremental: ContrastResult,
}

impl ArmContrasts {
    pub fn arm(&self, arm: Arm) -> &ContrastResult {
        match arm {
            Arm::Control => &self.control,
            Arm::Intervention => &self.intervention,
        }
    }
}

fn arm_triple(
    fit: &FittedMmrm,
    weights: [ContrastWeights; 2],
    level: f64,
) -> Result<ArmContrasts, ContrastError> {
    let incremental = weights[1].minus(&weights[0]);
    Ok(ArmContrasts {
        control: linear_contrast(fit, &weights[0], level)?,
        intervention: linear_contrast(fit, &weights[1], level)?,
        incremental: linear_contrast(fit, &incremental, level)?,
    })
}

fn check_outcome(fit: &FittedMmrm, expected: Outcome) -> Result<(), ContrastError> {
    if fit.spec.outcome != expected {
        return Err(ContrastError::WrongOutcome {
            expected,
            found: fit.spec.outcome,
        });
    }
    Ok(())
}

fn qaly_arm_weights(fit: &FittedMmrm, w: &QalyWeights, arm: Arm) -> Result<ContrastWeights, ContrastError> {
    if w.len() != fit.n_visits {
        return Err(ContrastError::LengthMismatch {
            what: "QALY weights",
            expected: fit.n_visits,
            found: w.len(),
        });
    }
    let mut out = ContrastWeights::new();
    for (visit, weight) in w.values().into_iter().enumerate() {
        out.accumulate(&mean_weights(fit, arm, visit), weight);
    }
    Ok(out)
}

/// Weights of the QALY difference on the treatment-by-visit coefficients. Labels with a
/// zero weight (the covariates and visit means, which cancel) are dropped.
pub fn incremental_qaly_weights(fit: &FittedMmrm, w: &QalyWeights) -> Result<ContrastWeights, ContrastError> {
    let diff = qaly_arm_weights(fit, w, Arm::Intervention)?.minus(&qaly_arm_weights(fit, w, Arm::Control)?);
    Ok(ContrastWeights(diff.0.into_iter().filter(|(_, v)| *v != 0.0).collect()))
}

pub fn qaly_by_arm(fit_u: &FittedMmrm, w: &QalyWeights, level: f64) -> Result<ArmContrasts, ContrastError> {
    check_outcome(fit_u, Outcome::Utility)?;
    let weights = [
        qaly_arm_weights(fit_u, w, Arm::Control)?,
        qaly_arm_weights(fit_u, w, Arm::Intervention)?,
    ];
    let mut triple = arm_triple(fit_u, weights, level)?;
    // the increment is a pure interaction contrast; recompute it without the cancelled terms
    triple.incremental = linear_contrast(fit_u, &nonempty(incremental_qaly_weights(fit_u, w)?, fit_u), level)?;
    Ok(triple)
}

fn nonempty(w: ContrastWeights, fit: &FittedMmrm) -> ContrastWeights {
    if w.is_empty() {
        // no treatment terms: a zero-weighted contrast on the first coefficient
        let mut z = ContrastWeights::new();
        z.0.insert(fit.coefficients[0].clone(), 0.0);
        z
    } else {
        w
    }
}

fn cost_arm_weights(fit: &FittedMmrm, arm: Arm, include_baseline: bool) -> ContrastWeights {
    let first = usize::from(!include_baseline);
    let mut out = ContrastWeights::new();
    for visit in first..fit.n_visits {
        out.accumulate(&mean_weights(fit, arm, visit), 1.0);
    }
    out
}

/// Totals over follow-up visits; the baseline visit only when `include_baseline`.
pub fn totalcost_by_arm(fit_c: &FittedMmrm, include_baseline: bool, level: f64) -> Result<ArmContrasts, ContrastError> {
    check_outcome(fit_c, Outcome::Cost)?;
    let weights = [
        cost_arm_weights(fit_c, Arm::Control, include_baseline),
        cost_arm_weights(fit_c, Arm::Intervention, include_baseline),
    ];
    let mut triple = arm_triple(fit_c, weights, level)?;
    let inc = cost_arm_weights(fit_c, Arm::Intervention, include_baseline)
        .minus(&cost_arm_weights(fit_c, Arm::Control, include_baseline));
    let inc = ContrastWeights(inc.0.into_iter().filter(|(_, v)| *v != 0.0).collect());
    triple.incremental = linear_contrast(fit_c, &nonempty(inc, fit_c), level)?;
    Ok(triple)
}

/// One row of the summary: a quantity for both arms and the difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub quantity: String,
    pub control: ContrastResult,
    pub intervention: ContrastResult,
    pub incremental: ContrastResult,
}

/// Per-visit marginal means, QALYs and total costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub level: f64,
    pub include_baseline_cost: bool,
    pub rows: Vec<SummaryRow>,
}

pub fn summary_table(
    fit_u: &FittedMmrm,
    fit_c: &FittedMmrm,
    w: &QalyWeights,
    include_baseline_cost: bool,
    level: f64,
) -> Result<SummaryTable, ContrastError> {
    check_outcome(fit_u, Outcome::Utility)?;
    check_outcome(fit_c, Outcome::Cost)?;
    let mut rows = Vec::new();
    for fit in [fit_u, fit_c] {
        for visit in 0..fit.n_visits {
            let weights = [mean_weights(fit, Arm::Control, visit), mean_weights(fit, Arm::Intervention, visit)];
            let t = arm_triple(fit, weights, level)?;
            rows.push(SummaryRow {
                quantity: format!("{}_{}", fit.spec.outcome.letter().to_ascii_uppercase(), visit + 1),
                control: t.control,
                intervention: t.intervention,
                incremental: t.incremental,
            });
        }
    }
    for (name, t) in [
        ("QALYs", qaly_by_arm(fit_u, w, level)?),
        ("Total costs", totalcost_by_arm(fit_c, include_baseline_cost, level)?),
    ] {
        rows.push(SummaryRow {
            quantity: name.to_string(),
            control: t.control,
            intervention: t.intervention,
            incremental: t.incremental,
        });
    }
    Ok(SummaryTable {
        level,
        include_baseline_cost,
        rows,
    })
}

impl SummaryTable {
    pub fn row(&self, quantity: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn write_delimited<W: Write>(&self, mut sink: W, delimiter: u8) -> Result<(), ContrastError> {
        let d = delimiter as char;
        let mut header = vec!["quantity".to_string()];
        for col in ["control", "intervention", "incremental"] {
            for part in ["estimate", "se", "lower", "upper"] {
                header.push(format!("{col}_{part}"));
            }
        }
        writeln!(sink, "{}", header.join(&d.to_string()))?;
        for row in &self.rows {
            let mut fields = vec![row.quantity.clone()];
            for r in [&row.control, &row.intervention, &row.incremental] {
                fields.extend([r.estimate, r.se, r.lower, r.upper].iter().map(|v| v.to_string()));
            }
            writeln!(sink, "{}", fields.join(&d.to_string()))?;
        }
        Ok(())
    }
}
