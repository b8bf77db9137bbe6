//! Synthetic trials with known truth, and missingness mechanisms to apply to them.

mod study;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use study::{bias_study, BiasReport, MethodSummary, StudyOptions};

use crate::contrasts::{qaly_weights, ContrastError};
use crate::data::{default_arm_labels, Arm, DataError, Outcome, SubjectRecord, TrialDataset};
use crate::rng::keyed_stream;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0} covariance is not symmetric positive definite")]
    NotPositiveDefinite(&'static str),
    #[error("{what}: expected length {expected}, found {found}")]
    Shape {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("cross-correlation {0} outside [-1, 1]")]
    Correlation(f64),
    #[error("need at least 2 subjects per arm, got {0}")]
    TooFewSubjects(usize),
    #[error("missingness rate {0} outside [0, 1]")]
    Rate(f64),
    #[error("lognormal costs need positive means")]
    LogNormalMean,
    #[error("mechanisms apply to complete data; subject `{0}` has missing values")]
    IncompleteInput(String),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("bias study needs at least 100 simulations, got {0}")]
    TooFewSimulations(usize),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostDistribution {
    #[default]
    Normal,
    /// Multivariate lognormal with the configured means and covariance.
    Lognormal,
}

/// `P = 1 / (1 + exp(-(intercept + slope · (x - center) / scale)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Logistic {
    pub intercept: f64,
    pub slope: f64,
    #[serde(default)]
    pub center: f64,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Logistic {
    pub fn constant(p: f64) -> Self {
        Logistic {
            intercept: (p / (1.0 - p)).ln(),
            slope: 0.0,
            center: 0.0,
            scale: 1.0,
        }
    }

    pub fn probability(&self, x: f64) -> f64 {
        let eta = self.intercept + self.slope * (x - self.center) / self.scale;
        1.0 / (1.0 + (-eta).exp())
    }
}

fn utility_outcome() -> Outcome {
    Outcome::Utility
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Mechanism {
    #[default]
    None,
    /// Independent deletion of each slot with a per-visit rate for each outcome.
    Mcar { utility: Vec<f64>, cost: Vec<f64> },
    /// Each follow-up slot is deleted independently with a probability driven by the
    /// baseline value of the same outcome, per arm.
    MarBaseline { utility: [Logistic; 2], cost: [Logistic; 2] },
    /// Dropout at each follow-up visit with a hazard driven by the previous value of `on`;
    /// both outcomes are missing from then on.
    MarMonotone {
        hazard: [Logistic; 2],
        #[serde(default = "utility_outcome")]
        on: Outcome,
    },
}

impl Mechanism {
    /// The same MCAR rate at every slot.
    pub fn mcar(rate: f64, n_visits: usize) -> Self {
        Mechanism::Mcar {
            utility: vec![rate; n_visits],
            cost: vec![rate; n_visits],
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Mechanism::None => "none",
            Mechanism::Mcar { .. } => "mcar",
            Mechanism::MarBaseline { .. } => "mar-baseline",
            Mechanism::MarMonotone { .. } => "mar-monotone",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_per_arm: usize,
    pub visit_times: Vec<f64>,
    /// Control then intervention.
    pub utility_means: [Vec<f64>; 2],
    pub cost_means: [Vec<f64>; 2],
    pub utility_cov: Vec<Vec<f64>>,
    pub cost_cov: Vec<Vec<f64>>,
    /// Correlation between the utility and cost noise at the same visit.
    #[serde(default)]
    pub cross_correlation: f64,
    #[serde(default)]
    pub cost_distribution: CostDistribution,
    #[serde(default)]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub seed: u64,
}

/// Population values implied by a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    /// Weighted follow-up utility difference; the baseline term is excluded.
    pub d_qaly: f64,
    /// Difference in summed follow-up costs.
    pub d_cost: f64,
    pub qaly: [f64; 2],
    pub total_cost: [f64; 2],
}

fn to_matrix(rows: &[Vec<f64>], j: usize, what: &'static str) -> Result<DMatrix<f64>, SimError> {
    if rows.len() != j {
        return Err(SimError::Shape {
            what,
            expected: j,
            found: rows.len(),
        });
    }
    if let Some(r) = rows.iter().find(|r| r.len() != j) {
        return Err(SimError::Shape {
            what,
            expected: j,
            found: r.len(),
        });
    }
    Ok(DMatrix::from_fn(j, j, |a, b| rows[a][b]))
}

/// Symmetric square root of an SPD matrix.
fn sqrt_spd(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>, SimError> {
    let scale = m.diagonal().abs().max().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).abs().max() > 1e-12 * scale {
        return Err(SimError::NotPositiveDefinite(what));
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().any(|&l| !(l > 1e-12 * scale)) {
        return Err(SimError::NotPositiveDefinite(what));
    }
    let root = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.sqrt()));
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose())
}

/// Draw parameters checked against the configuration.
struct Generator {
    j: usize,
    u_mean: [DVector<f64>; 2],
    u_root: DMatrix<f64>,
    c_mean: [DVector<f64>; 2],
    /// Lognormal: log-scale root per arm; normal: the same root twice.
    c_root: [DMatrix<f64>; 2],
    lognormal: bool,
    rho: f64,
}

impl Generator {
    fn new(config: &SimConfig) -> Result<Self, SimError> {
        let j = config.visit_times.len();
        qaly_weights(&config.visit_times, None)?;
        if config.n_per_arm < 2 {
            return Err(SimError::TooFewSubjects(config.n_per_arm));
        }
        if !(-1.0..=1.0).contains(&config.cross_correlation) {
            return Err(SimError::Correlation(config.cross_correlation));
        }
        let vec = |v: &Vec<f64>, what| {
            if v.len() == j {
                Ok(DVector::from_column_slice(v))
            } else {
                Err(SimError::Shape {
                    what,
                    expected: j,
                    found: v.len(),
                })
            }
        };
        let u_mean = [vec(&config.utility_means[0], "utility means")?, vec(&config.utility_means[1], "utility means")?];
        let c_mean = [vec(&config.cost_means[0], "cost means")?, vec(&config.cost_means[1], "cost means")?];
        let u_root = sqrt_spd(&to_matrix(&config.utility_cov, j, "utility covariance")?, "utility")?;
        let c_cov = to_matrix(&config.cost_cov, j, "cost covariance")?;
        let lognormal = config.cost_distribution == CostDistribution::Lognormal;
        let c_root = if lognormal {
            let mut roots = Vec::new();
            for mean in &c_mean {
                if mean.iter().any(|m| !(*m > 0.0)) {
                    return Err(SimError::LogNormalMean);
                }
                let log_cov = DMatrix::from_fn(j, j, |a, b| (1.0 + c_cov[(a, b)] / (mean[a] * mean[b])).ln());
                roots.push(sqrt_spd(&log_cov, "log-scale cost")?);
            }
            [roots[0].clone(), roots[1].clone()]
        } else {
            let root = sqrt_spd(&c_cov, "cost")?;
            [root.clone(), root]
        };
        let c_mean = if lognormal {
            // log-scale location: ln μ − σ²/2
            let cov = &c_cov;
            c_mean.map(|m| DVector::from_fn(j, |a, _| m[a].ln() - 0.5 * (1.0 + cov[(a, a)] / (m[a] * m[a])).ln()))
        } else {
            c_mean
        };
        Ok(Generator {
            j,
            u_mean,
            u_root,
            c_mean,
            c_root,
            lognormal,
            rho: config.cross_correlation,
        })
    }

    fn subject(&self, arm: Arm, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let a = arm.index();
        let z_u = DVector::from_fn(self.j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let w = DVector::from_fn(self.j, |_, _| rng.sample::<f64, _>(StandardNormal));
        let z_c = &z_u * self.rho + w * (1.0 - self.rho * self.rho).sqrt();
        let u = &self.u_mean[a] + &self.u_root * z_u;
        let mut c = &self.c_mean[a] + &self.c_root[a] * z_c;
        if self.lognormal {
            c.apply(|v| *v = v.exp());
        }
        (u.iter().copied().collect(), c.iter().copied().collect())
    }
}

pub fn truth(config: &SimConfig) -> Result<Truth, SimError> {
    let w = qaly_weights(&config.visit_times, None)?.values();
    let qaly = [0, 1].map(|a| config.utility_means[a].iter().zip(&w).map(|(m, w)| m * w).sum::<f64>());
    let total_cost = [0, 1].map(|a| config.cost_means[a][1..].iter().sum::<f64>());
    let d_qaly = (1..w.len())
        .map(|j| w[j] * (config.utility_means[1][j] - config.utility_means[0][j]))
        .sum();
    let d_cost = (1..w.len()).map(|j| config.cost_means[1][j] - config.cost_means[0][j]).sum();
    Ok(Truth {
        d_qaly,
        d_cost,
        qaly,
        total_cost,
    })
}

/// Complete data drawn from the configuration with `config.seed`. Subjects are listed
/// control first; ids are `s` and a zero-padded running number.
pub fn gen_trial(config: &SimConfig) -> Result<(TrialDataset, Truth), SimError> {
    let generator = Generator::new(config)?;
    let truth = truth(config)?;
    let mut rng = keyed_stream(config.seed, 0);
    let width = (2 * config.n_per_arm).to_string().len();
    let mut subjects = Vec::with_capacity(2 * config.n_per_arm);
    for arm in Arm::BOTH {
        for _ in 0..config.n_per_arm {
            let (u, c) = generator.subject(arm, &mut rng);
            let id = format!("s{:0w$}", subjects.len() + 1, w = width);
            subjects.push(SubjectRecord::new(id, arm, u.into_iter().map(Some).collect(), c.into_iter().map(Some).collect()));
        }
    }
    let data = TrialDataset::new(subjects, config.visit_times.clone(), default_arm_labels())?;
    Ok((data, truth))
}

fn check_rates(rates: &[f64], j: usize, what: &'static str) -> Result<(), SimError> {
    if rates.len() != j {
        return Err(SimError::Shape {
            what,
            expected: j,
            found: rates.len(),
        });
    }
    match rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        Some(r) => Err(SimError::Rate(*r)),
        None => Ok(()),
    }
}

/// Deletes values from complete data. Every deletion depends only on values that stay
/// observed, so the result is missing at random by construction.
pub fn apply_mechanism(data: &TrialDataset, mechanism: &Mechanism, seed: u64) -> Result<TrialDataset, SimError> {
    if let Some(s) = data.subjects().iter().find(|s| !s.is_complete()) {
        return Err(SimError::IncompleteInput(s.id.clone()));
    }
    let j = data.n_visits();
    let mut rng = keyed_stream(seed, 0);
    let mut subjects = data.subjects().to_vec();
    match mechanism {
        Mechanism::None => {}
        Mechanism::Mcar { utility, cost } => {
            check_rates(utility, j, "utility rates")?;
            check_rates(cost, j, "cost rates")?;
            for s in &mut subjects {
                for (outcome, rates) in [(Outcome::Utility, utility), (Outcome::Cost, cost)] {
                    let slots = s.outcome_mut(outcome);
                    for (v, rate) in rates.iter().enumerate() {
                        if rng.random::<f64>() < *rate {
                            slots[v] = None;
                        }
                    }
                }
            }
        }
        Mechanism::MarBaseline { utility, cost } => {
            for s in &mut subjects {
                let a = s.arm.index();
                for (outcome, model) in [(Outcome::Utility, &utility[a]), (Outcome::Cost, &cost[a])] {
                    let slots = s.outcome_mut(outcome);
                    let p = model.probability(slots[0].expect("complete"));
                    for slot in slots.iter_mut().skip(1) {
                        if rng.random::<f64>() < p {
                            *slot = None;
                        }
                    }
                }
            }
        }
        Mechanism::MarMonotone { hazard, on } => {
            for s in &mut subjects {
                let model = &hazard[s.arm.index()];
                let mut dropped = false;
                for v in 1..j {
                    if !dropped {
                        let previous = s.outcome(*on)[v - 1].expect("observed before dropout");
                        dropped = rng.random::<f64>() < model.probability(previous);
                    }
                    if dropped {
                        s.utility[v] = None;
                        s.cost[v] = None;
                    }
                }
            }
        }
    }
    Ok(data.with_subjects(subjects)?)
}

/// Share of subjects with at least one missing slot.
pub fn incomplete_fraction(data: &TrialDataset) -> f64 {
    let n = data.n_subjects().max(1) as f64;
    data.subjects().iter().filter(|s| !s.is_complete()).count() as f64 / n
}

/// Example configuration: three visits over nine months, utilities and costs shaped like a
/// small depression trial, with dropout related to baseline values.
pub fn example_config() -> SimConfig {
    let ar = |sd: [f64; 3], r: f64| -> Vec<Vec<f64>> {
        (0..3)
            .map(|a| (0..3).map(|b| sd[a] * sd[b] * r.powi((a as i32 - b as i32).abs())).collect())
            .collect()
    };
    let dropout = |slope: f64, intercept: f64, center: f64, scale: f64| Logistic {
        intercept,
        slope,
        center,
        scale,
    };
    SimConfig {
        n_per_arm: 100,
        visit_times: vec![0.0, 0.25, 0.75],
        utility_means: [vec![0.67, 0.73, 0.73], vec![0.67, 0.75, 0.78]],
        cost_means: [vec![1500.0, 1400.0, 2100.0], vec![1500.0, 1250.0, 2700.0]],
        utility_cov: ar([0.27, 0.28, 0.27], 0.7),
        cost_cov: ar([3000.0, 3000.0, 4000.0], 0.5),
        cross_correlation: -0.6,
        cost_distribution: CostDistribution::Normal,
        mechanism: Mechanism::MarBaseline {
            utility: [dropout(1.5, -2.6, 0.67, 0.27), dropout(-1.5, -2.6, 0.67, 0.27)],
            cost: [dropout(1.5, -2.6, 1500.0, 3000.0), dropout(-1.5, -2.6, 1500.0, 3000.0)],
        },
        seed: 2024,
    }
}
