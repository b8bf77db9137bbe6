//! Bootstrap cost-effectiveness: resample subjects within arm, refit both outcome models,
//! and summarise the (ΔE, ΔC) cloud as an ICER, percentile intervals and a CEAC.

mod plot;

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use plot::{render_plots, Plots};

use crate::contrasts::{qaly_by_arm, totalcost_by_arm, ContrastError, QalyWeights};
use crate::data::{Arm, SubjectRecord, TrialDataset};
use crate::linalg::valid_level;
use crate::mmrm::{fit_with, FitOptions, MmrmError, MmrmSpec};
use crate::rng::keyed_stream;

/// Replicates allowed to fail before the bootstrap is abandoned.
pub const MAX_FAILED_FRACTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum CeaError {
    #[error("full-data fit failed: {0}")]
    PointFit(#[source] MmrmError),
    #[error(transparent)]
    Contrast(#[from] ContrastError),
    #[error("{failed} of {total} bootstrap replicates failed (limit 5%); first failure: {first}")]
    TooManyFailures { failed: usize, total: usize, first: String },
    #[error("bootstrap needs at least one replicate")]
    NoReplicates,
    #[error("no bootstrap draws to summarise")]
    EmptyDraws,
    #[error("willingness-to-pay thresholds must be finite and non-negative, got {0}")]
    InvalidThreshold(f64),
    #[error("confidence level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Both outcome models and how their contrasts are formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeaModel {
    pub utility: MmrmSpec,
    pub cost: MmrmSpec,
    pub weights: QalyWeights,
    #[serde(default)]
    pub include_baseline_cost: bool,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

fn default_max_iterations() -> usize {
    FitOptions::default().max_iterations
}

impl CeaModel {
    pub fn new(utility: MmrmSpec, cost: MmrmSpec, weights: QalyWeights) -> Self {
        CeaModel {
            utility,
            cost,
            weights,
            include_baseline_cost: false,
            max_iterations: default_max_iterations(),
        }
    }
}

/// Estimates from one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    /// 0 for the full-data estimate.
    pub replicate: usize,
    pub d_e: f64,
    pub d_c: f64,
    pub qaly: [f64; 2],
    pub total_cost: [f64; 2],
}

/// Fits both models and returns the point estimates of QALYs and total costs.
pub fn estimate(data: &TrialDataset, model: &CeaModel) -> Result<Draw, CeaError> {
    estimate_inner(data, model).map_err(|e| match e {
        Failure::Fit(e) => CeaError::PointFit(e),
        Failure::Contrast(e) => CeaError::Contrast(e),
    })
}

enum Failure {
    Fit(MmrmError),
    Contrast(ContrastError),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Fit(e) => e.fmt(f),
            Failure::Contrast(e) => e.fmt(f),
        }
    }
}

fn estimate_inner(data: &TrialDataset, model: &CeaModel) -> Result<Draw, Failure> {
    let opts = FitOptions {
        max_iterations: model.max_iterations,
    };
    let fit_u = fit_with(data, &model.utility, &opts).map_err(Failure::Fit)?;
    let fit_c = fit_with(data, &model.cost, &opts).map_err(Failure::Fit)?;
    let level = 0.95;
    let q = qaly_by_arm(&fit_u, &model.weights, level).map_err(Failure::Contrast)?;
    let c = totalcost_by_arm(&fit_c, model.include_baseline_cost, level).map_err(Failure::Contrast)?;
    Ok(Draw {
        replicate: 0,
        d_e: q.incremental.estimate,
        d_c: c.incremental.estimate,
        qaly: [q.control.estimate, q.intervention.estimate],
        total_cost: [c.control.estimate, c.intervention.estimate],
    })
}

/// Chooses, for each arm, which of that arm's subjects fill its slots in a replicate.
pub trait Resampler: Sync {
    /// `arm_size` indices in `0..arm_size`.
    fn draw(&self, arm_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize>;
}

/// Uniform sampling with replacement.
#[derive(Debug, Clone, Copy, Default)]
pub struct WithReplacement;

impl Resampler for WithReplacement {
    fn draw(&self, arm_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..arm_size).map(|_| rng.random_range(0..arm_size)).collect()
    }
}

/// Every replicate is the original sample.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Resampler for Identity {
    fn draw(&self, arm_size: usize, _rng: &mut ChaCha8Rng) -> Vec<usize> {
        (0..arm_size).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeaDraws {
    pub seed: u64,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub point: Draw,
    /// Successful replicates, in replicate order.
    pub draws: Vec<Draw>,
}

/// Subjects in canonical (id) order, with each arm's slot positions.
struct Canonical<'a> {
    subjects: Vec<&'a SubjectRecord>,
    slots: [Vec<usize>; 2],
    width: usize,
}

impl<'a> Canonical<'a> {
    fn new(data: &'a TrialDataset) -> Self {
        let mut subjects: Vec<&SubjectRecord> = data.subjects().iter().collect();
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        let mut slots = [Vec::new(), Vec::new()];
        for (i, s) in subjects.iter().enumerate() {
            slots[s.arm.index()].push(i);
        }
        let width = subjects.len().max(1).to_string().len();
        Canonical { subjects, slots, width }
    }

    /// Slot `k` of arm `a` receives the `draws[a][k]`-th subject of arm `a`; ids become
    /// slot positions so the replicate keeps the canonical ordering.
    fn replicate(&self, data: &TrialDataset, draws: &[Vec<usize>; 2]) -> TrialDataset {
        let mut out: Vec<Option<SubjectRecord>> = vec![None; self.subjects.len()];
        for arm in Arm::BOTH {
            let slots = &self.slots[arm.index()];
            for (k, &pos) in slots.iter().enumerate() {
                let mut s = self.subjects[slots[draws[arm.index()][k]]].clone();
                s.id = format!("{:0w$}", pos, w = self.width);
                out[pos] = Some(s);
            }
        }
        data.with_subjects(out.into_iter().map(Option::unwrap).collect())
            .expect("replicate of a valid dataset is valid")
    }
}

pub fn bootstrap_cea(
    data: &TrialDataset,
    model: &CeaModel,
    n_replicates: usize,
    seed: u64,
) -> Result<CeaDraws, CeaError> {
    bootstrap_with(data, model, n_replicates, seed, &WithReplacement)
}

/// Replicate `b` (1-based) draws from the stream keyed by `(seed, b)`, so the result does
/// not depend on how replicates are scheduled.
pub fn bootstrap_with<R: Resampler>(
    data: &TrialDataset,
    model: &CeaModel,
    n_replicates: usize,
    seed: u64,
    resampler: &R,
) -> Result<CeaDraws, CeaError> {
    if n_replicates == 0 {
        return Err(CeaError::NoReplicates);
    }
    let point = estimate(data, model)?;
    let canonical = Canonical::new(data);
    let results: Vec<Result<Draw, String>> = (1..=n_replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = keyed_stream(seed, b as u64);
            let draws = [
                resampler.draw(canonical.slots[0].len(), &mut rng),
                resampler.draw(canonical.slots[1].len(), &mut rng),
            ];
            let replicate = canonical.replicate(data, &draws);
            estimate_inner(&replicate, model)
                .map(|d| Draw { replicate: b, ..d })
                .map_err(|e| format!("replicate {b}: {e}"))
        })
        .collect();

    let mut draws = Vec::with_capacity(n_replicates);
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(d) => draws.push(d),
            Err(e) => failures.push(e),
        }
    }
    if failures.len() as f64 > MAX_FAILED_FRACTION * n_replicates as f64 {
        return Err(CeaError::TooManyFailures {
            failed: failures.len(),
            total: n_replicates,
            first: failures.swap_remove(0),
        });
    }
    Ok(CeaDraws {
        seed,
        n_replicates,
        n_failed: failures.len(),
        point,
        draws,
    })
}

impl CeaDraws {
    pub fn write_delimited<W: Write>(&self, mut sink: W, delimiter: u8) -> Result<(), CeaError> {
        let d = (delimiter as char).to_string();
        writeln!(sink, "{}", ["replicate", "dE", "dC", "qaly0", "qaly1", "tc0", "tc1"].join(&d))?;
        for r in &self.draws {
            let fields = [
                r.replicate.to_string(),
                r.d_e.to_string(),
                r.d_c.to_string(),
                r.qaly[0].to_string(),
                r.qaly[1].to_string(),
                r.total_cost[0].to_string(),
                r.total_cost[1].to_string(),
            ];
            writeln!(sink, "{}", fields.join(&d))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quadrant {
    /// More effective, more costly.
    NE,
    /// More effective, less costly: dominant.
    SE,
    /// Less effective, more costly: dominated.
    NW,
    /// Less effective, less costly.
    SW,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Icer {
    /// `ΔC / ΔE`; `None` when `ΔE = 0`.
    pub value: Option<f64>,
    pub quadrant: Quadrant,
    /// The ratio is only a trade-off in the NE and SW quadrants.
    pub interpretable: bool,
}

/// Zero increments count as east / north.
pub fn icer(d_e: f64, d_c: f64) -> Icer {
    let quadrant = match (d_e >= 0.0, d_c >= 0.0) {
        (true, true) => Quadrant::NE,
        (true, false) => Quadrant::SE,
        (false, true) => Quadrant::NW,
        (false, false) => Quadrant::SW,
    };
    let value = (d_e != 0.0).then(|| d_c / d_e);
    Icer {
        value,
        quadrant,
        interpretable: value.is_some() && matches!(quadrant, Quadrant::NE | Quadrant::SW),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeacPoint {
    pub k: f64,
    pub probability: f64,
}

fn check_k(k: f64) -> Result<(), CeaError> {
    if k.is_finite() && k >= 0.0 {
        Ok(())
    } else {
        Err(CeaError::InvalidThreshold(k))
    }
}

/// Share of draws with `k·ΔE − ΔC > 0`; ties are not cost-effective.
pub fn prob_cost_effective(draws: &[Draw], k: f64) -> Result<f64, CeaError> {
    check_k(k)?;
    if draws.is_empty() {
        return Err(CeaError::EmptyDraws);
    }
    let hits = draws.iter().filter(|d| k * d.d_e - d.d_c > 0.0).count();
    Ok(hits as f64 / draws.len() as f64)
}

pub fn ceac(draws: &[Draw], k_grid: &[f64]) -> Result<Vec<CeacPoint>, CeaError> {
    if draws.is_empty() {
        return Err(CeaError::EmptyDraws);
    }
    k_grid
        .iter()
        .map(|&k| prob_cost_effective(draws, k).map(|probability| CeacPoint { k, probability }))
        .collect()
}

/// Smallest threshold past which no draw changes sides: above every ratio `ΔC/ΔE`.
pub fn saturation_threshold(draws: &[Draw]) -> f64 {
    let max_ratio = draws
        .iter()
        .filter(|d| d.d_e != 0.0)
        .map(|d| d.d_c / d.d_e)
        .fold(0.0f64, f64::max);
    let k = max_ratio * (1.0 + 1e-9) + 1e-9;
    // make sure k·ΔE − ΔC has settled for every draw despite rounding
    let mut k = k;
    while draws.iter().any(|d| d.d_e > 0.0 && k * d.d_e - d.d_c <= 0.0) {
        k = k * 2.0 + 1.0;
    }
    k
}

/// `lo..=hi` in steps of `step`, with `hi` included when it falls on the grid.
pub fn k_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, CeaError> {
    check_k(lo)?;
    check_k(hi)?;
    if !(step.is_finite() && step > 0.0) || hi < lo {
        return Err(CeaError::InvalidThreshold(step));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| lo + i as f64 * step).collect())
}

/// Order statistic at rank `ceil(p·n)` (1-based, at least 1).
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Equal-tailed nearest-rank percentile interval.
pub fn percentile_ci(values: &[f64], level: f64) -> Result<(f64, f64), CeaError> {
    if !valid_level(level) {
        return Err(CeaError::InvalidLevel(level));
    }
    if values.is_empty() {
        return Err(CeaError::EmptyDraws);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 1.0 - level;
    Ok((nearest_rank(&sorted, alpha / 2.0), nearest_rank(&sorted, 1.0 - alpha / 2.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeaSummary {
    pub point: Draw,
    pub icer: Icer,
    pub n_draws: usize,
    pub n_failed: usize,
    pub level: f64,
    pub d_e_interval: (f64, f64),
    pub d_c_interval: (f64, f64),
    pub prob_more_effective: f64,
    pub prob_cost_saving: f64,
    pub k_highlight: f64,
    pub prob_cost_effective_at_highlight: f64,
    pub ceac: Vec<CeacPoint>,
}

pub fn summarize(draws: &CeaDraws, k_grid: &[f64], k_highlight: f64, level: f64) -> Result<CeaSummary, CeaError> {
    let rows = &draws.draws;
    if rows.is_empty() {
        return Err(CeaError::EmptyDraws);
    }
    let n = rows.len() as f64;
    let d_e: Vec<f64> = rows.iter().map(|d| d.d_e).collect();
    let d_c: Vec<f64> = rows.iter().map(|d| d.d_c).collect();
    Ok(CeaSummary {
        point: draws.point,
        icer: icer(draws.point.d_e, draws.point.d_c),
        n_draws: rows.len(),
        n_failed: draws.n_failed,
        level,
        d_e_interval: percentile_ci(&d_e, level)?,
        d_c_interval: percentile_ci(&d_c, level)?,
        prob_more_effective: d_e.iter().filter(|v| **v > 0.0).count() as f64 / n,
        prob_cost_saving: d_c.iter().filter(|v| **v < 0.0).count() as f64 / n,
        k_highlight,
        prob_cost_effective_at_highlight: prob_cost_effective(rows, k_highlight)?,
        ceac: ceac(rows, k_grid)?,
    })
}
