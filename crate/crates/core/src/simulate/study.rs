use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{apply_mechanism, gen_trial, incomplete_fraction, SimConfig, SimError, Truth};
use crate::comparators::{cca, lmm_analysis, mi_analyze, mi_impute, Analysis, Method, MiOptions, Quantity};
use crate::contrasts::qaly_weights;
use crate::data::Outcome;
use crate::linalg::{normal_critical, valid_level};
use crate::mmrm::MmrmSpec;
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub mi_imputations: usize,
    pub level: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        StudyOptions {
            mi_imputations: 20,
            level: 0.95,
        }
    }
}

/// Repeated-sampling performance of one method for one increment. Every summary comes
/// with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub quantity: Quantity,
    pub truth: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_estimate: f64,
    pub bias: f64,
    pub bias_mcse: f64,
    pub empirical_se: f64,
    pub empirical_se_mcse: f64,
    pub mean_model_se: f64,
    pub model_se_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub n_sims: usize,
    pub n_per_arm: usize,
    pub mechanism: String,
    pub seed: u64,
    pub options: StudyOptions,
    pub truth: Truth,
    /// Mean share of subjects with any missing slot.
    pub incomplete_fraction: f64,
    pub rows: Vec<MethodSummary>,
}

impl BiasReport {
    pub fn get(&self, method: Method, quantity: Quantity) -> Option<&MethodSummary> {
        self.rows.iter().find(|r| r.method == method && r.quantity == quantity)
    }

    pub fn write_delimited<W: Write>(&self, mut sink: W, delimiter: u8) -> std::io::Result<()> {
        let d = (delimiter as char).to_string();
        let header = [
            "method",
            "quantity",
            "truth",
            "n_ok",
            "n_failed",
            "mean_estimate",
            "bias",
            "bias_mcse",
            "empirical_se",
            "empirical_se_mcse",
            "mean_model_se",
            "model_se_mcse",
            "coverage",
            "coverage_mcse",
        ];
        writeln!(sink, "{}", header.join(&d))?;
        for r in &self.rows {
            let fields = [
                r.method.to_string(),
                r.quantity.to_string(),
                r.truth.to_string(),
                r.n_ok.to_string(),
                r.n_failed.to_string(),
                r.mean_estimate.to_string(),
                r.bias.to_string(),
                r.bias_mcse.to_string(),
                r.empirical_se.to_string(),
                r.empirical_se_mcse.to_string(),
                r.mean_model_se.to_string(),
                r.model_se_mcse.to_string(),
                r.coverage.to_string(),
                r.coverage_mcse.to_string(),
            ];
            writeln!(sink, "{}", fields.join(&d))?;
        }
        Ok(())
    }
}

struct SimOutcome {
    incomplete: f64,
    /// Per method, in the order requested; `None` when the analysis failed.
    results: Vec<Option<Analysis>>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Simulation `s` uses trial seed `derive_seed(config.seed, s)`; deletion and imputation
/// streams are derived from that.
pub fn bias_study(config: &SimConfig, n_sims: usize, methods: &[Method], opts: &StudyOptions) -> Result<BiasReport, SimError> {
    if n_sims < 100 {
        return Err(SimError::TooFewSimulations(n_sims));
    }
    if !valid_level(opts.level) {
        return Err(SimError::InvalidLevel(opts.level));
    }
    // validates the configuration once up front
    let (_, truth) = gen_trial(config)?;
    let w = qaly_weights(&config.visit_times, None)?;
    let spec_u = MmrmSpec::new(Outcome::Utility);
    let spec_c = MmrmSpec::new(Outcome::Cost);

    let outcomes: Vec<SimOutcome> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let seed = derive_seed(config.seed, s as u64);
            let trial = SimConfig { seed, ..config.clone() };
            let (complete, _) = gen_trial(&trial)?;
            let data = apply_mechanism(&complete, &config.mechanism, derive_seed(seed, 1))?;
            let results = methods
                .iter()
                .map(|m| match m {
                    Method::Cca => cca(&data, &w).ok(),
                    Method::Lmm => lmm_analysis(&data, &w, &spec_u, &spec_c).ok(),
                    Method::Mi => mi_impute(&data, opts.mi_imputations, derive_seed(seed, 2), &MiOptions::default())
                        .and_then(|imp| mi_analyze(&imp, &w))
                        .ok()
                        .map(|a| a.pooled),
                })
                .collect();
            Ok(SimOutcome {
                incomplete: incomplete_fraction(&data),
                results,
            })
        })
        .collect::<Result<_, SimError>>()?;

    let z = normal_critical(opts.level);
    let mut rows = Vec::new();
    for (k, &method) in methods.iter().enumerate() {
        for (quantity, target) in [(Quantity::Qalys, truth.d_qaly), (Quantity::TotalCosts, truth.d_cost)] {
            let ok: Vec<(f64, f64)> = outcomes
                .iter()
                .filter_map(|o| o.results[k].as_ref())
                .map(|a| {
                    let e = a.get(quantity).incremental;
                    (e.estimate, e.se)
                })
                .collect();
            let n = ok.len();
            let est: Vec<f64> = ok.iter().map(|p| p.0).collect();
            let ses: Vec<f64> = ok.iter().map(|p| p.1).collect();
            let nf = n as f64;
            let covered = ok.iter().filter(|(e, se)| (e - target).abs() <= z * se).count() as f64 / nf;
            let emp = sd(&est);
            rows.push(MethodSummary {
                method,
                quantity,
                truth: target,
                n_ok: n,
                n_failed: n_sims - n,
                mean_estimate: mean(&est),
                bias: mean(&est) - target,
                bias_mcse: emp / nf.sqrt(),
                empirical_se: emp,
                empirical_se_mcse: emp / (2.0 * (nf - 1.0)).sqrt(),
                mean_model_se: mean(&ses),
                model_se_mcse: sd(&ses) / nf.sqrt(),
                coverage: covered,
                coverage_mcse: (covered * (1.0 - covered) / nf).sqrt(),
            });
        }
    }

    Ok(BiasReport {
        n_sims,
        n_per_arm: config.n_per_arm,
        mechanism: config.mechanism.label().to_string(),
        seed: config.seed,
        options: *opts,
        truth,
        incomplete_fraction: mean(&outcomes.iter().map(|o| o.incomplete).collect::<Vec<_>>()),
        rows,
    })
}
