use std::fs::File;
use std::io::BufReader;

use serde::Serialize;
use trialcea::cea::{bootstrap_cea, render_plots, summarize, CeaModel};
use trialcea::comparators::compare_methods;
use trialcea::contrasts::{qaly_weights, summary_table, QalyWeights};
use trialcea::data::{descriptives, load_long, pattern_table, write_long, Outcome, WriteOptions};
use trialcea::mmrm::{fit_with, wald_ci, FitOptions, MmrmError};
use trialcea::rng::derive_seed;
use trialcea::simulate::{apply_mechanism, bias_study, gen_trial, StudyOptions};
use trialcea::{FittedMmrm, MmrmSpec, TrialDataset};

use crate::config::RunConfig;
use crate::error::{CliError, Kind};
use crate::output::OutDir;

fn warn(message: impl std::fmt::Display) {
    eprintln!("warning: {message}");
}

const SHOWN_WARNINGS: usize = 5;

fn load(c: &RunConfig) -> Result<TrialDataset, CliError> {
    let path = c.input.as_ref().ok_or_else(|| CliError::input("no input file given (use --input)"))?;
    let opts = c.load_options()?;
    let file = File::open(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let data = load_long(BufReader::new(file), &opts).map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
    let warnings = data.warnings();
    for w in warnings.iter().take(SHOWN_WARNINGS) {
        warn(w);
    }
    if warnings.len() > SHOWN_WARNINGS {
        warn(format!("{} further data warnings not shown", warnings.len() - SHOWN_WARNINGS));
    }
    if c.covariates.is_empty() {
        return Ok(data);
    }
    let gaps = data
        .subjects()
        .iter()
        .filter(|s| c.covariates.iter().any(|n| s.covariates.get(n).is_some_and(Option::is_none)))
        .count();
    if gaps > 0 {
        warn(format!("{gaps} subjects have missing covariates; filled with the observed mean"));
    }
    Ok(data.mean_impute_covariates(&c.covariates)?)
}

fn spec(c: &RunConfig, outcome: Outcome) -> MmrmSpec {
    let spec = MmrmSpec::new(outcome).with_covariance(c.structure).with_covariates(&c.covariates);
    if c.unconstrained {
        spec.unconstrained()
    } else {
        spec
    }
}

fn weights(data: &TrialDataset) -> Result<QalyWeights, CliError> {
    Ok(qaly_weights(data.visit_times(), None)?)
}

fn start(c: &RunConfig) -> Result<OutDir, CliError> {
    let mut out = OutDir::create(&c.out, c.input.as_deref())?;
    out.json("config.json", c)?;
    Ok(out)
}

fn finish(out: &OutDir) {
    for p in &out.written {
        println!("wrote {}", p.display());
    }
}

pub fn describe(c: RunConfig) -> Result<(), CliError> {
    let data = load(&c)?;
    if data.n_subjects() == 0 {
        warn("input has no subjects; reports are empty");
    }
    let mut out = start(&c)?;
    out.write("patterns.csv", |w| Ok(pattern_table(&data).write_delimited(w, b',')?))?;
    out.write("descriptives.csv", |w| Ok(descriptives(&data).write_delimited(w, b',')?))?;
    finish(&out);
    Ok(())
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    outcome: Outcome,
    error: String,
    iterations: usize,
    loglik: f64,
    gradient_norm: f64,
    theta: &'a [f64],
}

fn fit_both(c: &RunConfig, data: &TrialDataset, out: &mut OutDir) -> Result<[FittedMmrm; 2], CliError> {
    let opts = FitOptions { max_iterations: c.max_iter };
    let mut fits = Vec::with_capacity(2);
    for outcome in Outcome::BOTH {
        match fit_with(data, &spec(c, outcome), &opts) {
            Ok(f) => fits.push(f),
            Err(e @ MmrmError::NotConverged { .. }) => {
                let MmrmError::NotConverged { iterations, loglik, gradient_norm, ref theta } = e else { unreachable!() };
                let path = out.json(
                    "diagnostics.json",
                    &Diagnostics {
                        outcome,
                        error: e.to_string(),
                        iterations,
                        loglik,
                        gradient_norm,
                        theta,
                    },
                )?;
                return Err(CliError {
                    kind: Kind::Convergence,
                    message: format!("{outcome} model: {e}; diagnostics in {}", path.display()),
                });
            }
            Err(e) => return Err(CliError::from(e).context(&format!("{outcome} model"))),
        }
    }
    let cost = fits.pop().expect("two fits");
    let utility = fits.pop().expect("two fits");
    Ok([utility, cost])
}

pub fn fit(c: RunConfig) -> Result<(), CliError> {
    let data = load(&c)?;
    let mut out = start(&c)?;
    let [fit_u, fit_c] = fit_both(&c, &data, &mut out)?;
    let intervals = [wald_ci(&fit_u, c.level)?, wald_ci(&fit_c, c.level)?];
    out.write("coefficients.csv", |w| {
        writeln!(w, "outcome,coefficient,estimate,se,lower,upper,level")?;
        for (fit, rows) in [&fit_u, &fit_c].iter().zip(&intervals) {
            for r in rows {
                writeln!(w, "{},{},{},{},{},{},{}", fit.spec.outcome, r.label, r.estimate, r.se, r.lower, r.upper, c.level)?;
            }
        }
        Ok(())
    })?;
    out.json("fit.json", &serde_json::json!({ "utility": fit_u, "cost": fit_c }))?;
    finish(&out);
    Ok(())
}

pub fn cea(c: RunConfig) -> Result<(), CliError> {
    let data = load(&c)?;
    let grid = c.k_grid()?;
    let w = weights(&data)?;
    let mut out = start(&c)?;
    let [fit_u, fit_c] = fit_both(&c, &data, &mut out)?;
    let table = summary_table(&fit_u, &fit_c, &w, c.include_baseline_cost, c.level)?;

    let mut model = CeaModel::new(spec(&c, Outcome::Utility), spec(&c, Outcome::Cost), w);
    model.include_baseline_cost = c.include_baseline_cost;
    model.max_iterations = c.max_iter;
    let draws = bootstrap_cea(&data, &model, c.bootstrap, c.seed)?;
    if draws.n_failed > 0 {
        warn(format!("{} of {} bootstrap replicates failed and were dropped", draws.n_failed, draws.n_replicates));
    }
    let summary = summarize(&draws, &grid, c.k, c.level)?;
    let plots = render_plots(&draws, &summary, c.k);

    out.write("summary.csv", |w| Ok(table.write_delimited(w, b',')?))?;
    out.json("cea.json", &summary)?;
    out.write("draws.csv", |w| Ok(draws.write_delimited(w, b',')?))?;
    out.write("ceac.csv", |w| {
        writeln!(w, "k,probability")?;
        for p in &summary.ceac {
            writeln!(w, "{},{}", p.k, p.probability)?;
        }
        Ok(())
    })?;
    out.text("cep.svg", &plots.plane)?;
    out.text("ceac.svg", &plots.acceptability)?;

    let icer = match summary.icer.value {
        Some(v) => format!("{v:.0} ({:?})", summary.icer.quadrant),
        None => format!("undefined ({:?})", summary.icer.quadrant),
    };
    println!("incremental QALYs {:.4}, incremental cost {:.0}, ICER {icer}", summary.point.d_e, summary.point.d_c);
    println!(
        "P(cost-effective at k = {}) = {:.3} over {} bootstrap draws",
        c.k, summary.prob_cost_effective_at_highlight, summary.n_draws
    );
    finish(&out);
    Ok(())
}

pub fn compare(c: RunConfig) -> Result<(), CliError> {
    let data = load(&c)?;
    if !c.covariates.is_empty() {
        warn("covariates are not used by the method comparison");
    }
    let w = weights(&data)?;
    let cmp = compare_methods(&data, &w, c.mi.unwrap_or(50), c.seed)?;
    let mut out = start(&c)?;
    out.write("comparison.csv", |w| Ok(cmp.write_delimited(w, b',')?))?;
    out.json("comparison.json", &cmp)?;
    finish(&out);
    Ok(())
}

pub fn simulate(c: RunConfig) -> Result<(), CliError> {
    let sim = c.simulation.clone().expect("resolved before dispatch");
    let (complete, truth) = gen_trial(&sim)?;
    let data = apply_mechanism(&complete, &sim.mechanism, derive_seed(sim.seed, 1))?;
    let mut out = start(&c)?;
    out.write("data.csv", |w| Ok(write_long(&data, w, &WriteOptions::default())?))?;
    out.json("truth.json", &truth)?;
    if let Some(n_sims) = c.n_sims {
        let opts = StudyOptions {
            mi_imputations: c.mi.unwrap_or(StudyOptions::default().mi_imputations),
            level: c.level,
        };
        let report = bias_study(&sim, n_sims, &c.methods, &opts)?;
        out.write("bias.csv", |w| Ok(report.write_delimited(w, b',')?))?;
        out.json("bias.json", &report)?;
    }
    finish(&out);
    Ok(())
}
