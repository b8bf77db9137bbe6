use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use trialcea::comparators::Method;
use trialcea::data::{default_arm_labels, ColumnMap, LoadOptions};
use trialcea::simulate::SimConfig;
use trialcea::CovarianceStructure;

use crate::error::CliError;

/// Everything a run depends on. Loaded from `--config`, then overridden by flags; the
/// resolved value is written next to the outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub columns: ColumnMap,
    pub delimiter: char,
    pub missing_token: String,
    pub arm_labels: [String; 2],
    /// Years since randomisation, baseline first.
    pub visits: Vec<f64>,
    pub covariates: Vec<String>,
    pub structure: CovarianceStructure,
    /// Separate baseline means per arm instead of one shared baseline mean.
    pub unconstrained: bool,
    pub max_iter: usize,
    pub level: f64,
    pub seed: u64,
    pub bootstrap: usize,
    pub k: f64,
    /// `lo:hi:step`.
    pub k_grid: String,
    pub include_baseline_cost: bool,
    /// Imputations for `compare`; `simulate` studies use 20 unless set.
    pub mi: Option<usize>,
    pub out: PathBuf,
    pub simulation: Option<SimConfig>,
    pub n_sims: Option<usize>,
    pub methods: Vec<Method>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            input: None,
            columns: ColumnMap::default(),
            delimiter: ',',
            missing_token: "NA".into(),
            arm_labels: default_arm_labels(),
            visits: Vec::new(),
            covariates: Vec::new(),
            structure: CovarianceStructure::Unstructured,
            unconstrained: false,
            max_iter: 500,
            level: 0.95,
            seed: 1,
            bootstrap: 10_000,
            k: 25_000.0,
            k_grid: "0:50000:500".into(),
            include_baseline_cost: false,
            mi: None,
            out: PathBuf::from("out"),
            simulation: None,
            n_sims: None,
            methods: Method::ALL.to_vec(),
        }
    }
}

/// Flags shared by every subcommand. Each one, when given, replaces the config value.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Long-format input: one row per subject and visit.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Visit times in years, baseline first, e.g. 0,0.25,0.75.
    #[arg(long, value_delimiter = ',', value_name = "T1,T2,..")]
    pub visits: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Baseline covariates entering both outcome models, e.g. age,sex.
    #[arg(long, value_delimiter = ',', value_name = "A,B")]
    pub covariates: Option<Vec<String>>,
    /// Covariance structure: unstructured, ri-diag or cs.
    #[arg(long)]
    pub structure: Option<CovarianceStructure>,
    /// Estimate separate baseline means per arm.
    #[arg(long)]
    pub unconstrained: bool,
    /// Optimizer iteration cap per fit.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Confidence level of reported intervals.
    #[arg(long)]
    pub level: Option<f64>,
    /// Bootstrap replicates.
    #[arg(long)]
    pub bootstrap: Option<usize>,
    /// Willingness to pay per QALY highlighted in reports.
    #[arg(long)]
    pub k: Option<f64>,
    /// Acceptability-curve thresholds as lo:hi:step.
    #[arg(long, value_name = "LO:HI:STEP")]
    pub k_grid: Option<String>,
    /// Add baseline cost to total cost.
    #[arg(long)]
    pub include_baseline_cost: bool,
    /// Number of multiple imputations.
    #[arg(long)]
    pub mi: Option<usize>,
    /// Input field delimiter.
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Token read as a missing value.
    #[arg(long)]
    pub missing_token: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub id_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub arm_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub time_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub utility_col: Option<String>,
    #[arg(long, value_name = "NAME")]
    pub cost_col: Option<String>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Overrides {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = match &self.config {
            Some(path) => read_json::<RunConfig>(path).map_err(|e| e.context("config"))?,
            None => RunConfig::default(),
        };
        let o = self.clone();
        c.input = o.input.or(c.input);
        set(&mut c.visits, o.visits);
        set(&mut c.out, o.out);
        set(&mut c.seed, o.seed);
        set(&mut c.covariates, o.covariates);
        set(&mut c.structure, o.structure);
        set(&mut c.max_iter, o.max_iter);
        set(&mut c.level, o.level);
        set(&mut c.bootstrap, o.bootstrap);
        set(&mut c.k, o.k);
        set(&mut c.k_grid, o.k_grid);
        c.include_baseline_cost |= o.include_baseline_cost;
        c.unconstrained |= o.unconstrained;
        c.mi = o.mi.or(c.mi);
        set(&mut c.delimiter, o.delimiter);
        set(&mut c.missing_token, o.missing_token);
        set(&mut c.columns.id, o.id_col);
        set(&mut c.columns.arm, o.arm_col);
        set(&mut c.columns.time, o.time_col);
        set(&mut c.columns.utility, o.utility_col);
        set(&mut c.columns.cost, o.cost_col);
        c.columns.covariates = c.covariates.clone();
        Ok(c)
    }
}

/// Flags of `simulate` on top of the shared ones.
#[derive(Debug, Clone, Default, Args)]
pub struct SimOverrides {
    /// JSON simulation configuration; the built-in example is used otherwise.
    #[arg(long, value_name = "FILE")]
    pub sim_config: Option<PathBuf>,
    /// Subjects per arm.
    #[arg(long)]
    pub n_per_arm: Option<usize>,
    /// Run a repeated-sampling study with this many simulated trials.
    #[arg(long)]
    pub n_sims: Option<usize>,
    /// Methods in the study, e.g. CCA,MI,LMM.
    #[arg(long, value_delimiter = ',', value_name = "M1,M2")]
    pub methods: Option<Vec<Method>>,
}

impl SimOverrides {
    pub fn apply(&self, c: &mut RunConfig, seed_given: bool) -> Result<(), CliError> {
        let mut sim = match &self.sim_config {
            Some(path) => read_json::<SimConfig>(path).map_err(|e| e.context("simulation config"))?,
            None => c.simulation.clone().unwrap_or_else(trialcea::simulate::example_config),
        };
        set(&mut sim.n_per_arm, self.n_per_arm);
        if seed_given {
            sim.seed = c.seed;
        }
        c.simulation = Some(sim);
        c.n_sims = self.n_sims.or(c.n_sims);
        set(&mut c.methods, self.methods.clone());
        Ok(())
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

impl RunConfig {
    pub fn load_options(&self) -> Result<LoadOptions, CliError> {
        if self.visits.is_empty() {
            return Err(CliError::input("no visit times given (use --visits, e.g. 0,0.25,0.75)"));
        }
        if !self.delimiter.is_ascii() {
            return Err(CliError::input(format!("delimiter `{}` is not a single ASCII character", self.delimiter)));
        }
        let mut opts = LoadOptions::new(self.visits.clone());
        opts.columns = self.columns.clone();
        opts.delimiter = self.delimiter as u8;
        opts.missing_token = self.missing_token.clone();
        opts.arm_labels = self.arm_labels.clone();
        Ok(opts)
    }

    pub fn k_grid(&self) -> Result<Vec<f64>, CliError> {
        let parts: Vec<&str> = self.k_grid.split(':').collect();
        let bad = || CliError::input(format!("--k-grid `{}` is not lo:hi:step", self.k_grid));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
        Ok(trialcea::cea::k_grid(v[0], v[1], v[2])?)
    }
}
