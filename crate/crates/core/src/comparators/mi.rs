use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;

use super::ComparatorError;
use crate::data::{Arm, Outcome, TrialDataset};
use crate::linalg::ols;
use crate::rng::keyed_stream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiOptions {
    /// Chained-equation cycles before the state is kept.
    pub burn_in: usize,
}

impl Default for MiOptions {
    fn default() -> Self {
        MiOptions { burn_in: 10 }
    }
}

fn variable_name(var: usize, n_visits: usize) -> String {
    let (letter, visit) = if var < n_visits { ('U', var) } else { ('C', var - n_visits) };
    format!("{letter}{}", visit + 1)
}

/// One arm's outcomes as a subject × variable table (utilities, then costs).
struct ArmTable {
    rows: Vec<usize>,
    values: Vec<Vec<f64>>,
    observed: Vec<Vec<bool>>,
}

fn arm_table(data: &TrialDataset, arm: Arm) -> ArmTable {
    let j = data.n_visits();
    let mut rows: Vec<usize> = (0..data.n_subjects()).filter(|&i| data.subjects()[i].arm == arm).collect();
    rows.sort_by(|&a, &b| data.subjects()[a].id.cmp(&data.subjects()[b].id));
    let mut values = Vec::with_capacity(rows.len());
    let mut observed = Vec::with_capacity(rows.len());
    for &i in &rows {
        let s = &data.subjects()[i];
        let slots: Vec<Option<f64>> = s.outcome(Outcome::Utility).iter().chain(s.outcome(Outcome::Cost)).copied().collect();
        values.push(slots.iter().map(|v| v.unwrap_or(0.0)).collect());
        observed.push(slots.iter().map(Option::is_some).collect());
    }
    debug_assert!(values.iter().all(|r: &Vec<f64>| r.len() == 2 * j));
    ArmTable { rows, values, observed }
}

/// Chained normal regressions within one arm. Each incomplete variable is regressed on
/// every other outcome variable; regression parameters are drawn from their posterior
/// before the missing values are drawn.
fn impute_arm(table: &mut ArmTable, arm: Arm, n_visits: usize, opts: &MiOptions, rng: &mut ChaCha8Rng) -> Result<(), ComparatorError> {
    let n = table.rows.len();
    let n_vars = 2 * n_visits;
    let n_missing: Vec<usize> = (0..n_vars).map(|v| (0..n).filter(|&i| !table.observed[i][v]).count()).collect();
    let mut order: Vec<usize> = (0..n_vars).filter(|&v| n_missing[v] > 0).collect();
    if order.is_empty() {
        return Ok(());
    }
    order.sort_by_key(|&v| (n_missing[v], v));

    for &v in &order {
        let pool: Vec<f64> = (0..n).filter(|&i| table.observed[i][v]).map(|i| table.values[i][v]).collect();
        if pool.is_empty() {
            return Err(ComparatorError::NothingObserved {
                arm,
                variable: variable_name(v, n_visits),
            });
        }
        for i in 0..n {
            if !table.observed[i][v] {
                table.values[i][v] = *pool.choose(rng).expect("non-empty");
            }
        }
    }

    for _ in 0..opts.burn_in {
        for &v in &order {
            let singular = || ComparatorError::SingularImputation {
                arm,
                variable: variable_name(v, n_visits),
            };
            let predictors = |i: usize| {
                let row = &table.values[i];
                std::iter::once(1.0).chain((0..n_vars).filter(|&k| k != v).map(|k| row[k]))
            };
            let obs: Vec<usize> = (0..n).filter(|&i| table.observed[i][v]).collect();
            let x = DMatrix::from_row_iterator(obs.len(), n_vars, obs.iter().flat_map(|&i| predictors(i)));
            let y = DVector::from_iterator(obs.len(), obs.iter().map(|&i| table.values[i][v]));
            let fit = ols(&x, &y).map_err(|_| singular())?;
            let chi2 = ChiSquared::new(fit.df as f64).map_err(|_| singular())?;
            let sigma2 = fit.rss / chi2.sample(rng);
            if !(sigma2.is_finite() && sigma2 > 0.0) {
                return Err(singular());
            }
            let root = fit.xtx_inv.clone().cholesky().ok_or_else(singular)?.unpack();
            let z = DVector::from_iterator(n_vars, (0..n_vars).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let sigma = sigma2.sqrt();
            let beta = &fit.beta + root * z * sigma;
            let draws: Vec<(usize, f64)> = (0..n)
                .filter(|&i| !table.observed[i][v])
                .map(|i| {
                    let mean: f64 = predictors(i).zip(beta.iter()).map(|(a, b)| a * b).sum();
                    let noise: f64 = rng.sample(StandardNormal);
                    (i, mean + sigma * noise)
                })
                .collect();
            for (i, value) in draws {
                table.values[i][v] = value;
            }
        }
    }
    Ok(())
}

/// `m` completed copies of `data`. Imputation `k` uses the stream keyed by `(seed, k)`
/// and runs each arm separately.
pub fn mi_impute(data: &TrialDataset, m: usize, seed: u64, opts: &MiOptions) -> Result<Vec<TrialDataset>, ComparatorError> {
    if m < 2 {
        return Err(ComparatorError::TooFewImputations(m));
    }
    let j = data.n_visits();
    (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = keyed_stream(seed, k as u64);
            let mut subjects = data.subjects().to_vec();
            for arm in Arm::BOTH {
                let mut table = arm_table(data, arm);
                impute_arm(&mut table, arm, j, opts, &mut rng)?;
                for (r, &i) in table.rows.iter().enumerate() {
                    let s = &mut subjects[i];
                    for v in 0..j {
                        s.utility[v] = Some(table.values[r][v]);
                        s.cost[v] = Some(table.values[r][j + v]);
                    }
                }
            }
            Ok(data.with_subjects(subjects).expect("imputed copy of a valid dataset"))
        })
        .collect()
}
