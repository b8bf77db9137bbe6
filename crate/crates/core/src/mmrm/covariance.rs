use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::MmrmError;
use crate::linalg::floor_eigenvalues;

/// Marginal covariance of a subject's J repeated outcomes.
///
/// Parameter vectors are unconstrained:
/// * `Unstructured`: log-Cholesky factor, lower triangle row by row, diagonal entries on
///   the log scale (`J(J+1)/2` values).
/// * `RandomInterceptDiag`: `ln σ²_ω` followed by `ln σ²_j` for each visit.
/// * `CompoundSymmetry`: `ln σ²_ω`, `ln σ²_ε`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceStructure {
    #[default]
    Unstructured,
    RandomInterceptDiag,
    CompoundSymmetry,
}

impl fmt::Display for CovarianceStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceStructure::Unstructured => "unstructured",
            CovarianceStructure::RandomInterceptDiag => "ri-diag",
            CovarianceStructure::CompoundSymmetry => "cs",
        })
    }
}

impl FromStr for CovarianceStructure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unstructured" | "un" => Ok(CovarianceStructure::Unstructured),
            "ri-diag" | "random-intercept-diag" => Ok(CovarianceStructure::RandomInterceptDiag),
            "cs" | "compound-symmetry" => Ok(CovarianceStructure::CompoundSymmetry),
            other => Err(format!(
                "unknown covariance structure `{other}` (expected unstructured, ri-diag or cs)"
            )),
        }
    }
}

fn tri_index(row: usize, col: usize) -> usize {
    row * (row + 1) / 2 + col
}

impl CovarianceStructure {
    pub fn n_params(self, n_visits: usize) -> usize {
        match self {
            CovarianceStructure::Unstructured => n_visits * (n_visits + 1) / 2,
            CovarianceStructure::RandomInterceptDiag => 1 + n_visits,
            CovarianceStructure::CompoundSymmetry => 2,
        }
    }

    fn check_len(self, n_visits: usize, theta: &[f64]) -> Result<(), MmrmError> {
        let expected = self.n_params(n_visits);
        if theta.len() != expected {
            return Err(MmrmError::ThetaLength {
                expected,
                found: theta.len(),
            });
        }
        Ok(())
    }

    fn cholesky_factor(n_visits: usize, theta: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(n_visits, n_visits);
        for r in 0..n_visits {
            for c in 0..r {
                l[(r, c)] = theta[tri_index(r, c)];
            }
            l[(r, r)] = theta[tri_index(r, r)].exp();
        }
        l
    }

    /// The implied J×J marginal covariance.
    pub fn marginal_covariance(self, n_visits: usize, theta: &[f64]) -> Result<DMatrix<f64>, MmrmError> {
        self.check_len(n_visits, theta)?;
        Ok(match self {
            CovarianceStructure::Unstructured => {
                let l = Self::cholesky_factor(n_visits, theta);
                let s = &l * l.transpose();
                (&s + s.transpose()) * 0.5
            }
            CovarianceStructure::RandomInterceptDiag => {
                let between = theta[0].exp();
                DMatrix::from_fn(n_visits, n_visits, |a, b| {
                    between + if a == b { theta[1 + a].exp() } else { 0.0 }
                })
            }
            CovarianceStructure::CompoundSymmetry => {
                let (between, within) = (theta[0].exp(), theta[1].exp());
                DMatrix::from_fn(n_visits, n_visits, |a, b| {
                    between + if a == b { within } else { 0.0 }
                })
            }
        })
    }

    /// Gradient of a function `f(Σ(θ))` given `G = ∂f/∂Σ` as a symmetric matrix whose
    /// entries are the derivative with respect to the symmetric pair `(Σ_ab, Σ_ba)` taken
    /// together, i.e. `∂f/∂θ_k = ½ tr(G ∂Σ/∂θ_k)`.
    pub(crate) fn chain_gradient(self, theta: &[f64], g: &DMatrix<f64>) -> Vec<f64> {
        let j = g.nrows();
        match self {
            CovarianceStructure::Unstructured => {
                let l = Self::cholesky_factor(j, theta);
                let gl = g * &l;
                let mut out = vec![0.0; theta.len()];
                for r in 0..j {
                    for c in 0..r {
                        out[tri_index(r, c)] = gl[(r, c)];
                    }
                    out[tri_index(r, r)] = gl[(r, r)] * l[(r, r)];
                }
                out
            }
            CovarianceStructure::RandomInterceptDiag => {
                let mut out = Vec::with_capacity(1 + j);
                out.push(0.5 * theta[0].exp() * g.sum());
                out.extend((0..j).map(|a| 0.5 * theta[1 + a].exp() * g[(a, a)]));
                out
            }
            CovarianceStructure::CompoundSymmetry => {
                vec![0.5 * theta[0].exp() * g.sum(), 0.5 * theta[1].exp() * g.trace()]
            }
        }
    }

    /// Parameters reproducing (or approximating) a given covariance; used for starting
    /// values. `sigma` is floored to positive definite first.
    pub(crate) fn theta_from_covariance(self, sigma: &DMatrix<f64>) -> Vec<f64> {
        let j = sigma.nrows();
        let mean_diag = (sigma.trace() / j as f64).max(f64::MIN_POSITIVE);
        match self {
            CovarianceStructure::Unstructured => {
                let pd = floor_eigenvalues(sigma, 1e-6 * mean_diag);
                let l = pd
                    .cholesky()
                    .map(|c| c.unpack())
                    .unwrap_or_else(|| DMatrix::from_diagonal_element(j, j, mean_diag.sqrt()));
                let mut theta = vec![0.0; self.n_params(j)];
                for r in 0..j {
                    for c in 0..r {
                        theta[tri_index(r, c)] = l[(r, c)];
                    }
                    theta[tri_index(r, r)] = l[(r, r)].ln();
                }
                theta
            }
            CovarianceStructure::RandomInterceptDiag => {
                let half = (0.5 * mean_diag).ln();
                vec![half; 1 + j]
            }
            CovarianceStructure::CompoundSymmetry => {
                let half = (0.5 * mean_diag).ln();
                vec![half, half]
            }
        }
    }

    /// Parameters of `c² Σ(θ)`, with `log_c = ln c`.
    pub(crate) fn rescale_theta(self, theta: &[f64], c: f64) -> Vec<f64> {
        let log_c = c.ln();
        match self {
            CovarianceStructure::Unstructured => {
                let mut out = theta.to_vec();
                let mut k = 0;
                let mut row = 0;
                while k < out.len() {
                    for col in 0..=row {
                        out[k] = if col == row { out[k] + log_c } else { out[k] * c };
                        k += 1;
                    }
                    row += 1;
                }
                out
            }
            _ => theta.iter().map(|t| t + 2.0 * log_c).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        (a - b).abs().max() < tol
    }

    #[test]
    fn unstructured_one_by_one() {
        let s = CovarianceStructure::Unstructured.marginal_covariance(1, &[0.0]).unwrap();
        assert_eq!(s, DMatrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn compound_symmetry_hand_value() {
        let s = CovarianceStructure::CompoundSymmetry.marginal_covariance(2, &[0.0, 0.0]).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
    }

    #[test]
    fn random_intercept_without_between_variance_is_diagonal() {
        let theta = [f64::NEG_INFINITY, 0.0, 2f64.ln(), 3f64.ln()];
        let s = CovarianceStructure::RandomInterceptDiag.marginal_covariance(3, &theta).unwrap();
        assert!(close(&s, &DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0, 3.0]), 1e-12));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        assert!(matches!(
            CovarianceStructure::Unstructured.marginal_covariance(3, &[0.0; 5]),
            Err(MmrmError::ThetaLength { expected: 6, found: 5 })
        ));
    }

    #[test]
    fn theta_round_trip_and_rescale() {
        let sigma = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let st = CovarianceStructure::Unstructured;
        let theta = st.theta_from_covariance(&sigma);
        assert!(close(&st.marginal_covariance(3, &theta).unwrap(), &sigma, 1e-12));
        let scaled = st.rescale_theta(&theta, 3.0);
        assert!(close(&st.marginal_covariance(3, &scaled).unwrap(), &(sigma * 9.0), 1e-10));
        for st in [CovarianceStructure::RandomInterceptDiag, CovarianceStructure::CompoundSymmetry] {
            let theta = vec![0.3; st.n_params(3)];
            let base = st.marginal_covariance(3, &theta).unwrap();
            let scaled = st.marginal_covariance(3, &st.rescale_theta(&theta, 0.5)).unwrap();
            assert!(close(&scaled, &(base * 0.25), 1e-12));
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("cs".parse::<CovarianceStructure>().unwrap(), CovarianceStructure::CompoundSymmetry);
        assert!("ar1".parse::<CovarianceStructure>().is_err());
    }
}
