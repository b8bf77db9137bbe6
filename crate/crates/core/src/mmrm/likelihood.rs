use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::design::Design;
use super::{CovarianceStructure, MmrmError};
use crate::linalg::principal_submatrix;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Observed-data log-likelihood: each subject contributes the normal log-density of its
/// observed outcomes, with covariance the matching principal submatrix of `sigma`.
pub fn loglik(design: &Design, sigma: &DMatrix<f64>, beta: &[f64]) -> Result<f64, MmrmError> {
    if beta.len() != design.n_coefficients() {
        return Err(MmrmError::Shape(format!(
            "beta has {} entries, design has {} columns",
            beta.len(),
            design.n_coefficients()
        )));
    }
    let beta = DVector::from_column_slice(beta);
    let mut total = 0.0;
    for s in &design.subjects {
        let v = principal_submatrix(sigma, &s.visits);
        let chol = v.cholesky().ok_or(MmrmError::SingularCovariance)?;
        let resid = &s.y - &s.x * &beta;
        let alpha = chol.solve(&resid);
        let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        total -= 0.5 * (s.visits.len() as f64 * LN_2PI + logdet + resid.dot(&alpha));
    }
    Ok(total)
}

/// Cross-products of all subjects sharing one set of observed visits.
#[derive(Debug, Clone)]
struct PatternStats {
    visits: Vec<usize>,
    n: usize,
    /// `Σ_i x_ia x_ib'`, indexed `a * k + b`
    sxx: Vec<DMatrix<f64>>,
    /// `Σ_i x_ia y_ib`
    sxy: Vec<DVector<f64>>,
    /// `Σ_i y_ia y_ib`
    syy: Vec<f64>,
}

/// Log-likelihood with the fixed effects profiled out by generalised least squares.
///
/// Subjects are pooled by missingness pattern, so one evaluation costs
/// O(#patterns · J² · p²) regardless of sample size.
#[derive(Debug, Clone)]
pub struct ProfiledLikelihood {
    structure: CovarianceStructure,
    n_visits: usize,
    n_coef: usize,
    groups: Vec<PatternStats>,
}

/// One evaluation of the profiled likelihood.
#[derive(Debug, Clone)]
pub struct Profile {
    pub loglik: f64,
    pub beta: DVector<f64>,
    /// `Σ_i X_i' V_i⁻¹ X_i`
    pub information: DMatrix<f64>,
    pub sigma: DMatrix<f64>,
    /// Gradient of the profiled log-likelihood with respect to θ.
    pub gradient: Vec<f64>,
}

impl ProfiledLikelihood {
    pub fn new(design: &Design, structure: CovarianceStructure) -> Self {
        let p = design.n_coefficients();
        let mut groups: BTreeMap<Vec<usize>, PatternStats> = BTreeMap::new();
        for s in &design.subjects {
            let k = s.visits.len();
            let g = groups.entry(s.visits.clone()).or_insert_with(|| PatternStats {
                visits: s.visits.clone(),
                n: 0,
                sxx: vec![DMatrix::zeros(p, p); k * k],
                sxy: vec![DVector::zeros(p); k * k],
                syy: vec![0.0; k * k],
            });
            g.n += 1;
            for a in 0..k {
                let xa = s.x.row(a).transpose();
                for b in 0..k {
                    let xb = s.x.row(b);
                    g.sxx[a * k + b] += &xa * xb;
                    g.sxy[a * k + b] += &xa * s.y[b];
                    g.syy[a * k + b] += s.y[a] * s.y[b];
                }
            }
        }
        ProfiledLikelihood {
            structure,
            n_visits: design.n_visits,
            n_coef: p,
            groups: groups.into_values().collect(),
        }
    }

    pub fn structure(&self) -> CovarianceStructure {
        self.structure
    }

    pub fn n_params(&self) -> usize {
        self.structure.n_params(self.n_visits)
    }

    pub fn n_patterns(&self) -> usize {
        self.groups.len()
    }

    pub fn evaluate(&self, theta: &[f64]) -> Result<Profile, MmrmError> {
        let sigma = self.structure.marginal_covariance(self.n_visits, theta)?;
        let p = self.n_coef;

        let mut info = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        let mut inverses = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let k = g.visits.len();
            let v = principal_submatrix(&sigma, &g.visits);
            let chol = v.cholesky().ok_or(MmrmError::SingularCovariance)?;
            let logdet: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let w = chol.inverse();
            for a in 0..k {
                for b in 0..k {
                    let wab = w[(a, b)];
                    info.zip_apply(&g.sxx[a * k + b], |d, s| *d += wab * s);
                    rhs.axpy(wab, &g.sxy[a * k + b], 1.0);
                }
            }
            inverses.push((w, logdet));
        }
        let info = (&info + info.transpose()) * 0.5;
        let beta = info
            .clone()
            .cholesky()
            .ok_or(MmrmError::SingularInformation)?
            .solve(&rhs);

        let mut loglik = 0.0;
        let mut m = DMatrix::zeros(self.n_visits, self.n_visits);
        for (g, (w, logdet)) in self.groups.iter().zip(&inverses) {
            let k = g.visits.len();
            let mut r = DMatrix::zeros(k, k);
            for a in 0..k {
                for b in a..k {
                    let sxx = &g.sxx[a * k + b];
                    let val = g.syy[a * k + b] - beta.dot(&g.sxy[a * k + b]) - beta.dot(&g.sxy[b * k + a])
                        + beta.dot(&(sxx * &beta));
                    r[(a, b)] = val;
                    r[(b, a)] = val;
                }
            }
            let quad = w.component_mul(&r).sum();
            let n = g.n as f64;
            loglik -= 0.5 * (n * k as f64 * LN_2PI + n * logdet + quad);
            let mg = w * &r * w - w * n;
            for a in 0..k {
                for b in 0..k {
                    m[(g.visits[a], g.visits[b])] += mg[(a, b)];
                }
            }
        }
        let gradient = self.structure.chain_gradient(theta, &m);
        Ok(Profile {
            loglik,
            beta,
            information: info,
            sigma,
            gradient,
        })
    }

    pub fn loglik(&self, theta: &[f64]) -> Result<f64, MmrmError> {
        self.evaluate(theta).map(|p| p.loglik)
    }
}

/// GLS estimate of the fixed effects for a given θ, with the log-likelihood at that estimate.
pub fn profile_beta(
    design: &Design,
    structure: CovarianceStructure,
    theta: &[f64],
) -> Result<(Vec<f64>, f64), MmrmError> {
    let profile = ProfiledLikelihood::new(design, structure).evaluate(theta)?;
    Ok((profile.beta.iter().copied().collect(), profile.loglik))
}
