use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trialcea::data::{default_arm_labels, Arm, Outcome, SubjectRecord, TrialDataset};
use trialcea::mmrm::{
    build_design, fit, CovarianceStructure, MmrmError, MmrmSpec, ProfiledLikelihood,
};

const TIMES: [f64; 3] = [0.0, 0.25, 0.75];

/// Correlated normal utilities, complete at every visit.
fn complete_trial(n_per_arm: usize, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chol = DMatrix::from_row_slice(3, 3, &[0.25, 0.0, 0.0, 0.15, 0.2, 0.0, 0.1, 0.12, 0.22]);
    let means = [[0.6, 0.65, 0.7], [0.6, 0.7, 0.78]];
    let mut subjects = Vec::new();
    for arm in Arm::BOTH {
        for i in 0..n_per_arm {
            let z: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let u: Vec<Option<f64>> = (0..3)
                .map(|r| Some(means[arm.index()][r] + (0..=r).map(|c| chol[(r, c)] * z[c]).sum::<f64>()))
                .collect();
            let c: Vec<Option<f64>> = (0..3).map(|_| Some(1000.0 + 300.0 * rng.sample::<f64, _>(StandardNormal))).collect();
            subjects.push(SubjectRecord::new(format!("{}-{i:03}", arm.index()), arm, u, c));
        }
    }
    TrialDataset::new(subjects, TIMES.to_vec(), default_arm_labels()).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn saturated_fit_reproduces_sample_moments() {
    let data = complete_trial(40, 11);
    let spec = MmrmSpec::new(Outcome::Utility).unconstrained();
    let fit = fit(&data, &spec).unwrap();

    // oracle: cell means and divide-by-N residual covariance
    let mut mean = [[0.0; 3]; 2];
    for s in data.subjects() {
        for v in 0..3 {
            mean[s.arm.index()][v] += s.utility[v].unwrap() / 40.0;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(3, 3);
    for s in data.subjects() {
        for a in 0..3 {
            for b in 0..3 {
                let ra = s.utility[a].unwrap() - mean[s.arm.index()][a];
                let rb = s.utility[b].unwrap() - mean[s.arm.index()][b];
                cov[(a, b)] += ra * rb / 80.0;
            }
        }
    }
    for v in 0..3 {
        let control = fit.coefficient(&format!("TIME_{}", v + 1)).unwrap();
        let effect = fit.coefficient(&format!("TIME_{}:TRT", v + 1)).unwrap();
        assert!(close(control, mean[0][v], 1e-6));
        assert!(close(control + effect, mean[1][v], 1e-6));
    }
    let sigma = fit.sigma_matrix();
    assert!((sigma - cov).abs().max() < 1e-6);
    assert!(fit.convergence.converged);
    assert!(fit.loglik >= fit.convergence.start_loglik);
}

#[test]
fn monotone_dropout_matches_factored_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut subjects = Vec::new();
    for i in 0..200 {
        let y1 = 0.5 + 0.2 * rng.sample::<f64, _>(StandardNormal);
        let y2 = 0.2 + 0.8 * y1 + 0.1 * rng.sample::<f64, _>(StandardNormal);
        let dropped = i % 5 < 2;
        subjects.push(SubjectRecord::new(
            format!("s{i}"),
            Arm::Control,
            vec![Some(y1), (!dropped).then_some(y2)],
            vec![None, None],
        ));
    }
    let data = TrialDataset::new(subjects, vec![0.0, 1.0], default_arm_labels()).unwrap();
    let fit = fit(&data, &MmrmSpec::new(Outcome::Utility).without_arm_effects()).unwrap();

    let all: Vec<f64> = data.subjects().iter().map(|s| s.utility[0].unwrap()).collect();
    let pairs: Vec<(f64, f64)> = data
        .subjects()
        .iter()
        .filter_map(|s| s.utility[1].map(|y2| (s.utility[0].unwrap(), y2)))
        .collect();
    let n = all.len() as f64;
    let mu1 = all.iter().sum::<f64>() / n;
    let s11 = all.iter().map(|y| (y - mu1).powi(2)).sum::<f64>() / n;
    let m = pairs.len() as f64;
    let x_bar = pairs.iter().map(|p| p.0).sum::<f64>() / m;
    let y_bar = pairs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx = pairs.iter().map(|p| (p.0 - x_bar).powi(2)).sum::<f64>();
    let sxy = pairs.iter().map(|p| (p.0 - x_bar) * (p.1 - y_bar)).sum::<f64>();
    let slope = sxy / sxx;
    let intercept = y_bar - slope * x_bar;
    let resid = pairs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / m;
    let mu2 = intercept + slope * mu1;
    let s12 = slope * s11;
    let s22 = resid + slope * slope * s11;

    assert!(close(fit.beta[0], mu1, 1e-6) && close(fit.beta[1], mu2, 1e-6), "{:?}", fit.beta);
    let sigma = fit.sigma_matrix();
    assert!(close(sigma[(0, 0)], s11, 1e-6));
    assert!(close(sigma[(0, 1)], s12, 1e-6));
    assert!(close(sigma[(1, 1)], s22, 1e-6));
}

#[test]
fn unstructured_dominates_compound_symmetry() {
    let data = complete_trial(30, 3);
    let un = fit(&data, &MmrmSpec::new(Outcome::Utility)).unwrap();
    let cs = fit(&data, &MmrmSpec::new(Outcome::Utility).with_covariance(CovarianceStructure::CompoundSymmetry)).unwrap();
    let ri = fit(&data, &MmrmSpec::new(Outcome::Utility).with_covariance(CovarianceStructure::RandomInterceptDiag)).unwrap();
    assert!(un.loglik >= ri.loglik - 1e-8);
    assert!(ri.loglik >= cs.loglik - 1e-8);
    // compound symmetry marginal covariance has equal off-diagonals
    let s = cs.sigma_matrix();
    assert!(close(s[(0, 1)], s[(1, 2)], 1e-12) && close(s[(0, 0)], s[(2, 2)], 1e-12));
}

fn with_missing(data: &TrialDataset, fraction: f64, seed: u64) -> TrialDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = data
        .subjects()
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for v in 1..3 {
                if rng.random::<f64>() < fraction {
                    s.utility[v] = None;
                }
            }
            s
        })
        .collect();
    data.with_subjects(subjects).unwrap()
}

#[test]
fn mcar_deletion_deviation_grows_with_fraction() {
    let data = complete_trial(200, 21);
    let spec = MmrmSpec::new(Outcome::Utility);
    let full = fit(&data, &spec).unwrap();
    let deviation = |fraction: f64| {
        let reps = 10;
        (0..reps)
            .map(|r| {
                let f = fit(&with_missing(&data, fraction, 100 + r), &spec).unwrap();
                f.beta.iter().zip(&full.beta).map(|(a, b)| (a - b).abs()).sum::<f64>() / f.beta.len() as f64
            })
            .sum::<f64>()
            / reps as f64
    };
    let d0 = deviation(0.0);
    let d5 = deviation(0.05);
    let d20 = deviation(0.2);
    assert!(d0 < 1e-9, "{d0}");
    assert!(d0 < d5 && d5 < d20, "{d0} {d5} {d20}");
}

#[test]
fn scaling_outcome_scales_estimates() {
    let data = with_missing(&complete_trial(50, 8), 0.3, 1);
    let spec = MmrmSpec::new(Outcome::Utility);
    let base = fit(&data, &spec).unwrap();
    // powers of two are exact
    let four = fit(&data.map_outcome(Outcome::Utility, |v| 4.0 * v), &spec).unwrap();
    for (a, b) in base.beta.iter().zip(&four.beta) {
        assert_eq!(4.0 * a, *b);
    }
    assert_eq!(base.sigma_matrix() * 16.0, four.sigma_matrix());
    // other constants to solver tolerance
    let c = 1234.5;
    let scaled = fit(&data.map_outcome(Outcome::Utility, |v| c * v), &spec).unwrap();
    for (a, b) in base.beta.iter().zip(&scaled.beta) {
        assert!(close(c * a, *b, 1e-7 * c), "{} vs {b}", c * a);
    }
    let rel = (base.sigma_matrix() * (c * c) - scaled.sigma_matrix()).abs().max() / (c * c);
    assert!(rel < 1e-7, "{rel}");
}

#[test]
fn subject_order_does_not_matter() {
    let data = with_missing(&complete_trial(40, 9), 0.25, 2);
    let mut reversed = data.subjects().to_vec();
    reversed.reverse();
    let other = data.with_subjects(reversed).unwrap();
    let spec = MmrmSpec::new(Outcome::Cost);
    let a = fit(&data, &spec).unwrap();
    let b = fit(&other, &spec).unwrap();
    assert_eq!(a, b);
}

#[test]
fn profiled_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for dataset in 0..5 {
        let data = with_missing(&complete_trial(8 + 3 * dataset, 300 + dataset as u64), 0.3, dataset as u64);
        for structure in [
            CovarianceStructure::Unstructured,
            CovarianceStructure::RandomInterceptDiag,
            CovarianceStructure::CompoundSymmetry,
        ] {
            let spec = MmrmSpec::new(Outcome::Utility).with_covariance(structure);
            let design = build_design(&data, &spec).unwrap();
            let objective = ProfiledLikelihood::new(&design, structure);
            for _ in 0..20 {
                let theta: Vec<f64> = (0..objective.n_params())
                    .map(|_| rng.random_range(-2.5..-0.5) + 0.3 * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let analytic = objective.evaluate(&theta).unwrap().gradient;
                for k in 0..theta.len() {
                    let h = 1e-5;
                    let mut up = theta.clone();
                    let mut down = theta.clone();
                    up[k] += h;
                    down[k] -= h;
                    let fd = (objective.loglik(&up).unwrap() - objective.loglik(&down).unwrap()) / (2.0 * h);
                    let err = (fd - analytic[k]).abs() / analytic[k].abs().max(1.0);
                    assert!(err < 1e-5, "{structure} k={k}: {fd} vs {}", analytic[k]);
                }
            }
        }
    }
}

#[test]
fn iteration_cap_reports_best_state() {
    let data = with_missing(&complete_trial(30, 4), 0.2, 3);
    let err = trialcea::mmrm::fit_with(
        &data,
        &MmrmSpec::new(Outcome::Utility),
        &trialcea::mmrm::FitOptions { max_iterations: 1 },
    )
    .unwrap_err();
    match err {
        MmrmError::NotConverged { iterations, theta, .. } => {
            assert_eq!(iterations, 1);
            assert_eq!(theta.len(), 6);
        }
        other => panic!("unexpected {other}"),
    }
}
