use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use trialcea::comparators::{cca, compare_methods, lmm_analysis, mi_analyze, mi_impute, rubin_pool, Method, MiOptions, Quantity};
use trialcea::contrasts::{auc, qaly_weights, QalyWeights};
use trialcea::data::{default_arm_labels, Arm, Outcome};
use trialcea::simulate::{apply_mechanism, example_config, gen_trial, incomplete_fraction, Mechanism, SimConfig};
use trialcea::{fit, MmrmSpec, SubjectRecord, TrialDataset};

fn config(n: usize, seed: u64, mechanism: Mechanism) -> SimConfig {
    let mut c = example_config();
    c.n_per_arm = n;
    c.seed = seed;
    c.mechanism = mechanism;
    c
}

fn complete(n: usize, seed: u64) -> TrialDataset {
    gen_trial(&config(n, seed, Mechanism::None)).unwrap().0
}

fn weights(data: &TrialDataset) -> QalyWeights {
    qaly_weights(data.visit_times(), None).unwrap()
}

#[test]
fn complete_data_cca_is_the_ancova_effect() {
    let data = complete(40, 1);
    let w = weights(&data);
    let n = data.n_subjects();
    let mut x = DMatrix::zeros(n, 3);
    let mut y = DVector::zeros(n);
    for (i, s) in data.subjects().iter().enumerate() {
        let u: Vec<f64> = s.utility.iter().map(|v| v.unwrap()).collect();
        x[(i, 0)] = 1.0;
        x[(i, 1)] = if s.arm == Arm::Intervention { 1.0 } else { 0.0 };
        x[(i, 2)] = u[0];
        y[i] = auc(&u, &w).unwrap();
    }
    let beta = (x.transpose() * &x).lu().solve(&(x.transpose() * &y)).unwrap();
    let out = cca(&data, &w).unwrap();
    assert_eq!(out.n_subjects, n);
    assert!((out.qalys.incremental.estimate - beta[1]).abs() < 1e-10);
}

#[test]
fn one_missing_cost_slot_drops_the_subject_from_both_quantities() {
    let data = complete(20, 2);
    let w = weights(&data);
    let mut subjects = data.subjects().to_vec();
    subjects[3].cost[2] = None;
    let holed = data.with_subjects(subjects.clone()).unwrap();
    subjects.remove(3);
    let without = data.with_subjects(subjects).unwrap();
    let a = cca(&holed, &w).unwrap();
    assert_eq!(a.n_subjects, data.n_subjects() - 1);
    assert_eq!(a, cca(&without, &w).unwrap());
}

#[test]
fn fully_observed_data_methods_agree() {
    let data = complete(60, 3);
    let w = weights(&data);
    let cmp = compare_methods(&data, &w, 5, 1).unwrap();
    let (cc, mi, lmm) = (cmp.get(Method::Cca).unwrap(), cmp.get(Method::Mi).unwrap(), cmp.get(Method::Lmm).unwrap());
    for q in [Quantity::Qalys, Quantity::TotalCosts] {
        // nothing to impute: every copy is the data itself
        assert_eq!(mi.get(q).incremental.estimate, cc.get(q).incremental.estimate);
        let gap = (lmm.get(q).incremental.estimate - cc.get(q).incremental.estimate).abs();
        assert!(gap < 0.1 * cc.get(q).incremental.se, "{q}: gap {gap}");
    }
    assert_eq!(cmp.n_completers, data.n_subjects());
}

#[test]
fn mi_recovers_a_mean_under_mar() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n = 400;
    let mut subjects = Vec::new();
    for i in 0..n {
        let u: f64 = rng.sample(StandardNormal);
        let c = 2.0 + 0.8 * u + 0.6 * rng.sample::<f64, _>(StandardNormal);
        let p = 1.0 / (1.0 + (-(-1.05 + 1.5 * u)).exp());
        let missing = rng.random::<f64>() < p;
        subjects.push(SubjectRecord::new(format!("p{i:03}"), Arm::Control, vec![Some(u)], vec![(!missing).then_some(c)]));
    }
    let data = TrialDataset::new(subjects, vec![0.0], default_arm_labels()).unwrap();
    let observed: Vec<f64> = data.subjects().iter().filter_map(|s| s.cost[0]).collect();
    let share_missing = 1.0 - observed.len() as f64 / n as f64;
    assert!((0.25..0.35).contains(&share_missing), "{share_missing}");

    let completed = mi_impute(&data, 100, 3, &MiOptions::default()).unwrap();
    let (mut est, mut var) = (Vec::new(), Vec::new());
    for d in &completed {
        let c: Vec<f64> = d.subjects().iter().map(|s| s.cost[0].unwrap()).collect();
        let m = c.iter().sum::<f64>() / n as f64;
        let s2 = c.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        est.push(m);
        var.push(s2 / n as f64);
    }
    let pooled = rubin_pool(&est, &var).unwrap();
    assert!((pooled.estimate - 2.0).abs() < 3.0 * pooled.se, "{pooled:?}");
    // complete cases miss the high-u subjects, so their mean is visibly too low
    let cc_mean = observed.iter().sum::<f64>() / observed.len() as f64;
    assert!(2.0 - cc_mean > 3.0 * pooled.se);
}

fn mar_trial_with(seed: u64) -> TrialDataset {
    let mut c = config(110, seed, example_config().mechanism);
    if let Mechanism::MarBaseline { utility, cost } = &mut c.mechanism {
        for l in utility.iter_mut().chain(cost.iter_mut()) {
            l.intercept = -2.4;
        }
    }
    let (complete, _) = gen_trial(&c).unwrap();
    apply_mechanism(&complete, &c.mechanism, seed + 100).unwrap()
}

fn mar_trial() -> TrialDataset {
    mar_trial_with(79)
}

#[test]
fn heavy_mar_missingness_orders_the_methods() {
    // single trials are noisy, so distances are averaged over replicate trials
    let trials = 20;
    let mut gaps = [[0.0; 3]; 2];
    let mut incomplete = 0.0;
    for t in 0..trials {
        let data = mar_trial_with(500 + t);
        incomplete += incomplete_fraction(&data) / trials as f64;
        let cmp = compare_methods(&data, &weights(&data), 20, t).unwrap();
        let inc = |m, q| cmp.get(m).unwrap().get(q).incremental;
        for (k, q) in [Quantity::Qalys, Quantity::TotalCosts].into_iter().enumerate() {
            let (cc, mi, lmm) = (inc(Method::Cca, q), inc(Method::Mi, q), inc(Method::Lmm, q));
            assert!(lmm.se <= cc.se && mi.se <= cc.se, "trial {t}, {q}");
            gaps[k][0] += (lmm.estimate - mi.estimate).abs() / cc.se;
            gaps[k][1] += (lmm.estimate - cc.estimate).abs() / cc.se;
            gaps[k][2] += (mi.estimate - cc.estimate).abs() / cc.se;
        }
    }
    assert!((0.4..0.5).contains(&incomplete), "{incomplete}");
    for g in gaps {
        assert!(g[0] < g[1] && g[0] < g[2], "{g:?}");
    }
}

#[test]
fn five_hundred_imputations_finish_quickly() {
    let c = config(40, 4, example_config().mechanism);
    let (complete, _) = gen_trial(&c).unwrap();
    let data = apply_mechanism(&complete, &c.mechanism, 4).unwrap();
    let start = Instant::now();
    let completed = mi_impute(&data, 500, 1, &MiOptions::default()).unwrap();
    let out = mi_analyze(&completed, &weights(&data)).unwrap();
    assert_eq!(out.n_imputations, 500);
    assert!(start.elapsed() < Duration::from_secs(60), "{:?}", start.elapsed());
}

#[test]
fn pooled_estimates_are_stable_in_the_number_of_imputations() {
    let data = mar_trial();
    let w = weights(&data);
    let small = mi_analyze(&mi_impute(&data, 50, 2, &MiOptions::default()).unwrap(), &w).unwrap();
    let large = mi_analyze(&mi_impute(&data, 100, 2, &MiOptions::default()).unwrap(), &w).unwrap();
    for (a, b) in [(small.qaly_increment, large.qaly_increment), (small.cost_increment, large.cost_increment)] {
        assert!((a.estimate - b.estimate).abs() < 0.5 * b.se);
        assert!((a.se / b.se - 1.0).abs() < 0.2);
    }
}

#[test]
fn covariate_gaps_are_filled_rather_than_dropping_subjects() {
    let data = complete(30, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let subjects: Vec<SubjectRecord> = data
        .subjects()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let age = (i % 7 != 0).then(|| 70.0 + 5.0 * rng.sample::<f64, _>(StandardNormal));
            s.clone().with_covariate("age", age)
        })
        .collect();
    let data = data.with_subjects(subjects).unwrap();
    let spec = MmrmSpec::new(Outcome::Utility).with_covariates(&["age"]);
    assert!(fit(&data, &spec).is_err());
    let filled = data.mean_impute_covariates(&["age".to_string()]).unwrap();
    let fitted = fit(&filled, &spec).unwrap();
    assert_eq!(fitted.n_subjects_used, data.n_subjects());
    let w = weights(&filled);
    let lmm = lmm_analysis(&filled, &w, &spec, &MmrmSpec::new(Outcome::Cost).with_covariates(&["age"])).unwrap();
    assert_eq!(lmm.n_subjects, data.n_subjects());
}
