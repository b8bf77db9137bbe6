use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const VISITS: &str = "0,0.25,0.75";

fn trialcea(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trialcea")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\n{}", o.status.code(), stderr(&o));
    o
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&read(path)).unwrap()
}

/// Writes a simulation config derived from the built-in example and returns its path.
fn sim_config(dir: &Path, name: &str, n_per_arm: usize, mechanism: Value) -> PathBuf {
    let probe = dir.join(format!("{name}-probe"));
    ok(trialcea(dir, &["simulate", "--out", probe.to_str().unwrap(), "--n-per-arm", "2"]));
    let mut sim = json(probe.join("config.json"))["simulation"].clone();
    sim["n_per_arm"] = n_per_arm.into();
    sim["mechanism"] = mechanism;
    let path = dir.join(format!("{name}.json"));
    fs::write(&path, sim.to_string()).unwrap();
    path
}

/// Simulated trial with the example missingness, written to `<dir>/<name>/data.csv`.
fn simulated(dir: &Path, name: &str, n_per_arm: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    ok(trialcea(dir, &["simulate", "--out", out.to_str().unwrap(), "--n-per-arm", &n_per_arm.to_string(), "--seed", &seed.to_string()]));
    out.join("data.csv")
}

fn complete(dir: &Path, n_per_arm: usize) -> PathBuf {
    let cfg = sim_config(dir, "complete", n_per_arm, serde_json::json!({ "type": "none" }));
    let out = dir.join("complete");
    ok(trialcea(dir, &["simulate", "--sim-config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    out.join("data.csv")
}

fn csv(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn describe_writes_both_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 30, 4);
    let out = dir.path().join("d");
    let o = ok(trialcea(dir.path(), &["describe", "--input", data.to_str().unwrap(), "--visits", VISITS, "--out", out.to_str().unwrap()]));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("patterns.csv") && stdout.contains("descriptives.csv"));

    let patterns = csv(&read(out.join("patterns.csv")));
    assert_eq!(patterns[0][0], "U1U2U3C1C2C3");
    let column = |i: usize| patterns[1..].iter().map(|r| r[i].parse::<usize>().unwrap()).sum::<usize>();
    assert_eq!((column(1), column(3)), (30, 30));
    let counted = column(5);
    assert_eq!(counted, 60);
    // 2 outcomes x 2 arms x 3 visits
    assert_eq!(csv(&read(out.join("descriptives.csv"))).len(), 13);
}

#[test]
fn malformed_arm_is_an_input_error_naming_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad.csv");
    fs::write(&input, "id,arm,time,u,c\na,0,1,0.5,10\na,7,2,0.5,10\n").unwrap();
    let o = trialcea(dir.path(), &["describe", "--input", "bad.csv", "--visits", "0,1", "--out", "o"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error[input]"), "{err}");
    assert!(err.contains("line 3") && err.contains("arm"), "{err}");
    assert!(!dir.path().join("o").join("patterns.csv").exists());
}

#[test]
fn missing_visits_and_unknown_config_keys_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 5, 1);
    let o = trialcea(dir.path(), &["describe", "--input", data.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    fs::write(dir.path().join("run.json"), r#"{"bootstrapp": 10}"#).unwrap();
    let o = trialcea(dir.path(), &["describe", "--config", "run.json", "--input", data.to_str().unwrap(), "--visits", VISITS]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("bootstrapp"));
}

#[test]
fn header_only_input_gives_empty_reports() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "id,arm,time,u,c\n").unwrap();
    let o = ok(trialcea(dir.path(), &["describe", "--input", "empty.csv", "--visits", "0,1", "--out", "o"]));
    assert!(stderr(&o).contains("warning"));
    let patterns = read(dir.path().join("o/patterns.csv"));
    assert_eq!(patterns.lines().count(), 1);
    for row in csv(&read(dir.path().join("o/descriptives.csv"))).iter().skip(1) {
        assert_eq!(row[3], "0");
    }
}

#[test]
fn unconstrained_fit_on_complete_data_reproduces_cell_means() {
    let dir = tempfile::tempdir().unwrap();
    let data = complete(dir.path(), 40);
    // sums[outcome][arm][visit]
    let mut sums = [[[0.0f64; 3]; 2]; 2];
    let mut counts = [[0usize; 3]; 2];
    for row in csv(&read(&data)).iter().skip(1) {
        let arm: usize = row[1].parse().unwrap();
        let visit: usize = row[2].parse::<usize>().unwrap() - 1;
        sums[0][arm][visit] += row[3].parse::<f64>().unwrap();
        sums[1][arm][visit] += row[4].parse::<f64>().unwrap();
        counts[arm][visit] += 1;
    }
    assert!(counts.iter().flatten().all(|&n| n == 40));

    let out = dir.path().join("fit");
    ok(trialcea(dir.path(), &["fit", "--input", data.to_str().unwrap(), "--visits", VISITS, "--unconstrained", "--out", out.to_str().unwrap()]));
    let rows = csv(&read(out.join("coefficients.csv")));
    assert_eq!(rows[0], ["outcome", "coefficient", "estimate", "se", "lower", "upper", "level"]);
    let mut checked = 0;
    for r in &rows[1..] {
        let o = if r[0] == "utility" { 0 } else { 1 };
        let mean = |arm: usize, j: usize| sums[o][arm][j] / 40.0;
        let (j, expected) = match r[1].split_once(":TRT") {
            Some((t, _)) => {
                let j = t.trim_start_matches("TIME_").parse::<usize>().unwrap() - 1;
                (j, mean(1, j) - mean(0, j))
            }
            None => {
                let j = r[1].trim_start_matches("TIME_").parse::<usize>().unwrap() - 1;
                (j, mean(0, j))
            }
        };
        let estimate: f64 = r[2].parse().unwrap();
        let scale = if o == 0 { 1.0 } else { 1000.0 };
        assert!((estimate - expected).abs() < 1e-8 * scale, "{} {}: {estimate} vs {expected} at visit {j}", r[0], r[1]);
        let (lo, hi): (f64, f64) = (r[4].parse().unwrap(), r[5].parse().unwrap());
        assert!(lo < estimate && estimate < hi);
        checked += 1;
    }
    assert_eq!(checked, 12);
}

#[test]
fn constrained_fit_drops_the_baseline_contrast() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 40, 2);
    let out = dir.path().join("fit");
    ok(trialcea(dir.path(), &["fit", "--input", data.to_str().unwrap(), "--visits", VISITS, "--out", out.to_str().unwrap()]));
    let labels: Vec<String> = csv(&read(out.join("coefficients.csv"))).iter().skip(1).map(|r| r[1].clone()).collect();
    assert_eq!(labels.len(), 10);
    assert!(!labels.iter().any(|l| l == "TIME_1:TRT"));
    assert!(json(out.join("fit.json"))["utility"].is_object());
}

#[test]
fn iteration_cap_is_a_convergence_error_with_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 20, 3);
    let out = dir.path().join("fit");
    let o = trialcea(dir.path(), &["fit", "--input", data.to_str().unwrap(), "--visits", VISITS, "--max-iter", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).lines().any(|l| l.starts_with("error[convergence]")));
    let diag = json(out.join("diagnostics.json"));
    assert_eq!(diag["iterations"], 1);
    assert!(diag["theta"].as_array().is_some_and(|t| !t.is_empty()));
    assert!(!out.join("coefficients.csv").exists());
}

#[test]
fn cea_is_reproducible_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 40, 5);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let args = ["cea", "--input", data.to_str().unwrap(), "--visits", VISITS, "--bootstrap", "60", "--seed", "11", "--k-grid", "0:40000:1000", "--out", out.to_str().unwrap()];
        let o = ok(trialcea(dir.path(), &args));
        (out, String::from_utf8_lossy(&o.stdout).into_owned())
    };
    let (a, stdout_a) = run("a");
    let (b, _) = run("b");
    for f in ["summary.csv", "cea.json", "draws.csv", "ceac.csv", "cep.svg", "ceac.svg"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs between runs");
    }
    assert!(stdout_a.contains("ICER"));

    let draws = csv(&read(a.join("draws.csv")));
    assert_eq!(draws.len(), 61);
    let ceac = csv(&read(a.join("ceac.csv")));
    assert_eq!(ceac.len(), 42);
    for row in &ceac[1..] {
        let p: f64 = row[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
        // each probability is a count out of 60 draws
        assert!((p * 60.0 - (p * 60.0).round()).abs() < 1e-9);
    }
    for svg in ["cep.svg", "ceac.svg"] {
        let text = read(a.join(svg));
        assert!(text.trim_start().starts_with("<svg") && text.trim_end().ends_with("</svg>"), "{svg}");
    }

    let (c, _) = {
        let out = dir.path().join("c");
        ok(trialcea(dir.path(), &["cea", "--input", data.to_str().unwrap(), "--visits", VISITS, "--bootstrap", "60", "--seed", "12", "--out", out.to_str().unwrap()]));
        (out, ())
    };
    assert_ne!(read(a.join("draws.csv")), read(c.join("draws.csv")));
    assert_eq!(read(a.join("summary.csv")), read(c.join("summary.csv")));
}

#[test]
fn compare_reports_all_methods() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 40, 6);
    let out = dir.path().join("cmp");
    ok(trialcea(dir.path(), &["compare", "--input", data.to_str().unwrap(), "--visits", VISITS, "--mi", "10", "--out", out.to_str().unwrap()]));
    let text = read(out.join("comparison.csv"));
    for m in ["CCA", "MI", "LMM"] {
        assert!(text.contains(m), "{m} missing from\n{text}");
    }
    let again = dir.path().join("cmp2");
    ok(trialcea(dir.path(), &["compare", "--input", data.to_str().unwrap(), "--visits", VISITS, "--mi", "10", "--out", again.to_str().unwrap()]));
    assert_eq!(text, read(again.join("comparison.csv")));
}

#[test]
fn simulate_is_seeded_and_mechanism_none_keeps_every_value() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulated(dir.path(), "a", 25, 9);
    let b = simulated(dir.path(), "b", 25, 9);
    let c = simulated(dir.path(), "c", 25, 10);
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert!(read(&a).contains("NA"));

    let full = complete(dir.path(), 25);
    let text = read(full);
    assert!(!text.contains("NA"));
    assert_eq!(text.lines().count(), 1 + 50 * 3);
    assert!(json(dir.path().join("complete/truth.json")).is_object());
}

#[test]
fn mcar_rate_matches_configuration() {
    let dir = tempfile::tempdir().unwrap();
    let rate = 0.3;
    let cfg = sim_config(dir.path(), "mcar", 1000, serde_json::json!({ "type": "mcar", "utility": [0.0, rate, rate], "cost": [0.0, rate, rate] }));
    let out = dir.path().join("mcar");
    ok(trialcea(dir.path(), &["simulate", "--sim-config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let rows = csv(&read(out.join("data.csv")));
    let follow_up: Vec<&Vec<String>> = rows[1..].iter().filter(|r| r[2] != "1").collect();
    assert!(rows[1..].iter().filter(|r| r[2] == "1").all(|r| r[3] != "NA" && r[4] != "NA"));
    let slots = 2 * follow_up.len();
    let missing = follow_up.iter().map(|r| (r[3] == "NA") as usize + (r[4] == "NA") as usize).sum::<usize>();
    let observed = missing as f64 / slots as f64;
    let se = (rate * (1.0 - rate) / slots as f64).sqrt();
    assert!((observed - rate).abs() < 4.0 * se, "{observed} vs {rate}");
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 30, 7);
    fs::write(
        dir.path().join("run.json"),
        serde_json::json!({ "input": data, "visits": [0.0, 0.25, 0.75], "bootstrap": 40, "seed": 3, "level": 0.9 }).to_string(),
    )
    .unwrap();
    let out = dir.path().join("o");
    ok(trialcea(dir.path(), &["cea", "--config", "run.json", "--seed", "8", "--k-grid", "0:1000:500", "--out", out.to_str().unwrap()]));
    let resolved = json(out.join("config.json"));
    assert_eq!(resolved["seed"], 8);
    assert_eq!(resolved["bootstrap"], 40);
    assert_eq!(resolved["level"], 0.9);
    assert_eq!(csv(&read(out.join("draws.csv"))).len(), 41);
}

#[test]
fn input_is_never_modified_or_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulated(dir.path(), "sim", 20, 8);
    let before = fs::read(&data).unwrap();
    // an input called patterns.csv sitting in the output directory
    let clash = dir.path().join("clash");
    fs::create_dir(&clash).unwrap();
    fs::copy(&data, clash.join("patterns.csv")).unwrap();
    let o = trialcea(&clash, &["describe", "--input", "patterns.csv", "--visits", VISITS, "--out", "."]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("overwrite"));
    assert_eq!(fs::read(clash.join("patterns.csv")).unwrap(), before);

    ok(trialcea(dir.path(), &["describe", "--input", data.to_str().unwrap(), "--visits", VISITS, "--out", "d"]));
    assert_eq!(fs::read(&data).unwrap(), before);
}
