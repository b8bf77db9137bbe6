use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::{Arm, DataError, Outcome, TrialDataset};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternRow {
    /// `-` observed, `X` missing; utility visits first, then cost visits.
    pub pattern: String,
    pub counts: [usize; 2],
    /// Exact percentages of each arm's size.
    pub percents: [f64; 2],
    pub total: usize,
    pub total_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternTable {
    pub n_visits: usize,
    pub arm_sizes: [usize; 2],
    pub rows: Vec<PatternRow>,
}

fn percent(count: usize, denom: usize) -> f64 {
    if denom == 0 {
        0.0
    } else {
        100.0 * count as f64 / denom as f64
    }
}

pub fn pattern_string(utility: &[Option<f64>], cost: &[Option<f64>]) -> String {
    utility
        .iter()
        .chain(cost)
        .map(|v| if v.is_some() { '-' } else { 'X' })
        .collect()
}

/// Joint missingness patterns over (U1..UJ, C1..CJ), most frequent first.
pub fn pattern_table(data: &TrialDataset) -> PatternTable {
    let arm_sizes = data.arm_sizes();
    let n = data.n_subjects();
    let mut counts: BTreeMap<String, [usize; 2]> = BTreeMap::new();
    for s in data.subjects() {
        counts.entry(pattern_string(&s.utility, &s.cost)).or_default()[s.arm.index()] += 1;
    }
    let mut rows: Vec<PatternRow> = counts
        .into_iter()
        .map(|(pattern, counts)| {
            let total = counts[0] + counts[1];
            PatternRow {
                pattern,
                counts,
                percents: [percent(counts[0], arm_sizes[0]), percent(counts[1], arm_sizes[1])],
                total,
                total_percent: percent(total, n),
            }
        })
        .collect();
    // stable sort keeps the lexicographic order among ties
    rows.sort_by(|a, b| b.total.cmp(&a.total));
    PatternTable {
        n_visits: data.n_visits(),
        arm_sizes,
        rows,
    }
}

impl PatternTable {
    pub fn header(&self) -> String {
        Outcome::BOTH
            .iter()
            .flat_map(|o| (1..=self.n_visits).map(move |j| format!("{}{}", o.letter(), j)))
            .collect()
    }

    /// Counts with percentages rounded to whole numbers, as in a published table.
    pub fn write_delimited<W: Write>(&self, sink: W, delimiter: u8) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(sink);
        w.write_record([
            self.header().as_str(),
            "n_control",
            "pct_control",
            "n_intervention",
            "pct_intervention",
            "n_total",
            "pct_total",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.pattern.clone(),
                r.counts[0].to_string(),
                format!("{:.0}", r.percents[0]),
                r.counts[1].to_string(),
                format!("{:.0}", r.percents[1]),
                r.total.to_string(),
                format!("{:.0}", r.total_percent),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptiveRow {
    pub outcome: Outcome,
    pub arm: Arm,
    /// 1-based visit number.
    pub visit: usize,
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample SD with the n-1 denominator; absent when n < 2.
    pub sd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptiveTable {
    pub arm_sizes: [usize; 2],
    pub rows: Vec<DescriptiveRow>,
}

pub(crate) fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (Some(mean), Some((ss / (n - 1) as f64).sqrt()))
}

/// Available-case mean, SD and count per outcome, arm and visit.
pub fn descriptives(data: &TrialDataset) -> DescriptiveTable {
    let mut rows = Vec::with_capacity(4 * data.n_visits());
    for outcome in Outcome::BOTH {
        for arm in Arm::BOTH {
            for j in 0..data.n_visits() {
                let values: Vec<f64> = data
                    .subjects()
                    .iter()
                    .filter(|s| s.arm == arm)
                    .filter_map(|s| s.outcome(outcome)[j])
                    .collect();
                let (mean, sd) = mean_sd(&values);
                rows.push(DescriptiveRow {
                    outcome,
                    arm,
                    visit: j + 1,
                    n: values.len(),
                    mean,
                    sd,
                });
            }
        }
    }
    DescriptiveTable {
        arm_sizes: data.arm_sizes(),
        rows,
    }
}

impl DescriptiveTable {
    pub fn get(&self, outcome: Outcome, arm: Arm, visit: usize) -> Option<&DescriptiveRow> {
        self.rows
            .iter()
            .find(|r| r.outcome == outcome && r.arm == arm && r.visit == visit)
    }

    pub fn write_delimited<W: Write>(&self, sink: W, delimiter: u8) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_writer(sink);
        w.write_record(["outcome", "arm", "visit", "n", "mean", "sd"])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.outcome.to_string(),
                r.arm.to_string(),
                r.visit.to_string(),
                r.n.to_string(),
                opt(r.mean),
                opt(r.sd),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
