use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{default_arm_labels, validate_schedule, Arm, DataError, SubjectRecord, TrialDataset};

/// Header names of the long-format columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub id: String,
    pub arm: String,
    pub time: String,
    pub utility: String,
    pub cost: String,
    pub covariates: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            id: "id".into(),
            arm: "arm".into(),
            time: "time".into(),
            utility: "u".into(),
            cost: "c".into(),
            covariates: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub columns: ColumnMap,
    pub delimiter: u8,
    /// Token read as a missing value, in addition to the empty field. Case-sensitive.
    pub missing_token: String,
    /// Visit times in years; time index `j` in the file refers to `visit_times[j - 1]`.
    pub visit_times: Vec<f64>,
    pub arm_labels: [String; 2],
}

impl LoadOptions {
    pub fn new(visit_times: Vec<f64>) -> Self {
        LoadOptions {
            columns: ColumnMap::default(),
            delimiter: b',',
            missing_token: "NA".into(),
            visit_times,
            arm_labels: default_arm_labels(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WriteOptions {
    pub columns: ColumnMap,
    pub delimiter: u8,
    pub missing_token: String,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            columns: ColumnMap::default(),
            delimiter: b',',
            missing_token: "NA".into(),
        }
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn parse_optional(
    raw: &str,
    missing: &str,
    line: u64,
    column: &str,
) -> Result<Option<f64>, DataError> {
    let raw = raw.trim();
    if raw.is_empty() || raw == missing {
        return Ok(None);
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(DataError::InvalidNumber {
            line,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

fn required<'a>(record: &'a csv::StringRecord, idx: usize, line: u64, column: &str) -> Result<&'a str, DataError> {
    let raw = record.get(idx).unwrap_or("").trim();
    if raw.is_empty() {
        return Err(DataError::EmptyField {
            line,
            column: column.to_string(),
        });
    }
    Ok(raw)
}

/// Reads long-format rows (one per subject and visit) into a validated dataset.
///
/// Absent `(id, time)` rows and explicit missing values both become missing slots.
/// Subjects keep the order of their first row.
pub fn load_long<R: Read>(source: R, opts: &LoadOptions) -> Result<TrialDataset, DataError> {
    validate_schedule(&opts.visit_times)?;
    let n_visits = opts.visit_times.len();
    let cols = &opts.columns;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(true)
        .flexible(false)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let id_idx = column_index(&headers, &cols.id)?;
    let arm_idx = column_index(&headers, &cols.arm)?;
    let time_idx = column_index(&headers, &cols.time)?;
    let u_idx = column_index(&headers, &cols.utility)?;
    let c_idx = column_index(&headers, &cols.cost)?;
    let cov_idx = cols
        .covariates
        .iter()
        .map(|name| column_index(&headers, name))
        .collect::<Result<Vec<_>, _>>()?;

    let mut order: Vec<SubjectRecord> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    // visits already seen per subject, to catch duplicate (id, time) rows
    let mut filled: Vec<Vec<bool>> = Vec::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let id = required(&record, id_idx, line, &cols.id)?.to_string();

        let arm_raw = required(&record, arm_idx, line, &cols.arm)?;
        let arm = match arm_raw {
            "0" => Arm::Control,
            "1" => Arm::Intervention,
            _ => {
                return Err(DataError::InvalidArm {
                    line,
                    column: cols.arm.clone(),
                    value: arm_raw.to_string(),
                })
            }
        };

        let time_raw = required(&record, time_idx, line, &cols.time)?;
        let time = match time_raw.parse::<usize>() {
            Ok(t) if (1..=n_visits).contains(&t) => t,
            _ => {
                return Err(DataError::InvalidTime {
                    line,
                    column: cols.time.clone(),
                    value: time_raw.to_string(),
                    max: n_visits,
                })
            }
        };

        let u = parse_optional(record.get(u_idx).unwrap_or(""), &opts.missing_token, line, &cols.utility)?;
        let c = parse_optional(record.get(c_idx).unwrap_or(""), &opts.missing_token, line, &cols.cost)?;

        let pos = match by_id.get(&id) {
            Some(&pos) => {
                if order[pos].arm != arm {
                    return Err(DataError::InconsistentArm { line, id });
                }
                pos
            }
            None => {
                let covariates: BTreeMap<String, Option<f64>> =
                    cols.covariates.iter().map(|n| (n.clone(), None)).collect();
                order.push(SubjectRecord {
                    id: id.clone(),
                    arm,
                    utility: vec![None; n_visits],
                    cost: vec![None; n_visits],
                    covariates,
                });
                filled.push(vec![false; n_visits]);
                by_id.insert(id.clone(), order.len() - 1);
                order.len() - 1
            }
        };

        if filled[pos][time - 1] {
            return Err(DataError::DuplicateRow { line, id, time });
        }
        filled[pos][time - 1] = true;
        let subject = &mut order[pos];
        subject.utility[time - 1] = u;
        subject.cost[time - 1] = c;

        for (name, &idx) in cols.covariates.iter().zip(&cov_idx) {
            let value = parse_optional(record.get(idx).unwrap_or(""), &opts.missing_token, line, name)?;
            let slot = subject.covariates.get_mut(name).expect("initialised above");
            match (*slot, value) {
                (_, None) => {}
                (None, Some(v)) => *slot = Some(v),
                (Some(old), Some(v)) if old == v => {}
                (Some(_), Some(_)) => {
                    return Err(DataError::InconsistentCovariate {
                        line,
                        id: subject.id.clone(),
                        name: name.clone(),
                    })
                }
            }
        }
    }

    TrialDataset::new(order, opts.visit_times.clone(), opts.arm_labels.clone())
}

/// Writes one row per subject and visit, covariates repeated on every row.
pub fn write_long<W: Write>(data: &TrialDataset, sink: W, opts: &WriteOptions) -> Result<(), DataError> {
    let cols = &opts.columns;
    let covariates = data.covariate_names();
    let mut writer = csv::WriterBuilder::new()
        .delimiter(opts.delimiter)
        .from_writer(sink);
    let mut header = vec![
        cols.id.clone(),
        cols.arm.clone(),
        cols.time.clone(),
        cols.utility.clone(),
        cols.cost.clone(),
    ];
    header.extend(covariates.iter().cloned());
    writer.write_record(&header)?;

    let fmt = |v: Option<f64>| v.map_or_else(|| opts.missing_token.clone(), |x| x.to_string());
    for s in data.subjects() {
        for j in 0..data.n_visits() {
            let mut row = vec![
                s.id.clone(),
                s.arm.index().to_string(),
                (j + 1).to_string(),
                fmt(s.utility[j]),
                fmt(s.cost[j]),
            ];
            row.extend(covariates.iter().map(|n| fmt(s.covariates[n])));
            writer.write_record(&row)?;
        }
    }
    writer.flush()?;
    Ok(())
}
