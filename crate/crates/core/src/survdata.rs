//! Observation model for censored and truncated survival data, plus CSV I/O.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: column `{column}` is not numeric: `{value}`")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: {message}")]
    Invalid { row: usize, message: String },
    #[error("dataset is empty")]
    Empty,
    #[error("subject {row}: expected {expected} covariates, found {found}")]
    CovariateDimension {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("every outcome is right-censored; the scale parameter is not identifiable")]
    NoEvents,
}

/// How an event time was observed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Status {
    Exact(f64),
    RightCensored(f64),
    IntervalCensored { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    status: Status,
    truncation: Option<f64>,
}

fn positive(name: &str, t: f64) -> Result<f64, String> {
    if t > 0.0 && t.is_finite() {
        Ok(t)
    } else {
        Err(format!("{name} must be a positive finite time (got {t})"))
    }
}

impl SurvivalOutcome {
    pub fn exact(t: f64) -> Result<Self, String> {
        Ok(Self {
            status: Status::Exact(positive("event time", t)?),
            truncation: None,
        })
    }

    pub fn right_censored(c: f64) -> Result<Self, String> {
        Ok(Self {
            status: Status::RightCensored(positive("censoring time", c)?),
            truncation: None,
        })
    }

    pub fn interval(lower: f64, upper: f64) -> Result<Self, String> {
        let lower = positive("interval lower bound", lower)?;
        let upper = positive("interval upper bound", upper)?;
        if lower >= upper {
            return Err(format!(
                "interval censoring requires l < r (got l = {lower}, r = {upper})"
            ));
        }
        Ok(Self {
            status: Status::IntervalCensored { lower, upper },
            truncation: None,
        })
    }

    /// Adds a left-truncation (delayed entry) time `V`, which must not exceed
    /// the earliest time the outcome is known to exceed.
    pub fn truncated_at(self, v: f64) -> Result<Self, String> {
        let v = positive("truncation time", v)?;
        if v > self.observed_time() {
            return Err(format!(
                "truncation time V = {v} exceeds observed time {}",
                self.observed_time()
            ));
        }
        Ok(Self {
            truncation: Some(v),
            ..self
        })
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn truncation(&self) -> Option<f64> {
        self.truncation
    }

    /// The event, censoring or lower interval time.
    pub fn observed_time(&self) -> f64 {
        match self.status {
            Status::Exact(t) | Status::RightCensored(t) => t,
            Status::IntervalCensored { lower, .. } => lower,
        }
    }

    pub fn is_right_censored(&self) -> bool {
        matches!(self.status, Status::RightCensored(_))
    }

    /// Multiplies every time by `k > 0`.
    pub fn rescaled(&self, k: f64) -> Self {
        let status = match self.status {
            Status::Exact(t) => Status::Exact(t * k),
            Status::RightCensored(c) => Status::RightCensored(c * k),
            Status::IntervalCensored { lower, upper } => Status::IntervalCensored {
                lower: lower * k,
                upper: upper * k,
            },
        };
        Self {
            status,
            truncation: self.truncation.map(|v| v * k),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub outcome: SurvivalOutcome,
    pub exposure: f64,
    pub mediator: f64,
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<Subject>,
    covariate_names: Vec<String>,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, covariate_names: Vec<String>) -> Result<Self, DataError> {
        if subjects.is_empty() {
            return Err(DataError::Empty);
        }
        let expected = covariate_names.len();
        for (i, s) in subjects.iter().enumerate() {
            if s.covariates.len() != expected {
                return Err(DataError::CovariateDimension {
                    row: i + 1,
                    expected,
                    found: s.covariates.len(),
                });
            }
        }
        if subjects.iter().all(|s| s.outcome.is_right_censored()) {
            return Err(DataError::NoEvents);
        }
        Ok(Self {
            subjects,
            covariate_names,
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    /// The subjects at `indices` (with repetition), or `None` if that
    /// selection violates a dataset invariant.
    pub fn resample(&self, indices: &[usize]) -> Option<Dataset> {
        let subjects = indices.iter().map(|&i| self.subjects[i].clone()).collect();
        Dataset::new(subjects, self.covariate_names.clone()).ok()
    }

    pub fn map_subjects(&self, f: impl FnMut(&Subject) -> Subject) -> Result<Dataset, DataError> {
        Dataset::new(
            self.subjects.iter().map(f).collect(),
            self.covariate_names.clone(),
        )
    }

    pub fn summarize(&self) -> CensoringSummary {
        let mut s = CensoringSummary {
            n: self.len(),
            ..Default::default()
        };
        for subj in &self.subjects {
            match subj.outcome.status() {
                Status::Exact(_) => s.exact += 1,
                Status::RightCensored(_) => s.right_censored += 1,
                Status::IntervalCensored { .. } => s.interval_censored += 1,
            }
            if subj.outcome.truncation().is_some() {
                s.truncated += 1;
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CensoringSummary {
    pub n: usize,
    pub exact: usize,
    pub right_censored: usize,
    pub interval_censored: usize,
    pub truncated: usize,
}

impl CensoringSummary {
    pub fn exact_fraction(&self) -> f64 {
        self.exact as f64 / self.n as f64
    }
    pub fn right_fraction(&self) -> f64 {
        self.right_censored as f64 / self.n as f64
    }
    pub fn interval_fraction(&self) -> f64 {
        self.interval_censored as f64 / self.n as f64
    }
    pub fn truncated_fraction(&self) -> f64 {
        self.truncated as f64 / self.n as f64
    }
}

/// Maps dataset roles to CSV column names.
///
/// Outcomes follow the two-column interval convention by default: `time2`
/// empty or `NA` means right-censored at `time1`, `time1 == time2` is an exact
/// event, and `time1 < time2` is an interval. Setting `status` switches to a
/// single time column plus an event indicator (1 = event, 0 = censored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schema {
    pub exposure: String,
    pub mediator: String,
    pub time1: String,
    pub time2: Option<String>,
    pub status: Option<String>,
    pub truncation: Option<String>,
    pub covariates: Vec<String>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            exposure: "exposure".into(),
            mediator: "mediator".into(),
            time1: "time1".into(),
            time2: Some("time2".into()),
            status: None,
            truncation: None,
            covariates: Vec::new(),
        }
    }
}

impl Schema {
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        toml::from_str(text).map_err(|e| DataError::Schema(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, DataError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

pub fn read_csv(path: &Path, schema: &Schema) -> Result<Dataset, DataError> {
    read_csv_from(std::fs::File::open(path)?, schema)
}

pub fn read_csv_from<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let col = |name: &str| -> Result<usize, DataError> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let exposure = col(&schema.exposure)?;
    let mediator = col(&schema.mediator)?;
    let time1 = col(&schema.time1)?;
    let status = schema.status.as_deref().map(col).transpose()?;
    // an event-indicator column takes precedence over the interval convention
    let time2 = match status {
        Some(_) => None,
        None => schema.time2.as_deref().map(col).transpose()?,
    };
    let truncation = schema.truncation.as_deref().map(col).transpose()?;
    let covariates = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut subjects = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let cell = |j: usize| record.get(j).unwrap_or("").trim();
        let number = |j: usize| -> Result<f64, DataError> {
            let raw = cell(j);
            raw.parse::<f64>().map_err(|_| DataError::NonNumeric {
                row,
                column: headers.get(j).unwrap_or("?").to_string(),
                value: raw.to_string(),
            })
        };
        let invalid = |message: String| DataError::Invalid { row, message };

        if is_missing(cell(mediator)) {
            return Err(invalid(format!("missing mediator value in `{}`", schema.mediator)));
        }
        if is_missing(cell(time1)) {
            return Err(invalid(format!(
                "missing `{}` (left-censored rows are not supported)",
                schema.time1
            )));
        }
        let t1 = number(time1)?;
        let outcome = if let Some(s) = status {
            let flag = number(s)?;
            if flag == 1.0 {
                SurvivalOutcome::exact(t1)
            } else if flag == 0.0 {
                SurvivalOutcome::right_censored(t1)
            } else {
                return Err(invalid(format!("status must be 0 or 1 (got {flag})")));
            }
        } else {
            match time2 {
                Some(j) if !is_missing(cell(j)) => {
                    let t2 = number(j)?;
                    if t1 == t2 {
                        SurvivalOutcome::exact(t1)
                    } else {
                        SurvivalOutcome::interval(t1, t2)
                    }
                }
                Some(_) => SurvivalOutcome::right_censored(t1),
                None => SurvivalOutcome::exact(t1),
            }
        }
        .map_err(invalid)?;
        let outcome = match truncation {
            Some(j) if !is_missing(cell(j)) => outcome.truncated_at(number(j)?).map_err(invalid)?,
            _ => outcome,
        };
        let covs = covariates
            .iter()
            .map(|&j| number(j))
            .collect::<Result<Vec<_>, _>>()?;
        subjects.push(Subject {
            outcome,
            exposure: number(exposure)?,
            mediator: number(mediator)?,
            covariates: covs,
        });
    }
    Dataset::new(subjects, schema.covariates.clone())
}

/// Writes `dataset` using the default interval-convention schema (plus a
/// `truncation` column when any subject is truncated) and returns that schema.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<Schema, DataError> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    let schema = write_csv_to(dataset, &mut file)?;
    file.flush()?;
    Ok(schema)
}

pub fn write_csv_to<W: Write>(dataset: &Dataset, out: &mut W) -> Result<Schema, DataError> {
    let mut schema = Schema {
        covariates: dataset.covariate_names().to_vec(),
        ..Schema::default()
    };
    let any_truncated = dataset
        .subjects()
        .iter()
        .any(|s| s.outcome.truncation().is_some());
    if any_truncated {
        schema.truncation = Some("truncation".into());
    }
    let mut header = vec!["exposure", "mediator", "time1", "time2"];
    if any_truncated {
        header.push("truncation");
    }
    header.extend(dataset.covariate_names().iter().map(String::as_str));
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for s in dataset.subjects() {
        line.clear();
        let (t1, t2) = match s.outcome.status() {
            Status::Exact(t) => (t, Some(t)),
            Status::RightCensored(c) => (c, None),
            Status::IntervalCensored { lower, upper } => (lower, Some(upper)),
        };
        // `{}` on f64 prints the shortest representation that round-trips exactly
        write!(line, "{},{},{},", s.exposure, s.mediator, t1).unwrap();
        match t2 {
            Some(t) => write!(line, "{t}").unwrap(),
            None => line.push_str("NA"),
        }
        if any_truncated {
            match s.outcome.truncation() {
                Some(v) => write!(line, ",{v}").unwrap(),
                None => line.push(','),
            }
        }
        for z in &s.covariates {
            write!(line, ",{z}").unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(schema)
}
