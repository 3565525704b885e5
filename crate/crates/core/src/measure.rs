//! Measurement ingest, aggregation, and repetition hygiene.
//!
//! Measurements arrive as CSV with one row per repetition:
//!
//! ```text
//! function,callpath,<param>...,rep,value
//! sweep,,64,0,1.25
//! work,17/3,64,0,0.61
//! ```
//!
//! `callpath` is the slash-joined call-site ids of the measured frame, empty
//! for the entry frame. Rows group by `(function, callpath, configuration)`;
//! repetitions aggregate by median when handed to the fitter. The CoV filter
//! drops configurations whose repetitions disagree too much to trust.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::fit::{median, DataPoint};
use crate::taint::CallPath;

pub const SCHEMA_VERSION: u32 = 1;

/// A parameter configuration with a total order, usable as a map key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfigKey(Vec<(String, f64)>);

impl ConfigKey {
    pub fn from_map(map: &BTreeMap<String, f64>) -> ConfigKey {
        ConfigKey(map.iter().map(|(k, v)| (k.clone(), *v)).collect())
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.0.iter().cloned().collect()
    }

    pub fn get(&self, param: &str) -> Option<f64> {
        self.0.iter().find(|(k, _)| k == param).map(|(_, v)| *v)
    }

    pub fn values(&self) -> &[(String, f64)] {
        &self.0
    }
}

impl Eq for ConfigKey {}

impl Ord for ConfigKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        let mut it_a = self.0.iter();
        let mut it_b = other.0.iter();
        loop {
            match (it_a.next(), it_b.next()) {
                (None, None) => return std::cmp::Ordering::Equal,
                (None, Some(_)) => return std::cmp::Ordering::Less,
                (Some(_), None) => return std::cmp::Ordering::Greater,
                (Some((ka, va)), Some((kb, vb))) => {
                    let ord = ka.cmp(kb).then(va.total_cmp(vb));
                    if ord != std::cmp::Ordering::Equal {
                        return ord;
                    }
                }
            }
        }
    }
}

impl PartialOrd for ConfigKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ConfigKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, " ")?;
            }
            write!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// A measured frame: one function at one call path.
pub type TargetKey = (String, CallPath);

/// All measurements, grouped for aggregation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MeasurementSet {
    /// Parameter column order as read (or written).
    pub params: Vec<String>,
    /// target → config → rep → value.
    data: BTreeMap<TargetKey, BTreeMap<ConfigKey, BTreeMap<u32, f64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MeasureError {
    #[error("failed to read measurements: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("header must start with `function,callpath` and end with `rep,value`, got `{0}`")]
    BadHeader(String),
    #[error("line {line}: bad {field} value `{text}`")]
    BadNumber {
        line: u64,
        field: String,
        text: String,
    },
    #[error("line {line}: bad callpath `{text}`")]
    BadCallPath { line: u64, text: String },
    #[error("line {line}: expected {expected} fields, got {got}")]
    BadWidth { line: u64, expected: usize, got: usize },
    #[error("line {line}: duplicate sample for {function} [{config}] rep {rep}")]
    DuplicateSample {
        line: u64,
        function: String,
        config: String,
        rep: u32,
    },
}

impl MeasurementSet {
    pub fn new(params: Vec<String>) -> MeasurementSet {
        MeasurementSet {
            params,
            data: BTreeMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        function: &str,
        call_path: &CallPath,
        config: ConfigKey,
        rep: u32,
        value: f64,
    ) -> bool {
        self.data
            .entry((function.to_string(), call_path.clone()))
            .or_default()
            .entry(config)
            .or_default()
            .insert(rep, value)
            .is_none()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of individual samples.
    pub fn len(&self) -> usize {
        self.data
            .values()
            .flat_map(|c| c.values())
            .map(|r| r.len())
            .sum()
    }

    pub fn targets(&self) -> Vec<&TargetKey> {
        self.data.keys().collect()
    }

    pub fn configs(&self, target: &TargetKey) -> Vec<&ConfigKey> {
        self.data
            .get(target)
            .map(|c| c.keys().collect())
            .unwrap_or_default()
    }

    pub fn reps(&self, target: &TargetKey, config: &ConfigKey) -> Vec<f64> {
        self.data
            .get(target)
            .and_then(|c| c.get(config))
            .map(|r| r.values().copied().collect())
            .unwrap_or_default()
    }

    /// Median-aggregated points for one target, ready for fitting.
    pub fn data_points(&self, target: &TargetKey) -> Vec<DataPoint> {
        let Some(configs) = self.data.get(target) else {
            return Vec::new();
        };
        configs
            .iter()
            .map(|(key, reps)| {
                let values: Vec<f64> = reps.values().copied().collect();
                DataPoint {
                    config: key.to_map(),
                    y: median(&values),
                }
            })
            .collect()
    }

    pub fn from_csv_path(path: &Path) -> Result<(MeasurementSet, Vec<String>), MeasureError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(
        reader: R,
    ) -> Result<(MeasurementSet, Vec<String>), MeasureError> {
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(reader);
        let header = csv.headers()?.clone();
        let fields: Vec<&str> = header.iter().collect();
        if fields.len() < 4
            || fields[0] != "function"
            || fields[1] != "callpath"
            || fields[fields.len() - 2] != "rep"
            || fields[fields.len() - 1] != "value"
        {
            return Err(MeasureError::BadHeader(fields.join(",")));
        }
        let params: Vec<String> = fields[2..fields.len() - 2]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let width = fields.len();

        let mut set = MeasurementSet::new(params.clone());
        let mut warnings = Vec::new();
        for record in csv.records() {
            let record = record?;
            let line = record
                .position()
                .map(|p| p.line())
                .unwrap_or_default();
            if record.len() != width {
                return Err(MeasureError::BadWidth {
                    line,
                    expected: width,
                    got: record.len(),
                });
            }
            let function = record[0].to_string();
            let call_path = CallPath::parse(&record[1]).ok_or_else(|| {
                MeasureError::BadCallPath {
                    line,
                    text: record[1].to_string(),
                }
            })?;
            let mut config = BTreeMap::new();
            for (i, name) in params.iter().enumerate() {
                let text = &record[2 + i];
                let v: f64 = text.parse().map_err(|_| MeasureError::BadNumber {
                    line,
                    field: name.clone(),
                    text: text.to_string(),
                })?;
                config.insert(name.clone(), v);
            }
            let rep: u32 = record[width - 2]
                .parse()
                .map_err(|_| MeasureError::BadNumber {
                    line,
                    field: "rep".to_string(),
                    text: record[width - 2].to_string(),
                })?;
            let value: f64 = record[width - 1]
                .parse()
                .map_err(|_| MeasureError::BadNumber {
                    line,
                    field: "value".to_string(),
                    text: record[width - 1].to_string(),
                })?;
            let key = ConfigKey::from_map(&config);
            if !set.insert(&function, &call_path, key.clone(), rep, value) {
                return Err(MeasureError::DuplicateSample {
                    line,
                    function,
                    config: key.to_string(),
                    rep,
                });
            }
        }
        if set.is_empty() {
            warnings.push("measurement file contains no samples".to_string());
        }
        Ok((set, warnings))
    }

    /// Deterministic CSV form, inverse of `from_csv_reader`.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = vec!["function".to_string(), "callpath".to_string()];
        header.extend(self.params.iter().cloned());
        header.push("rep".to_string());
        header.push("value".to_string());
        writeln!(w, "{}", header.join(","))?;
        for ((function, call_path), configs) in &self.data {
            for (config, reps) in configs {
                for (rep, value) in reps {
                    let mut row = vec![function.clone(), call_path.to_string()];
                    for p in &self.params {
                        let v = config.get(p).unwrap_or(f64::NAN);
                        row.push(format_value(v));
                    }
                    row.push(rep.to_string());
                    row.push(format_value(*value));
                    writeln!(w, "{}", row.join(","))?;
                }
            }
        }
        Ok(())
    }
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        // Shortest round-trippable decimal.
        format!("{v}")
    }
}

/// One configuration whose repetitions disagree beyond the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovViolation {
    pub function: String,
    pub call_path: CallPath,
    pub config: BTreeMap<String, f64>,
    pub cov: f64,
    pub mean: f64,
    pub n_reps: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovReport {
    pub schema_version: u32,
    pub threshold: f64,
    pub checked: usize,
    pub violations: Vec<CovViolation>,
}

/// Population coefficient of variation: σ/|μ| with σ computed over the full
/// sample (no Bessel correction). A single repetition has no spread.
pub fn cov(values: &[f64]) -> Option<f64> {
    if values.len() <= 1 {
        return Some(0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if mean == 0.0 {
        if sd == 0.0 {
            Some(0.0)
        } else {
            None // spread around a zero mean: CoV undefined
        }
    } else {
        Some(sd / mean.abs())
    }
}

/// Drop configurations whose repetition CoV exceeds `threshold`.
pub fn cov_filter(set: &MeasurementSet, threshold: f64) -> (MeasurementSet, CovReport) {
    let mut filtered = MeasurementSet::new(set.params.clone());
    let mut violations = Vec::new();
    let mut checked = 0usize;
    for target in set.targets() {
        for config in set.configs(target) {
            checked += 1;
            let values = set.reps(target, config);
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let (keep, cov_value, reason) = match cov(&values) {
                Some(c) if c <= threshold => (true, c, String::new()),
                Some(c) => (
                    false,
                    c,
                    format!("CoV {c:.4} exceeds threshold {threshold}"),
                ),
                None => (
                    false,
                    f64::INFINITY,
                    "repetitions spread around a zero mean".to_string(),
                ),
            };
            if keep {
                for (rep, value) in set.data[target][config].iter() {
                    filtered.insert(&target.0, &target.1, config.clone(), *rep, *value);
                }
            } else {
                violations.push(CovViolation {
                    function: target.0.clone(),
                    call_path: target.1.clone(),
                    config: config.to_map(),
                    cov: cov_value,
                    mean,
                    n_reps: values.len(),
                    reason,
                });
            }
        }
    }
    (
        filtered,
        CovReport {
            schema_version: SCHEMA_VERSION,
            threshold,
            checked,
            violations,
        },
    )
}
