//! Dataset files.
//!
//! CSV: header `x1,...,xN,y`, one training point per row, and a line
//! `#test: v1,...,vN` anywhere in the file. Other `#` lines are comments.
//!
//! JSON: `{"inputs": [[...], ...], "targets": [...], "test_point": [...]}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classical::Dataset;
use crate::error::{Error, Result};

const TEST_DIRECTIVE: &str = "#test:";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub test_point: Vec<f64>,
}

impl DatasetFile {
    pub fn into_dataset(self) -> Result<Dataset<f64>> {
        Dataset::from_rows(&self.inputs, &self.targets, &self.test_point)
    }

    pub fn from_dataset(d: &Dataset<f64>) -> Self {
        DatasetFile {
            inputs: d.inputs().iter().map(|x| x.iter().copied().collect()).collect(),
            targets: d.targets().iter().copied().collect(),
            test_point: d.test_point().iter().copied().collect(),
        }
    }
}

fn parse_number(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("{what}: `{}` is not a number", s.trim())))
}

pub fn parse_csv(text: &str) -> Result<Dataset<f64>> {
    let mut test_point = None;
    let mut body = String::new();
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix(TEST_DIRECTIVE) {
            if test_point.is_some() {
                return Err(Error::Format(format!("line {}: second #test directive", lineno + 1)));
            }
            let values = rest
                .split(',')
                .map(|v| parse_number(v, "test point"))
                .collect::<Result<Vec<_>>>()?;
            test_point = Some(values);
        } else if !trimmed.starts_with('#') && !trimmed.is_empty() {
            body.push_str(line);
            body.push('\n');
        }
    }
    let test_point = test_point.ok_or_else(|| Error::Format("missing `#test:` directive".into()))?;

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Format(format!("header: {e}")))?
        .clone();
    let n = header
        .len()
        .checked_sub(1)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Format("header needs at least one input column and a `y` column".into()))?;
    for (i, name) in header.iter().enumerate() {
        let expected = if i == n { "y".to_owned() } else { format!("x{}", i + 1) };
        if name != expected {
            return Err(Error::Format(format!(
                "header column {} is `{name}`, expected `{expected}`",
                i + 1
            )));
        }
    }
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {}: {e}", row + 1)))?;
        let values = record
            .iter()
            .map(|v| parse_number(v, &format!("row {}", row + 1)))
            .collect::<Result<Vec<_>>>()?;
        targets.push(values[n]);
        inputs.push(values[..n].to_vec());
    }
    Dataset::from_rows(&inputs, &targets, &test_point)
}

pub fn to_csv(d: &Dataset<f64>) -> String {
    let mut out = String::new();
    let header: Vec<String> = (1..=d.dim()).map(|i| format!("x{i}")).chain(["y".into()]).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (x, y) in d.inputs().iter().zip(d.targets().iter()) {
        let row: Vec<String> = x.iter().chain(std::iter::once(y)).map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let test: Vec<String> = d.test_point().iter().map(|v| format!("{v:?}")).collect();
    out.push_str(&format!("{TEST_DIRECTIVE} {}\n", test.join(",")));
    out
}

pub fn parse_json(text: &str) -> Result<Dataset<f64>> {
    let file: DatasetFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("json: {e}")))?;
    file.into_dataset()
}

pub fn to_json(d: &Dataset<f64>) -> String {
    serde_json::to_string_pretty(&DatasetFile::from_dataset(d)).expect("dataset serializes")
}

/// Reads a `.json` dataset by extension, anything else as CSV.
pub fn read_dataset(path: &Path) -> Result<Dataset<f64>> {
    let text = fs::read_to_string(path)?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        parse_json(&text)
    } else {
        parse_csv(&text)
    }
}
