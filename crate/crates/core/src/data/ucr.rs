//! UCR archive text format: one series per row, class label in the first
//! field, fields separated by commas, tabs or runs of whitespace.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::normalize::znormalize;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("file contains no series")]
    Empty,
    #[error("line {line}: expected {expected} fields, found {found}")]
    Ragged { line: usize, expected: usize, found: usize },
    #[error("line {line}, field {field}: not a number: {text:?}")]
    NonNumeric { line: usize, field: usize, text: String },
    #[error("line {line}, field {field}: missing value")]
    MissingValue { line: usize, field: usize },
    #[error("line {line}: no values after the class label")]
    NoValues { line: usize },
    #[error("series length {len} outside the accepted range {min}..={max}")]
    Length { len: usize, min: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Comma,
    Tab,
    Whitespace,
}

impl Delimiter {
    pub fn detect(line: &str) -> Self {
        if line.contains(',') {
            Delimiter::Comma
        } else if line.contains('\t') {
            Delimiter::Tab
        } else {
            Delimiter::Whitespace
        }
    }

    fn split<'a>(&self, line: &'a str) -> Vec<&'a str> {
        match self {
            Delimiter::Comma => line.split(',').map(str::trim).collect(),
            Delimiter::Tab => line.split('\t').map(str::trim).collect(),
            Delimiter::Whitespace => line.split_whitespace().collect(),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Delimiter::Comma => ",",
            Delimiter::Tab => "\t",
            Delimiter::Whitespace => " ",
        }
    }
}

/// Accepted series lengths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParseOptions {
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        Self { min_len: 4, max_len: 512 }
    }
}

impl ParseOptions {
    pub fn unbounded() -> Self {
        Self {
            min_len: 1,
            max_len: usize::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    OriginalTrain,
    OriginalTest,
}

/// A labeled univariate series. `label` indexes the owning dataset's class inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub label: usize,
}

impl AsRef<[f64]> for TimeSeries {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// One original split of a UCR dataset. Labels are dense ids into `classes`,
/// which keeps the original label values in ascending order.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub split: Provenance,
    pub series: Vec<TimeSeries>,
    pub classes: Vec<f64>,
}

impl Dataset {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn series_len(&self) -> usize {
        self.series.first().map_or(0, |s| s.values.len())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    /// Indices of the members of class `c`, ascending.
    pub fn class_members(&self, c: usize) -> Vec<usize> {
        self.series
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == c)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn znormalized(mut self) -> Self {
        for s in &mut self.series {
            s.values = znormalize(&s.values);
        }
        self
    }

    /// One row per series, original label first. Values print in their
    /// shortest round-trip form, so parsing the text back is exact.
    pub fn to_ucr_string(&self, delimiter: Delimiter) -> String {
        let sep = delimiter.as_str();
        let mut out = String::new();
        for s in &self.series {
            out.push_str(&self.classes[s.label].to_string());
            for v in &s.values {
                out.push_str(sep);
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Re-labels against a larger class inventory that contains every class of this one.
    fn remap(&mut self, inventory: &[f64]) {
        for s in &mut self.series {
            let original = self.classes[s.label];
            s.label = inventory
                .iter()
                .position(|&c| c == original)
                .expect("inventory is a superset");
        }
        self.classes = inventory.to_vec();
    }
}

fn parse_field(text: &str, line: usize, field: usize) -> std::result::Result<f64, ParseError> {
    if text.is_empty() || text == "?" || text.eq_ignore_ascii_case("nan") {
        return Err(ParseError::MissingValue { line, field });
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_nan() => Err(ParseError::MissingValue { line, field }),
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(ParseError::NonNumeric {
            line,
            field,
            text: text.chars().take(32).collect(),
        }),
    }
}

/// Parses UCR text. Values are kept as written; no normalization.
pub fn parse_ucr_str(
    text: &str,
    name: &str,
    split: Provenance,
    options: &ParseOptions,
) -> std::result::Result<Dataset, ParseError> {
    let mut delimiter = None;
    let mut width = None;
    let mut raw: Vec<(f64, Vec<f64>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let delim = *delimiter.get_or_insert_with(|| Delimiter::detect(line));
        let fields = delim.split(line);
        if fields.len() < 2 {
            return Err(ParseError::NoValues { line: line_no });
        }
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(ParseError::Ragged {
                line: line_no,
                expected,
                found: fields.len(),
            });
        }
        let label = parse_field(fields[0], line_no, 1)?;
        let values = fields[1..]
            .iter()
            .enumerate()
            .map(|(j, f)| parse_field(f, line_no, j + 2))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        raw.push((label, values));
    }
    let len = match width {
        Some(w) => w - 1,
        None => return Err(ParseError::Empty),
    };
    if len < options.min_len || len > options.max_len {
        return Err(ParseError::Length {
            len,
            min: options.min_len,
            max: options.max_len,
        });
    }
    let mut classes: Vec<f64> = raw.iter().map(|(l, _)| *l).collect();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let series = raw
        .into_iter()
        .map(|(label, values)| TimeSeries {
            values,
            label: classes.iter().position(|&c| c == label).expect("label in inventory"),
        })
        .collect();
    Ok(Dataset {
        name: name.to_string(),
        split,
        series,
        classes,
    })
}

pub fn parse_ucr_file(path: impl AsRef<Path>, name: &str, split: Provenance, options: &ParseOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_ucr_str(&text, name, split, options).map_err(Error::from)
}

/// A UCR dataset with both original splits, z-normalized, sharing one class inventory.
#[derive(Debug, Clone, PartialEq)]
pub struct UcrDataset {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
}

impl UcrDataset {
    /// Joins two raw splits; every series is z-normalized.
    pub fn from_splits(mut train: Dataset, mut test: Dataset) -> Result<Self> {
        if train.series_len() != test.series_len() {
            return Err(Error::Config(format!(
                "{}: train series have length {}, test series {}",
                train.name,
                train.series_len(),
                test.series_len()
            )));
        }
        let mut inventory: Vec<f64> = train.classes.iter().chain(&test.classes).copied().collect();
        inventory.sort_by(f64::total_cmp);
        inventory.dedup();
        train.remap(&inventory);
        test.remap(&inventory);
        Ok(Self {
            name: train.name.clone(),
            train: train.znormalized(),
            test: test.znormalized(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.train.classes.len()
    }

    pub fn series_len(&self) -> usize {
        self.train.series_len()
    }

    /// Both splits, train first; meta-training tasks draw from this pool.
    pub fn pooled(&self) -> impl Iterator<Item = &TimeSeries> {
        self.train.series.iter().chain(&self.test.series)
    }

    /// Loads `<root>/<name>/<name>_TRAIN[.tsv|.txt|.csv]` and the matching `_TEST` file.
    pub fn load(root: impl AsRef<Path>, name: &str, options: &ParseOptions) -> Result<Self> {
        let dir = root.as_ref().join(name);
        let train = parse_ucr_file(find_split_file(&dir, name, "TRAIN")?, name, Provenance::OriginalTrain, options)?;
        let test = parse_ucr_file(find_split_file(&dir, name, "TEST")?, name, Provenance::OriginalTest, options)?;
        Self::from_splits(train, test)
    }

    /// Writes both splits as tab-separated files in the layout [`Self::load`] reads.
    pub fn save(&self, root: impl AsRef<Path>) -> Result<()> {
        let dir = root.as_ref().join(&self.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (split, data) in [("TRAIN", &self.train), ("TEST", &self.test)] {
            let path = dir.join(format!("{}_{split}.tsv", self.name));
            std::fs::write(&path, data.to_ucr_string(Delimiter::Tab)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn find_split_file(dir: &Path, name: &str, split: &str) -> Result<PathBuf> {
    for ext in ["tsv", "txt", "csv", ""] {
        let file = if ext.is_empty() {
            format!("{name}_{split}")
        } else {
            format!("{name}_{split}.{ext}")
        };
        let path = dir.join(file);
        if path.is_file() {
            return Ok(path);
        }
    }
    Err(Error::io(
        dir.join(format!("{name}_{split}")),
        std::io::Error::new(std::io::ErrorKind::NotFound, "dataset split file not found"),
    ))
}
