//! CSV ingestion, feature schemas and deterministic train/test splitting.
//!
//! A schema is described by a small TOML file:
//!
//! ```toml
//! target = "loan_status"
//! features = ["loan_amnt", "int_rate", "annual_inc"]
//! missing = "drop-row"      # or "impute-median"
//! bad_cell = "abort"        # or "drop-row"
//!
//! [target_mapping]
//! "Fully Paid" = 1
//! "Charged Off" = 0
//! ```
//!
//! Rows whose target label is not in `target_mapping` are skipped and counted
//! in the [`LoadReport`].

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, read_to_string, write_atomic};
use crate::stats::Describe;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<String>,
    target_name: String,
    target_mapping: BTreeMap<String, u8>,
}

impl FeatureSchema {
    pub fn new(
        features: Vec<String>,
        target_name: impl Into<String>,
        target_mapping: BTreeMap<String, u8>,
    ) -> Result<Self> {
        let target_name = target_name.into();
        if features.is_empty() {
            return Err(Error::Schema("no features declared".into()));
        }
        let mut seen = HashSet::new();
        for name in &features {
            if name.is_empty() {
                return Err(Error::Schema("empty feature name".into()));
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name {name:?}")));
            }
        }
        if target_name.is_empty() {
            return Err(Error::Schema("empty target name".into()));
        }
        if seen.contains(target_name.as_str()) {
            return Err(Error::Schema(format!(
                "target column {target_name:?} is also listed as a feature"
            )));
        }
        if target_mapping.len() != 2 {
            return Err(Error::Schema(format!(
                "target_mapping must name exactly two labels, found {}",
                target_mapping.len()
            )));
        }
        let mut classes: Vec<u8> = target_mapping.values().copied().collect();
        classes.sort_unstable();
        if classes != [0, 1] {
            return Err(Error::Schema(
                "target_mapping must map one label to 0 and the other to 1".into(),
            ));
        }
        Ok(FeatureSchema {
            features,
            target_name,
            target_mapping,
        })
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn target_mapping(&self) -> &BTreeMap<String, u8> {
        &self.target_mapping
    }

    /// Raw label for a class index.
    pub fn label_of(&self, class: u8) -> &str {
        self.target_mapping
            .iter()
            .find(|(_, &c)| c == class)
            .map(|(label, _)| label.as_str())
            .expect("mapping is bijective onto {0, 1}")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MissingPolicy {
    #[default]
    DropRow,
    ImputeMedian,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BadCellPolicy {
    #[default]
    Abort,
    DropRow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    pub missing: MissingPolicy,
    pub bad_cell: BadCellPolicy,
}

/// Schema plus load options, as read from a TOML config file.
#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub schema: FeatureSchema,
    pub options: LoadOptions,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    target: String,
    features: Vec<String>,
    target_mapping: BTreeMap<String, u8>,
    #[serde(default)]
    missing: MissingPolicy,
    #[serde(default)]
    bad_cell: BadCellPolicy,
}

impl DataConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(DataConfig {
            schema: FeatureSchema::new(raw.features, raw.target, raw.target_mapping)?,
            options: LoadOptions {
                missing: raw.missing,
                bad_cell: raw.bad_cell,
            },
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("target = {:?}\n", self.schema.target_name));
        let names: Vec<String> = self.schema.features.iter().map(|f| format!("{f:?}")).collect();
        out.push_str(&format!("features = [{}]\n", names.join(", ")));
        let missing = match self.options.missing {
            MissingPolicy::DropRow => "drop-row",
            MissingPolicy::ImputeMedian => "impute-median",
        };
        let bad = match self.options.bad_cell {
            BadCellPolicy::Abort => "abort",
            BadCellPolicy::DropRow => "drop-row",
        };
        out.push_str(&format!("missing = \"{missing}\"\nbad_cell = \"{bad}\"\n\n"));
        out.push_str("[target_mapping]\n");
        for (label, class) in &self.schema.target_mapping {
            out.push_str(&format!("{label:?} = {class}\n"));
        }
        out
    }
}

/// Numeric feature matrix (row-major) with binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: FeatureSchema,
    values: Vec<f64>,
    targets: Vec<u8>,
}

impl Dataset {
    pub fn new(schema: FeatureSchema, rows: Vec<Vec<f64>>, targets: Vec<u8>) -> Result<Self> {
        let d = schema.n_features();
        if rows.len() != targets.len() {
            return Err(Error::InvalidParam(format!(
                "{} rows but {} targets",
                rows.len(),
                targets.len()
            )));
        }
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::FeatureCount {
                    expected: d,
                    got: row.len(),
                });
            }
            values.extend(row);
        }
        Self::from_flat(schema, values, targets)
    }

    pub fn from_flat(schema: FeatureSchema, values: Vec<f64>, targets: Vec<u8>) -> Result<Self> {
        let d = schema.n_features();
        if values.len() != targets.len() * d {
            return Err(Error::InvalidParam(format!(
                "{} values cannot form {} rows of {d} features",
                values.len(),
                targets.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                feature: pos % d,
                value: values[pos],
            });
        }
        if let Some(t) = targets.iter().find(|&&t| t > 1) {
            return Err(Error::InvalidParam(format!("target class {t} is not 0 or 1")));
        }
        Ok(Dataset {
            schema,
            values,
            targets,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n_samples(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.n_features()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.n_features();
        &self.values[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_features())
    }

    pub fn value(&self, i: usize, feature: usize) -> f64 {
        self.values[i * self.n_features() + feature]
    }

    pub fn targets(&self) -> &[u8] {
        &self.targets
    }

    pub fn class_counts(&self) -> [u64; 2] {
        let ones = self.targets.iter().filter(|&&t| t == 1).count() as u64;
        [self.targets.len() as u64 - ones, ones]
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(indices.len() * self.n_features());
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.row(i));
            targets.push(self.targets[i]);
        }
        Dataset {
            schema: self.schema.clone(),
            values,
            targets,
        }
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.schema.features.iter().map(String::as_str).collect();
        header.push(&self.schema.target_name);
        w.write_record(&header)?;
        for (row, &t) in self.rows().zip(&self.targets) {
            let mut rec: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            rec.push(self.schema.label_of(t).to_string());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, self.to_csv_string()?.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    pub dropped_unmapped: usize,
    pub dropped_missing: usize,
    pub dropped_unparseable: usize,
    pub imputed_cells: usize,
}

const MISSING_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "null", "NULL"];

enum Cell {
    Value(f64),
    Missing,
    Bad,
}

fn parse_cell(raw: &str) -> Cell {
    let s = raw.trim();
    if MISSING_TOKENS.contains(&s) {
        return Cell::Missing;
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Cell::Value(v),
        Ok(_) => Cell::Missing,
        Err(_) => Cell::Bad,
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema, options: LoadOptions) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    load_csv_str(&text, &path.display().to_string(), schema, options)
}

/// Same as [`load_csv`], reading from an in-memory string; `source` names the
/// input in error messages.
pub fn load_csv_str(
    text: &str,
    source: &str,
    schema: &FeatureSchema,
    options: LoadOptions,
) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let column_of = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("{source}: missing column {name:?}")))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|f| column_of(f))
        .collect::<Result<Vec<_>>>()?;
    let target_col = column_of(&schema.target_name)?;

    let d = schema.n_features();
    let mut report = LoadReport::default();
    // Missing cells are kept as NaN until the policy is applied.
    let mut values = Vec::new();
    let mut targets = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        report.rows_read += 1;
        let label = record.get(target_col).unwrap_or("").trim();
        let Some(&class) = schema.target_mapping.get(label) else {
            report.dropped_unmapped += 1;
            continue;
        };
        let mut row = Vec::with_capacity(d);
        let mut has_missing = false;
        let mut bad = None;
        for (j, &col) in feature_cols.iter().enumerate() {
            let raw = record.get(col).unwrap_or("");
            match parse_cell(raw) {
                Cell::Value(v) => row.push(v),
                Cell::Missing => {
                    has_missing = true;
                    row.push(f64::NAN);
                }
                Cell::Bad => {
                    bad = Some((j, raw.to_string()));
                    break;
                }
            }
        }
        if let Some((j, raw)) = bad {
            match options.bad_cell {
                BadCellPolicy::Abort => {
                    return Err(Error::Parse {
                        path: source.to_string(),
                        line,
                        message: format!("cannot parse {raw:?} as a number in column {:?}", schema.features[j]),
                    })
                }
                BadCellPolicy::DropRow => {
                    report.dropped_unparseable += 1;
                    continue;
                }
            }
        }
        if has_missing && options.missing == MissingPolicy::DropRow {
            report.dropped_missing += 1;
            continue;
        }
        values.extend(row);
        targets.push(class);
    }

    if targets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if options.missing == MissingPolicy::ImputeMedian {
        report.imputed_cells = impute_median(&mut values, d, schema)?;
    }
    let data = Dataset::from_flat(schema.clone(), values, targets)?;
    Ok((data, report))
}

fn impute_median(values: &mut [f64], d: usize, schema: &FeatureSchema) -> Result<usize> {
    let mut imputed = 0;
    for j in 0..d {
        let mut present: Vec<f64> = values
            .iter()
            .skip(j)
            .step_by(d)
            .copied()
            .filter(|v| !v.is_nan())
            .collect();
        if present.len() * d == values.len() {
            continue;
        }
        if present.is_empty() {
            return Err(Error::Schema(format!(
                "column {:?} has no values to impute from",
                schema.features[j]
            )));
        }
        present.sort_by(f64::total_cmp);
        let median = crate::stats::quantile_sorted(&present, 0.5);
        for v in values.iter_mut().skip(j).step_by(d) {
            if v.is_nan() {
                *v = median;
                imputed += 1;
            }
        }
    }
    Ok(imputed)
}

/// Shuffled index partition: the first `floor(train_fraction * n)` shuffled
/// indices form the training part.
///
/// The shuffle is a Fisher-Yates pass driven by ChaCha8 seeded with `seed`.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InvalidParam(format!("split needs at least 2 samples, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParam(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = (train_fraction * n as f64).floor() as usize;
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

pub fn split(data: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(data.n_samples(), train_fraction, seed)?;
    Ok((data.subset(&train), data.subset(&test)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSummary {
    pub feature: String,
    pub class: u8,
    pub stats: Describe,
}

/// Per-feature statistics for each target class present in the data.
pub fn summarize(data: &Dataset) -> Result<Vec<FeatureSummary>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut out = Vec::new();
    for (j, name) in data.schema.features.iter().enumerate() {
        for class in [0u8, 1] {
            let column: Vec<f64> = (0..data.n_samples())
                .filter(|&i| data.targets[i] == class)
                .map(|i| data.value(i, j))
                .collect();
            if let Some(stats) = Describe::of(&column) {
                out.push(FeatureSummary {
                    feature: name.clone(),
                    class,
                    stats,
                });
            }
        }
    }
    Ok(out)
}
