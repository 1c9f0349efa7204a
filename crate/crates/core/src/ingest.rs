//! Raw patient CSV loading, cleaning, and the splits/partitions used for
//! federation.
//!
//! Cleaning follows two modes: `drop` removes any record with a missing
//! value, while `neighbor_average` first repairs missing CBC measurements
//! from the nearest non-missing values of the same column in file order and
//! then drops whatever is still incomplete (records missing age, gender, or
//! the class label are always dropped). Splits and client partitions shuffle
//! deterministically from a seed so repeated runs are byte-identical.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, FeatureSchema, Gender, Label, RawRecord};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("file not found: {path}")]
    FileNotFound { path: String },
    #[error("header mismatch in {path}: missing required column {column:?}")]
    HeaderMismatch { path: String, column: String },
    #[error("{path}: no data rows")]
    EmptyDataset { path: String },
    #[error("cleaning dropped every record (mode {mode})")]
    AllRowsDropped { mode: CleaningMode },
    #[error("degenerate split: {n} records at train fraction {fraction} leaves an empty side")]
    DegenerateSplit { n: usize, fraction: f64 },
    #[error("cannot partition {n} records across {k} clients")]
    TooFewRecords { n: usize, k: usize },
    #[error("client count must be positive")]
    ZeroClients,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        source: Box<csv::Error>,
    },
}

/// How missing values are handled by [`clean`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningMode {
    /// Remove any record with a missing CBC value, age, gender, or label.
    Drop,
    /// Repair missing CBC values from column neighbors, then drop records
    /// that are still incomplete.
    NeighborAverage,
}

impl std::fmt::Display for CleaningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CleaningMode::Drop => write!(f, "drop"),
            CleaningMode::NeighborAverage => write!(f, "neighbor_average"),
        }
    }
}

/// What loading/cleaning did to the input rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
    /// Insignificant columns present in the file but not part of the schema
    /// (names, addresses, test dates, ...), dropped at load.
    pub columns_dropped: Vec<String>,
    pub rows_kept: usize,
}

/// Parameters of the train/validation split and client sharding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub client_count: usize,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.7,
            seed: 42,
            client_count: 3,
        }
    }
}

/// Loads a raw patient CSV.
///
/// The header must name every schema feature plus `age`, `gender`, and the
/// class column (matched case-insensitively); extra columns are dropped and
/// reported. Empty or malformed numeric cells count as missing values, to be
/// resolved by [`clean`]. `gender` accepts `male`/`female`/`m`/`f`/`0`/`1`
/// case-insensitively and the class column accepts `0`/`1`.
pub fn load_raw_csv(
    path: &Path,
    schema: &FeatureSchema,
) -> Result<(Dataset<RawRecord>, CleaningReport), IngestError> {
    let display = path.display().to_string();
    if !path.exists() {
        return Err(IngestError::FileNotFound { path: display });
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|source| IngestError::Csv {
            path: display.clone(),
            source: Box::new(source),
        })?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|source| IngestError::Csv {
            path: display.clone(),
            source: Box::new(source),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    // Map each required column to its position, case-insensitively.
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| IngestError::HeaderMismatch {
                path: display.clone(),
                column: name.to_string(),
            })
    };
    let age_col = find("age")?;
    let gender_col = find("gender")?;
    let class_col = find(&schema.class_name)?;
    let mut feature_cols = Vec::with_capacity(schema.features.len());
    for def in &schema.features {
        feature_cols.push(find(&def.name)?);
    }

    let mut required = vec![age_col, gender_col, class_col];
    required.extend_from_slice(&feature_cols);
    let columns_dropped: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| !required.contains(i))
        .map(|(_, h)| h.clone())
        .collect();

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|source| IngestError::Csv {
            path: display.clone(),
            source: Box::new(source),
        })?;
        let cell = |i: usize| row.get(i).unwrap_or("").trim();
        let mut cbc_values = BTreeMap::new();
        for (f, def) in schema.features.iter().enumerate() {
            if let Some(v) = parse_value(cell(feature_cols[f])) {
                cbc_values.insert(def.name.clone(), v);
            }
        }
        records.push(RawRecord {
            age_years: parse_value(cell(age_col)),
            gender: parse_gender(cell(gender_col)),
            cbc_values,
            label: parse_label(cell(class_col)),
        });
    }

    if records.is_empty() {
        return Err(IngestError::EmptyDataset { path: display });
    }
    let report = CleaningReport {
        rows_read: records.len(),
        rows_dropped_missing: 0,
        columns_dropped,
        rows_kept: records.len(),
    };
    Ok((Dataset::new(schema.clone(), records, display), report))
}

fn parse_value(cell: &str) -> Option<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Some(v),
        _ => None,
    }
}

fn parse_gender(cell: &str) -> Option<Gender> {
    match cell.to_ascii_lowercase().as_str() {
        "male" | "m" | "1" => Some(Gender::Male),
        "female" | "f" | "0" => Some(Gender::Female),
        _ => None,
    }
}

fn parse_label(cell: &str) -> Option<Label> {
    match cell {
        "0" => Some(Label::NonCarrier),
        "1" => Some(Label::Carrier),
        _ => None,
    }
}

/// Writes a raw dataset in the format [`load_raw_csv`] reads: header
/// `age,gender,<features...>,class`, gender spelled out, floats printed in
/// shortest round-trip form.
pub fn write_raw_csv(ds: &Dataset<RawRecord>, path: &Path) -> Result<(), IngestError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("age,gender");
    for def in &ds.schema.features {
        header.push(',');
        header.push_str(&def.name);
    }
    header.push(',');
    header.push_str(&ds.schema.class_name);
    writeln!(out, "{header}")?;

    for rec in &ds.records {
        let mut line = String::new();
        if let Some(age) = rec.age_years {
            line.push_str(&age.to_string());
        }
        line.push(',');
        if let Some(g) = rec.gender {
            line.push_str(&g.to_string());
        }
        for def in &ds.schema.features {
            line.push(',');
            if let Some(v) = rec.cbc_values.get(&def.name) {
                line.push_str(&v.to_string());
            }
        }
        line.push(',');
        if let Some(label) = rec.label {
            line.push_str(&label.as_bit().to_string());
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Applies the missing-value policy and returns the surviving records.
///
/// Records missing age, gender, or the label are dropped in both modes. In
/// [`CleaningMode::NeighborAverage`] a missing CBC value is first replaced by
/// the mean of the nearest preceding and nearest following non-missing values
/// of the same column in file order (only one side when the other does not
/// exist); a column with no non-missing value at all leaves the record
/// incomplete and it is dropped.
pub fn clean(
    ds: &Dataset<RawRecord>,
    mode: CleaningMode,
) -> Result<(Dataset<RawRecord>, CleaningReport), IngestError> {
    let mut records = ds.records.clone();

    if mode == CleaningMode::NeighborAverage {
        // Repair column by column over the full file so that records about to
        // be dropped for demographic gaps still contribute their measurements.
        for def in &ds.schema.features {
            let values: Vec<Option<f64>> = records
                .iter()
                .map(|r| r.cbc_values.get(&def.name).copied())
                .collect();
            for (i, rec) in records.iter_mut().enumerate() {
                if values[i].is_some() {
                    continue;
                }
                let before = values[..i].iter().rev().flatten().next();
                let after = values[i + 1..].iter().flatten().next();
                let repaired = match (before, after) {
                    (Some(b), Some(a)) => Some((b + a) / 2.0),
                    (Some(b), None) => Some(*b),
                    (None, Some(a)) => Some(*a),
                    (None, None) => None,
                };
                if let Some(v) = repaired {
                    rec.cbc_values.insert(def.name.clone(), v);
                }
            }
        }
    }

    let rows_read = records.len();
    let kept: Vec<RawRecord> = records
        .into_iter()
        .filter(|r| r.is_complete(&ds.schema))
        .collect();
    if kept.is_empty() {
        return Err(IngestError::AllRowsDropped { mode });
    }
    let report = CleaningReport {
        rows_read,
        rows_dropped_missing: rows_read - kept.len(),
        columns_dropped: Vec::new(),
        rows_kept: kept.len(),
    };
    let provenance = format!("{} cleaned({mode})", ds.provenance);
    Ok((Dataset::new(ds.schema.clone(), kept, provenance), report))
}

fn shuffled<R: Clone>(records: &[R], seed: u64) -> Vec<R> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<R> = records.to_vec();
    out.shuffle(&mut rng);
    out
}

/// Shuffles deterministically by seed and splits the first
/// `floor(train_fraction * n)` records into the training set, the rest into
/// validation. Errors when either side would be empty.
pub fn train_val_split<R: Clone>(
    ds: &Dataset<R>,
    spec: &SplitSpec,
) -> Result<(Dataset<R>, Dataset<R>), IngestError> {
    let n = ds.len();
    let take = if spec.train_fraction.is_finite() && spec.train_fraction > 0.0 {
        (spec.train_fraction * n as f64).floor() as usize
    } else {
        0
    };
    if take == 0 || take >= n {
        return Err(IngestError::DegenerateSplit {
            n,
            fraction: spec.train_fraction,
        });
    }
    let mut rows = shuffled(&ds.records, spec.seed);
    let val_rows = rows.split_off(take);
    let train = Dataset::new(
        ds.schema.clone(),
        rows,
        format!("{} train(fraction={}, seed={})", ds.provenance, spec.train_fraction, spec.seed),
    );
    let val = Dataset::new(
        ds.schema.clone(),
        val_rows,
        format!("{} val(fraction={}, seed={})", ds.provenance, spec.train_fraction, spec.seed),
    );
    Ok((train, val))
}

/// Shuffles deterministically by seed and deals contiguous shards to `k`
/// clients: the first `n mod k` clients receive `ceil(n/k)` records and the
/// rest `floor(n/k)`.
pub fn partition_clients<R: Clone>(
    ds: &Dataset<R>,
    k: usize,
    seed: u64,
) -> Result<Vec<Dataset<R>>, IngestError> {
    if k == 0 {
        return Err(IngestError::ZeroClients);
    }
    let n = ds.len();
    if n < k {
        return Err(IngestError::TooFewRecords { n, k });
    }
    let rows = shuffled(&ds.records, seed);
    let base = n / k;
    let extra = n % k;
    let mut shards = Vec::with_capacity(k);
    let mut start = 0;
    for c in 0..k {
        let size = base + usize::from(c < extra);
        let shard = rows[start..start + size].to_vec();
        start += size;
        shards.push(Dataset::new(
            ds.schema.clone(),
            shard,
            format!("{} shard({}/{k}, seed={seed})", ds.provenance, c + 1),
        ));
    }
    Ok(shards)
}
