//! Normalization of raw records: age and gender binarization and the 0-5
//! binning of each CBC value against its sex-appropriate normal range.
//!
//! Bin 0 means below the normal range and bin 5 above it; bins 1-4 are the
//! four equal divisions of the range. Interior sub-ranges are half-open with
//! the top one closed, so the bins partition `[lo, hi]` with no gaps: a value
//! equal to `lo` falls in bin 1 and a value equal to `hi` in bin 4.

use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::domain::{
    BinnedRecord, Dataset, FeatureSchema, Label, RawRecord, CBC_FEATURE_COUNT,
};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("invalid range: lower bound {lo} is not below upper bound {hi}")]
    InvalidRange { lo: f64, hi: f64 },
    #[error("non-finite value {value}")]
    NonFiniteValue { value: f64 },
    #[error("negative age {age}")]
    NegativeAge { age: f64 },
    #[error("record {index}: missing value for {field}")]
    MissingValue { index: usize, field: String },
    #[error("record {index}, feature {feature}: {source}")]
    RecordError {
        index: usize,
        feature: String,
        source: Box<PreprocessError>,
    },
    #[error("binned file {path}: {message}")]
    BadBinnedFile { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Header of the binned dataset CSV, in column order.
pub const BINNED_HEADER: [&str; 12] = [
    "rbc", "hb", "hct", "mcv", "mch", "mchc", "rdw", "plt", "wbc", "gender", "age", "class",
];

/// Maps a measurement to its 0-5 bin against the normal range `[lo, hi]`.
///
/// Values below the range map to 0 and above it to 5. In-range values map to
/// `1 + min(3, floor((v - lo) * 4 / (hi - lo)))`, so `hi` itself lands in the
/// top quartile bin 4.
pub fn bin_value(v: f64, lo: f64, hi: f64) -> Result<u8, PreprocessError> {
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(PreprocessError::InvalidRange { lo, hi });
    }
    if !v.is_finite() {
        return Err(PreprocessError::NonFiniteValue { value: v });
    }
    if v < lo {
        return Ok(0);
    }
    if v > hi {
        return Ok(5);
    }
    let quartile = ((v - lo) * 4.0 / (hi - lo)).floor() as u8;
    Ok(1 + quartile.min(3))
}

/// Age encoding: under 18 is 0 (child), 18 and over is 1 (adult).
pub fn binarize_age(age_years: f64) -> Result<u8, PreprocessError> {
    if !age_years.is_finite() {
        return Err(PreprocessError::NonFiniteValue { value: age_years });
    }
    if age_years < 0.0 {
        return Err(PreprocessError::NegativeAge { age: age_years });
    }
    Ok(if age_years < 18.0 { 0 } else { 1 })
}

/// Gender encoding: female is 0, male is 1.
pub fn binarize_gender(g: crate::domain::Gender) -> u8 {
    g.as_bit()
}

/// Bins every record of a cleaned raw dataset feature-wise, using the
/// sex-appropriate range for each feature. Labels are copied and record
/// order is preserved. Fails with the offending record index if a value is
/// missing or non-finite.
pub fn normalize_dataset(
    raw: &[RawRecord],
    schema: &FeatureSchema,
    provenance: impl Into<String>,
) -> Result<Dataset<BinnedRecord>, PreprocessError> {
    let mut records = Vec::with_capacity(raw.len());
    for (index, rec) in raw.iter().enumerate() {
        records.push(normalize_record(rec, schema, index)?);
    }
    Ok(Dataset::new(schema.clone(), records, provenance))
}

fn normalize_record(
    rec: &RawRecord,
    schema: &FeatureSchema,
    index: usize,
) -> Result<BinnedRecord, PreprocessError> {
    let age = rec.age_years.ok_or_else(|| PreprocessError::MissingValue {
        index,
        field: "age".to_string(),
    })?;
    let gender = rec.gender.ok_or_else(|| PreprocessError::MissingValue {
        index,
        field: "gender".to_string(),
    })?;
    let label = rec.label.ok_or_else(|| PreprocessError::MissingValue {
        index,
        field: schema.class_name.clone(),
    })?;

    let mut bins = [0u8; CBC_FEATURE_COUNT];
    for (f, def) in schema.features.iter().enumerate() {
        let value = *rec
            .cbc_values
            .get(&def.name)
            .ok_or_else(|| PreprocessError::MissingValue {
                index,
                field: def.name.clone(),
            })?;
        let (lo, hi) = def.range_for(gender);
        bins[f] = bin_value(value, lo, hi).map_err(|source| PreprocessError::RecordError {
            index,
            feature: def.name.clone(),
            source: Box::new(source),
        })?;
    }

    Ok(BinnedRecord {
        age_bin: binarize_age(age).map_err(|source| PreprocessError::RecordError {
            index,
            feature: "age".to_string(),
            source: Box::new(source),
        })?,
        gender_bin: binarize_gender(gender),
        bins,
        label,
    })
}

/// Writes a binned dataset as CSV with the `rbc,...,wbc,gender,age,class`
/// header and integer cells.
pub fn write_binned_csv(ds: &Dataset<BinnedRecord>, path: &Path) -> Result<(), PreprocessError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(out, "{}", binned_csv_text(ds))?;
    out.flush()?;
    Ok(())
}

/// The binned dataset CSV as a string, for byte-stable emission.
pub fn binned_csv_text(ds: &Dataset<BinnedRecord>) -> String {
    let mut text = BINNED_HEADER.join(",");
    text.push('\n');
    for rec in &ds.records {
        for bin in rec.bins {
            text.push_str(&bin.to_string());
            text.push(',');
        }
        text.push_str(&format!(
            "{},{},{}\n",
            rec.gender_bin,
            rec.age_bin,
            rec.label.as_bit()
        ));
    }
    text
}

/// Reads a binned dataset CSV previously produced by [`write_binned_csv`].
pub fn read_binned_csv(path: &Path) -> Result<Dataset<BinnedRecord>, PreprocessError> {
    let text = std::fs::read_to_string(path)?;
    let display = path.display().to_string();
    let bad = |message: &str| PreprocessError::BadBinnedFile {
        path: display.clone(),
        message: message.to_string(),
    };

    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file"))?;
    if header.split(',').collect::<Vec<_>>() != BINNED_HEADER {
        return Err(bad(&format!("unexpected header {header:?}")));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != BINNED_HEADER.len() {
            return Err(bad(&format!("row {} has {} cells", i + 2, cells.len())));
        }
        let mut values = [0u8; 12];
        for (j, cell) in cells.iter().enumerate() {
            values[j] = cell
                .trim()
                .parse()
                .map_err(|_| bad(&format!("row {}: bad cell {cell:?}", i + 2)))?;
        }
        let mut bins = [0u8; CBC_FEATURE_COUNT];
        bins.copy_from_slice(&values[..CBC_FEATURE_COUNT]);
        if bins.iter().any(|&b| b > 5) || values[9] > 1 || values[10] > 1 {
            return Err(bad(&format!("row {}: value out of range", i + 2)));
        }
        let label = Label::from_bit(values[11])
            .ok_or_else(|| bad(&format!("row {}: class must be 0 or 1", i + 2)))?;
        records.push(BinnedRecord {
            bins,
            gender_bin: values[9],
            age_bin: values[10],
            label,
        });
    }
    Ok(Dataset::new(
        FeatureSchema::default_schema(),
        records,
        display,
    ))
}
