//! Core domain types: the CBC feature schema, patient records before and
//! after binning, and the dataset container shared by every other module.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of CBC features in the schema.
pub const CBC_FEATURE_COUNT: usize = 9;
/// Length of a full model input vector: 9 CBC bins + gender + age.
pub const FEATURE_COUNT: usize = 11;

/// Canonical CBC feature names in declared order.
pub const CBC_FEATURE_NAMES: [&str; CBC_FEATURE_COUNT] =
    ["RBC", "HB", "HCT", "MCV", "MCH", "MCHC", "RDW", "PLT", "WBC"];

/// Patient sex as recorded on the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Female,
    Male,
}

impl Gender {
    /// Binary encoding: female = 0, male = 1.
    pub fn as_bit(self) -> u8 {
        match self {
            Gender::Female => 0,
            Gender::Male => 1,
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gender::Female => write!(f, "female"),
            Gender::Male => write!(f, "male"),
        }
    }
}

/// Carrier status label. Carrier is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    NonCarrier,
    Carrier,
}

impl Label {
    pub fn as_bit(self) -> u8 {
        match self {
            Label::NonCarrier => 0,
            Label::Carrier => 1,
        }
    }

    pub fn from_bit(bit: u8) -> Option<Label> {
        match bit {
            0 => Some(Label::NonCarrier),
            1 => Some(Label::Carrier),
            _ => None,
        }
    }

    /// Signed form used by the SVM: non-carrier = -1, carrier = +1.
    pub fn as_sign(self) -> f64 {
        match self {
            Label::NonCarrier => -1.0,
            Label::Carrier => 1.0,
        }
    }
}

/// One CBC analyte: name, unit, and normal range per sex.
///
/// Features with a single published range carry it for both sexes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub unit: String,
    pub normal_range_male: (f64, f64),
    pub normal_range_female: (f64, f64),
}

impl FeatureDef {
    fn new(name: &str, unit: &str, male: (f64, f64), female: (f64, f64)) -> Self {
        FeatureDef {
            name: name.to_string(),
            unit: unit.to_string(),
            normal_range_male: male,
            normal_range_female: female,
        }
    }

    /// Normal range for the given sex.
    pub fn range_for(&self, gender: Gender) -> (f64, f64) {
        match gender {
            Gender::Male => self.normal_range_male,
            Gender::Female => self.normal_range_female,
        }
    }
}

/// Ordered list of CBC features plus the target column name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub features: Vec<FeatureDef>,
    pub class_name: String,
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("schema line {line}: expected `name,unit,lo_male,hi_male,lo_female,hi_female`, got {got:?}")]
    MalformedLine { line: usize, got: String },
    #[error("schema line {line}: unparseable bound {value:?}")]
    BadNumber { line: usize, value: String },
    #[error("feature {name}: normal range lower bound {lo} is not below upper bound {hi}")]
    BadRange { name: String, lo: f64, hi: f64 },
    #[error("feature {name}: unit must be non-empty")]
    EmptyUnit { name: String },
    #[error("schema must declare exactly the features {expected:?} in order, got {got:?}")]
    WrongFeatures { expected: Vec<String>, got: Vec<String> },
}

/// The shipped default schema with one row per CBC analyte.
pub fn default_schema() -> FeatureSchema {
    FeatureSchema::default_schema()
}

impl FeatureSchema {
    /// The shipped default schema with one row per CBC analyte.
    pub fn default_schema() -> FeatureSchema {
        let features = vec![
            FeatureDef::new("RBC", "x10^12 cells/l", (4.0, 5.0), (4.0, 5.0)),
            FeatureDef::new("HB", "g/dl", (13.0, 17.0), (12.0, 15.0)),
            FeatureDef::new("HCT", "%", (45.0, 50.0), (30.0, 45.0)),
            FeatureDef::new("MCV", "fl", (80.0, 100.0), (80.0, 100.0)),
            FeatureDef::new("MCH", "pg/cell", (27.0, 34.0), (27.0, 34.0)),
            FeatureDef::new("MCHC", "%", (32.0, 36.0), (32.0, 36.0)),
            FeatureDef::new("RDW", "%", (11.0, 15.0), (11.0, 15.0)),
            FeatureDef::new("PLT", "x10^9/l", (150.0, 350.0), (150.0, 350.0)),
            FeatureDef::new("WBC", "x10^9/l", (4.0, 10.0), (4.0, 10.0)),
        ];
        FeatureSchema {
            features,
            class_name: "class".to_string(),
        }
    }

    /// Index of a feature by name, if declared.
    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn feature(&self, index: usize) -> &FeatureDef {
        &self.features[index]
    }

    /// Renders the schema in its file representation, one feature per line:
    /// `name,unit,lo_male,hi_male,lo_female,hi_female`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.features {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                f.name,
                f.unit,
                f.normal_range_male.0,
                f.normal_range_male.1,
                f.normal_range_female.0,
                f.normal_range_female.1,
            ));
        }
        out
    }

    /// Parses the file representation produced by [`FeatureSchema::to_text`].
    ///
    /// Blank lines and lines starting with `#` are skipped. The declared
    /// features must be exactly the nine CBC analytes in canonical order.
    pub fn from_text(text: &str) -> Result<FeatureSchema, SchemaError> {
        let mut features = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 6 {
                return Err(SchemaError::MalformedLine {
                    line: i + 1,
                    got: raw.to_string(),
                });
            }
            let name = parts[0].trim().to_string();
            let unit = parts[1].trim().to_string();
            let mut bounds = [0.0f64; 4];
            for (j, cell) in parts[2..].iter().enumerate() {
                bounds[j] = cell.trim().parse().map_err(|_| SchemaError::BadNumber {
                    line: i + 1,
                    value: cell.trim().to_string(),
                })?;
            }
            features.push(FeatureDef::new(
                &name,
                &unit,
                (bounds[0], bounds[1]),
                (bounds[2], bounds[3]),
            ));
        }
        let schema = FeatureSchema {
            features,
            class_name: "class".to_string(),
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Checks the schema invariants: canonical feature set and order,
    /// non-empty units, and lower < upper on every range.
    pub fn validate(&self) -> Result<(), SchemaError> {
        let got: Vec<String> = self.features.iter().map(|f| f.name.clone()).collect();
        let expected: Vec<String> = CBC_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
        if got != expected {
            return Err(SchemaError::WrongFeatures { expected, got });
        }
        for f in &self.features {
            if f.unit.is_empty() {
                return Err(SchemaError::EmptyUnit {
                    name: f.name.clone(),
                });
            }
            for (lo, hi) in [f.normal_range_male, f.normal_range_female] {
                // partial_cmp keeps NaN bounds invalid; `lo >= hi` would not.
                if lo.partial_cmp(&hi) != Some(std::cmp::Ordering::Less) {
                    return Err(SchemaError::BadRange {
                        name: f.name.clone(),
                        lo,
                        hi,
                    });
                }
            }
        }
        Ok(())
    }
}

/// A patient row as read from a report file, before cleaning.
///
/// Any of the demographic fields and any CBC value may still be missing at
/// this stage; `clean` resolves or drops them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub age_years: Option<f64>,
    pub gender: Option<Gender>,
    /// CBC values keyed by feature name; an absent key is a missing value.
    pub cbc_values: BTreeMap<String, f64>,
    pub label: Option<Label>,
}

impl RawRecord {
    /// True when age, gender, label, and every schema feature are present.
    pub fn is_complete(&self, schema: &FeatureSchema) -> bool {
        self.age_years.is_some()
            && self.gender.is_some()
            && self.label.is_some()
            && schema
                .features
                .iter()
                .all(|f| self.cbc_values.contains_key(&f.name))
    }
}

/// A patient row after normalization: nine 0-5 bins plus binary age/gender.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinnedRecord {
    pub age_bin: u8,
    pub gender_bin: u8,
    pub bins: [u8; CBC_FEATURE_COUNT],
    pub label: Label,
}

/// Model input vector: the nine CBC bins, then gender, then age.
pub fn feature_vector(rec: &BinnedRecord) -> [u8; FEATURE_COUNT] {
    let mut v = [0u8; FEATURE_COUNT];
    v[..CBC_FEATURE_COUNT].copy_from_slice(&rec.bins);
    v[CBC_FEATURE_COUNT] = rec.gender_bin;
    v[CBC_FEATURE_COUNT + 1] = rec.age_bin;
    v
}

/// An ordered collection of records with the schema they conform to and a
/// provenance tag (source file path or generator seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<R> {
    pub schema: FeatureSchema,
    pub records: Vec<R>,
    pub provenance: String,
}

impl<R> Dataset<R> {
    pub fn new(schema: FeatureSchema, records: Vec<R>, provenance: impl Into<String>) -> Self {
        Dataset {
            schema,
            records,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Dataset<BinnedRecord> {
    /// Labels of all records in order.
    pub fn labels(&self) -> Vec<Label> {
        self.records.iter().map(|r| r.label).collect()
    }
}
