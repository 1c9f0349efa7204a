//! Synthetic raw-dataset generator reproducing the reference screening
//! cohort's marginals with a configurable planted carrier signal.
//!
//! Class, gender, and age-group counts are hit exactly by shuffling
//! fixed-count assignment vectors rather than by independent coin flips.
//! Non-carriers draw every CBC value uniformly inside the sex-appropriate
//! normal range. Carriers flip one coin with success probability
//! `signal_strength`: on success their MCV, MCH, and HB are drawn below the
//! normal range (the microcytic hypochromic pattern), otherwise they look
//! like non-carriers. The planted signal is a test harness for the learning
//! pipeline, not a clinical model.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Dataset, FeatureSchema, Gender, Label, RawRecord, CBC_FEATURE_COUNT};

/// Features a positive carrier coin pushes below the normal range.
pub const SIGNAL_FEATURES: [&str; 3] = ["MCV", "MCH", "HB"];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {reason}")]
    InvalidConfig { reason: String },
}

/// Generator parameters. Defaults reproduce the reference cohort's
/// marginals: 5066 records, 2015 carriers, 53% male, 54% adult.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_total: usize,
    pub n_carrier: usize,
    pub male_fraction: f64,
    pub adult_fraction: f64,
    /// Probability that a carrier expresses the low-index signal.
    pub signal_strength: f64,
    /// Per-CBC-feature spread of the below-range band, as a fraction of the
    /// normal-range width: signal values fall in `[lo - noise*(hi-lo), lo)`.
    pub noise: [f64; CBC_FEATURE_COUNT],
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_total: 5066,
            n_carrier: 2015,
            male_fraction: 0.53,
            adult_fraction: 0.54,
            signal_strength: 0.9,
            noise: [0.5; CBC_FEATURE_COUNT],
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |reason: String| Err(GenError::InvalidConfig { reason });
        if self.n_total == 0 {
            return fail("n_total must be positive".into());
        }
        if self.n_carrier > self.n_total {
            return fail(format!(
                "n_carrier {} exceeds n_total {}",
                self.n_carrier, self.n_total
            ));
        }
        for (name, v) in [
            ("male_fraction", self.male_fraction),
            ("adult_fraction", self.adult_fraction),
            ("signal_strength", self.signal_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} {v} outside [0,1]"));
            }
        }
        for (i, &s) in self.noise.iter().enumerate() {
            if !s.is_finite() || s <= 0.0 {
                return fail(format!("noise[{i}] = {s} must be positive and finite"));
            }
        }
        Ok(())
    }
}

/// A boolean vector with exactly `k` of `n` entries set, order shuffled.
fn exact_count_flags(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let mut flags: Vec<bool> = (0..n).map(|i| i < k).collect();
    flags.shuffle(rng);
    flags
}

fn round_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

/// Generates a complete synthetic raw dataset, deterministic in `cfg.seed`.
///
/// Exactly `n_carrier` records are labeled carrier, `round(male_fraction *
/// n_total)` are male, and `round(adult_fraction * n_total)` are adults
/// (age 18+). No generated value is missing, so cleaning is an identity.
pub fn generate(cfg: &GenConfig) -> Result<Dataset<RawRecord>, GenError> {
    cfg.validate()?;
    let schema = FeatureSchema::default_schema();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let carrier = exact_count_flags(cfg.n_total, cfg.n_carrier, &mut rng);
    let male = exact_count_flags(cfg.n_total, round_count(cfg.male_fraction, cfg.n_total), &mut rng);
    let adult = exact_count_flags(cfg.n_total, round_count(cfg.adult_fraction, cfg.n_total), &mut rng);

    let mut records = Vec::with_capacity(cfg.n_total);
    for i in 0..cfg.n_total {
        let gender = if male[i] { Gender::Male } else { Gender::Female };
        let age_years = if adult[i] {
            rng.gen_range(18..=90)
        } else {
            rng.gen_range(1..18)
        } as f64;
        let expresses_signal = carrier[i] && rng.gen_bool(cfg.signal_strength);

        let mut cbc_values = BTreeMap::new();
        for (f, def) in schema.features.iter().enumerate() {
            let (lo, hi) = def.range_for(gender);
            let value = if expresses_signal && SIGNAL_FEATURES.contains(&def.name.as_str()) {
                let band_lo = (lo - cfg.noise[f] * (hi - lo)).max(0.0);
                rng.gen_range(band_lo..lo)
            } else {
                rng.gen_range(lo..=hi)
            };
            cbc_values.insert(def.name.clone(), value);
        }

        records.push(RawRecord {
            age_years: Some(age_years),
            gender: Some(gender),
            cbc_values,
            label: Some(if carrier[i] {
                Label::Carrier
            } else {
                Label::NonCarrier
            }),
        });
    }

    Ok(Dataset::new(
        schema,
        records,
        format!("synthetic(seed={})", cfg.seed),
    ))
}
