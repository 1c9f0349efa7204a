//! Run configuration: documented defaults, a flat `key=value` config file,
//! and CLI-flag overrides, resolved into a core [`SimConfig`] plus the
//! output directory.
//!
//! Precedence is defaults < config file < flags. The resolved settings are
//! written back into the output directory as `resolved.conf`, which is
//! itself a valid `--config` input, so any run can be reproduced from its
//! own outputs. The output directory is deliberately not part of that file:
//! it says where outputs land, never what they contain.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use fedscreen_core::federation::{
    AggregationMode, DataSource, PipelineError, SimConfig, TransportKind,
};
use fedscreen_core::ingest::CleaningMode;
use fedscreen_core::learners::{ModelKind, SvmEncoding};
use fedscreen_core::synthgen::GenConfig;

/// Default TCP port the coordinator listens on.
pub const DEFAULT_PORT: u16 = 7461;

/// Default output directory for `run`.
pub const DEFAULT_OUT: &str = "out";

/// Transport choice before the port is attached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportChoice {
    InProc,
    Tcp,
}

/// Every `run` setting as an optional override, so the precedence layers
/// compose field by field.
#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub input: Option<PathBuf>,
    pub rows: Option<usize>,
    pub carriers: Option<usize>,
    pub signal: Option<f64>,
    pub male_fraction: Option<f64>,
    pub adult_fraction: Option<f64>,
    pub missing: Option<CleaningMode>,
    pub train_fraction: Option<f64>,
    pub clients: Option<usize>,
    pub kinds: Option<Vec<ModelKind>>,
    pub mode: Option<AggregationMode>,
    pub rounds: Option<usize>,
    pub transport: Option<TransportChoice>,
    pub port: Option<u16>,
    pub max_depth: Option<usize>,
    pub min_leaf: Option<usize>,
    pub alpha: Option<f64>,
    pub svm_c: Option<f64>,
    pub gamma: Option<f64>,
    pub epochs: Option<usize>,
    pub encoding: Option<SvmEncoding>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl RunOverrides {
    /// Lays `higher` over `self`: any field `higher` sets wins.
    pub fn overlay(mut self, higher: RunOverrides) -> RunOverrides {
        macro_rules! take {
            ($($field:ident),+ $(,)?) => {
                $(if higher.$field.is_some() { self.$field = higher.$field; })+
            };
        }
        take!(
            input, rows, carriers, signal, male_fraction, adult_fraction, missing,
            train_fraction, clients, kinds, mode, rounds, transport, port, max_depth,
            min_leaf, alpha, svm_c, gamma, epochs, encoding, seed, out,
        );
        self
    }

    fn any_synth_key(&self) -> Option<&'static str> {
        if self.rows.is_some() {
            Some("rows")
        } else if self.carriers.is_some() {
            Some("carriers")
        } else if self.signal.is_some() {
            Some("signal")
        } else if self.male_fraction.is_some() {
            Some("male_fraction")
        } else if self.adult_fraction.is_some() {
            Some("adult_fraction")
        } else {
            None
        }
    }
}

fn conf_error(path: &Path, line_no: usize, detail: impl std::fmt::Display) -> PipelineError {
    PipelineError::new(
        "config",
        format!("{}: line {line_no}: {detail}", path.display()),
    )
}

fn parse_value<T>(key: &str, value: &str) -> Result<T, String>
where
    T: FromStr,
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("{key}: invalid value {value:?}: {e}"))
}

fn parse_missing(value: &str) -> Result<CleaningMode, String> {
    match value {
        "drop" => Ok(CleaningMode::Drop),
        "neighbor-average" => Ok(CleaningMode::NeighborAverage),
        other => Err(format!(
            "missing: invalid value {other:?} (expected drop or neighbor-average)"
        )),
    }
}

fn parse_transport(value: &str) -> Result<TransportChoice, String> {
    match value {
        "inproc" => Ok(TransportChoice::InProc),
        "tcp" => Ok(TransportChoice::Tcp),
        other => Err(format!(
            "transport: invalid value {other:?} (expected inproc or tcp)"
        )),
    }
}

fn parse_encoding(value: &str) -> Result<SvmEncoding, String> {
    match value {
        "ordinal" => Ok(SvmEncoding::Ordinal),
        "onehot" => Ok(SvmEncoding::OneHot),
        other => Err(format!(
            "encoding: invalid value {other:?} (expected ordinal or onehot)"
        )),
    }
}

fn parse_kinds(value: &str) -> Result<Vec<ModelKind>, String> {
    value
        .split(',')
        .map(|token| ModelKind::from_str(token).map_err(|e| format!("kinds: {e}")))
        .collect()
}

/// Parses a flat `key=value` config file. `#` starts a comment line; blank
/// lines are ignored; unknown keys are errors so typos cannot silently fall
/// back to defaults.
pub fn parse_conf(text: &str, path: &Path) -> Result<RunOverrides, PipelineError> {
    let mut o = RunOverrides::default();
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| conf_error(path, line_no, format!("expected key=value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        let result: Result<(), String> = match key {
            "input" => {
                o.input = Some(PathBuf::from(value));
                Ok(())
            }
            "rows" => parse_value(key, value).map(|v| o.rows = Some(v)),
            "carriers" => parse_value(key, value).map(|v| o.carriers = Some(v)),
            "signal" => parse_value(key, value).map(|v| o.signal = Some(v)),
            "male_fraction" => parse_value(key, value).map(|v| o.male_fraction = Some(v)),
            "adult_fraction" => parse_value(key, value).map(|v| o.adult_fraction = Some(v)),
            "missing" => parse_missing(value).map(|v| o.missing = Some(v)),
            "train_fraction" => parse_value(key, value).map(|v| o.train_fraction = Some(v)),
            "clients" => parse_value(key, value).map(|v| o.clients = Some(v)),
            "kinds" => parse_kinds(value).map(|v| o.kinds = Some(v)),
            "mode" => AggregationMode::from_str(value)
                .map(|v| o.mode = Some(v))
                .map_err(|e| format!("mode: {e}")),
            "rounds" => parse_value(key, value).map(|v| o.rounds = Some(v)),
            "transport" => parse_transport(value).map(|v| o.transport = Some(v)),
            "port" => parse_value(key, value).map(|v| o.port = Some(v)),
            "max_depth" => parse_value(key, value).map(|v| o.max_depth = Some(v)),
            "min_leaf" => parse_value(key, value).map(|v| o.min_leaf = Some(v)),
            "alpha" => parse_value(key, value).map(|v| o.alpha = Some(v)),
            "svm_c" => parse_value(key, value).map(|v| o.svm_c = Some(v)),
            "gamma" => parse_value(key, value).map(|v| o.gamma = Some(v)),
            "epochs" => parse_value(key, value).map(|v| o.epochs = Some(v)),
            "encoding" => parse_encoding(value).map(|v| o.encoding = Some(v)),
            "seed" => parse_value(key, value).map(|v| o.seed = Some(v)),
            other => Err(format!("unknown key {other:?}")),
        };
        result.map_err(|detail| conf_error(path, line_no, detail))?;
    }
    Ok(o)
}

/// Applies the merged overrides to the documented defaults.
///
/// `input` selects the raw-CSV source and cannot be combined with the
/// synthetic-generator keys (`rows`, `carriers`, `signal`, `male_fraction`,
/// `adult_fraction`).
pub fn resolve(merged: RunOverrides) -> Result<(SimConfig, PathBuf), PipelineError> {
    let mut sim = SimConfig::default();
    if let Some(input) = &merged.input {
        if let Some(key) = merged.any_synth_key() {
            return Err(PipelineError::new(
                "config",
                format!("input and the synthetic-generator key {key:?} are mutually exclusive"),
            ));
        }
        sim.source = DataSource::File(input.clone());
    } else {
        let mut gen = GenConfig::default();
        if let Some(v) = merged.rows {
            gen.n_total = v;
        }
        if let Some(v) = merged.carriers {
            gen.n_carrier = v;
        }
        if let Some(v) = merged.signal {
            gen.signal_strength = v;
        }
        if let Some(v) = merged.male_fraction {
            gen.male_fraction = v;
        }
        if let Some(v) = merged.adult_fraction {
            gen.adult_fraction = v;
        }
        sim.source = DataSource::Synth(gen);
    }
    if let Some(v) = merged.missing {
        sim.cleaning = v;
    }
    if let Some(v) = merged.train_fraction {
        sim.train_fraction = v;
    }
    if let Some(v) = merged.clients {
        sim.client_count = v;
    }
    if let Some(v) = merged.kinds {
        if v.is_empty() {
            return Err(PipelineError::new("config", "kinds must not be empty"));
        }
        sim.kinds = v;
    }
    if let Some(v) = merged.mode {
        sim.mode = v;
    }
    if let Some(v) = merged.rounds {
        sim.rounds = v;
    }
    let transport = merged.transport.unwrap_or(TransportChoice::InProc);
    sim.transport = match transport {
        TransportChoice::InProc => TransportKind::InProc,
        TransportChoice::Tcp => TransportKind::Tcp {
            port: merged.port.unwrap_or(DEFAULT_PORT),
        },
    };
    if let Some(v) = merged.max_depth {
        sim.dt.max_depth = v;
    }
    if let Some(v) = merged.min_leaf {
        sim.dt.min_leaf = v;
    }
    if let Some(v) = merged.alpha {
        sim.nb_alpha = v;
    }
    if let Some(v) = merged.svm_c {
        sim.svm.c = v;
    }
    if let Some(v) = merged.gamma {
        sim.svm.gamma = v;
    }
    if let Some(v) = merged.epochs {
        sim.svm.epochs = v;
    }
    if let Some(v) = merged.encoding {
        sim.svm.encoding = v;
    }
    if let Some(v) = merged.seed {
        sim.seed = v;
    }
    let out = merged.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    Ok((sim, out))
}

fn missing_token(mode: CleaningMode) -> &'static str {
    match mode {
        CleaningMode::Drop => "drop",
        CleaningMode::NeighborAverage => "neighbor-average",
    }
}

fn encoding_token(encoding: SvmEncoding) -> &'static str {
    match encoding {
        SvmEncoding::Ordinal => "ordinal",
        SvmEncoding::OneHot => "onehot",
    }
}

fn kinds_token(kinds: &[ModelKind]) -> String {
    kinds
        .iter()
        .map(ModelKind::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// Renders the resolved configuration as a config file. Feeding it back
/// through `run --config` reproduces the run byte for byte.
pub fn resolved_conf_text(sim: &SimConfig) -> String {
    let mut out = String::from("# resolved run configuration; rerun with `run --config <this file>`\n");
    let mut line = |key: &str, value: String| {
        out.push_str(key);
        out.push('=');
        out.push_str(&value);
        out.push('\n');
    };
    match &sim.source {
        DataSource::File(path) => line("input", path.display().to_string()),
        DataSource::Synth(gen) => {
            line("rows", gen.n_total.to_string());
            line("carriers", gen.n_carrier.to_string());
            line("signal", gen.signal_strength.to_string());
            line("male_fraction", gen.male_fraction.to_string());
            line("adult_fraction", gen.adult_fraction.to_string());
        }
    }
    line("missing", missing_token(sim.cleaning).to_string());
    line("train_fraction", sim.train_fraction.to_string());
    line("clients", sim.client_count.to_string());
    line("kinds", kinds_token(&sim.kinds));
    line("mode", sim.mode.to_string());
    line("rounds", sim.rounds.to_string());
    match sim.transport {
        TransportKind::InProc => line("transport", "inproc".to_string()),
        TransportKind::Tcp { port } => {
            line("transport", "tcp".to_string());
            line("port", port.to_string());
        }
    }
    line("max_depth", sim.dt.max_depth.to_string());
    line("min_leaf", sim.dt.min_leaf.to_string());
    line("alpha", sim.nb_alpha.to_string());
    line("svm_c", sim.svm.c.to_string());
    line("gamma", sim.svm.gamma.to_string());
    line("epochs", sim.svm.epochs.to_string());
    line("encoding", encoding_token(sim.svm.encoding).to_string());
    line("seed", sim.seed.to_string());
    out
}
