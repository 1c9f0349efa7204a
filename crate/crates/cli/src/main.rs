//! `fedscreen`: a single executable exposing the screening pipeline as
//! subcommands — synthetic data generation, preprocessing, splitting, local
//! training, the full federated run, evaluation, and report rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 pipeline error (the message
//! names the failing stage). A run is fully determined by its config file,
//! flags, and seed; rerunning a config reproduces every output byte.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::OnceLock;

use clap::{Parser, Subcommand, ValueEnum};

use fedscreen_core::federation::{AggregationMode, PipelineError, PROTOCOL_VERSION};
use fedscreen_core::ingest::CleaningMode;
use fedscreen_core::learners::{
    DtHyper, ModelKind, SvmEncoding, SvmHyper, MODEL_FILE_VERSION,
};
use fedscreen_core::metrics::SplitTag;
use fedscreen_core::synthgen::GenConfig;

use commands::ReportFormat;
use config::{RunOverrides, TransportChoice};

fn long_version() -> &'static str {
    static VERSION: OnceLock<String> = OnceLock::new();
    VERSION.get_or_init(|| {
        format!(
            "{} (model file v{MODEL_FILE_VERSION}, wire protocol v{PROTOCOL_VERSION})",
            env!("CARGO_PKG_VERSION")
        )
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum KindArg {
    Dt,
    Nb,
    Svm,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> ModelKind {
        match k {
            KindArg::Dt => ModelKind::Dt,
            KindArg::Nb => ModelKind::Nb,
            KindArg::Svm => ModelKind::Svm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Paper13,
    Fedavg,
}

impl From<ModeArg> for AggregationMode {
    fn from(m: ModeArg) -> AggregationMode {
        match m {
            ModeArg::Paper13 => AggregationMode::Paper13,
            ModeArg::Fedavg => AggregationMode::FedAvg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TransportArg {
    Inproc,
    Tcp,
}

impl From<TransportArg> for TransportChoice {
    fn from(t: TransportArg) -> TransportChoice {
        match t {
            TransportArg::Inproc => TransportChoice::InProc,
            TransportArg::Tcp => TransportChoice::Tcp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MissingArg {
    Drop,
    NeighborAverage,
}

impl From<MissingArg> for CleaningMode {
    fn from(m: MissingArg) -> CleaningMode {
        match m {
            MissingArg::Drop => CleaningMode::Drop,
            MissingArg::NeighborAverage => CleaningMode::NeighborAverage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncodingArg {
    Ordinal,
    Onehot,
}

impl From<EncodingArg> for SvmEncoding {
    fn from(e: EncodingArg) -> SvmEncoding {
        match e {
            EncodingArg::Ordinal => SvmEncoding::Ordinal,
            EncodingArg::Onehot => SvmEncoding::OneHot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> ReportFormat {
        match f {
            FormatArg::Text => ReportFormat::Text,
            FormatArg::Csv => ReportFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitTagArg {
    Train,
    Validation,
}

impl From<SplitTagArg> for SplitTag {
    fn from(t: SplitTagArg) -> SplitTag {
        match t {
            SplitTagArg::Train => SplitTag::Train,
            SplitTagArg::Validation => SplitTag::Validation,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "fedscreen",
    version = long_version(),
    about = "Federated carrier-screening pipeline: generate, preprocess, split, train, run, evaluate, report",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic raw patient CSV
    Gen {
        /// Total record count
        #[arg(long, default_value_t = GenConfig::default().n_total)]
        rows: usize,
        /// Carrier record count
        #[arg(long, default_value_t = GenConfig::default().n_carrier)]
        carriers: usize,
        /// Probability a carrier expresses the low-index signal (0..=1)
        #[arg(long, default_value_t = GenConfig::default().signal_strength)]
        signal: f64,
        /// Fraction of male records
        #[arg(long, default_value_t = GenConfig::default().male_fraction)]
        male_fraction: f64,
        /// Fraction of adult (18+) records
        #[arg(long, default_value_t = GenConfig::default().adult_fraction)]
        adult_fraction: f64,
        /// Master seed (the generator stream is derived from it exactly as `run` does)
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Where to write the raw CSV
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
    },
    /// Clean a raw CSV and bin it into the model-ready form
    Preprocess {
        /// Raw patient CSV
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Where to write the binned CSV
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Missing-value handling
        #[arg(long, value_enum, default_value_t = MissingArg::Drop)]
        missing: MissingArg,
    },
    /// Split a binned CSV into train/validation files and client shards
    Split {
        /// Binned CSV
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Directory for train.csv, val.csv, and client_N.csv
        #[arg(long, value_name = "DIR", default_value = config::DEFAULT_OUT)]
        out: PathBuf,
        /// Fraction of rows used for training
        #[arg(long, default_value_t = 0.7)]
        train_fraction: f64,
        /// Number of client shards
        #[arg(long, default_value_t = 3)]
        clients: usize,
        /// Master seed (split and shard streams are derived from it exactly as `run` does)
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train one local model on a binned CSV and save its model file
    TrainLocal {
        /// Binned CSV (typically one client shard)
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Learner to fit
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Where to write the model JSON
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Decision-tree depth limit
        #[arg(long, default_value_t = DtHyper::default().max_depth)]
        max_depth: usize,
        /// Decision-tree minimum rows per leaf
        #[arg(long, default_value_t = DtHyper::default().min_leaf)]
        min_leaf: usize,
        /// Naive-Bayes smoothing strength
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// SVM box penalty C
        #[arg(long, default_value_t = SvmHyper::default().c)]
        svm_c: f64,
        /// Carried kernel hyperparameter (the linear kernel never reads it)
        #[arg(long, default_value_t = SvmHyper::default().gamma)]
        gamma: f64,
        /// SVM coordinate-ascent epochs
        #[arg(long, default_value_t = SvmHyper::default().epochs)]
        epochs: usize,
        /// SVM input encoding
        #[arg(long, value_enum, default_value_t = EncodingArg::Ordinal)]
        encoding: EncodingArg,
        /// Master seed (the SVM shuffle stream is derived from it exactly as `run` does)
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Run the full federated pipeline and write all artifacts
    Run(Box<RunArgs>),
    /// Evaluate a saved model file against a binned CSV
    Eval {
        /// Model JSON (local dt/nb/svm or global)
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Binned CSV to score
        #[arg(long, value_name = "FILE")]
        input: PathBuf,
        /// Split label stamped on the report
        #[arg(long, value_enum, default_value_t = SplitTagArg::Validation)]
        split_tag: SplitTagArg,
        /// Report format
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
        /// Write the report here instead of stdout
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Approach name in the report (defaults to the model's type tag)
        #[arg(long)]
        approach: Option<String>,
    },
    /// Re-render reports from a run's summary.json
    Report {
        /// summary.json produced by `run`
        #[arg(long, value_name = "FILE")]
        summary: PathBuf,
        /// Report format
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
        /// Write the report here instead of stdout
        #[arg(long, value_name = "FILE")]
        output: Option<PathBuf>,
        /// Also write the per-round accuracy CSV here
        #[arg(long, value_name = "FILE")]
        curves: Option<PathBuf>,
    },
}

/// Flags for `run`. Everything is optional: defaults < `--config` file <
/// flags, resolved in `config::resolve`.
#[derive(Parser, Debug)]
struct RunArgs {
    /// Flat key=value config file; flags given here override it
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory for all artifacts [default: out]
    #[arg(long, visible_alias = "report", value_name = "DIR")]
    out: Option<PathBuf>,
    /// Raw patient CSV to use instead of the synthetic generator
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Synthetic total record count [default: 5066]
    #[arg(long)]
    rows: Option<usize>,
    /// Synthetic carrier count [default: 2015]
    #[arg(long)]
    carriers: Option<usize>,
    /// Synthetic carrier signal strength [default: 0.9]
    #[arg(long)]
    signal: Option<f64>,
    /// Synthetic male fraction [default: 0.53]
    #[arg(long)]
    male_fraction: Option<f64>,
    /// Synthetic adult fraction [default: 0.54]
    #[arg(long)]
    adult_fraction: Option<f64>,
    /// Missing-value handling [default: drop]
    #[arg(long, value_enum)]
    missing: Option<MissingArg>,
    /// Fraction of rows used for training [default: 0.7]
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Number of clients [default: 3]
    #[arg(long)]
    clients: Option<usize>,
    /// Comma-separated learner kinds dealt to clients round-robin [default: dt,nb,svm]
    #[arg(long, value_enum, value_delimiter = ',')]
    kinds: Option<Vec<KindArg>>,
    /// Aggregation mode [default: paper13]
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Fedavg round count [default: 10]
    #[arg(long)]
    rounds: Option<usize>,
    /// Transport between clients and coordinator [default: inproc]
    #[arg(long, value_enum)]
    transport: Option<TransportArg>,
    /// Coordinator TCP port; 0 picks an ephemeral port [default: 7461]
    #[arg(long)]
    port: Option<u16>,
    /// Decision-tree depth limit [default: 8]
    #[arg(long)]
    max_depth: Option<usize>,
    /// Decision-tree minimum rows per leaf [default: 5]
    #[arg(long)]
    min_leaf: Option<usize>,
    /// Naive-Bayes smoothing strength [default: 1]
    #[arg(long)]
    alpha: Option<f64>,
    /// SVM box penalty C [default: 1]
    #[arg(long)]
    svm_c: Option<f64>,
    /// Carried kernel hyperparameter [default: 1]
    #[arg(long)]
    gamma: Option<f64>,
    /// SVM coordinate-ascent epochs [default: 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// SVM input encoding [default: ordinal]
    #[arg(long, value_enum)]
    encoding: Option<EncodingArg>,
    /// Master seed for every stochastic stage [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

impl RunArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            input: self.input.clone(),
            rows: self.rows,
            carriers: self.carriers,
            signal: self.signal,
            male_fraction: self.male_fraction,
            adult_fraction: self.adult_fraction,
            missing: self.missing.map(CleaningMode::from),
            train_fraction: self.train_fraction,
            clients: self.clients,
            kinds: self
                .kinds
                .as_ref()
                .map(|ks| ks.iter().map(|k| ModelKind::from(*k)).collect()),
            mode: self.mode.map(AggregationMode::from),
            rounds: self.rounds,
            transport: self.transport.map(TransportChoice::from),
            port: self.port,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            alpha: self.alpha,
            svm_c: self.svm_c,
            gamma: self.gamma,
            epochs: self.epochs,
            encoding: self.encoding.map(SvmEncoding::from),
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Gen {
            rows,
            carriers,
            signal,
            male_fraction,
            adult_fraction,
            seed,
            output,
        } => {
            let gen_cfg = GenConfig {
                n_total: rows,
                n_carrier: carriers,
                signal_strength: signal,
                male_fraction,
                adult_fraction,
                ..GenConfig::default()
            };
            commands::cmd_gen(gen_cfg, seed, &output)
        }
        Command::Preprocess {
            input,
            output,
            missing,
        } => commands::cmd_preprocess(&input, &output, missing.into()),
        Command::Split {
            input,
            out,
            train_fraction,
            clients,
            seed,
        } => commands::cmd_split(&input, &out, train_fraction, clients, seed),
        Command::TrainLocal {
            input,
            kind,
            output,
            max_depth,
            min_leaf,
            alpha,
            svm_c,
            gamma,
            epochs,
            encoding,
            seed,
        } => {
            let dt = DtHyper {
                max_depth,
                min_leaf,
                ..DtHyper::default()
            };
            let svm = SvmHyper {
                c: svm_c,
                gamma,
                epochs,
                encoding: encoding.into(),
                ..SvmHyper::default()
            };
            commands::cmd_train_local(&input, kind.into(), &output, dt, alpha, svm, seed)
        }
        Command::Run(args) => {
            let from_file = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| {
                        PipelineError::new("config", format!("{}: {e}", path.display()))
                    })?;
                    config::parse_conf(&text, path)?
                }
                None => RunOverrides::default(),
            };
            let (sim, out_dir) = config::resolve(from_file.overlay(args.overrides()))?;
            commands::cmd_run(&sim, &out_dir)
        }
        Command::Eval {
            model,
            input,
            split_tag,
            format,
            output,
            approach,
        } => commands::cmd_eval(
            &model,
            &input,
            split_tag.into(),
            format.into(),
            output.as_deref(),
            approach,
        ),
        Command::Report {
            summary,
            format,
            output,
            curves,
        } => commands::cmd_report(&summary, format.into(), output.as_deref(), curves.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let requested = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            e.print().expect("cannot write diagnostics");
            return if requested {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
