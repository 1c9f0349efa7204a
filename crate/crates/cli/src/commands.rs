//! Implementations of the seven subcommands.
//!
//! Each returns `Result<(), PipelineError>` so `main` can map failures to
//! exit code 2 with the failing stage in the message. Every byte written to
//! a file or stdout is a pure function of the arguments — no timestamps,
//! hostnames, or other run-to-run noise.

use std::fs;
use std::path::{Path, PathBuf};

use fedscreen_core::domain::{default_schema, feature_vector, Label};
use fedscreen_core::federation::aggregate::{global_from_json, save_global};
use fedscreen_core::federation::{
    evaluate_global, run_simulation, stage, stage_seed, PipelineError, SimConfig, SimOutput,
    TransportKind,
};
use fedscreen_core::ingest::{
    clean, load_raw_csv, partition_clients, train_val_split, CleaningMode, SplitSpec,
};
use fedscreen_core::learners::{
    model_from_json, save_model, train_dt, train_nb, train_svm, training_accuracy_pct, DtHyper,
    ModelKind, SvmHyper, TrainSet, TrainedModel,
};
use fedscreen_core::metrics::{
    curves_csv_text, evaluate, render_report_csv, render_report_text, report, ApproachReport,
    SplitTag,
};
use fedscreen_core::preprocess::{normalize_dataset, read_binned_csv, write_binned_csv};
use fedscreen_core::synthgen::{generate, GenConfig};

/// Report output format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
}

/// Writes one line to stdout. If the reader has gone away (output piped
/// into `head`, say) the text is dropped instead of panicking, so file side
/// effects still complete; any other stdout failure is fatal.
fn say(line: impl AsRef<str>) {
    say_raw(line.as_ref());
    say_raw("\n");
}

fn say_raw(text: &str) {
    use std::io::Write;
    if let Err(e) = std::io::stdout().write_all(text.as_bytes()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            panic!("cannot write to stdout: {e}");
        }
    }
}

fn write_stage(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::new("write", e)
}

fn write_text(path: &Path, text: &str) -> Result<(), PipelineError> {
    fs::write(path, text).map_err(|e| write_stage(format!("{}: {e}", path.display())))
}

/// `gen`: synthesize a raw patient CSV.
///
/// The seed is the master run seed; the generator stream is derived from it
/// exactly as `run` derives it, so `gen --seed S` followed by
/// `run --input <file> --seed S` reproduces `run --seed S` byte for byte.
pub fn cmd_gen(gen_cfg: GenConfig, master_seed: u64, output: &Path) -> Result<(), PipelineError> {
    let seeded = GenConfig {
        seed: stage_seed(master_seed, stage::GENERATE),
        ..gen_cfg
    };
    let ds = generate(&seeded).map_err(|e| PipelineError::new("generate", e))?;
    fedscreen_core::ingest::write_raw_csv(&ds, output)
        .map_err(|e| write_stage(format!("{}: {e}", output.display())))?;
    say(format!(
        "generated {} rows ({} carriers, seed {}) -> {}",
        ds.len(),
        seeded.n_carrier,
        master_seed,
        output.display()
    ));
    Ok(())
}

/// `preprocess`: clean a raw CSV and bin it into the model-ready form.
pub fn cmd_preprocess(
    input: &Path,
    output: &Path,
    missing: CleaningMode,
) -> Result<(), PipelineError> {
    let (raw, load_report) =
        load_raw_csv(input, &default_schema()).map_err(|e| PipelineError::new("load", e))?;
    let (cleaned, clean_report) =
        clean(&raw, missing).map_err(|e| PipelineError::new("clean", e))?;
    let binned = normalize_dataset(
        &cleaned.records,
        &cleaned.schema,
        format!("{} binned", cleaned.provenance),
    )
    .map_err(|e| PipelineError::new("preprocess", e))?;
    write_binned_csv(&binned, output)
        .map_err(|e| write_stage(format!("{}: {e}", output.display())))?;
    say(format!(
        "read {} rows, dropped {} with missing values, kept {} -> {}",
        load_report.rows_read,
        clean_report.rows_dropped_missing,
        binned.len(),
        output.display()
    ));
    if !load_report.columns_dropped.is_empty() {
        say(format!(
            "dropped insignificant columns: {}",
            load_report.columns_dropped.join(", ")
        ));
    }
    Ok(())
}

/// `split`: divide a binned CSV into train/validation files and per-client
/// shard files under `out_dir`, using the same per-stage seed derivation as
/// `run`.
pub fn cmd_split(
    input: &Path,
    out_dir: &Path,
    train_fraction: f64,
    clients: usize,
    master_seed: u64,
) -> Result<(), PipelineError> {
    let binned = read_binned_csv(input).map_err(|e| PipelineError::new("load", e))?;
    let spec = SplitSpec {
        train_fraction,
        seed: stage_seed(master_seed, stage::SPLIT),
        client_count: clients,
    };
    let (train, val) = train_val_split(&binned, &spec).map_err(|e| PipelineError::new("split", e))?;
    let shards = partition_clients(&train, clients, stage_seed(master_seed, stage::PARTITION))
        .map_err(|e| PipelineError::new("partition", e))?;
    fs::create_dir_all(out_dir).map_err(|e| write_stage(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    for (name, ds) in [("train.csv", &train), ("val.csv", &val)] {
        let path = out_dir.join(name);
        write_binned_csv(ds, &path).map_err(|e| write_stage(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    for (i, shard) in shards.iter().enumerate() {
        let path = out_dir.join(format!("client_{}.csv", i + 1));
        write_binned_csv(shard, &path)
            .map_err(|e| write_stage(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    let shard_sizes: Vec<usize> = shards.iter().map(|s| s.len()).collect();
    say(format!(
        "split {} rows into {} train / {} validation; shards {:?}",
        binned.len(),
        train.len(),
        val.len(),
        shard_sizes
    ));
    say(format!(
        "wrote {}",
        written
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    Ok(())
}

/// `train-local`: fit one learner on a binned CSV and save its model file.
pub fn cmd_train_local(
    input: &Path,
    kind: ModelKind,
    output: &Path,
    dt: DtHyper,
    nb_alpha: f64,
    svm: SvmHyper,
    master_seed: u64,
) -> Result<(), PipelineError> {
    let binned = read_binned_csv(input).map_err(|e| PipelineError::new("load", e))?;
    let set = TrainSet::from_binned(&binned).map_err(|e| PipelineError::new("train", e))?;
    let svm = SvmHyper {
        seed: stage_seed(master_seed, stage::SVM),
        ..svm
    };
    let model = match kind {
        ModelKind::Dt => train_dt(&set, &dt).map(TrainedModel::Dt),
        ModelKind::Nb => train_nb(&set, nb_alpha).map(TrainedModel::Nb),
        ModelKind::Svm => train_svm(&set, &svm).map(TrainedModel::Svm),
    }
    .map_err(|e| PipelineError::new("train", e))?;
    let accuracy = training_accuracy_pct(&model, &set);
    save_model(&model, output).map_err(|e| write_stage(format!("{}: {e}", output.display())))?;
    say(format!(
        "trained {kind} on {} rows: training accuracy {accuracy:.4}% -> {}",
        set.len(),
        output.display()
    ));
    Ok(())
}

/// The report rows a finished simulation renders: each client's local model
/// on its own shard, then the global model on the pooled training rows and
/// on the held-out validation rows.
pub fn approach_rows(out: &SimOutput) -> Vec<ApproachReport> {
    let mut rows: Vec<ApproachReport> = out
        .locals
        .iter()
        .map(|local| ApproachReport {
            approach: format!("local client {} ({})", local.client_id, local.model.kind()),
            report: report(local.train_confusion, SplitTag::Train),
        })
        .collect();
    rows.push(ApproachReport {
        approach: "global (train)".to_string(),
        report: out.train_report.clone(),
    });
    rows.push(ApproachReport {
        approach: "global (validation)".to_string(),
        report: out.val_report.clone(),
    });
    rows
}

fn transport_name(t: TransportKind) -> &'static str {
    match t {
        TransportKind::InProc => "inproc",
        TransportKind::Tcp { .. } => "tcp",
    }
}

/// `run`: execute the full pipeline and write every artifact under
/// `out_dir`: `global_model.json`, `summary.json`, `report.txt`,
/// `report.csv`, `curves.csv`, and `resolved.conf`.
pub fn cmd_run(sim: &SimConfig, out_dir: &Path) -> Result<(), PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| write_stage(format!("{}: {e}", out_dir.display())))?;
    let output = run_simulation(sim)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let global_path = out_dir.join("global_model.json");
    save_global(&output.global, &global_path)
        .map_err(|e| write_stage(format!("{}: {e}", global_path.display())))?;
    written.push(global_path);

    let mut summary_text = serde_json::to_string_pretty(&output)
        .map_err(|e| PipelineError::new("report", format!("summary serialization: {e}")))?;
    summary_text.push('\n');
    let summary_path = out_dir.join("summary.json");
    write_text(&summary_path, &summary_text)?;
    written.push(summary_path);

    let rows = approach_rows(&output);
    let report_txt = out_dir.join("report.txt");
    write_text(&report_txt, &render_report_text(&rows))?;
    written.push(report_txt);
    let report_csv = out_dir.join("report.csv");
    write_text(&report_csv, &render_report_csv(&rows))?;
    written.push(report_csv);

    if !output.round_log.rounds.is_empty() {
        let curves_path = out_dir.join("curves.csv");
        let text = curves_csv_text(&output.round_log)
            .map_err(|e| PipelineError::new("report", e))?;
        write_text(&curves_path, &text)?;
        written.push(curves_path);
    }

    let conf_path = out_dir.join("resolved.conf");
    write_text(&conf_path, &crate::config::resolved_conf_text(sim))?;
    written.push(conf_path);

    say(format!(
        "rows: {} read, {} dropped, {} kept",
        output.cleaning.rows_read, output.cleaning.rows_dropped_missing, output.cleaning.rows_kept
    ));
    say(format!(
        "split: {} train / {} validation; shards {:?}",
        output.train_rows, output.val_rows, output.client_rows
    ));
    say(format!(
        "mode: {} over {} transport, seed {}",
        sim.mode,
        transport_name(sim.transport),
        sim.seed
    ));
    for local in &output.locals {
        say(format!(
            "local client {} ({}): training accuracy {:.4}% (n={})",
            local.client_id,
            local.model.kind(),
            local.train_accuracy_pct,
            local.train_size
        ));
    }
    if let Some(agg) = &output.aggregation {
        for warning in &agg.warnings {
            say(format!("note: {warning}"));
        }
    }
    say(format!(
        "global (train): accuracy {:.4}% (n={})",
        output.train_report.accuracy_pct, output.train_report.n
    ));
    say(format!(
        "global (validation): accuracy {:.4}%, miss rate {:.4}% (n={})",
        output.val_report.accuracy_pct, output.val_report.miss_rate_pct, output.val_report.n
    ));
    say(format!(
        "wrote {}",
        written
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    ));
    Ok(())
}

/// `eval`: score a saved model file (local `dt`/`nb`/`svm` or `global`)
/// against a binned CSV and render the report.
pub fn cmd_eval(
    model_path: &Path,
    input: &Path,
    split_tag: SplitTag,
    format: ReportFormat,
    output: Option<&Path>,
    approach: Option<String>,
) -> Result<(), PipelineError> {
    let text = fs::read_to_string(model_path)
        .map_err(|e| PipelineError::new("load", format!("{}: {e}", model_path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| PipelineError::new("load", format!("{}: {e}", model_path.display())))?;
    let model_type = value
        .get("type")
        .and_then(serde_json::Value::as_str)
        .unwrap_or("")
        .to_string();
    let binned = read_binned_csv(input).map_err(|e| PipelineError::new("load", e))?;

    let eval_report = if model_type == "global" {
        let global = global_from_json(&text)
            .map_err(|e| PipelineError::new("load", format!("{}: {e}", model_path.display())))?;
        evaluate_global(&global, &binned.records, split_tag)
            .map_err(|e| PipelineError::new("eval", e))?
    } else {
        let model = model_from_json(&text)
            .map_err(|e| PipelineError::new("load", format!("{}: {e}", model_path.display())))?;
        let preds: Vec<Label> = binned
            .records
            .iter()
            .map(|r| model.predict(&feature_vector(r)))
            .collect();
        let labels: Vec<Label> = binned.records.iter().map(|r| r.label).collect();
        evaluate(&preds, &labels, split_tag).map_err(|e| PipelineError::new("eval", e))?
    };

    let name = approach.unwrap_or_else(|| {
        if model_type.is_empty() {
            "model".to_string()
        } else {
            model_type.clone()
        }
    });
    let rows = vec![ApproachReport {
        approach: name,
        report: eval_report,
    }];
    let rendered = match format {
        ReportFormat::Text => render_report_text(&rows),
        ReportFormat::Csv => render_report_csv(&rows),
    };
    match output {
        Some(path) => {
            write_text(path, &rendered)?;
            say(format!("wrote {}", path.display()));
        }
        None => say_raw(&rendered),
    }
    Ok(())
}

/// `report`: re-render the tables from a run's `summary.json`, optionally
/// re-emitting the per-round curve CSV.
pub fn cmd_report(
    summary_path: &Path,
    format: ReportFormat,
    output: Option<&Path>,
    curves: Option<&Path>,
) -> Result<(), PipelineError> {
    let text = fs::read_to_string(summary_path)
        .map_err(|e| PipelineError::new("load", format!("{}: {e}", summary_path.display())))?;
    let summary: SimOutput = serde_json::from_str(&text)
        .map_err(|e| PipelineError::new("load", format!("{}: {e}", summary_path.display())))?;
    let rows = approach_rows(&summary);
    let rendered = match format {
        ReportFormat::Text => render_report_text(&rows),
        ReportFormat::Csv => render_report_csv(&rows),
    };
    match output {
        Some(path) => {
            write_text(path, &rendered)?;
            say(format!("wrote {}", path.display()));
        }
        None => say_raw(&rendered),
    }
    if let Some(curves_path) = curves {
        if summary.round_log.rounds.is_empty() {
            return Err(PipelineError::new(
                "report",
                "round log is empty (single-shot runs produce no per-round curves)",
            ));
        }
        let text = curves_csv_text(&summary.round_log)
            .map_err(|e| PipelineError::new("report", e))?;
        write_text(curves_path, &text)?;
        say(format!("wrote {}", curves_path.display()));
    }
    Ok(())
}
