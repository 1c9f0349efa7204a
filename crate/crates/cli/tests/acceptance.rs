//! Acceptance gate: twelve end-to-end criteria covering the binning rule,
//! the three learners, aggregation, transports, the CLI, and
//! reproducibility. Each test prints one `criterion NN (...): PASS` or
//! `... FAIL` line (visible under `cargo test --test acceptance --
//! --nocapture`).
//!
//! Every check here is validated against an independently written oracle or
//! an externally observable property (byte equality, exit codes, analytic
//! solutions), never against values the library itself produced earlier.

use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fedscreen_core::domain::{default_schema, feature_vector, BinnedRecord, Dataset, Label};
use fedscreen_core::federation::{
    inproc_pair, run_client, run_coordinator, AggregationMode, ClientConfig, CoordinationOutcome,
    CoordinatorConfig, Message, SendPolicy,
};
use fedscreen_core::federation::message::{decode_frame, encode_frame, parse_frame_bytes};
use fedscreen_core::ingest::{clean, train_val_split, CleaningMode, SplitSpec};
use fedscreen_core::learners::{
    binned_cardinality, entropy, predict_nb_posterior, predict_svm, train_dt, train_nb, train_svm,
    train_svm_problem, DtHyper, LocalModel, ModelKind, SvmHyper, SvmProblem, TrainSet,
    TrainedModel, SV_EPSILON,
};
use fedscreen_core::metrics::ConfusionMatrix;
use fedscreen_core::preprocess::{bin_value, normalize_dataset};
use fedscreen_core::synthgen::{generate, GenConfig};

/// Runs a criterion body, printing exactly one PASS/FAIL line.
fn criterion(number: u32, name: &str, body: impl FnOnce()) {
    match std::panic::catch_unwind(AssertUnwindSafe(body)) {
        Ok(()) => println!("criterion {number:02} ({name}): PASS"),
        Err(panic) => {
            println!("criterion {number:02} ({name}): FAIL");
            std::panic::resume_unwind(panic);
        }
    }
}

/// Invokes the built `fedscreen` binary and returns its stdout, failing the
/// test if the exit status is nonzero.
fn run_cli(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_fedscreen"))
        .args(args)
        .output()
        .expect("failed to spawn fedscreen");
    assert!(
        out.status.success(),
        "fedscreen {:?} exited with {:?}\nstdout:\n{}\nstderr:\n{}",
        args,
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8(out.stdout).expect("fedscreen stdout must be UTF-8")
}

fn read_json(path: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("cannot read {}: {e}", path.display()));
    serde_json::from_str(&text).unwrap_or_else(|e| panic!("cannot parse {}: {e}", path.display()))
}

// --- criterion 1 -----------------------------------------------------------

/// Independent restatement of the binning rule as a comparison ladder
/// against the three interior quarter boundaries (all dyadic for the
/// shipped ranges, hence exact in binary floating point).
fn reference_bin(v: f64, lo: f64, hi: f64) -> u8 {
    if v < lo {
        0
    } else if v > hi {
        5
    } else if v < lo + (hi - lo) * 0.25 {
        1
    } else if v < lo + (hi - lo) * 0.5 {
        2
    } else if v < lo + (hi - lo) * 0.75 {
        3
    } else {
        4
    }
}

#[test]
fn criterion_01_binning_matches_reference_rule() {
    criterion(1, "binning matches an independent reference rule", || {
        let schema = default_schema();
        let start = Instant::now();
        let mut points = 0u64;
        for feature in &schema.features {
            for (lo, hi) in [feature.normal_range_male, feature.normal_range_female] {
                let first = ((lo - 2.0) * 1000.0).round() as i64;
                let last = ((hi + 2.0) * 1000.0).round() as i64;
                for milli in first..=last {
                    let v = milli as f64 * 0.001;
                    let got = bin_value(v, lo, hi).expect("in-grid values must bin");
                    let want = reference_bin(v, lo, hi);
                    assert_eq!(
                        got, want,
                        "{} value {v} binned {got}, reference says {want}",
                        feature.name
                    );
                    points += 1;
                }
            }
        }
        assert!(points > 500_000, "grid unexpectedly small: {points} points");
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(5), "grid took {elapsed:?}");
    });
}

// --- criterion 2 -----------------------------------------------------------

#[test]
fn criterion_02_entropy_spot_values() {
    criterion(2, "entropy spot values", || {
        let even = entropy(&[0.5, 0.5]).unwrap();
        assert!((even - 1.0).abs() < 1e-6, "H(1/2,1/2) = {even}");
        let skewed = entropy(&[0.25, 0.75]).unwrap();
        assert!((skewed - 0.811278).abs() < 1e-6, "H(1/4,3/4) = {skewed}");
    });
}

// --- criterion 3 -----------------------------------------------------------

/// Brute-force joint-table Bayes oracle in linear space: unsmoothed class
/// priors, Laplace-smoothed per-feature conditionals, normalized product.
fn oracle_posterior(rows: &[Vec<u8>], labels: &[Label], x: &[u8], alpha: f64) -> [f64; 2] {
    let n = rows.len() as f64;
    let mut joint = [0.0f64; 2];
    for (c, cell) in joint.iter_mut().enumerate() {
        let class_rows: Vec<&Vec<u8>> = rows
            .iter()
            .zip(labels)
            .filter(|(_, l)| l.as_bit() as usize == c)
            .map(|(r, _)| r)
            .collect();
        let n_c = class_rows.len() as f64;
        let mut p = n_c / n;
        for (f, &value) in x.iter().enumerate() {
            let count = class_rows.iter().filter(|r| r[f] == value).count() as f64;
            p *= (count + alpha) / (n_c + alpha * 2.0);
        }
        *cell = p;
    }
    let z = joint[0] + joint[1];
    [joint[0] / z, joint[1] / z]
}

#[test]
fn criterion_03_naive_bayes_matches_joint_table_oracle() {
    criterion(3, "naive bayes matches the joint-table oracle", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        for case in 0..200 {
            let n_features = rng.gen_range(1..=3usize);
            let n_rows = rng.gen_range(4..=32usize);
            let rows: Vec<Vec<u8>> = (0..n_rows)
                .map(|_| (0..n_features).map(|_| rng.gen_range(0..2u8)).collect())
                .collect();
            let mut labels: Vec<Label> = (0..n_rows)
                .map(|_| Label::from_bit(rng.gen_range(0..2u8)).unwrap())
                .collect();
            // guarantee both classes are present
            labels[0] = Label::NonCarrier;
            labels[1] = Label::Carrier;

            let set = TrainSet::new(rows.clone(), labels.clone(), vec![2; n_features]).unwrap();
            let model = train_nb(&set, 1.0).unwrap();

            for code in 0..(1u16 << n_features) {
                let x: Vec<u8> = (0..n_features).map(|f| ((code >> f) & 1) as u8).collect();
                let (label, posterior) = predict_nb_posterior(&model, &x);
                let want = oracle_posterior(&rows, &labels, &x, 1.0);
                for c in 0..2 {
                    assert!(
                        (posterior[c] - want[c]).abs() < 1e-12,
                        "case {case} x {x:?} class {c}: model {} vs oracle {}",
                        posterior[c],
                        want[c]
                    );
                }
                // At an exact tie the two computation orders may round to
                // opposite sides; argmax is only comparable at a decisive
                // margin.
                if (want[1] - want[0]).abs() > 1e-9 {
                    let oracle_label = if want[1] > want[0] {
                        Label::Carrier
                    } else {
                        Label::NonCarrier
                    };
                    assert_eq!(label, oracle_label, "case {case} x {x:?}");
                }
            }
        }
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(10), "oracle sweep took {elapsed:?}");
    });
}

// --- criterion 4 -----------------------------------------------------------

fn raw_hyper(c: f64, epochs: usize) -> SvmHyper {
    SvmHyper {
        c,
        epochs,
        ..SvmHyper::default()
    }
}

/// Two well-separated blobs around (-2,-2) and (2,2); separable by
/// construction with margin at least 2*sqrt(2) - 2 along the diagonal.
fn blob_problem(seed: u64, n_per_class: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (center, label) in [(-2.0, -1.0), (2.0, 1.0)] {
        for _ in 0..n_per_class {
            rows.push(vec![
                center + rng.gen_range(-1.0..1.0),
                center + rng.gen_range(-1.0..1.0),
            ]);
            labels.push(label);
        }
    }
    (rows, labels)
}

#[test]
fn criterion_04_svm_analytic_solution_and_kkt() {
    criterion(4, "svm analytic solution and KKT conditions", || {
        // Two points at x = -1 and x = +1: the maximum-margin separator is
        // w = 1, b = 0, and stationarity w = sum(alpha_i y_i x_i) forces
        // alpha = 1/2 on both points, i.e. dual coefficients +-1/2.
        let problem =
            SvmProblem::new(vec![vec![-1.0], vec![1.0]], vec![-1.0, 1.0]).unwrap();
        let m = train_svm_problem(&problem, &raw_hyper(10.0, 300), Vec::new(), None).unwrap();
        assert!((m.w[0] - 1.0).abs() < 1e-3, "w = {:?}", m.w);
        assert!(m.b.abs() < 1e-3, "b = {}", m.b);
        let mut duals = m.dual_coefs.clone();
        duals.sort_by(f64::total_cmp);
        assert_eq!(duals.len(), 2, "both points must be support vectors");
        assert!((duals[0] + 0.5).abs() < 1e-3, "duals = {duals:?}");
        assert!((duals[1] - 0.5).abs() < 1e-3, "duals = {duals:?}");

        // First-order optimality on 20 random separable sets.
        for seed in 0..20u64 {
            let (rows, labels) = blob_problem(seed, 9);
            let h = raw_hyper(50.0, 600);
            let problem = SvmProblem::new(rows.clone(), labels.clone()).unwrap();
            let m = train_svm_problem(&problem, &h, Vec::new(), None).unwrap();
            let box_top = h.c / rows.len() as f64;

            let mut alpha = vec![0.0f64; rows.len()];
            for (sv, &dual) in m.support_vectors.iter().zip(&m.dual_coefs) {
                let i = rows
                    .iter()
                    .position(|r| r == sv)
                    .expect("every support vector is a training row");
                alpha[i] = dual.abs();
            }
            for i in 0..rows.len() {
                assert!(
                    alpha[i] <= box_top + 1e-9,
                    "seed {seed} row {i}: alpha {} above box {box_top}",
                    alpha[i]
                );
                let margin = labels[i]
                    * (m.w.iter().zip(&rows[i]).map(|(w, x)| w * x).sum::<f64>() + m.b);
                if alpha[i] <= SV_EPSILON {
                    assert!(margin >= 1.0 - 1e-3, "seed {seed} row {i}: margin {margin}");
                } else if box_top - alpha[i] > SV_EPSILON {
                    assert!(
                        (margin - 1.0).abs() <= 1e-2,
                        "seed {seed} row {i}: margin {margin} for interior alpha {}",
                        alpha[i]
                    );
                } else {
                    assert!(margin <= 1.0 + 1e-2, "seed {seed} row {i}: margin {margin}");
                }
            }
        }
    });
}

// --- criterion 5 -----------------------------------------------------------

#[test]
fn criterion_05_duplication_invariance() {
    criterion(5, "svm duplication invariance", || {
        // The trainer averages the loss per sample, so repeating every row
        // three times leaves the optimum unchanged.
        let (rows, mut labels) = blob_problem(77, 7);
        labels[0] = -labels[0]; // one label flip keeps the problem non-trivial
        let h = raw_hyper(1.0, 3000);
        let problem = SvmProblem::new(rows.clone(), labels.clone()).unwrap();
        let single = train_svm_problem(&problem, &h, Vec::new(), None).unwrap();

        let mut rows3 = Vec::new();
        let mut labels3 = Vec::new();
        for _ in 0..3 {
            rows3.extend(rows.iter().cloned());
            labels3.extend(labels.iter().cloned());
        }
        let problem3 = SvmProblem::new(rows3, labels3).unwrap();
        let tripled = train_svm_problem(&problem3, &h, Vec::new(), None).unwrap();

        for (i, (a, b)) in single.w.iter().zip(&tripled.w).enumerate() {
            assert!(
                (a - b).abs() < 1e-6,
                "w[{i}]: {a} vs {b} (diff {})",
                (a - b).abs()
            );
        }
        assert!(
            (single.b - tripled.b).abs() < 1e-6,
            "b: {} vs {}",
            single.b,
            tripled.b
        );
    });
}

// --- criteria 6 and 7 ------------------------------------------------------

/// A small binned cohort split into train and validation parts.
fn small_cohort(seed: u64) -> (Dataset<BinnedRecord>, Dataset<BinnedRecord>) {
    let gen = GenConfig {
        n_total: 240,
        n_carrier: 96,
        seed,
        ..GenConfig::default()
    };
    let raw = generate(&gen).unwrap();
    let (cleaned, _) = clean(&raw, CleaningMode::Drop).unwrap();
    let binned = normalize_dataset(&cleaned.records, &cleaned.schema, "acceptance").unwrap();
    let spec = SplitSpec {
        train_fraction: 0.7,
        seed,
        client_count: 3,
    };
    train_val_split(&binned, &spec).unwrap()
}

/// Runs a 3-client federation where every client holds `shard`.
fn federate_identical_shards(
    shard: &Dataset<BinnedRecord>,
    val: &Dataset<BinnedRecord>,
    mode: AggregationMode,
    rounds: usize,
    svm: SvmHyper,
) -> CoordinationOutcome {
    let policy = SendPolicy::for_mode(mode);
    let mut coordinator_ends = Vec::new();
    let mut handles = Vec::new();
    for id in 1..=3u32 {
        let (coord_end, client_end) = inproc_pair(policy);
        coordinator_ends.push(coord_end);
        let cfg = ClientConfig {
            client_id: id,
            kind: ModelKind::Svm,
            mode,
            rounds,
            dt: DtHyper::default(),
            nb_alpha: 1.0,
            svm,
        };
        let shard = shard.clone();
        handles.push(std::thread::spawn(move || run_client(client_end, &cfg, &shard)));
    }
    let outcome = run_coordinator(
        coordinator_ends,
        &CoordinatorConfig {
            mode,
            rounds,
            svm,
            expected_clients: 3,
            val: val.clone(),
        },
    )
    .expect("coordination must succeed");
    for handle in handles {
        handle.join().expect("client thread").expect("client run");
    }
    outcome
}

#[test]
fn criterion_06_identical_shard_merge_preserves_local_predictions() {
    criterion(6, "identical-shard merge preserves local predictions", || {
        let (train, val) = small_cohort(601);
        let svm = SvmHyper::default();

        let set = TrainSet::from_binned(&train).unwrap();
        let local = train_svm(&set, &svm).unwrap();

        let outcome =
            federate_identical_shards(&train, &val, AggregationMode::Paper13, 1, svm);

        let mismatches = val
            .records
            .iter()
            .filter(|r| {
                outcome.global.predict_record(r) != predict_svm(&local, &feature_vector(r))
            })
            .count();
        assert_eq!(
            mismatches, 0,
            "global and single-shard model disagree on {mismatches} of {} validation rows",
            val.len()
        );
    });
}

#[test]
fn criterion_07_identical_shard_averaging_reaches_fixed_point() {
    criterion(7, "identical-shard averaging reaches a fixed point", || {
        let (train, val) = small_cohort(701);
        let svm = SvmHyper {
            epochs: 200,
            ..SvmHyper::default()
        };
        // The runs are deterministic, so the 2-round run's final model IS
        // the 3-round run's model after round 2.
        let g2 = federate_identical_shards(&train, &val, AggregationMode::FedAvg, 2, svm)
            .global
            .svm;
        let g3 = federate_identical_shards(&train, &val, AggregationMode::FedAvg, 3, svm)
            .global
            .svm;
        assert_eq!(g2.w.len(), g3.w.len());
        for (i, (a, b)) in g2.w.iter().zip(&g3.w).enumerate() {
            assert!(
                (a - b).abs() < 1e-9,
                "w[{i}] moved by {} between rounds 2 and 3",
                (a - b).abs()
            );
        }
        assert!(
            (g2.b - g3.b).abs() < 1e-9,
            "b moved by {} between rounds 2 and 3",
            (g2.b - g3.b).abs()
        );
    });
}

// --- criteria 8, 9, 10, 12: the CLI binary ---------------------------------

#[test]
fn criterion_08_transports_agree_byte_for_byte() {
    criterion(8, "tcp and in-process transports agree byte for byte", || {
        let dir = tempfile::tempdir().unwrap();
        let inproc = dir.path().join("inproc");
        let tcp = dir.path().join("tcp");
        run_cli(&[
            "run", "--seed", "42", "--transport", "inproc",
            "--out", inproc.to_str().unwrap(),
        ]);
        let start = Instant::now();
        run_cli(&[
            "run", "--seed", "42", "--transport", "tcp", "--port", "0",
            "--out", tcp.to_str().unwrap(),
        ]);
        let elapsed = start.elapsed();
        assert!(
            elapsed < Duration::from_secs(30),
            "tcp run took {elapsed:?}"
        );
        let a = std::fs::read(inproc.join("global_model.json")).unwrap();
        let b = std::fs::read(tcp.join("global_model.json")).unwrap();
        assert!(
            a == b,
            "global model files differ between transports ({} vs {} bytes)",
            a.len(),
            b.len()
        );
    });
}

#[test]
fn criterion_09_desk_scale_run_reaches_target_accuracy() {
    criterion(9, "desk-scale federated run reaches target accuracy", || {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let start = Instant::now();
        run_cli(&["run", "--seed", "42", "--out", out.to_str().unwrap()]);
        let elapsed = start.elapsed();
        assert!(elapsed < Duration::from_secs(60), "run took {elapsed:?}");

        let summary = read_json(&out.join("summary.json"));
        let val = &summary["val_report"];
        let accuracy = val["accuracy_pct"].as_f64().unwrap();
        let miss = val["miss_rate_pct"].as_f64().unwrap();
        assert!(accuracy >= 90.0, "validation accuracy {accuracy}");
        assert_eq!(
            miss,
            100.0 - accuracy,
            "miss rate must be exactly the accuracy complement"
        );
        assert_eq!(val["n"].as_u64().unwrap(), 1520);
    });
}

#[test]
fn criterion_10_null_signal_stays_at_majority_rate() {
    criterion(10, "null signal stays at the majority rate", || {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("null");
        run_cli(&[
            "run", "--seed", "42", "--signal", "0",
            "--out", out.to_str().unwrap(),
        ]);
        let summary = read_json(&out.join("summary.json"));
        let accuracy = summary["val_report"]["accuracy_pct"].as_f64().unwrap();
        let majority = 100.0 * (5066.0 - 2015.0) / 5066.0;
        assert!(
            (accuracy - majority).abs() <= 4.0,
            "validation accuracy {accuracy}% strays more than 4 points from the {majority:.2}% majority rate — the pipeline is leaking labels"
        );
    });
}

// --- criterion 11 ----------------------------------------------------------

fn random_train_set(rng: &mut ChaCha8Rng) -> TrainSet {
    let cardinality = binned_cardinality();
    let n_rows = rng.gen_range(12..=40usize);
    let rows: Vec<Vec<u8>> = (0..n_rows)
        .map(|_| {
            cardinality
                .iter()
                .map(|&card| rng.gen_range(0..card as u8))
                .collect()
        })
        .collect();
    let mut labels: Vec<Label> = (0..n_rows)
        .map(|_| Label::from_bit(rng.gen_range(0..2u8)).unwrap())
        .collect();
    labels[0] = Label::NonCarrier;
    labels[1] = Label::Carrier;
    TrainSet::new(rows, labels, cardinality).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng) -> Vec<u8> {
    binned_cardinality()
        .iter()
        .map(|&card| rng.gen_range(0..card as u8))
        .collect()
}

#[test]
fn criterion_11_model_files_and_wire_frames_preserve_predictions() {
    criterion(11, "model files and wire frames preserve predictions", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1101);
        let svm_hyper = SvmHyper {
            epochs: 8,
            ..SvmHyper::default()
        };
        for kind in [ModelKind::Dt, ModelKind::Nb, ModelKind::Svm] {
            for case in 0..1000 {
                let set = random_train_set(&mut rng);
                let model = match kind {
                    ModelKind::Dt => {
                        TrainedModel::Dt(train_dt(&set, &DtHyper::default()).unwrap())
                    }
                    ModelKind::Nb => TrainedModel::Nb(train_nb(&set, 1.0).unwrap()),
                    ModelKind::Svm => TrainedModel::Svm(train_svm(&set, &svm_hyper).unwrap()),
                };

                let from_file = fedscreen_core::learners::model_from_json(
                    &fedscreen_core::learners::model_to_json(&model),
                )
                .unwrap();

                let message = Message::LocalModel {
                    client_id: 1,
                    model: LocalModel {
                        client_id: 1,
                        train_size: set.len(),
                        train_accuracy_pct: 0.0,
                        train_confusion: ConfusionMatrix::default(),
                        model: model.clone(),
                    },
                };
                let frame = encode_frame(&message).unwrap();
                let decoded = decode_frame(parse_frame_bytes(&frame).unwrap()).unwrap();
                let from_wire = match decoded {
                    Message::LocalModel { model: local, .. } => local.model,
                    other => panic!("unexpected message {other:?}"),
                };

                for _ in 0..100 {
                    let x = random_input(&mut rng);
                    let want = model.predict(&x);
                    assert_eq!(
                        from_file.predict(&x),
                        want,
                        "{kind} case {case}: file round trip changed a prediction on {x:?}"
                    );
                    assert_eq!(
                        from_wire.predict(&x),
                        want,
                        "{kind} case {case}: wire round trip changed a prediction on {x:?}"
                    );
                }
            }
        }
    });
}

// --- criterion 12 ----------------------------------------------------------

fn dir_snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|entry| {
            let entry = entry.unwrap();
            assert!(
                entry.file_type().unwrap().is_file(),
                "unexpected non-file output {}",
                entry.path().display()
            );
            (
                entry.file_name().to_string_lossy().into_owned(),
                std::fs::read(entry.path()).unwrap(),
            )
        })
        .collect();
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    entries
}

#[test]
fn criterion_12_equal_configs_reproduce_output_directories() {
    criterion(12, "equal configs reproduce output directories byte for byte", || {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("first");
        let second = dir.path().join("second");
        let args = [
            "run", "--rows", "900", "--carriers", "360", "--mode", "fedavg",
            "--kinds", "svm", "--rounds", "4", "--seed", "11",
        ];
        run_cli(&[&args[..], &["--out", first.to_str().unwrap()]].concat());
        run_cli(&[&args[..], &["--out", second.to_str().unwrap()]].concat());

        let a = dir_snapshot(&first);
        let b = dir_snapshot(&second);
        let names: Vec<&String> = a.iter().map(|(name, _)| name).collect();
        assert_eq!(
            names,
            vec![
                "curves.csv", "global_model.json", "report.csv", "report.txt",
                "resolved.conf", "summary.json",
            ],
            "unexpected artifact set"
        );
        assert_eq!(a.len(), b.len());
        for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
            assert_eq!(name_a, name_b);
            assert!(
                bytes_a == bytes_b,
                "{name_a} differs between identically configured runs"
            );
        }
    });
}
