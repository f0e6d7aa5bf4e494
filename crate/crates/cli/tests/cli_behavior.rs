//! Behavioral tests for the `phrasecomp` binary: exit codes, error
//! messages, output shapes, and the stderr reproducibility header.
//!
//! These exercise the executable end to end through `std::process`, so they
//! cover argument parsing and stream wiring that library tests cannot.

use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array1;
use tempfile::TempDir;

use phrasecomp::composition::{CompositionModel, ConcatParams};
use phrasecomp::embeddings::EmbeddingTable;
use phrasecomp::model_io::save_model;

fn binary() -> &'static str {
    env!("CARGO_BIN_EXE_phrasecomp")
}

fn run(args: &[&str]) -> Output {
    Command::new(binary())
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout should be UTF-8")
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("stderr should be UTF-8")
}

/// A handful of words on fixed axes so composed vectors are predictable.
fn small_table() -> EmbeddingTable {
    EmbeddingTable::from_entries(
        3,
        vec![
            ("stock", vec![1.0, 0.0, 0.0]),
            ("market", vec![0.0, 1.0, 0.0]),
            ("bourse", vec![0.6, 0.8, 0.0]),
            ("the", vec![0.0, 0.0, 1.0]),
            ("fell", vec![0.5, 0.5, 0.5]),
        ],
    )
    .expect("fixture table is well-formed")
}

fn write_fixtures(dir: &Path) -> (String, String) {
    let emb = dir.join("emb.txt");
    small_table().save(&emb).expect("fixture table should save");
    let model = dir.join("add.bin");
    save_model(&CompositionModel::Add, &model).expect("fixture model should save");
    (
        emb.to_string_lossy().into_owned(),
        model.to_string_lossy().into_owned(),
    )
}

#[test]
fn usage_errors_exit_2() {
    let output = run(&["compose", "--bogus-flag"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("--bogus-flag"));
}

#[test]
fn runtime_errors_exit_1_with_a_single_error_line() {
    let output = run(&[
        "compose",
        "--model",
        "/no/such/model.bin",
        "--embeddings",
        "/no/such/emb.txt",
        "--phrase",
        "stock_NN market_NN",
    ]);
    assert_eq!(output.status.code(), Some(1));
    let err = stderr(&output);
    let error_lines = err.lines().filter(|l| l.starts_with("error: ")).count();
    assert_eq!(error_lines, 1, "stderr: {err}");
}

#[test]
fn compose_prints_one_value_per_dimension() {
    let dir = TempDir::new().unwrap();
    let (emb, model) = write_fixtures(dir.path());
    let output = run(&[
        "compose",
        "--model",
        &model,
        "--embeddings",
        &emb,
        "--phrase",
        "stock_NN market_NN",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    assert_eq!(stdout(&output), "1.000000 1.000000 0.000000\n");
    // The reproducibility header digests both input files.
    let digests = stderr(&output)
        .lines()
        .filter(|l| l.starts_with("# sha256 "))
        .count();
    assert_eq!(digests, 2);
}

#[test]
fn train_emits_header_and_writes_artifacts() {
    let dir = TempDir::new().unwrap();
    let (emb, _) = write_fixtures(dir.path());
    let para = dir.path().join("para.tsv");
    std::fs::write(&para, "stock_NN market_NN\tbourse\t1.0\n").unwrap();
    let model_out = dir.path().join("model.bin");
    let report_out = dir.path().join("report.json");

    let output = run(&[
        "train",
        "--paraphrases",
        para.to_str().unwrap(),
        "--embeddings",
        &emb,
        "--variant",
        "add",
        "--seed",
        "7",
        "--model-out",
        model_out.to_str().unwrap(),
        "--report-out",
        report_out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let err = stderr(&output);
    assert!(err.contains("# seed: 7"), "stderr: {err}");
    assert!(err.contains("# paraphrases: 1 usable, 0 skipped"), "stderr: {err}");

    let model = phrasecomp::model_io::load_model(&model_out).unwrap();
    assert_eq!(model, CompositionModel::Add);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_out).unwrap()).unwrap();
    assert_eq!(report["variant"], "add");
    assert_eq!(report["seed"], 7);
}

#[test]
fn weighted_lasso_combination_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (emb, _) = write_fixtures(dir.path());
    let para = dir.path().join("para.tsv");
    std::fs::write(&para, "stock_NN market_NN\tbourse\t1.0\n").unwrap();
    let output = run(&[
        "train",
        "--paraphrases",
        para.to_str().unwrap(),
        "--embeddings",
        &emb,
        "--variant",
        "concat",
        "--penalty",
        "l1",
        "--weighted",
        "--model-out",
        dir.path().join("model.bin").to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("--weighted is supported for --penalty l2 only"));
}

#[test]
fn type_mode_requires_a_phrase() {
    let dir = TempDir::new().unwrap();
    let (emb, model) = write_fixtures(dir.path());
    let output = run(&["score", "--model", &model, "--embeddings", &emb]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("type mode needs --phrase"));
}

#[test]
fn token_mode_requires_context_vectors() {
    let dir = TempDir::new().unwrap();
    let (emb, model) = write_fixtures(dir.path());
    let output = run(&[
        "score",
        "--model",
        &model,
        "--embeddings",
        &emb,
        "--mode",
        "token",
        "--sentence",
        "the_DT stock_NN market_NN fell_VB",
        "--start",
        "1",
        "--end",
        "3",
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(
        stderr(&output).contains("token scoring needs context vectors"),
        "stderr: {}",
        stderr(&output)
    );
}

#[test]
fn token_mode_can_reuse_word_vectors_as_contexts() {
    let dir = TempDir::new().unwrap();
    let (emb, model) = write_fixtures(dir.path());
    let output = run(&[
        "score",
        "--model",
        &model,
        "--embeddings",
        &emb,
        "--mode",
        "token",
        "--sentence",
        "the_DT stock_NN market_NN fell_VB",
        "--start",
        "1",
        "--end",
        "3",
        "--allow-word-vectors-as-context",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let value: f64 = stdout(&output).trim().parse().expect("score should parse");
    assert!(value.is_finite());
    assert!(stderr(&output).contains("# context words used: 2/2"));
}

#[test]
fn token_span_shorter_than_two_tokens_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (emb, model) = write_fixtures(dir.path());
    let output = run(&[
        "score",
        "--model",
        &model,
        "--embeddings",
        &emb,
        "--mode",
        "token",
        "--sentence",
        "the_DT stock_NN market_NN fell_VB",
        "--start",
        "2",
        "--end",
        "2",
        "--allow-word-vectors-as-context",
    ]);
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("is not a phrase"));
}

#[test]
fn dump_params_emits_csv_with_full_block_shapes() {
    let dir = TempDir::new().unwrap();
    let model_path = dir.path().join("concat.bin");
    let dim = 3;
    let model = CompositionModel::Concat(ConcatParams::identity(dim));
    save_model(&model, &model_path).unwrap();

    // All six keys: header plus 6 blocks of N x 2N cells.
    let output = run(&["dump-params", "--model", model_path.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(0));
    let lines: Vec<String> = stdout(&output).lines().map(str::to_owned).collect();
    assert_eq!(lines[0], "key,row,col,value");
    assert_eq!(lines.len(), 1 + 6 * dim * 2 * dim);

    // Restricting to one key keeps just that block.
    let output = run(&[
        "dump-params",
        "--model",
        model_path.to_str().unwrap(),
        "--key",
        "NN-NN",
    ]);
    let lines: Vec<String> = stdout(&output).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 1 + dim * 2 * dim);
    for line in &lines[1..] {
        assert!(line.starts_with("NN-NN,"), "line: {line}");
    }

    // A pooled scaling model dumps one row per dimension.
    let mult2_path = dir.path().join("mult2.bin");
    let scale = Array1::from(vec![0.5, 1.5, 2.5]);
    save_model(&CompositionModel::Mult2 { scale }, &mult2_path).unwrap();
    let output = run(&["dump-params", "--model", mult2_path.to_str().unwrap()]);
    let lines: Vec<String> = stdout(&output).lines().map(str::to_owned).collect();
    assert_eq!(lines[1], "scale,0,0,0.5");
    assert_eq!(lines.len(), 1 + dim);
}

#[test]
fn annotate_grammar_forwards_malformed_lines_and_reports_stats() {
    let dir = TempDir::new().unwrap();
    let (emb, model) = write_fixtures(dir.path());
    let rules = dir.path().join("rules.txt");
    std::fs::write(
        &rules,
        "[X] ||| stock market ||| bourse ||| p=0.5\n\
         [X] ||| the [X,1] ||| le [X,1] ||| p=0.25\n\
         this line is not a rule\n",
    )
    .unwrap();
    let lexicon = dir.path().join("lex.txt");
    std::fs::write(&lexicon, "stock NN\nmarket NN\nthe DT\n").unwrap();

    let output = run(&[
        "annotate-grammar",
        "--model",
        &model,
        "--embeddings",
        &emb,
        "--rules",
        rules.to_str().unwrap(),
        "--lexicon",
        lexicon.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let lines: Vec<String> = stdout(&output).lines().map(str::to_owned).collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].contains(" CompScore=") && lines[0].ends_with(" CompScored=1"));
    assert!(lines[1].ends_with(" CompUnscored=1"));
    assert_eq!(lines[2], "this line is not a rule");
    assert!(stderr(&output).contains("# lines=3 scored=1 unscored=1 malformed=1"));
}
