use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fclr::cli::commands::one_se_from_table;
use fclr::cli::{export_panel, ingest_dataset, GridPolicy};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

fn fclr<S: AsRef<OsStr>>(args: &[S]) -> Output {
    fclr_env(args, &[])
}

fn fclr_env<S: AsRef<OsStr>>(args: &[S], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fclr"));
    cmd.args(args).env_remove("FCLR_OUTPUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(str::to_string).collect())
        .collect()
}

const SYN_DATA: &str = "synthetic/panel.csv";
const SYN_BLOCKS: &str = "synthetic/blocks.toml";

fn data_args(cmd: &str, data: &Path, blocks: &Path, out: &Path) -> Vec<String> {
    [cmd, "--data", s(data), "--blocks", s(blocks), "-o", s(out), "--threads", "1"]
        .map(String::from)
        .to_vec()
}

fn synthetic_args(cmd: &str, out: &Path) -> Vec<String> {
    data_args(cmd, &fixture(SYN_DATA), &fixture(SYN_BLOCKS), out)
}

fn push(args: &mut Vec<String>, extra: &[&str]) {
    args.extend(extra.iter().map(|a| a.to_string()));
}

#[test]
fn ingest_check_summarizes_tiny_panel() {
    let out = tempfile::tempdir().unwrap();
    let o = fclr(&[
        "ingest-check",
        "--data",
        s(&fixture("tiny/data.csv")),
        "--blocks",
        s(&fixture("tiny/blocks.toml")),
        "-o",
        s(out.path()),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("units 2, grid points 3 [0 .. 2], blocks 1, parts 3, controls 0"), "{text}");
    assert!(text.contains("diet: fat, protein, carbs"), "{text}");
}

#[test]
fn counts_are_zero_replaced_then_closed() {
    let panel = ingest_dataset(
        &fixture("counts/data.csv"),
        &fixture("counts/blocks.toml"),
        GridPolicy::Intersect,
    )
    .unwrap();
    let s0 = &panel.blocks[0].shares[0];
    // a@0 counts 3, 0, 7 with the zero replaced by 0.5
    let expect = [3.0 / 10.5, 0.5 / 10.5, 7.0 / 10.5];
    for (l, e) in expect.iter().enumerate() {
        assert!((s0[(0, l)] - e).abs() < 1e-15);
    }
    let o = fclr(&[
        "ingest-check",
        "--data",
        s(&fixture("counts/allzero.csv")),
        "--blocks",
        s(&fixture("counts/blocks.toml")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_cells_follow_grid_policy() {
    let data = fixture("tiny/missing.csv");
    let blocks = fixture("tiny/blocks.toml");
    let panel = ingest_dataset(&data, &blocks, GridPolicy::Intersect).unwrap();
    assert_eq!(panel.grid, vec![0.0, 1.0]);
    let o = fclr(&["ingest-check", "--data", s(&data), "--blocks", s(&blocks), "--grid-policy", "error"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("unit `b` at time 2"), "{err}");
}

#[test]
fn malformed_inputs_exit_one_with_location() {
    let blocks = fixture("tiny/blocks.toml");
    let cases = [
        ("bad/nonnumeric.csv", "line 6"),
        ("bad/unknown.csv", "sugar"),
        ("bad/unclosed.csv", "line 3: shares of block `diet` for unit `a` at time 0 sum to 1.05"),
    ];
    for (file, needle) in cases {
        let o = fclr(&["ingest-check", "--data", s(&fixture(file)), "--blocks", s(&blocks)]);
        assert_eq!(o.status.code(), Some(1), "{file}");
        let err = stderr(&o);
        assert!(err.contains(needle), "{file}: {err}");
    }
    let o = fclr(&["fit", "--data", s(&fixture("tiny/data.csv")), "--blocks", s(&fixture("nope.toml"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = fclr(&["fit", "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(1));
    let o = fclr(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn fit_reproduces_golden_outputs() {
    let out = tempfile::tempdir().unwrap();
    let mut args = synthetic_args("fit", out.path());
    push(&mut args, &["--seed", "1"]);
    let o = fclr(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for file in ["coefficients.csv", "curves.csv", "diagnostics.csv"] {
        let got = fs::read(out.path().join(file)).unwrap();
        let want = fs::read(fixture("golden").join(file)).unwrap();
        assert!(got == want, "{file} differs from the golden copy");
    }
    let coefs = read_csv(&out.path().join("coefficients.csv"));
    // 20 parts, intercept and one control, k = 5
    assert_eq!(coefs.len(), 22 * 5);
    assert_eq!(coefs[0][..2], ["c1x1".to_string(), "0".to_string()]);
    assert_eq!(coefs[20 * 5][0], "intercept");
    assert_eq!(coefs[21 * 5][0], "temperature");
}

#[test]
fn fixed_lambda_skips_cross_validation() {
    let out = tempfile::tempdir().unwrap();
    let mut args = synthetic_args("fit", out.path());
    push(&mut args, &["--lambda", "2.5"]);
    assert_eq!(fclr(&args).status.code(), Some(0));
    let d = read_csv(&out.path().join("diagnostics.csv"));
    assert_eq!((d[0][0].as_str(), d[0][1].as_str(), d[0][2].as_str()), ("2.5", "5", "fixed"));
    push(&mut args, &["--k", "4"]);
    assert_eq!(fclr(&args).status.code(), Some(0));
    let d = read_csv(&out.path().join("diagnostics.csv"));
    assert_eq!(d[0][1], "4");
}

#[test]
fn nonconvergence_exits_two_and_still_writes() {
    let out = tempfile::tempdir().unwrap();
    let cfg = out.path().join("tight.toml");
    fs::write(&cfg, "[solver]\nk_max = 1\nadmm_iter_max = 2\nepsilon = 1e-14\n").unwrap();
    let mut args = synthetic_args("fit", out.path());
    push(&mut args, &["--lambda", "1", "--config", s(&cfg)]);
    let o = fclr(&args);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let d = read_csv(&out.path().join("diagnostics.csv"));
    assert_eq!(d[0][7], "false");
}

#[test]
fn cv_table_flags_the_one_se_choice() {
    let out = tempfile::tempdir().unwrap();
    let mut args = synthetic_args("cv", out.path());
    push(&mut args, &["--k-grid", "4,6", "--n-lambda", "12", "--folds", "4"]);
    assert_eq!(fclr(&args).status.code(), Some(0));
    let rows = read_csv(&out.path().join("cv.csv"));
    assert_eq!(rows.len(), 24);
    let parsed: Vec<(f64, usize, f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()))
        .collect();
    let chosen: Vec<usize> = rows.iter().enumerate().filter(|(_, r)| r[4] == "1").map(|(i, _)| i).collect();
    assert_eq!(chosen, vec![one_se_from_table(&parsed).unwrap()]);

    let loo = tempfile::tempdir().unwrap();
    let mut args = synthetic_args("cv", loo.path());
    push(&mut args, &["--k-grid", "4", "--n-lambda", "6", "--folds", "loo"]);
    assert_eq!(fclr(&args).status.code(), Some(0));
    assert_eq!(read_csv(&loo.path().join("cv.csv")).len(), 6);
}

#[test]
fn single_bootstrap_gives_binary_proportions() {
    let out = tempfile::tempdir().unwrap();
    let mut args = synthetic_args("bootstrap", out.path());
    push(&mut args, &["-B", "1", "--k-grid", "4", "--n-lambda", "8", "--folds", "3"]);
    assert_eq!(fclr(&args).status.code(), Some(0));
    let rows = read_csv(&out.path().join("stability.csv"));
    assert_eq!(rows.len(), 20);
    assert!(rows.iter().all(|r| r[1] == "0" || r[1] == "1"), "{rows:?}");
}

/// The synthetic panel with the second composition removed.
fn single_block_inputs(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("one.csv");
    let text = fs::read_to_string(fixture(SYN_DATA)).unwrap();
    let kept: Vec<&str> = text.lines().filter(|l| !l.split(',').nth(2).unwrap_or("").starts_with("c2")).collect();
    fs::write(&data, kept.join("\n") + "\n").unwrap();
    let blocks = dir.join("one.toml");
    let spec = fs::read_to_string(fixture(SYN_BLOCKS)).unwrap();
    let cut = spec.find("[[blocks]]\nname = \"c2\"").unwrap();
    fs::write(&blocks, &spec[..cut]).unwrap();
    (data, blocks)
}

#[test]
fn importance_shares() {
    let out = tempfile::tempdir().unwrap();
    let mut args = synthetic_args("importance", out.path());
    push(&mut args, &["--lambda", "0.5"]);
    assert_eq!(fclr(&args).status.code(), Some(0));
    let rows = read_csv(&out.path().join("importance.csv"));
    // nine grid intervals, two blocks
    assert_eq!(rows.len(), 18);
    for pair in rows.chunks(2) {
        assert_eq!(pair[0][1], pair[1][1]);
        let total: f64 = pair.iter().map(|r| r[2].parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    let (data, blocks) = single_block_inputs(out.path());
    let mut args = data_args("importance", &data, &blocks, out.path());
    push(&mut args, &["--lambda", "0.5", "--windows", "0:0.5,0.5:1"]);
    let o = fclr(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_csv(&out.path().join("importance.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[2] == "1"));

    let mut args = synthetic_args("importance", out.path());
    push(&mut args, &["--lambda", "0.5", "--windows", "0:5"]);
    let o = fclr(&args);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("outside"));
}

#[test]
fn simulate_smoke_and_unknown_scenario() {
    let out = tempfile::tempdir().unwrap();
    let o = fclr(&["simulate", "--scenario", "table9-row1", "-o", s(out.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("table9-row1"));
    let o = fclr(&[
        "simulate",
        "--scenario",
        "table3-row1",
        "--replicates",
        "2",
        "--k-grid",
        "4",
        "--n-lambda",
        "10",
        "--folds",
        "5",
        "-o",
        s(out.path()),
        "--threads",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = read_csv(&out.path().join("simulation.csv"));
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r[0] == "table3-row1" && r[11] == "2"));
}

#[test]
fn export_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let panel = ingest_dataset(&fixture(SYN_DATA), &fixture(SYN_BLOCKS), GridPolicy::Error).unwrap();
    let (data, blocks) = (dir.path().join("p.csv"), dir.path().join("b.toml"));
    export_panel(&panel, "y", &data, &blocks).unwrap();
    let again = ingest_dataset(&data, &blocks, GridPolicy::Error).unwrap();
    assert_eq!(panel, again);

    let o = fclr(&[
        "ingest-check",
        "--data",
        s(&fixture("counts/data.csv")),
        "--blocks",
        s(&fixture("counts/blocks.toml")),
        "--export",
        "-o",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let counts = ingest_dataset(&fixture("counts/data.csv"), &fixture("counts/blocks.toml"), GridPolicy::Error).unwrap();
    let back = ingest_dataset(&dir.path().join("panel.csv"), &dir.path().join("blocks.toml"), GridPolicy::Error).unwrap();
    assert_eq!(counts, back);
}

#[test]
fn output_directory_precedence() {
    let root = tempfile::tempdir().unwrap();
    let (env_dir, file_dir, flag_dir) = (root.path().join("env"), root.path().join("file"), root.path().join("flag"));
    let cfg = root.path().join("run.toml");
    fs::write(&cfg, format!("output = {:?}\n", s(&file_dir))).unwrap();
    let (data, blocks) = (fixture("tiny/data.csv"), fixture("tiny/blocks.toml"));
    let base = ["ingest-check", "--export", "--data", s(&data), "--blocks", s(&blocks)];
    let env = [("FCLR_OUTPUT_DIR", env_dir.as_path())];

    assert_eq!(fclr_env(&base, &env).status.code(), Some(0));
    assert!(env_dir.join("panel.csv").exists());

    let mut with_file = base.to_vec();
    with_file.extend(["--config", s(&cfg)]);
    assert_eq!(fclr_env(&with_file, &env).status.code(), Some(0));
    assert!(file_dir.join("panel.csv").exists());

    let mut with_flag = with_file.clone();
    with_flag.extend(["-o", s(&flag_dir)]);
    assert_eq!(fclr_env(&with_flag, &env).status.code(), Some(0));
    assert!(flag_dir.join("panel.csv").exists());

    fs::write(&cfg, "unknown_key = 3\n").unwrap();
    assert_eq!(fclr_env(&with_file, &env).status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    use clap::Parser;
    use fclr::cli::{resolve, Cli};
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "seed = 5\n[tuning]\nfolds = \"loo\"\nk_grid = [4]\nn_lambda = 7\n").unwrap();
    let data = fixture("tiny/data.csv");
    let blocks = fixture("tiny/blocks.toml");
    let args = |extra: &[&str]| {
        let mut v = vec!["fclr", "cv", "--data", s(&data), "--blocks", s(&blocks), "--config", s(&cfg)];
        v.extend_from_slice(extra);
        resolve(&Cli::try_parse_from(v).unwrap()).unwrap()
    };
    let from_file = args(&[]);
    assert_eq!(from_file.seed, 5);
    assert_eq!(from_file.folds, fclr::selection::FoldPlan::LeaveOneOut);
    assert_eq!(from_file.cv.k_grid, vec![4]);
    let flagged = args(&["--seed", "9", "--folds", "3", "--n-lambda", "9"]);
    assert_eq!(flagged.seed, 9);
    assert_eq!(flagged.folds, fclr::selection::FoldPlan::KFold(3));
    assert_eq!(
        flagged.cv.lambdas,
        fclr::selection::LambdaSpec::Geometric { len: 9, min_ratio: 1e-3 }
    );
}

fn toml_block(doc: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/formats").join(doc);
    let text = fs::read_to_string(path).unwrap();
    let start = text.find("```toml\n").unwrap() + 8;
    let end = start + text[start..].find("```").unwrap();
    text[start..end].to_string()
}

#[test]
fn documented_examples_parse() {
    use fclr::cli::{BlocksSpec, FileConfig, RunConfig};
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, toml_block("config.md")).unwrap();
    let mut run = RunConfig::default();
    run.apply_file(FileConfig::read(&cfg).unwrap()).unwrap();
    run.validate().unwrap();
    assert_eq!(run.lambda, Some(0.8));
    let blocks = dir.path().join("blocks.toml");
    fs::write(&blocks, toml_block("inputs.md")).unwrap();
    let spec = BlocksSpec::read(&blocks).unwrap();
    assert_eq!(spec.controls, vec!["temperature".to_string()]);
}
