use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use crctc_core::harness::{EvalSummary, RunRecord, OUT_DIR_ENV};

fn crctc(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_crctc"));
    cmd.args(args).env_remove(OUT_DIR_ENV);
    cmd
}

fn run(args: &[&str]) -> Output {
    crctc(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: [&str; 12] = [
    "--set", "task.train_samples=8",
    "--set", "task.dev_samples=2",
    "--set", "task.test_samples=3",
    "--set", "train.epochs=2",
    "--set", "model.hidden_dim=8",
    "--set", "task.max_label_len=4",
];

/// Three frames over {blank, a, b}; best path is `a a b`, best labeling `a b`.
fn write_lattice(dir: &Path) -> String {
    let rows = [[0.1f64, 0.8, 0.1], [0.2, 0.7, 0.1], [0.1, 0.1, 0.8]];
    let mut text = String::from("# example\n3 3\n");
    for r in rows {
        let logs: Vec<String> = r.iter().map(|p| p.ln().to_string()).collect();
        text.push_str(&logs.join(" "));
        text.push('\n');
    }
    let path = dir.join("lat.txt");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn decode_both_methods() {
    let dir = tempfile::tempdir().unwrap();
    let lat = write_lattice(dir.path());
    for method in ["greedy", "prefix"] {
        let o = run(&["decode", &lat, "--method", method]);
        assert!(o.status.success(), "{o:?}");
        assert_eq!(stdout(&o).trim(), "a b");
    }
    let o = run(&["decode", &lat, "--vocab", "x y"]);
    assert_eq!(stdout(&o).trim(), "x y");
}

#[test]
fn analyze_prints_csv_and_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let lat = write_lattice(dir.path());
    let plot = dir.path().join("plot.csv");
    let o = run(&["analyze", &lat, "--plot-data", plot.to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("mean_nonblank_duration"), "{out}");
    // `a a` is one emission of two frames, `b` one of one frame
    assert!(lines[1].starts_with("1.5,"), "{out}");
    assert!(fs::read_to_string(plot).unwrap().lines().count() > 3);
}

#[test]
fn bad_inputs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let lat = write_lattice(dir.path());
    let bad = dir.path().join("bad.txt");
    fs::write(&bad, "2 3\n0 0 0\n").unwrap();

    for args in [
        vec!["decode", bad.to_str().unwrap()],
        vec!["decode", &lat, "--vocab", "x y z"],
        vec!["decode", "/nonexistent/lattice.txt"],
        vec!["show-config", "--set", "no.such.key=1"],
        vec!["show-config", "--set", "missing-equals"],
        vec!["show-config", "--objective", "transducer"],
    ] {
        let o = run(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {o:?}");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "{args:?}");
    }
}

#[test]
fn config_file_and_overrides_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["show-config", "--objective", "cr_ctc", "--set", "cr.alpha=0.3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("cr.alpha = 0.3"), "{text}");
    assert!(text.contains("augment.time_scale_ratio = 2.5"), "{text}");

    let file = dir.path().join("exp.conf");
    fs::write(&file, &text).unwrap();
    let again = run(&["show-config", "--config", file.to_str().unwrap()]);
    assert_eq!(stdout(&again), text);

    // a command-line override wins over the file
    let o = run(&["show-config", "--config", file.to_str().unwrap(), "--set", "cr.alpha=0.1"]);
    assert!(stdout(&o).contains("cr.alpha = 0.1"));
}

#[test]
fn train_honours_out_dir_env_and_checkpoint_evaluates() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("m.ckpt");
    let mut args = vec!["train", "--objective", "sr_ctc", "--save", ckpt.to_str().unwrap()];
    args.extend(TINY);
    let o = crctc(&args).env(OUT_DIR_ENV, dir.path()).output().unwrap();
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("test_greedy_ter"));

    let record = RunRecord::load(&dir.path().join("run-sr_ctc-seed0.json")).unwrap();
    assert_eq!(record.loss_curve.len(), 2);
    assert_eq!(record.test.utterances, 3);

    let mut args = vec!["evaluate", "--objective", "sr_ctc", "--load", ckpt.to_str().unwrap()];
    args.extend(TINY);
    let o = run(&args);
    assert!(o.status.success(), "{o:?}");
    let summary: EvalSummary = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary, record.test);

    args.extend(["--split", "nope"]);
    assert_eq!(run(&args).status.code(), Some(1));
}

#[test]
fn gen_data_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data.json");
    let mut args = vec!["gen-data", "--out", out.to_str().unwrap()];
    args.extend(TINY);
    assert!(run(&args).status.success());
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v["train"].as_array().unwrap().len(), 8);
    assert_eq!(v["test"].as_array().unwrap().len(), 3);
}

#[test]
fn gradcheck_passes_and_enforces_tolerance() {
    let o = run(&["gradcheck", "--seed", "3"]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(stdout(&o).lines().count(), 6);
    assert_eq!(run(&["gradcheck", "--tolerance", "0"]).status.code(), Some(1));
}

#[test]
fn sweep_writes_csv_to_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["sweep", "--grid", "objectives", "--seeds", "0", "--out-dir", dir.path().to_str().unwrap()];
    args.extend(TINY);
    let o = run(&args);
    assert!(o.status.success(), "{o:?}");
    let csv = fs::read_to_string(dir.path().join("sweep-objectives.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(stdout(&o).lines().count(), 4);
}
