use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bcmppi(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcmppi"))
        .args(args)
        .current_dir(root())
        .env("BCMPPI_OUT_DIR", out)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: [&str; 6] = [
    "--set",
    "training.epochs=20",
    "--set",
    "training.members=2",
    "--set",
    "training.hidden=[8]",
];

fn generate(out: &Path, n: &str) -> Output {
    bcmppi(&["generate-data", "-n", n], out)
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train"];
    args.extend(SMALL);
    args.extend(extra);
    bcmppi(&args, out)
}

#[test]
fn generate_data_reports_motion_counts_and_creates_the_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested/deeper");
    let o = generate(&out, "1000");
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(
        text.contains("circular 400, diagonal 400, sinusoidal 200"),
        "{text}"
    );
    assert!(text.contains("rows: 1000 x 114 columns"));
    assert!(out.join("dataset.csv").exists());
    assert!(out.join("generate-data.toml").exists());
}

#[test]
fn zero_mix_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcmppi(&["generate-data", "--mix", "0:0:0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("mix"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcmppi(&["run", "--set", "mppi.nope=1"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope"));
}

#[test]
fn train_splits_seven_to_three_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert!(generate(out, "100").status.success());
    let a = train(out, &[]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert!(stdout(&a).contains("split: 70 train / 30 test"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("train_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["train"]["rows"], 70);
    assert_eq!(report["test"]["rows"], 30);
    let hash = report["model_hash"].as_str().unwrap().to_string();

    let b = train(out, &[]);
    assert!(b.status.success());
    assert!(stdout(&b).contains(&hash));
}

#[test]
fn train_rejects_a_dataset_of_the_wrong_width() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b,target\n1,2,3\n").unwrap();
    let set = format!("surrogate.dataset=\"{}\"", bad.display());
    let o = train(dir.path(), &["--set", &set]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("114") && err.contains('3'), "{err}");
}

#[test]
fn run_prints_a_metrics_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcmppi(
        &[
            "run",
            "--set",
            "controller=classic_mppi",
            "--set",
            "episode.duration=0.5",
            "--set",
            "mppi.num_samples=40",
            "--trace",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "rejection_rate").unwrap();
    let rate: f64 = row[col].parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    let trace = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 26);
}

#[test]
fn missing_model_names_the_expected_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = bcmppi(
        &[
            "run",
            "--set",
            "controller=bc_mppi",
            "--set",
            "episode.duration=0.1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    let expected = dir.path().join("model.json");
    assert!(
        stderr(&o).contains(&expected.display().to_string()),
        "{}",
        stderr(&o)
    );
}

#[test]
fn seed_flag_and_config_dump_reproduce_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let a_dir = dir.path().join("a");
    let args = [
        "run",
        "--set",
        "controller=mppi_penalty",
        "--set",
        "episode.duration=0.4",
        "--set",
        "mppi.num_samples=30",
        "--seed",
        "7",
        "--trace",
    ];
    let a = bcmppi(&args, &a_dir);
    assert!(a.status.success(), "{}", stderr(&a));
    let dump = std::fs::read_to_string(a_dir.join("run.toml")).unwrap();
    assert!(dump.contains("seed = 7"));

    // Re-run from the dump into a different directory.
    let b_dir = dir.path().join("b");
    let cfg = a_dir.join("run.toml");
    let b = bcmppi(
        &[
            "run",
            "-c",
            cfg.to_str().unwrap(),
            "-o",
            b_dir.to_str().unwrap(),
            "--trace",
        ],
        dir.path(),
    );
    assert!(b.status.success(), "{}", stderr(&b));
    let ta = std::fs::read_to_string(a_dir.join("trace.csv")).unwrap();
    let tb = std::fs::read_to_string(b_dir.join("trace.csv")).unwrap();
    assert_eq!(ta, tb);

    let c = bcmppi(
        &[
            "run",
            "--set",
            "controller=mppi_penalty",
            "--set",
            "episode.duration=0.4",
            "--set",
            "mppi.num_samples=30",
            "--seed",
            "8",
            "--trace",
        ],
        &dir.path().join("c"),
    );
    assert!(c.status.success());
    let tc = std::fs::read_to_string(dir.path().join("c/trace.csv")).unwrap();
    assert_ne!(ta, tc);
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert!(generate(out, "60").status.success());
    assert!(train(out, &[]).status.success());
    let o = bcmppi(
        &[
            "sweep",
            "--set",
            "sweep.k_values=[100, 1500]",
            "--set",
            "sweep.seeds=2",
            "--set",
            "episode.duration=0.2",
        ],
        out,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = std::fs::read_to_string(out.join("sweep_rows.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 12);
    assert!(out.join("sweep_summary.csv").exists());
    assert!(out.join("plots/index.html").exists());

    let report_dir = out.join("report");
    let r = bcmppi(
        &[
            "report",
            out.join("sweep_rows.csv").to_str().unwrap(),
            "-o",
            report_dir.to_str().unwrap(),
        ],
        out,
    );
    assert!(r.status.success(), "{}", stderr(&r));
    let index = std::fs::read_to_string(report_dir.join("index.html")).unwrap();
    let svgs: Vec<_> = std::fs::read_dir(&report_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".svg"))
        .collect();
    assert_eq!(svgs.len(), 11);
    for s in &svgs {
        assert!(index.contains(s.as_str()));
    }
}
