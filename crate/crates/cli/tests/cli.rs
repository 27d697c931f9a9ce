use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cutstokes"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn study_writes_csv_and_plot_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "--domain", "square", "--order", "1", "--levels", "3", "--out", "t.csv",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), csv);
    let rows = csv_rows(&csv);
    assert_eq!(
        rows[0].join(","),
        "h_max,vel_h1_error,vel_rate,pres_l2_error,pres_rate"
    );
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[1][0], "0.25");
    assert_eq!(rows[1][2], "");
    assert_eq!(rows[4][0], "mean");

    // the mean row is the mean of the listed rates
    let rates: Vec<f64> = rows[2..4].iter().map(|r| r[2].parse().unwrap()).collect();
    let mean: f64 = rows[4][2].parse().unwrap();
    assert!((mean - (rates[0] + rates[1]) / 2.0).abs() < 1e-6);

    for name in ["t_velocity.dat", "t_pressure.dat"] {
        let data = std::fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(
            data.lines().filter(|l| !l.starts_with('#')).count(),
            3,
            "{name}"
        );
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = |out: &'static str| {
        [
            "--domain", "disc", "--order", "2", "--levels", "2", "--seed", "7", "--out", out,
        ]
    };
    assert!(run(&args("a.csv"), dir.path()).status.success());
    assert!(run(&args("b.csv"), dir.path()).status.success());
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["--domain", "annulus"], dir.path()).status.code(),
        Some(2)
    );
    assert_eq!(run(&["--order", "0"], dir.path()).status.code(), Some(2));
    assert_eq!(
        run(&["--config", "missing.cfg"], dir.path()).status.code(),
        Some(2)
    );
    std::fs::write(dir.path().join("bad.cfg"), "levels = many\n").unwrap();
    assert_eq!(
        run(&["--config", "bad.cfg"], dir.path()).status.code(),
        Some(2)
    );
    // no work was done
    assert!(!dir.path().join("study.csv").exists());
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "# square study\ndomain = square\norder = 3\nlevels = 1\nout = from_file.csv\n",
    )
    .unwrap();
    let out = run(
        &[
            "--config",
            "run.cfg",
            "--order",
            "1",
            "--out",
            "from_flag.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    assert!(!dir.path().join("from_file.csv").exists());
    let rows = csv_rows(&std::fs::read_to_string(dir.path().join("from_flag.csv")).unwrap());
    assert_eq!(rows.len(), 3);
}

#[test]
fn diagnostics_pass_by_default_and_fail_without_penalty() {
    let dir = tempfile::tempdir().unwrap();
    let ok = run(&["--diagnostics"], dir.path());
    let report = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(ok.status.code(), Some(0), "{report}");
    assert!(report.lines().any(|l| l.starts_with("PASS coercivity")));
    assert!(!report.lines().any(|l| l.starts_with("FAIL")));

    let bad = run(&["--diagnostics", "--sigma-const", "1e-3"], dir.path());
    let report = String::from_utf8_lossy(&bad.stdout);
    assert_eq!(bad.status.code(), Some(3));
    assert!(
        report.lines().any(|l| l.starts_with("FAIL coercivity")),
        "{report}"
    );
}

#[test]
fn single_level_diagnostics_skip_the_stability_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--diagnostics", "--levels", "1"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(
        report
            .lines()
            .any(|l| l.starts_with("SKIP inf-sup stability across levels")),
        "{report}"
    );
}

#[test]
fn dumps_are_written_per_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "--domain",
            "disc",
            "--levels",
            "2",
            "--dump-mesh",
            "mesh.txt",
            "--dump-system",
            "sys.txt",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    for name in ["mesh_L0.txt", "mesh_L1.txt", "sys_L0.txt", "sys_L1.txt"] {
        assert!(
            std::fs::metadata(dir.path().join(name)).unwrap().len() > 0,
            "{name}"
        );
    }
}
