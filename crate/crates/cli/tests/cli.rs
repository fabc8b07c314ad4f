use std::path::Path;
use std::process::{Command, Output};

fn phdae(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phdae"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn data_rows(path: &Path) -> usize {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .count()
        - 1
}

#[test]
fn validate_config_accepts_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "empty.toml", "");
    let out = phdae(&["validate-config"], &cfg, dir.path());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn config_errors_exit_with_2_and_line() {
    let dir = tempfile::tempdir().unwrap();
    for (text, line) in [
        ("[integrator]\nh = 0\n", "line 2"),
        ("[integrator]\nh = 0.01\nfoo = 1\n", "line 3"),
        (
            "[initial]\nq = [0.0, 0.0]\nr = [0.0, -0.6, 0.0, -0.9]\np = [0.0, 0.0, 0.0, 0.0]\n",
            "line 3",
        ),
    ] {
        let cfg = write(dir.path(), "bad.toml", text);
        let out = phdae(&["simulate"], &cfg, &dir.path().join("o"));
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains(line),
            "{text}"
        );
    }
    let out = phdae(&["simulate"], &dir.path().join("missing.toml"), dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn solver_failure_exits_with_3_and_keeps_partial_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "stiff.toml",
        "[integrator]\nh = 0.2\nmax_iter = 1\n[initial]\nq = [0.0, 1.0]\np_hat = [0.1, 0.0]\n[experiment]\nsteps = 10\n",
    );
    let out = phdae(&["simulate"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3));
    let text = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert!(text.lines().next().unwrap().starts_with("t,r1"));
    assert!(text.ends_with('\n'));
    assert!(text.lines().last().unwrap().starts_with("# FAILURE"));
}

#[test]
fn simulate_writes_expected_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.toml",
        "[experiment]\nsteps = 40\n[output]\nlog_every = 4\n",
    );
    let out = phdae(&["simulate"], &cfg, dir.path());
    assert!(out.status.success());
    assert_eq!(data_rows(&dir.path().join("trajectory.csv")), 11);
    assert!(dir.path().join("report.txt").exists());
}

#[test]
fn studies_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "order.toml",
        "[initial]\nq = [-1.07, 0.3]\n[experiment]\nmode = \"order_study\"\nhorizon = 0.2\nh_list = [0.02, 0.01]\nreference = \"self\"\n",
    );
    assert!(phdae(&["order-study"], &cfg, dir.path()).status.success());
    assert_eq!(data_rows(&dir.path().join("order_study.csv")), 2);
    // The declared mode must match the subcommand.
    assert_eq!(
        phdae(&["simulate"], &cfg, dir.path()).status.code(),
        Some(2)
    );

    let cfg = write(
        dir.path(),
        "energy.toml",
        "[initial]\nq = [-1.07, 0.3]\n[experiment]\nsteps = 100\n",
    );
    assert!(phdae(&["energy-study"], &cfg, dir.path()).status.success());
    assert_eq!(data_rows(&dir.path().join("energy_study.csv")), 2);
    assert!(phdae(&["symmetry-check"], &cfg, dir.path())
        .status
        .success());
    assert_eq!(data_rows(&dir.path().join("symmetry_check.csv")), 1);
}

#[test]
fn output_path_resolves_against_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sim.toml",
        "[experiment]\nsteps = 3\n[output]\npath = \"results\"\n",
    );
    let out = Command::new(env!("CARGO_BIN_EXE_phdae"))
        .args(["simulate", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("results/trajectory.csv").exists());
}
