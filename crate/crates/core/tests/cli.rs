use std::fs;
use std::path::Path;
use std::process::Command;

use critpot::commands::run_command;
use critpot::config::RunConfig;
use critpot::report::RunReport;
use critpot::Error;

const BIN: &str = env!("CARGO_BIN_EXE_critpot");

fn config(task: &str, output: &str) -> String {
    format!(
        "# circle with a constant potential\n[domain]\nkind = circle\nlength = 2*pi\nnodes = 128\nbc = closed\n\n\
         [potential]\npreset = constant(0.5)\n\n[task]\n{task}\n\n[output]\n{output}\n"
    )
}

fn write(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn misspelled_key_names_its_line() {
    let text = "[domain]\nkind = interval\nlength = 1\nnodes = 64\nboundry = dirichlet\n";
    match RunConfig::parse(text, Path::new(".")) {
        Err(Error::Parse { line, message }) => {
            assert_eq!(line, 5);
            assert!(message.contains("boundry"));
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn seed_is_required_for_random_work() {
    let cfg = RunConfig::parse(&config("index = 2\nprobes = 10", ""), Path::new(".")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = run_command("criticality", &cfg, dir.path()).unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
    let cfg = RunConfig::parse(&config("suite = dirichlet", ""), Path::new(".")).unwrap();
    assert!(run_command("verify", &cfg, dir.path()).is_err());
}

#[test]
fn commands_are_deterministic_and_round_trip() {
    let cfg = RunConfig::parse(&config("index = 2\nprobes = 12", "seed = 9"), Path::new(".")).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_command("criticality", &cfg, a.path()).unwrap();
    let rb = run_command("criticality", &cfg, b.path()).unwrap();
    assert_eq!(ra.without_timestamp(), rb.without_timestamp());
    assert!(ra.all_passed());
    let text = fs::read_to_string(a.path().join("report.json")).unwrap();
    assert_eq!(RunReport::from_json(&text).unwrap(), ra);
    for f in &ra.artifacts {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn binary_writes_spectrum_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), &config("count = 5", ""));
    let out = dir.path().join("out");
    let status = Command::new(BIN)
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let report = RunReport::from_json(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.command, "spectrum");
    assert_eq!(report.eigenvalues.len(), 5);
    assert!((report.eigenvalues[0] - 0.5).abs() < 1e-9);
    let csv = fs::read_to_string(out.join("eigenvectors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 129);
    assert!(out.join("potential.csv").exists());
}

#[test]
fn binary_reports_config_errors_with_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "[domain]\nkind = circle\nnodes = 64\nbc = closed\n[task]\nsuite = all\n");
    let out = Command::new(BIN)
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let cfg = write(dir.path(), "[domain]\nkind = circle\nnodes = 64\nbc = closed\n[task]\ncount = 3\ncolour = red\n");
    let out = Command::new(BIN)
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 7") && err.contains("colour"), "{err}");
}

#[test]
fn optimize_command_logs_iterates() {
    let dir = tempfile::tempdir().unwrap();
    let task = "objective = eigenvalue(1)\nsense = maximize\nmean = 0.5\nbound = 1\nmax_iters = 20\nstarts = 2";
    let text = config(task, "seed = 4").replace("constant(0.5)", "fourier(0.5, 0.3)");
    let cfg = RunConfig::parse(&text, Path::new(".")).unwrap();
    let report = run_command("optimize", &cfg, dir.path()).unwrap();
    assert!(report.all_passed(), "{:?}", report.checks);
    for k in 0..2 {
        let csv = fs::read_to_string(dir.path().join(format!("iterates_{k}.csv"))).unwrap();
        assert!(csv.starts_with("iter,objective,step,mult_i,residual"));
    }
}
