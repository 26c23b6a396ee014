//! End-to-end checks of the `increstab` binary: the coarse pipeline runs
//! stage by stage in a scratch directory, artifacts appear where promised,
//! reruns are byte-identical, and failures map onto the documented exit
//! codes (0 pass, 1 check failed, 2 configuration, 3 runtime).

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_increstab"))
}

fn run(config: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(config)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, expected: i32, what: &str) {
    let stdout = String::from_utf8_lossy(&out.stdout);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(
        out.status.code(),
        Some(expected),
        "{what}: expected exit {expected}\nstdout:\n{stdout}\nstderr:\n{stderr}"
    );
}

fn coarse_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("study.toml");
    let text = format!(
        "[grid]\neta = 0.05\n\n[verify]\nsamples = 2000\n\n[output]\ndir = {:?}\n",
        dir.join("out")
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn coarse_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = coarse_config(dir.path());
    let out_dir = dir.path().join("out");

    let law = run(&config, &["synthesize-law"]);
    assert_code(&law, 0, "synthesize-law");
    let law_json = std::fs::read_to_string(out_dir.join("law.json")).unwrap();
    assert!(law_json.contains("cascade-backstepping"), "law construction tag");
    assert!(law_json.contains("\"lambda\""), "law gain recorded");

    assert_code(&run(&config, &["verify"]), 0, "verify");

    assert_code(&run(&config, &["abstract"]), 0, "abstract");
    let abs_path = out_dir.join("abstraction.bin");
    assert!(abs_path.exists(), "abstraction artifact");
    assert!(out_dir.join("abstraction.bin.json").exists(), "abstraction sidecar");

    // The coarse grid overshoots the fine-grid deviation budget (exit 1) but
    // meets a proportionally coarser one (exit 0).
    assert_code(&run(&config, &["check-epsilon", "--epsilon", "0.15"]), 0, "check-epsilon");
    assert_code(&run(&config, &["check-epsilon", "--epsilon", "0.05"]), 1, "tight budget");

    assert_code(&run(&config, &["synthesize"]), 0, "synthesize");
    let controller = std::fs::read_to_string(out_dir.join("controller.csv")).unwrap();
    assert!(
        controller.starts_with("state_index,automaton_state,input_index,input_value,bfs_depth\n"),
        "controller header"
    );
    assert!(controller.lines().count() > 1, "controller has entries");

    assert_code(&run(&config, &["replay", "--svg"]), 0, "replay");
    for i in [1, 2] {
        let csv = std::fs::read_to_string(out_dir.join(format!("replay-{i}.csv"))).unwrap();
        assert!(csv.starts_with("t,x1,x2,u1,slot\n"), "replay csv header");
        let svg = std::fs::read_to_string(out_dir.join(format!("replay-{i}.svg"))).unwrap();
        assert!(svg.starts_with("<svg "), "replay svg document");
        assert!(svg.contains("polyline"), "replay svg trajectory");
    }

    // Reruns are byte-identical, artifacts and logs alike.
    let first = std::fs::read(&abs_path).unwrap();
    let first_replay = std::fs::read(out_dir.join("replay-1.csv")).unwrap();
    assert_code(&run(&config, &["abstract"]), 0, "abstract rerun");
    assert_code(&run(&config, &["replay"]), 0, "replay rerun");
    assert_eq!(std::fs::read(&abs_path).unwrap(), first, "abstraction rerun differs");
    assert_eq!(
        std::fs::read(out_dir.join("replay-1.csv")).unwrap(),
        first_replay,
        "replay rerun differs"
    );
}

#[test]
fn simulate_writes_trajectories_and_warns_off_domain() {
    let dir = tempfile::tempdir().unwrap();
    let config = coarse_config(dir.path());
    let out_dir = dir.path().join("out");

    let sim = run(&config, &["simulate", "--x0", "0.8,0.9", "--horizon", "1", "--step", "0.01"]);
    assert_code(&sim, 0, "simulate");
    let csv = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,x1,x2\n"), "two state columns");
    assert_eq!(csv.lines().count(), 102, "header plus 101 samples");

    // Zero horizon: just the initial state.
    let single = run(&config, &["simulate", "--x0", "0.1,0.2", "--horizon", "0"]);
    assert_code(&single, 0, "zero-horizon simulate");
    let csv = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "header plus one row");

    // Off-domain start warns but still integrates.
    let off = run(&config, &["simulate", "--x0", "1.5,0.0", "--horizon", "0.1"]);
    assert_code(&off, 0, "off-domain simulate");
    let stderr = String::from_utf8_lossy(&off.stderr);
    assert!(stderr.contains("warning"), "expected an off-domain warning, got: {stderr}");
}

#[test]
fn exit_codes_map_failures() {
    let dir = tempfile::tempdir().unwrap();
    let config = coarse_config(dir.path());

    // Runtime: artifacts missing, message names the producing command.
    let missing = run(&config, &["synthesize"]);
    assert_code(&missing, 3, "missing abstraction");
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(stderr.contains("increstab abstract"), "names the producer: {stderr}");

    let missing_controller = {
        assert_code(&run(&config, &["abstract"]), 0, "abstract");
        run(&config, &["replay"])
    };
    assert_code(&missing_controller, 3, "missing controller");
    let stderr = String::from_utf8_lossy(&missing_controller.stderr);
    assert!(stderr.contains("increstab synthesize"), "names the producer: {stderr}");

    // Configuration: unknown key, and bad flag values.
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[grid]\netaa = 1.0\n").unwrap();
    assert_code(&run(&bad, &["verify"]), 2, "unknown config key");

    let usage = bin().arg("no-such-command").output().unwrap();
    assert_eq!(usage.status.code(), Some(2), "clap usage error");

    let bad_x0 = run(&config, &["simulate", "--x0", "a,b"]);
    assert_eq!(bad_x0.status.code(), Some(2), "malformed vector argument");
}
