//! End-to-end tests of the binary and the serialization layer.

use std::fs;
use std::path::Path;
use std::process::Command;

use phonon_sim_cli::{config, emit, ingest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phonon-sim"))
}

const BASE_CONFIG: &str = r#"
schema_version = 1

[system]
omega1_hz = 2000.0
omega2_hz = 2030.0
gamma_hz = 0.0
t_env_k = 0.0
kappa_hz = 2.0e5

[detection]
eta = 0.01
p = 0.01
dark = 1e-6

[coupling]
j_hz = 1000.0
jc_over_j = 0.0
jh_over_j = 0.0

[prep]
n_th1 = 0.01
n_th2 = 0.01

[basis]
n1_max = 3
n2_max = 3

[grid]
tau_max_s = 3.4e-2
points = 48

[protocol]
beam_splitter = "three-level"
"#;

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, format!("{BASE_CONFIG}\n{extra}")).unwrap();
    path
}

#[test]
fn simulate_writes_deterministic_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = bin()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
    }
    let a = fs::read(dir.path().join("a/trace.csv")).unwrap();
    let b = fs::read(dir.path().join("b/trace.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b, "identical configs must produce byte-identical traces");
    let header = String::from_utf8_lossy(&a);
    assert!(header.starts_with("tau_s,R,n1,n2,leak1,leak2\n"));
    // timestamps live only in the metadata sidecar
    assert!(dir.path().join("a/run_metadata.json").exists());
    assert!(dir.path().join("a/config_echo.toml").exists());
}

#[test]
fn config_round_trip_and_unknown_keys() {
    let parsed = config::parse(BASE_CONFIG).unwrap();
    let emitted = config::emit(&parsed);
    let reparsed = config::parse(&emitted).unwrap();
    assert_eq!(parsed, reparsed);

    let with_unknown = format!("{BASE_CONFIG}\nunknown_key = 3\n");
    assert!(config::parse(&with_unknown).is_err());
    let with_unknown_nested = BASE_CONFIG.replace("eta = 0.01", "eta = 0.01\nbogus = 1");
    assert!(config::parse(&with_unknown_nested).is_err());
}

#[test]
fn malformed_config_exits_2_and_engine_error_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "schema_version = 1\n[system]\nnot_a_key = 1\n").unwrap();
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(dir.path().join("o"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // valid config, but the engine rejects a cooling weight above 1
    let cfg = write_config(
        dir.path(),
        "",
    );
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("jc_over_j = 0.0", "jc_over_j = 1.5");
    fs::write(&cfg, text).unwrap();
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("o2"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn snapshot_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[snapshot]\ntimes_s = [0.0, 1.0e-3]\nrestrict_n1 = 1\n",
    );
    let out = dir.path().join("snap");
    let status = bin()
        .args(["snapshot", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let path = out.join("snapshot_000.csv");
    let restored = ingest::read_snapshot_csv(&path).unwrap();
    // 22 labels on the thin basis: n1 <= 1, n2 <= 3 here gives 8 states;
    // re-render and compare bytes
    let text = fs::read_to_string(&path).unwrap();
    let rendered = emit::render_snapshot(&restored, 0.0, emit::Format::Csv);
    assert_eq!(text, rendered, "emit -> ingest -> emit must be bitwise stable");
}

#[test]
fn snapshot_22_state_labels() {
    // (1, 10) snapshot: 484 rows with labels 00..110
    let dir = tempfile::tempdir().unwrap();
    let cfg_text = BASE_CONFIG
        .replace("n1_max = 3", "n1_max = 10")
        .replace("n2_max = 3", "n2_max = 10");
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, format!("{cfg_text}\n[snapshot]\ntimes_s = [0.0]\nrestrict_n1 = 1\n"))
        .unwrap();
    let out = dir.path().join("snap");
    let status = bin()
        .args(["snapshot", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("snapshot_000.csv")).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 22 * 22);
    assert!(rows[0].starts_with("0,0,00,00,"));
    assert!(rows.last().unwrap().starts_with("483,") || rows.last().unwrap().contains(",110,110,"));
    let restored = ingest::read_snapshot_csv(&out.join("snapshot_000.csv")).unwrap();
    assert_eq!(restored.basis().dimension(), 22);
}

#[test]
fn timing_report_contains_eight_hours() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[timing]\nn_a = 1000.0\nn_p = 30.0\nt12_s = 1e-6\nt_tot_s = 2e-5\nmode = \"single\"\n",
    );
    let out = dir.path().join("t");
    let output = bin()
        .args(["timing", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--format")
        .arg("json")
        .output()
        .unwrap();
    assert!(output.status.success());
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("8.3"), "expected ~8.3 hours in: {stdout}");
    let json = fs::read_to_string(out.join("timing.json")).unwrap();
    assert!(json.contains("\"exact_s\":2.99970"));
}

#[test]
fn sweep_degenerate_cell_matches_simulate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[sweep]\naxis1_param = \"n_th\"\naxis1_values = [0.01]\n",
    );
    let out = dir.path().join("s");
    let status = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "n_th,visibility,feasible,error");
    let row = lines.next().unwrap();
    assert!(row.ends_with(",true,"), "row: {row}");
    assert_eq!(lines.next(), None);
}

#[test]
fn validate_pulse_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    // rectangular pulse: n_cav * g1_ang * T = pi/2 with g1 = 1 kHz
    let duration = std::f64::consts::FRAC_PI_2 / (std::f64::consts::TAU * 1000.0);
    let times: Vec<String> = (0..=50)
        .map(|i| format!("{:.12e}", duration * i as f64 / 50.0))
        .collect();
    let ncav = vec!["1.0"; 51].join(", ");
    let cfg = write_config(
        dir.path(),
        &format!(
            "[pulse]\ng1_hz = 1000.0\nt_s = [{}]\nn_cav = [{}]\n",
            times.join(", "),
            ncav
        ),
    );
    let out = dir.path().join("p");
    let output = bin()
        .args(["validate-pulse", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success());
    assert!(String::from_utf8_lossy(&output.stdout).contains("pass"));
}

#[test]
fn json_trace_emission() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("j");
    let status = bin()
        .args(["simulate", "--format", "json", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out.join("trace.json")).unwrap();
    assert!(text.starts_with("{\"schema_version\":1,"));
    assert!(text.contains("\"R\":["));
    assert!(text.contains("\"leak2\":["));
    assert!(!out.join("trace.csv").exists());
}

#[test]
fn analytic_and_detuning_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[analytic]\ntau_d_s = 1.0e-2\ntau_th_s = 2.0e-2\n\n\
         [detuning]\ndelta_over_omega1 = [0.5, 3.0, 5.0, 8.0]\nomega1_over_kappa = 10.0\nomega2_over_omega1 = 2.0\n",
    );
    let out_a = dir.path().join("a");
    let status = bin()
        .args(["analytic", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_a)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out_a.join("analytic.csv")).unwrap();
    assert!(text.starts_with("tau_s,R,n1,n2,leak1,leak2\n"));
    // R(0) = 0 for the closed-form model
    assert!(text.lines().nth(1).unwrap().contains(",0.0000000000000000e0,"));

    let out_d = dir.path().join("d");
    let status = bin()
        .args(["detuning", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_d)
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(out_d.join("detuning.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "delta_over_omega1,jc_over_j,jh_over_j,j_normalized,visibility,feasible,error"
    );
    // the cell on the sideband crossing is masked, the far cell feasible
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows[0].contains(",false,"));
    assert!(rows[3].contains(",true,"));
}

#[test]
fn sweep_output_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[sweep]\naxis1_param = \"n_th\"\naxis1_values = [0.01, 0.2, 0.4]\naxis2_param = \"p\"\naxis2_values = [0.01, 0.1]\n",
    );
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}"));
        let status = bin()
            .args(["sweep", "--threads", threads, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(fs::read(out.join("sweep.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1], "sweep values must not depend on worker count");
}

#[test]
fn strict_leakage_escalates_warnings_to_exit_4() {
    // n_th = 0.01, p = 0.01 on (3,3) leaves ~1.4e-3 in the mode-1 top level
    // after the first splitter: a warning normally, exit 4 under strict
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("strict");
    let status = bin()
        .args(["simulate", "--strict-leakage", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn empty_grid_creates_no_trace_file() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE_CONFIG.replace(
        "tau_max_s = 3.4e-2\npoints = 48",
        "tau_list_s = []",
    );
    let cfg = dir.path().join("config.toml");
    fs::write(&cfg, text).unwrap();
    let out = dir.path().join("e");
    let status = bin()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.join("trace.csv").exists());
}
