use std::path::Path;
use std::process::{Command, Output};

use roughspde::config::SimulationConfig;
use roughspde::report::reports_from_json;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roughspde"))
        .args(args)
        .env_remove("ROUGHSPDE_THREADS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

const SMALL: &[&str] = &["--dx", "0.015625", "--dt", "0.015625", "--ensemble", "8", "--max-iters", "8"];

#[test]
fn identities_emit_json_and_pass() {
    let o = run(&["verify-identities", "--hurst", "0.3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let reports = reports_from_json(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert!(!reports.is_empty());
    assert!(reports.iter().all(|r| r.pass));
    assert!(reports.iter().any(|r| r.check_name == "gaussian_closed_form"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let o = run(&["picard", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&run(&["no-such-command"])), 1);
}

#[test]
fn solver_rejects_rough_hurst() {
    let o = run(&["picard", "--equation", "wave", "--hurst", "0.2"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("hurst"));
}

#[test]
fn config_errors_name_the_field() {
    let o = run(&["picard", "--dt", "0.3"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`dt`"));
    let o = run(&["gronwall", "--g", "spline"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`g`"));
}

#[test]
fn bad_thread_env_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_roughspde"))
        .args(["peszat"])
        .env("ROUGHSPDE_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn picard_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<_> = ["a", "b"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            let mut args = vec!["--threads", "1", "picard", "--out", out.to_str().unwrap()];
            args.extend_from_slice(SMALL);
            let o = run(&args);
            assert_eq!(code(&o), 0, "{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr));
            out
        })
        .collect();
    for f in ["reports.json", "field.csv", "diagnostics.json", "deltas.svg"] {
        assert_eq!(read(&outs[0].join(f)), read(&outs[1].join(f)), "{f} differs");
    }
    let echo = SimulationConfig::from_toml(&read(&outs[0].join("effective_config.toml"))).unwrap();
    assert_eq!(echo.dx, 0.015625);
    assert_eq!(echo.ensemble, 8);
    let field = read(&outs[0].join("field.csv"));
    assert!(field.starts_with("t,x,value\n"));
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SimulationConfig {
        hurst: 0.4,
        equation: roughspde::kernels::Kernel::Heat,
        t_end: 0.1,
        dt: 0.1 / 16.0,
        dx: 0.03125,
        ensemble: 1,
        ..Default::default()
    };
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    let out = dir.path().join("out");
    let o = run(&["picard", "--config", path.to_str().unwrap(), "--seed", "7", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo = SimulationConfig::from_toml(&read(&out.join("effective_config.toml"))).unwrap();
    assert_eq!(echo.hurst, 0.4);
    assert_eq!(echo.seed, 7);
    assert_eq!(echo.equation, roughspde::kernels::Kernel::Heat);
}

#[test]
fn gronwall_uniform_sanity() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    let o = run(&["gronwall", "--g", "const", "--samples", "200000", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let reports = reports_from_json(&read(&out.join("reports.json"))).unwrap();
    let s3 = reports.iter().find(|r| r.check_name == "hitting_s3_conv_vs_mc").unwrap();
    assert!((s3.reference - 1.0 / 6.0).abs() < 1e-3);
    assert!(read(&out.join("a_n.csv")).starts_with("n,a_n\n"));
    assert!(read(&out.join("a_n.svg")).starts_with("<svg"));
}

#[test]
fn holder_fit_writes_plot_with_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h");
    let o = run(&["holder", "--hurst", "0.4", "--ensemble", "200", "--n-space", "4096", "--out", out.to_str().unwrap()]);
    assert!(code(&o) == 0 || code(&o) == 2);
    let svg = read(&out.join("noise_space.svg"));
    assert!(svg.contains("slope ="));
    assert!(read(&out.join("noise_space.csv")).starts_with("lag,moment,stderr\n"));
}

#[test]
fn report_merges_and_converts() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "[]").unwrap();
    let o = run(&["report", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap().trim(), "[]");

    let out = dir.path().join("p");
    assert_eq!(code(&run(&["peszat", "--out", out.to_str().unwrap()])), 0);
    let json = out.join("reports.json");
    let csv = dir.path().join("merged.csv");
    let o = run(&["report", json.to_str().unwrap(), json.to_str().unwrap(), "--format", "csv", "--output", csv.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert_eq!(read(&csv).lines().count(), 1 + 4);
    let o = run(&["report", json.to_str().unwrap(), "--format", "svg"]);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("<svg"));
}

#[test]
fn failing_check_exits_two() {
    let o = run(&["gronwall", "--g", "power:-0.4", "--n-max", "10"]);
    assert_eq!(code(&o), 2);
}
