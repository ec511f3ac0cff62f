use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tdd_cli::{export_summary, run_scenario, CliError, RunOptions, Summary};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn tdd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdd")).args(args).output().expect("binary runs")
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    tdd(&args)
}

fn summary(dir: &Path) -> Summary {
    Summary::parse(&fs::read_to_string(dir.join("summary.txt")).unwrap())
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn pdc_check_passes_lorentz() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("lorentz_pdc.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&dir.path().join("pdc.csv")), "omega,eta,min_eig");
    let s = summary(dir.path());
    assert_eq!(s.get("pdc_passed"), Some("true"));
    assert!(s.get_f64("pdc_min_eig").unwrap() >= -1e-9);
    // 401 frequencies times 5 heights
    let rows = fs::read_to_string(dir.path().join("pdc.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, 401 * 5);
}

#[test]
fn pdc_violation_exits_three_with_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("flipped_power_law.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("PDC check failed"));
    let s = summary(dir.path());
    assert_eq!(s.get("status"), Some("pdc_failed"));
    assert!(s.get_f64("pdc_min_eig").unwrap() < -0.1);
    assert!(dir.path().join("pdc.csv").exists());
}

#[test]
fn pdc_violation_blocks_simulation() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("flipped_power_law.toml"), dir.path(), &["--command", "simulate"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(!dir.path().join("trajectory.csv").exists());
}

#[test]
fn compare_lamb_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("lamb.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&dir.path().join("compare.csv")), "t,q_ext,q_volterra,q_analytic,abs_err");
    let s = summary(dir.path());
    assert_eq!(s.get("oracle"), Some("analytic"));
    assert!(s.get_f64("oracle_linf_rel").unwrap() <= 1e-4);
    assert!(s.get_f64("volterra_linf").unwrap() <= 1e-4);
    assert!(s.get_f64("energy_drift_rel").unwrap() <= 1e-9);
    let prof = s.get_f64("string_profile_linf").unwrap();
    assert!(prof <= s.get_f64("string_profile_tol").unwrap(), "{prof}");
    // the summary on stdout is the file
    assert_eq!(String::from_utf8_lossy(&out.stdout), fs::read_to_string(dir.path().join("summary.txt")).unwrap());
}

#[test]
fn compare_quartic_against_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("quartic.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert_eq!(s.get("oracle"), Some("reduced"));
    assert!(s.get_f64("oracle_linf").unwrap() <= 1e-4);
    // no closed form: the analytic column is empty
    let row = fs::read_to_string(dir.path().join("compare.csv")).unwrap().lines().nth(2).unwrap().to_string();
    assert_eq!(row.split(',').nth(3), Some(""));
}

#[test]
fn simulate_conserves_energy_after_drive() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("lorentz_pulse.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(header(&dir.path().join("trajectory.csv")).ends_with("H_sys,H_str,H_total,work_ext,work_fr"));
    let s = summary(dir.path());
    assert!(s.get_f64("energy_drift_rel").unwrap() <= 1e-9);
    assert!(s.get_f64("energy_balance_rel").unwrap() <= 1e-9);
}

#[test]
fn coupling_reports_herglotz_residual() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("lorentz_coupling.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&dir.path().join("coupling.csv")), "kappa,sigma_hat_00");
    assert!(summary(dir.path()).get_f64("herglotz_residual").unwrap() <= 1e-3);
}

#[test]
fn brillouin_reports_both_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("brillouin.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert_eq!(s.get("brillouin_mode"), Some("power"));
    assert!((s.get_f64("delta").unwrap() - 0.02).abs() < 1e-12);
    let full = s.get_f64("brillouin_rel_err_full").unwrap();
    let lead = s.get_f64("brillouin_rel_err_leading").unwrap();
    assert!(full <= 0.1, "{full}");
    // the slow-variation corrections matter at this δ
    assert!(full < lead);
}

#[test]
fn maxwell_slab_energy_audit() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("maxwell_slab.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(header(&dir.path().join("fields.csv")), "x,E,H,D,B,H_sys,H_str");
    assert_eq!(header(&dir.path().join("energy.csv")), "t,H_sys,H_str,H_total,work_ext,left,right,slab");
    let s = summary(dir.path());
    assert!(s.get_f64("energy_audit_rel").unwrap() <= 1e-3);
    let absorbed = s.get_f64("absorbed").unwrap();
    assert!(absorbed > 0.0);
    assert!((absorbed - s.get_f64("h_str_final").unwrap()).abs() <= 1e-3 * s.get_f64("injected").unwrap());
}

#[test]
fn artifacts_are_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let out = run(&scenario("lamb.toml"), dir.path(), &["--threads", threads]);
        assert_eq!(out.status.code(), Some(0));
        let out = run(&scenario("lorentz_pdc.toml"), dir.path(), &["--threads", threads]);
        assert_eq!(out.status.code(), Some(0));
    }
    for name in ["compare.csv", "string_profile.csv", "pdc.csv", "summary.txt"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn malformed_config_names_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "command = \"compare\"\n[integration]\ndt = 0.01\nt_edn = 5.0\n").unwrap();
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integration.t_edn"));

    fs::write(&cfg, "command = \"simulate\"\n[integration]\ndt = -0.01\n").unwrap();
    let out = run(&cfg, &dir.path().join("out"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integration.dt"));
}

#[test]
fn command_flag_overrides_and_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("lorentz_coupling.toml"), dir.path(), &["--command", "pdc-check"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(dir.path()).get("command"), Some("pdc-check"));
    let out = run(&scenario("lorentz_coupling.toml"), dir.path(), &["--command", "explode"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_sections_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "command = \"pdc-check\"\n").unwrap();
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`susceptibility`"));
    fs::write(&cfg, "[susceptibility]\nmodel = \"zero\"\n").unwrap();
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("`command`"));
}

#[test]
fn coarse_maxwell_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let src = fs::read_to_string(scenario("maxwell_slab.toml")).unwrap().replace("dx = 0.05", "dx = 0.2");
    let cfg = dir.path().join("m.toml");
    fs::write(&cfg, src).unwrap();
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("system.dx"));
}

#[test]
fn library_entry_point_matches_binary() {
    let dir = tempfile::tempdir().unwrap();
    let s = run_scenario(&scenario("lorentz_pdc.toml"), &RunOptions::new(dir.path())).unwrap();
    assert_eq!(s, summary(dir.path()));
    let empty = tempfile::tempdir().unwrap();
    assert!(matches!(export_summary(empty.path(), &s), Err(CliError::NoArtifacts(_))));
}

#[test]
fn brillouin_lossless_uses_energy_formula() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario("brillouin_lossless.toml"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(dir.path());
    assert_eq!(s.get("brillouin_mode"), Some("energy"));
    assert!(s.get_f64("brillouin_rel_err_full").unwrap() <= 0.1);
}

#[test]
fn spatial_string_compares_against_volterra() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    fs::write(
        &cfg,
        r#"command = "compare"
[susceptibility]
model = "lorentz"
strength = 1.0
omega0 = 1.0
damping = 0.5
[coupling]
representation = "spatial"
dk = 0.05
kmax = 40.0
ds = 0.05
extent = 90.0
[drive]
kind = "gaussian_pulse"
t0 = 3.0
width = 0.5
amplitude = [1.0, 0.0]
[integration]
dt = 0.005
t_end = 20.0
"#,
    )
    .unwrap();
    let out = run(&cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let s = summary(&dir.path().join("o"));
    assert_eq!(s.get("oracle"), Some("reduced"));
    assert!(s.get_f64("oracle_linf_rel").unwrap() <= 1e-2, "{:?}", s.get("oracle_linf_rel"));
    assert!(!s.contains("string_profile_linf"));

    // a string too short for the light cone is refused
    let short = fs::read_to_string(&cfg).unwrap().replace("extent = 90.0", "extent = 10.0");
    fs::write(&cfg, short).unwrap();
    let out = run(&cfg, &dir.path().join("o2"), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("light cone"));
}
