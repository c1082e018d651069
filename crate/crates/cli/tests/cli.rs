use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("maxreg-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn maxreg(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxreg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn summary(out: &Path) -> Vec<(String, String)> {
    fs::read_to_string(out.join("summary.txt"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").expect("key = value");
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn get(summary: &[(String, String)], key: &str) -> String {
    summary.iter().find(|(k, _)| k == key).unwrap_or_else(|| panic!("missing {key}")).1.clone()
}

/// Data rows of a CSV after checking the schema line and header.
fn csv(path: &Path, kind: &str, header: &str) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(format!("# schema: maxreg/{kind}/v1").as_str()));
    assert_eq!(lines.next(), Some(header));
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn convergence_on_scalar_decay_is_first_order() {
    let out = scratch("conv");
    let cfg = config("scalar_decay.toml");
    let o = maxreg(&["convergence", "--config", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv(&out.join("convergence.csv"), "convergence", "n,dt,error,observed_order");
    let ns: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ns, ["10", "20", "40", "80"]);
    assert_eq!(rows[0][3], "nan");
    // Independent check of the final-time error against exp(-1).
    let u80 = (1.0f64 / (1.0 + 1.0 / 80.0)).powi(80);
    let e80: f64 = rows[3][2].parse().unwrap();
    assert!((e80 - (u80 - (-1.0f64).exp()).abs()).abs() < 1e-12 * e80);
    let last: f64 = rows[3][3].parse().unwrap();
    assert!((0.8..=1.2).contains(&last), "{last}");
    assert_eq!(get(&summary(&out), "pass"), "true");
}

#[test]
fn failed_check_sets_exit_status_one() {
    let out = scratch("fail");
    let cfg = out.with_extension("toml");
    let text = fs::read_to_string(config("scalar_decay.toml")).unwrap().replace("min_order = 0.8", "min_order = 5.0");
    fs::write(&cfg, text).unwrap();
    let o = maxreg(&["convergence", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(get(&summary(&out), "pass"), "false");
}

#[test]
fn verify_bounds_on_constant_form_passes_every_row() {
    let out = scratch("bounds");
    let cfg = config("constant_form.toml");
    let o = maxreg(&["verify-bounds", "--config", cfg.to_str().unwrap()], &out);
    assert!(o.status.success());
    let rows = csv(&out.join("bounds.csv"), "bounds", "form,t,lambda,bound,measured,ceiling,pass");
    assert_eq!(rows.len(), 3 * 12 * 4);
    assert!(rows.iter().all(|r| r[6] == "true"));
}

#[test]
fn verify_mr_random_suite_satisfies_all_estimates() {
    let out = scratch("mr");
    let o = maxreg(&["verify-mr", "--seed", "7"], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(get(&summary(&out), "satisfied"), "100/100");
    let rows = csv(
        &out.join("mr.csv"),
        "mr",
        "problem,n_steps,norm_MR,apriori_C,rhs,satisfied,energy_residual,sup_V_norm,norm_L2V",
    );
    assert_eq!(rows.len(), 100);
    for r in &rows {
        let (lhs, rhs): (f64, f64) = (r[2].parse().unwrap(), r[4].parse().unwrap());
        assert!(lhs <= rhs * 1.05);
        // ‖u‖_{L²V} ≤ √T sup_t ‖u(t)‖_V with T = 1.
        let (l2v, sup): (f64, f64) = (r[8].parse().unwrap(), r[7].parse().unwrap());
        assert!(l2v <= sup * (1.0 + 1e-12));
    }
}

#[test]
fn runs_are_byte_identical_across_job_counts() {
    let cfg = config("robin_heat.toml");
    let a = scratch("det-a");
    let b = scratch("det-b");
    assert!(maxreg(&["sweep", "--config", cfg.to_str().unwrap(), "--jobs", "1"], &a).status.success());
    assert!(maxreg(&["sweep", "--config", cfg.to_str().unwrap(), "--jobs", "3"], &b).status.success());
    assert_eq!(fs::read(a.join("sweep.csv")).unwrap(), fs::read(b.join("sweep.csv")).unwrap());
    assert_eq!(fs::read(a.join("summary.txt")).unwrap(), fs::read(b.join("summary.txt")).unwrap());
}

#[test]
fn solve_writes_state_and_derivative_columns() {
    let out = scratch("solve");
    let cfg = config("robin_heat.toml");
    let o = maxreg(&["solve", "--config", cfg.to_str().unwrap(), "--oracle"], &out);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# schema: maxreg/trajectory/v1");
    assert_eq!(lines[1].split(',').count(), 1 + 2 * 17);
    assert_eq!(lines.len(), 2 + 201);
    // Derivative columns of row k are (u_k - u_{k-1}) / dt.
    let row = |k: usize| -> Vec<f64> { lines[2 + k].split(',').map(|v| v.parse().unwrap()).collect() };
    let (r4, r5) = (row(4), row(5));
    let dt = r5[0] - r4[0];
    for i in 0..17 {
        assert!(((r5[1 + i] - r4[1 + i]) / dt - r5[18 + i]).abs() < 1e-9);
    }
    let s = summary(&out);
    let err: f64 = get(&s, "oracle_l2h_error").parse().unwrap();
    assert!(err < 0.5 / 200.0, "{err}");
}

#[test]
fn glue_places_breakpoints_on_the_grid() {
    let out = scratch("glue");
    let cfg = config("piecewise_jump.toml");
    let o = maxreg(&["glue", "--config", cfg.to_str().unwrap()], &out);
    assert!(o.status.success());
    let s = summary(&out);
    assert_eq!(get(&s, "breakpoints_on_grid"), "true");
    assert_eq!(get(&s, "n_steps"), "200");
}

#[test]
fn spacetime_matches_the_initial_value() {
    let out = scratch("st");
    let cfg = config("robin_heat.toml");
    assert!(maxreg(&["spacetime", "--config", cfg.to_str().unwrap()], &out).status.success());
    let defect: f64 = get(&summary(&out), "initial_defect").parse().unwrap();
    assert!(defect < 1e-10);
}

#[test]
fn quasilinear_history_records_every_iteration() {
    let out = scratch("quasi");
    let cfg = config("quasilinear_robin.toml");
    let o = maxreg(&["quasilinear", "--config", cfg.to_str().unwrap()], &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv(&out.join("history.csv"), "picard", "iter,distance,sub_mr_norm,sub_apriori_satisfied");
    let s = summary(&out);
    assert_eq!(rows.len().to_string(), get(&s, "iterations"));
    let last: f64 = rows.last().unwrap()[1].parse().unwrap();
    assert!(last <= 1e-8);
    assert!(rows.iter().all(|r| r[3] == "true"));
}

#[test]
fn config_errors_exit_two_with_a_line_number() {
    let out = scratch("bad");
    let cfg = out.with_extension("toml");
    fs::write(&cfg, "[form]\nkind = \"robin\"\nn_elements = 8\nbeta = \"1 + * t\"\nbeta_lipschitz = 1\n").unwrap();
    let o = maxreg(&["solve", "--config", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 4"), "{err}");
    let o = maxreg(&["solve"], &out);
    assert_eq!(o.status.code(), Some(2));
    let o = maxreg(&["verify-mr", "--oracle-tol", "1e-3"], &out);
    assert_eq!(o.status.code(), Some(2));
}
