//! End-to-end tests of the binary: exit codes, CSV shapes, determinism.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaugecavity"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Data rows of a CSV emitted on stdout (command already checked for success).
fn data_rows(text: &str) -> Vec<Vec<f64>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

const STRONG_COUPLING: &str = "\
model.kind = bimodal_rabi
model.omega_radns = 1
model.splitting_radns = 1
model.g_radns = 1
surfaces.n = 7
surfaces.extent = 3
";

#[test]
fn surfaces_csv_has_hash_header_and_full_lattice() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "s.cfg", STRONG_COUPLING);
    let out = run(&["surfaces", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();

    let hash_line = lines.next().unwrap();
    assert!(hash_line.starts_with("# config_sha256 = "), "{hash_line}");
    let digest = hash_line.rsplit(' ').next().unwrap();
    assert_eq!(digest.len(), 64);
    assert!(digest.chars().all(|c| c.is_ascii_hexdigit()));

    assert_eq!(lines.next().unwrap(), "p1,p2,v1,v2");
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 49);

    // Strong coupling: the lower surface dips below its origin value away
    // from the origin.
    let origin = rows
        .iter()
        .find(|r| r[0] == 0.0 && r[1] == 0.0)
        .expect("origin is a lattice point")[2];
    let min = rows.iter().map(|r| r[2]).fold(f64::INFINITY, f64::min);
    assert!(min < origin - 0.05, "min {min} vs origin {origin}");
}

#[test]
fn zero_coupling_surfaces_are_shifted_paraboloids() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "s.cfg",
        &STRONG_COUPLING.replace("model.g_radns = 1", "model.g_radns = 0"),
    );
    let out = run(&["surfaces", "--config", &cfg]);
    assert!(out.status.success());
    for row in data_rows(&stdout(&out)) {
        let r2 = row[0] * row[0] + row[1] * row[1];
        assert!((row[2] - (0.5 * r2 - 0.5)).abs() < 1e-12);
        assert!((row[3] - (0.5 * r2 + 0.5)).abs() < 1e-12);
    }
}

const FREE_EVOLVE: &str = "\
model.kind = rabi
model.omega_radns = 1
model.splitting_radns = 1.2
model.g_radns = 0
grid.n = 64
grid.l1 = 8
time.dt_ns = 1e-3
time.t_final_ns = 0.2
time.snapshots = 8
init.x1 = 0
init.p1 = 2
init.atom = 1, 1
";

#[test]
fn zero_coupling_inversion_stays_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "e.cfg", FREE_EVOLVE);
    let out = run(&["evolve", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().nth(1).unwrap().starts_with("t_ns,norm2,p1,p2,W,x1,p1q"));
    let rows = data_rows(&text);
    assert!(rows.len() >= 9);
    let w0 = rows[0][4];
    for row in &rows {
        assert!((row[4] - w0).abs() < 1e-8, "W drifted: {} vs {}", row[4], w0);
    }
}

#[test]
fn identical_configs_give_bitwise_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "e.cfg", FREE_EVOLVE);
    let out_a = dir.path().join("a.csv");
    let out_b = dir.path().join("b.csv");
    for (path, threads) in [(&out_a, "1"), (&out_b, "2")] {
        let out = run(&[
            "evolve",
            "--config",
            &cfg,
            "--out",
            path.to_str().unwrap(),
            "--threads",
            threads,
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn unknown_key_is_rejected_with_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "bad.cfg",
        "model.kind = rabi\nmodel.omega_radns = 1\nmodel.splitting_radns = 0\nmodel.g_radns = 0\nmodel.couplng_radns = 1\n",
    );
    let out = run(&["evolve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("line 5"), "{err}");
    assert!(err.contains("couplng"), "{err}");
}

#[test]
fn boundary_escape_exits_with_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    // Packet centered two cell widths from the box edge: the edge-mass guard
    // trips at the first snapshot.
    let cfg = write_cfg(
        dir.path(),
        "leak.cfg",
        &FREE_EVOLVE
            .replace("grid.l1 = 8", "grid.l1 = 4")
            .replace("init.p1 = 2", "init.p1 = 3.8"),
    );
    let out = run(&["evolve", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("boundary"), "{}", stderr(&out));
}

const FLAT_BAND_LOOP: &str = "\
model.kind = bimodal_rabi
model.omega_radns = 1
model.splitting_radns = 0
model.g_radns = 1
loop.center_p1 = 0
loop.center_p2 = 0
loop.radius = 1.5
loop.segments = 256
loop.bands = 0
";

#[test]
fn wilson_reports_pi_phase_and_conjugates_on_reversal() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "w.cfg", FLAT_BAND_LOOP);
    let out = run(&["wilson", "--config", &cfg]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("# convergence_estimate = "));
    assert!(text.contains("# unitarity_defect = "));
    assert!(text.lines().any(|l| l == "band_i,band_j,re,im"));
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 1);
    let (re, im) = (rows[0][2], rows[0][3]);
    assert!(re < -0.98, "re = {re}");
    assert!(im.abs() < 1e-10, "im = {im}");

    let rev = write_cfg(
        dir.path(),
        "wrev.cfg",
        &format!("{FLAT_BAND_LOOP}loop.orientation = reversed\n"),
    );
    let out_rev = run(&["wilson", "--config", &rev]);
    assert!(out_rev.status.success(), "{}", stderr(&out_rev));
    let rows_rev = data_rows(&stdout(&out_rev));
    assert!((rows_rev[0][2] - re).abs() < 1e-12);
    assert!((rows_rev[0][3] + im).abs() < 1e-12);
}

#[test]
fn loop_through_a_degeneracy_reports_the_angle_and_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "w.cfg",
        &FLAT_BAND_LOOP.replace("loop.center_p1 = 0", "loop.center_p1 = 1.5"),
    );
    let out = run(&["wilson", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("angle"), "{}", stderr(&out));
}

#[test]
fn validate_reference_suite_passes() {
    let out = run(&["validate"]);
    assert!(out.status.success(), "{}\n{}", stdout(&out), stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "check,status,metric,threshold,note"));
    let passes = text.lines().filter(|l| l.contains(",pass,")).count();
    assert_eq!(passes, 6, "{text}");
    assert!(!text.contains(",fail,"));
}

#[test]
fn coarse_dt_fails_accuracy_checks_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/rabi_validate.cfg"),
    )
    .unwrap();
    let cfg = write_cfg(
        dir.path(),
        "coarse.cfg",
        &text.replace("time.dt_ns = 1e-4", "time.dt_ns = 1e-3"),
    );
    let out = run(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("free_rotation,fail"), "{table}");
    assert!(table.contains("strang_order,pass"), "{table}");
}

#[test]
fn undersized_oracle_basis_is_reported_as_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../presets/rabi_validate.cfg"),
    )
    .unwrap();
    let cfg = write_cfg(
        dir.path(),
        "small.cfg",
        &text.replace("oracle.n_max = 40", "oracle.n_max = 8"),
    );
    let out = run(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    let table = stdout(&out);
    assert!(table.contains("oracle_equivalence,fail"), "{table}");
    assert!(table.to_lowercase().contains("trunc") || table.contains("n_max"), "{table}");
}

#[test]
fn info_reports_periods_and_commutators() {
    let dir = tempfile::tempdir().unwrap();
    let fig2 = write_cfg(
        dir.path(),
        "i.cfg",
        "model.kind = bimodal_rabi\nmodel.omega_ghz = 5.7\nmodel.splitting_ghz = 6.9\nmodel.g_ghz = 0.105\n",
    );
    let out = run(&["info", "--config", &fig2]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("0.1754"), "{text}");
    assert!(text.contains("1.0526"), "{text}");
    assert!(text.contains("is_abelian = false"), "{text}");
    assert!(text.contains("sqrt(omega*splitting/2)"), "{text}");
    assert!(text.contains("sqrt(omega*splitting)"), "{text}");

    let rabi = write_cfg(
        dir.path(),
        "r.cfg",
        "model.kind = rabi\nmodel.omega_radns = 1\nmodel.splitting_radns = 1.2\nmodel.g_radns = 0.3\n",
    );
    let out = run(&["info", "--config", &rabi]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("is_abelian = true"));
}
