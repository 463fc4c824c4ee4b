//! End-to-end runs of the `romforge` binary.

use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;
use romforge::diagnostics::{e_rec_rom, ErrorReport};
use romforge::galerkin::{build_grom, GromCoefficients};
use romforge::online::{integrate, IntegratorConfig, Scheme};
use romforge::pod::{compute_pod, load_basis, project_reference, truncate};
use romforge::snapshot::{load_coefficient_series, load_snapshots, split_mean};
use romforge::synth::{shedding_ensemble, SheddingRecipe};
use romforge::tensor_io::{load_coefficients, save_grom, CoefficientMeta, CoefficientSet};
use romforge::Grid;

fn romforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_romforge"))
        .current_dir(dir)
        .args(args)
        .env_remove("ROMFORGE_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = romforge(dir, args);
    assert!(
        out.status.success(),
        "romforge {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    romforge(dir, args).status.code().expect("exit code")
}

#[test]
fn flops_prints_the_known_totals() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["flops", "--N", "3253185", "--r", "8", "--d", "3", "--out", "f"]);
    for v in ["6,402,267,496", "76,745,882,071", "1,176", "9,376", "520,509,720"] {
        assert!(text.contains(v), "{v} missing from\n{text}");
    }
    let csv = std::fs::read_to_string(dir.path().join("f/flops.csv")).unwrap();
    assert!(csv.contains("eAPG-ROM,76745882071,9376"));
    assert!(dir.path().join("f/resolved_config.txt").exists());
}

#[test]
fn zero_system_stays_constant() {
    let dir = tempfile::tempdir().unwrap();
    let grid = Grid::new_2d(4, 4, 0.1, 0.1).unwrap();
    save_grom(&GromCoefficients::zeros(3), &CoefficientMeta::new(&grid, 0.01), dir.path().join("zero")).unwrap();
    ok(
        dir.path(),
        &["simulate", "--coefficients", "zero", "--a0", "0.5,-1,2", "--t1", "3", "--samples", "30", "--out", "sim"],
    );
    let series = load_coefficient_series(dir.path().join("sim/trajectory.csv")).unwrap();
    assert_eq!(series.len(), 31);
    let a0 = DVector::from_vec(vec![0.5, -1.0, 2.0]);
    for m in 0..series.len() {
        assert_eq!(series.column(m), a0);
    }
}

#[test]
fn config_file_supplies_missing_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.txt"), "N = 3253185\nr = 8\nd = 3\n").unwrap();
    let text = ok(dir.path(), &["--config", "run.txt", "flops", "--out", "f"]);
    assert!(text.contains("76,745,882,071"));
    let echo = std::fs::read_to_string(dir.path().join("f/resolved_config.txt")).unwrap();
    assert!(echo.contains("# file run.txt\nN = 3253185"), "{echo}");
    assert!(echo.contains("# default\nomega1 = 12"), "{echo}");
}

#[test]
fn exit_codes_follow_the_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(code(p, &["flops", "--r", "2", "--d", "2"]), 2);
    assert_eq!(code(p, &["flops", "--N", "10", "--r", "0", "--d", "2"]), 2);
    assert_eq!(code(p, &["pod", "--manifest", "missing.txt", "--r", "2", "--out", "o"]), 4);
    assert_eq!(code(p, &["--threads", "0", "flops", "--N", "9", "--r", "2", "--d", "2"]), 2);

    // x' = x^2 from x = 1 blows up at t = 1.
    let grid = Grid::new_2d(4, 4, 0.1, 0.1).unwrap();
    let mut g = GromCoefficients::zeros(1);
    g.q[(0, 0)] = 1.0;
    save_grom(&g, &CoefficientMeta::new(&grid, 0.01), p.join("blow")).unwrap();
    let args = ["simulate", "--coefficients", "blow", "--a0", "1", "--t1", "2", "--out", "sim"];
    assert_eq!(code(p, &args), 3);
    let info = std::fs::read_to_string(p.join("sim/integration.txt")).unwrap();
    assert!(info.contains("blow_up = true"));
}

#[test]
fn pipeline_matches_library_calls_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let recipe = SheddingRecipe {
        shape: vec![12, 9],
        snapshots: 30,
        periods: 2.0,
        ..Default::default()
    };
    ok(p, &["synth", "--shape", "12,9", "--snapshots", "30", "--periods", "2", "--out", "syn"]);
    ok(p, &["pod", "--manifest", "syn/manifest.txt", "--r", "3", "--out", "pod"]);
    ok(p, &["build-grom", "--basis", "pod/basis", "--nu", "0.01", "--out", "grom"]);
    ok(p, &["simulate", "--coefficients", "grom", "--reference", "pod/reference.csv", "--out", "sim"]);
    ok(
        p,
        &["errors", "--snapshots", "syn/manifest.txt", "--basis", "pod/basis", "--rom", "sim/trajectory.csv", "--out", "err"],
    );

    let ens = shedding_ensemble(&recipe).unwrap();
    let snaps = load_snapshots(p.join("syn/manifest.txt")).unwrap();
    assert_eq!(snaps.matrix(), ens.snapshots.matrix());
    assert_eq!(snaps.times(), ens.snapshots.times());

    let fl = split_mean(&ens.snapshots);
    let cb = truncate(&compute_pod(&fl).unwrap(), 3).unwrap();
    let basis = load_basis(p.join("pod/basis")).unwrap();
    assert_eq!(basis.modes(), cb.modes());
    assert_eq!(basis.mean(), cb.mean());

    let g = build_grom(&cb, 0.01).unwrap();
    let (set, meta) = load_coefficients(p.join("grom")).unwrap();
    assert_eq!(set, CoefficientSet::Grom(g.clone()));
    assert_eq!(meta.grid_fingerprint, cb.grid().fingerprint());

    let reference = project_reference(&cb, &fl).unwrap();
    let cfg = IntegratorConfig::new(Scheme::default(), reference.times().to_vec());
    let rom = integrate(&g, &reference.column(0), &cfg).unwrap();
    assert_eq!(load_coefficient_series(p.join("sim/trajectory.csv")).unwrap(), rom);

    let e_rec = e_rec_rom(&ens.snapshots, &cb, &rom, ens.snapshots.reference_velocity()).unwrap();
    let report = ErrorReport::new(cb.singular_values().as_slice(), 3, &reference, &rom, Some(e_rec)).unwrap();
    let expected = format!("{}\n{}\n", ErrorReport::CSV_HEADER, report.csv_row("rom"));
    assert_eq!(std::fs::read_to_string(p.join("err/errors.csv")).unwrap(), expected);
}

#[test]
fn memory_optimization_feeds_the_eapg_build() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["synth", "--shape", "12,9", "--snapshots", "30", "--periods", "2", "--out", "syn"]);
    ok(p, &["pod", "--manifest", "syn/manifest.txt", "--r", "2", "--out", "pod"]);
    ok(p, &["optimize-memory", "--basis", "pod/basis", "--snapshots", "syn/manifest.txt", "--out", "opt"]);
    let memory = std::fs::read_to_string(p.join("opt/memory.txt")).unwrap();
    assert!(memory.contains("memory_kind = scalar"));
    ok(p, &["build-eapg", "--basis", "pod/basis", "--nu", "0.01", "--memory", "opt/memory.txt", "--out", "eapg"]);
    let (set, _) = load_coefficients(p.join("eapg")).unwrap();
    assert_eq!(set.kind(), "eapg");
    let text = ok(
        p,
        &[
            "simulate", "--coefficients", "eapg", "--reference", "pod/reference.csv", "--out", "sim", "--oracle", "2",
            "--basis", "pod/basis",
        ],
    );
    assert!(text.contains("oracle"));
    assert!(p.join("sim/oracle.csv").exists());
}
