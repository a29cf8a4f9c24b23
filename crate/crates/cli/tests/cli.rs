//! End-to-end tests of the `voxtr` binary: exit codes, report files,
//! determinism, and the documented flag behaviors.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use voxtr::bench::from_csv;
use voxtr::history::strip_timing;
use voxtr::report::read_check_report;

fn voxtr(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxtr"))
        .args(args)
        .current_dir(dir)
        .env_remove("VOXTR_PARALLELISM")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn verify_passes_and_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = voxtr(&["verify", "--seed", "7", "--out", "a"], dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert!(stdout(&a).contains("all checks passed"));

    let b = voxtr(&["verify", "--seed", "7", "--out", "b"], dir.path());
    assert!(b.status.success());
    for file in ["verify_report.json", "manifest.json"] {
        let left = fs::read(dir.path().join("a").join(file)).unwrap();
        let right = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(left, right, "{file} must be byte-identical across runs");
    }
}

#[test]
fn verify_fault_injection_fails_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxtr(
        &["verify", "--out", "f", "--inject-fault", "flash-sign"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let text = stdout(&out);
    assert!(text.contains("FAIL flash_vs_naive_oracle"), "{text}");
    let report = read_check_report(&dir.path().join("f").join("verify_report.json")).unwrap();
    assert!(report
        .iter()
        .any(|r| r.check == "flash_vs_naive_oracle" && !r.passed()));
}

#[test]
fn gradcheck_reports_every_op_and_respects_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let ok = voxtr(&["gradcheck", "--out", "g"], dir.path());
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let report = read_check_report(&dir.path().join("g").join("gradcheck_report.json")).unwrap();
    assert!(report.len() >= 8, "need >= 8 ops, got {}", report.len());
    assert!(report.iter().all(|r| r.passed()));

    // An absurd threshold documents the float limits: failures are expected
    // and reported, not hidden.
    let strict = voxtr(
        &["gradcheck", "--out", "strict", "--threshold", "1e-9"],
        dir.path(),
    );
    assert_eq!(strict.status.code(), Some(1));
    let strict_report =
        read_check_report(&dir.path().join("strict").join("gradcheck_report.json")).unwrap();
    assert!(strict_report.iter().any(|r| !r.passed()));
}

#[test]
fn bench_flops_speedup_follows_w_over_n() {
    let dir = tempfile::tempdir().unwrap();
    // Small sweep, default w = N/8.
    let out = voxtr(
        &[
            "bench", "--out", "b", "--sweep", "64,128", "--d", "16", "--h", "4",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = fs::read_to_string(dir.path().join("b").join("reports.csv")).unwrap();
    let reports = from_csv(&csv).unwrap();
    assert_eq!(reports.len(), 6);
    for n in [64usize, 128] {
        let naive = reports
            .iter()
            .find(|r| r.variant == "naive" && r.n == n)
            .unwrap();
        let sparse = reports
            .iter()
            .find(|r| r.variant == "sparse_flash" && r.n == n)
            .unwrap();
        assert_eq!(naive.measured_flops, naive.analytic_flops);
        assert_eq!(sparse.measured_flops, sparse.analytic_flops);
        // Core flops ratio is exactly N/w = 8.
        let proj = 8 * (n as u64) * 16 * 16;
        assert_eq!(
            naive.measured_flops - proj,
            8 * (sparse.measured_flops - proj)
        );
        assert_eq!(naive.speedup, 1.0);
    }
}

#[test]
fn bench_single_variant_sweep_has_unit_speedups() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxtr(
        &[
            "bench",
            "--out",
            "s",
            "--sweep",
            "64",
            "--d",
            "16",
            "--h",
            "2",
            "--variant",
            "sparse_flash",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("s").join("reports.csv")).unwrap();
    let reports = from_csv(&csv).unwrap();
    assert!(reports.iter().all(|r| r.speedup == 1.0));
}

#[test]
fn bench_rejects_invalid_sweep_spec() {
    let dir = tempfile::tempdir().unwrap();
    // N=100 is not divisible by the default w*r.
    let out = voxtr(&["bench", "--out", "x", "--sweep", "100"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not divisible"), "{err}");
}

#[test]
fn unknown_labels_exit_with_usage_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxtr(&["verify", "--scale", "galactic"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = voxtr(&["bench", "--variant", "quantum"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = voxtr(&["distill", "--norm-mode", "l7"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    // Unknown flags are clap usage errors.
    let out = voxtr(&["verify", "--frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn distill_short_run_k_trace_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "distill",
        "--iterations",
        "12",
        "--logit-iterations",
        "2",
        "--batch",
        "2",
        "--seed",
        "11",
    ];
    let a = voxtr(&[&args[..], &["--out", "a"]].concat(), dir.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let history =
        voxtr::history::read_history(&dir.path().join("a").join("history.jsonl")).unwrap();
    assert_eq!(history.len(), 14);
    let ks: Vec<usize> = history.iter().take(12).map(|r| r.k).collect();
    assert_eq!(ks, vec![1, 1, 2, 2, 3, 3, 4, 4, 5, 5, 6, 6]);
    assert!(history.iter().take(12).all(|r| r.phase == "layerwise"));
    assert!(history.iter().skip(12).all(|r| r.phase == "logit"));

    let b = voxtr(&[&args[..], &["--out", "b"]].concat(), dir.path());
    assert!(b.status.success());
    // Checkpoints and manifests are byte-identical; history is identical
    // once the wall-clock field is stripped.
    for file in ["student.ckpt", "teacher.ckpt", "manifest.json"] {
        let left = fs::read(dir.path().join("a").join(file)).unwrap();
        let right = fs::read(dir.path().join("b").join(file)).unwrap();
        assert_eq!(left, right, "{file}");
    }
    let left =
        strip_timing(&fs::read_to_string(dir.path().join("a").join("history.jsonl")).unwrap())
            .unwrap();
    let right =
        strip_timing(&fs::read_to_string(dir.path().join("b").join("history.jsonl")).unwrap())
            .unwrap();
    assert_eq!(left, right);
}

#[test]
fn distill_student_checkpoint_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxtr(
        &[
            "distill",
            "--iterations",
            "6",
            "--logit-iterations",
            "0",
            "--batch",
            "1",
            "--out",
            "d",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let cfg = voxtr_core::encoder::make_student_config(voxtr_core::encoder::PresetScale::Toy);
    let params =
        voxtr::checkpoint::load_encoder(&dir.path().join("d").join("student.ckpt"), &cfg).unwrap();
    assert!(params.named_tensors().iter().all(|(_, t)| t.is_finite()));
}

#[test]
fn parallelism_env_var_is_validated_and_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_voxtr"))
        .args(["verify", "--out", "p", "--trials", "10"])
        .current_dir(dir.path())
        .env("VOXTR_PARALLELISM", "4")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("clamped to 1"));
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("p").join("manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["parallelism"], 4);

    let bad = Command::new(env!("CARGO_BIN_EXE_voxtr"))
        .args(["verify", "--out", "q"])
        .current_dir(dir.path())
        .env("VOXTR_PARALLELISM", "zero")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
