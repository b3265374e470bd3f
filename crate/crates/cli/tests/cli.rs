use std::path::Path;
use std::process::{Command, Output};

use hflw::phantom::{radial_vessels, PapillaSpec};
use hflw::pipeline::{FlowSummary, RunConfig};
use sha2::{Digest, Sha256};

fn hflw(workdir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hflw"))
        .arg("--workdir")
        .arg(workdir)
        .args(args)
        .env_remove("HFLW_THREADS")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(&o));
    o
}

/// Small phantom layout written as a config file in `dir`.
fn small_config(dir: &Path) -> std::path::PathBuf {
    let mut cfg = RunConfig::default();
    let center = (32.0, 32.0);
    cfg.phantom.width = 64;
    cfg.phantom.height = 64;
    cfg.phantom.frame_count = 512 + 7 * 256;
    cfg.phantom.vessels = radial_vessels(center, 3, 10.0, 31.0, &[2.5], &[4000.0], 0.33, 1.2, 0.3);
    cfg.phantom.papilla = Some(PapillaSpec {
        center_px: center,
        radius_px: 20.0,
    });
    cfg.segmentation.flatfield_sigma_px = 16.0;
    cfg.flow.circle_radius_px = 24.0;
    cfg.flow.profile_half_len_px = 7;
    let path = dir.join("small.json");
    hflw::io::write_json(&path, &cfg).unwrap();
    path
}

fn sha256(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn stage_commands_chain_through_stored_configs() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("out");
    let config = small_config(dir.path());
    ok(hflw(&work, &["phantom", "--config", config.to_str().unwrap()]));
    for stage in ["render", "doppler", "segment"] {
        ok(hflw(&work, &[stage]));
    }
    let out = ok(hflw(&work, &["flow"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("mean total flow"));

    let summary: FlowSummary = hflw::io::read_json(&work.join("flow/flow.json")).unwrap();
    assert_eq!(summary.windows, 8);
    assert_eq!(summary.series.len(), 8);
    assert!(summary.sections > 0);
    let stored = RunConfig::load(&work.join("flow/run_config.json")).unwrap();
    assert_eq!(stored.phantom.width, 64);
    assert_eq!(stored.geometry.papilla_diameter_px, Some(40.0));

    let report = ok(hflw(&work, &["report"]));
    assert!(work.join("report/report.txt").is_file());
    assert!(String::from_utf8_lossy(&report.stdout).contains("resistivity index"));
}

#[test]
fn phantom_is_reproducible_from_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = small_config(dir.path());
    let c = config.to_str().unwrap();
    let run = |name: &str, seed: &str| {
        let work = dir.path().join(name);
        ok(hflw(&work, &["phantom", "--config", c, "--seed", seed, "--frames", "512"]));
        sha256(&work.join("stack.hflw"))
    };
    let a = run("a", "7");
    assert_eq!(a, run("b", "7"));
    assert_ne!(a, run("c", "8"));
}

#[test]
fn broadening_beyond_the_band_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::default();
    cfg.phantom.width = 32;
    cfg.phantom.height = 32;
    cfg.phantom.frame_count = 512;
    cfg.phantom.papilla = None;
    cfg.phantom.vessels = radial_vessels((16.0, 16.0), 1, 2.0, 14.0, &[3.0], &[40_000.0], 0.0, 1.2, 0.0);
    let path = dir.path().join("bad.json");
    hflw::io::write_json(&path, &cfg).unwrap();
    let out = hflw(&dir.path().join("out"), &["phantom", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("band limit"), "{}", stderr(&out));
}

#[test]
fn truncated_container_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("out");
    let config = small_config(dir.path());
    ok(hflw(&work, &["phantom", "--config", config.to_str().unwrap(), "--frames", "512"]));
    let stack = work.join("stack.hflw");
    let full = std::fs::metadata(&stack).unwrap().len();
    std::fs::OpenOptions::new().write(true).open(&stack).unwrap().set_len(full / 2).unwrap();
    let out = hflw(&work, &["render"]);
    assert_eq!(out.status.code(), Some(3));
    let msg = stderr(&out);
    assert!(msg.contains(&full.to_string()) && msg.contains(&(full / 2).to_string()), "{msg}");
}

#[test]
fn invalid_settings_exit_with_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("out");
    let out = hflw(&work, &["phantom", "--hop", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("hop"), "{}", stderr(&out));
    let out = hflw(&work, &["phantom", "--band-high", "20000"]);
    assert_eq!(out.status.code(), Some(2));
    let out = hflw(&work, &["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!work.exists());
}

#[test]
fn missing_inputs_exit_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = hflw(&dir.path().join("out"), &["segment"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("earlier stage"), "{}", stderr(&out));
}

#[test]
fn bench_reports_rates_and_acquisition_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let work = dir.path().join("out");
    let out = ok(hflw(
        &work,
        &[
            "bench",
            "--bench-width",
            "32",
            "--bench-height",
            "32",
            "--bench-threads",
            "1,2",
            "--window-len",
            "64",
            "--hop",
            "32",
            "--svd-remove",
            "2",
        ],
    ));
    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(table.contains("x 33 kHz"), "{table}");
    for stage in ["render", "svd", "stft", "end_to_end"] {
        assert!(table.contains(stage), "{table}");
    }
    assert!(table.contains("identical across thread counts: yes"), "{table}");
    assert!(work.join("bench/bench.json").is_file());
}
