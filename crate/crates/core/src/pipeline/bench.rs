//! Throughput of the render, clutter-filter and spectral stages on one window.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RunConfig;
use crate::doppler::{analyze_window_timed, MomentMaps};
use crate::error::{Error, Result};
use crate::optics::{FrameSource, HologramStack, InterferogramStack, LazyRenderer};
use crate::phantom::generate_phantom;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub width: usize,
    pub height: usize,
    /// Thread counts to sweep; empty means 1 and then twice that up to the core count (at least 2).
    pub threads: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            width: 384,
            height: 384,
            threads: Vec::new(),
        }
    }
}

impl BenchConfig {
    pub fn thread_counts(&self) -> Vec<usize> {
        if !self.threads.is_empty() {
            return self.threads.clone();
        }
        let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut out = vec![1];
        while *out.last().unwrap() < cores.max(2) {
            out.push((out.last().unwrap() * 2).min(cores.max(2)));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRate {
    pub stage: String,
    pub seconds: f64,
    pub frames_per_s: f64,
    pub pixels_per_s: f64,
    /// `frames_per_s` over the camera frame rate.
    pub ratio_to_acquisition: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadRun {
    pub threads: usize,
    pub stages: Vec<StageRate>,
    /// SHA-256 of the rendered frames and moment maps.
    pub digest: String,
    pub identical_to_first: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub window_frames: usize,
    pub acquisition_rate_hz: f64,
    pub runs: Vec<ThreadRun>,
    pub deterministic: bool,
}

pub const STAGES: [&str; 4] = ["render", "svd", "stft", "end_to_end"];

/// Phantom with exactly one analysis window at the benchmark size.
pub fn bench_stack(cfg: &RunConfig, bench: &BenchConfig) -> Result<InterferogramStack> {
    let mut spec = cfg.phantom_spec();
    spec.width = bench.width;
    spec.height = bench.height;
    spec.frame_count = cfg.spectral.window_len;
    spec.params.propagation_distance_m = 0.0;
    let (cx, cy) = (bench.width as f64 / 2.0, bench.height as f64 / 2.0);
    let scale = bench.width.min(bench.height) as f64 / 128.0;
    for v in &mut spec.vessels {
        for p in &mut v.centerline {
            *p = (cx + (p.0 - 64.0) * scale, cy + (p.1 - 64.0) * scale);
        }
        v.radius_px *= scale;
    }
    if let Some(p) = &mut spec.papilla {
        p.center_px = (cx, cy);
        p.radius_px *= scale;
    }
    Ok(generate_phantom(&spec)?.0)
}

fn digest(frames: &[num_complex::Complex32], maps: &MomentMaps) -> String {
    let mut h = Sha256::new();
    for c in frames {
        h.update(c.re.to_le_bytes());
        h.update(c.im.to_le_bytes());
    }
    for img in [&maps.m0, &maps.m2, &maps.top_bin_fraction] {
        for v in img.as_slice() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn rate(stage: &str, seconds: f64, frames: usize, pixels: usize, fs: f64) -> StageRate {
    let fps = if seconds > 0.0 { frames as f64 / seconds } else { f64::INFINITY };
    StageRate {
        stage: stage.to_string(),
        seconds,
        frames_per_s: fps,
        pixels_per_s: fps * pixels as f64,
        ratio_to_acquisition: fps / fs,
    }
}

/// Times the first window of `stack` once per thread count.
pub fn run_bench(stack: &InterferogramStack, cfg: &RunConfig, thread_counts: &[usize]) -> Result<BenchReport> {
    let spectral = &cfg.spectral;
    let t = spectral.window_len;
    if stack.frame_count < t {
        return Err(Error::data(format!(
            "benchmark needs {t} frames, the stack has {}",
            stack.frame_count
        )));
    }
    if thread_counts.is_empty() || thread_counts.contains(&0) {
        return Err(Error::config("thread counts must be positive"));
    }
    let fs = stack.params.frame_rate_hz;
    let pixels = stack.width * stack.height;
    let mut runs: Vec<ThreadRun> = Vec::new();
    for &n in thread_counts {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("cannot start {n} threads: {e}")))?;
        let run = pool.install(|| -> Result<ThreadRun> {
            let start = Instant::now();
            let renderer = LazyRenderer::new(stack, cfg.params.propagation_distance_m)?;
            let frames = renderer.read_frames(0, t)?;
            let render_s = start.elapsed().as_secs_f64();
            let window = HologramStack {
                width: stack.width,
                height: stack.height,
                frame_count: t,
                frames,
                params: stack.params,
            };
            let (maps, times) = analyze_window_timed(&window, spectral, 0)?;
            let total_s = start.elapsed().as_secs_f64();
            log::info!("{n} threads: {total_s:.2} s");
            Ok(ThreadRun {
                threads: n,
                stages: vec![
                    rate(STAGES[0], render_s, t, pixels, fs),
                    rate(STAGES[1], times.svd_s, t, pixels, fs),
                    rate(STAGES[2], times.stft_s, t, pixels, fs),
                    rate(STAGES[3], total_s, t, pixels, fs),
                ],
                digest: digest(&window.frames, &maps),
                identical_to_first: true,
            })
        })?;
        runs.push(run);
    }
    let first = runs[0].digest.clone();
    for r in &mut runs {
        r.identical_to_first = r.digest == first;
    }
    Ok(BenchReport {
        width: stack.width,
        height: stack.height,
        window_frames: t,
        acquisition_rate_hz: fs,
        deterministic: runs.iter().all(|r| r.identical_to_first),
        runs,
    })
}

pub fn format_table(r: &BenchReport) -> String {
    let mut out = format!(
        "{}x{} pixels, {}-frame window, acquisition {} frames/s\n\n{:>7}  {:<10} {:>10} {:>12} {:>14} {:>9}\n",
        r.width, r.height, r.window_frames, r.acquisition_rate_hz, "threads", "stage", "seconds", "frames/s", "pixels/s", "x 33 kHz"
    );
    for run in &r.runs {
        for s in &run.stages {
            out.push_str(&format!(
                "{:>7}  {:<10} {:>10.3} {:>12.1} {:>14.3e} {:>9.4}\n",
                run.threads, s.stage, s.seconds, s.frames_per_s, s.pixels_per_s, s.ratio_to_acquisition
            ));
        }
    }
    out.push_str(&format!(
        "\noutputs identical across thread counts: {}\n",
        if r.deterministic { "yes" } else { "NO" }
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_bench_reports_every_stage_and_is_deterministic() {
        let mut cfg = RunConfig::default();
        cfg.spectral.window_len = 64;
        cfg.spectral.hop = 32;
        cfg.spectral.svd_remove = 2;
        cfg.phantom.frame_count = 64;
        cfg.phantom.crossfade_hop = 32;
        let bench = BenchConfig {
            width: 48,
            height: 48,
            threads: vec![1, 3],
        };
        let stack = bench_stack(&cfg, &bench).unwrap();
        assert_eq!((stack.width, stack.frame_count), (48, 64));
        let report = run_bench(&stack, &cfg, &bench.thread_counts()).unwrap();
        assert!(report.deterministic);
        assert_eq!(report.runs.len(), 2);
        for run in &report.runs {
            let names: Vec<&str> = run.stages.iter().map(|s| s.stage.as_str()).collect();
            assert_eq!(names, STAGES);
            for s in &run.stages {
                assert!((s.ratio_to_acquisition - s.frames_per_s / 33_000.0).abs() <= 1e-12 * s.ratio_to_acquisition.abs());
            }
        }
        assert!(format_table(&report).contains("x 33 kHz"));
    }

    #[test]
    fn default_sweep_starts_at_one_thread() {
        let counts = BenchConfig::default().thread_counts();
        assert_eq!(counts[0], 1);
        assert!(counts.len() >= 2);
        assert!(counts.windows(2).all(|w| w[1] > w[0]));
    }
}
