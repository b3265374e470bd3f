use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hflw::flow::{MeanVelocityRule, NegativePixels, RadiusMode};
use hflw::pipeline::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "hflw", version, about = "Doppler holography blood-flow pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub run: RunArgs,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic interferogram stack and its ground truth.
    Phantom,
    /// Fresnel-render the interferogram stack to a hologram stack.
    Render,
    /// Clutter filtering and spectral moments per window.
    Doppler,
    /// Vesselness, temporal correlation and the artery mask.
    Segment,
    /// Broadening, velocity, sections and total flow.
    Flow,
    /// Render, Doppler, segment and flow in one pass.
    Run,
    /// Per-stage throughput on one analysis window.
    Bench(BenchArgs),
    /// Summary of the flow stage.
    Report,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 384)]
    pub bench_width: usize,
    #[arg(long, default_value_t = 384)]
    pub bench_height: usize,
    /// Comma-separated thread counts to sweep.
    #[arg(long, value_delimiter = ',')]
    pub bench_threads: Vec<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RuleArg {
    HalfPeak,
    Rms,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RadiusArg {
    PerWindow,
    TimeAveraged,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NegativeArg {
    Include,
    Exclude,
}

/// Flags that override fields of the run configuration.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Run configuration JSON; without it the previous stage's configuration is used.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workdir: Option<PathBuf>,
    /// Interferogram container to read or write.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true, env = "HFLW_THREADS")]
    pub threads: Option<usize>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub width: Option<usize>,
    #[arg(long, global = true)]
    pub height: Option<usize>,
    #[arg(long, global = true)]
    pub frames: Option<usize>,

    #[arg(long, global = true)]
    pub wavelength: Option<f64>,
    #[arg(long, global = true)]
    pub na: Option<f64>,
    #[arg(long, global = true)]
    pub frame_rate: Option<f64>,
    #[arg(long, global = true)]
    pub pixel_pitch: Option<f64>,
    /// Reconstruction distance, metres.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub z: Option<f64>,
    #[arg(long, global = true)]
    pub papilla_diameter_m: Option<f64>,

    #[arg(long, global = true)]
    pub window_len: Option<usize>,
    #[arg(long, global = true)]
    pub hop: Option<usize>,
    #[arg(long, global = true)]
    pub svd_remove: Option<usize>,
    #[arg(long, global = true)]
    pub band_low: Option<f64>,
    #[arg(long, global = true)]
    pub band_high: Option<f64>,

    #[arg(long, global = true)]
    pub vessel_threshold: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub artery_threshold: Option<f64>,
    #[arg(long, global = true)]
    pub flatfield_sigma: Option<f64>,

    #[arg(long, global = true)]
    pub ring_inner: Option<f64>,
    #[arg(long, global = true)]
    pub ring_outer: Option<f64>,

    #[arg(long, global = true)]
    pub circle_radius: Option<f64>,
    #[arg(long, global = true)]
    pub circle_width: Option<f64>,
    #[arg(long, global = true, requires = "center_y")]
    pub center_x: Option<f64>,
    #[arg(long, global = true, requires = "center_x")]
    pub center_y: Option<f64>,
    #[arg(long, global = true)]
    pub papilla_diameter_px: Option<f64>,
    #[arg(long, global = true)]
    pub pixel_scale: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub mean_rule: Option<RuleArg>,
    #[arg(long, global = true, value_enum)]
    pub radius_mode: Option<RadiusArg>,
    /// Whether pixels with negative frequency shift enter the cross-section averages.
    #[arg(long, global = true, value_enum)]
    pub negative_pixels: Option<NegativeArg>,
}

impl RunArgs {
    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        if let Some(w) = &self.workdir {
            cfg.paths.workdir = w.clone();
        }
        if self.input.is_some() {
            cfg.paths.input = self.input.clone();
        }
        set(&mut cfg.threads, &self.threads);
        set(&mut cfg.phantom.rng_seed, &self.seed);
        set(&mut cfg.phantom.width, &self.width);
        set(&mut cfg.phantom.height, &self.height);
        set(&mut cfg.phantom.frame_count, &self.frames);

        let p = &mut cfg.params;
        set(&mut p.wavelength_m, &self.wavelength);
        set(&mut p.numerical_aperture, &self.na);
        set(&mut p.frame_rate_hz, &self.frame_rate);
        set(&mut p.pixel_pitch_m, &self.pixel_pitch);
        set(&mut p.propagation_distance_m, &self.z);
        set(&mut p.papilla_diameter_m, &self.papilla_diameter_m);

        let s = &mut cfg.spectral;
        set(&mut s.window_len, &self.window_len);
        set(&mut s.hop, &self.hop);
        set(&mut s.svd_remove, &self.svd_remove);
        set(&mut s.band_low_hz, &self.band_low);
        set(&mut s.band_high_hz, &self.band_high);

        let g = &mut cfg.segmentation;
        set(&mut g.vessel_threshold, &self.vessel_threshold);
        set(&mut g.artery_threshold, &self.artery_threshold);
        set(&mut g.flatfield_sigma_px, &self.flatfield_sigma);

        set(&mut cfg.broadening.ring_inner_px, &self.ring_inner);
        set(&mut cfg.broadening.ring_outer_px, &self.ring_outer);

        let f = &mut cfg.flow;
        set(&mut f.circle_radius_px, &self.circle_radius);
        set(&mut f.circle_width_px, &self.circle_width);
        if let Some(r) = self.mean_rule {
            f.mean_rule = match r {
                RuleArg::HalfPeak => MeanVelocityRule::HalfPeak,
                RuleArg::Rms => MeanVelocityRule::Rms,
            };
        }
        if let Some(r) = self.radius_mode {
            f.radius_mode = match r {
                RadiusArg::PerWindow => RadiusMode::PerWindow,
                RadiusArg::TimeAveraged => RadiusMode::TimeAveraged,
            };
        }
        if let Some(n) = self.negative_pixels {
            f.negative_pixels = match n {
                NegativeArg::Include => NegativePixels::Include,
                NegativeArg::Exclude => NegativePixels::Exclude,
            };
        }
        if let (Some(x), Some(y)) = (self.center_x, self.center_y) {
            cfg.geometry.center_px = Some((x, y));
        }
        if self.papilla_diameter_px.is_some() {
            cfg.geometry.papilla_diameter_px = self.papilla_diameter_px;
        }
        if self.pixel_scale.is_some() {
            cfg.geometry.pixel_scale_m_per_px = self.pixel_scale;
            cfg.geometry.papilla_diameter_px = self.papilla_diameter_px;
        }
    }
}
