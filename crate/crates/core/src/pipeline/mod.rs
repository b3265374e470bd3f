//! Stage orchestration and the run configuration stored beside every output.
//!
//! Working-directory layout:
//!
//! ```text
//! stack.hflw               interferograms
//! truth/                   phantom ground truth
//! phantom/ render/ doppler/ segment/ flow/ report/   stage outputs, each with run_config.json
//! ```

pub mod bench;
mod outputs;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::doppler::{
    analyze_window, differential_broadening, estimate_background, velocity_from_broadening, MomentMaps, SaturationRule,
    SpectralWindowConfig,
};
use crate::error::{Error, Result};
use crate::flow::{
    pixel_scale_from_papilla, quantify_flow, systole_diastole_profiles, FlowConfig, FlowResult, PhaseProfiles,
};
use crate::image::{Image, Mask};
use crate::io;
use crate::optics::{FrameSource, LazyRenderer};
use crate::params::OpticalParams;
use crate::phantom::{generate_phantom, PhantomSpec, PhantomTruth};
use crate::segmentation::{segment, SegmentationConfig, SegmentationSet};

pub use outputs::{read_doppler, read_segmentation, FlowSummary, SectionRow, SegmentationFiles, SeriesRow};

pub const CONFIG_FILE: &str = "run_config.json";
pub const STACK_FILE: &str = "stack.hflw";

/// Ring used to estimate the background second moment around arteries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BroadeningConfig {
    pub ring_inner_px: f64,
    pub ring_outer_px: f64,
    pub saturation: SaturationRule,
}

impl Default for BroadeningConfig {
    fn default() -> Self {
        Self {
            ring_inner_px: 3.0,
            ring_outer_px: 9.0,
            saturation: SaturationRule::default(),
        }
    }
}

/// Annulus centre and image scale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Geometry {
    /// Annulus centre; the image centre when absent.
    pub center_px: Option<(f64, f64)>,
    /// Measured papilla diameter; with `params.papilla_diameter_m` it fixes the scale.
    pub papilla_diameter_px: Option<f64>,
    /// Explicit scale, used when no papilla diameter is given.
    pub pixel_scale_m_per_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub workdir: PathBuf,
    /// Interferogram container; `<workdir>/stack.hflw` when absent.
    pub input: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            workdir: PathBuf::from("hflw-out"),
            input: None,
        }
    }
}

/// Every setting of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub params: OpticalParams,
    pub spectral: SpectralWindowConfig,
    pub segmentation: SegmentationConfig,
    pub broadening: BroadeningConfig,
    pub flow: FlowConfig,
    pub geometry: Geometry,
    /// Phantom layout. Its optical parameters and analysis windows are
    /// replaced by `params` and `spectral` when it is generated.
    pub phantom: PhantomSpec,
    pub paths: Paths,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let phantom = PhantomSpec {
            frame_count: 4096,
            ..PhantomSpec::default()
        };
        Self {
            params: OpticalParams::default(),
            spectral: SpectralWindowConfig::default(),
            segmentation: SegmentationConfig::new(0.2, 0.3),
            broadening: BroadeningConfig::default(),
            flow: FlowConfig {
                circle_radius_px: 50.0,
                circle_width_px: 6.0,
                profile_half_len_px: 10,
                profile_width_px: 11,
                ..FlowConfig::default()
            },
            geometry: Geometry::default(),
            phantom,
            paths: Paths::default(),
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.spectral.validate(self.params.frame_rate_hz)?;
        self.segmentation.validate()?;
        self.flow.validate()?;
        let b = &self.broadening;
        if !(b.ring_inner_px >= 0.0 && b.ring_outer_px > b.ring_inner_px) {
            return Err(Error::config("background ring needs 0 <= inner < outer"));
        }
        Ok(())
    }

    pub fn stage_dir(&self, stage: &str) -> PathBuf {
        self.paths.workdir.join(stage)
    }

    pub fn input_path(&self) -> PathBuf {
        self.paths.input.clone().unwrap_or_else(|| self.paths.workdir.join(STACK_FILE))
    }

    /// Phantom spec with the run's optics and analysis windows.
    pub fn phantom_spec(&self) -> PhantomSpec {
        PhantomSpec {
            params: self.params,
            analysis: self.spectral.clone(),
            ..self.phantom.clone()
        }
    }

    pub fn pixel_scale(&self) -> Result<f64> {
        match (self.geometry.papilla_diameter_px, self.geometry.pixel_scale_m_per_px) {
            (Some(px), _) => pixel_scale_from_papilla(px, self.params.papilla_diameter_m),
            (None, Some(s)) if s > 0.0 => Ok(s),
            _ => Err(Error::config(
                "set geometry.papilla_diameter_px or geometry.pixel_scale_m_per_px to fix the image scale",
            )),
        }
    }

    pub fn center(&self, width: usize, height: usize) -> (f64, f64) {
        self.geometry
            .center_px
            .unwrap_or(((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0))
    }

    /// Writes `run_config.json` into `dir`, creating it.
    pub fn store(&self, dir: &Path) -> Result<()> {
        io::ensure_dir(dir)?;
        io::write_json(&dir.join(CONFIG_FILE), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        io::read_json(path)
    }
}

/// Per-window moments rounded to single precision, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerProduct {
    pub maps: Vec<MomentMaps>,
    pub times_s: Vec<f64>,
}

impl DopplerProduct {
    pub fn dims(&self) -> (usize, usize) {
        self.maps[0].m0.dims()
    }

    pub fn m0_series(&self) -> Vec<Image<f64>> {
        self.maps.iter().map(|m| m.m0.clone()).collect()
    }
}

fn round_f32(img: &Image<f64>) -> Image<f64> {
    img.map(|&v| v as f32 as f64)
}

/// Moment maps for every window of `source`.
pub fn compute_doppler(source: &dyn FrameSource, cfg: &SpectralWindowConfig) -> Result<DopplerProduct> {
    let fs = source.params().frame_rate_hz;
    cfg.validate(fs)?;
    let n = cfg.window_count(source.frame_count());
    if n == 0 {
        return Err(Error::data(format!(
            "stack of {} frames is shorter than one {}-frame window",
            source.frame_count(),
            cfg.window_len
        )));
    }
    let mut maps = Vec::with_capacity(n);
    for i in 0..n {
        let m = analyze_window(source, cfg, i)?;
        log::info!("window {}/{n}", i + 1);
        maps.push(MomentMaps {
            m0: round_f32(&m.m0),
            m2: round_f32(&m.m2),
            top_bin_fraction: round_f32(&m.top_bin_fraction),
            ..m
        });
    }
    Ok(DopplerProduct {
        times_s: (0..n).map(|i| cfg.window_centre_s(i, fs)).collect(),
        maps,
    })
}

pub fn compute_segmentation(doppler: &DopplerProduct, cfg: &SegmentationConfig) -> Result<SegmentationSet> {
    segment(&doppler.m0_series(), cfg)
}

/// Broadening, velocity and flow for one artery mask.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowProduct {
    pub delta_f: Vec<Image<f64>>,
    pub velocity: Vec<Image<f64>>,
    pub saturated: Vec<Mask>,
    pub background_fallbacks: Vec<usize>,
    pub result: FlowResult,
    pub profiles: Option<PhaseProfiles>,
    pub center_px: (f64, f64),
}

pub const PROFILE_SAMPLES: usize = 41;

pub fn compute_flow(doppler: &DopplerProduct, artery_mask: &Mask, cfg: &RunConfig) -> Result<FlowProduct> {
    let (w, h) = doppler.dims();
    if artery_mask.dims() != (w, h) {
        return Err(Error::config(format!(
            "artery mask is {:?} but the moment maps are {:?}",
            artery_mask.dims(),
            (w, h)
        )));
    }
    let b = &cfg.broadening;
    let n = doppler.maps.len();
    let (mut delta_f, mut velocity) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut saturated, mut background_fallbacks) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for m in &doppler.maps {
        let bg = estimate_background(&m.m2, &m.m2_defined, artery_mask, b.ring_inner_px, b.ring_outer_px)?;
        let map = differential_broadening(&m.m2, &m.m2_defined, &bg, artery_mask, &m.top_bin_fraction, b.saturation);
        velocity.push(velocity_from_broadening(&map, &cfg.params).v);
        background_fallbacks.push(bg.fallback_count);
        saturated.push(map.saturation);
        delta_f.push(map.delta_f);
    }
    let center_px = cfg.center(w, h);
    let result = quantify_flow(&velocity, &doppler.times_s, artery_mask, center_px, cfg.pixel_scale()?, &cfg.flow)?;
    let profiles = if result.sections.len() >= 2 {
        Some(systole_diastole_profiles(&result, PROFILE_SAMPLES)?)
    } else {
        None
    };
    let product = FlowProduct {
        delta_f,
        velocity,
        saturated,
        background_fallbacks,
        result,
        profiles,
        center_px,
    };
    Ok(product)
}

fn check_params(cfg: &RunConfig, found: &OpticalParams, what: &str) -> Result<()> {
    let p = &cfg.params;
    let same = p.frame_rate_hz == found.frame_rate_hz
        && p.pixel_pitch_m == found.pixel_pitch_m
        && p.wavelength_m == found.wavelength_m;
    if !same {
        return Err(Error::config(format!(
            "{what} was acquired at {} Hz, {} m pitch, {} m wavelength but the run config says {} Hz, {} m, {} m",
            found.frame_rate_hz, found.pixel_pitch_m, found.wavelength_m, p.frame_rate_hz, p.pixel_pitch_m, p.wavelength_m
        )));
    }
    Ok(())
}

/// Config handed to later stages: the run's settings with the phantom's geometry filled in.
pub fn config_for_phantom(cfg: &RunConfig, truth: &PhantomTruth) -> RunConfig {
    let mut next = cfg.clone();
    if next.geometry.center_px.is_none() {
        next.geometry.center_px = truth.papilla_center_px;
    }
    if next.geometry.papilla_diameter_px.is_none() && next.geometry.pixel_scale_m_per_px.is_none() {
        match truth.papilla_diameter_px {
            Some(d) => next.geometry.papilla_diameter_px = Some(d),
            None => next.geometry.pixel_scale_m_per_px = Some(truth.pixel_scale_m_per_px),
        }
    }
    next
}

pub fn run_phantom(cfg: &RunConfig) -> Result<RunConfig> {
    cfg.validate()?;
    let spec = cfg.phantom_spec();
    let (stack, truth) = generate_phantom(&spec)?;
    io::ensure_dir(&cfg.paths.workdir)?;
    io::write_stack(&cfg.input_path(), &stack)?;
    outputs::write_truth(&cfg.paths.workdir.join("truth"), &spec, &truth)?;
    let next = config_for_phantom(cfg, &truth);
    next.store(&cfg.stage_dir("phantom"))?;
    Ok(next)
}

fn open_stack(cfg: &RunConfig) -> Result<crate::optics::InterferogramStack> {
    let path = cfg.input_path();
    io::require_file(&path, "interferogram container")?;
    let header = io::read_header(&path)?;
    check_params(cfg, &header.apply_to(&cfg.params), "the interferogram stack")?;
    io::read_stack(&path, &cfg.params)
}

pub fn run_render(cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let stack = open_stack(cfg)?;
    let renderer = LazyRenderer::new(&stack, cfg.params.propagation_distance_m)?;
    let dir = cfg.stage_dir("render");
    io::ensure_dir(&dir)?;
    io::raw::write_hologram_stack(&dir.join(outputs::HOLOGRAM_FILE), &renderer)?;
    cfg.store(&dir)
}

pub fn run_doppler(cfg: &RunConfig) -> Result<DopplerProduct> {
    cfg.validate()?;
    let path = cfg.stage_dir("render").join(outputs::HOLOGRAM_FILE);
    io::require_file(&path, "rendered hologram stack")?;
    let source = io::raw::RawHologramSource::open(&path)?;
    check_params(cfg, source.params(), "the rendered hologram stack")?;
    let doppler = compute_doppler(&source, &cfg.spectral)?;
    outputs::write_doppler(&cfg.stage_dir("doppler"), &doppler, cfg)?;
    Ok(doppler)
}

pub fn run_segment(cfg: &RunConfig) -> Result<SegmentationSet> {
    cfg.validate()?;
    let doppler = read_doppler(&cfg.stage_dir("doppler"), cfg)?;
    let set = compute_segmentation(&doppler, &cfg.segmentation)?;
    outputs::write_segmentation(&cfg.stage_dir("segment"), &set, cfg)?;
    Ok(set)
}

pub fn run_flow(cfg: &RunConfig) -> Result<FlowProduct> {
    cfg.validate()?;
    let doppler = read_doppler(&cfg.stage_dir("doppler"), cfg)?;
    let seg = read_segmentation(&cfg.stage_dir("segment"))?;
    let product = compute_flow(&doppler, &seg.artery_mask, cfg)?;
    outputs::write_flow(&cfg.stage_dir("flow"), &product, &doppler, &seg, cfg)?;
    Ok(product)
}

/// Render, Doppler, segmentation and flow in memory; writes the same stage
/// outputs as the separate commands except the hologram stack.
pub fn run_all(cfg: &RunConfig) -> Result<FlowProduct> {
    cfg.validate()?;
    let stack = open_stack(cfg)?;
    let renderer = LazyRenderer::new(&stack, cfg.params.propagation_distance_m)?;
    let doppler = compute_doppler(&renderer, &cfg.spectral)?;
    outputs::write_doppler(&cfg.stage_dir("doppler"), &doppler, cfg)?;
    let set = compute_segmentation(&doppler, &cfg.segmentation)?;
    outputs::write_segmentation(&cfg.stage_dir("segment"), &set, cfg)?;
    let seg = read_segmentation(&cfg.stage_dir("segment"))?;
    let product = compute_flow(&doppler, &set.artery.mask, cfg)?;
    outputs::write_flow(&cfg.stage_dir("flow"), &product, &doppler, &seg, cfg)?;
    Ok(product)
}

/// Human-readable summary of a finished flow stage; also written to `report/report.txt`.
pub fn run_report(cfg: &RunConfig) -> Result<String> {
    let path = cfg.stage_dir("flow").join(outputs::SUMMARY_FILE);
    io::require_file(&path, "flow summary")?;
    let summary: FlowSummary = io::read_json(&path)?;
    let text = outputs::format_report(&summary);
    let dir = cfg.stage_dir("report");
    cfg.store(&dir)?;
    std::fs::write(dir.join("report.txt"), &text).map_err(|e| Error::io(dir.join("report.txt"), e))?;
    Ok(text)
}
