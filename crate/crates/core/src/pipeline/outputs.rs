//! File layout of each stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DopplerProduct, FlowProduct, RunConfig};
use crate::doppler::{MomentMaps, SpectralWindowConfig};
use crate::error::{Error, Result};
use crate::flow::{fit_fixed_shape, shape_map, ProfileBand, M3S_TO_UL_MIN};
use crate::image::{Image, Mask};
use crate::io::figures::{self, Plot, BLACK, BLUE, GREEN, GREY, RED};
use crate::io::{self, raw};
use crate::params::OpticalParams;
use crate::phantom::{PhantomSpec, PhantomTruth};
use crate::segmentation::SegmentationSet;

pub const HOLOGRAM_FILE: &str = "hologram.f32";
pub const SUMMARY_FILE: &str = "flow.json";

#[derive(Serialize)]
struct TruthFile<'a> {
    spec: &'a PhantomSpec,
    truth: &'a PhantomTruth,
}

pub fn write_truth(dir: &Path, spec: &PhantomSpec, truth: &PhantomTruth) -> Result<()> {
    io::ensure_dir(dir)?;
    io::write_json(&dir.join("truth.json"), &TruthFile { spec, truth })?;
    raw::write_mask(&dir.join("artery_mask.f32"), &truth.artery_raster, json!({}))?;
    raw::write_mask(&dir.join("vessel_mask.f32"), &truth.vessel_raster, json!({}))?;
    if let Some(p) = &truth.papilla_mask {
        raw::write_mask(&dir.join("papilla_mask.f32"), p, json!({}))?;
    }
    raw::write_image_series(&dir.join("delta_f.f32"), &truth.delta_f_field, json!({"unit": "Hz", "times_s": truth.window_times_s}))?;
    raw::write_image_series(&dir.join("velocity.f32"), &truth.velocity_field, json!({"unit": "m/s", "times_s": truth.window_times_s}))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DopplerMeta {
    spectral: SpectralWindowConfig,
    params: OpticalParams,
    times_s: Vec<f64>,
    window_start_frames: Vec<usize>,
}

const DOPPLER_FIELDS: [&str; 4] = ["m0", "m2", "m2_defined", "top_bin_fraction"];

pub fn write_doppler(dir: &Path, d: &DopplerProduct, cfg: &RunConfig) -> Result<()> {
    io::ensure_dir(dir)?;
    let meta = serde_json::to_value(DopplerMeta {
        spectral: cfg.spectral.clone(),
        params: cfg.params,
        times_s: d.times_s.clone(),
        window_start_frames: d.maps.iter().map(|m| m.window_start_frame).collect(),
    })
    .expect("plain data serializes");
    let pick = |k: usize| -> Vec<Image<f64>> {
        d.maps
            .iter()
            .map(|m| match k {
                0 => m.m0.clone(),
                1 => m.m2.clone(),
                2 => m.m2_defined.map(|&b| if b { 1.0 } else { 0.0 }),
                _ => m.top_bin_fraction.clone(),
            })
            .collect()
    };
    for (k, name) in DOPPLER_FIELDS.iter().enumerate() {
        raw::write_image_series(&dir.join(format!("{name}.f32")), &pick(k), meta.clone())?;
    }
    figures::save_gray(&dir.join("mean_m0.png"), &crate::doppler::time_average(&d.m0_series()))?;
    cfg.store(dir)
}

pub fn read_doppler(dir: &Path, cfg: &RunConfig) -> Result<DopplerProduct> {
    let mut fields = Vec::new();
    let mut meta: Option<DopplerMeta> = None;
    for name in DOPPLER_FIELDS {
        let path = dir.join(format!("{name}.f32"));
        io::require_file(&path, "Doppler moment maps")?;
        let (side, images) = raw::read_image_series(&path)?;
        let m: DopplerMeta = serde_json::from_value(side.meta)
            .map_err(|e| Error::data(format!("{}: bad metadata: {e}", path.display())))?;
        if meta.as_ref().is_some_and(|prev| *prev != m) {
            return Err(Error::data(format!("{} disagrees with the other moment maps", path.display())));
        }
        meta = Some(m);
        fields.push(images);
    }
    let meta = meta.expect("four fields were read");
    if meta.spectral != cfg.spectral {
        return Err(Error::config(format!(
            "moment maps in {} were computed with a different spectral window configuration",
            dir.display()
        )));
    }
    if meta.params.frame_rate_hz != cfg.params.frame_rate_hz {
        return Err(Error::config(format!(
            "moment maps were computed at {} Hz but the run config says {} Hz",
            meta.params.frame_rate_hz, cfg.params.frame_rate_hz
        )));
    }
    let n = meta.times_s.len();
    if fields.iter().any(|f| f.len() != n) || n == 0 {
        return Err(Error::data(format!("{}: moment maps and window times disagree", dir.display())));
    }
    let mut it = fields.into_iter();
    let (m0, m2, def, top) = (it.next().unwrap(), it.next().unwrap(), it.next().unwrap(), it.next().unwrap());
    let maps = (0..n)
        .map(|i| MomentMaps {
            window_index: i,
            window_start_frame: meta.window_start_frames[i],
            m0: m0[i].clone(),
            m2: m2[i].clone(),
            m2_defined: def[i].map(|&v| v != 0.0),
            top_bin_fraction: top[i].clone(),
        })
        .collect();
    Ok(DopplerProduct {
        maps,
        times_s: meta.times_s,
    })
}

pub fn write_segmentation(dir: &Path, set: &SegmentationSet, cfg: &RunConfig) -> Result<()> {
    io::ensure_dir(dir)?;
    let none = json!({});
    raw::write_image(&dir.join("mean_m0.f32"), &set.mean_m0, none.clone())?;
    raw::write_image(&dir.join("flatfielded.f32"), &set.flatfielded, none.clone())?;
    raw::write_image(&dir.join("vesselness.f32"), &set.vesselness, none.clone())?;
    raw::write_image(&dir.join("correlation.f32"), &set.correlation.corr, none.clone())?;
    raw::write_mask(&dir.join("vessel_mask.f32"), &set.vessel_mask, none.clone())?;
    raw::write_mask(&dir.join("artery_mask.f32"), &set.artery.mask, none.clone())?;
    raw::write_image(&dir.join("labels.f32"), &set.artery.labels.map(|&l| l as f64), none)?;
    io::write_json(&dir.join("components.json"), &json!({ "sizes_px": set.artery.sizes }))?;
    figures::save_gray(&dir.join("flatfielded.png"), &set.flatfielded)?;
    figures::save_gray(&dir.join("vesselness.png"), &set.vesselness)?;
    figures::save_signed(&dir.join("correlation.png"), &set.correlation.corr)?;
    figures::save_overlay(
        &dir.join("overlay.png"),
        &set.flatfielded,
        &[(&set.vessel_mask, BLUE), (&set.artery.mask, RED)],
        0.45,
    )?;
    cfg.store(dir)
}

/// Segmentation products the flow stage needs.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationFiles {
    pub flatfielded: Image<f64>,
    pub vessel_mask: Mask,
    pub artery_mask: Mask,
}

pub fn read_segmentation(dir: &Path) -> Result<SegmentationFiles> {
    let get = |name: &str| {
        let p = dir.join(name);
        io::require_file(&p, "segmentation output")?;
        Ok::<_, Error>(p)
    };
    let files = SegmentationFiles {
        flatfielded: raw::read_image(&get("flatfielded.f32")?)?,
        vessel_mask: raw::read_mask(&get("vessel_mask.f32")?)?,
        artery_mask: raw::read_mask(&get("artery_mask.f32")?)?,
    };
    if files.vessel_mask.dims() != files.artery_mask.dims() || files.flatfielded.dims() != files.artery_mask.dims() {
        return Err(Error::data(format!("{}: segmentation outputs differ in size", dir.display())));
    }
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub window: usize,
    pub time_s: f64,
    pub total_flow_ul_min: f64,
    pub smoothed_ul_min: f64,
    pub valid_sections: usize,
    pub invalid_sections: usize,
    pub saturated_pixels: usize,
    pub background_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionRow {
    pub window: usize,
    pub section: usize,
    pub center_x_px: f64,
    pub center_y_px: f64,
    pub orientation_deg: f64,
    pub valid: bool,
    pub vmax_m_s: f64,
    pub radius_px: f64,
    pub radius_m: f64,
    pub area_m2: f64,
    pub flow_ul_min: f64,
    pub rms_residual_m_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub u: f64,
    pub systole_mean_m_s: f64,
    pub systole_sd_m_s: f64,
    pub systole_fit_m_s: f64,
    pub diastole_mean_m_s: f64,
    pub diastole_sd_m_s: f64,
    pub diastole_fit_m_s: f64,
}

/// Contents of `flow.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub windows: usize,
    pub sections: usize,
    pub center_px: (f64, f64),
    pub pixel_scale_m_per_px: f64,
    pub mean_total_flow_ul_min: f64,
    pub systolic_flow_ul_min: f64,
    pub diastolic_flow_ul_min: f64,
    pub systolic_window: usize,
    pub diastolic_window: usize,
    pub systolic_time_s: f64,
    pub diastolic_time_s: f64,
    pub resistivity_index: f64,
    pub series: Vec<SeriesRow>,
    pub section_rows: Vec<SectionRow>,
}

/// Peak of the parabola best matching a band mean on the normalized axis.
fn band_fit(axis: &[f64], band: &ProfileBand) -> Vec<f64> {
    let spacing = if axis.len() > 1 { axis[1] - axis[0] } else { 1.0 };
    let f = fit_fixed_shape(&band.mean, spacing, 0.0, 1.0);
    let vmax = if f.valid { f.vmax } else { 0.0 };
    axis.iter().map(|u| vmax * (1.0 - u * u).max(0.0)).collect()
}

pub fn write_flow(dir: &Path, p: &FlowProduct, d: &DopplerProduct, seg: &SegmentationFiles, cfg: &RunConfig) -> Result<()> {
    io::ensure_dir(dir)?;
    let r = &p.result;
    let meta = json!({ "times_s": d.times_s });
    raw::write_image_series(&dir.join("delta_f.f32"), &p.delta_f, meta.clone())?;
    raw::write_image_series(&dir.join("velocity.f32"), &p.velocity, meta)?;

    let series: Vec<SeriesRow> = r
        .series
        .iter()
        .map(|s| SeriesRow {
            window: s.window_index,
            time_s: s.time_s,
            total_flow_ul_min: s.total_flow_ul_min,
            smoothed_ul_min: r.smoothed_ul_min[s.window_index],
            valid_sections: s.n_valid_sections,
            invalid_sections: s.n_invalid_sections,
            saturated_pixels: p.saturated[s.window_index].count(),
            background_fallbacks: p.background_fallbacks[s.window_index],
        })
        .collect();
    let section_rows: Vec<SectionRow> = r
        .sections
        .iter()
        .flatten()
        .map(|s| SectionRow {
            window: s.window_index,
            section: s.seed_index,
            center_x_px: s.center_px.0,
            center_y_px: s.center_px.1,
            orientation_deg: s.orientation_rad.to_degrees(),
            valid: s.is_valid(),
            vmax_m_s: s.fit.vmax,
            radius_px: s.fit.radius_px,
            radius_m: s.fitted_radius_m,
            area_m2: s.area_m2,
            flow_ul_min: s.volume_rate_m3s * M3S_TO_UL_MIN,
            rms_residual_m_s: s.fit.rms_residual,
        })
        .collect();
    io::write_csv(&dir.join("flow_series.csv"), &series)?;
    io::write_csv(&dir.join("sections.csv"), &section_rows)?;

    let summary = FlowSummary {
        windows: r.series.len(),
        sections: r.sections.first().map_or(0, |s| s.len()),
        center_px: p.center_px,
        pixel_scale_m_per_px: r.pixel_scale_m_per_px,
        mean_total_flow_ul_min: r.mean_total_flow_ul_min,
        systolic_flow_ul_min: r.systolic_flow_ul_min,
        diastolic_flow_ul_min: r.diastolic_flow_ul_min,
        systolic_window: r.systolic_window,
        diastolic_window: r.diastolic_window,
        systolic_time_s: d.times_s[r.systolic_window],
        diastolic_time_s: d.times_s[r.diastolic_window],
        resistivity_index: r.resistivity_index,
        series,
        section_rows,
    };
    io::write_json(&dir.join(SUMMARY_FILE), &summary)?;

    let raw_pts: Vec<(f64, f64)> = summary.series.iter().filter(|s| s.valid_sections > 0).map(|s| (s.time_s, s.total_flow_ul_min)).collect();
    let smooth_pts: Vec<(f64, f64)> = summary.series.iter().filter(|s| s.valid_sections > 0).map(|s| (s.time_s, s.smoothed_ul_min)).collect();
    let mut plot = Plot::fitted(640, 360, raw_pts.iter().chain(&smooth_pts).copied().chain([(raw_pts[0].0, 0.0)]));
    plot.hline(summary.mean_total_flow_ul_min, GREY)
        .line(&raw_pts, BLUE)
        .line(&smooth_pts, BLACK)
        .marker(summary.systolic_time_s, summary.systolic_flow_ul_min, RED)
        .marker(summary.diastolic_time_s, summary.diastolic_flow_ul_min, GREEN);
    plot.save(&dir.join("flow_series.png"))?;

    if let Some(ph) = &p.profiles {
        let sys_fit = band_fit(&ph.axis, &ph.systole);
        let dia_fit = band_fit(&ph.axis, &ph.diastole);
        let rows: Vec<ProfileRow> = (0..ph.axis.len())
            .map(|k| ProfileRow {
                u: ph.axis[k],
                systole_mean_m_s: ph.systole.mean[k],
                systole_sd_m_s: ph.systole.sd[k],
                systole_fit_m_s: sys_fit[k],
                diastole_mean_m_s: ph.diastole.mean[k],
                diastole_sd_m_s: ph.diastole.sd[k],
                diastole_fit_m_s: dia_fit[k],
            })
            .collect();
        io::write_csv(&dir.join("profiles.csv"), &rows)?;
        let lo = |b: &ProfileBand| b.mean.iter().zip(&b.sd).map(|(m, s)| m - s).collect::<Vec<_>>();
        let hi = |b: &ProfileBand| b.mean.iter().zip(&b.sd).map(|(m, s)| m + s).collect::<Vec<_>>();
        let pts = |v: &[f64]| ph.axis.iter().copied().zip(v.iter().copied()).collect::<Vec<_>>();
        let (sl, sh, dl, dh) = (lo(&ph.systole), hi(&ph.systole), lo(&ph.diastole), hi(&ph.diastole));
        let mut plot = Plot::fitted(480, 360, pts(&sh).into_iter().chain(pts(&dl)).chain([(0.0, 0.0)]));
        plot.band(&ph.axis, &sl, &sh, BLUE)
            .band(&ph.axis, &dl, &dh, GREEN)
            .line(&pts(&ph.systole.mean), BLUE)
            .line(&pts(&ph.diastole.mean), GREEN)
            .line(&pts(&sys_fit), RED)
            .line(&pts(&dia_fit), RED)
            .hline(0.0, GREY);
        plot.save(&dir.join("profiles.png"))?;
    }

    let (w, h) = seg.artery_mask.dims();
    let (cx, cy) = p.center_px;
    let f = &cfg.flow;
    let annulus = Mask::from_fn(w, h, |x, y| {
        let d = (x as f64 - cx).hypot(y as f64 - cy);
        (d - f.circle_radius_px).abs() <= f.circle_width_px / 2.0
    });
    let section_px = Mask::from_fn(w, h, |x, y| {
        r.sections.first().is_some_and(|s| {
            s.iter().any(|a| (x as f64 - a.center_px.0).hypot(y as f64 - a.center_px.1) <= 1.5)
        })
    });
    figures::save_overlay(
        &dir.join("overlay.png"),
        &seg.flatfielded,
        &[(&seg.vessel_mask, BLUE), (&seg.artery_mask, RED), (&annulus, GREEN), (&section_px, BLACK)],
        0.45,
    )?;
    figures::save_signed(&dir.join("velocity_mean.png"), &shape_map(&p.velocity))?;
    cfg.store(dir)
}

pub fn format_report(s: &FlowSummary) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k:<28}{v}\n"));
    line("windows", s.windows.to_string());
    line("artery sections", s.sections.to_string());
    line("pixel scale", format!("{:.3} um/px", s.pixel_scale_m_per_px * 1e6));
    line("mean total flow", format!("{:.2} uL/min", s.mean_total_flow_ul_min));
    line(
        "systolic flow",
        format!("{:.2} uL/min (window {}, {:.3} s)", s.systolic_flow_ul_min, s.systolic_window, s.systolic_time_s),
    );
    line(
        "diastolic flow",
        format!("{:.2} uL/min (window {}, {:.3} s)", s.diastolic_flow_ul_min, s.diastolic_window, s.diastolic_time_s),
    );
    line("resistivity index", format!("{:.3}", s.resistivity_index));
    let invalid: usize = s.series.iter().map(|r| r.invalid_sections).sum();
    let saturated: usize = s.series.iter().map(|r| r.saturated_pixels).sum();
    let fallbacks: usize = s.series.iter().map(|r| r.background_fallbacks).sum();
    line("invalid section fits", invalid.to_string());
    line("saturated pixel-windows", saturated.to_string());
    line("background fallbacks", fallbacks.to_string());
    out.push_str("\nsection  orientation  radius      mean flow\n");
    let mut seeds: Vec<usize> = s.section_rows.iter().map(|r| r.section).collect();
    seeds.sort_unstable();
    seeds.dedup();
    for k in seeds {
        let rows: Vec<&SectionRow> = s.section_rows.iter().filter(|r| r.section == k && r.valid).collect();
        let Some(first) = s.section_rows.iter().find(|r| r.section == k) else { continue };
        let mean_q = rows.iter().map(|r| r.flow_ul_min).sum::<f64>() / rows.len().max(1) as f64;
        let radius = rows.first().map_or(0.0, |r| r.radius_m * 1e6);
        out.push_str(&format!(
            "{k:>7}  {:>9.1} deg  {radius:>6.1} um  {mean_q:>8.2} uL/min\n",
            first.orientation_deg
        ));
    }
    out
}
