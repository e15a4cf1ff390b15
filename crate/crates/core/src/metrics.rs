//! Quantitative evaluation: point-spread-function extraction with
//! lateral/axial FWHM, and per-stage timing statistics.
//!
//! FWHM is measured on amplitude (pre-log) profiles — half maximum is an
//! amplitude-domain concept. Reports record the display dynamic range
//! alongside so there is no ambiguity about the measurement domain.

use crate::frame::{BModeImage, EnvelopeFrame};
use crate::geometry::{LayoutKind, ScanlineLayout};
use crate::{Error, Result};

/// One PSF measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfEntry {
    pub expected_depth_mm: f64,
    pub peak_lateral_mm: f64,
    pub peak_depth_mm: f64,
    pub lateral_fwhm_mm: f64,
    pub axial_fwhm_mm: f64,
    /// Set when a half-maximum crossing is missing on one side (peak at a
    /// boundary) or the peak strays more than 2 mm from the expected
    /// depth; flagged entries are excluded from aggregates.
    pub flagged: bool,
}

/// PSF measurements across depths plus the display dynamic range they are
/// reported under (the measurement itself is amplitude-domain).
#[derive(Debug, Clone, PartialEq)]
pub struct PsfReport {
    pub entries: Vec<PsfEntry>,
    pub display_dynamic_range_db: f64,
}

impl PsfReport {
    /// CSV with the documented fixed schema.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("depth_mm,lateral_fwhm_mm,axial_fwhm_mm,flagged\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.expected_depth_mm, e.lateral_fwhm_mm, e.axial_fwhm_mm, e.flagged
            ));
        }
        out
    }

    pub fn unflagged(&self) -> impl Iterator<Item = &PsfEntry> {
        self.entries.iter().filter(|e| !e.flagged)
    }
}

/// Measure the PSF of an amplitude grid around `expected_depth_mm`.
///
/// `value(lateral, axial)` indexes the grid; origins locate index 0 of
/// each axis in millimeters. The global maximum is taken as the peak,
/// profiles through it are extracted along both axes, and the FWHM is the
/// distance between the linearly interpolated half-maximum crossings.
#[allow(clippy::too_many_arguments)]
pub fn measure_psf_grid<F>(
    value: F,
    lateral_count: usize,
    axial_count: usize,
    lateral_spacing_mm: f64,
    axial_spacing_mm: f64,
    lateral_origin_mm: f64,
    axial_origin_mm: f64,
    expected_depth_mm: f64,
) -> Result<PsfEntry>
where
    F: Fn(usize, usize) -> f32,
{
    if lateral_count < 2 || axial_count < 2 {
        return Err(Error::Parameter("PSF grid needs at least 2x2 samples".into()));
    }

    let mut peak = (0usize, 0usize);
    let mut peak_value = f32::MIN;
    for il in 0..lateral_count {
        for ia in 0..axial_count {
            let v = value(il, ia);
            if v > peak_value {
                peak_value = v;
                peak = (il, ia);
            }
        }
    }
    if peak_value <= 0.0 {
        return Err(Error::Structure("grid has no positive peak".into()));
    }

    let lateral: Vec<f32> = (0..lateral_count).map(|il| value(il, peak.1)).collect();
    let axial: Vec<f32> = (0..axial_count).map(|ia| value(peak.0, ia)).collect();

    let lateral_width = fwhm_samples(&lateral, peak.0);
    let axial_width = fwhm_samples(&axial, peak.1);

    let peak_depth_mm = axial_origin_mm + peak.1 as f64 * axial_spacing_mm;
    let mut flagged = (peak_depth_mm - expected_depth_mm).abs() > 2.0;
    flagged |= lateral_width.is_none() || axial_width.is_none();

    Ok(PsfEntry {
        expected_depth_mm,
        peak_lateral_mm: lateral_origin_mm + peak.0 as f64 * lateral_spacing_mm,
        peak_depth_mm,
        lateral_fwhm_mm: lateral_width.unwrap_or(0.0) * lateral_spacing_mm,
        axial_fwhm_mm: axial_width.unwrap_or(0.0) * axial_spacing_mm,
        flagged,
    })
}

/// Width of the half-maximum interval around `peak`, in samples; `None`
/// when a crossing is missing on either side.
fn fwhm_samples(profile: &[f32], peak: usize) -> Option<f64> {
    let half = profile[peak] / 2.0;

    let mut left = None;
    for i in (0..peak).rev() {
        if profile[i] < half {
            // Crossing between i and i+1.
            let frac = (half - profile[i]) / (profile[i + 1] - profile[i]);
            left = Some(i as f64 + frac as f64);
            break;
        }
    }
    let mut right = None;
    for i in peak + 1..profile.len() {
        if profile[i] < half {
            let frac = (profile[i - 1] - half) / (profile[i - 1] - profile[i]);
            right = Some((i - 1) as f64 + frac as f64);
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Some(r - l),
        _ => None,
    }
}

/// Measure the PSF of an envelope frame in scanline space. Linear layouts
/// only: the lateral axis is the (uniform) line grid, the axial axis the
/// depth sampling of the frame.
pub fn measure_psf_envelope(
    env: &EnvelopeFrame,
    layout: &ScanlineLayout,
    expected_depth_mm: f64,
) -> Result<PsfEntry> {
    if !matches!(layout.kind, LayoutKind::Linear) {
        return Err(Error::Parameter(
            "envelope-space PSF measurement requires a linear layout".into(),
        ));
    }
    if env.line_count_x != layout.line_count_x || env.line_count_y != 1 {
        return Err(Error::Structure(
            "envelope frame does not match the layout's line grid".into(),
        ));
    }
    let first = layout.scanlines[0].origin_mm[0];
    let last = layout.scanlines[layout.line_count_x - 1].origin_mm[0];
    let lateral_spacing = (last - first) / (layout.line_count_x as f64 - 1.0);
    let axial_spacing = layout.speed_of_sound_m_s / (2.0 * env.sample_frequency_hz) * 1e3;
    measure_psf_grid(
        |il, ia| env.samples[il * env.samples_per_line + ia],
        env.line_count_x,
        env.samples_per_line,
        lateral_spacing,
        axial_spacing,
        first,
        0.0,
        expected_depth_mm,
    )
}

/// Measure the PSF of a 2D scan-converted image (x lateral, z axial).
pub fn measure_psf_image(image: &BModeImage, expected_depth_mm: f64) -> Result<PsfEntry> {
    if image.ndims() != 2 {
        return Err(Error::Parameter("image PSF measurement is 2D only".into()));
    }
    measure_psf_grid(
        |il, ia| image.intensities[ia * image.dims[0] + il],
        image.dims[0],
        image.dims[2],
        image.spacing_mm,
        image.spacing_mm,
        image.origin_mm[0],
        image.origin_mm[2],
        expected_depth_mm,
    )
}

/// Run `render` for each depth and collect the entries into a report.
pub fn fwhm_sweep<F>(
    depths_mm: &[f64],
    display_dynamic_range_db: f64,
    mut render: F,
) -> Result<PsfReport>
where
    F: FnMut(f64) -> Result<PsfEntry>,
{
    let mut entries = Vec::with_capacity(depths_mm.len());
    for depth in depths_mm {
        entries.push(render(*depth)?);
    }
    Ok(PsfReport {
        entries,
        display_dynamic_range_db,
    })
}

/// Per-stage timing samples for one pipeline run.
#[derive(Debug, Clone)]
pub struct StageTimings {
    pub stage: String,
    pub seconds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageStats {
    pub stage: String,
    pub mean_s: f64,
    pub std_s: f64,
}

/// One row of the timing table: a scanline configuration with per-stage
/// mean/std plus the per-frame total and the run's wall clock. Per-node
/// sums and wall-clock totals are reported separately; they differ when
/// stages overlap.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub config: String,
    pub frames: usize,
    pub stages: Vec<StageStats>,
    pub total: StageStats,
    pub wall_clock_s: f64,
}

/// Minimum timed frames (after warm-up) for a statistics row.
pub const MIN_TIMED_FRAMES: usize = 30;

/// Reduce per-stage samples to mean/std, excluding `warmup` leading frames.
pub fn bench_stats(
    config: &str,
    stages: &[StageTimings],
    wall_clock_s: f64,
    warmup: usize,
) -> Result<BenchRow> {
    if stages.is_empty() {
        return Err(Error::Parameter("no stages to summarize".into()));
    }
    let frames = stages[0].seconds.len();
    for s in stages {
        if s.seconds.len() != frames {
            return Err(Error::Structure(format!(
                "stage {} has {} samples, expected {}",
                s.stage,
                s.seconds.len(),
                frames
            )));
        }
    }
    let timed = frames.saturating_sub(warmup);
    if timed < MIN_TIMED_FRAMES {
        return Err(Error::Parameter(format!(
            "need at least {MIN_TIMED_FRAMES} timed frames, have {timed} \
             ({frames} total, {warmup} warm-up)"
        )));
    }

    let stats = |samples: &[f64], stage: &str| -> StageStats {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        StageStats {
            stage: stage.to_string(),
            mean_s: mean,
            std_s: var.sqrt(),
        }
    };

    let mut per_stage = Vec::with_capacity(stages.len());
    let mut totals = vec![0.0f64; timed];
    for s in stages {
        let samples = &s.seconds[warmup..];
        per_stage.push(stats(samples, &s.stage));
        for (t, v) in totals.iter_mut().zip(samples) {
            *t += v;
        }
    }
    let total = stats(&totals, "total");

    Ok(BenchRow {
        config: config.to_string(),
        frames: timed,
        stages: per_stage,
        total,
        wall_clock_s,
    })
}

/// Render rows as the timing CSV: one row per scanline configuration,
/// columns beamformer, envelope, log compression, scan conversion, total
/// (each mean and std, milliseconds), then the wall clock.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "config,frames,beamformer_mean_ms,beamformer_std_ms,envelope_mean_ms,envelope_std_ms,\
         log_compression_mean_ms,log_compression_std_ms,scan_conversion_mean_ms,\
         scan_conversion_std_ms,total_mean_ms,total_std_ms,wall_clock_ms\n",
    );
    for row in rows {
        let find = |name: &str| -> (f64, f64) {
            row.stages
                .iter()
                .find(|s| s.stage == name)
                .map(|s| (s.mean_s * 1e3, s.std_s * 1e3))
                .unwrap_or((f64::NAN, f64::NAN))
        };
        let (bf_m, bf_s) = find("beamformer");
        let (env_m, env_s) = find("envelope");
        let (log_m, log_s) = find("log_compression");
        let (sc_m, sc_s) = find("scan_conversion");
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            row.config,
            row.frames,
            bf_m,
            bf_s,
            env_m,
            env_s,
            log_m,
            log_s,
            sc_m,
            sc_s,
            row.total.mean_s * 1e3,
            row.total.std_s * 1e3,
            row.wall_clock_s * 1e3,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_grid(
        lateral: usize,
        axial: usize,
        spacing: f64,
        sigma_lat_mm: f64,
        sigma_ax_mm: f64,
        amplitude: f32,
    ) -> Vec<f32> {
        let cl = (lateral / 2) as f64 * spacing;
        let ca = (axial / 2) as f64 * spacing;
        let mut grid = vec![0.0f32; lateral * axial];
        for il in 0..lateral {
            for ia in 0..axial {
                let dl = il as f64 * spacing - cl;
                let da = ia as f64 * spacing - ca;
                let v = (-dl * dl / (2.0 * sigma_lat_mm * sigma_lat_mm)
                    - da * da / (2.0 * sigma_ax_mm * sigma_ax_mm))
                    .exp();
                grid[il * axial + ia] = amplitude * v as f32;
            }
        }
        grid
    }

    fn measure(grid: &[f32], lateral: usize, axial: usize, spacing: f64) -> PsfEntry {
        measure_psf_grid(
            |il, ia| grid[il * axial + ia],
            lateral,
            axial,
            spacing,
            spacing,
            0.0,
            0.0,
            (axial / 2) as f64 * spacing,
        )
        .unwrap()
    }

    #[test]
    fn gaussian_blob_fwhm_matches_analytic_value() {
        let spacing = 0.05;
        let grid = gaussian_grid(201, 201, spacing, 0.4, 0.25, 1.0);
        let entry = measure(&grid, 201, 201, spacing);
        // FWHM = 2 sqrt(2 ln 2) sigma = 0.94193 mm for sigma 0.4.
        let expected_lat = 2.0 * (2.0f64 * std::f64::consts::LN_2).sqrt() * 0.4;
        assert!((expected_lat - 0.9419).abs() < 1e-3);
        assert!(
            (entry.lateral_fwhm_mm - expected_lat).abs() <= spacing,
            "lateral {} vs {}",
            entry.lateral_fwhm_mm,
            expected_lat
        );
        let expected_ax = 2.0 * (2.0f64 * std::f64::consts::LN_2).sqrt() * 0.25;
        assert!((entry.axial_fwhm_mm - expected_ax).abs() <= spacing);
        assert!(!entry.flagged);
    }

    #[test]
    fn symmetric_profile_measures_symmetrically() {
        let spacing = 0.1;
        let grid = gaussian_grid(101, 101, spacing, 0.5, 0.5, 2.0);
        let entry = measure(&grid, 101, 101, spacing);
        let mirrored: Vec<f32> = {
            let mut m = vec![0.0f32; grid.len()];
            for il in 0..101 {
                for ia in 0..101 {
                    m[(100 - il) * 101 + ia] = grid[il * 101 + ia];
                }
            }
            m
        };
        let entry_m = measure(&mirrored, 101, 101, spacing);
        assert!((entry.lateral_fwhm_mm - entry_m.lateral_fwhm_mm).abs() < 1e-9);
    }

    #[test]
    fn fwhm_invariant_under_amplitude_scaling() {
        let spacing = 0.07;
        let grid = gaussian_grid(81, 81, spacing, 0.3, 0.3, 1.0);
        // Power-of-two scaling commutes with rounding: exact invariance.
        let scaled: Vec<f32> = grid.iter().map(|v| v * 8.0).collect();
        let a = measure(&grid, 81, 81, spacing);
        let b = measure(&scaled, 81, 81, spacing);
        assert_eq!(a.lateral_fwhm_mm, b.lateral_fwhm_mm);
        assert_eq!(a.axial_fwhm_mm, b.axial_fwhm_mm);
        // Arbitrary scales agree to float rounding.
        let scaled: Vec<f32> = grid.iter().map(|v| v * 7.3).collect();
        let c = measure(&scaled, 81, 81, spacing);
        assert!((a.lateral_fwhm_mm - c.lateral_fwhm_mm).abs() < 1e-6);
        assert!((a.axial_fwhm_mm - c.axial_fwhm_mm).abs() < 1e-6);
    }

    #[test]
    fn pixel_width_times_spacing_equals_mm_width() {
        // Same grid measured at two spacings: the mm widths scale exactly
        // with the spacing.
        let grid = gaussian_grid(81, 81, 0.1, 0.5, 0.5, 1.0);
        let a = measure(&grid, 81, 81, 0.1);
        let entry_double = measure_psf_grid(
            |il, ia| grid[il * 81 + ia],
            81,
            81,
            0.2,
            0.2,
            0.0,
            0.0,
            (81 / 2) as f64 * 0.2,
        )
        .unwrap();
        assert!((entry_double.lateral_fwhm_mm - 2.0 * a.lateral_fwhm_mm).abs() < 1e-12);
    }

    #[test]
    fn peak_at_boundary_is_flagged() {
        let axial = 64;
        let lateral = 32;
        let mut grid = vec![0.0f32; lateral * axial];
        // Peak on the first lateral line: no left crossing.
        for (ia, v) in grid.iter_mut().enumerate().take(axial) {
            let da = ia as f64 - 32.0;
            *v = (-da * da / 50.0).exp() as f32;
        }
        let entry = measure_psf_grid(
            |il, ia| grid[il * axial + ia],
            lateral,
            axial,
            0.1,
            0.1,
            0.0,
            0.0,
            3.2,
        )
        .unwrap();
        assert!(entry.flagged);
    }

    #[test]
    fn off_depth_peak_is_flagged() {
        let grid = gaussian_grid(41, 41, 0.1, 0.3, 0.3, 1.0);
        let entry = measure_psf_grid(
            |il, ia| grid[il * 41 + ia],
            41,
            41,
            0.1,
            0.1,
            0.0,
            0.0,
            20.0, // peak actually sits at 2.0 mm
        )
        .unwrap();
        assert!(entry.flagged);
    }

    #[test]
    fn sweep_produces_one_row_per_depth_and_csv_schema() {
        let report = fwhm_sweep(&[10.0, 20.0], 50.0, |depth| {
            Ok(PsfEntry {
                expected_depth_mm: depth,
                peak_lateral_mm: 0.0,
                peak_depth_mm: depth,
                lateral_fwhm_mm: 0.5,
                axial_fwhm_mm: 0.2,
                flagged: false,
            })
        })
        .unwrap();
        assert_eq!(report.entries.len(), 2);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "depth_mm,lateral_fwhm_mm,axial_fwhm_mm,flagged"
        );
        assert_eq!(lines.next().unwrap(), "10,0.5,0.2,false");
    }

    #[test]
    fn bench_stats_match_direct_recomputation() {
        let samples: Vec<f64> = (0..40).map(|i| 1.0 + 0.01 * (i as f64).sin()).collect();
        let stages = vec![StageTimings {
            stage: "beamformer".into(),
            seconds: samples.clone(),
        }];
        let row = bench_stats("64/1", &stages, 1.0, 5).unwrap();
        let timed = &samples[5..];
        let mean = timed.iter().sum::<f64>() / timed.len() as f64;
        let std = (timed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / timed.len() as f64)
            .sqrt();
        assert!((row.stages[0].mean_s - mean).abs() < 1e-12 * mean.abs());
        assert!((row.stages[0].std_s - std).abs() < 1e-12);
        assert_eq!(row.frames, 35);
    }

    #[test]
    fn bench_stats_refuses_insufficient_samples() {
        let stages = vec![StageTimings {
            stage: "beamformer".into(),
            seconds: vec![1.0; 20],
        }];
        let err = bench_stats("64/1", &stages, 1.0, 0).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("30"), "{msg}");
    }

    #[test]
    fn bench_csv_has_table_shape() {
        let stages: Vec<StageTimings> = [
            "beamformer",
            "envelope",
            "log_compression",
            "scan_conversion",
        ]
        .iter()
        .map(|name| StageTimings {
            stage: name.to_string(),
            seconds: vec![0.002; 35],
        })
        .collect();
        let row = bench_stats("128/2", &stages, 0.5, 0).unwrap();
        let csv = bench_csv(&[row]);
        let mut lines = csv.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("config,frames,beamformer_mean_ms"));
        let data = lines.next().unwrap();
        assert!(data.starts_with("128/2,35,2.000000,"));
        // Total is the per-frame sum across the four stages: 8 ms.
        assert!(data.contains(",8.000000,"));
    }
}
