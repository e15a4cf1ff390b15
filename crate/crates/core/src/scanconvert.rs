//! Scan conversion: resampling scanline-ordered data onto a regular
//! physical-coordinate grid.
//!
//! The geometry inversion is precomputed once per (layout, spacing) into a
//! [`ConversionTable`]; converting a frame is then a pure gather-and-blend,
//! which matches how the cost of this stage scales with output resolution
//! rather than input size. Tables are immutable and freely shareable.

use crate::exec;
use crate::frame::{BModeImage, EnvelopeFrame};
use crate::geometry::{LayoutKind, ScanlineLayout};
use crate::{Error, Result};

/// Default 2D output spacing, millimeters.
pub const DEFAULT_SPACING_2D_MM: f64 = 0.0225;
/// Default 3D output spacing, millimeters.
pub const DEFAULT_SPACING_3D_MM: f64 = 0.175;
/// Default table memory budget: 2 GiB.
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

/// One output voxel's gather: base source indices plus fractional offsets
/// toward the next line/sample, quantized to 1/65535 steps. The
/// quantization moves the interpolation point by at most ~2e-5 of a pixel
/// and leaves the partition of unity intact; it halves the table footprint,
/// which matters for 3D tables with tens of millions of voxels.
#[derive(Debug, Clone, Copy)]
struct VoxelTap {
    sample: u32,
    line_x: u16,
    line_y: u16,
    frac_x: u16,
    frac_y: u16,
    frac_sample: u16,
    valid: u16,
}

const INVALID_TAP: VoxelTap = VoxelTap {
    sample: 0,
    line_x: 0,
    line_y: 0,
    frac_x: 0,
    frac_y: 0,
    frac_sample: 0,
    valid: 0,
};

/// Precomputed mapping from output voxels to source scanline samples.
#[derive(Debug, Clone)]
pub struct ConversionTable {
    taps: Vec<VoxelTap>,
    dims: [usize; 3],
    spacing_mm: f64,
    origin_mm: [f64; 3],
    src_lines_x: usize,
    src_lines_y: usize,
    src_samples: usize,
}

/// Extra knobs for [`build_table_with`].
#[derive(Debug, Clone)]
pub struct TableOptions {
    pub memory_budget_bytes: u64,
    /// Source depth-sample count when it differs from the layout's (e.g.
    /// after decimation in envelope detection).
    pub src_samples: Option<usize>,
    /// Source depth-sample pitch in millimeters when it differs from the
    /// layout's.
    pub sample_pitch_mm: Option<f64>,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            memory_budget_bytes: DEFAULT_MEMORY_BUDGET,
            src_samples: None,
            sample_pitch_mm: None,
        }
    }
}

impl ConversionTable {
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing_mm(&self) -> f64 {
        self.spacing_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Interpolation weights and source indices for one output voxel, in
    /// (line_x, line_y, sample) corner order; `None` outside the sector.
    /// Weights of every valid voxel sum to 1 within float rounding.
    pub fn voxel_weights(&self, index: usize) -> Option<([usize; 3], [f64; 3])> {
        let tap = &self.taps[index];
        if tap.valid == 0 {
            return None;
        }
        Some((
            [tap.line_x as usize, tap.line_y as usize, tap.sample as usize],
            [
                dequantize(tap.frac_x),
                dequantize(tap.frac_y),
                dequantize(tap.frac_sample),
            ],
        ))
    }
}

fn quantize(frac: f64) -> u16 {
    (frac.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn dequantize(q: u16) -> f64 {
    q as f64 / 65535.0
}

/// Build a conversion table for `layout` at isotropic `spacing_mm`,
/// with the default memory budget.
pub fn build_table(layout: &ScanlineLayout, spacing_mm: f64) -> Result<ConversionTable> {
    build_table_with(layout, spacing_mm, &TableOptions::default())
}

pub fn build_table_with(
    layout: &ScanlineLayout,
    spacing_mm: f64,
    options: &TableOptions,
) -> Result<ConversionTable> {
    build_dispatch(layout, spacing_mm, options, false)
}

/// Always-sequential twin of [`build_table`].
pub fn build_table_seq(layout: &ScanlineLayout, spacing_mm: f64) -> Result<ConversionTable> {
    build_dispatch(layout, spacing_mm, &TableOptions::default(), true)
}

fn build_dispatch(
    layout: &ScanlineLayout,
    spacing_mm: f64,
    options: &TableOptions,
    force_seq: bool,
) -> Result<ConversionTable> {
    if spacing_mm <= 0.0 {
        return Err(Error::Parameter(format!(
            "spacing must be positive, got {spacing_mm}"
        )));
    }
    let src_samples = options.src_samples.unwrap_or(layout.samples_per_line);
    let sample_pitch_mm = options
        .sample_pitch_mm
        .unwrap_or_else(|| layout.sample_pitch_mm());
    if src_samples < 2 {
        return Err(Error::Parameter("need at least 2 depth samples".into()));
    }

    // Output grid: bounding box of all scanline endpoints.
    let mut lo = [f64::MAX; 3];
    let mut hi = [f64::MIN; 3];
    for line in &layout.scanlines {
        let end = [
            line.origin_mm[0] + line.max_depth_mm * line.direction[0],
            line.origin_mm[1] + line.max_depth_mm * line.direction[1],
            line.origin_mm[2] + line.max_depth_mm * line.direction[2],
        ];
        for axis in 0..3 {
            lo[axis] = lo[axis].min(line.origin_mm[axis]).min(end[axis]);
            hi[axis] = hi[axis].max(line.origin_mm[axis]).max(end[axis]);
        }
    }
    let mut dims = [0usize; 3];
    for axis in 0..3 {
        let extent = hi[axis] - lo[axis];
        dims[axis] = if extent <= 0.0 {
            1
        } else {
            (extent / spacing_mm - 1e-9).ceil() as usize + 1
        };
    }

    let voxels = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| Error::Parameter("output grid size overflows".into()))?;
    let required = voxels as u64 * std::mem::size_of::<VoxelTap>() as u64;
    if required > options.memory_budget_bytes {
        return Err(Error::Resource {
            what: "conversion table",
            required,
            budget: options.memory_budget_bytes,
        });
    }

    let origin = lo;
    let geometry = InverseGeometry::new(layout, sample_pitch_mm, src_samples)?;

    // One task per z-slice keeps the parallel grain coarse.
    let slice = dims[0] * dims[1];
    let kernel = |iz: usize| -> Vec<VoxelTap> {
        let z = origin[2] + iz as f64 * spacing_mm;
        let mut out = Vec::with_capacity(slice);
        for iy in 0..dims[1] {
            let y = origin[1] + iy as f64 * spacing_mm;
            for ix in 0..dims[0] {
                let x = origin[0] + ix as f64 * spacing_mm;
                out.push(geometry.tap_for([x, y, z]));
            }
        }
        out
    };
    let slices = if force_seq {
        exec::map_indexed_seq(dims[2], kernel)
    } else {
        exec::map_indexed(dims[2], kernel)
    };
    let mut taps = Vec::with_capacity(voxels);
    for s in slices {
        taps.extend_from_slice(&s);
    }

    Ok(ConversionTable {
        taps,
        dims,
        spacing_mm,
        origin_mm: origin,
        src_lines_x: layout.line_count_x,
        src_lines_y: layout.line_count_y,
        src_samples,
    })
}

/// The per-layout data needed to invert the scan geometry for one point.
struct InverseGeometry {
    kind: LayoutKind,
    lines_x: usize,
    lines_y: usize,
    samples: usize,
    sample_pitch_mm: f64,
    // Linear layouts: lateral origin and pitch of the line grid.
    first_line_x_mm: f64,
    line_pitch_mm: f64,
}

impl InverseGeometry {
    fn new(layout: &ScanlineLayout, sample_pitch_mm: f64, samples: usize) -> Result<Self> {
        let (first_line_x_mm, line_pitch_mm) = match layout.kind {
            LayoutKind::Linear => {
                if layout.line_count_x < 2 {
                    return Err(Error::Parameter(
                        "linear scan conversion needs at least 2 lines".into(),
                    ));
                }
                let first = layout.scanlines[0].origin_mm[0];
                let last = layout.scanlines[layout.line_count_x - 1].origin_mm[0];
                (first, (last - first) / (layout.line_count_x as f64 - 1.0))
            }
            LayoutKind::Phased { .. } => (0.0, 0.0),
        };
        Ok(Self {
            kind: layout.kind,
            lines_x: layout.line_count_x,
            lines_y: layout.line_count_y,
            samples,
            sample_pitch_mm,
            first_line_x_mm,
            line_pitch_mm,
        })
    }

    fn tap_for(&self, p: [f64; 3]) -> VoxelTap {
        let (fx, fy, fk) = match self.kind {
            LayoutKind::Linear => {
                let fx = (p[0] - self.first_line_x_mm) / self.line_pitch_mm;
                let fk = p[2] / self.sample_pitch_mm;
                (fx, 0.0, fk)
            }
            LayoutKind::Phased {
                fov_x_deg,
                fov_y_deg,
            } => {
                let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                let fk = r / self.sample_pitch_mm;
                if r == 0.0 {
                    // The apex belongs to every line; use the fan center.
                    (
                        (self.lines_x as f64 - 1.0) / 2.0,
                        (self.lines_y as f64 - 1.0) / 2.0,
                        0.0,
                    )
                } else {
                    let theta_x = p[0].atan2(p[2]);
                    let fx = match angle_to_index(theta_x, fov_x_deg, self.lines_x) {
                        Some(v) => v,
                        None => return INVALID_TAP,
                    };
                    let theta_y = (p[1] / r).asin();
                    let fy = match angle_to_index(theta_y, fov_y_deg, self.lines_y) {
                        Some(v) => v,
                        None => return INVALID_TAP,
                    };
                    (fx, fy, fk)
                }
            }
        };

        let inside = |f: f64, n: usize| f >= 0.0 && f <= (n - 1) as f64;
        if !inside(fx, self.lines_x) || !inside(fy, self.lines_y) || !inside(fk, self.samples) {
            return INVALID_TAP;
        }
        let (lx, gx) = split_index(fx, self.lines_x);
        let (ly, gy) = split_index(fy, self.lines_y);
        let (k, gk) = split_index(fk, self.samples);
        VoxelTap {
            sample: k as u32,
            line_x: lx as u16,
            line_y: ly as u16,
            frac_x: quantize(gx),
            frac_y: quantize(gy),
            frac_sample: quantize(gk),
            valid: 1,
        }
    }
}

/// Fractional line index of the steering angle `theta` in a uniform fan.
/// Single-line fans accept only (numerically) straight-ahead points.
fn angle_to_index(theta: f64, fov_deg: f64, lines: usize) -> Option<f64> {
    if lines > 1 {
        let fov = fov_deg.to_radians();
        let step = fov / (lines as f64 - 1.0);
        Some((theta + fov / 2.0) / step)
    } else if theta.abs() < 1e-9 {
        Some(0.0)
    } else {
        None
    }
}

fn split_index(f: f64, n: usize) -> (usize, f64) {
    if n == 1 {
        return (0, 0.0);
    }
    let mut base = f.floor() as usize;
    let mut frac = f - base as f64;
    if base >= n - 1 {
        base = n - 2;
        frac = 1.0;
    }
    (base, frac)
}

/// Gather-and-blend a (compressed) envelope frame through a table.
pub fn convert(frame: &EnvelopeFrame, table: &ConversionTable) -> Result<BModeImage> {
    convert_dispatch(frame, table, false)
}

/// Always-sequential twin of [`convert`].
pub fn convert_seq(frame: &EnvelopeFrame, table: &ConversionTable) -> Result<BModeImage> {
    convert_dispatch(frame, table, true)
}

fn convert_dispatch(
    frame: &EnvelopeFrame,
    table: &ConversionTable,
    force_seq: bool,
) -> Result<BModeImage> {
    if frame.line_count_x != table.src_lines_x
        || frame.line_count_y != table.src_lines_y
        || frame.samples_per_line != table.src_samples
    {
        return Err(Error::Structure(format!(
            "frame dims {}x{}x{} do not match table source dims {}x{}x{}",
            frame.line_count_x,
            frame.line_count_y,
            frame.samples_per_line,
            table.src_lines_x,
            table.src_lines_y,
            table.src_samples
        )));
    }

    let nx = table.src_lines_x;
    let ny = table.src_lines_y;
    let n_samples = frame.samples_per_line;
    let data = &frame.samples;
    let voxels = table.voxel_count();

    let fetch = |lx: usize, ly: usize, k: usize| -> f32 { data[(ly * nx + lx) * n_samples + k] };

    const CHUNK: usize = 64 * 1024;
    let chunks = voxels.div_ceil(CHUNK);
    let kernel = |c: usize| -> (Vec<f32>, Vec<bool>) {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(voxels);
        let mut values = Vec::with_capacity(hi - lo);
        let mut mask = Vec::with_capacity(hi - lo);
        for tap in &table.taps[lo..hi] {
            if tap.valid == 0 {
                values.push(0.0);
                mask.push(false);
                continue;
            }
            let lx = tap.line_x as usize;
            let ly = tap.line_y as usize;
            let k = tap.sample as usize;
            let fx = dequantize(tap.frac_x) as f32;
            let fy = dequantize(tap.frac_y) as f32;
            let fk = dequantize(tap.frac_sample) as f32;
            let lx1 = (lx + 1).min(nx - 1);
            let ly1 = (ly + 1).min(ny - 1);
            let k1 = (k + 1).min(n_samples - 1);

            let c00 = fetch(lx, ly, k) * (1.0 - fk) + fetch(lx, ly, k1) * fk;
            let c10 = fetch(lx1, ly, k) * (1.0 - fk) + fetch(lx1, ly, k1) * fk;
            let cx0 = c00 * (1.0 - fx) + c10 * fx;
            let value = if ny > 1 {
                let c01 = fetch(lx, ly1, k) * (1.0 - fk) + fetch(lx, ly1, k1) * fk;
                let c11 = fetch(lx1, ly1, k) * (1.0 - fk) + fetch(lx1, ly1, k1) * fk;
                let cx1 = c01 * (1.0 - fx) + c11 * fx;
                cx0 * (1.0 - fy) + cx1 * fy
            } else {
                cx0
            };
            values.push(value);
            mask.push(true);
        }
        (values, mask)
    };

    let parts = if force_seq {
        exec::map_indexed_seq(chunks, kernel)
    } else {
        exec::map_indexed(chunks, kernel)
    };
    let mut intensities = Vec::with_capacity(voxels);
    let mut mask = Vec::with_capacity(voxels);
    for (v, m) in parts {
        intensities.extend_from_slice(&v);
        mask.extend_from_slice(&m);
    }

    BModeImage::new(
        intensities,
        table.dims,
        table.spacing_mm,
        table.origin_mm,
        mask,
        frame.timestamp_ns,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        make_linear_layout, make_phased_layout, ArrayKind, TransducerGeometry,
    };

    fn linear_layout() -> ScanlineLayout {
        let geom = TransducerGeometry::linear(64, 0.3, 5e6).unwrap();
        make_linear_layout(&geom, 64, 1, 20.0, 10.0, 720, 27e6, 1540.0).unwrap()
    }

    fn phased_layout(lines: usize) -> ScanlineLayout {
        let geom = TransducerGeometry::new(64, 1, 0.3, 0.3, 5e6, ArrayKind::Phased).unwrap();
        make_phased_layout(&geom, lines, 1, 60.0, 0.0, 40.0, 20.0, 2100, 40e6, 1540.0).unwrap()
    }

    fn constant_frame(layout: &ScanlineLayout, value: f32) -> EnvelopeFrame {
        EnvelopeFrame::new(
            vec![value; layout.line_count() * layout.samples_per_line],
            layout.line_count_x,
            layout.line_count_y,
            layout.samples_per_line,
            layout.sample_frequency_hz,
            0,
            layout.id(),
        )
        .unwrap()
    }

    #[test]
    fn grid_aligned_linear_table_is_an_index_copy() {
        // Line pitch = sample pitch = spacing: fractional parts vanish.
        let pitch = 0.3;
        let c = 1540.0;
        let fs = c / (2.0 * pitch * 1e-3);
        let geom = TransducerGeometry::linear(16, pitch, 5e6).unwrap();
        let depth = 63.0 * pitch;
        let layout = make_linear_layout(&geom, 16, 1, depth, 10.0, 64, fs, c).unwrap();
        let table = build_table(&layout, pitch).unwrap();
        assert_eq!(table.dims()[0], 16);
        for i in 0..table.voxel_count() {
            let (_, fracs) = table.voxel_weights(i).unwrap();
            for f in fracs {
                assert!(!(1e-6..=1.0 - 1e-6).contains(&f), "fraction {f} not near 0/1");
            }
        }
    }

    #[test]
    fn constant_frame_converts_to_constant_image() {
        let layout = linear_layout();
        let table = build_table(&layout, 0.1).unwrap();
        let image = convert(&constant_frame(&layout, 3.25), &table).unwrap();
        let mut masked = 0usize;
        for (v, m) in image.intensities.iter().zip(&image.mask) {
            if *m {
                masked += 1;
                assert!((v - 3.25).abs() < 1e-6 * 3.25);
            } else {
                assert_eq!(*v, 0.0);
            }
        }
        assert!(masked > 0);
    }

    #[test]
    fn phased_central_pixel_blends_central_lines_equally() {
        // Even line count: a pixel on the z axis sits exactly between the
        // two central lines.
        let layout = phased_layout(4);
        let table = build_table(&layout, 0.2).unwrap();
        let origin = table.origin_mm();
        // Find the column of pixels with x closest to 0.
        let ix = ((0.0 - origin[0]) / 0.2).round() as usize;
        let x = origin[0] + ix as f64 * 0.2;
        if x.abs() < 1e-9 {
            let iz = table.dims()[2] / 2;
            let idx = iz * table.dims()[1] * table.dims()[0] + ix;
            if let Some(([lx, _, _], [fx, _, _])) = table.voxel_weights(idx) {
                assert_eq!(lx, 1);
                assert!((fx - 0.5).abs() < 1e-4, "fx {fx}");
            } else {
                panic!("central pixel should be valid");
            }
        } else {
            // Grid does not hit x = 0 exactly for this spacing; the odd
            // line count case below still covers the symmetry.
        }
        // Odd line count: the center line alone carries the axis.
        let layout = phased_layout(5);
        let table = build_table(&layout, 0.2).unwrap();
        let origin = table.origin_mm();
        let ix = ((0.0 - origin[0]) / 0.2).round() as usize;
        let x = origin[0] + ix as f64 * 0.2;
        if x.abs() < 1e-9 {
            let iz = table.dims()[2] / 2;
            let idx = iz * table.dims()[1] * table.dims()[0] + ix;
            let ([lx, _, _], [fx, _, _]) = table.voxel_weights(idx).unwrap();
            let reconstructed = lx as f64 + fx;
            assert!((reconstructed - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn masked_pixels_bounded_by_frame_range() {
        let layout = linear_layout();
        let table = build_table(&layout, 0.07).unwrap();
        let mut frame = constant_frame(&layout, 0.0);
        for (i, v) in frame.samples.iter_mut().enumerate() {
            *v = ((i % 97) as f32) / 96.0 + 0.5;
        }
        let image = convert(&frame, &table).unwrap();
        let lo = frame.samples.iter().cloned().fold(f32::MAX, f32::min);
        let hi = frame.samples.iter().cloned().fold(f32::MIN, f32::max);
        for (v, m) in image.intensities.iter().zip(&image.mask) {
            if *m {
                assert!(*v >= lo - 1e-6 && *v <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn single_bright_line_makes_a_narrow_stripe() {
        let layout = linear_layout();
        let spacing = 0.05;
        let table = build_table(&layout, spacing).unwrap();
        let mut frame = constant_frame(&layout, 0.0);
        let line = 20usize;
        for k in 0..layout.samples_per_line {
            frame.samples[line * layout.samples_per_line + k] = 1.0;
        }
        let image = convert(&frame, &table).unwrap();
        let line_x = layout.scanlines[line].origin_mm[0];
        let line_pitch = layout.scanlines[1].origin_mm[0] - layout.scanlines[0].origin_mm[0];
        let dims = image.dims;
        for iz in 0..dims[2] {
            for ix in 0..dims[0] {
                let v = image.intensities[image.index(ix, 0, iz)];
                if v > 1e-6 {
                    let x = image.origin_mm[0] + ix as f64 * spacing;
                    // Bilinear support reaches one line pitch either side,
                    // plus up to two pixels of grid discretization.
                    assert!(
                        (x - line_x).abs() <= line_pitch + 2.0 * spacing,
                        "bright pixel at {x}, line at {line_x}"
                    );
                }
            }
        }
    }

    #[test]
    fn linearity_of_convert() {
        let layout = linear_layout();
        let table = build_table(&layout, 0.09).unwrap();
        let mut fa = constant_frame(&layout, 0.0);
        let mut fb = constant_frame(&layout, 0.0);
        for i in 0..fa.samples.len() {
            fa.samples[i] = ((i * 7 + 1) % 13) as f32;
            fb.samples[i] = ((i * 11 + 5) % 17) as f32;
        }
        let a = 0.75f32;
        let b = 1.5f32;
        let mut combined = constant_frame(&layout, 0.0);
        for i in 0..combined.samples.len() {
            combined.samples[i] = a * fa.samples[i] + b * fb.samples[i];
        }
        let img_a = convert(&fa, &table).unwrap();
        let img_b = convert(&fb, &table).unwrap();
        let img_c = convert(&combined, &table).unwrap();
        for i in 0..img_c.intensities.len() {
            let expected = a * img_a.intensities[i] + b * img_b.intensities[i];
            let got = img_c.intensities[i];
            let scale = expected.abs().max(1.0);
            assert!((got - expected).abs() / scale < 1e-5);
        }
    }

    #[test]
    fn table_reuse_and_rebuild_are_bit_identical() {
        let layout = phased_layout(31);
        let table1 = build_table(&layout, 0.15).unwrap();
        let table2 = build_table(&layout, 0.15).unwrap();
        let mut frame = constant_frame(&layout, 0.0);
        for (i, v) in frame.samples.iter_mut().enumerate() {
            *v = (i % 251) as f32 / 250.0;
        }
        let a = convert(&frame, &table1).unwrap();
        let b = convert(&frame, &table1).unwrap();
        let c = convert(&frame, &table2).unwrap();
        assert_eq!(a.intensities, b.intensities);
        assert_eq!(a.intensities, c.intensities);
    }

    #[test]
    fn memory_budget_is_enforced() {
        let layout = linear_layout();
        let options = TableOptions {
            memory_budget_bytes: 1024,
            ..Default::default()
        };
        let err = build_table_with(&layout, 0.05, &options).unwrap_err();
        match err {
            Error::Resource { required, budget, .. } => {
                assert!(required > budget);
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }

    #[test]
    fn frame_dimension_mismatch_rejected() {
        let layout = linear_layout();
        let table = build_table(&layout, 0.1).unwrap();
        let other = phased_layout(3);
        let frame = constant_frame(&other, 1.0);
        assert!(matches!(
            convert(&frame, &table).unwrap_err(),
            Error::Structure(_)
        ));
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let layout = phased_layout(17);
        let table_par = build_table(&layout, 0.2).unwrap();
        let table_seq = build_table_seq(&layout, 0.2).unwrap();
        let mut frame = constant_frame(&layout, 0.0);
        for (i, v) in frame.samples.iter_mut().enumerate() {
            *v = ((i * 31 + 7) % 101) as f32;
        }
        let a = convert(&frame, &table_par).unwrap();
        let b = convert_seq(&frame, &table_seq).unwrap();
        assert_eq!(a.intensities, b.intensities);
        assert_eq!(a.mask, b.mask);
    }
}
