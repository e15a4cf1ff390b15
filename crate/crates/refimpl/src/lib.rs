//! Slow, obviously-correct reference implementations.
//!
//! These exist solely as ground truth for the test suites of the real
//! kernels. They share the frame and layout types with the main crate but
//! none of its computation paths: everything here is written as a direct
//! f64 transcription of the defining formulas, with no restructuring for
//! speed. Keep it that way — the value of this crate is its independence.

use echopipe_core::beamform::{BeamformParams, Interpolation};
use echopipe_core::frame::RawChannelFrame;
use echopipe_core::geometry::{LayoutKind, ScanlineLayout};
use echopipe_core::WindowKind;

/// Triple-loop delay-and-sum over (scanline, depth, element), all in f64.
///
/// Returns one row per scanline. Matches the beamformer's contract:
/// dynamic aperture of width z/f_number centered on the scanline, window
/// weighting, out-of-range taps read as zero, sum divided by the number of
/// contributing elements.
pub fn das_reference(
    raw: &RawChannelFrame,
    layout: &ScanlineLayout,
    params: &BeamformParams,
) -> Vec<Vec<f64>> {
    let c = params.speed_of_sound_m_s;
    let fs = raw.sample_frequency_hz;
    let n = raw.samples_per_event;
    let mut rows = Vec::with_capacity(layout.line_count());

    for s in 0..layout.line_count() {
        let line = &layout.scanlines[s];
        let event = (s / layout.multiline).min(layout.transmit_count - 1);
        let mut row = vec![0.0f64; n];

        for (k, out) in row.iter_mut().enumerate() {
            let z_mm = k as f64 * c / (2.0 * fs) * 1e3;
            let half_mm = z_mm / (2.0 * params.f_number);
            let px = line.origin_mm[0] + z_mm * line.direction[0];
            let py = line.origin_mm[1] + z_mm * line.direction[1];
            let pz = line.origin_mm[2] + z_mm * line.direction[2];

            let mut sum = 0.0f64;
            let mut contributing = 0usize;
            for (e, pos) in layout.element_positions_mm.iter().enumerate() {
                let lat = {
                    let dx = pos[0] - line.origin_mm[0];
                    let dy = pos[1] - line.origin_mm[1];
                    (dx * dx + dy * dy).sqrt()
                };
                let w = window_weight(params.receive_window, lat, half_mm);
                if w <= 0.0 {
                    continue;
                }
                let dist_mm = {
                    let dx = px - pos[0];
                    let dy = py - pos[1];
                    let dz = pz - pos[2];
                    (dx * dx + dy * dy + dz * dz).sqrt()
                };
                let t = (z_mm + dist_mm) * 1e-3 / c;
                let idx = t * fs;
                let x = sample_at(raw.channel(event, e), idx, params.interpolation);
                sum += w * x;
                contributing += 1;
            }
            *out = if contributing > 0 {
                sum / contributing as f64
            } else {
                0.0
            };
        }
        rows.push(row);
    }
    rows
}

fn window_weight(window: WindowKind, lateral_mm: f64, half_mm: f64) -> f64 {
    if half_mm <= 0.0 {
        return if lateral_mm == 0.0 { 1.0 } else { 0.0 };
    }
    if lateral_mm > half_mm {
        return 0.0;
    }
    let u = lateral_mm / half_mm;
    match window {
        WindowKind::Rectangular => 1.0,
        WindowKind::Hann => 0.5 * (1.0 + (std::f64::consts::PI * u).cos()),
        WindowKind::Hamming => 0.54 + 0.46 * (std::f64::consts::PI * u).cos(),
    }
}

fn sample_at(signal: &[i16], idx: f64, interpolation: Interpolation) -> f64 {
    let value = |i: isize| -> f64 {
        if i < 0 || i >= signal.len() as isize {
            0.0
        } else {
            signal[i as usize] as f64
        }
    };
    match interpolation {
        Interpolation::Nearest => {
            let i = idx.round();
            if i < 0.0 || i >= signal.len() as f64 {
                0.0
            } else {
                value(i as isize)
            }
        }
        Interpolation::Linear => {
            let floor = idx.floor();
            if floor < -1.0 || floor >= signal.len() as f64 {
                return 0.0;
            }
            let frac = idx - floor;
            let i = floor as isize;
            value(i) * (1.0 - frac) + value(i + 1) * frac
        }
    }
}

/// Envelope via the analytic signal computed with a plain O(n^2) DFT:
/// zero the negative frequencies, double the positive ones, keep DC and
/// Nyquist unscaled, inverse transform, take the modulus.
pub fn dft_hilbert_envelope(signal: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let mut spec_re = vec![0.0f64; n];
    let mut spec_im = vec![0.0f64; n];
    for (k, (re, im)) in spec_re.iter_mut().zip(spec_im.iter_mut()).enumerate() {
        for (t, &x) in signal.iter().enumerate() {
            let phase = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
            *re += x * phase.cos();
            *im += x * phase.sin();
        }
    }
    for k in 0..n {
        let factor = analytic_factor(k, n);
        spec_re[k] *= factor;
        spec_im[k] *= factor;
    }
    let mut env = vec![0.0f64; n];
    for (t, out) in env.iter_mut().enumerate() {
        let mut re = 0.0f64;
        let mut im = 0.0f64;
        for k in 0..n {
            let phase = 2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
            let (s, c) = phase.sin_cos();
            re += spec_re[k] * c - spec_im[k] * s;
            im += spec_re[k] * s + spec_im[k] * c;
        }
        re /= n as f64;
        im /= n as f64;
        *out = (re * re + im * im).sqrt();
    }
    env
}

fn analytic_factor(k: usize, n: usize) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if n.is_multiple_of(2) {
        if k == n / 2 {
            1.0
        } else if k < n / 2 {
            2.0
        } else {
            0.0
        }
    } else if k <= (n - 1) / 2 {
        2.0
    } else {
        0.0
    }
}

/// Bilinear/trilinear gather weights for one output position, computed by
/// inverting the scan geometry directly, without any lookup table.
///
/// Returns `None` for positions outside the imaged sector, otherwise the
/// base source indices `(lx, ly, k)` and the fractional offsets toward the
/// next line/sample in each axis.
pub fn inverse_map_reference(
    layout: &ScanlineLayout,
    position_mm: [f64; 3],
) -> Option<([usize; 3], [f64; 3])> {
    let sample_pitch_mm = layout.speed_of_sound_m_s / (2.0 * layout.sample_frequency_hz) * 1e3;
    let (fx, fy, radial_mm) = match layout.kind {
        LayoutKind::Linear => {
            let first = layout.scanlines[0].origin_mm[0];
            let last = layout.scanlines[layout.line_count_x - 1].origin_mm[0];
            let pitch = (last - first) / (layout.line_count_x as f64 - 1.0);
            let fx = (position_mm[0] - first) / pitch;
            (fx, 0.0, position_mm[2])
        }
        LayoutKind::Phased {
            fov_x_deg,
            fov_y_deg,
        } => {
            let r = (position_mm[0] * position_mm[0]
                + position_mm[1] * position_mm[1]
                + position_mm[2] * position_mm[2])
                .sqrt();
            if r == 0.0 {
                return None;
            }
            let theta_x = position_mm[0].atan2(position_mm[2]);
            let theta_y = (position_mm[1] / r).asin();
            let fx = if layout.line_count_x > 1 {
                let fov = fov_x_deg.to_radians();
                (theta_x + fov / 2.0) / (fov / (layout.line_count_x as f64 - 1.0))
            } else if theta_x.abs() < 1e-12 {
                0.0
            } else {
                return None;
            };
            let fy = if layout.line_count_y > 1 {
                let fov = fov_y_deg.to_radians();
                (theta_y + fov / 2.0) / (fov / (layout.line_count_y as f64 - 1.0))
            } else if theta_y.abs() < 1e-9 {
                0.0
            } else {
                return None;
            };
            (fx, fy, r)
        }
    };
    let fk = radial_mm / sample_pitch_mm;

    let inside = |f: f64, n: usize| f >= 0.0 && f <= (n - 1) as f64;
    if !inside(fx, layout.line_count_x)
        || !inside(fy, layout.line_count_y)
        || !inside(fk, layout.samples_per_line)
    {
        return None;
    }

    let split = |f: f64, n: usize| -> (usize, f64) {
        let mut base = f.floor() as usize;
        let mut frac = f - base as f64;
        if base >= n - 1 && n >= 2 {
            base = n - 2;
            frac = 1.0;
        }
        if n == 1 {
            base = 0;
            frac = 0.0;
        }
        (base, frac)
    };
    let (lx, gx) = split(fx, layout.line_count_x);
    let (ly, gy) = split(fy, layout.line_count_y);
    let (k, gk) = split(fk, layout.samples_per_line);
    Some(([lx, ly, k], [gx, gy, gk]))
}
