//! Data containers exchanged between pipeline stages.
//!
//! Frames are immutable after construction; constructors validate the
//! dimension invariants so downstream kernels can index without checks.

use crate::{Error, Result};

/// Per-transmit-event, per-channel digitized echo samples, as produced by
/// the receive hardware (or the synthesizer standing in for it).
#[derive(Debug, Clone, PartialEq)]
pub struct RawChannelFrame {
    /// Samples in `[event][channel][time]` order, row-major.
    pub samples: Vec<i16>,
    pub event_count: usize,
    pub channel_count: usize,
    pub samples_per_event: usize,
    pub sample_frequency_hz: f64,
    pub timestamp_ns: u64,
    /// Content hash of the [`crate::ScanlineLayout`] this frame was acquired with.
    pub layout_ref: u64,
}

impl RawChannelFrame {
    pub fn new(
        samples: Vec<i16>,
        event_count: usize,
        channel_count: usize,
        samples_per_event: usize,
        sample_frequency_hz: f64,
        timestamp_ns: u64,
        layout_ref: u64,
    ) -> Result<Self> {
        let expected = event_count * channel_count * samples_per_event;
        if samples.len() != expected {
            return Err(Error::Structure(format!(
                "raw frame holds {} samples, dims {}x{}x{} require {}",
                samples.len(),
                event_count,
                channel_count,
                samples_per_event,
                expected
            )));
        }
        if sample_frequency_hz <= 0.0 {
            return Err(Error::Parameter(format!(
                "sample frequency must be positive, got {sample_frequency_hz}"
            )));
        }
        Ok(Self {
            samples,
            event_count,
            channel_count,
            samples_per_event,
            sample_frequency_hz,
            timestamp_ns,
            layout_ref,
        })
    }

    /// Channel time series for (event, channel).
    pub fn channel(&self, event: usize, channel: usize) -> &[i16] {
        let base = (event * self.channel_count + channel) * self.samples_per_event;
        &self.samples[base..base + self.samples_per_event]
    }
}

/// Beamformed radio-frequency scanline data, still modulated at the
/// transmit center frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct RfFrame {
    /// Samples in `[line][depth]` order; line index is `ly * line_count_x + lx`.
    pub samples: Vec<f32>,
    pub line_count_x: usize,
    pub line_count_y: usize,
    pub samples_per_line: usize,
    pub sample_frequency_hz: f64,
    pub timestamp_ns: u64,
    pub layout_ref: u64,
}

impl RfFrame {
    pub fn new(
        samples: Vec<f32>,
        line_count_x: usize,
        line_count_y: usize,
        samples_per_line: usize,
        sample_frequency_hz: f64,
        timestamp_ns: u64,
        layout_ref: u64,
    ) -> Result<Self> {
        check_line_grid(&samples, line_count_x, line_count_y, samples_per_line)?;
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::Structure("RF frame contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            line_count_x,
            line_count_y,
            samples_per_line,
            sample_frequency_hz,
            timestamp_ns,
            layout_ref,
        })
    }

    pub fn line_count(&self) -> usize {
        self.line_count_x * self.line_count_y
    }

    pub fn line(&self, line: usize) -> &[f32] {
        let base = line * self.samples_per_line;
        &self.samples[base..base + self.samples_per_line]
    }
}

/// Demodulated amplitude (or, after log compression, display intensity)
/// per scanline sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeFrame {
    /// Samples in `[line][depth]` order; all values nonnegative and finite.
    pub samples: Vec<f32>,
    pub line_count_x: usize,
    pub line_count_y: usize,
    pub samples_per_line: usize,
    /// Possibly decimated relative to the RF sampling frequency.
    pub sample_frequency_hz: f64,
    pub timestamp_ns: u64,
    pub layout_ref: u64,
}

impl EnvelopeFrame {
    pub fn new(
        samples: Vec<f32>,
        line_count_x: usize,
        line_count_y: usize,
        samples_per_line: usize,
        sample_frequency_hz: f64,
        timestamp_ns: u64,
        layout_ref: u64,
    ) -> Result<Self> {
        check_line_grid(&samples, line_count_x, line_count_y, samples_per_line)?;
        if !samples.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::Structure(
                "envelope frame contains negative or non-finite samples".into(),
            ));
        }
        Ok(Self {
            samples,
            line_count_x,
            line_count_y,
            samples_per_line,
            sample_frequency_hz,
            timestamp_ns,
            layout_ref,
        })
    }

    pub fn line_count(&self) -> usize {
        self.line_count_x * self.line_count_y
    }

    pub fn line(&self, line: usize) -> &[f32] {
        let base = line * self.samples_per_line;
        &self.samples[base..base + self.samples_per_line]
    }
}

fn check_line_grid(
    samples: &[f32],
    line_count_x: usize,
    line_count_y: usize,
    samples_per_line: usize,
) -> Result<()> {
    if line_count_x == 0 || line_count_y == 0 || samples_per_line == 0 {
        return Err(Error::Structure("frame dimensions must be nonzero".into()));
    }
    let expected = line_count_x * line_count_y * samples_per_line;
    if samples.len() != expected {
        return Err(Error::Structure(format!(
            "frame holds {} samples, dims {}x{}x{} require {}",
            samples.len(),
            line_count_x,
            line_count_y,
            samples_per_line,
            expected
        )));
    }
    Ok(())
}

/// Scan-converted intensity grid in physical coordinates.
///
/// Axes follow the transducer frame: x lateral, y elevational, z depth.
/// 2D images have `dims[1] == 1`. Storage is x-fastest, then y, then z.
#[derive(Debug, Clone, PartialEq)]
pub struct BModeImage {
    pub intensities: Vec<f32>,
    /// Grid size `[nx, ny, nz]`.
    pub dims: [usize; 3],
    /// Isotropic pixel/voxel edge length in millimeters.
    pub spacing_mm: f64,
    /// Physical position of voxel (0, 0, 0) in millimeters.
    pub origin_mm: [f64; 3],
    /// True where the voxel lies inside the imaged sector.
    pub mask: Vec<bool>,
    pub timestamp_ns: u64,
}

impl BModeImage {
    pub fn new(
        intensities: Vec<f32>,
        dims: [usize; 3],
        spacing_mm: f64,
        origin_mm: [f64; 3],
        mask: Vec<bool>,
        timestamp_ns: u64,
    ) -> Result<Self> {
        let count = dims[0] * dims[1] * dims[2];
        if dims.contains(&0) {
            return Err(Error::Structure("image dimensions must be nonzero".into()));
        }
        if intensities.len() != count || mask.len() != count {
            return Err(Error::Structure(format!(
                "image holds {} intensities / {} mask entries, dims {:?} require {}",
                intensities.len(),
                mask.len(),
                dims,
                count
            )));
        }
        if spacing_mm <= 0.0 {
            return Err(Error::Parameter(format!(
                "spacing must be positive, got {spacing_mm}"
            )));
        }
        if intensities
            .iter()
            .zip(&mask)
            .any(|(v, m)| !m & (*v != 0.0))
        {
            return Err(Error::Structure(
                "intensities outside the mask must be zero".into(),
            ));
        }
        Ok(Self {
            intensities,
            dims,
            spacing_mm,
            origin_mm,
            mask,
            timestamp_ns,
        })
    }

    /// 2 for single-slice images, 3 for volumes.
    pub fn ndims(&self) -> usize {
        if self.dims[1] == 1 {
            2
        } else {
            3
        }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.dims[1] + y) * self.dims[0] + x
    }
}
