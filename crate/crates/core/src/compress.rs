//! Log compression of envelope amplitudes onto a display dynamic range.

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::frame::EnvelopeFrame;
use crate::{Error, Result};

/// Amplitude corresponding to full brightness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Reference {
    /// Per-frame maximum; output is invariant under uniform input scaling.
    FrameMax,
    /// Fixed reference amplitude, for temporally stable video.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputDepth {
    /// Intensities in [0, 1].
    UnitFloat,
    /// Intensities quantized to {0, 1, ..., 255}, round-to-nearest.
    EightBit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressionParams {
    pub dynamic_range_db: f64,
    pub reference: Reference,
    pub output_depth: OutputDepth,
}

impl Default for CompressionParams {
    fn default() -> Self {
        Self {
            dynamic_range_db: 50.0,
            reference: Reference::FrameMax,
            output_depth: OutputDepth::UnitFloat,
        }
    }
}

impl CompressionParams {
    pub fn validate(&self) -> Result<()> {
        if self.dynamic_range_db <= 0.0 {
            return Err(Error::Parameter(format!(
                "dynamic range must be positive dB, got {}",
                self.dynamic_range_db
            )));
        }
        if let Reference::Fixed(v) = self.reference {
            if v <= 0.0 {
                return Err(Error::Parameter(format!(
                    "fixed reference must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Map amplitudes to display intensities:
/// `y = clamp((20 log10(x / ref) + DR) / DR, 0, 1)`, with `x = 0` mapping
/// to 0 and an all-zero frame (under the frame-max reference) staying all
/// zero.
///
/// The mapping is evaluated as `1 - log10(x/ref) / log10(floor)` with
/// `floor = 10^(-DR/20)`, which is the same function but hits both
/// endpoints exactly: `x = ref` gives 1.0 and `x = ref * floor` gives 0.0
/// without relying on the rounding direction of the dB conversion.
pub fn log_compress(env: &EnvelopeFrame, params: &CompressionParams) -> Result<EnvelopeFrame> {
    log_compress_dispatch(env, params, false)
}

/// Always-sequential twin of [`log_compress`].
pub fn log_compress_seq(env: &EnvelopeFrame, params: &CompressionParams) -> Result<EnvelopeFrame> {
    log_compress_dispatch(env, params, true)
}

fn log_compress_dispatch(
    env: &EnvelopeFrame,
    params: &CompressionParams,
    force_seq: bool,
) -> Result<EnvelopeFrame> {
    params.validate()?;
    let reference = match params.reference {
        Reference::Fixed(v) => v as f32,
        // max of nonnegative values; order-independent, so the reduction
        // stays deterministic under any chunking.
        Reference::FrameMax => env.samples.iter().cloned().fold(0.0f32, f32::max),
    };

    let floor_ratio = 10f32.powf(-(params.dynamic_range_db as f32) / 20.0);
    let inv_log_floor = 1.0 / floor_ratio.log10();
    let eight_bit = params.output_depth == OutputDepth::EightBit;

    let map = move |x: f32| -> f32 {
        if x <= 0.0 || reference <= 0.0 {
            return 0.0;
        }
        let y = 1.0 - (x / reference).log10() * inv_log_floor;
        let y = y.clamp(0.0, 1.0);
        if eight_bit {
            (y * 255.0).round()
        } else {
            y
        }
    };

    let n = env.samples.len();
    const CHUNK: usize = 16 * 1024;
    let chunks = n.div_ceil(CHUNK);
    let kernel = |c: usize| -> Vec<f32> {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        env.samples[lo..hi].iter().map(|x| map(*x)).collect()
    };
    let rows = if force_seq {
        exec::map_indexed_seq(chunks, kernel)
    } else {
        exec::map_indexed(chunks, kernel)
    };
    let mut samples = Vec::with_capacity(n);
    for row in rows {
        samples.extend_from_slice(&row);
    }

    EnvelopeFrame::new(
        samples,
        env.line_count_x,
        env.line_count_y,
        env.samples_per_line,
        env.sample_frequency_hz,
        env.timestamp_ns,
        env.layout_ref,
    )
}
