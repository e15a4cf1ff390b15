//! Point-scatterer channel-data synthesizer.
//!
//! Stands in for transducer hardware: given a scatterer field and an
//! acquisition layout it produces the raw channel frame that layout would
//! have recorded. The transmit field is a focused-ray approximation — the
//! echo from scatterer `s` under event `ev` arrives at element `e` at
//! `t = (|s - origin_ev| + |s - pos_e|) / c`, with time zero defined as
//! the transmit wavefront passing the event origin. Amplitude falls off as
//! 1/r per leg. This is a fidelity boundary, not a wave simulation: it is
//! exact for delay and point-spread checks, and orders of magnitude
//! cheaper than full acoustic modeling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::frame::RawChannelFrame;
use crate::geometry::{ScanlineLayout, TransducerGeometry};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position_mm: [f64; 3],
    pub reflectivity: f64,
}

/// A set of point reflectors plus optional background noise.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScattererField {
    pub scatterers: Vec<Scatterer>,
    /// White-noise amplitude in dB relative to the echo of a
    /// unit-reflectivity scatterer at 1 mm per leg; `None` disables noise.
    pub background_noise_db: Option<f64>,
}

impl ScattererField {
    pub fn validate(&self) -> Result<()> {
        for s in &self.scatterers {
            if !s.reflectivity.is_finite() || s.reflectivity < 0.0 {
                return Err(Error::Parameter(format!(
                    "reflectivity must be finite and nonnegative, got {}",
                    s.reflectivity
                )));
            }
            if s.position_mm.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter("scatterer position must be finite".into()));
            }
        }
        Ok(())
    }

    /// Parse a JSON list of `{x, y, z, reflectivity}` objects (millimeters).
    pub fn from_json_str(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Entry {
            x: f64,
            y: f64,
            z: f64,
            reflectivity: f64,
        }
        let entries: Vec<Entry> = serde_json::from_str(text)
            .map_err(|e| Error::Parameter(format!("scatterer JSON: {e}")))?;
        let field = ScattererField {
            scatterers: entries
                .into_iter()
                .map(|e| Scatterer {
                    position_mm: [e.x, e.y, e.z],
                    reflectivity: e.reflectivity,
                })
                .collect(),
            background_noise_db: None,
        };
        field.validate()?;
        Ok(field)
    }
}

/// The software analogue of a water-tank wire target: one unit
/// reflectivity scatterer per depth, centered laterally.
pub fn wire_phantom(depths_mm: &[f64]) -> ScattererField {
    ScattererField {
        scatterers: depths_mm
            .iter()
            .map(|z| Scatterer {
                position_mm: [0.0, 0.0, *z],
                reflectivity: 1.0,
            })
            .collect(),
        background_noise_db: None,
    }
}

/// Gaussian-enveloped cosine transmit pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseModel {
    pub center_frequency_hz: f64,
    /// -6 dB fractional bandwidth of the amplitude spectrum, in (0, 1).
    pub fractional_bandwidth: f64,
    /// Support of the envelope in carrier periods; samples beyond
    /// `|t| > cycles / (2 f0)` are treated as zero.
    pub cycles: f64,
}

impl PulseModel {
    pub fn new(center_frequency_hz: f64) -> Self {
        Self {
            center_frequency_hz,
            fractional_bandwidth: 0.6,
            cycles: 6.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.center_frequency_hz <= 0.0 {
            return Err(Error::Parameter("pulse center frequency must be positive".into()));
        }
        if !(0.0 < self.fractional_bandwidth && self.fractional_bandwidth < 1.0) {
            return Err(Error::Parameter(format!(
                "fractional bandwidth must lie in (0, 1), got {}",
                self.fractional_bandwidth
            )));
        }
        if self.cycles <= 0.0 {
            return Err(Error::Parameter("pulse cycles must be positive".into()));
        }
        Ok(())
    }

    /// Gaussian envelope standard deviation in seconds, from the -6 dB
    /// fractional bandwidth.
    pub fn sigma_s(&self) -> f64 {
        (2.0f64 * std::f64::consts::LN_2).sqrt()
            / (std::f64::consts::PI * self.fractional_bandwidth * self.center_frequency_hz)
    }

    /// Full width at half maximum of the pulse envelope, seconds.
    pub fn envelope_fwhm_s(&self) -> f64 {
        2.0 * (2.0f64 * std::f64::consts::LN_2).sqrt() * self.sigma_s()
    }

    fn half_support_s(&self) -> f64 {
        self.cycles / (2.0 * self.center_frequency_hz)
    }

    /// Pulse value at time `t` from the envelope center.
    pub fn sample(&self, t: f64) -> f64 {
        if t.abs() > self.half_support_s() {
            return 0.0;
        }
        let sigma = self.sigma_s();
        let envelope = (-t * t / (2.0 * sigma * sigma)).exp();
        envelope * (2.0 * std::f64::consts::PI * self.center_frequency_hz * t).cos()
    }
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    /// dB between the strongest synthetic echo and the 16-bit full scale.
    pub headroom_db: f64,
    /// Seed for the background-noise generator.
    pub noise_seed: u64,
    /// Frequency-dependent attenuation in dB/(cm MHz) applied over the
    /// two-way path; `None` disables it.
    pub attenuation_db_per_cm_mhz: Option<f64>,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            headroom_db: 12.0,
            noise_seed: 0x5eed,
            attenuation_db_per_cm_mhz: None,
        }
    }
}

/// Pre-quantization, noise-free channel data in `[event][channel][sample]`
/// order. Superposition holds exactly here: fields add sample for sample.
pub fn synthesize_channels(
    field: &ScattererField,
    layout: &ScanlineLayout,
    geom: &TransducerGeometry,
    pulse: &PulseModel,
    options: &SynthOptions,
) -> Result<Vec<f32>> {
    synthesize_channels_dispatch(field, layout, geom, pulse, options, false)
}

fn synthesize_channels_dispatch(
    field: &ScattererField,
    layout: &ScanlineLayout,
    geom: &TransducerGeometry,
    pulse: &PulseModel,
    options: &SynthOptions,
    force_seq: bool,
) -> Result<Vec<f32>> {
    field.validate()?;
    pulse.validate()?;
    check_consistency(layout, geom)?;

    let channels = layout.element_count();
    let n = layout.samples_per_line;
    let fs = layout.sample_frequency_hz;
    let c = layout.speed_of_sound_m_s;
    let half_support = pulse.half_support_s();

    // Mean transmit weight per event, the aggregate strength of the
    // focused wave in the ray model.
    let tx_aggregate: Vec<f64> = (0..layout.transmit_count)
        .map(|ev| {
            let line = &layout.scanlines[(ev * layout.multiline).min(layout.line_count() - 1)];
            line.transmit_apodization.iter().sum::<f64>() / channels as f64
        })
        .collect();

    let kernel = |ev: usize| -> Vec<f32> {
        let origin = layout.transmit_origins_mm[ev];
        let mut block = vec![0.0f32; channels * n];
        for s in &field.scatterers {
            if s.reflectivity == 0.0 {
                continue;
            }
            let d_tx_mm = dist(s.position_mm, origin);
            if d_tx_mm == 0.0 {
                continue;
            }
            for (e, pos) in layout.element_positions_mm.iter().enumerate() {
                let d_rx_mm = dist(s.position_mm, *pos);
                if d_rx_mm == 0.0 {
                    continue;
                }
                let arrival = (d_tx_mm + d_rx_mm) * 1e-3 / c;
                let mut amplitude = s.reflectivity * tx_aggregate[ev] / (d_tx_mm * d_rx_mm);
                if let Some(alpha) = options.attenuation_db_per_cm_mhz {
                    let path_cm = (d_tx_mm + d_rx_mm) * 0.1;
                    let f_mhz = pulse.center_frequency_hz * 1e-6;
                    amplitude *= 10f64.powf(-alpha * f_mhz * path_cm / 20.0);
                }
                let lo = ((arrival - half_support) * fs).floor().max(0.0) as usize;
                let hi = (((arrival + half_support) * fs).ceil() as usize).min(n.saturating_sub(1));
                let row = &mut block[e * n..(e + 1) * n];
                for (k, out) in row.iter_mut().enumerate().take(hi + 1).skip(lo) {
                    let t = k as f64 / fs - arrival;
                    *out += (amplitude * pulse.sample(t)) as f32;
                }
            }
        }
        block
    };

    let blocks = if force_seq {
        exec::map_indexed_seq(layout.transmit_count, kernel)
    } else {
        exec::map_indexed(layout.transmit_count, kernel)
    };
    let mut samples = Vec::with_capacity(layout.transmit_count * channels * n);
    for b in blocks {
        samples.extend_from_slice(&b);
    }
    Ok(samples)
}

/// Synthesize a quantized raw channel frame: optional white noise is added
/// to the float signal, then everything is scaled so the strongest echo
/// sits `headroom_db` below the 16-bit full scale.
pub fn synthesize(
    field: &ScattererField,
    layout: &ScanlineLayout,
    geom: &TransducerGeometry,
    pulse: &PulseModel,
    options: &SynthOptions,
    timestamp_ns: u64,
) -> Result<RawChannelFrame> {
    synthesize_dispatch(field, layout, geom, pulse, options, timestamp_ns, false)
}

/// Always-sequential twin of [`synthesize`].
pub fn synthesize_seq(
    field: &ScattererField,
    layout: &ScanlineLayout,
    geom: &TransducerGeometry,
    pulse: &PulseModel,
    options: &SynthOptions,
    timestamp_ns: u64,
) -> Result<RawChannelFrame> {
    synthesize_dispatch(field, layout, geom, pulse, options, timestamp_ns, true)
}

#[allow(clippy::too_many_arguments)]
fn synthesize_dispatch(
    field: &ScattererField,
    layout: &ScanlineLayout,
    geom: &TransducerGeometry,
    pulse: &PulseModel,
    options: &SynthOptions,
    timestamp_ns: u64,
    force_seq: bool,
) -> Result<RawChannelFrame> {
    let mut float = synthesize_channels_dispatch(field, layout, geom, pulse, options, force_seq)?;

    if let Some(noise_db) = field.background_noise_db {
        let sigma = 10f64.powf(noise_db / 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(options.noise_seed);
        add_gaussian_noise(&mut float, sigma, &mut rng);
    }

    let peak = float.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 {
        (i16::MAX as f64) / (peak as f64 * 10f64.powf(options.headroom_db / 20.0))
    } else {
        0.0
    };
    let samples: Vec<i16> = float
        .iter()
        .map(|v| (*v as f64 * scale).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16)
        .collect();

    RawChannelFrame::new(
        samples,
        layout.transmit_count,
        layout.element_count(),
        layout.samples_per_line,
        layout.sample_frequency_hz,
        timestamp_ns,
        layout.id(),
    )
}

fn add_gaussian_noise(signal: &mut [f32], sigma: f64, rng: &mut ChaCha8Rng) {
    use rand::Rng;
    // Box-Muller; two samples per draw.
    let mut pending: Option<f64> = None;
    for v in signal.iter_mut() {
        let z = match pending.take() {
            Some(z) => z,
            None => {
                let u1: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                let u2: f64 = rng.random();
                let r = (-2.0 * u1.ln()).sqrt();
                let (s, c) = (2.0 * std::f64::consts::PI * u2).sin_cos();
                pending = Some(r * s);
                r * c
            }
        };
        *v += (sigma * z) as f32;
    }
}

fn check_consistency(layout: &ScanlineLayout, geom: &TransducerGeometry) -> Result<()> {
    if layout.element_count() != geom.element_count() {
        return Err(Error::Structure(format!(
            "layout has {} receive elements, geometry has {}",
            layout.element_count(),
            geom.element_count()
        )));
    }
    if (layout.center_frequency_hz - geom.center_frequency_hz).abs() > 1e-6 {
        return Err(Error::Structure(
            "layout and geometry disagree on center frequency".into(),
        ));
    }
    Ok(())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::make_linear_layout;

    fn single_element_setup() -> (TransducerGeometry, ScanlineLayout) {
        let geom = TransducerGeometry::linear(1, 0.3, 5e6).unwrap();
        let layout = make_linear_layout(&geom, 2, 1, 30.0, 20.0, 1600, 40e6, 1540.0).unwrap();
        (geom, layout)
    }

    fn small_setup() -> (TransducerGeometry, ScanlineLayout) {
        let geom = TransducerGeometry::linear(16, 0.3, 5e6).unwrap();
        let layout = make_linear_layout(&geom, 8, 1, 15.0, 10.0, 800, 40e6, 1540.0).unwrap();
        (geom, layout)
    }

    #[test]
    fn empty_field_gives_all_zero_frame() {
        let (geom, layout) = small_setup();
        let frame = synthesize(
            &ScattererField::default(),
            &layout,
            &geom,
            &PulseModel::new(5e6),
            &SynthOptions::default(),
            0,
        )
        .unwrap();
        assert!(frame.samples.iter().all(|v| *v == 0));
    }

    #[test]
    fn on_axis_scatterer_echo_arrives_at_round_trip_time() {
        let (geom, layout) = single_element_setup();
        let field = wire_phantom(&[20.0]);
        let frame = synthesize(
            &field,
            &layout,
            &geom,
            &PulseModel::new(5e6),
            &SynthOptions::default(),
            0,
        )
        .unwrap();
        // t = 2 * 0.020 / 1540 = 25.97 us; at 40 MHz that is sample 1039.
        let t: f64 = 2.0 * 0.020 / 1540.0;
        assert!((t - 25.97e-6).abs() < 5e-9);
        let expected = (t * 40e6).round() as usize;

        // The pulse envelope peaks at the arrival; find the |.| argmax of
        // the single channel of event 0.
        let channel = frame.channel(0, 0);
        let peak = channel
            .iter()
            .enumerate()
            .max_by_key(|(_, v)| (v.unsigned_abs()) as u32)
            .map(|(i, _)| i)
            .unwrap();
        assert!(
            (peak as isize - expected as isize).abs() <= 1,
            "peak {peak}, expected {expected}"
        );
    }

    #[test]
    fn quantization_leaves_requested_headroom() {
        let (geom, layout) = small_setup();
        let field = wire_phantom(&[10.0]);
        let frame = synthesize(
            &field,
            &layout,
            &geom,
            &PulseModel::new(5e6),
            &SynthOptions::default(),
            0,
        )
        .unwrap();
        let peak = frame.samples.iter().map(|v| v.unsigned_abs()).max().unwrap();
        let expected = (i16::MAX as f64 / 10f64.powf(12.0 / 20.0)).round() as u16;
        assert!((peak as i32 - expected as i32).abs() <= 1, "peak {peak} vs {expected}");
    }

    #[test]
    fn superposition_of_fields() {
        let (geom, layout) = small_setup();
        let a = ScattererField {
            scatterers: vec![Scatterer { position_mm: [-1.0, 0.0, 8.0], reflectivity: 1.0 }],
            background_noise_db: None,
        };
        let b = ScattererField {
            scatterers: vec![Scatterer { position_mm: [1.5, 0.0, 11.0], reflectivity: 0.4 }],
            background_noise_db: None,
        };
        let mut union = a.clone();
        union.scatterers.extend(b.scatterers.iter().cloned());
        let pulse = PulseModel::new(5e6);
        let opts = SynthOptions::default();
        let sa = synthesize_channels(&a, &layout, &geom, &pulse, &opts).unwrap();
        let sb = synthesize_channels(&b, &layout, &geom, &pulse, &opts).unwrap();
        let su = synthesize_channels(&union, &layout, &geom, &pulse, &opts).unwrap();
        let scale = su.iter().fold(0.0f32, |m, v| m.max(v.abs())).max(1e-20);
        for i in 0..su.len() {
            let sum = sa[i] + sb[i];
            assert!(
                ((su[i] - sum) / scale).abs() < 1e-6,
                "sample {i}: {} vs {}",
                su[i],
                sum
            );
        }
    }

    #[test]
    fn mirrored_field_permutes_channels_exactly() {
        let (geom, layout) = small_setup();
        let field = ScattererField {
            scatterers: vec![
                Scatterer { position_mm: [2.1, 0.0, 9.0], reflectivity: 1.0 },
                Scatterer { position_mm: [-0.7, 0.0, 6.0], reflectivity: 0.5 },
            ],
            background_noise_db: None,
        };
        let mirrored = ScattererField {
            scatterers: field
                .scatterers
                .iter()
                .map(|s| Scatterer {
                    position_mm: [-s.position_mm[0], s.position_mm[1], s.position_mm[2]],
                    reflectivity: s.reflectivity,
                })
                .collect(),
            background_noise_db: None,
        };
        let pulse = PulseModel::new(5e6);
        let opts = SynthOptions::default();
        let original = synthesize_channels(&field, &layout, &geom, &pulse, &opts).unwrap();
        let flipped = synthesize_channels(&mirrored, &layout, &geom, &pulse, &opts).unwrap();

        let channels = layout.element_count();
        let n = layout.samples_per_line;
        let events = layout.transmit_count;
        for ev in 0..events {
            let ev_m = events - 1 - ev;
            for e in 0..channels {
                let e_m = channels - 1 - e;
                for k in 0..n {
                    let a = original[(ev * channels + e) * n + k];
                    let b = flipped[(ev_m * channels + e_m) * n + k];
                    assert_eq!(a, b, "event {ev} channel {e} sample {k}");
                }
            }
        }
    }

    #[test]
    fn noise_is_deterministic_per_seed() {
        let (geom, layout) = small_setup();
        let mut field = wire_phantom(&[8.0]);
        field.background_noise_db = Some(-30.0);
        let pulse = PulseModel::new(5e6);
        let opts = SynthOptions::default();
        let a = synthesize(&field, &layout, &geom, &pulse, &opts, 0).unwrap();
        let b = synthesize(&field, &layout, &geom, &pulse, &opts, 0).unwrap();
        assert_eq!(a.samples, b.samples);
        let other = SynthOptions { noise_seed: 99, ..SynthOptions::default() };
        let c = synthesize(&field, &layout, &geom, &pulse, &other, 0).unwrap();
        assert_ne!(a.samples, c.samples);
    }

    #[test]
    fn scatterer_json_parsing() {
        let field = ScattererField::from_json_str(
            r#"[{"x": 0.0, "y": 0.0, "z": 20.0, "reflectivity": 1.0},
                {"x": -3.5, "y": 1.0, "z": 15.0, "reflectivity": 0.25}]"#,
        )
        .unwrap();
        assert_eq!(field.scatterers.len(), 2);
        assert_eq!(field.scatterers[1].position_mm, [-3.5, 1.0, 15.0]);
        assert!(ScattererField::from_json_str("not json").is_err());
        assert!(
            ScattererField::from_json_str(r#"[{"x":0,"y":0,"z":1,"reflectivity":-2}]"#).is_err()
        );
    }

    #[test]
    fn wire_phantom_places_scatterers_on_axis() {
        let field = wire_phantom(&[5.0, 10.0, 15.0, 20.0, 25.0]);
        assert_eq!(field.scatterers.len(), 5);
        for (s, z) in field.scatterers.iter().zip([5.0, 10.0, 15.0, 20.0, 25.0]) {
            assert_eq!(s.position_mm, [0.0, 0.0, z]);
            assert_eq!(s.reflectivity, 1.0);
        }
        assert!(wire_phantom(&[]).scatterers.is_empty());
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let (geom, layout) = small_setup();
        let field = wire_phantom(&[6.0, 12.0]);
        let pulse = PulseModel::new(5e6);
        let opts = SynthOptions::default();
        let a = synthesize(&field, &layout, &geom, &pulse, &opts, 3).unwrap();
        let b = synthesize_seq(&field, &layout, &geom, &pulse, &opts, 3).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
