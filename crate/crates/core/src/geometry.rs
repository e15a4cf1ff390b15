//! Transducer array geometry and scanline layout construction.
//!
//! A [`ScanlineLayout`] fully describes one acquisition sweep: where every
//! receive scanline sits, how the transmit events that insonify them are
//! focused (per-element delays and apodization), and the receive sampling
//! parameters. Layouts are pure values — constructing one has no side
//! effects and the result is immutable, so layouts can be shared freely
//! across concurrent pipeline stages.
//!
//! Positions are in millimeters in the transducer frame: x lateral,
//! y elevational, z depth (away from the array face). Delays are seconds.

use serde::{Deserialize, Serialize};

use crate::window::WindowKind;
use crate::{Error, Result};

/// Default speed of sound in soft tissue, m/s.
pub const DEFAULT_SPEED_OF_SOUND: f64 = 1540.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrayKind {
    Linear,
    Phased,
    MatrixPhased,
}

/// Physical description of a transducer array. Elements form a regular
/// grid centered on the array origin; element (i, j) sits at
/// `((i - (nx-1)/2) * pitch_x, (j - (ny-1)/2) * pitch_y, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerGeometry {
    pub element_count_x: usize,
    /// 1 for 1-D arrays.
    pub element_count_y: usize,
    pub pitch_x_mm: f64,
    pub pitch_y_mm: f64,
    pub center_frequency_hz: f64,
    pub array_kind: ArrayKind,
}

impl TransducerGeometry {
    pub fn new(
        element_count_x: usize,
        element_count_y: usize,
        pitch_x_mm: f64,
        pitch_y_mm: f64,
        center_frequency_hz: f64,
        array_kind: ArrayKind,
    ) -> Result<Self> {
        if element_count_x == 0 || element_count_y == 0 {
            return Err(Error::Parameter("element counts must be positive".into()));
        }
        if pitch_x_mm <= 0.0 || pitch_y_mm <= 0.0 {
            return Err(Error::Parameter("element pitch must be positive".into()));
        }
        if center_frequency_hz <= 0.0 {
            return Err(Error::Parameter("center frequency must be positive".into()));
        }
        Ok(Self {
            element_count_x,
            element_count_y,
            pitch_x_mm,
            pitch_y_mm,
            center_frequency_hz,
            array_kind,
        })
    }

    /// 1-D array along x.
    pub fn linear(element_count: usize, pitch_mm: f64, center_frequency_hz: f64) -> Result<Self> {
        Self::new(
            element_count,
            1,
            pitch_mm,
            pitch_mm,
            center_frequency_hz,
            ArrayKind::Linear,
        )
    }

    pub fn element_count(&self) -> usize {
        self.element_count_x * self.element_count_y
    }

    /// Position of element (i, j) in millimeters.
    pub fn element_position_mm(&self, i: usize, j: usize) -> [f64; 3] {
        [
            (i as f64 - (self.element_count_x as f64 - 1.0) / 2.0) * self.pitch_x_mm,
            (j as f64 - (self.element_count_y as f64 - 1.0) / 2.0) * self.pitch_y_mm,
            0.0,
        ]
    }

    /// All element positions, x-major index `e = j * nx + i`.
    pub fn element_positions_mm(&self) -> Vec<[f64; 3]> {
        let mut positions = Vec::with_capacity(self.element_count());
        for j in 0..self.element_count_y {
            for i in 0..self.element_count_x {
                positions.push(self.element_position_mm(i, j));
            }
        }
        positions
    }

    /// Lateral aperture span `(nx - 1) * pitch_x` in millimeters.
    pub fn aperture_span_x_mm(&self) -> f64 {
        (self.element_count_x as f64 - 1.0) * self.pitch_x_mm
    }

    pub fn aperture_span_y_mm(&self) -> f64 {
        (self.element_count_y as f64 - 1.0) * self.pitch_y_mm
    }
}

/// One receive scanline plus the transmit focusing that insonified it.
///
/// `transmit_delays_s` and `transmit_apodization` describe the transmit
/// event assigned to this line (for multi-line layouts several lines share
/// one event and therefore carry identical transmit data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scanline {
    pub origin_mm: [f64; 3],
    /// Unit vector from the origin into the medium.
    pub direction: [f64; 3],
    pub transmit_focus_depth_mm: f64,
    pub max_depth_mm: f64,
    /// Per-element firing delay, normalized so the earliest active element
    /// fires at exactly 0 s. Inactive elements carry 0.
    pub transmit_delays_s: Vec<f64>,
    /// Per-element transmit weight in [0, 1]; 0 marks an inactive element.
    pub transmit_apodization: Vec<f64>,
}

/// How multi-line receive counts relate to transmit events.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MultilineConvention {
    /// Transmit lines coincide with every M-th receive line:
    /// `lines = transmits * M - (M - 1)`. 128 transmits at M=2 give 255 lines.
    Interleaved,
    /// M receive lines per transmit block: `lines = transmits * M`.
    Block,
}

/// Geometric family of a layout, with the data scan conversion needs to
/// invert the scan geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayoutKind {
    /// Parallel lines along +z, origins spread across the aperture.
    Linear,
    /// All origins at the array center, directions fanning over the field
    /// of view (y axis unused for 2D fans).
    Phased { fov_x_deg: f64, fov_y_deg: f64 },
}

/// Full description of an acquisition sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanlineLayout {
    /// Receive scanlines, index `ly * line_count_x + lx`.
    pub scanlines: Vec<Scanline>,
    pub line_count_x: usize,
    pub line_count_y: usize,
    /// Number of physical transmit events in one sweep.
    pub transmit_count: usize,
    /// Receive lines reconstructed per transmit event (M).
    pub multiline: usize,
    pub convention: MultilineConvention,
    pub samples_per_line: usize,
    pub sample_frequency_hz: f64,
    pub speed_of_sound_m_s: f64,
    /// Copied from the generating geometry; used by downstream stages
    /// (demodulation band defaults, pulse models).
    pub center_frequency_hz: f64,
    /// Receive channel positions; channel k of a raw frame is element k.
    pub element_positions_mm: Vec<[f64; 3]>,
    /// Beam origin of each physical transmit event (the focal reference
    /// echoes are timed against).
    pub transmit_origins_mm: Vec<[f64; 3]>,
    pub kind: LayoutKind,
    content_hash: u64,
}

impl ScanlineLayout {
    pub fn line_count(&self) -> usize {
        self.line_count_x * self.line_count_y
    }

    pub fn element_count(&self) -> usize {
        self.element_positions_mm.len()
    }

    /// Content hash identifying this layout in frames and recorded files.
    pub fn id(&self) -> u64 {
        self.content_hash
    }

    /// Depth of receive sample `k` along a scanline, in millimeters.
    pub fn depth_of_sample_mm(&self, k: usize) -> f64 {
        k as f64 * self.sample_pitch_mm()
    }

    /// Spacing between receive depth samples, millimeters.
    pub fn sample_pitch_mm(&self) -> f64 {
        self.speed_of_sound_m_s / (2.0 * self.sample_frequency_hz) * 1e3
    }

    /// JSON dump of element positions and per-line focusing for plotting.
    pub fn debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "element_positions_mm": self.element_positions_mm,
            "line_count_x": self.line_count_x,
            "line_count_y": self.line_count_y,
            "transmit_count": self.transmit_count,
            "multiline": self.multiline,
            "samples_per_line": self.samples_per_line,
            "sample_frequency_hz": self.sample_frequency_hz,
            "speed_of_sound_m_s": self.speed_of_sound_m_s,
            "scanlines": self.scanlines.iter().map(|s| serde_json::json!({
                "origin_mm": s.origin_mm,
                "direction": s.direction,
                "transmit_focus_depth_mm": s.transmit_focus_depth_mm,
                "max_depth_mm": s.max_depth_mm,
                "transmit_delays_s": s.transmit_delays_s,
                "transmit_apodization": s.transmit_apodization,
            })).collect::<Vec<_>>(),
        })
    }

    fn finish(mut self) -> Self {
        self.content_hash = hash_layout(&self);
        self
    }
}

/// Minimum receive samples so the window covers a round trip to `depth_mm`.
pub fn samples_for_depth(depth_mm: f64, sample_frequency_hz: f64, speed_of_sound_m_s: f64) -> usize {
    (2.0 * depth_mm * 1e-3 / speed_of_sound_m_s * sample_frequency_hz).ceil() as usize
}

/// Options for [`make_linear_layout_with`] beyond the common parameters.
#[derive(Debug, Clone)]
pub struct LinearLayoutOptions {
    pub convention: MultilineConvention,
    /// Number of contiguous elements active per transmit, walking with the
    /// line position. `None` uses the full aperture. The vendor behavior
    /// for channel-limited probes is not modeled; this knob makes the
    /// choice explicit instead.
    pub active_elements: Option<usize>,
    pub transmit_window: WindowKind,
}

impl Default for LinearLayoutOptions {
    fn default() -> Self {
        Self {
            convention: MultilineConvention::Interleaved,
            active_elements: None,
            transmit_window: WindowKind::Hann,
        }
    }
}

/// Build a linear-scan layout: `line_count` transmit positions evenly
/// spread across the aperture, all directions (0, 0, 1), and
/// `multiline` receive lines reconstructed per transmit event.
#[allow(clippy::too_many_arguments)]
pub fn make_linear_layout(
    geom: &TransducerGeometry,
    line_count: usize,
    multiline: usize,
    depth_mm: f64,
    focus_depth_mm: f64,
    samples_per_line: usize,
    sample_frequency_hz: f64,
    speed_of_sound_m_s: f64,
) -> Result<ScanlineLayout> {
    make_linear_layout_with(
        geom,
        line_count,
        multiline,
        depth_mm,
        focus_depth_mm,
        samples_per_line,
        sample_frequency_hz,
        speed_of_sound_m_s,
        &LinearLayoutOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn make_linear_layout_with(
    geom: &TransducerGeometry,
    line_count: usize,
    multiline: usize,
    depth_mm: f64,
    focus_depth_mm: f64,
    samples_per_line: usize,
    sample_frequency_hz: f64,
    speed_of_sound_m_s: f64,
    options: &LinearLayoutOptions,
) -> Result<ScanlineLayout> {
    if geom.array_kind != ArrayKind::Linear {
        return Err(Error::Parameter(format!(
            "linear layout requires a linear array, got {:?}",
            geom.array_kind
        )));
    }
    if line_count < 2 {
        return Err(Error::Parameter(format!(
            "line count must be at least 2, got {line_count}"
        )));
    }
    if multiline < 1 {
        return Err(Error::Parameter(format!(
            "multiline factor must be at least 1, got {multiline}"
        )));
    }
    check_sweep_params(
        depth_mm,
        focus_depth_mm,
        samples_per_line,
        sample_frequency_hz,
        speed_of_sound_m_s,
    )?;
    if let Some(active) = options.active_elements {
        if active == 0 || active > geom.element_count_x {
            return Err(Error::Parameter(format!(
                "active aperture of {active} elements invalid for {} element array",
                geom.element_count_x
            )));
        }
    }

    let span = geom.aperture_span_x_mm();
    let receive_count = match options.convention {
        MultilineConvention::Interleaved => (line_count - 1) * multiline + 1,
        MultilineConvention::Block => line_count * multiline,
    };

    // Transmit focusing is computed once per event and shared by the
    // receive lines reconstructed from it.
    let transmit_origins: Vec<[f64; 3]> = (0..line_count)
        .map(|t| [line_position(t, line_count, span), 0.0, 0.0])
        .collect();
    let events: Vec<(Vec<f64>, Vec<f64>)> = transmit_origins
        .iter()
        .map(|origin| {
            transmit_focus(
                geom,
                *origin,
                [0.0, 0.0, 1.0],
                focus_depth_mm,
                speed_of_sound_m_s,
                options.active_elements,
                options.transmit_window,
            )
        })
        .collect();

    let scanlines = (0..receive_count)
        .map(|j| {
            let x = line_position(j, receive_count, span);
            let event = (j / multiline).min(line_count - 1);
            let (delays, apod) = events[event].clone();
            Scanline {
                origin_mm: [x, 0.0, 0.0],
                direction: [0.0, 0.0, 1.0],
                transmit_focus_depth_mm: focus_depth_mm,
                max_depth_mm: depth_mm,
                transmit_delays_s: delays,
                transmit_apodization: apod,
            }
        })
        .collect();

    Ok(ScanlineLayout {
        scanlines,
        line_count_x: receive_count,
        line_count_y: 1,
        transmit_count: line_count,
        multiline,
        convention: options.convention,
        samples_per_line,
        sample_frequency_hz,
        speed_of_sound_m_s,
        center_frequency_hz: geom.center_frequency_hz,
        element_positions_mm: geom.element_positions_mm(),
        transmit_origins_mm: transmit_origins,
        kind: LayoutKind::Linear,
        content_hash: 0,
    }
    .finish())
}

/// Build a phased (sector) layout: all origins at the array center,
/// directions uniformly sampling `[-fov/2, +fov/2]` per axis. For matrix
/// arrays the two steering angles compose as successive rotations about
/// the elevational and lateral axes.
#[allow(clippy::too_many_arguments)]
pub fn make_phased_layout(
    geom: &TransducerGeometry,
    lines_x: usize,
    lines_y: usize,
    fov_x_deg: f64,
    fov_y_deg: f64,
    depth_mm: f64,
    focus_depth_mm: f64,
    samples_per_line: usize,
    sample_frequency_hz: f64,
    speed_of_sound_m_s: f64,
) -> Result<ScanlineLayout> {
    match geom.array_kind {
        ArrayKind::Phased => {
            if lines_y != 1 || fov_y_deg != 0.0 {
                return Err(Error::Parameter(
                    "2D phased layouts require lines_y = 1 and fov_y = 0".into(),
                ));
            }
        }
        ArrayKind::MatrixPhased => {}
        ArrayKind::Linear => {
            return Err(Error::Parameter(
                "phased layout requires a phased or matrix-phased array".into(),
            ));
        }
    }
    if lines_x == 0 || lines_y == 0 {
        return Err(Error::Parameter("line counts must be positive".into()));
    }
    if fov_x_deg >= 180.0 || fov_y_deg >= 180.0 || fov_x_deg < 0.0 || fov_y_deg < 0.0 {
        return Err(Error::Parameter(format!(
            "field of view must lie in [0, 180) degrees, got {fov_x_deg} x {fov_y_deg}"
        )));
    }
    check_sweep_params(
        depth_mm,
        focus_depth_mm,
        samples_per_line,
        sample_frequency_hz,
        speed_of_sound_m_s,
    )?;

    let mut scanlines = Vec::with_capacity(lines_x * lines_y);
    for ly in 0..lines_y {
        let theta_y = fan_angle_rad(ly, lines_y, fov_y_deg);
        for lx in 0..lines_x {
            let theta_x = fan_angle_rad(lx, lines_x, fov_x_deg);
            let direction = steer_direction(theta_x, theta_y);
            let (delays, apod) = transmit_focus(
                geom,
                [0.0, 0.0, 0.0],
                direction,
                focus_depth_mm,
                speed_of_sound_m_s,
                None,
                WindowKind::Hann,
            );
            scanlines.push(Scanline {
                origin_mm: [0.0, 0.0, 0.0],
                direction,
                transmit_focus_depth_mm: focus_depth_mm,
                max_depth_mm: depth_mm,
                transmit_delays_s: delays,
                transmit_apodization: apod,
            });
        }
    }

    Ok(ScanlineLayout {
        scanlines,
        line_count_x: lines_x,
        line_count_y: lines_y,
        transmit_count: lines_x * lines_y,
        multiline: 1,
        convention: MultilineConvention::Interleaved,
        samples_per_line,
        sample_frequency_hz,
        speed_of_sound_m_s,
        center_frequency_hz: geom.center_frequency_hz,
        element_positions_mm: geom.element_positions_mm(),
        transmit_origins_mm: vec![[0.0, 0.0, 0.0]; lines_x * lines_y],
        kind: LayoutKind::Phased {
            fov_x_deg,
            fov_y_deg,
        },
        content_hash: 0,
    }
    .finish())
}

/// Per-element transmit delays focusing `scanline`'s beam at
/// `origin + focus_depth * direction`: `delay(e) = (max_d - d(e)) / c`
/// where `d(e)` is the distance from element `e` to the focal point. All
/// wavefronts arrive at the focus simultaneously and the farthest element
/// fires at exactly 0 s.
pub fn transmit_delays(
    geom: &TransducerGeometry,
    scanline: &Scanline,
    speed_of_sound_m_s: f64,
) -> Result<Vec<f64>> {
    if scanline.transmit_focus_depth_mm <= 0.0 {
        return Err(Error::Parameter(format!(
            "focus depth must be positive, got {}",
            scanline.transmit_focus_depth_mm
        )));
    }
    let (delays, _) = transmit_focus(
        geom,
        scanline.origin_mm,
        scanline.direction,
        scanline.transmit_focus_depth_mm,
        speed_of_sound_m_s,
        None,
        WindowKind::Rectangular,
    );
    Ok(delays)
}

fn check_sweep_params(
    depth_mm: f64,
    focus_depth_mm: f64,
    samples_per_line: usize,
    sample_frequency_hz: f64,
    speed_of_sound_m_s: f64,
) -> Result<()> {
    if depth_mm <= 0.0 {
        return Err(Error::Parameter(format!(
            "imaging depth must be positive, got {depth_mm}"
        )));
    }
    if focus_depth_mm <= 0.0 {
        return Err(Error::Parameter(format!(
            "focus depth must be positive, got {focus_depth_mm}"
        )));
    }
    if sample_frequency_hz <= 0.0 || speed_of_sound_m_s <= 0.0 {
        return Err(Error::Parameter(
            "sample frequency and speed of sound must be positive".into(),
        ));
    }
    let required = samples_for_depth(depth_mm, sample_frequency_hz, speed_of_sound_m_s);
    if samples_per_line < required {
        return Err(Error::Parameter(format!(
            "{samples_per_line} samples per line cannot cover {depth_mm} mm; at least {required} required"
        )));
    }
    Ok(())
}

/// Evenly spaced lateral positions spanning the aperture, endpoints
/// included. The centered form `(i - (n-1)/2) * step` makes the grid
/// exactly antisymmetric and keeps coarse positions bit-exact when `n`
/// refines to `2n - 1`.
fn line_position(i: usize, n: usize, span_mm: f64) -> f64 {
    if n == 1 {
        return 0.0;
    }
    (i as f64 - (n as f64 - 1.0) / 2.0) * (span_mm / (n as f64 - 1.0))
}

fn fan_angle_rad(i: usize, n: usize, fov_deg: f64) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let fov = fov_deg.to_radians();
    (i as f64 - (n as f64 - 1.0) / 2.0) * (fov / (n as f64 - 1.0))
}

/// Compose the two steering angles: first tilt about the lateral axis by
/// `theta_y`, then about the elevational axis by `theta_x`.
fn steer_direction(theta_x: f64, theta_y: f64) -> [f64; 3] {
    [
        theta_x.sin() * theta_y.cos(),
        theta_y.sin(),
        theta_x.cos() * theta_y.cos(),
    ]
}

/// Delays and apodization for one transmit event. Delays are normalized so
/// the earliest-firing active element is exactly 0; inactive elements get
/// delay 0 and weight 0.
fn transmit_focus(
    geom: &TransducerGeometry,
    origin_mm: [f64; 3],
    direction: [f64; 3],
    focus_depth_mm: f64,
    speed_of_sound_m_s: f64,
    active_elements: Option<usize>,
    window: WindowKind,
) -> (Vec<f64>, Vec<f64>) {
    let focus = [
        origin_mm[0] + focus_depth_mm * direction[0],
        origin_mm[1] + focus_depth_mm * direction[1],
        origin_mm[2] + focus_depth_mm * direction[2],
    ];

    let nx = geom.element_count_x;
    let ny = geom.element_count_y;
    let active_x = active_elements.unwrap_or(nx).min(nx);

    // Contiguous active window centered (as nearly as possible) on the
    // event origin's lateral position.
    let first_active = if active_x == nx {
        0
    } else {
        let center = (origin_mm[0] / geom.pitch_x_mm + (nx as f64 - 1.0) / 2.0).round() as isize;
        let lo = center - (active_x as isize - 1) / 2;
        lo.clamp(0, (nx - active_x) as isize) as usize
    };
    let active = first_active..first_active + active_x;

    let half_x = (active_x.max(2) as f64 - 1.0) / 2.0 * geom.pitch_x_mm;
    let half_y = (ny.max(2) as f64 - 1.0) / 2.0 * geom.pitch_y_mm;
    let active_center_x = {
        let first = geom.element_position_mm(active.start, 0)[0];
        let last = geom.element_position_mm(active.end - 1, 0)[0];
        (first + last) / 2.0
    };

    let count = geom.element_count();
    let mut delays = vec![0.0; count];
    let mut apod = vec![0.0; count];
    let mut max_distance = f64::NEG_INFINITY;

    for j in 0..ny {
        for i in active.clone() {
            let p = geom.element_position_mm(i, j);
            let d = distance(p, focus);
            max_distance = max_distance.max(d);
        }
    }

    for j in 0..ny {
        for i in 0..nx {
            let e = j * nx + i;
            if !active.contains(&i) {
                continue;
            }
            let p = geom.element_position_mm(i, j);
            let d = distance(p, focus);
            delays[e] = (max_distance - d) * 1e-3 / speed_of_sound_m_s;
            let ux = if half_x > 0.0 {
                (p[0] - active_center_x) / half_x
            } else {
                0.0
            };
            let uy = if ny > 1 { p[1] / half_y } else { 0.0 };
            apod[e] = window.evaluate(ux) * window.evaluate(uy);
        }
    }
    (delays, apod)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// FNV-1a over a canonical byte serialization of the layout.
fn hash_layout(layout: &ScanlineLayout) -> u64 {
    let mut h = Fnv::new();
    h.u64(match layout.kind {
        LayoutKind::Linear => 0,
        LayoutKind::Phased { .. } => 1,
    });
    if let LayoutKind::Phased {
        fov_x_deg,
        fov_y_deg,
    } = layout.kind
    {
        h.f64(fov_x_deg);
        h.f64(fov_y_deg);
    }
    h.u64(layout.line_count_x as u64);
    h.u64(layout.line_count_y as u64);
    h.u64(layout.transmit_count as u64);
    h.u64(layout.multiline as u64);
    h.u64(match layout.convention {
        MultilineConvention::Interleaved => 0,
        MultilineConvention::Block => 1,
    });
    h.u64(layout.samples_per_line as u64);
    h.f64(layout.sample_frequency_hz);
    h.f64(layout.speed_of_sound_m_s);
    h.f64(layout.center_frequency_hz);
    for p in layout
        .element_positions_mm
        .iter()
        .chain(&layout.transmit_origins_mm)
    {
        h.f64(p[0]);
        h.f64(p[1]);
        h.f64(p[2]);
    }
    for line in &layout.scanlines {
        for v in line.origin_mm.iter().chain(&line.direction) {
            h.f64(*v);
        }
        h.f64(line.transmit_focus_depth_mm);
        h.f64(line.max_depth_mm);
        for v in &line.transmit_delays_s {
            h.f64(*v);
        }
        for v in &line.transmit_apodization {
            h.f64(*v);
        }
    }
    h.finish()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.byte(b);
        }
    }
    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe_128() -> TransducerGeometry {
        TransducerGeometry::linear(128, 0.3, 7.0e6).unwrap()
    }

    fn layout_128(lines: usize, multiline: usize) -> ScanlineLayout {
        make_linear_layout(&probe_128(), lines, multiline, 45.0, 20.0, 2400, 40e6, 1540.0)
            .unwrap()
    }

    #[test]
    fn element_grid_is_centered() {
        let geom = probe_128();
        let first = geom.element_position_mm(0, 0);
        let last = geom.element_position_mm(127, 0);
        assert!((first[0] + last[0]).abs() < 1e-12);
        assert!((last[0] - first[0] - 38.1).abs() < 1e-9);
    }

    #[test]
    fn linear_layout_spans_aperture() {
        let layout = layout_128(128, 1);
        assert_eq!(layout.line_count(), 128);
        assert_eq!(layout.transmit_count, 128);
        let first = layout.scanlines.first().unwrap().origin_mm[0];
        let last = layout.scanlines.last().unwrap().origin_mm[0];
        assert!((last - first - 38.1).abs() < 1e-9);
        for line in &layout.scanlines {
            assert_eq!(line.direction, [0.0, 0.0, 1.0]);
        }
    }

    #[test]
    fn interleaved_multiline_reconstructs_255_from_128() {
        let layout = layout_128(128, 2);
        assert_eq!(layout.line_count(), 255);
        assert_eq!(layout.transmit_count, 128);
        // Every second receive line coincides with a transmit position.
        let single = layout_128(128, 1);
        for t in 0..128 {
            assert_eq!(
                layout.scanlines[2 * t].origin_mm[0],
                single.scanlines[t].origin_mm[0]
            );
        }
    }

    #[test]
    fn block_multiline_counts() {
        let opts = LinearLayoutOptions {
            convention: MultilineConvention::Block,
            ..Default::default()
        };
        let layout = make_linear_layout_with(
            &probe_128(),
            128,
            2,
            45.0,
            20.0,
            2400,
            40e6,
            1540.0,
            &opts,
        )
        .unwrap();
        assert_eq!(layout.line_count(), 256);
    }

    #[test]
    fn two_lines_sit_at_aperture_extremes() {
        let layout = make_linear_layout(&probe_128(), 2, 1, 45.0, 20.0, 2400, 40e6, 1540.0)
            .unwrap();
        assert_eq!(layout.line_count(), 2);
        assert!((layout.scanlines[0].origin_mm[0] + 19.05).abs() < 1e-12);
        assert!((layout.scanlines[1].origin_mm[0] - 19.05).abs() < 1e-12);
    }

    #[test]
    fn degenerate_parameters_rejected() {
        let geom = probe_128();
        assert!(make_linear_layout(&geom, 1, 1, 45.0, 20.0, 2400, 40e6, 1540.0).is_err());
        assert!(make_linear_layout(&geom, 64, 0, 45.0, 20.0, 2400, 40e6, 1540.0).is_err());
        assert!(make_linear_layout(&geom, 64, 1, -1.0, 20.0, 2400, 40e6, 1540.0).is_err());
        // Receive window too short for the requested depth.
        assert!(make_linear_layout(&geom, 64, 1, 45.0, 20.0, 100, 40e6, 1540.0).is_err());
    }

    #[test]
    fn receive_window_covers_depth() {
        for layout in [layout_128(64, 1), layout_128(128, 2)] {
            for line in &layout.scanlines {
                let round_trip = 2.0 * line.max_depth_mm * 1e-3 / layout.speed_of_sound_m_s;
                let window = layout.samples_per_line as f64 / layout.sample_frequency_hz;
                assert!(round_trip <= window);
            }
        }
    }

    #[test]
    fn refined_layout_keeps_coarse_line_positions() {
        let coarse = layout_128(65, 1);
        let fine = layout_128(129, 1);
        for (i, line) in coarse.scanlines.iter().enumerate() {
            assert_eq!(line.origin_mm[0], fine.scanlines[2 * i].origin_mm[0]);
        }
    }

    #[test]
    fn phased_fan_512_lines_60_degrees() {
        let geom =
            TransducerGeometry::new(32, 32, 0.3, 0.3, 7.0e6, ArrayKind::MatrixPhased).unwrap();
        let layout =
            make_phased_layout(&geom, 32, 16, 60.0, 60.0, 70.0, 40.0, 3700, 40e6, 1540.0)
                .unwrap();
        assert_eq!(layout.line_count(), 512);
        assert_eq!(layout.transmit_count, 512);
        for line in &layout.scanlines {
            let norm: f64 = line.direction.iter().map(|d| d * d).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
            assert_eq!(line.origin_mm, [0.0, 0.0, 0.0]);
        }
        // Extreme steering reaches +/- 30 degrees in both axes.
        let extreme = 30f64.to_radians().sin();
        let max_x = layout
            .scanlines
            .iter()
            .map(|l| l.direction[0])
            .fold(f64::MIN, f64::max);
        let max_y = layout
            .scanlines
            .iter()
            .map(|l| l.direction[1])
            .fold(f64::MIN, f64::max);
        assert!((max_y - extreme).abs() < 1e-9);
        // x steering is composed with the elevational tilt, so compare at
        // the smallest |theta_y| line.
        assert!(max_x > extreme * 0.99);
    }

    #[test]
    fn single_phased_line_points_straight_down() {
        let geom = TransducerGeometry::new(64, 1, 0.3, 0.3, 5e6, ArrayKind::Phased).unwrap();
        let layout = make_phased_layout(&geom, 1, 1, 0.0, 0.0, 50.0, 25.0, 2600, 40e6, 1540.0)
            .unwrap();
        assert_eq!(layout.line_count(), 1);
        let d = layout.scanlines[0].direction;
        assert!((d[0]).abs() < 1e-15 && (d[1]).abs() < 1e-15 && (d[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_line_fan_angles() {
        let geom = TransducerGeometry::new(64, 1, 0.3, 0.3, 5e6, ArrayKind::Phased).unwrap();
        let layout = make_phased_layout(&geom, 3, 1, 60.0, 0.0, 50.0, 25.0, 2600, 40e6, 1540.0)
            .unwrap();
        let angles: Vec<f64> = layout
            .scanlines
            .iter()
            .map(|l| l.direction[0].atan2(l.direction[2]).to_degrees())
            .collect();
        assert!((angles[0] + 30.0).abs() < 1e-9);
        assert!(angles[1].abs() < 1e-9);
        assert!((angles[2] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn phased_angular_spacing_is_uniform() {
        let geom = TransducerGeometry::new(64, 1, 0.3, 0.3, 5e6, ArrayKind::Phased).unwrap();
        let layout = make_phased_layout(&geom, 33, 1, 75.0, 0.0, 50.0, 25.0, 2600, 40e6, 1540.0)
            .unwrap();
        let angles: Vec<f64> = layout
            .scanlines
            .iter()
            .map(|l| l.direction[0].atan2(l.direction[2]))
            .collect();
        let step = angles[1] - angles[0];
        for pair in angles.windows(2) {
            assert!((pair[1] - pair[0] - step).abs() < 1e-9);
        }
    }

    #[test]
    fn wide_fov_rejected() {
        let geom = TransducerGeometry::new(64, 1, 0.3, 0.3, 5e6, ArrayKind::Phased).unwrap();
        assert!(
            make_phased_layout(&geom, 3, 1, 180.0, 0.0, 50.0, 25.0, 2600, 40e6, 1540.0).is_err()
        );
    }

    #[test]
    fn element_below_focus_fires_last() {
        let layout = layout_128(128, 1);
        // Center line: its origin sits between elements 63 and 64.
        let line = &layout.scanlines[64];
        let delays = &line.transmit_delays_s;
        let max = delays.iter().cloned().fold(f64::MIN, f64::max);
        let argmax = delays.iter().position(|d| *d == max).unwrap();
        let origin_x = line.origin_mm[0];
        let nearest = (0..128)
            .min_by(|a, b| {
                let geom = probe_128();
                let da = (geom.element_position_mm(*a, 0)[0] - origin_x).abs();
                let db = (geom.element_position_mm(*b, 0)[0] - origin_x).abs();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert!((argmax as isize - nearest as isize).abs() <= 1);
        let min = delays.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(min, 0.0);
    }

    #[test]
    fn center_line_delays_are_mirror_symmetric() {
        let geom = TransducerGeometry::linear(64, 0.3, 5e6).unwrap();
        let layout = make_linear_layout(&geom, 63, 1, 40.0, 20.0, 2100, 40e6, 1540.0).unwrap();
        // Line 31 of 63 sits exactly on the array center.
        let line = &layout.scanlines[31];
        assert!(line.origin_mm[0].abs() < 1e-12);
        let d = &line.transmit_delays_s;
        for e in 0..64 {
            assert!((d[e] - d[63 - e]).abs() < 1e-12);
        }
    }

    #[test]
    fn delay_matches_direct_distance_computation() {
        // Element at 3 mm lateral offset, focus at 20 mm on the center
        // line: distance sqrt(20^2 + 3^2) = 20.2237 mm, checked against an
        // independent evaluation of the delay formula.
        let geom = TransducerGeometry::linear(41, 0.3, 5e6).unwrap();
        let scanline = Scanline {
            origin_mm: [0.0, 0.0, 0.0],
            direction: [0.0, 0.0, 1.0],
            transmit_focus_depth_mm: 20.0,
            max_depth_mm: 40.0,
            transmit_delays_s: vec![],
            transmit_apodization: vec![],
        };
        let delays = transmit_delays(&geom, &scanline, 1540.0).unwrap();
        // Element 30 sits at +3 mm ((30 - 20) * 0.3); the edge is at 6 mm.
        let d_offset = (20.0f64 * 20.0 + 3.0 * 3.0).sqrt();
        assert!((d_offset - 20.2237).abs() < 1e-4);
        let d_edge = (20.0f64 * 20.0 + 6.0 * 6.0).sqrt();
        let expected = (d_edge - d_offset) * 1e-3 / 1540.0;
        assert!((delays[30] - expected).abs() < 1e-15);
        assert_eq!(delays[0], 0.0);
        assert_eq!(delays[40], 0.0);
    }

    #[test]
    fn delay_profile_is_concave_along_aperture() {
        let layout = layout_128(128, 1);
        for line in layout.scanlines.iter().step_by(17) {
            let d = &line.transmit_delays_s;
            for e in 1..d.len() - 1 {
                let second_diff = d[e - 1] - 2.0 * d[e] + d[e + 1];
                assert!(second_diff <= 1e-15, "second difference {second_diff}");
            }
        }
    }

    #[test]
    fn apodization_within_unit_interval() {
        let layout = layout_128(96, 2);
        for line in &layout.scanlines {
            assert!(line
                .transmit_apodization
                .iter()
                .all(|w| (0.0..=1.0).contains(w)));
        }
    }

    #[test]
    fn walking_aperture_restricts_active_elements() {
        let opts = LinearLayoutOptions {
            active_elements: Some(32),
            ..Default::default()
        };
        let layout = make_linear_layout_with(
            &probe_128(),
            128,
            1,
            45.0,
            20.0,
            2400,
            40e6,
            1540.0,
            &opts,
        )
        .unwrap();
        for line in &layout.scanlines {
            let active = line
                .transmit_apodization
                .iter()
                .filter(|w| **w > 0.0)
                .count();
            assert!(active <= 32);
            // The earliest-firing element of the active window sits at
            // delay exactly 0 (it may carry weight 0 at the window edge).
            let min = line
                .transmit_delays_s
                .iter()
                .cloned()
                .fold(f64::MAX, f64::min);
            assert_eq!(min, 0.0);
            assert!(line.transmit_delays_s.iter().all(|d| *d >= 0.0));
            // Delays of weighted elements stay within one aperture
            // transit time, confirming normalization happened within the
            // walking window rather than the full array.
            let bound = 32.0 * 0.3e-3 / 1540.0;
            for (d, w) in line.transmit_delays_s.iter().zip(&line.transmit_apodization) {
                if *w > 0.0 {
                    assert!(*d <= bound, "delay {d} exceeds window transit {bound}");
                }
            }
        }
    }

    #[test]
    fn layout_hash_distinguishes_configurations() {
        let a = layout_128(128, 1);
        let b = layout_128(128, 2);
        let c = layout_128(128, 1);
        assert_ne!(a.id(), b.id());
        assert_eq!(a.id(), c.id());
    }

    #[test]
    fn debug_json_contains_positions_and_delays() {
        let layout = layout_128(4, 1);
        let json = layout.debug_json();
        assert_eq!(
            json["element_positions_mm"].as_array().unwrap().len(),
            128
        );
        assert_eq!(json["scanlines"].as_array().unwrap().len(), 4);
        assert!(json["scanlines"][0]["transmit_delays_s"].is_array());
    }
}
