//! Node kinds: their parameter declarations, frame types, and per-frame
//! processing.

use std::path::PathBuf;
use std::sync::Arc;

use echopipe_core::beamform::{beamform_frame, BeamformParams, Interpolation};
use echopipe_core::compress::{log_compress, CompressionParams, OutputDepth, Reference};
use echopipe_core::envelope::{compound, hilbert_envelope, Band, BandpassBank};
use echopipe_core::fileio::{write_mhd, RawFrameReader, RawFrameWriter};
use echopipe_core::geometry::{ScanlineLayout, TransducerGeometry};
use echopipe_core::scanconvert::{
    build_table_with, convert, ConversionTable, TableOptions, DEFAULT_SPACING_2D_MM,
    DEFAULT_SPACING_3D_MM,
};
use echopipe_core::synth::{synthesize, PulseModel, Scatterer, ScattererField, SynthOptions};
use echopipe_core::WindowKind;

use crate::params::{ParamSnapshot, ParamTable, ParameterSpec};
use crate::payload::{FramePayload, PayloadData, PayloadKind};
use crate::{GraphError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    SyntheticInput,
    FileInput,
    Beamformer,
    Envelope,
    LogCompressor,
    ScanConverter,
    FileOutput,
    StatsSink,
}

impl NodeKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "synthetic-input" => Some(Self::SyntheticInput),
            "file-input" => Some(Self::FileInput),
            "beamformer" => Some(Self::Beamformer),
            "envelope" => Some(Self::Envelope),
            "log-compressor" => Some(Self::LogCompressor),
            "scan-converter" => Some(Self::ScanConverter),
            "file-output" => Some(Self::FileOutput),
            "stats-sink" => Some(Self::StatsSink),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SyntheticInput => "synthetic-input",
            Self::FileInput => "file-input",
            Self::Beamformer => "beamformer",
            Self::Envelope => "envelope",
            Self::LogCompressor => "log-compressor",
            Self::ScanConverter => "scan-converter",
            Self::FileOutput => "file-output",
            Self::StatsSink => "stats-sink",
        }
    }

    pub fn is_source(self) -> bool {
        matches!(self, Self::SyntheticInput | Self::FileInput)
    }

    pub fn is_sink(self) -> bool {
        matches!(self, Self::FileOutput | Self::StatsSink)
    }

    /// Only sinks that merge streams may have several inbound edges.
    pub fn accepts_fan_in(self) -> bool {
        matches!(self, Self::StatsSink)
    }

    /// Stage label used in timing tables, for the core processing nodes.
    pub fn stage_label(self) -> Option<&'static str> {
        match self {
            Self::Beamformer => Some("beamformer"),
            Self::Envelope => Some("envelope"),
            Self::LogCompressor => Some("log_compression"),
            Self::ScanConverter => Some("scan_conversion"),
            _ => None,
        }
    }

    pub fn parameter_specs(self) -> Vec<ParameterSpec> {
        match self {
            Self::SyntheticInput => vec![
                ParameterSpec::continuous("frames", 1.0, 1e9, 1.0),
                ParameterSpec::text("wire_depths_mm", ""),
                ParameterSpec::text("scatterers_json", ""),
                ParameterSpec::flag("noise", false),
                ParameterSpec::continuous("noise_db", -200.0, 60.0, -60.0),
                ParameterSpec::continuous("seed", 0.0, 9.007199254740992e15, 24222.0),
                ParameterSpec::continuous("pulse_bandwidth", 0.05, 0.95, 0.6),
                ParameterSpec::continuous("pulse_cycles", 1.0, 20.0, 6.0),
                ParameterSpec::continuous("headroom_db", 0.0, 60.0, 12.0),
            ],
            Self::FileInput => vec![ParameterSpec::text("path", "")],
            Self::Beamformer => vec![
                ParameterSpec::continuous("f_number", 0.05, 20.0, 1.0),
                ParameterSpec::choice("window", &["rectangular", "hann", "hamming"], "hann"),
                ParameterSpec::choice("interpolation", &["nearest", "linear"], "linear"),
                ParameterSpec::continuous("speed_of_sound", 1000.0, 2000.0, 1540.0),
            ],
            Self::Envelope => vec![
                ParameterSpec::choice("method", &["iq", "hilbert"], "iq"),
                ParameterSpec::continuous("center_frequency_hz", 0.0, 1e9, 0.0),
                ParameterSpec::continuous("bandwidth_fraction", 0.05, 0.95, 0.6),
                ParameterSpec::continuous("filter_length", 3.0, 1001.0, 65.0),
                ParameterSpec::continuous("decimation", 1.0, 64.0, 1.0),
            ],
            Self::LogCompressor => vec![
                ParameterSpec::continuous("dynamic_range_db", 0.1, 200.0, 50.0),
                ParameterSpec::choice("reference", &["frame-max", "fixed"], "frame-max"),
                ParameterSpec::continuous("fixed_reference", 1e-30, 1e30, 1.0),
                ParameterSpec::choice("output_depth", &["unit-float", "eight-bit"], "unit-float"),
            ],
            Self::ScanConverter => vec![
                // 0 selects the default for the layout dimensionality.
                ParameterSpec::continuous("spacing_mm", 0.0, 10.0, 0.0),
                ParameterSpec::continuous("memory_budget_mb", 1.0, 16384.0, 2048.0),
            ],
            Self::FileOutput => vec![
                ParameterSpec::text("path", ""),
                ParameterSpec::choice("format", &["mhd", "raw"], "mhd"),
            ],
            Self::StatsSink => vec![],
        }
    }
}

/// A configured node: identity, kind, parameter table, and the structured
/// extras that XML child elements can attach.
#[derive(Debug, Clone)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub params: Arc<ParamTable>,
    /// Demodulation bands (envelope nodes).
    pub bands: Vec<Band>,
    /// Inline scatterers (synthetic-input nodes).
    pub scatterers: Vec<Scatterer>,
}

impl NodeSpec {
    pub fn new(id: &str, kind: NodeKind) -> Self {
        Self {
            id: id.to_string(),
            kind,
            params: ParamTable::new(kind.parameter_specs()),
            bands: Vec::new(),
            scatterers: Vec::new(),
        }
    }

    /// Frame type consumed by this node; file-output depends on the
    /// configured format.
    pub fn input_kind(&self) -> InputSlot {
        match self.kind {
            NodeKind::SyntheticInput | NodeKind::FileInput => InputSlot::None,
            NodeKind::Beamformer => InputSlot::Exactly(PayloadKind::Raw),
            NodeKind::Envelope => InputSlot::Exactly(PayloadKind::Rf),
            NodeKind::LogCompressor => InputSlot::Exactly(PayloadKind::Envelope),
            NodeKind::ScanConverter => InputSlot::Exactly(PayloadKind::Envelope),
            NodeKind::StatsSink => InputSlot::Any,
            NodeKind::FileOutput => {
                let snapshot = self.params.snapshot();
                match snapshot.text("format") {
                    "raw" => InputSlot::Exactly(PayloadKind::Raw),
                    _ => InputSlot::Exactly(PayloadKind::Image),
                }
            }
        }
    }

    pub fn output_kind(&self) -> Option<PayloadKind> {
        match self.kind {
            NodeKind::SyntheticInput | NodeKind::FileInput => Some(PayloadKind::Raw),
            NodeKind::Beamformer => Some(PayloadKind::Rf),
            NodeKind::Envelope => Some(PayloadKind::Envelope),
            NodeKind::LogCompressor => Some(PayloadKind::Envelope),
            NodeKind::ScanConverter => Some(PayloadKind::Image),
            NodeKind::FileOutput | NodeKind::StatsSink => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSlot {
    None,
    Any,
    Exactly(PayloadKind),
}

impl InputSlot {
    pub fn accepts(self, kind: PayloadKind) -> bool {
        match self {
            InputSlot::None => false,
            InputSlot::Any => true,
            InputSlot::Exactly(k) => k == kind,
        }
    }
}

/// Shared context handed to every processor.
pub(crate) struct NodeContext {
    pub layout: Arc<ScanlineLayout>,
    pub geometry: Arc<TransducerGeometry>,
}

fn node_err(id: &str, source: echopipe_core::Error) -> GraphError {
    GraphError::Node {
        node: id.to_string(),
        source,
    }
}

/// Per-node runtime state plus the processing call. Parameter snapshots
/// are taken by the worker once per frame and passed in, so a frame never
/// sees a mixture of old and new values.
pub(crate) enum Processor {
    Synthetic(SyntheticState),
    FileInput(FileInputState),
    Beamformer,
    Envelope { bands: Vec<Band> },
    LogCompressor,
    ScanConverter(ScanState),
    FileOutput(FileOutputState),
    StatsSink,
}

impl Processor {
    pub fn build(spec: &NodeSpec, ctx: &NodeContext) -> Result<Self> {
        match spec.kind {
            NodeKind::SyntheticInput => Ok(Processor::Synthetic(SyntheticState {
                inline_scatterers: spec.scatterers.clone(),
                cache: None,
            })),
            NodeKind::FileInput => {
                let snapshot = spec.params.snapshot();
                let path = snapshot.text("path");
                if path.is_empty() {
                    return Err(GraphError::Validation(format!(
                        "node {}: file-input requires a path parameter",
                        spec.id
                    )));
                }
                let reader = RawFrameReader::open(std::path::Path::new(path), Some(ctx.layout.id()))
                    .map_err(|e| node_err(&spec.id, e))?;
                Ok(Processor::FileInput(FileInputState { reader }))
            }
            NodeKind::Beamformer => Ok(Processor::Beamformer),
            NodeKind::Envelope => Ok(Processor::Envelope {
                bands: spec.bands.clone(),
            }),
            NodeKind::LogCompressor => Ok(Processor::LogCompressor),
            NodeKind::ScanConverter => Ok(Processor::ScanConverter(ScanState { cache: None })),
            NodeKind::FileOutput => {
                let snapshot = spec.params.snapshot();
                if snapshot.text("path").is_empty() {
                    return Err(GraphError::Validation(format!(
                        "node {}: file-output requires a path parameter",
                        spec.id
                    )));
                }
                Ok(Processor::FileOutput(FileOutputState {
                    raw_writer: None,
                    frame_index: 0,
                }))
            }
            NodeKind::StatsSink => Ok(Processor::StatsSink),
        }
    }

    /// Number of frames a source can produce (`None` for non-sources).
    pub fn source_frames(&self, snapshot: &ParamSnapshot) -> Option<u64> {
        match self {
            Processor::Synthetic(_) => Some(snapshot.number("frames") as u64),
            Processor::FileInput(state) => Some(state.reader.header().frame_count as u64),
            _ => None,
        }
    }

    /// Generate the next source frame.
    pub fn generate(
        &mut self,
        id: &str,
        index: u64,
        snapshot: &ParamSnapshot,
        ctx: &NodeContext,
    ) -> Result<FramePayload> {
        match self {
            Processor::Synthetic(state) => state.generate(id, index, snapshot, ctx),
            Processor::FileInput(state) => {
                let frame = state
                    .reader
                    .next_frame()
                    .map_err(|e| node_err(id, e))?
                    .ok_or_else(|| GraphError::Runtime {
                        node: id.to_string(),
                        timestamp_ns: index,
                        message: "file exhausted before the requested frame budget".into(),
                    })?;
                Ok(FramePayload::from_raw(frame))
            }
            _ => unreachable!("generate called on a non-source node"),
        }
    }

    /// Process one frame through a non-source node.
    pub fn process(
        &mut self,
        id: &str,
        input: &FramePayload,
        snapshot: &ParamSnapshot,
        ctx: &NodeContext,
    ) -> Result<Option<FramePayload>> {
        match self {
            Processor::Beamformer => {
                let raw = expect_raw(id, input)?;
                let params = BeamformParams {
                    receive_window: WindowKind::parse(snapshot.text("window")).unwrap(),
                    f_number: snapshot.number("f_number"),
                    interpolation: Interpolation::parse(snapshot.text("interpolation")).unwrap(),
                    speed_of_sound_m_s: snapshot.number("speed_of_sound"),
                };
                let rf = beamform_frame(raw, &ctx.layout, &params).map_err(|e| node_err(id, e))?;
                Ok(Some(FramePayload::from_rf(rf)))
            }
            Processor::Envelope { bands } => {
                let rf = expect_rf(id, input)?;
                let env = match snapshot.text("method") {
                    "hilbert" => hilbert_envelope(rf).map_err(|e| node_err(id, e))?,
                    _ => {
                        let bank = make_bank(bands, snapshot, ctx);
                        compound(rf, &bank).map_err(|e| node_err(id, e))?
                    }
                };
                Ok(Some(FramePayload::from_envelope(env)))
            }
            Processor::LogCompressor => {
                let env = expect_envelope(id, input)?;
                let params = CompressionParams {
                    dynamic_range_db: snapshot.number("dynamic_range_db"),
                    reference: match snapshot.text("reference") {
                        "fixed" => Reference::Fixed(snapshot.number("fixed_reference")),
                        _ => Reference::FrameMax,
                    },
                    output_depth: match snapshot.text("output_depth") {
                        "eight-bit" => OutputDepth::EightBit,
                        _ => OutputDepth::UnitFloat,
                    },
                };
                let out = log_compress(env, &params).map_err(|e| node_err(id, e))?;
                Ok(Some(FramePayload::from_envelope(out)))
            }
            Processor::ScanConverter(state) => {
                let env = expect_envelope(id, input)?;
                let table = state.table_for(id, env, snapshot, ctx)?;
                let image = convert(env, table).map_err(|e| node_err(id, e))?;
                Ok(Some(FramePayload::from_image(image)))
            }
            Processor::FileOutput(state) => {
                state.write(id, input, snapshot)?;
                Ok(None)
            }
            Processor::StatsSink => Ok(None),
            Processor::Synthetic(_) | Processor::FileInput(_) => {
                unreachable!("process called on a source node")
            }
        }
    }

    /// Flush any buffered output; called once after the input closes.
    pub fn finish(&mut self, id: &str) -> Result<()> {
        if let Processor::FileOutput(state) = self {
            if let Some(writer) = state.raw_writer.take() {
                writer.finish().map_err(|e| node_err(id, e))?;
            }
        }
        Ok(())
    }
}

fn expect_raw<'a>(
    id: &str,
    payload: &'a FramePayload,
) -> Result<&'a echopipe_core::frame::RawChannelFrame> {
    match &payload.data {
        PayloadData::Raw(f) => Ok(f),
        other => Err(type_mismatch(id, "raw-channel", other)),
    }
}

fn expect_rf<'a>(id: &str, payload: &'a FramePayload) -> Result<&'a echopipe_core::frame::RfFrame> {
    match &payload.data {
        PayloadData::Rf(f) => Ok(f),
        other => Err(type_mismatch(id, "rf", other)),
    }
}

fn expect_envelope<'a>(
    id: &str,
    payload: &'a FramePayload,
) -> Result<&'a echopipe_core::frame::EnvelopeFrame> {
    match &payload.data {
        PayloadData::Envelope(f) => Ok(f),
        other => Err(type_mismatch(id, "envelope", other)),
    }
}

fn type_mismatch(id: &str, expected: &str, got: &PayloadData) -> GraphError {
    let kind = match got {
        PayloadData::Raw(_) => "raw-channel",
        PayloadData::Rf(_) => "rf",
        PayloadData::Envelope(_) => "envelope",
        PayloadData::Image(_) => "b-mode-image",
    };
    GraphError::Validation(format!("node {id}: expected {expected} frames, got {kind}"))
}

fn make_bank(bands: &[Band], snapshot: &ParamSnapshot, ctx: &NodeContext) -> BandpassBank {
    let filter_length = snapshot.number("filter_length") as usize;
    let decimation = snapshot.number("decimation") as usize;
    if !bands.is_empty() {
        return BandpassBank {
            bands: bands.to_vec(),
            filter_length,
            decimation,
        };
    }
    let mut center = snapshot.number("center_frequency_hz");
    if center == 0.0 {
        center = ctx.layout.center_frequency_hz;
    }
    BandpassBank {
        bands: vec![Band {
            center_hz: center,
            bandwidth_hz: snapshot.number("bandwidth_fraction") * center,
            weight: 1.0,
        }],
        filter_length,
        decimation,
    }
}

pub(crate) struct SyntheticState {
    inline_scatterers: Vec<Scatterer>,
    /// (param version, field, pulse, options): rebuilt only when the
    /// parameter tuple changes.
    cache: Option<(u64, ScattererField, PulseModel, SynthOptions)>,
}

impl SyntheticState {
    fn generate(
        &mut self,
        id: &str,
        index: u64,
        snapshot: &ParamSnapshot,
        ctx: &NodeContext,
    ) -> Result<FramePayload> {
        if self.cache.as_ref().map(|(v, ..)| *v) != Some(snapshot.version) {
            let mut scatterers = self.inline_scatterers.clone();
            let wire_depths = snapshot.text("wire_depths_mm");
            if !wire_depths.is_empty() {
                for part in wire_depths.split(',') {
                    let depth: f64 = part.trim().parse().map_err(|_| {
                        GraphError::Validation(format!(
                            "node {id}: malformed wire_depths_mm entry {part:?}"
                        ))
                    })?;
                    scatterers.push(Scatterer {
                        position_mm: [0.0, 0.0, depth],
                        reflectivity: 1.0,
                    });
                }
            }
            let json_path = snapshot.text("scatterers_json");
            if !json_path.is_empty() {
                let text = std::fs::read_to_string(json_path).map_err(|e| {
                    GraphError::Validation(format!("node {id}: reading {json_path}: {e}"))
                })?;
                let field = ScattererField::from_json_str(&text).map_err(|e| node_err(id, e))?;
                scatterers.extend(field.scatterers);
            }
            let field = ScattererField {
                scatterers,
                background_noise_db: snapshot
                    .values
                    .get("noise")
                    .and_then(|v| v.as_flag())
                    .unwrap_or(false)
                    .then(|| snapshot.number("noise_db")),
            };
            let pulse = PulseModel {
                center_frequency_hz: ctx.geometry.center_frequency_hz,
                fractional_bandwidth: snapshot.number("pulse_bandwidth"),
                cycles: snapshot.number("pulse_cycles"),
            };
            let options = SynthOptions {
                headroom_db: snapshot.number("headroom_db"),
                noise_seed: snapshot.number("seed") as u64,
                attenuation_db_per_cm_mhz: None,
            };
            self.cache = Some((snapshot.version, field, pulse, options));
        }
        let (_, field, pulse, options) = self.cache.as_ref().unwrap();
        // Distinct noise per frame, still deterministic per (seed, index).
        let mut options = options.clone();
        options.noise_seed = options.noise_seed.wrapping_add(index);
        let frame = synthesize(
            field,
            &ctx.layout,
            &ctx.geometry,
            pulse,
            &options,
            index * 1_000_000,
        )
        .map_err(|e| node_err(id, e))?;
        Ok(FramePayload::from_raw(frame))
    }
}

pub(crate) struct FileInputState {
    reader: RawFrameReader,
}

pub(crate) struct ScanState {
    /// (param version, src dims, src fs) the cached table was built for.
    cache: Option<(u64, [usize; 3], f64, ConversionTable)>,
}

impl ScanState {
    fn table_for(
        &mut self,
        id: &str,
        env: &echopipe_core::frame::EnvelopeFrame,
        snapshot: &ParamSnapshot,
        ctx: &NodeContext,
    ) -> Result<&ConversionTable> {
        let dims = [env.line_count_x, env.line_count_y, env.samples_per_line];
        let fs = env.sample_frequency_hz;
        let stale = match &self.cache {
            Some((version, cached_dims, cached_fs, _)) => {
                *version != snapshot.version || *cached_dims != dims || *cached_fs != fs
            }
            None => true,
        };
        if stale {
            let mut spacing = snapshot.number("spacing_mm");
            if spacing == 0.0 {
                spacing = if ctx.layout.line_count_y > 1 {
                    DEFAULT_SPACING_3D_MM
                } else {
                    DEFAULT_SPACING_2D_MM
                };
            }
            let options = TableOptions {
                memory_budget_bytes: (snapshot.number("memory_budget_mb") * 1048576.0) as u64,
                src_samples: Some(env.samples_per_line),
                sample_pitch_mm: Some(
                    ctx.layout.speed_of_sound_m_s / (2.0 * fs) * 1e3,
                ),
            };
            let table = build_table_with(&ctx.layout, spacing, &options)
                .map_err(|e| node_err(id, e))?;
            self.cache = Some((snapshot.version, dims, fs, table));
        }
        Ok(&self.cache.as_ref().unwrap().3)
    }
}

pub(crate) struct FileOutputState {
    raw_writer: Option<RawFrameWriter>,
    frame_index: u64,
}

impl FileOutputState {
    fn write(&mut self, id: &str, payload: &FramePayload, snapshot: &ParamSnapshot) -> Result<()> {
        let path = snapshot.text("path");
        if let Some(parent) = std::path::Path::new(path).parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| GraphError::Runtime {
                    node: id.to_string(),
                    timestamp_ns: payload.timestamp_ns(),
                    message: format!("creating {}: {e}", parent.display()),
                })?;
            }
        }
        match (&payload.data, snapshot.text("format")) {
            (PayloadData::Raw(frame), "raw") => {
                if self.raw_writer.is_none() {
                    self.raw_writer = Some(
                        RawFrameWriter::create(
                            std::path::Path::new(path),
                            frame.event_count,
                            frame.channel_count,
                            frame.samples_per_event,
                            frame.sample_frequency_hz,
                            frame.layout_ref,
                        )
                        .map_err(|e| node_err(id, e))?,
                    );
                }
                self.raw_writer
                    .as_mut()
                    .unwrap()
                    .append(frame)
                    .map_err(|e| node_err(id, e))?;
            }
            (PayloadData::Image(image), "mhd") => {
                let file = PathBuf::from(format!("{path}_{:05}.mhd", self.frame_index));
                write_mhd(image, &file).map_err(|e| node_err(id, e))?;
            }
            (other, format) => {
                return Err(type_mismatch(
                    id,
                    if format == "raw" { "raw-channel" } else { "b-mode-image" },
                    other,
                ));
            }
        }
        self.frame_index += 1;
        Ok(())
    }
}
