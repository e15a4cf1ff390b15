//! Command-line front end for the ultrasound processing pipeline.
//!
//! Exit codes: 0 success, 2 configuration error (bad arguments, malformed
//! pipeline XML, invalid parameters), 3 runtime error (a node failed while
//! frames were flowing, I/O problems during a run).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use echopipe_core::beamform::{beamform_frame, BeamformParams, Interpolation};
use echopipe_core::envelope::hilbert_envelope;
use echopipe_core::fileio::RawFrameWriter;
use echopipe_core::metrics::{bench_csv, bench_stats, fwhm_sweep, measure_psf_envelope};
use echopipe_core::synth::{synthesize, PulseModel, ScattererField, SynthOptions};
use echopipe_core::WindowKind;
use echopipe_graph::{parse_layout_xml, PipelineGraph};

#[derive(Parser)]
#[command(
    name = "echopipe",
    about = "Software-defined ultrasound: beamforming to B-mode",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a pipeline described in XML.
    Run(RunArgs),
    /// Generate synthetic channel data for a scatterer field.
    Synth(SynthArgs),
    /// Sweep wire-target depths and report PSF widths.
    Psf(PsfArgs),
    /// Run timing statistics over scanline configurations.
    Bench(BenchArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline XML file.
    #[arg(long)]
    pipeline: PathBuf,
    /// Cap on the number of frames each source emits.
    #[arg(long)]
    frames: Option<u64>,
    /// Downgrade unknown XML attributes to warnings.
    #[arg(long)]
    lenient: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON list of {x, y, z, reflectivity} scatterers (millimeters).
    #[arg(long)]
    scatterers: PathBuf,
    /// XML file whose root is a <layout .../> element.
    #[arg(long)]
    layout: PathBuf,
    /// Output raw channel-frame container.
    #[arg(long)]
    out: PathBuf,
    /// Number of frames to record.
    #[arg(long, default_value_t = 1)]
    frames: u64,
    /// White-noise level in dB (off when omitted).
    #[arg(long)]
    noise_db: Option<f64>,
    #[arg(long, default_value_t = 24222)]
    seed: u64,
    /// Pulse fractional bandwidth.
    #[arg(long, default_value_t = 0.6)]
    pulse_bandwidth: f64,
    /// Pulse envelope support in carrier periods.
    #[arg(long, default_value_t = 6.0)]
    pulse_cycles: f64,
}

#[derive(Args)]
struct PsfArgs {
    /// Pipeline XML providing the layout and beamformer settings.
    #[arg(long)]
    pipeline: PathBuf,
    /// Comma-separated wire depths in millimeters.
    #[arg(long, default_value = "5,10,15,20,25")]
    depths: String,
    /// CSV report destination.
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Pipeline XML; its linear layout is rebuilt per configuration.
    #[arg(long)]
    pipeline: PathBuf,
    /// Frames per configuration (including warm-up).
    #[arg(long, default_value_t = 40)]
    frames: u64,
    /// Leading frames excluded from the statistics.
    #[arg(long, default_value_t = 5)]
    warmup: usize,
    /// Scanline configurations as transmits/multiline pairs.
    #[arg(long, default_value = "64/1,64/2,128/1,128/2")]
    configs: String,
    /// CSV report destination.
    #[arg(long)]
    report: PathBuf,
}

/// Failure plus the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    fn from_graph(err: echopipe_graph::GraphError) -> Self {
        Self {
            code: if err.is_config() { 2 } else { 3 },
            message: format!("{err}"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Synth(args) => synth(args),
        Command::Psf(args) => psf(args),
        Command::Bench(args) => bench(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn read_text(path: &PathBuf) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::config(format!("reading {}: {e}", path.display())))
}

fn load_pipeline(path: &PathBuf, lenient: bool) -> Result<PipelineGraph, Failure> {
    let text = read_text(path)?;
    if lenient {
        let (graph, warnings) =
            PipelineGraph::from_xml_lenient(&text).map_err(Failure::from_graph)?;
        for warning in warnings {
            eprintln!("warning: {warning}");
        }
        Ok(graph)
    } else {
        PipelineGraph::from_xml(&text).map_err(Failure::from_graph)
    }
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let graph = load_pipeline(&args.pipeline, args.lenient)?;
    let runner = graph.runner().map_err(Failure::from_graph)?;
    let report = runner.run(args.frames).map_err(Failure::from_graph)?;
    println!("pipeline finished in {:.3} s", report.wall_clock_s);
    for node in &report.nodes {
        let mean_ms = if node.seconds.is_empty() {
            0.0
        } else {
            node.seconds.iter().sum::<f64>() / node.seconds.len() as f64 * 1e3
        };
        println!(
            "  {:<16} {:>6} frames  mean {:.3} ms",
            node.id, node.frames, mean_ms
        );
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let (geometry, layout) =
        parse_layout_xml(&read_text(&args.layout)?).map_err(Failure::from_graph)?;
    let mut field = ScattererField::from_json_str(&read_text(&args.scatterers)?)
        .map_err(|e| Failure::config(format!("{e}")))?;
    field.background_noise_db = args.noise_db;
    let pulse = PulseModel {
        center_frequency_hz: geometry.center_frequency_hz,
        fractional_bandwidth: args.pulse_bandwidth,
        cycles: args.pulse_cycles,
    };

    let mut writer = RawFrameWriter::create(
        &args.out,
        layout.transmit_count,
        layout.element_count(),
        layout.samples_per_line,
        layout.sample_frequency_hz,
        layout.id(),
    )
    .map_err(|e| Failure::runtime(format!("{e}")))?;
    for index in 0..args.frames {
        let options = SynthOptions {
            noise_seed: args.seed.wrapping_add(index),
            ..Default::default()
        };
        let frame = synthesize(
            &field,
            &layout,
            &geometry,
            &pulse,
            &options,
            index * 1_000_000,
        )
        .map_err(|e| Failure::config(format!("{e}")))?;
        writer
            .append(&frame)
            .map_err(|e| Failure::runtime(format!("{e}")))?;
    }
    writer
        .finish()
        .map_err(|e| Failure::runtime(format!("{e}")))?;
    println!(
        "wrote {} frame(s) of {}x{}x{} samples to {}",
        args.frames,
        layout.transmit_count,
        layout.element_count(),
        layout.samples_per_line,
        args.out.display()
    );
    Ok(())
}

fn psf(args: PsfArgs) -> Result<(), Failure> {
    let graph = load_pipeline(&args.pipeline, false)?;
    let layout = graph.layout().clone();
    let geometry = graph.geometry().clone();

    let depths: Vec<f64> = args
        .depths
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| Failure::config(format!("malformed depth {part:?}")))
        })
        .collect::<Result<_, _>>()?;
    if depths.is_empty() {
        return Err(Failure::config("no depths given"));
    }

    // Beamformer settings come from the pipeline's beamformer node when
    // present; display dynamic range from its log-compressor.
    let bf_params = graph
        .nodes()
        .iter()
        .find(|n| n.kind == echopipe_graph::NodeKind::Beamformer)
        .map(|n| {
            let snapshot = n.params.snapshot();
            BeamformParams {
                receive_window: WindowKind::parse(snapshot.text("window")).unwrap(),
                f_number: snapshot.number("f_number"),
                interpolation: Interpolation::parse(snapshot.text("interpolation")).unwrap(),
                speed_of_sound_m_s: snapshot.number("speed_of_sound"),
            }
        })
        .unwrap_or_default();
    let display_dr = graph
        .nodes()
        .iter()
        .find(|n| n.kind == echopipe_graph::NodeKind::LogCompressor)
        .map(|n| n.params.snapshot().number("dynamic_range_db"))
        .unwrap_or(50.0);

    let pulse = PulseModel::new(geometry.center_frequency_hz);
    let report = fwhm_sweep(&depths, display_dr, |depth| {
        let field = echopipe_core::synth::wire_phantom(&[depth]);
        let raw = synthesize(
            &field,
            &layout,
            &geometry,
            &pulse,
            &SynthOptions::default(),
            0,
        )?;
        let rf = beamform_frame(&raw, &layout, &bf_params)?;
        let env = hilbert_envelope(&rf)?;
        measure_psf_envelope(&env, &layout, depth)
    })
    .map_err(|e| Failure::runtime(format!("{e}")))?;

    fs::write(&args.report, report.to_csv())
        .map_err(|e| Failure::runtime(format!("writing {}: {e}", args.report.display())))?;
    println!("depth_mm  lateral_fwhm_mm  axial_fwhm_mm  flagged");
    for entry in &report.entries {
        println!(
            "{:>8.2}  {:>15.4}  {:>13.4}  {}",
            entry.expected_depth_mm, entry.lateral_fwhm_mm, entry.axial_fwhm_mm, entry.flagged
        );
    }
    println!("report written to {}", args.report.display());
    Ok(())
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let base = load_pipeline(&args.pipeline, false)?;
    let configs: Vec<(usize, usize)> = args
        .configs
        .split(',')
        .map(|part| {
            let (lines, multiline) = part
                .trim()
                .split_once('/')
                .ok_or_else(|| Failure::config(format!("malformed config {part:?}")))?;
            Ok((
                lines
                    .parse()
                    .map_err(|_| Failure::config(format!("malformed config {part:?}")))?,
                multiline
                    .parse()
                    .map_err(|_| Failure::config(format!("malformed config {part:?}")))?,
            ))
        })
        .collect::<Result<_, Failure>>()?;

    let mut rows = Vec::with_capacity(configs.len());
    for (lines, multiline) in configs {
        let label = format!("{lines}/{multiline}");
        let graph = base
            .with_linear_config(lines, multiline)
            .map_err(Failure::from_graph)?;
        let runner = graph.runner().map_err(Failure::from_graph)?;
        let report = runner.run(Some(args.frames)).map_err(Failure::from_graph)?;
        let row = bench_stats(
            &label,
            &report.stage_timings(),
            report.wall_clock_s,
            args.warmup,
        )
        .map_err(|e| Failure::config(format!("{e}")))?;
        println!(
            "{label}: beamformer {:.3} ms, total {:.3} ms over {} frames",
            row.stages
                .iter()
                .find(|s| s.stage == "beamformer")
                .map(|s| s.mean_s * 1e3)
                .unwrap_or(f64::NAN),
            row.total.mean_s * 1e3,
            row.frames
        );
        rows.push(row);
    }

    let csv = bench_csv(&rows);
    fs::write(&args.report, &csv)
        .map_err(|e| Failure::runtime(format!("writing {}: {e}", args.report.display())))?;
    println!("report written to {}", args.report.display());
    Ok(())
}
