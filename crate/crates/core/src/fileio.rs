//! Persistence: MetaImage (.mhd) output for B-mode images and a raw
//! channel-frame container for record/replay.
//!
//! Both writers are deterministic — identical inputs produce byte-identical
//! files. MetaImage has no mask concept, so only intensities travel; masked
//! voxels are zero by the image invariant, and `read_mhd` returns an
//! all-true mask.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::frame::{BModeImage, RawChannelFrame};
use crate::{Error, Result};

/// Magic bytes of the raw channel-frame container.
pub const RAW_MAGIC: [u8; 4] = *b"SUPR";
/// Current raw container version.
pub const RAW_VERSION: u32 = 1;
/// Sample format code: 16-bit signed little-endian.
pub const RAW_FORMAT_I16: u32 = 0;

const RAW_HEADER_LEN: usize = 40;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Structure(format!("I/O error on {}: {source}", path.display()))
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Structure(format!("{}: {}", path.display(), message.into()))
}

/// Write a standard MetaImage header plus raw little-endian f32 payload.
/// The header carries ObjectType, NDims, DimSize, ElementSpacing, Offset,
/// ElementType and ElementDataFile = LOCAL (payload in the same file).
pub fn write_mhd(image: &BModeImage, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);

    let ndims = image.ndims();
    let (dim_size, spacing, offset) = if ndims == 2 {
        (
            format!("{} {}", image.dims[0], image.dims[2]),
            format!("{} {}", image.spacing_mm, image.spacing_mm),
            format!("{} {}", image.origin_mm[0], image.origin_mm[2]),
        )
    } else {
        (
            format!("{} {} {}", image.dims[0], image.dims[1], image.dims[2]),
            format!(
                "{} {} {}",
                image.spacing_mm, image.spacing_mm, image.spacing_mm
            ),
            format!(
                "{} {} {}",
                image.origin_mm[0], image.origin_mm[1], image.origin_mm[2]
            ),
        )
    };

    let header = format!(
        "ObjectType = Image\n\
         NDims = {ndims}\n\
         BinaryData = True\n\
         BinaryDataByteOrderMSB = False\n\
         CompressedData = False\n\
         DimSize = {dim_size}\n\
         ElementSpacing = {spacing}\n\
         Offset = {offset}\n\
         ElementType = MET_FLOAT\n\
         ElementDataFile = LOCAL\n"
    );
    out.write_all(header.as_bytes()).map_err(|e| io_err(path, e))?;
    for v in &image.intensities {
        out.write_all(&v.to_le_bytes()).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Read a MetaImage written by [`write_mhd`] (MET_FLOAT, LOCAL payload).
pub fn read_mhd(path: &Path) -> Result<BModeImage> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;

    // Header: "Key = Value" lines up to and including ElementDataFile.
    let mut offset = 0usize;
    let mut fields: Vec<(String, String)> = Vec::new();
    loop {
        let rest = &bytes[offset..];
        let newline = rest
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| format_err(path, format!("header unterminated at byte {offset}")))?;
        let line = std::str::from_utf8(&rest[..newline]).map_err(|_| {
            format_err(path, format!("non-UTF8 header line at byte {offset}"))
        })?;
        let (key, value) = line.split_once('=').ok_or_else(|| {
            format_err(path, format!("malformed header line at byte {offset}: {line:?}"))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        offset += newline + 1;
        let done = key == "ElementDataFile";
        fields.push((key, value));
        if done {
            break;
        }
    }
    let get = |key: &str| -> Result<&str> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| format_err(path, format!("missing header field {key}")))
    };

    if get("ObjectType")? != "Image" {
        return Err(format_err(path, "ObjectType is not Image"));
    }
    if get("ElementType")? != "MET_FLOAT" {
        return Err(format_err(
            path,
            format!("unsupported ElementType {}", get("ElementType")?),
        ));
    }
    if get("ElementDataFile")? != "LOCAL" {
        return Err(format_err(path, "only LOCAL element data is supported"));
    }
    let ndims: usize = get("NDims")?
        .parse()
        .map_err(|_| format_err(path, "NDims is not an integer"))?;
    if ndims != 2 && ndims != 3 {
        return Err(format_err(path, format!("unsupported NDims {ndims}")));
    }
    let parse_list = |key: &str| -> Result<Vec<f64>> {
        let raw = get(key)?;
        let values: std::result::Result<Vec<f64>, _> =
            raw.split_whitespace().map(str::parse::<f64>).collect();
        let values =
            values.map_err(|_| format_err(path, format!("malformed {key}: {raw:?}")))?;
        if values.len() != ndims {
            return Err(format_err(
                path,
                format!("{key} has {} entries, NDims is {ndims}", values.len()),
            ));
        }
        Ok(values)
    };
    let size = parse_list("DimSize")?;
    let spacing = parse_list("ElementSpacing")?;
    let origin = parse_list("Offset")?;
    if spacing.windows(2).any(|w| w[0] != w[1]) {
        return Err(format_err(path, "anisotropic spacing is not supported"));
    }

    let (dims, origin_mm) = if ndims == 2 {
        (
            [size[0] as usize, 1, size[1] as usize],
            [origin[0], 0.0, origin[1]],
        )
    } else {
        (
            [size[0] as usize, size[1] as usize, size[2] as usize],
            [origin[0], origin[1], origin[2]],
        )
    };

    let voxels = dims[0] * dims[1] * dims[2];
    let expected = voxels * 4;
    let actual = bytes.len() - offset;
    if actual != expected {
        return Err(format_err(
            path,
            format!(
                "payload at byte {offset} holds {actual} bytes, {voxels} voxels require {expected}"
            ),
        ));
    }
    let mut intensities = Vec::with_capacity(voxels);
    for chunk in bytes[offset..].chunks_exact(4) {
        intensities.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }

    BModeImage::new(
        intensities,
        dims,
        spacing[0],
        origin_mm,
        vec![true; voxels],
        0,
    )
}

/// Streaming writer for the raw channel-frame container.
pub struct RawFrameWriter {
    out: BufWriter<fs::File>,
    path: PathBuf,
    event_count: usize,
    channel_count: usize,
    samples_per_event: usize,
    sample_frequency_hz: f64,
    layout_hash: u64,
}

impl RawFrameWriter {
    pub fn create(
        path: &Path,
        event_count: usize,
        channel_count: usize,
        samples_per_event: usize,
        sample_frequency_hz: f64,
        layout_hash: u64,
    ) -> Result<Self> {
        let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
        let mut out = BufWriter::new(file);
        out.write_all(&RAW_MAGIC).map_err(|e| io_err(path, e))?;
        out.write_all(&RAW_VERSION.to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        out.write_all(&(event_count as u32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        out.write_all(&(channel_count as u32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        out.write_all(&(samples_per_event as u32).to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        out.write_all(&RAW_FORMAT_I16.to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        out.write_all(&sample_frequency_hz.to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        out.write_all(&layout_hash.to_le_bytes())
            .map_err(|e| io_err(path, e))?;
        Ok(Self {
            out,
            path: path.to_path_buf(),
            event_count,
            channel_count,
            samples_per_event,
            sample_frequency_hz,
            layout_hash,
        })
    }

    pub fn append(&mut self, frame: &RawChannelFrame) -> Result<()> {
        if frame.event_count != self.event_count
            || frame.channel_count != self.channel_count
            || frame.samples_per_event != self.samples_per_event
        {
            return Err(Error::Structure(format!(
                "frame dims {}x{}x{} do not match file dims {}x{}x{}",
                frame.event_count,
                frame.channel_count,
                frame.samples_per_event,
                self.event_count,
                self.channel_count,
                self.samples_per_event
            )));
        }
        if frame.layout_ref != self.layout_hash {
            return Err(Error::Structure(format!(
                "frame layout {:#018x} does not match file layout {:#018x}",
                frame.layout_ref, self.layout_hash
            )));
        }
        if frame.sample_frequency_hz != self.sample_frequency_hz {
            return Err(Error::Structure(
                "frame sample frequency does not match file header".into(),
            ));
        }
        for v in &frame.samples {
            self.out
                .write_all(&v.to_le_bytes())
                .map_err(|e| io_err(&self.path, e))?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| io_err(&self.path, e))
    }
}

/// Parsed header of a raw channel-frame file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawFileHeader {
    pub event_count: usize,
    pub channel_count: usize,
    pub samples_per_event: usize,
    pub sample_frequency_hz: f64,
    pub layout_hash: u64,
    pub frame_count: usize,
}

/// Streaming reader for the raw channel-frame container. Replayed frames
/// are re-stamped with their index as the timestamp; wall-clock capture
/// times are not persisted.
pub struct RawFrameReader {
    file: fs::File,
    path: PathBuf,
    header: RawFileHeader,
    next_frame: usize,
}

impl RawFrameReader {
    /// Open a file and validate its header. `expected_layout` guards
    /// against beamforming replayed data with the wrong geometry; the
    /// mismatch is detected here, before any frame is emitted.
    pub fn open(path: &Path, expected_layout: Option<u64>) -> Result<Self> {
        let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
        let len = file.metadata().map_err(|e| io_err(path, e))?.len();
        if (len as usize) < RAW_HEADER_LEN {
            return Err(format_err(
                path,
                format!("file is {len} bytes, header requires {RAW_HEADER_LEN}"),
            ));
        }
        let mut header = [0u8; RAW_HEADER_LEN];
        file.read_exact(&mut header).map_err(|e| io_err(path, e))?;

        if header[0..4] != RAW_MAGIC {
            return Err(format_err(
                path,
                format!(
                    "bad magic at byte 0: {:02x?}, expected {:02x?}",
                    &header[0..4],
                    RAW_MAGIC
                ),
            ));
        }
        let u32_at = |at: usize| u32::from_le_bytes(header[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != RAW_VERSION {
            return Err(format_err(
                path,
                format!("unknown version {version} at byte 4, expected {RAW_VERSION}"),
            ));
        }
        let event_count = u32_at(8) as usize;
        let channel_count = u32_at(12) as usize;
        let samples_per_event = u32_at(16) as usize;
        let format = u32_at(20);
        if format != RAW_FORMAT_I16 {
            return Err(format_err(
                path,
                format!("unknown sample format {format} at byte 20"),
            ));
        }
        let sample_frequency_hz =
            f64::from_le_bytes(header[24..32].try_into().unwrap());
        let layout_hash = u64::from_le_bytes(header[32..40].try_into().unwrap());

        if event_count == 0 || channel_count == 0 || samples_per_event == 0 {
            return Err(format_err(path, "header declares zero-sized frames"));
        }
        let frame_bytes = event_count * channel_count * samples_per_event * 2;
        let payload = len as usize - RAW_HEADER_LEN;
        if !payload.is_multiple_of(frame_bytes) {
            let whole = payload / frame_bytes;
            return Err(format_err(
                path,
                format!(
                    "payload of {payload} bytes after byte {RAW_HEADER_LEN} is truncated: \
                     {whole} whole frames need {}, {} frames need {}",
                    whole * frame_bytes,
                    whole + 1,
                    (whole + 1) * frame_bytes
                ),
            ));
        }
        if let Some(expected) = expected_layout {
            if expected != layout_hash {
                return Err(Error::Structure(format!(
                    "{}: file layout {layout_hash:#018x} does not match configured layout \
                     {expected:#018x}",
                    path.display()
                )));
            }
        }

        Ok(Self {
            file,
            path: path.to_path_buf(),
            header: RawFileHeader {
                event_count,
                channel_count,
                samples_per_event,
                sample_frequency_hz,
                layout_hash,
                frame_count: payload / frame_bytes,
            },
            next_frame: 0,
        })
    }

    pub fn header(&self) -> RawFileHeader {
        self.header
    }

    /// Read the next frame; `None` after the last.
    pub fn next_frame(&mut self) -> Result<Option<RawChannelFrame>> {
        if self.next_frame >= self.header.frame_count {
            return Ok(None);
        }
        let count =
            self.header.event_count * self.header.channel_count * self.header.samples_per_event;
        let mut bytes = vec![0u8; count * 2];
        self.file
            .read_exact(&mut bytes)
            .map_err(|e| io_err(&self.path, e))?;
        let samples: Vec<i16> = bytes
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let frame = RawChannelFrame::new(
            samples,
            self.header.event_count,
            self.header.channel_count,
            self.header.samples_per_event,
            self.header.sample_frequency_hz,
            self.next_frame as u64,
            self.header.layout_hash,
        )?;
        self.next_frame += 1;
        Ok(Some(frame))
    }
}

/// Write a sequence of frames sharing one layout to a raw container.
pub fn write_raw(frames: &[RawChannelFrame], path: &Path) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Parameter("cannot write an empty frame sequence".into()))?;
    let mut writer = RawFrameWriter::create(
        path,
        first.event_count,
        first.channel_count,
        first.samples_per_event,
        first.sample_frequency_hz,
        first.layout_ref,
    )?;
    for frame in frames {
        writer.append(frame)?;
    }
    writer.finish()
}

/// Read all frames from a raw container.
pub fn read_raw(path: &Path, expected_layout: Option<u64>) -> Result<Vec<RawChannelFrame>> {
    let mut reader = RawFrameReader::open(path, expected_layout)?;
    let mut frames = Vec::with_capacity(reader.header().frame_count);
    while let Some(frame) = reader.next_frame()? {
        frames.push(frame);
    }
    Ok(frames)
}
