//! Frame handles exchanged on graph edges.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use echopipe_core::frame::{BModeImage, EnvelopeFrame, RawChannelFrame, RfFrame};

static MINTED: AtomicU64 = AtomicU64::new(0);

/// Number of frame payloads allocated so far in this process. Cloning a
/// payload (fan-out, edge hops) does not mint; only wrapping a new frame
/// does — the zero-copy contract in one counter.
pub fn payloads_minted() -> u64 {
    MINTED.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Raw,
    Rf,
    Envelope,
    Image,
}

impl PayloadKind {
    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Raw => "raw-channel",
            PayloadKind::Rf => "rf",
            PayloadKind::Envelope => "envelope",
            PayloadKind::Image => "b-mode-image",
        }
    }
}

#[derive(Debug, Clone)]
pub enum PayloadData {
    Raw(Arc<RawChannelFrame>),
    Rf(Arc<RfFrame>),
    Envelope(Arc<EnvelopeFrame>),
    Image(Arc<BModeImage>),
}

/// A shared, immutable frame plus its mint serial. Clones share the same
/// serial and the same allocation.
#[derive(Debug, Clone)]
pub struct FramePayload {
    serial: u64,
    pub data: PayloadData,
}

impl FramePayload {
    fn mint(data: PayloadData) -> Self {
        let serial = MINTED.fetch_add(1, Ordering::Relaxed);
        Self { serial, data }
    }

    pub fn from_raw(frame: RawChannelFrame) -> Self {
        Self::mint(PayloadData::Raw(Arc::new(frame)))
    }

    pub fn from_rf(frame: RfFrame) -> Self {
        Self::mint(PayloadData::Rf(Arc::new(frame)))
    }

    pub fn from_envelope(frame: EnvelopeFrame) -> Self {
        Self::mint(PayloadData::Envelope(Arc::new(frame)))
    }

    pub fn from_image(image: BModeImage) -> Self {
        Self::mint(PayloadData::Image(Arc::new(image)))
    }

    /// Identity of the underlying allocation; clones share it.
    pub fn serial(&self) -> u64 {
        self.serial
    }

    pub fn kind(&self) -> PayloadKind {
        match &self.data {
            PayloadData::Raw(_) => PayloadKind::Raw,
            PayloadData::Rf(_) => PayloadKind::Rf,
            PayloadData::Envelope(_) => PayloadKind::Envelope,
            PayloadData::Image(_) => PayloadKind::Image,
        }
    }

    pub fn timestamp_ns(&self) -> u64 {
        match &self.data {
            PayloadData::Raw(f) => f.timestamp_ns,
            PayloadData::Rf(f) => f.timestamp_ns,
            PayloadData::Envelope(f) => f.timestamp_ns,
            PayloadData::Image(f) => f.timestamp_ns,
        }
    }

    /// Pointer identity of the payload allocation, for zero-copy checks.
    pub fn payload_ptr(&self) -> usize {
        match &self.data {
            PayloadData::Raw(f) => Arc::as_ptr(f) as usize,
            PayloadData::Rf(f) => Arc::as_ptr(f) as usize,
            PayloadData::Envelope(f) => Arc::as_ptr(f) as usize,
            PayloadData::Image(f) => Arc::as_ptr(f) as usize,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clones_share_serial_and_allocation() {
        let frame = RawChannelFrame::new(vec![0; 8], 1, 2, 4, 1e6, 0, 0).unwrap();
        let before = payloads_minted();
        let payload = FramePayload::from_raw(frame);
        let clone = payload.clone();
        assert_eq!(payloads_minted(), before + 1);
        assert_eq!(payload.serial(), clone.serial());
        assert_eq!(payload.payload_ptr(), clone.payload_ptr());
        assert_eq!(payload.kind(), PayloadKind::Raw);
    }
}
