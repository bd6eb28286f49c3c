//! Frame-level representations of a spike stream: spike rate (TFP),
//! inter-spike interval (ISI) and the segmented long window.

use std::ops::Range;

use crate::error::{bail, Result};
use crate::frame::Frame;
use crate::spike_io::SpikeStream;

pub const DEFAULT_SHORT_WINDOW: usize = 32;
pub const DEFAULT_LONG_WINDOW: usize = 256;

/// `length` timesteps starting at `center - length/2`, so an even window has
/// one more sample before the center than after it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncodingWindow {
    pub center: usize,
    pub length: usize,
}

impl EncodingWindow {
    pub fn new(center: usize, length: usize) -> Result<Self> {
        if length == 0 {
            bail!(Config, "window length must be >= 1");
        }
        Ok(Self { center, length })
    }

    pub fn start(&self) -> isize {
        self.center as isize - (self.length / 2) as isize
    }

    pub fn end(&self) -> isize {
        self.start() + self.length as isize
    }

    /// Window intersected with `[0, len)`.
    pub fn clipped(&self, len: usize) -> Range<usize> {
        let lo = self.start().clamp(0, len as isize) as usize;
        let hi = self.end().clamp(0, len as isize) as usize;
        lo..hi
    }

    pub fn fits(&self, len: usize) -> bool {
        self.start() >= 0 && self.end() <= len as isize
    }
}

/// Spike count in the clipped window divided by the full window length.
pub fn tfp_encode(stream: &SpikeStream, window: EncodingWindow) -> Frame {
    tfp_range(stream, window.clipped(stream.length()), window.length)
}

fn tfp_range(stream: &SpikeStream, range: Range<usize>, divisor: usize) -> Frame {
    let (h, w) = (stream.height(), stream.width());
    let mut counts = vec![0u32; h * w];
    for t in range {
        let bytes = stream.frame_bytes(t);
        for (p, c) in counts.iter_mut().enumerate() {
            if bytes[p / 8] & (0x80 >> (p % 8)) != 0 {
                *c += 1;
            }
        }
    }
    let data = counts.iter().map(|&c| c as f32 / divisor as f32).collect();
    Frame::new(h, w, data).expect("shape matches stream")
}

/// Gap `t+ - t-` between the first spike at or after the center and the last
/// spike strictly before it, both inside the window; 0 when either is missing.
pub fn isi_encode(stream: &SpikeStream, window: EncodingWindow) -> Frame {
    let (h, w) = (stream.height(), stream.width());
    let range = window.clipped(stream.length());
    let t = window.center;
    Frame::from_fn(h, w, |y, x| {
        let p = y * w + x;
        let after = (t.max(range.start)..range.end).find(|&s| stream.bit(p, s));
        let before = (range.start..t.min(range.end)).rev().find(|&s| stream.bit(p, s));
        match (before, after) {
            (Some(b), Some(a)) => (a - b) as f32,
            _ => 0.0,
        }
    })
}

/// Intensity estimate `1/ISI`, with undefined intervals mapped to 0.
pub fn isi_to_intensity(isi: &Frame) -> Frame {
    isi.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 })
}

/// Scales so the largest value is 1; an all-zero frame is returned unchanged.
pub fn normalize_by_max(frame: &Frame) -> Frame {
    let m = frame.max_value();
    if m > 0.0 {
        frame.map(|v| v / m)
    } else {
        frame.clone()
    }
}

/// The raw 0/1 spike planes of the clipped window, zero-filled where the
/// window runs past the stream, so the result always has `length` frames.
pub fn binary_frames(stream: &SpikeStream, window: EncodingWindow) -> Vec<Frame> {
    let (h, w) = (stream.height(), stream.width());
    (window.start()..window.end())
        .map(|t| {
            if t < 0 || t >= stream.length() as isize {
                return Frame::filled(h, w, 0.0);
            }
            let t = t as usize;
            let data = (0..h * w).map(|p| if stream.bit(p, t) { 1.0 } else { 0.0 }).collect();
            Frame::new(h, w, data).expect("shape matches stream")
        })
        .collect()
}

pub const BOX3: [f32; 9] = [1.0 / 9.0; 9];

/// `n_r = w_l / w_s` sub-window TFP frames of a long window.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentedRepresentation {
    pub segments: Vec<Frame>,
}

impl SegmentedRepresentation {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn mean_frame(&self) -> Frame {
        let first = &self.segments[0];
        let mut acc = vec![0.0f64; first.len()];
        for s in &self.segments {
            for (a, &v) in acc.iter_mut().zip(s.data()) {
                *a += v as f64;
            }
        }
        let n = self.segments.len() as f64;
        Frame::new(first.height(), first.width(), acc.iter().map(|a| (a / n) as f32).collect())
            .expect("shape")
    }
}

/// Splits the long window centred at `center` into `w_l / w_s` consecutive
/// sub-windows, TFP-encodes each and smooths it with a 3x3 box filter.
pub fn segment_long_window(
    stream: &SpikeStream,
    center: usize,
    w_l: usize,
    w_s: usize,
) -> Result<SegmentedRepresentation> {
    if w_s == 0 || w_l == 0 || !w_l.is_multiple_of(w_s) {
        bail!(Config, "long window {w_l} must be a positive multiple of short window {w_s}");
    }
    let window = EncodingWindow::new(center, w_l)?;
    if !window.fits(stream.length()) {
        bail!(
            Config,
            "long window of {w_l} at t={center} does not fit a stream of {} steps",
            stream.length()
        );
    }
    let start = window.start() as usize;
    let segments = (0..w_l / w_s)
        .map(|i| {
            let lo = start + i * w_s;
            tfp_range(stream, lo..lo + w_s, w_s).filter_reflect(&BOX3, 3)
        })
        .collect();
    Ok(SegmentedRepresentation { segments })
}
