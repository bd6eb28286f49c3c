//! The spike-stream container and its `.spk` file format.
//!
//! File layout (integers little-endian):
//!
//! | offset | size | field                 |
//! |--------|------|-----------------------|
//! | 0      | 4    | magic `SPKM`          |
//! | 4      | 4    | version (`u32`, = 1)  |
//! | 8      | 4    | height (`u32`)        |
//! | 12     | 4    | width (`u32`)         |
//! | 16     | 8    | length T (`u64`)      |
//! | 24     | 4    | rate_hz (`u32`)       |
//!
//! followed by T frames of `ceil(H*W/8)` bytes each. Pixels are row-major,
//! packed most-significant bit first; trailing bits of a frame are zero.
//! Frame `t` starts at byte `28 + t * ceil(H*W/8)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{bail, Result};

pub const MAGIC: &[u8; 4] = b"SPKM";
pub const VERSION: u32 = 1;
pub const HEADER_SIZE: usize = 28;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub version: u32,
    pub height: u32,
    pub width: u32,
    pub length: u64,
    pub rate_hz: u32,
}

impl StreamHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        b[..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..12].copy_from_slice(&self.height.to_le_bytes());
        b[12..16].copy_from_slice(&self.width.to_le_bytes());
        b[16..24].copy_from_slice(&self.length.to_le_bytes());
        b[24..28].copy_from_slice(&self.rate_hz.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; HEADER_SIZE]) -> Result<Self> {
        if &b[..4] != MAGIC {
            bail!(Format, "bad magic {:?}, expected SPKM", &b[..4]);
        }
        let u32_at = |o: usize| u32::from_le_bytes(b[o..o + 4].try_into().expect("4 bytes"));
        let version = u32_at(4);
        if version != VERSION {
            bail!(Format, "unsupported version {version}");
        }
        let header = Self {
            version,
            height: u32_at(8),
            width: u32_at(12),
            length: u64::from_le_bytes(b[16..24].try_into().expect("8 bytes")),
            rate_hz: u32_at(24),
        };
        if header.height == 0 || header.width == 0 || header.length == 0 || header.rate_hz == 0 {
            bail!(Format, "zero dimension or rate in header {header:?}");
        }
        Ok(header)
    }

    pub fn frame_bytes(&self) -> usize {
        (self.height as usize * self.width as usize).div_ceil(8)
    }

    /// Byte offset of frame `t` within the file.
    pub fn frame_offset(&self, t: usize) -> usize {
        HEADER_SIZE + t * self.frame_bytes()
    }
}

/// Binary spike tensor `{0,1}^(H x W x T)`, stored exactly as the file payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpikeStream {
    height: usize,
    width: usize,
    length: usize,
    rate_hz: u32,
    bits: Vec<u8>,
}

impl SpikeStream {
    /// An all-silent stream.
    pub fn new(height: usize, width: usize, length: usize, rate_hz: u32) -> Result<Self> {
        if height == 0 || width == 0 || length == 0 {
            bail!(Config, "stream dimensions must be positive, got {height}x{width}x{length}");
        }
        if rate_hz == 0 {
            bail!(Config, "rate_hz must be positive");
        }
        let stride = (height * width).div_ceil(8);
        Ok(Self {
            height,
            width,
            length,
            rate_hz,
            bits: vec![0; stride * length],
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn rate_hz(&self) -> u32 {
        self.rate_hz
    }

    pub fn frame_stride(&self) -> usize {
        (self.height * self.width).div_ceil(8)
    }

    pub fn header(&self) -> StreamHeader {
        StreamHeader {
            version: VERSION,
            height: self.height as u32,
            width: self.width as u32,
            length: self.length as u64,
            rate_hz: self.rate_hz,
        }
    }

    /// Packed bytes of frame `t`.
    pub fn frame_bytes(&self, t: usize) -> &[u8] {
        let s = self.frame_stride();
        &self.bits[t * s..(t + 1) * s]
    }

    pub fn payload(&self) -> &[u8] {
        &self.bits
    }

    /// Unchecked read by flat pixel index `y * width + x`.
    #[inline]
    pub fn bit(&self, pixel: usize, t: usize) -> bool {
        let byte = self.bits[t * self.frame_stride() + pixel / 8];
        (byte >> (7 - pixel % 8)) & 1 == 1
    }

    #[inline]
    pub fn set_bit(&mut self, pixel: usize, t: usize, on: bool) {
        let idx = t * self.frame_stride() + pixel / 8;
        let mask = 1u8 << (7 - pixel % 8);
        if on {
            self.bits[idx] |= mask;
        } else {
            self.bits[idx] &= !mask;
        }
    }

    fn check(&self, x: usize, y: usize, t: usize) -> Result<usize> {
        if x >= self.width || y >= self.height || t >= self.length {
            bail!(
                Bounds,
                "(x={x}, y={y}, t={t}) outside {}x{}x{}",
                self.width,
                self.height,
                self.length
            );
        }
        Ok(y * self.width + x)
    }

    /// The spike bit at column `x`, row `y`, timestep `t`.
    pub fn spike_at(&self, x: usize, y: usize, t: usize) -> Result<bool> {
        let p = self.check(x, y, t)?;
        Ok(self.bit(p, t))
    }

    pub fn set_spike(&mut self, x: usize, y: usize, t: usize, on: bool) -> Result<()> {
        let p = self.check(x, y, t)?;
        self.set_bit(p, t, on);
        Ok(())
    }

    pub fn count_spikes(&self) -> u64 {
        self.bits.iter().map(|b| b.count_ones() as u64).sum()
    }

    /// All set spikes as `(x, y, t)`, in time-major order.
    pub fn iter_spikes(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let n = self.height * self.width;
        (0..self.length).flat_map(move |t| {
            (0..n)
                .filter(move |&p| self.bit(p, t))
                .map(move |p| (p % self.width, p / self.width, t))
        })
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(&self.header().to_bytes())?;
        w.write_all(&self.bits)?;
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut head = [0u8; HEADER_SIZE];
        r.read_exact(&mut head)
            .map_err(|e| crate::Error::Format(format!("short header: {e}")))?;
        let h = StreamHeader::from_bytes(&head)?;
        let expected = (h.length as usize)
            .checked_mul(h.frame_bytes())
            .ok_or_else(|| crate::Error::Corruption("payload size overflows".into()))?;
        let mut bits = Vec::with_capacity(expected);
        r.take(expected as u64 + 1).read_to_end(&mut bits)?;
        if bits.len() != expected {
            bail!(
                Corruption,
                "payload has {} bytes{}, expected {expected} ({} frames x {} bytes)",
                bits.len().min(expected),
                if bits.len() > expected { " or more" } else { "" },
                h.length,
                h.frame_bytes()
            );
        }
        let pad = h.frame_bytes() * 8 - h.height as usize * h.width as usize;
        if pad > 0 {
            let unused = (1u8 << pad) - 1;
            if let Some(t) = bits
                .chunks(h.frame_bytes())
                .position(|f| f[f.len() - 1] & unused != 0)
            {
                bail!(Corruption, "frame {t} has nonzero padding bits");
            }
        }
        Ok(Self {
            height: h.height as usize,
            width: h.width as usize,
            length: h.length as usize,
            rate_hz: h.rate_hz,
            bits,
        })
    }
}

pub fn save_stream(stream: &SpikeStream, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    stream.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_stream(path: impl AsRef<Path>) -> Result<SpikeStream> {
    SpikeStream::read_from(&mut BufReader::new(File::open(path)?))
}
