//! Grayscale intensity frames and their on-disk forms.
//!
//! Frames travel between stages either as 8-bit PNG/PGM (linear map of [0,1]
//! to 0..=255) or as `SPKF` float frames: magic `SPKF`, height and width as
//! little-endian `u32`, then row-major `f32` LE values.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};

use crate::error::{bail, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            bail!(Shape, "{height}x{width} frame needs {} values, got {}", height * width, data.len());
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn same_shape(&self, other: &Frame) -> Result<()> {
        if self.dims() != other.dims() {
            bail!(Shape, "frame {:?} vs {:?}", self.dims(), other.dims());
        }
        Ok(())
    }

    /// Correlated-filter with a square kernel, reflect-101 padding.
    pub fn filter_reflect(&self, kernel: &[f32], size: usize) -> Frame {
        let r = (size / 2) as isize;
        Frame::from_fn(self.height, self.width, |y, x| {
            let mut acc = 0.0f32;
            for ky in 0..size {
                let sy = reflect(y as isize + ky as isize - r, self.height);
                for kx in 0..size {
                    let sx = reflect(x as isize + kx as isize - r, self.width);
                    acc += kernel[ky * size + kx] * self.data[sy * self.width + sx];
                }
            }
            acc
        })
    }

    pub fn to_gray8(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([quantize(self.get(y as usize, x as usize))])
        })
    }

    pub fn from_gray8(img: &GrayImage) -> Frame {
        let (w, h) = img.dimensions();
        Frame::from_fn(h as usize, w as usize, |y, x| {
            img.get_pixel(x as u32, y as u32)[0] as f32 / 255.0
        })
    }

    pub fn write_spkf(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(SPKF_MAGIC)?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_spkf(r: &mut impl Read) -> Result<Frame> {
        let mut head = [0u8; 12];
        r.read_exact(&mut head)?;
        if &head[..4] != SPKF_MAGIC {
            bail!(Format, "not an SPKF frame");
        }
        let h = u32::from_le_bytes(head[4..8].try_into().expect("4 bytes")) as usize;
        let w = u32::from_le_bytes(head[8..12].try_into().expect("4 bytes")) as usize;
        let mut raw = vec![0u8; h * w * 4];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Frame::new(h, w, data)
    }
}

pub const SPKF_MAGIC: &[u8; 4] = b"SPKF";

pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FrameFormat {
    #[default]
    Png,
    Pgm,
    Float,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Png => "png",
            FrameFormat::Pgm => "pgm",
            FrameFormat::Float => "spkf",
        }
    }
}

pub fn save_frame(frame: &Frame, path: &Path, format: FrameFormat) -> Result<()> {
    match format {
        FrameFormat::Png => frame.to_gray8().save_with_format(path, image::ImageFormat::Png)?,
        FrameFormat::Pgm => {
            let mut out = format!("P5\n{} {}\n255\n", frame.width, frame.height).into_bytes();
            out.extend(frame.data.iter().map(|&v| quantize(v)));
            fs::write(path, out)?;
        }
        FrameFormat::Float => {
            let mut buf = Vec::with_capacity(12 + frame.len() * 4);
            frame.write_spkf(&mut buf)?;
            fs::write(path, buf)?;
        }
    }
    Ok(())
}

/// Loads a PNG, PGM or SPKF frame, chosen by extension.
pub fn load_frame(path: &Path) -> Result<Frame> {
    if path.extension().is_some_and(|e| e == "spkf") {
        let bytes = fs::read(path)?;
        return Frame::read_spkf(&mut bytes.as_slice());
    }
    let img = image::open(path)?.to_luma8();
    Ok(Frame::from_gray8(&img))
}

pub fn frame_path(dir: &Path, prefix: &str, index: usize, format: FrameFormat) -> PathBuf {
    dir.join(format!("{prefix}_{index:06}.{}", format.extension()))
}

/// Writes `frame_000000.ext`, `frame_000001.ext`, ...
pub fn write_sequence(dir: &Path, frames: &[Frame], format: FrameFormat) -> Result<Vec<PathBuf>> {
    write_sequence_with_prefix(dir, "frame", frames, format)
}

pub fn write_sequence_with_prefix(
    dir: &Path,
    prefix: &str,
    frames: &[Frame],
    format: FrameFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let p = frame_path(dir, prefix, i, format);
            save_frame(f, &p, format)?;
            Ok(p)
        })
        .collect()
}

/// Reads every `frame_*` image in `dir` in name order. Falls back to all
/// recognized image files when no `frame_` prefix is present.
pub fn read_sequence(dir: &Path) -> Result<Vec<Frame>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e, "png" | "pgm" | "spkf"))
        })
        .collect();
    paths.sort();
    let framed: Vec<PathBuf> = paths
        .iter()
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_"))
        })
        .cloned()
        .collect();
    let chosen = if framed.is_empty() { paths } else { framed };
    if chosen.is_empty() {
        bail!(Input, "no frames found in {}", dir.display());
    }
    chosen.iter().map(|p| load_frame(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_101() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(-3, 1), 0);
    }

    #[test]
    fn spkf_layout_and_round_trip() {
        let f = Frame::new(1, 2, vec![0.25, -3.5]).unwrap();
        let mut buf = Vec::new();
        f.write_spkf(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"SPKF");
        assert_eq!(&buf[4..12], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(buf.len(), 12 + 8);
        assert_eq!(Frame::read_spkf(&mut buf.as_slice()).unwrap(), f);
    }

    #[test]
    fn png_and_pgm_sequences_round_trip_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let frames: Vec<Frame> = (0..3)
            .map(|k| Frame::from_fn(4, 5, |y, x| ((y * 5 + x + k) % 7) as f32 / 6.0))
            .collect();
        for fmt in [FrameFormat::Png, FrameFormat::Pgm] {
            let sub = dir.path().join(fmt.extension());
            write_sequence(&sub, &frames, fmt).unwrap();
            let back = read_sequence(&sub).unwrap();
            for (a, b) in frames.iter().zip(&back) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
                }
            }
        }
    }

    #[test]
    fn constant_frame_is_filter_invariant() {
        let f = Frame::filled(6, 7, 0.4);
        let k = vec![1.0 / 9.0; 9];
        for v in f.filter_reflect(&k, 3).data() {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }
}
