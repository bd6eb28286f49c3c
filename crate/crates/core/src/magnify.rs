//! Motion magnification behind a plug-in interface, with a linear Eulerian
//! magnifier built in: every pixel's time series gains `alpha` times its
//! ideal temporal bandpass.

use std::path::Path;
use std::process::Command;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{bail, Error, Result};
use crate::frame::{read_sequence, write_sequence, Frame, FrameFormat};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MagnifyConfig {
    pub alpha: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    /// Frames per second of the input sequence.
    pub frame_rate: f64,
}

impl MagnifyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            bail!(Config, "alpha must be >= 0, got {}", self.alpha);
        }
        if !(self.frame_rate > 0.0) {
            bail!(Config, "frame rate must be positive, got {}", self.frame_rate);
        }
        let nyquist = self.frame_rate / 2.0;
        if !(0.0 <= self.band_lo && self.band_lo < self.band_hi && self.band_hi <= nyquist) {
            bail!(
                Config,
                "passband {}..{} Hz must satisfy 0 <= lo < hi <= {nyquist} (half the frame rate)",
                self.band_lo,
                self.band_hi
            );
        }
        Ok(())
    }
}

pub trait Magnifier {
    fn name(&self) -> &str;
    /// Must return the input unchanged when `alpha` is 0.
    fn magnify(&self, frames: &[Frame], cfg: &MagnifyConfig) -> Result<Vec<Frame>>;
}

/// Ideal FFT bandpass of one real series. The DC bin is always rejected.
pub fn bandpass(series: &[f64], frame_rate: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = series.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<f64>> = series.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut buf);
    apply_band(&mut buf, frame_rate, lo, hi);
    inv.process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn apply_band(buf: &mut [Complex<f64>], frame_rate: f64, lo: f64, hi: f64) {
    let n = buf.len();
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * frame_rate / n as f64;
        if bin == 0 || f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
}

fn check_sequence(frames: &[Frame]) -> Result<()> {
    if frames.len() < 4 {
        bail!(Input, "magnification needs at least 4 frames, got {}", frames.len());
    }
    for f in &frames[1..] {
        frames[0].same_shape(f)?;
    }
    Ok(())
}

/// `I + alpha * bandpass(I)` per pixel, without clamping.
pub fn eulerian_magnify_unclamped(frames: &[Frame], cfg: &MagnifyConfig) -> Result<Vec<Frame>> {
    cfg.validate()?;
    check_sequence(frames)?;
    if cfg.alpha == 0.0 {
        return Ok(frames.to_vec());
    }
    let n = frames.len();
    let (h, w) = frames[0].dims();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let columns: Vec<Vec<f32>> = (0..h * w)
        .into_par_iter()
        .map(|p| {
            let mut buf: Vec<Complex<f64>> = frames.iter().map(|f| Complex::new(f.data()[p] as f64, 0.0)).collect();
            fwd.process(&mut buf);
            apply_band(&mut buf, cfg.frame_rate, cfg.band_lo, cfg.band_hi);
            inv.process(&mut buf);
            frames
                .iter()
                .zip(&buf)
                .map(|(f, b)| (f.data()[p] as f64 + cfg.alpha * b.re / n as f64) as f32)
                .collect()
        })
        .collect();
    Ok((0..n)
        .map(|t| Frame::from_fn(h, w, |y, x| columns[y * w + x][t]))
        .collect())
}

/// Eulerian magnification clamped to [0,1]; `alpha = 0` returns the input
/// bit for bit.
pub fn eulerian_magnify(frames: &[Frame], cfg: &MagnifyConfig) -> Result<Vec<Frame>> {
    if cfg.alpha == 0.0 {
        cfg.validate()?;
        check_sequence(frames)?;
        return Ok(frames.to_vec());
    }
    Ok(eulerian_magnify_unclamped(frames, cfg)?.into_iter().map(|f| f.clamp01()).collect())
}

pub struct EulerianMagnifier;

impl Magnifier for EulerianMagnifier {
    fn name(&self) -> &str {
        "eulerian"
    }

    fn magnify(&self, frames: &[Frame], cfg: &MagnifyConfig) -> Result<Vec<Frame>> {
        eulerian_magnify(frames, cfg)
    }
}

/// Runs a user command through `sh -c`. Frames are exchanged as numbered
/// PNGs: the command reads `$SPK_IN` and must write the same number of
/// same-sized frames to `$SPK_OUT`. `SPK_ALPHA`, `SPK_BAND_LO`,
/// `SPK_BAND_HI` and `SPK_FPS` carry the configuration.
pub struct ExternalCommand {
    pub command: String,
}

impl Magnifier for ExternalCommand {
    fn name(&self) -> &str {
        &self.command
    }

    fn magnify(&self, frames: &[Frame], cfg: &MagnifyConfig) -> Result<Vec<Frame>> {
        cfg.validate()?;
        check_sequence(frames)?;
        if cfg.alpha == 0.0 {
            return Ok(frames.to_vec());
        }
        let dir = tempfile::tempdir()?;
        let (input, output) = (dir.path().join("in"), dir.path().join("out"));
        std::fs::create_dir(&input)?;
        std::fs::create_dir(&output)?;
        write_sequence(&input, frames, FrameFormat::Png)?;
        let result = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .env("SPK_IN", &input)
            .env("SPK_OUT", &output)
            .env("SPK_ALPHA", cfg.alpha.to_string())
            .env("SPK_BAND_LO", cfg.band_lo.to_string())
            .env("SPK_BAND_HI", cfg.band_hi.to_string())
            .env("SPK_FPS", cfg.frame_rate.to_string())
            .output()
            .map_err(|e| Error::Plugin(format!("cannot start '{}': {e}", self.command)))?;
        if !result.status.success() {
            bail!(
                Plugin,
                "'{}' exited with {}: {}",
                self.command,
                result.status,
                String::from_utf8_lossy(&result.stderr).trim()
            );
        }
        read_plugin_output(&output, frames)
    }
}

fn read_plugin_output(dir: &Path, inputs: &[Frame]) -> Result<Vec<Frame>> {
    let out = read_sequence(dir).map_err(|e| Error::Plugin(format!("reading plugin output: {e}")))?;
    if out.len() != inputs.len() {
        bail!(Plugin, "plugin wrote {} frames for {} inputs", out.len(), inputs.len());
    }
    if let Some(f) = out.iter().find(|f| f.dims() != inputs[0].dims()) {
        bail!(Plugin, "plugin frame of {:?}, expected {:?}", f.dims(), inputs[0].dims());
    }
    Ok(out)
}

const BAND_ROWS: usize = 8;
const MIN_STRUCTURE: f64 = 1e-10;

/// Horizontal gradient of the mean row profile of rows `y0..y1`.
fn edge_profile(f: &Frame, y0: usize, y1: usize) -> Vec<f64> {
    let w = f.width();
    let mut profile = vec![0.0f64; w];
    for y in y0..y1 {
        for (x, p) in profile.iter_mut().enumerate() {
            *p += f.get(y, x) as f64;
        }
    }
    (0..w)
        .map(|x| {
            let (a, b) = (x.saturating_sub(1), (x + 1).min(w - 1));
            (profile[b] - profile[a]) / (b - a).max(1) as f64 / (y1 - y0) as f64
        })
        .collect()
}

/// Sub-pixel shift `d` maximising `sum reference'(x) * frame'(x + d)`, or
/// `None` when either profile is flat.
fn profile_shift(reference: &[f64], moved: &[f64], max_shift: usize) -> Option<f64> {
    let energy = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
    if energy(reference) < MIN_STRUCTURE || energy(moved) < MIN_STRUCTURE {
        return None;
    }
    let w = reference.len() as isize;
    let corr = |s: isize| -> f64 {
        (0..w)
            .filter(|&x| x + s >= 0 && x + s < w)
            .map(|x| reference[x as usize] * moved[(x + s) as usize])
            .sum()
    };
    let m = max_shift as isize;
    let scores: Vec<f64> = (-m..=m).map(corr).collect();
    let best = (0..scores.len()).max_by(|&a, &b| scores[a].total_cmp(&scores[b]))?;
    let mut d = best as f64 - m as f64;
    if best > 0 && best + 1 < scores.len() {
        let (l, c, r) = (scores[best - 1], scores[best], scores[best + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            d += 0.5 * (l - r) / denom;
        }
    }
    Some(d)
}

/// Horizontal displacement of each frame relative to the corresponding
/// reference frame: the median over 8-row bands of the parabolic-peak
/// cross-correlation of edge profiles.
pub fn displacement_series(frames: &[Frame], reference: &[Frame]) -> Result<Vec<f64>> {
    if frames.len() != reference.len() || frames.is_empty() {
        bail!(Input, "{} frames against {} reference frames", frames.len(), reference.len());
    }
    let (h, w) = frames[0].dims();
    let max_shift = (w / 4).max(1);
    let mut out = Vec::with_capacity(frames.len());
    for (f, r) in frames.iter().zip(reference) {
        f.same_shape(r)?;
        f.same_shape(&frames[0])?;
        let mut shifts = Vec::new();
        for y0 in (0..h).step_by(BAND_ROWS) {
            let y1 = (y0 + BAND_ROWS).min(h);
            if let Some(d) = profile_shift(&edge_profile(r, y0, y1), &edge_profile(f, y0, y1), max_shift) {
                shifts.push(d);
            }
        }
        if shifts.is_empty() {
            bail!(Measurement, "no edge structure to measure displacement against");
        }
        shifts.sort_by(f64::total_cmp);
        let mid = shifts.len() / 2;
        out.push(if shifts.len() % 2 == 1 {
            shifts[mid]
        } else {
            0.5 * (shifts[mid - 1] + shifts[mid])
        });
    }
    Ok(out)
}

/// Peak-to-peak of `displacement_series`.
pub fn magnified_motion_amplitude(frames: &[Frame], reference: &[Frame]) -> Result<f64> {
    let d = displacement_series(frames, reference)?;
    let max = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = d.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min)
}
