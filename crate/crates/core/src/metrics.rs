//! Video smoothness metrics over dense optical flow: flow consistency (the
//! spread of frame-to-frame flow change) and motion smoothness (the spread
//! of flow magnitude). Flow is estimated with Horn-Schunck.

use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::error::{bail, Error, Result};
use crate::frame::Frame;

/// Horizontal (u) and vertical (v) displacement in pixels; positive values
/// mean content moves right / down from the first frame to the second.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0, 0.0)
    }

    pub fn constant(height: usize, width: usize, u: f32, v: f32) -> Self {
        Self {
            height,
            width,
            u: vec![u; height * width],
            v: vec![v; height * width],
        }
    }

    pub fn mean_u(&self) -> f64 {
        self.u.iter().map(|&a| a as f64).sum::<f64>() / self.u.len() as f64
    }

    pub fn mean_v(&self) -> f64 {
        self.v.iter().map(|&a| a as f64).sum::<f64>() / self.v.len() as f64
    }

    fn norms(&self) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(&a, &b)| (a as f64).hypot(b as f64)).collect()
    }

    fn minus(&self, other: &FlowField) -> FlowField {
        FlowField {
            height: self.height,
            width: self.width,
            u: self.u.iter().zip(&other.u).map(|(a, b)| a - b).collect(),
            v: self.v.iter().zip(&other.v).map(|(a, b)| a - b).collect(),
        }
    }

    /// Direction as hue, magnitude (relative to `max_norm`) as value.
    pub fn to_hsv_image(&self, max_norm: f64) -> RgbImage {
        let scale = if max_norm > 0.0 { 1.0 / max_norm } else { 0.0 };
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = y as usize * self.width + x as usize;
            let (u, v) = (self.u[p] as f64, self.v[p] as f64);
            let hue = (v.atan2(u).to_degrees() + 360.0) % 360.0;
            let value = (u.hypot(v) * scale).clamp(0.0, 1.0);
            Rgb(hsv_to_rgb(hue, 1.0, value))
        })
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HornSchunck {
    /// Smoothness weight (alpha in the classic formulation), in 8-bit
    /// intensity units.
    pub reg: f64,
    pub iterations: usize,
}

impl Default for HornSchunck {
    fn default() -> Self {
        Self { reg: 15.0, iterations: 100 }
    }
}

impl std::fmt::Display for HornSchunck {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Horn-Schunck optical flow (reg={}, iterations={}, intensities x255)", self.reg, self.iterations)
    }
}

/// Horn-Schunck flow from `a` to `b`. Intensities are scaled to 0..255 so
/// `reg` has its customary magnitude; borders replicate edge pixels.
pub fn horn_schunck_flow(a: &Frame, b: &Frame, params: &HornSchunck) -> Result<FlowField> {
    a.same_shape(b)?;
    if !(params.reg > 0.0) {
        bail!(Config, "Horn-Schunck reg must be positive, got {}", params.reg);
    }
    let (h, w) = a.dims();
    let at = |f: &Frame, y: isize, x: isize| -> f64 {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        f.get(y, x) as f64 * 255.0
    };
    let n = h * w;
    let (mut ix, mut iy, mut it) = (vec![0.0f64; n], vec![0.0f64; n], vec![0.0f64; n]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = y as usize * w + x as usize;
            let dx = |f: &Frame| 0.5 * (at(f, y, x + 1) - at(f, y, x - 1));
            let dy = |f: &Frame| 0.5 * (at(f, y + 1, x) - at(f, y - 1, x));
            ix[p] = 0.5 * (dx(a) + dx(b));
            iy[p] = 0.5 * (dy(a) + dy(b));
            it[p] = at(b, y, x) - at(a, y, x);
        }
    }
    let alpha2 = params.reg * params.reg;
    let (mut u, mut v) = (vec![0.0f64; n], vec![0.0f64; n]);
    let neighbour_mean = |f: &[f64], y: usize, x: usize| -> f64 {
        let g = |dy: isize, dx: isize| {
            let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
            let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
            f[yy * w + xx]
        };
        (g(-1, 0) + g(1, 0) + g(0, -1) + g(0, 1)) / 6.0 + (g(-1, -1) + g(-1, 1) + g(1, -1) + g(1, 1)) / 12.0
    };
    for _ in 0..params.iterations {
        let mut nu = vec![0.0f64; n];
        let mut nv = vec![0.0f64; n];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let (ub, vb) = (neighbour_mean(&u, y, x), neighbour_mean(&v, y, x));
                let k = (ix[p] * ub + iy[p] * vb + it[p]) / (alpha2 + ix[p] * ix[p] + iy[p] * iy[p]);
                nu[p] = ub - ix[p] * k;
                nv[p] = vb - iy[p] * k;
            }
        }
        u = nu;
        v = nv;
    }
    Ok(FlowField {
        height: h,
        width: w,
        u: u.iter().map(|&a| a as f32).collect(),
        v: v.iter().map(|&a| a as f32).collect(),
    })
}

/// Flow between each pair of consecutive frames.
pub fn sequence_flows(frames: &[Frame], params: &HornSchunck) -> Result<Vec<FlowField>> {
    if frames.len() < 2 {
        bail!(Input, "need at least 2 frames for optical flow, got {}", frames.len());
    }
    frames
        .par_windows(2)
        .map(|p| horn_schunck_flow(&p[0], &p[1], params))
        .collect()
}

/// How a flow field's per-pixel vector norms become one number.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Reduce {
    #[default]
    Mean,
    Median,
    Max,
}

impl std::str::FromStr for Reduce {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "max" => Ok(Self::Max),
            other => Err(Error::Config(format!("reduce must be mean|median|max, got '{other}'"))),
        }
    }
}

impl std::fmt::Display for Reduce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Median => "median",
            Self::Max => "max",
        })
    }
}

impl Reduce {
    pub fn apply(self, mut values: Vec<f64>) -> f64 {
        match self {
            Self::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Self::Max => values.iter().copied().fold(0.0, f64::max),
            Self::Median => {
                values.sort_by(f64::total_cmp);
                let m = values.len() / 2;
                if values.len() % 2 == 1 {
                    values[m]
                } else {
                    0.5 * (values[m - 1] + values[m])
                }
            }
        }
    }
}

/// Mean and standard deviation with divisor equal to the number of terms.
/// A series whose terms are all equal reports exactly zero spread.
pub fn mean_std(series: &[f64]) -> (f64, f64) {
    let n = series.len() as f64;
    if series.windows(2).all(|w| w[0] == w[1]) {
        return (series.first().copied().unwrap_or(0.0), 0.0);
    }
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `||F_{i+1} - F_i||` for each consecutive pair of flows.
pub fn delta_series(flows: &[FlowField], reduce: Reduce) -> Result<Vec<f64>> {
    if flows.len() < 3 {
        bail!(Input, "flow consistency needs at least 3 flow fields, got {}", flows.len());
    }
    check_flows(flows)?;
    Ok(flows.windows(2).map(|p| reduce.apply(p[1].minus(&p[0]).norms())).collect())
}

/// `||F_i||` for each flow.
pub fn magnitude_series(flows: &[FlowField], reduce: Reduce) -> Result<Vec<f64>> {
    if flows.len() < 2 {
        bail!(Input, "motion smoothness needs at least 2 flow fields, got {}", flows.len());
    }
    check_flows(flows)?;
    Ok(flows.iter().map(|f| reduce.apply(f.norms())).collect())
}

fn check_flows(flows: &[FlowField]) -> Result<()> {
    let (h, w) = (flows[0].height, flows[0].width);
    if flows.iter().any(|f| f.height != h || f.width != w) {
        bail!(Shape, "flow fields of differing shapes");
    }
    Ok(())
}

/// `(mu, sigma)` of the flow-change series.
pub fn flow_consistency(flows: &[FlowField], reduce: Reduce) -> Result<(f64, f64)> {
    Ok(mean_std(&delta_series(flows, reduce)?))
}

/// `(mu_S, sigma_S)` of the flow-magnitude series.
pub fn motion_smoothness(flows: &[FlowField], reduce: Reduce) -> Result<(f64, f64)> {
    Ok(mean_std(&magnitude_series(flows, reduce)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mu: f64,
    pub sigma: f64,
    pub mu_s: f64,
    pub sigma_s: f64,
    /// `||F_i||`, one per consecutive frame pair.
    pub magnitudes: Vec<f64>,
    /// `||F_{i+1} - F_i||`.
    pub deltas: Vec<f64>,
    pub flow_method: String,
    pub reduce: Reduce,
}

pub fn report_from_flows(flows: &[FlowField], reduce: Reduce, method: &str) -> Result<MetricReport> {
    let deltas = delta_series(flows, reduce)?;
    let magnitudes = magnitude_series(flows, reduce)?;
    let (mu, sigma) = mean_std(&deltas);
    let (mu_s, sigma_s) = mean_std(&magnitudes);
    Ok(MetricReport {
        mu,
        sigma,
        mu_s,
        sigma_s,
        magnitudes,
        deltas,
        flow_method: method.to_string(),
        reduce,
    })
}

/// Flow, then both metrics, for a frame sequence of at least 4 frames.
pub fn evaluate_sequence(frames: &[Frame], hs: &HornSchunck, reduce: Reduce) -> Result<MetricReport> {
    let flows = sequence_flows(frames, hs)?;
    report_from_flows(&flows, reduce, &hs.to_string())
}

impl MetricReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# flow: {}; reduce: {}", self.flow_method, self.reduce);
        s.push_str("i,flow_norm,delta_norm\n");
        for (i, m) in self.magnitudes.iter().enumerate() {
            match self.deltas.get(i) {
                Some(d) => {
                    let _ = writeln!(s, "{i},{m},{d}");
                }
                None => {
                    let _ = writeln!(s, "{i},{m},");
                }
            }
        }
        let _ = writeln!(s, "mu,{}", self.mu);
        let _ = writeln!(s, "sigma,{}", self.sigma);
        let _ = writeln!(s, "mu_s,{}", self.mu_s);
        let _ = writeln!(s, "sigma_s,{}", self.sigma_s);
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    /// Reads back the footer values of a CSV written by `to_csv`.
    pub fn summary_from_csv(text: &str) -> Result<(f64, f64, f64, f64)> {
        let find = |key: &str| -> Result<f64> {
            text.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(',')))
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("metrics CSV lacks '{key}'")))
        };
        Ok((find("mu")?, find("sigma")?, find("mu_s")?, find("sigma_s")?))
    }
}

/// Writes one HSV-coded PNG per flow field, sharing one magnitude scale.
pub fn write_flow_images(dir: &Path, flows: &[FlowField]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let max = flows
        .iter()
        .flat_map(|f| f.norms())
        .fold(0.0f64, f64::max);
    for (i, f) in flows.iter().enumerate() {
        f.to_hsv_image(max).save(dir.join(format!("flow_{i:06}.png")))?;
    }
    Ok(())
}
