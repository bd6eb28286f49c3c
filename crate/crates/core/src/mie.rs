//! Multi-level information extraction: a motion mask from the temporal
//! variance of the segmented long window, histogram alignment of the
//! short-window reconstruction, and mask-weighted fusion of both networks.

use diffkernel::NetworkParams;
use rayon::prelude::*;

use crate::bsn::{architecture, infer_bsn};
use crate::encoding::{segment_long_window, SegmentedRepresentation};
use crate::error::{bail, Error, Result};
use crate::frame::Frame;
use crate::spike_io::SpikeStream;

pub const HIST_BINS: usize = 256;

/// Per-pixel unbiased sample variance across the segments.
pub fn variance_map(segs: &SegmentedRepresentation) -> Result<Frame> {
    let n = segs.len();
    if n < 2 {
        bail!(Config, "variance needs at least 2 segments, got {n}");
    }
    let first = &segs.segments[0];
    let mut out = Frame::filled(first.height(), first.width(), 0.0);
    for (p, o) in out.data_mut().iter_mut().enumerate() {
        // shifted by the first sample so identical segments give exactly 0
        let x0 = first.data()[p] as f64;
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for seg in &segs.segments {
            let d = seg.data()[p] as f64 - x0;
            s += d;
            s2 += d * d;
        }
        let var = (s2 - s * s / n as f64) / (n - 1) as f64;
        *o = var.max(0.0) as f32;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterResult {
    pub k: usize,
    pub height: usize,
    pub width: usize,
    /// Cluster id per pixel; ids are ordered by ascending centroid.
    pub assignment: Vec<usize>,
    pub centroids: Vec<f64>,
}

fn nearest(centroids: &[f64], v: f64) -> usize {
    let mut best = 0;
    for (j, c) in centroids.iter().enumerate().skip(1) {
        // strict comparison sends ties to the lower id
        if (v - c).abs() < (v - centroids[best]).abs() {
            best = j;
        }
    }
    best
}

/// Scalar k-means on the variance values. Runs on the sorted values from
/// quantile starting points, so the result does not depend on pixel order.
pub fn kmeans_segment(vars: &Frame, k: usize) -> Result<ClusterResult> {
    if k < 2 {
        bail!(Config, "k-means needs K >= 2, got {k}");
    }
    let mut sorted: Vec<f64> = vars.data().iter().map(|&v| v as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < k {
        return Err(Error::DegenerateClustering(format!(
            "{} distinct variance values for {k} clusters",
            distinct.len()
        )));
    }
    let quantile = |vals: &[f64], j: usize| vals[((2 * j + 1) * vals.len() / (2 * k)).min(vals.len() - 1)];
    let mut centroids: Vec<f64> = (0..k).map(|j| quantile(&sorted, j)).collect();
    if centroids.windows(2).any(|w| w[0] >= w[1]) {
        // repeated values would start two clusters at one point
        centroids = (0..k).map(|j| quantile(&distinct, j)).collect();
    }
    let mut labels: Vec<usize> = sorted.iter().map(|&v| nearest(&centroids, v)).collect();
    for _ in 0..100 {
        let mut sum = vec![0.0f64; k];
        let mut count = vec![0usize; k];
        for (&v, &l) in sorted.iter().zip(&labels) {
            sum[l] += v;
            count[l] += 1;
        }
        for j in 0..k {
            if count[j] > 0 {
                centroids[j] = sum[j] / count[j] as f64;
            }
        }
        let next: Vec<usize> = sorted.iter().map(|&v| nearest(&centroids, v)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| centroids[a].total_cmp(&centroids[b]).then(a.cmp(&b)));
    let centroids: Vec<f64> = order.iter().map(|&j| centroids[j]).collect();
    let assignment = vars.data().iter().map(|&v| nearest(&centroids, v as f64)).collect();
    Ok(ClusterResult {
        k,
        height: vars.height(),
        width: vars.width(),
        assignment,
        centroids,
    })
}

fn gaussian5() -> [f32; 25] {
    let sigma = 1.5f64;
    let mut k = [0.0f64; 25];
    for y in 0..5 {
        for x in 0..5 {
            let (dy, dx) = (y as f64 - 2.0, x as f64 - 2.0);
            k[y * 5 + x] = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = k.iter().sum();
    k.map(|v| (v / total) as f32)
}

/// Gaussian-smoothed indicator of the pixels in clusters whose id is in
/// `selected`.
fn smoothed_indicator(c: &ClusterResult, selected: impl Fn(usize) -> bool) -> Frame {
    let data = c.assignment.iter().map(|&a| if selected(a) { 1.0 } else { 0.0 }).collect();
    Frame::new(c.height, c.width, data)
        .expect("assignment covers the frame")
        .filter_reflect(&gaussian5(), 5)
        .clamp01()
}

/// Soft mask over the `top` highest-variance clusters.
pub fn motion_mask(c: &ClusterResult, top: usize) -> Result<Frame> {
    if top == 0 || top >= c.k {
        bail!(Config, "top_clusters must be in 1..{}, got {top}", c.k);
    }
    Ok(smoothed_indicator(c, |a| a >= c.k - top))
}

/// Monotone lookup table sampled at the bin centres `(i + 0.5) / 256`.
#[derive(Clone, Debug, PartialEq)]
pub struct HistogramTransform {
    pub lut: Vec<f32>,
}

fn bin_center(i: usize) -> f64 {
    (i as f64 + 0.5) / HIST_BINS as f64
}

fn bin_of(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * HIST_BINS as f32) as usize).min(HIST_BINS - 1)
}

impl HistogramTransform {
    pub fn identity() -> Self {
        Self {
            lut: (0..HIST_BINS).map(|i| bin_center(i) as f32).collect(),
        }
    }

    /// Piecewise-linear between bin centres, constant beyond the outer ones.
    pub fn apply(&self, v: f32) -> f32 {
        let pos = v.clamp(0.0, 1.0) * HIST_BINS as f32 - 0.5;
        if pos <= 0.0 {
            return self.lut[0];
        }
        let i = (pos as usize).min(HIST_BINS - 1);
        if i >= HIST_BINS - 1 {
            return self.lut[HIST_BINS - 1];
        }
        let f = pos - i as f32;
        self.lut[i] + (self.lut[i + 1] - self.lut[i]) * f
    }

    pub fn apply_frame(&self, f: &Frame) -> Frame {
        f.map(|v| self.apply(v))
    }
}

fn histogram(f: &Frame, region: Option<&[bool]>) -> Vec<f64> {
    let mut h = vec![0.0f64; HIST_BINS];
    for (p, &v) in f.data().iter().enumerate() {
        if region.is_none_or(|r| r[p]) {
            h[bin_of(v)] += 1.0;
        }
    }
    h
}

/// Inverse of the piecewise-linear CDF given by histogram `h` with total `n`.
fn inverse_cdf(h: &[f64], n: f64, q: f64) -> f64 {
    let mut cum = 0.0;
    for (j, &c) in h.iter().enumerate() {
        if c > 0.0 && cum + c >= q * n {
            let within = ((q * n - cum) / c).clamp(0.0, 1.0);
            return (j as f64 + within) / HIST_BINS as f64;
        }
        cum += c;
    }
    1.0
}

/// CDF matching from `source` to `target` over the pixels where `region` is
/// true (all pixels when `None`).
pub fn fit_histogram_transform(source: &Frame, target: &Frame, region: Option<&[bool]>) -> Result<HistogramTransform> {
    source.same_shape(target)?;
    if let Some(r) = region {
        if r.len() != source.len() {
            bail!(Shape, "region of {} pixels for a frame of {}", r.len(), source.len());
        }
        if !r.iter().any(|&b| b) {
            bail!(DegenerateInput, "histogram fit region is empty");
        }
    }
    let hs = histogram(source, region);
    let ht = histogram(target, region);
    let n: f64 = hs.iter().sum();
    let occupied: Vec<usize> = (0..HIST_BINS).filter(|&i| hs[i] > 0.0).collect();
    let mut lut = vec![f64::NAN; HIST_BINS];
    let mut cum = 0.0;
    for i in 0..HIST_BINS {
        if hs[i] > 0.0 {
            let q = (cum + 0.5 * hs[i]) / n;
            lut[i] = inverse_cdf(&ht, n, q);
        }
        cum += hs[i];
    }
    let (first, last) = (occupied[0], *occupied.last().expect("non-empty region"));
    // interior gaps: linear between occupied neighbours
    for w in occupied.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a + 1..b {
            let f = (i - a) as f64 / (b - a) as f64;
            lut[i] = lut[a] + (lut[b] - lut[a]) * f;
        }
    }
    // outside the observed range: extend with the mean slope of the fit
    let slope = if last > first {
        (lut[last] - lut[first]) / (bin_center(last) - bin_center(first))
    } else {
        1.0
    };
    for i in 0..first {
        lut[i] = lut[first] + slope * (bin_center(i) - bin_center(first));
    }
    for i in last + 1..HIST_BINS {
        lut[i] = lut[last] + slope * (bin_center(i) - bin_center(last));
    }
    let mut lut: Vec<f32> = lut.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    for i in 1..HIST_BINS {
        lut[i] = lut[i].max(lut[i - 1]);
    }
    Ok(HistogramTransform { lut })
}

/// `M * T(o1) + (1 - M) * o2`, clamped to [0,1].
pub fn fuse(o1: &Frame, o2: &Frame, mask: &Frame, t: &HistogramTransform) -> Result<Frame> {
    o1.same_shape(o2)?;
    o1.same_shape(mask)?;
    let data = o1
        .data()
        .iter()
        .zip(o2.data())
        .zip(mask.data())
        .map(|((&a, &b), &m)| {
            let m = m.clamp(0.0, 1.0);
            (m * t.apply(a) + (1.0 - m) * b).clamp(0.0, 1.0)
        })
        .collect();
    Frame::new(o1.height(), o1.width(), data)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MieConfig {
    pub w_s: usize,
    pub w_l: usize,
    pub stride: usize,
    pub k_n: usize,
    pub top_clusters: usize,
    /// Fit the histogram transform on all pixels instead of the static region.
    pub whole_frame_fit: bool,
    /// Clusters whose centroid variance is below this are never treated as
    /// motion, so a static scene yields an empty mask.
    pub motion_floor: f64,
    pub shift_radius: usize,
}

impl Default for MieConfig {
    fn default() -> Self {
        Self {
            w_s: crate::encoding::DEFAULT_SHORT_WINDOW,
            w_l: crate::encoding::DEFAULT_LONG_WINDOW,
            stride: crate::encoding::DEFAULT_SHORT_WINDOW,
            k_n: 3,
            top_clusters: 1,
            whole_frame_fit: false,
            motion_floor: 1e-3,
            shift_radius: 1,
        }
    }
}

/// Window centres `w_l/2 + k*stride` whose long window fits in the stream.
pub fn query_times(length: usize, w_l: usize, stride: usize) -> Vec<usize> {
    if stride == 0 || w_l > length {
        return Vec::new();
    }
    (0..=(length - w_l) / stride).map(|k| w_l / 2 + k * stride).collect()
}

/// The mask used by `mie_sequence`: top clusters above the motion floor, or
/// all zeros when the variances cannot be clustered.
pub fn sequence_mask(vars: &Frame, cfg: &MieConfig) -> Result<Frame> {
    match kmeans_segment(vars, cfg.k_n) {
        Ok(c) => {
            if cfg.top_clusters == 0 || cfg.top_clusters >= c.k {
                bail!(Config, "top_clusters must be in 1..{}, got {}", c.k, cfg.top_clusters);
            }
            let first_top = c.k - cfg.top_clusters;
            Ok(smoothed_indicator(&c, |a| a >= first_top && c.centroids[a] >= cfg.motion_floor))
        }
        Err(Error::DegenerateClustering(_)) => Ok(Frame::filled(vars.height(), vars.width(), 0.0)),
        Err(e) => Err(e),
    }
}

#[derive(Clone, Debug, Default)]
pub struct MieOutput {
    pub times: Vec<usize>,
    pub frames: Vec<Frame>,
    pub masks: Vec<Frame>,
}

/// One fused MIE step at window centre `t`.
pub fn mie_step(
    stream: &SpikeStream,
    bsn1: &NetworkParams,
    bsn2: &NetworkParams,
    t: usize,
    cfg: &MieConfig,
) -> Result<(Frame, Frame)> {
    let segs = segment_long_window(stream, t, cfg.w_l, cfg.w_s)?;
    let vars = variance_map(&segs)?;
    let mask = sequence_mask(&vars, cfg)?;
    let o1 = infer_bsn(bsn1, stream, t, cfg.shift_radius)?;
    let o2 = infer_bsn(bsn2, stream, t, cfg.shift_radius)?;
    let region: Vec<bool> = mask.data().iter().map(|&m| m < 0.5).collect();
    let transform = if cfg.whole_frame_fit || !region.iter().any(|&b| b) {
        fit_histogram_transform(&o1, &o2, None)?
    } else {
        fit_histogram_transform(&o1, &o2, Some(&region))?
    };
    let fused = fuse(&o1, &o2, &mask, &transform)?;
    Ok((fused, mask))
}

/// MIE reconstruction at every query time; the mask and transform are
/// recomputed per step.
pub fn mie_sequence(
    stream: &SpikeStream,
    bsn1: &NetworkParams,
    bsn2: &NetworkParams,
    cfg: &MieConfig,
) -> Result<MieOutput> {
    if cfg.w_s == 0 || !cfg.w_l.is_multiple_of(cfg.w_s) {
        bail!(Config, "w_l = {} must be a multiple of w_s = {}", cfg.w_l, cfg.w_s);
    }
    for (name, p, w) in [("bsn1", bsn1, cfg.w_s), ("bsn2", bsn2, cfg.w_l)] {
        let (_, ch) = architecture(p)?;
        if ch != w {
            bail!(Shape, "{name} was trained on {ch}-step windows, configured for {w}");
        }
    }
    let times = query_times(stream.length(), cfg.w_l, cfg.stride);
    if times.is_empty() {
        bail!(Config, "stream of {} steps is shorter than w_l = {}", stream.length(), cfg.w_l);
    }
    let steps: Vec<(Frame, Frame)> = times
        .par_iter()
        .map(|&t| mie_step(stream, bsn1, bsn2, t, cfg))
        .collect::<Result<_>>()?;
    let (frames, masks) = steps.into_iter().unzip();
    Ok(MieOutput { times, frames, masks })
}
