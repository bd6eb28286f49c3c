//! Blind-spot U-Nets trained against pseudo-labels computed from the same
//! spike stream.
//!
//! Each output pixel sees only its neighbours: four copies of one shared
//! U-Net process the input rotated by 0/90/180/270 degrees, every 3x3
//! convolution is made causal by shifting its output one row down, and the
//! branch output receives an extra `shift_radius`-row shift. Branch `k` thus
//! sees only the half-plane strictly above the pixel in its rotated frame;
//! the union over four rotations is everything except the pixel itself.
//! The input first passes a 1x1 embedding, which is pointwise and therefore
//! also keeps the blind spot.

use diffkernel::{adam_step, AdamState, Graph, NetworkParams, ParamBuilder, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::encoding::{isi_encode, isi_to_intensity, tfp_encode, EncodingWindow};
use crate::error::{bail, Result};
use crate::frame::Frame;
use crate::spike_io::SpikeStream;

const LEAKY_SLOPE: f32 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsnConfig {
    /// U-Net levels, including the full-resolution one.
    pub depth: usize,
    pub base_channels: usize,
    /// Extra rows of blind region; 1 excludes exactly the centre pixel.
    pub shift_radius: usize,
    pub iterations: usize,
    pub lr: f32,
    pub crop: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for BsnConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 16,
            shift_radius: 1,
            iterations: 3000,
            lr: 2e-4,
            crop: 256,
            batch: 1,
            seed: 0,
        }
    }
}

impl BsnConfig {
    pub fn large() -> Self {
        Self {
            depth: 4,
            base_channels: 48,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 {
            bail!(Config, "depth and base_channels must be >= 1");
        }
        if self.shift_radius == 0 {
            bail!(Config, "shift_radius must be >= 1 for a blind spot");
        }
        if !(self.lr > 0.0) || self.batch == 0 {
            bail!(Config, "need lr > 0 and batch >= 1");
        }
        Ok(())
    }

    /// Spatial dims must be multiples of this for pooling to line up.
    pub fn granularity(&self) -> usize {
        1 << (self.depth - 1)
    }
}

/// Both spatial dims must be multiples of `2^(depth-1)` and leave at least
/// two rows at the coarsest level; returns the smallest such size >= `n`.
fn padded_dim(n: usize, depth: usize, shift_radius: usize) -> usize {
    let g = 1usize << (depth - 1);
    let min = g * (shift_radius + 1).max(2);
    n.max(min).div_ceil(g) * g
}

/// Which pseudo-label a network is trained against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BsnKind {
    /// Short window, label `1/ISI` masked where the interval is undefined.
    Short,
    /// Long window, label the spike rate over the window.
    Long,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabel {
    pub target: Frame,
    /// 1 where the label is defined.
    pub mask: Frame,
}

impl PseudoLabel {
    pub fn valid_count(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m > 0.0).count()
    }
}

pub fn pseudo_label(stream: &SpikeStream, kind: BsnKind, window: EncodingWindow) -> PseudoLabel {
    match kind {
        BsnKind::Short => {
            let isi = isi_encode(stream, window);
            PseudoLabel {
                mask: isi.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
                target: isi_to_intensity(&isi),
            }
        }
        BsnKind::Long => {
            let target = tfp_encode(stream, window);
            PseudoLabel {
                mask: Frame::filled(target.height(), target.width(), 1.0),
                target,
            }
        }
    }
}

/// The window's 0/1 spike planes as a `[window, h, w]` array for the crop at
/// `(y0, x0)`; steps outside the stream read as silent.
pub fn spike_block(
    stream: &SpikeStream,
    window: EncodingWindow,
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
) -> Vec<f32> {
    let mut out = vec![0.0f32; window.length * h * w];
    let sw = stream.width();
    for (c, t) in (window.start()..window.end()).enumerate() {
        if t < 0 || t as usize >= stream.length() {
            continue;
        }
        let bytes = stream.frame_bytes(t as usize);
        let plane = &mut out[c * h * w..][..h * w];
        for y in 0..h {
            for x in 0..w {
                let p = (y0 + y) * sw + x0 + x;
                if bytes[p / 8] & (0x80 >> (p % 8)) != 0 {
                    plane[y * w + x] = 1.0;
                }
            }
        }
    }
    out
}

/// Fresh parameters for a network reading `in_channels` input planes.
pub fn build_bsn(cfg: &BsnConfig, in_channels: usize, seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    if in_channels == 0 {
        bail!(Config, "a BSN needs at least one input channel");
    }
    let c = cfg.base_channels;
    let mut b = ParamBuilder::new(seed);
    let conv = |b: &mut ParamBuilder, name: &str, o: usize, i: usize, k: usize| {
        b.fan_in(&format!("{name}.w"), &[o, i, k, k], i * k * k);
        b.fan_in(&format!("{name}.b"), &[o], i * k * k);
    };
    conv(&mut b, "embed", c, in_channels, 1);
    for l in 0..cfg.depth {
        conv(&mut b, &format!("enc{l}.conv0"), c, c, 3);
        conv(&mut b, &format!("enc{l}.conv1"), c, c, 3);
    }
    for l in 0..cfg.depth - 1 {
        conv(&mut b, &format!("dec{l}.conv0"), c, 2 * c, 3);
        conv(&mut b, &format!("dec{l}.conv1"), c, c, 3);
    }
    conv(&mut b, "merge0", c, 4 * c, 1);
    conv(&mut b, "merge1", c, c, 1);
    conv(&mut b, "out", 1, c, 1);
    Ok(b.build())
}

/// Depth and input channel count recovered from parameter names and shapes.
pub fn architecture(params: &NetworkParams) -> Result<(usize, usize)> {
    let Some(embed) = params.get("embed.w") else {
        bail!(Shape, "parameters lack 'embed.w'; not a BSN checkpoint");
    };
    let depth = (0..).take_while(|l| params.get(&format!("enc{l}.conv0.w")).is_some()).count();
    if depth == 0 {
        bail!(Shape, "BSN checkpoint has no encoder levels");
    }
    Ok((depth, embed.shape()[1]))
}

struct Vars {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl Vars {
    fn bind(g: &mut Graph, params: &NetworkParams) -> Self {
        let mut names = Vec::new();
        let mut vars = Vec::new();
        for (name, t) in params.entries() {
            names.push(name.clone());
            vars.push(g.param(t.clone()));
        }
        Self { names, vars }
    }

    fn get(&self, name: &str) -> Result<Var> {
        match self.names.iter().position(|n| n == name) {
            Some(i) => Ok(self.vars[i]),
            None => bail!(Shape, "missing parameter '{name}'"),
        }
    }
}

fn conv(g: &mut Graph, v: &Vars, x: Var, name: &str, pad: usize) -> Result<Var> {
    let w = v.get(&format!("{name}.w"))?;
    let b = v.get(&format!("{name}.b"))?;
    Ok(g.conv2d(x, w, Some(b), pad)?)
}

/// 3x3 convolution whose output at row y depends only on rows <= y.
fn causal_conv(g: &mut Graph, v: &Vars, x: Var, name: &str) -> Result<Var> {
    let y = conv(g, v, x, name, 1)?;
    let y = g.shift2d(y, 1, 0)?;
    Ok(g.leaky_relu(y, LEAKY_SLOPE))
}

fn branch(g: &mut Graph, v: &Vars, x: Var, depth: usize, shift_radius: usize) -> Result<Var> {
    let mut skips = Vec::new();
    let mut h = x;
    for l in 0..depth {
        if l > 0 {
            // shifting before pooling keeps pooled row Y from seeing row 2Y+1
            let s = g.shift2d(h, 1, 0)?;
            h = g.avg_pool2(s)?;
        }
        h = causal_conv(g, v, h, &format!("enc{l}.conv0"))?;
        h = causal_conv(g, v, h, &format!("enc{l}.conv1"))?;
        skips.push(h);
    }
    for l in (0..depth - 1).rev() {
        let up = g.upsample2(h)?;
        let cat = g.concat(&[up, skips[l]])?;
        h = causal_conv(g, v, cat, &format!("dec{l}.conv0"))?;
        h = causal_conv(g, v, h, &format!("dec{l}.conv1"))?;
    }
    Ok(g.shift2d(h, shift_radius as isize, 0)?)
}

/// Builds the forward pass for an `[n, c, h, w]` input already padded to
/// valid dims. Returns the `[n, 1, h, w]` prediction.
fn forward(g: &mut Graph, v: &Vars, input: Var, depth: usize, shift_radius: usize) -> Result<Var> {
    let e = conv(g, v, input, "embed", 0)?;
    let e = g.leaky_relu(e, LEAKY_SLOPE);
    let mut outs = Vec::with_capacity(4);
    for k in 0..4 {
        let r = g.rot90(e, k)?;
        let b = branch(g, v, r, depth, shift_radius)?;
        outs.push(g.rot90(b, (4 - k) % 4)?);
    }
    let cat = g.concat(&outs)?;
    let m = conv(g, v, cat, "merge0", 0)?;
    let m = g.leaky_relu(m, LEAKY_SLOPE);
    let m = conv(g, v, m, "merge1", 0)?;
    let m = g.leaky_relu(m, LEAKY_SLOPE);
    conv(g, v, m, "out", 0)
}

/// Raw (unclamped) prediction for a `[channels, h, w]` block of any size.
pub fn predict_raw(
    params: &NetworkParams,
    block: &[f32],
    h: usize,
    w: usize,
    shift_radius: usize,
) -> Result<Frame> {
    let (depth, channels) = architecture(params)?;
    if shift_radius == 0 {
        bail!(Config, "shift_radius must be >= 1");
    }
    if block.len() != channels * h * w {
        bail!(
            Shape,
            "network expects {channels} channels of {h}x{w}, block has {} values",
            block.len()
        );
    }
    let (ph, pw) = (padded_dim(h, depth, shift_radius), padded_dim(w, depth, shift_radius));
    let mut padded = vec![0.0f32; channels * ph * pw];
    for c in 0..channels {
        for y in 0..h {
            padded[(c * ph + y) * pw..][..w].copy_from_slice(&block[(c * h + y) * w..][..w]);
        }
    }
    let mut g = Graph::new();
    let v = Vars::bind(&mut g, params);
    let x = g.input(Tensor::new(&[1, channels, ph, pw], padded)?);
    let y = forward(&mut g, &v, x, depth, shift_radius)?;
    let out = g.value(y).data();
    Ok(Frame::from_fn(h, w, |yy, xx| out[yy * pw + xx]))
}

/// Network output for the window centred at `t`, clamped to [0,1].
pub fn infer_bsn(
    params: &NetworkParams,
    stream: &SpikeStream,
    t: usize,
    shift_radius: usize,
) -> Result<Frame> {
    let (_, channels) = architecture(params)?;
    let window = EncodingWindow::new(t, channels)?;
    let (h, w) = (stream.height(), stream.width());
    let block = spike_block(stream, window, 0, 0, h, w);
    Ok(predict_raw(params, &block, h, w, shift_radius)?.clamp01())
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: NetworkParams,
    /// Loss of every iteration, averaged over the batch.
    pub losses: Vec<f64>,
}

impl TrainReport {
    /// Mean of the first and of the last `n` recorded losses.
    pub fn loss_ends(&self, n: usize) -> (f64, f64) {
        let n = n.clamp(1, self.losses.len().max(1));
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len().max(1) as f64;
        (mean(&self.losses[..n.min(self.losses.len())]), mean(&self.losses[self.losses.len().saturating_sub(n)..]))
    }
}

/// Valid window centres: the whole window must lie inside the stream.
fn center_range(stream: &SpikeStream, window: usize) -> Result<(usize, usize)> {
    if window > stream.length() {
        bail!(Config, "window of {window} steps exceeds stream of {}", stream.length());
    }
    let lo = window / 2;
    Ok((lo, lo + stream.length() - window))
}

struct Sample {
    input: Vec<f32>,
    target: Vec<f32>,
    mask: Vec<f32>,
}

fn crop_frame(f: &Frame, y0: usize, x0: usize, h: usize, w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        out.extend_from_slice(&f.data()[(y0 + y) * f.width() + x0..][..w]);
    }
    out
}

/// Trains a fresh network on random crops and window centres of `stream`.
pub fn train_bsn(stream: &SpikeStream, kind: BsnKind, window: usize, cfg: &BsnConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if window < 2 {
        bail!(Config, "training window must be >= 2 steps");
    }
    let (t_lo, t_hi) = center_range(stream, window)?;
    let (h, w) = (stream.height(), stream.width());
    let g = cfg.granularity();
    let side = cfg.crop.min(h).min(w) / g * g;
    let (crop_h, crop_w) = if side >= padded_dim(1, cfg.depth, cfg.shift_radius) {
        (side, side)
    } else {
        // too small to crop; train on the whole (padded) frame
        (h, w)
    };

    if kind == BsnKind::Short {
        let probes = 16.min(t_hi - t_lo + 1);
        let any = (0..probes).any(|i| {
            let t = t_lo + i * (t_hi - t_lo) / probes.max(1);
            pseudo_label(stream, kind, EncodingWindow { center: t, length: window }).valid_count() > 0
        });
        if !any {
            bail!(DegenerateInput, "no pixel has two spikes inside any {window}-step window");
        }
    }

    let mut params = build_bsn(cfg, window, cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_edb5_u64);
    let (ph, pw) = (
        padded_dim(crop_h, cfg.depth, cfg.shift_radius),
        padded_dim(crop_w, cfg.depth, cfg.shift_radius),
    );
    let mut losses = Vec::with_capacity(cfg.iterations);

    for _ in 0..cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            let mut found = None;
            for _ in 0..64 {
                let t = rng.random_range(t_lo..=t_hi);
                let y0 = rng.random_range(0..=h - crop_h);
                let x0 = rng.random_range(0..=w - crop_w);
                let win = EncodingWindow { center: t, length: window };
                let label = pseudo_label(stream, kind, win);
                let mask = crop_frame(&label.mask, y0, x0, crop_h, crop_w);
                if mask.iter().any(|&m| m > 0.0) {
                    found = Some(Sample {
                        input: spike_block(stream, win, y0, x0, crop_h, crop_w),
                        target: crop_frame(&label.target, y0, x0, crop_h, crop_w),
                        mask,
                    });
                    break;
                }
            }
            match found {
                Some(s) => batch.push(s),
                None => bail!(DegenerateInput, "64 consecutive crops had no valid label"),
            }
        }

        let n = batch.len();
        let mut input = vec![0.0f32; n * window * ph * pw];
        let mut target = vec![0.0f32; n * ph * pw];
        let mut mask = vec![0.0f32; n * ph * pw];
        for (i, s) in batch.iter().enumerate() {
            for c in 0..window {
                for y in 0..crop_h {
                    let dst = ((i * window + c) * ph + y) * pw;
                    input[dst..][..crop_w].copy_from_slice(&s.input[(c * crop_h + y) * crop_w..][..crop_w]);
                }
            }
            for y in 0..crop_h {
                let dst = (i * ph + y) * pw;
                target[dst..][..crop_w].copy_from_slice(&s.target[y * crop_w..][..crop_w]);
                mask[dst..][..crop_w].copy_from_slice(&s.mask[y * crop_w..][..crop_w]);
            }
        }

        let mut graph = Graph::new();
        let vars = Vars::bind(&mut graph, &params);
        let x = graph.input(Tensor::new(&[n, window, ph, pw], input)?);
        let y = forward(&mut graph, &vars, x, cfg.depth, cfg.shift_radius)?;
        let target = Tensor::new(&[n, 1, ph, pw], target)?;
        let mask = Tensor::new(&[n, 1, ph, pw], mask)?;
        let loss = graph.masked_mse(y, target, mask)?;
        losses.push(graph.value(loss).item() as f64);
        let mut grads = graph.backward(loss)?;
        let grads: Vec<Tensor<f32>> = vars
            .vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
            .collect();
        adam_step(&mut params, &grads, &mut adam)?;
    }
    Ok(TrainReport { params, losses })
}

/// BSN1: short window against `1/ISI`.
pub fn train_bsn1(stream: &SpikeStream, cfg: &BsnConfig, w_s: usize) -> Result<TrainReport> {
    train_bsn(stream, BsnKind::Short, w_s, cfg)
}

/// BSN2: long window against the window's spike rate.
pub fn train_bsn2(stream: &SpikeStream, cfg: &BsnConfig, w_l: usize) -> Result<TrainReport> {
    train_bsn(stream, BsnKind::Long, w_l, cfg)
}

/// Full-frame masked loss averaged over the given window centres.
pub fn evaluate_loss(
    params: &NetworkParams,
    stream: &SpikeStream,
    kind: BsnKind,
    times: &[usize],
    shift_radius: usize,
) -> Result<f64> {
    let (_, channels) = architecture(params)?;
    let (h, w) = (stream.height(), stream.width());
    let (mut sum, mut count) = (0.0f64, 0usize);
    for &t in times {
        let win = EncodingWindow::new(t, channels)?;
        let label = pseudo_label(stream, kind, win);
        let pred = predict_raw(params, &spike_block(stream, win, 0, 0, h, w), h, w, shift_radius)?;
        for ((p, q), m) in pred.data().iter().zip(label.target.data()).zip(label.mask.data()) {
            if *m > 0.0 {
                sum += ((p - q) as f64).powi(2);
                count += 1;
            }
        }
    }
    if count == 0 {
        bail!(DegenerateInput, "no valid labels at the requested times");
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spike_sim::{simulate, IntegratorMode, SceneKind, SceneSpec, SimConfig};

    fn small_cfg() -> BsnConfig {
        BsnConfig {
            depth: 2,
            base_channels: 4,
            iterations: 5,
            crop: 16,
            ..Default::default()
        }
    }

    fn random_block(c: usize, h: usize, w: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..c * h * w).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_bsn(&small_cfg(), 3, 1).unwrap();
        let b = build_bsn(&small_cfg(), 3, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, build_bsn(&small_cfg(), 3, 2).unwrap());
        assert_eq!(architecture(&a).unwrap(), (2, 3));
    }

    #[test]
    fn centre_pixel_is_blind_neighbours_are_not() {
        let params = build_bsn(&small_cfg(), 3, 5).unwrap();
        let (h, w) = (10, 12);
        let base = random_block(3, h, w, 1);
        let out = predict_raw(&params, &base, h, w, 1).unwrap();
        let (py, px) = (4, 6);
        let mut perturbed = base.clone();
        for c in 0..3 {
            perturbed[(c * h + py) * w + px] += 5.0;
        }
        let out2 = predict_raw(&params, &perturbed, h, w, 1).unwrap();
        assert_eq!(out.get(py, px).to_bits(), out2.get(py, px).to_bits());
        for (dy, dx) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
            let (y, x) = ((py as isize + dy) as usize, (px as isize + dx) as usize);
            assert_ne!(out.get(y, x), out2.get(y, x), "neighbour ({y},{x}) unaffected");
        }
    }

    #[test]
    fn wider_shift_blinds_more() {
        let params = build_bsn(&small_cfg(), 1, 3).unwrap();
        let (h, w) = (12, 12);
        let base = random_block(1, h, w, 2);
        let mut perturbed = base.clone();
        perturbed[5 * w + 6] += 3.0;
        let a = predict_raw(&params, &base, h, w, 2).unwrap();
        let b = predict_raw(&params, &perturbed, h, w, 2).unwrap();
        for (y, x) in [(5, 6), (4, 6), (6, 6), (5, 5), (5, 7)] {
            assert_eq!(a.get(y, x), b.get(y, x));
        }
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let params = build_bsn(&small_cfg(), 4, 0).unwrap();
        let err = predict_raw(&params, &[0.0; 3 * 8 * 8], 8, 8, 1).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(_)));
    }

    #[test]
    fn inference_is_pure_and_clamped() {
        let params = build_bsn(&small_cfg(), 8, 0).unwrap();
        let scene = SceneSpec {
            kind: SceneKind::Constant { intensity: 0.4 },
            height: 9,
            width: 7,
            duration: 40,
            rate_hz: 20_000,
        };
        let s = simulate(&scene, &SimConfig::default()).unwrap();
        let a = infer_bsn(&params, &s, 20, 1).unwrap();
        assert_eq!(a, infer_bsn(&params, &s, 20, 1).unwrap());
        assert_eq!(a.dims(), (9, 7));
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn short_labels_mask_undefined_intervals() {
        let mut s = SpikeStream::new(1, 2, 20, 1000).unwrap();
        s.set_bit(0, 8, true);
        s.set_bit(0, 11, true);
        let label = pseudo_label(&s, BsnKind::Short, EncodingWindow::new(10, 8).unwrap());
        assert_eq!(label.mask.data(), &[1.0, 0.0]);
        assert!((label.target.data()[0] - 1.0 / 3.0).abs() < 1e-7);
    }

    #[test]
    fn masked_pixels_do_not_affect_loss() {
        let params = build_bsn(&small_cfg(), 4, 0).unwrap();
        let pred = predict_raw(&params, &random_block(4, 8, 8, 3), 8, 8, 1).unwrap();
        let mask: Vec<f32> = (0..64).map(|i| (i % 3 == 0) as u8 as f32).collect();
        let loss = |fill: f32| {
            let mut g: Graph = Graph::new();
            let x = g.input(Tensor::new(&[1, 1, 8, 8], pred.data().to_vec()).unwrap());
            let target: Vec<f32> = mask.iter().map(|&m| if m > 0.0 { 0.5 } else { fill }).collect();
            let l = g
                .masked_mse(
                    x,
                    Tensor::new(&[1, 1, 8, 8], target).unwrap(),
                    Tensor::new(&[1, 1, 8, 8], mask.clone()).unwrap(),
                )
                .unwrap();
            g.value(l).item()
        };
        assert_eq!(loss(0.0), loss(999.0));
    }

    #[test]
    fn silent_stream_is_degenerate_for_bsn1() {
        let s = SpikeStream::new(8, 8, 64, 1000).unwrap();
        let err = train_bsn1(&s, &small_cfg(), 8).unwrap_err();
        assert!(matches!(err, crate::Error::DegenerateInput(_)));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let scene = SceneSpec {
            kind: SceneKind::Constant { intensity: 0.3 },
            height: 8,
            width: 8,
            duration: 64,
            rate_hz: 20_000,
        };
        let cfg = SimConfig { mode: IntegratorMode::Residual, ..Default::default() };
        let s = simulate(&scene, &cfg).unwrap();
        let bcfg = BsnConfig { iterations: 60, lr: 3e-3, ..small_cfg() };
        let a = train_bsn2(&s, &bcfg, 16).unwrap();
        let b = train_bsn2(&s, &bcfg, 16).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses, b.losses);
        let (first, last) = a.loss_ends(5);
        assert!(last < first, "{first} -> {last}");
    }
}
