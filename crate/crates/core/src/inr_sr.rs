//! Per-frame implicit neural representation: a Gabor-activated MLP fitted
//! to one frame's pixels and resampled on a denser grid.

use diffkernel::{adam_step, AdamState, Graph, NetworkParams, ParamBuilder, Tensor, Var};
use rayon::prelude::*;

use crate::error::{bail, Result};
use crate::frame::Frame;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InrConfig {
    pub hidden_layers: usize,
    pub hidden_dim: usize,
    /// Gabor frequency.
    pub omega0: f32,
    /// Gabor envelope width.
    pub scale0: f32,
    pub iterations: usize,
    pub lr: f32,
}

impl Default for InrConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_dim: 256,
            omega0: 5.0,
            scale0: 5.0,
            iterations: 3000,
            lr: 1e-3,
        }
    }
}

impl InrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 || self.hidden_dim == 0 || self.iterations == 0 {
            bail!(Config, "hidden_layers, hidden_dim and iterations must be >= 1");
        }
        if !(self.lr > 0.0) {
            bail!(Config, "lr must be positive");
        }
        Ok(())
    }
}

/// Pixel-centre coordinate `-1 + (2i + 1) / n` of index `i` on an axis of `n`.
pub fn axis_coord(i: usize, n: usize) -> f32 {
    (2 * i + 1) as f32 / n as f32 - 1.0
}

/// Row-major `(x, y)` pixel centres of a `rows x cols` lattice in `[-1, 1]^2`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordGrid {
    pub rows: usize,
    pub cols: usize,
}

impl CoordGrid {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// The lattice for scale `r` of an `h x w` frame: `round(r*h) x round(r*w)`.
    pub fn scaled(h: usize, w: usize, r: f64) -> Result<Self> {
        if !(r > 0.0) || !r.is_finite() {
            bail!(Config, "scale must be positive, got {r}");
        }
        let rows = ((r * h as f64).round() as usize).max(1);
        let cols = ((r * w as f64).round() as usize).max(1);
        Ok(Self { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `[rows*cols, 2]` coordinate matrix.
    pub fn tensor(&self) -> Tensor<f32> {
        let mut data = Vec::with_capacity(2 * self.len());
        for y in 0..self.rows {
            let cy = axis_coord(y, self.rows);
            for x in 0..self.cols {
                data.push(axis_coord(x, self.cols));
                data.push(cy);
            }
        }
        Tensor::new(&[self.len(), 2], data).expect("two coordinates per point")
    }
}

pub fn build_inr(cfg: &InrConfig, seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    let d = cfg.hidden_dim;
    let mut b = ParamBuilder::new(seed);
    let mut fan_in = 2;
    for l in 0..cfg.hidden_layers {
        b.fan_in(&format!("l{l}.w"), &[d, fan_in], fan_in);
        b.fan_in(&format!("l{l}.b"), &[d], fan_in);
        fan_in = 2 * d;
    }
    b.fan_in("out.w", &[1, fan_in], fan_in);
    b.fan_in("out.b", &[1], fan_in);
    Ok(b.build())
}

fn forward(g: &mut Graph, params: &NetworkParams, cfg: &InrConfig, coords: Tensor<f32>) -> Result<(Var, Vec<Var>)> {
    let vars: Vec<Var> = params.tensors().map(|t| g.param(t.clone())).collect();
    let mut h = g.input(coords);
    for l in 0..cfg.hidden_layers {
        let z = g.linear(h, vars[2 * l], Some(vars[2 * l + 1]))?;
        h = g.gabor(z, cfg.omega0, cfg.scale0)?;
    }
    let n = 2 * cfg.hidden_layers;
    let y = g.linear(h, vars[n], Some(vars[n + 1]))?;
    Ok((y, vars))
}

fn check_architecture(params: &NetworkParams, cfg: &InrConfig) -> Result<()> {
    let expected = 2 * cfg.hidden_layers + 2;
    if params.len() != expected || params.get("l0.w").map(|t| t.shape()[0]) != Some(cfg.hidden_dim) {
        bail!(Shape, "INR parameters do not match {} hidden layers of {}", cfg.hidden_layers, cfg.hidden_dim);
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct InrReport {
    pub params: NetworkParams,
    pub losses: Vec<f64>,
    /// Mean squared error of the final parameters on the training lattice.
    pub final_mse: f64,
}

impl InrReport {
    pub fn final_rmse(&self) -> f64 {
        self.final_mse.sqrt()
    }

    /// PSNR for a peak value of 1.
    pub fn final_psnr(&self) -> f64 {
        psnr_from_mse(self.final_mse)
    }
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// Full-batch Adam on the mean squared error over every pixel of `frame`.
pub fn train_inr(frame: &Frame, cfg: &InrConfig, seed: u64) -> Result<InrReport> {
    let init = build_inr(cfg, seed)?;
    train_inr_from(frame, cfg, init)
}

/// As `train_inr`, starting from existing parameters.
pub fn train_inr_from(frame: &Frame, cfg: &InrConfig, init: NetworkParams) -> Result<InrReport> {
    cfg.validate()?;
    check_architecture(&init, cfg)?;
    if !frame.data().iter().all(|v| v.is_finite()) {
        bail!(Input, "INR training frame contains non-finite values");
    }
    let grid = CoordGrid::new(frame.height(), frame.width());
    let coords = grid.tensor();
    let target = Tensor::new(&[grid.len(), 1], frame.data().to_vec())?;
    let mut params = init;
    let mut adam = AdamState::new(&params, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let mut g = Graph::new();
        let (y, vars) = forward(&mut g, &params, cfg, coords.clone())?;
        let loss = g.mse(y, target.clone())?;
        losses.push(g.value(loss).item() as f64);
        let mut grads = g.backward(loss)?;
        let grads: Vec<Tensor<f32>> = vars
            .iter()
            .zip(params.tensors())
            .map(|(&v, p)| grads.take_or_zeros(v, p.shape()))
            .collect();
        adam_step(&mut params, &grads, &mut adam)?;
    }
    let fitted = evaluate(&params, cfg, &grid)?;
    let final_mse = fitted
        .data()
        .iter()
        .zip(frame.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / frame.len() as f64;
    Ok(InrReport { params, losses, final_mse })
}

/// Unclamped network output on `grid`.
pub fn evaluate(params: &NetworkParams, cfg: &InrConfig, grid: &CoordGrid) -> Result<Frame> {
    check_architecture(params, cfg)?;
    let mut g = Graph::new();
    let (y, _) = forward(&mut g, params, cfg, grid.tensor())?;
    Frame::new(grid.rows, grid.cols, g.value(y).data().to_vec())
}

/// Network output on the `round(r*h) x round(r*w)` lattice, clamped to [0,1].
pub fn sample_inr(params: &NetworkParams, cfg: &InrConfig, h: usize, w: usize, r: f64) -> Result<Frame> {
    Ok(evaluate(params, cfg, &CoordGrid::scaled(h, w, r)?)?.clamp01())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SrConfig {
    pub scale: f64,
    pub base_seed: u64,
    /// Start each frame from the previous frame's fitted weights.
    pub warm_start: bool,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            scale: 2.0,
            base_seed: 0,
            warm_start: false,
        }
    }
}

/// Fits one INR per frame (seed `base_seed + index`) and samples each at the
/// configured scale.
pub fn sr_sequence(frames: &[Frame], inr: &InrConfig, sr: &SrConfig) -> Result<Vec<Frame>> {
    if frames.is_empty() {
        bail!(Input, "super-resolution of an empty sequence");
    }
    let fit = |i: usize, f: &Frame, init: Option<NetworkParams>| -> Result<(Frame, NetworkParams)> {
        let report = match init {
            Some(p) => train_inr_from(f, inr, p)?,
            None => train_inr(f, inr, sr.base_seed + i as u64)?,
        };
        let out = sample_inr(&report.params, inr, f.height(), f.width(), sr.scale)?;
        Ok((out, report.params))
    };
    if sr.warm_start {
        let mut out = Vec::with_capacity(frames.len());
        let mut prev = None;
        for (i, f) in frames.iter().enumerate() {
            let (o, p) = fit(i, f, prev.take())?;
            out.push(o);
            prev = Some(p);
        }
        Ok(out)
    } else {
        frames
            .par_iter()
            .enumerate()
            .map(|(i, f)| fit(i, f, None).map(|(o, _)| o))
            .collect()
    }
}
