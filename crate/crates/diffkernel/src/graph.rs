//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape; nodes only reference earlier
//! nodes, so a reverse sweep over the tape is a valid topological order.

use crate::error::{shape_err, DiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        pad: usize,
        // im2col buffer, one (C*KH*KW) x (HO*WO) block per batch item
        cols: Vec<T>,
    },
    Shift {
        input: Var,
        dy: isize,
        dx: isize,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    AvgPool2 {
        input: Var,
    },
    Upsample2 {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
    },
    Rot90 {
        input: Var,
        k: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    Gabor {
        input: Var,
        omega: T,
        spread: T,
    },
    Mse {
        input: Var,
        target: Tensor<T>,
        mask: Option<Tensor<T>>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes the gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the loss.
    pub fn take_or_zeros(&mut self, v: Var, like: &[usize]) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(like))
    }
}

/// `exp(-e)`, flushed to zero once it would fall below ~1e-35. Subnormal
/// activations make the following matrix products many times slower.
fn gabor_envelope<T: Scalar>(e: T) -> T {
    if e > T::from_f64_lossy(80.0) {
        T::zero()
    } else {
        (-e).exp()
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Translates one plane by (dy, dx), zero-filling vacated cells.
fn shift_plane<T: Scalar>(src: &[T], dst: &mut [T], h: usize, w: usize, dy: isize, dx: isize) {
    for y in 0..h {
        let sy = y as isize - dy;
        if sy < 0 || sy >= h as isize {
            continue;
        }
        for x in 0..w {
            let sx = x as isize - dx;
            if sx < 0 || sx >= w as isize {
                continue;
            }
            dst[y * w + x] = src[sy as usize * w + sx as usize];
        }
    }
}

/// Source (row, col) in the input plane for output (i, j) of a `k`-fold
/// counter-clockwise rotation of an `h x w` plane.
fn rot_src(k: usize, i: usize, j: usize, h: usize, w: usize) -> (usize, usize) {
    match k % 4 {
        0 => (i, j),
        1 => (j, w - 1 - i),
        2 => (h - 1 - i, w - 1 - j),
        _ => (h - 1 - j, i),
    }
}

fn im2col<T: Scalar>(
    plane: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let hw_out = ho * wo;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let dst = &mut cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy + ky) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[ch * h * w + iy as usize * w..][..w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox + kx) as isize - pad as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    plane: &mut [T],
) {
    let hw_out = ho * wo;
    for ch in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = (ch * kh + ky) * kw + kx;
                let src = &cols[row * hw_out..(row + 1) * hw_out];
                for oy in 0..ho {
                    let iy = (oy + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[ch * h * w + iy as usize * w..][..w];
                    for ox in 0..wo {
                        let ix = (ox + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// 2-D cross-correlation with stride 1 and symmetric zero padding.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, pad: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (o, wc, kh, kw) = self.value(weight).dims4()?;
        if wc != c {
            return shape_err(format!("conv2d: input has {c} channels, weight expects {wc}"));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [o] {
                return shape_err(format!(
                    "conv2d: bias shape {:?}, expected [{o}]",
                    self.value(b).shape()
                ));
            }
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return shape_err("conv2d: kernel larger than padded input");
        }
        let (ho, wo) = (h + 2 * pad - kh + 1, w + 2 * pad - kw + 1);
        let ck = c * kh * kw;
        let hw_out = ho * wo;
        let mut cols = vec![T::zero(); n * ck * hw_out];
        let mut out = vec![T::zero(); n * o * hw_out];
        {
            let x = self.value(input).data();
            let wt = self.value(weight).data();
            for b in 0..n {
                let block = &mut cols[b * ck * hw_out..(b + 1) * ck * hw_out];
                im2col(&x[b * c * h * w..][..c * h * w], c, h, w, kh, kw, pad, ho, wo, block);
                T::gemm(
                    false,
                    false,
                    o,
                    hw_out,
                    ck,
                    T::one(),
                    wt,
                    block,
                    T::zero(),
                    &mut out[b * o * hw_out..(b + 1) * o * hw_out],
                );
            }
            if let Some(bv) = bias {
                let bd = self.value(bv).data();
                for b in 0..n {
                    for (oc, &bias_v) in bd.iter().enumerate() {
                        let start = (b * o + oc) * hw_out;
                        out[start..start + hw_out].iter_mut().for_each(|v| *v += bias_v);
                    }
                }
            }
        }
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::new(&[n, o, ho, wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
                cols,
            },
            needs,
        ))
    }

    /// Translates every plane by `dy` rows and `dx` columns (positive is
    /// down/right), zero-filling what is vacated.
    pub fn shift2d(&mut self, input: Var, dy: isize, dx: isize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if dy.unsigned_abs() >= h || dx.unsigned_abs() >= w {
            return shape_err(format!("shift ({dy},{dx}) exceeds spatial dims {h}x{w}"));
        }
        let src = self.value(input).data();
        let mut out = vec![T::zero(); src.len()];
        for p in 0..n * c {
            shift_plane(&src[p * h * w..][..h * w], &mut out[p * h * w..][..h * w], h, w, dy, dx);
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Shift { input, dy, dx }, needs))
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let value = self
            .value(input)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let needs = self.needs(input);
        self.push(value, Op::LeakyRelu { input, slope }, needs)
    }

    /// 2x2 average pooling; spatial dims must be even.
    pub fn avg_pool2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return shape_err(format!("avg_pool2 needs even dims, got {h}x{w}"));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(input).data();
        let quarter = T::from_f64_lossy(0.25);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let s = &src[p * h * w..][..h * w];
            let d = &mut out[p * ho * wo..][..ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    let i = 2 * y * w + 2 * x;
                    d[y * wo + x] = (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::AvgPool2 { input }, needs))
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let (ho, wo) = (2 * h, 2 * w);
        let src = self.value(input).data();
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let s = &src[p * h * w..][..h * w];
            let d = &mut out[p * ho * wo..][..ho * wo];
            for y in 0..ho {
                for x in 0..wo {
                    d[y * wo + x] = s[(y / 2) * w + x / 2];
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Upsample2 { input }, needs))
    }

    /// Concatenates along dimension 1 (channels / features).
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return shape_err("concat of nothing");
        };
        let s0 = self.value(first).shape().to_vec();
        if s0.len() < 2 {
            return shape_err("concat needs rank >= 2");
        }
        let outer = s0[0];
        let inner: usize = s0[2..].iter().product();
        let mut total = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != s0.len() || s[0] != outer || s[2..] != s0[2..] {
                return shape_err(format!("concat: shape {s:?} incompatible with {s0:?}"));
            }
            total += s[1];
        }
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let t = self.value(v);
                let block = t.shape()[1] * inner;
                out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = s0.clone();
        shape[1] = total;
        let value = Tensor::new(&shape, out)?;
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
            needs,
        ))
    }

    /// Rotates every plane counter-clockwise by `k` quarter turns.
    pub fn rot90(&mut self, input: Var, k: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(input).dims4()?;
        let k = k % 4;
        let (ho, wo) = if k % 2 == 1 { (w, h) } else { (h, w) };
        let src = self.value(input).data();
        let mut out = vec![T::zero(); src.len()];
        for p in 0..n * c {
            let s = &src[p * h * w..][..h * w];
            let d = &mut out[p * h * w..][..h * w];
            for i in 0..ho {
                for j in 0..wo {
                    let (r, cc) = rot_src(k, i, j, h, w);
                    d[i * wo + j] = s[r * w + cc];
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        let needs = self.needs(input);
        Ok(self.push(value, Op::Rot90 { input, k }, needs))
    }

    /// `x [P, I] -> x * weight^T + bias` with `weight [O, I]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (p, i) = self.value(input).dims2()?;
        let (o, wi) = self.value(weight).dims2()?;
        if wi != i {
            return shape_err(format!("linear: input width {i}, weight expects {wi}"));
        }
        let mut out = vec![T::zero(); p * o];
        T::gemm(
            false,
            true,
            p,
            o,
            i,
            T::one(),
            self.value(input).data(),
            self.value(weight).data(),
            T::zero(),
            &mut out,
        );
        if let Some(b) = bias {
            let bd = self.value(b).data();
            if bd.len() != o {
                return shape_err(format!("linear: bias has {} values, expected {o}", bd.len()));
            }
            for row in out.chunks_mut(o) {
                row.iter_mut().zip(bd).for_each(|(v, &bv)| *v += bv);
            }
        }
        let needs = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        let value = Tensor::new(&[p, o], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }, needs))
    }

    /// Complex Gabor wavelet `exp(i*omega*z - (spread*z)^2)` applied to a real
    /// input. Dimension 1 doubles: the first half carries the real part, the
    /// second half the imaginary part.
    pub fn gabor(&mut self, input: Var, omega: T, spread: T) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() < 2 {
            return shape_err("gabor needs rank >= 2");
        }
        let outer = shape[0];
        let block: usize = shape[1..].iter().product();
        let src = self.value(input).data();
        let mut out = vec![T::zero(); 2 * src.len()];
        for o in 0..outer {
            let s = &src[o * block..(o + 1) * block];
            let (re, im) = out[2 * o * block..2 * (o + 1) * block].split_at_mut(block);
            for ((&z, r), q) in s.iter().zip(re).zip(im) {
                let env = gabor_envelope((spread * z) * (spread * z));
                let (sin, cos) = (omega * z).sin_cos();
                *r = env * cos;
                *q = env * sin;
            }
        }
        let mut oshape = shape;
        oshape[1] *= 2;
        let value = Tensor::new(&oshape, out)?;
        let needs = self.needs(input);
        Ok(self.push(
            value,
            Op::Gabor {
                input,
                omega,
                spread,
            },
            needs,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, input: Var, target: Tensor<T>) -> Result<Var> {
        self.masked_mse_impl(input, target, None)
    }

    /// Mean squared error over the entries where `mask` is nonzero.
    pub fn masked_mse(&mut self, input: Var, target: Tensor<T>, mask: Tensor<T>) -> Result<Var> {
        self.masked_mse_impl(input, target, Some(mask))
    }

    fn masked_mse_impl(
        &mut self,
        input: Var,
        target: Tensor<T>,
        mask: Option<Tensor<T>>,
    ) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != target.shape() || mask.as_ref().is_some_and(|m| m.shape() != x.shape()) {
            return shape_err(format!(
                "mse: input {:?} vs target {:?}",
                x.shape(),
                target.shape()
            ));
        }
        let mut sum = T::zero();
        let mut count = 0usize;
        for (idx, (&a, &b)) in x.data().iter().zip(target.data()).enumerate() {
            let include = mask.as_ref().is_none_or(|m| m.data()[idx] != T::zero());
            if include {
                let d = a - b;
                sum += d * d;
                count += 1;
            }
        }
        if count == 0 {
            return Err(DiffError::EmptyMask);
        }
        let loss = sum / T::from_usize(count).expect("count fits");
        let needs = self.needs(input);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                input,
                target,
                mask,
                count,
            },
            needs,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return shape_err("backward needs a scalar loss");
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                pad,
                cols,
            } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let wt = self.value(*weight);
                let (o, _, kh, kw) = wt.dims4()?;
                let (_, _, ho, wo) = g.dims4()?;
                let hw_out = ho * wo;
                let ck = c * kh * kw;
                let gd = g.data();
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); o * ck];
                    for b in 0..n {
                        T::gemm(
                            false,
                            true,
                            o,
                            ck,
                            hw_out,
                            T::one(),
                            &gd[b * o * hw_out..(b + 1) * o * hw_out],
                            &cols[b * ck * hw_out..(b + 1) * ck * hw_out],
                            T::one(),
                            &mut dw,
                        );
                    }
                    accumulate(grads, *weight, Tensor::new(wt.shape(), dw)?);
                }
                if let Some(bv) = bias.filter(|&b| self.needs(b)) {
                    let mut db = vec![T::zero(); o];
                    for b in 0..n {
                        for (oc, acc) in db.iter_mut().enumerate() {
                            let start = (b * o + oc) * hw_out;
                            for &v in &gd[start..start + hw_out] {
                                *acc += v;
                            }
                        }
                    }
                    accumulate(grads, bv, Tensor::new(&[o], db)?);
                }
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); n * c * h * w];
                    let mut dcols = vec![T::zero(); ck * hw_out];
                    for b in 0..n {
                        T::gemm(
                            true,
                            false,
                            ck,
                            hw_out,
                            o,
                            T::one(),
                            wt.data(),
                            &gd[b * o * hw_out..(b + 1) * o * hw_out],
                            T::zero(),
                            &mut dcols,
                        );
                        col2im(&dcols, c, h, w, kh, kw, *pad, ho, wo, &mut dx[b * c * h * w..][..c * h * w]);
                    }
                    accumulate(grads, *input, Tensor::new(&[n, c, h, w], dx)?);
                }
            }
            Op::Shift { input, dy, dx } => {
                let (n, c, h, w) = g.dims4()?;
                let gd = g.data();
                let mut out = vec![T::zero(); gd.len()];
                for p in 0..n * c {
                    shift_plane(&gd[p * h * w..][..h * w], &mut out[p * h * w..][..h * w], h, w, -dy, -dx);
                }
                accumulate(grads, *input, Tensor::new(&[n, c, h, w], out)?);
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input).data();
                let out: Vec<T> = x
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > T::zero() { gi } else { gi * *slope })
                    .collect();
                accumulate(grads, *input, Tensor::new(g.shape(), out)?);
            }
            Op::AvgPool2 { input } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::from_f64_lossy(0.25);
                let gd = g.data();
                let mut out = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let s = &gd[p * ho * wo..][..ho * wo];
                    let d = &mut out[p * h * w..][..h * w];
                    for y in 0..h {
                        for x in 0..w {
                            d[y * w + x] = s[(y / 2) * wo + x / 2] * quarter;
                        }
                    }
                }
                accumulate(grads, *input, Tensor::new(&[n, c, h, w], out)?);
            }
            Op::Upsample2 { input } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let wo = 2 * w;
                let gd = g.data();
                let mut out = vec![T::zero(); n * c * h * w];
                for p in 0..n * c {
                    let s = &gd[p * 4 * h * w..][..4 * h * w];
                    let d = &mut out[p * h * w..][..h * w];
                    for y in 0..h {
                        for x in 0..w {
                            let i = 2 * y * wo + 2 * x;
                            d[y * w + x] = s[i] + s[i + 1] + s[i + wo] + s[i + wo + 1];
                        }
                    }
                }
                accumulate(grads, *input, Tensor::new(&[n, c, h, w], out)?);
            }
            Op::Concat { inputs } => {
                let shape = g.shape();
                let outer = shape[0];
                let inner: usize = shape[2..].iter().product();
                let total = shape[1] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let vs = self.value(v).shape().to_vec();
                    let block = vs[1] * inner;
                    if self.needs(v) {
                        let mut part = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            part.extend_from_slice(&g.data()[o * total + offset..][..block]);
                        }
                        accumulate(grads, v, Tensor::new(&vs, part)?);
                    }
                    offset += block;
                }
            }
            Op::Rot90 { input, k } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let (_, _, ho, wo) = g.dims4()?;
                let gd = g.data();
                let mut out = vec![T::zero(); gd.len()];
                for p in 0..n * c {
                    let s = &gd[p * h * w..][..h * w];
                    let d = &mut out[p * h * w..][..h * w];
                    for i in 0..ho {
                        for j in 0..wo {
                            let (r, cc) = rot_src(*k, i, j, h, w);
                            d[r * w + cc] += s[i * wo + j];
                        }
                    }
                }
                accumulate(grads, *input, Tensor::new(&[n, c, h, w], out)?);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (p, i) = self.value(*input).dims2()?;
                let wt = self.value(*weight);
                let (o, _) = wt.dims2()?;
                let gd = g.data();
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); p * i];
                    T::gemm(false, false, p, i, o, T::one(), gd, wt.data(), T::zero(), &mut dx);
                    accumulate(grads, *input, Tensor::new(&[p, i], dx)?);
                }
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); o * i];
                    T::gemm(
                        true,
                        false,
                        o,
                        i,
                        p,
                        T::one(),
                        gd,
                        self.value(*input).data(),
                        T::zero(),
                        &mut dw,
                    );
                    accumulate(grads, *weight, Tensor::new(&[o, i], dw)?);
                }
                if let Some(bv) = bias.filter(|&b| self.needs(b)) {
                    let mut db = vec![T::zero(); o];
                    for row in gd.chunks(o) {
                        db.iter_mut().zip(row).for_each(|(a, &v)| *a += v);
                    }
                    accumulate(grads, bv, Tensor::new(&[o], db)?);
                }
            }
            Op::Gabor {
                input,
                omega,
                spread,
            } => {
                let x = self.value(*input);
                let shape = x.shape();
                let outer = shape[0];
                let block: usize = shape[1..].iter().product();
                let two = T::from_f64_lossy(2.0);
                let s2 = *spread * *spread;
                let mut out = vec![T::zero(); x.numel()];
                for o in 0..outer {
                    let xs = &x.data()[o * block..(o + 1) * block];
                    let gs = &g.data()[2 * o * block..2 * (o + 1) * block];
                    let (gre, gim) = gs.split_at(block);
                    for (idx, &z) in xs.iter().enumerate() {
                        let env = gabor_envelope(s2 * z * z);
                        let (sin, cos) = (*omega * z).sin_cos();
                        let dre = env * (-*omega * sin - two * s2 * z * cos);
                        let dim = env * (*omega * cos - two * s2 * z * sin);
                        out[o * block + idx] = gre[idx] * dre + gim[idx] * dim;
                    }
                }
                accumulate(grads, *input, Tensor::new(shape, out)?);
            }
            Op::Mse {
                input,
                target,
                mask,
                count,
            } => {
                let x = self.value(*input);
                let scale = T::from_f64_lossy(2.0) * g.item() / T::from_usize(*count).expect("fits");
                let out: Vec<T> = x
                    .data()
                    .iter()
                    .zip(target.data())
                    .enumerate()
                    .map(|(idx, (&a, &b))| {
                        let m = mask.as_ref().map_or(T::one(), |m| {
                            if m.data()[idx] != T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        });
                        (a - b) * scale * m
                    })
                    .collect();
                accumulate(grads, *input, Tensor::new(x.shape(), out)?);
            }
        }
        Ok(())
    }
}
