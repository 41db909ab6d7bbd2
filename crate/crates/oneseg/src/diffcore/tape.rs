//! The operation tape: forward evaluation plus exact reverse-mode gradients.

use crate::error::{Error, Result};

use super::{Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(usize);

impl VarId {
    /// Position of this node on its tape; indexes the gradient vector
    /// returned by [`Tape::backward`].
    pub fn index(self) -> usize {
        self.0
    }
}

/// Padding behavior for [`Tape::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    /// Same-size output with zero padding of (k-1)/2 on each side.
    Zero,
    /// Same-size output with mirrored borders (edge duplicated).
    Reflect,
}

/// Static attributes of a convolution node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: PadMode,
}

#[derive(Debug, Clone)]
enum Op<R> {
    Leaf,
    Add(VarId, VarId),
    Sub(VarId, VarId),
    Mul(VarId, VarId),
    Scale(VarId, R),
    Sum(VarId),
    Relu(VarId),
    Conv2d {
        input: VarId,
        weight: VarId,
        bias: Option<VarId>,
        spec: ConvSpec,
    },
    ResizeBilinear {
        input: VarId,
        dst: (usize, usize),
    },
    LocalLogits {
        query: VarId,
        key: VarId,
        window: usize,
    },
    SoftmaxRows(VarId),
    SoftCopy {
        factors: VarId,
        payload: VarId,
        window: usize,
    },
    L1Smooth {
        a: VarId,
        b: VarId,
        delta: R,
    },
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Records a forward computation; replayable backward in reverse order.
///
/// Node insertion order is a topological order by construction, so the
/// backward sweep is a single reverse pass with additive accumulation.
pub struct Tape<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: VarId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<R>, op: Op<R>, needs_grad: bool) -> VarId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        VarId(self.nodes.len() - 1)
    }

    fn needs(&self, id: VarId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Introduces a tensor: `trainable` marks it as a differentiation target.
    pub fn leaf(&mut self, t: Tensor<R>, trainable: bool) -> VarId {
        self.push(t, Op::Leaf, trainable)
    }

    /// A leaf that never receives gradient (input data, fixed kernels).
    pub fn constant(&mut self, t: Tensor<R>) -> VarId {
        self.leaf(t, false)
    }

    fn binary_elementwise(
        &mut self,
        a: VarId,
        b: VarId,
        name: &str,
        f: impl Fn(R, R) -> R,
        op: Op<R>,
    ) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.dims != tb.dims {
            return Err(Error::shape(name, format!("{:?}", ta.dims), format!("{:?}", tb.dims)));
        }
        let data = ta
            .data
            .iter()
            .zip(&tb.data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor {
            dims: ta.dims.clone(),
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, op, ng))
    }

    pub fn add(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: VarId, b: VarId) -> Result<VarId> {
        self.binary_elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: VarId, c: R) -> Result<VarId> {
        if !c.is_finite() {
            return Err(Error::validation("scale factor must be finite"));
        }
        let ta = &self.nodes[a.0].value;
        let value = Tensor {
            dims: ta.dims.clone(),
            data: ta.data.iter().map(|&x| x * c).collect(),
        };
        let ng = self.needs(a);
        Ok(self.push(value, Op::Scale(a, c), ng))
    }

    pub fn sum(&mut self, a: VarId) -> Result<VarId> {
        let ta = &self.nodes[a.0].value;
        let mut acc = R::zero();
        for &v in &ta.data {
            acc += v;
        }
        let ng = self.needs(a);
        Ok(self.push(Tensor::scalar(acc), Op::Sum(a), ng))
    }

    pub fn relu(&mut self, a: VarId) -> Result<VarId> {
        let ta = &self.nodes[a.0].value;
        let value = Tensor {
            dims: ta.dims.clone(),
            data: ta.data.iter().map(|&x| x.max(R::zero())).collect(),
        };
        let ng = self.needs(a);
        Ok(self.push(value, Op::Relu(a), ng))
    }

    /// Same-size 2-D correlation. Input is `[h, w, c_in]`, weight is
    /// `[c_out, k, k, c_in]`, bias `[c_out]`; output is
    /// `[ceil(h/stride), ceil(w/stride), c_out]`.
    pub fn conv2d(
        &mut self,
        input: VarId,
        weight: VarId,
        bias: Option<VarId>,
        spec: ConvSpec,
    ) -> Result<VarId> {
        let ti = &self.nodes[input.0].value;
        let tw = &self.nodes[weight.0].value;
        if ti.dims.len() != 3 {
            return Err(Error::shape("conv2d input", "[h, w, c]", format!("{:?}", ti.dims)));
        }
        if tw.dims.len() != 4 || tw.dims[1] != tw.dims[2] {
            return Err(Error::shape(
                "conv2d weight",
                "[c_out, k, k, c_in]",
                format!("{:?}", tw.dims),
            ));
        }
        let (h, w, c_in) = (ti.dims[0], ti.dims[1], ti.dims[2]);
        let (c_out, k) = (tw.dims[0], tw.dims[1]);
        if tw.dims[3] != c_in {
            return Err(Error::shape("conv2d weight channels", c_in, tw.dims[3]));
        }
        if k % 2 == 0 || k == 0 {
            return Err(Error::validation(format!("conv2d kernel must be odd, got {k}")));
        }
        if spec.stride == 0 {
            return Err(Error::validation("conv2d stride must be >= 1"));
        }
        if k / 2 > h.min(w) {
            return Err(Error::validation(format!(
                "conv2d kernel {k} too large for {h}x{w} input"
            )));
        }
        if let Some(b) = bias {
            let tb = &self.nodes[b.0].value;
            if tb.dims != vec![c_out] {
                return Err(Error::shape("conv2d bias", c_out, format!("{:?}", tb.dims)));
            }
        }
        let out_h = h.div_ceil(spec.stride);
        let out_w = w.div_ceil(spec.stride);
        let bias_data = bias.map(|b| self.nodes[b.0].value.data.clone());
        let value = conv_forward(
            &self.nodes[input.0].value.data,
            &self.nodes[weight.0].value.data,
            bias_data.as_deref(),
            (h, w, c_in),
            (c_out, k),
            spec,
        );
        let value = Tensor {
            dims: vec![out_h, out_w, c_out],
            data: value,
        };
        let ng = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            ng,
        ))
    }

    /// Bilinear resize of `[h, w, c]` to `[dst_h, dst_w, c]`, half-pixel
    /// centers clamped at the borders.
    pub fn resize_bilinear(&mut self, input: VarId, dst_h: usize, dst_w: usize) -> Result<VarId> {
        let ti = &self.nodes[input.0].value;
        if ti.dims.len() != 3 {
            return Err(Error::shape("resize input", "[h, w, c]", format!("{:?}", ti.dims)));
        }
        if dst_h < 1 || dst_w < 1 {
            return Err(Error::validation("resize target dims must be >= 1"));
        }
        let (h, w, c) = (ti.dims[0], ti.dims[1], ti.dims[2]);
        let mut data = vec![R::zero(); dst_h * dst_w * c];
        for (dst, taps) in bilinear_taps(h, w, dst_h, dst_w) {
            for &(src, wgt) in &taps {
                let wgt = R::from_f64(wgt);
                for ch in 0..c {
                    data[dst * c + ch] += ti.data[src * c + ch] * wgt;
                }
            }
        }
        let value = Tensor {
            dims: vec![dst_h, dst_w, c],
            data,
        };
        let ng = self.needs(input);
        Ok(self.push(
            value,
            Op::ResizeBilinear {
                input,
                dst: (dst_h, dst_w),
            },
            ng,
        ))
    }

    /// Windowed attention logits: for each pixel q of `query`, the dot
    /// products with the `window x window` neighborhood of q in `key`.
    /// Output is `[h*w, window*window]`; entries whose source pixel falls
    /// outside the grid hold a large negative constant, so they vanish
    /// under the subsequent softmax.
    pub fn local_logits(&mut self, query: VarId, key: VarId, window: usize) -> Result<VarId> {
        let (tq, tk) = (&self.nodes[query.0].value, &self.nodes[key.0].value);
        if tq.dims.len() != 3 || tq.dims != tk.dims {
            return Err(Error::shape(
                "local_logits",
                format!("matching [h, w, c], got {:?}", tq.dims),
                format!("{:?}", tk.dims),
            ));
        }
        if window % 2 == 0 || window == 0 {
            return Err(Error::validation(format!(
                "attention window must be odd, got {window}"
            )));
        }
        let (h, w, c) = (tq.dims[0], tq.dims[1], tq.dims[2]);
        let mut data = vec![R::big_negative(); h * w * window * window];
        for q in 0..h * w {
            for j in 0..window * window {
                if let Some(src) = window_source(q, j, h, w, window) {
                    let mut acc = R::zero();
                    for ch in 0..c {
                        acc += tq.data[q * c + ch] * tk.data[src * c + ch];
                    }
                    data[q * window * window + j] = acc;
                }
            }
        }
        let value = Tensor {
            dims: vec![h * w, window * window],
            data,
        };
        let ng = self.needs(query) || self.needs(key);
        Ok(self.push(
            value,
            Op::LocalLogits {
                query,
                key,
                window,
            },
            ng,
        ))
    }

    /// Row-wise softmax over a `[rows, cols]` matrix, max-subtracted for
    /// stability.
    pub fn softmax_rows(&mut self, logits: VarId) -> Result<VarId> {
        let tl = &self.nodes[logits.0].value;
        if tl.dims.len() != 2 {
            return Err(Error::shape("softmax_rows", "[rows, cols]", format!("{:?}", tl.dims)));
        }
        let (rows, cols) = (tl.dims[0], tl.dims[1]);
        let mut data = vec![R::zero(); rows * cols];
        for r in 0..rows {
            let row = &tl.data[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(R::big_negative(), R::max);
            let mut denom = R::zero();
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                data[r * cols + j] = e;
                denom += e;
            }
            if denom <= R::zero() {
                return Err(Error::Numeric(format!(
                    "softmax row {r} has no finite support"
                )));
            }
            for j in 0..cols {
                data[r * cols + j] = data[r * cols + j] / denom;
            }
        }
        let value = Tensor {
            dims: vec![rows, cols],
            data,
        };
        let ng = self.needs(logits);
        Ok(self.push(value, Op::SoftmaxRows(logits), ng))
    }

    /// Soft copy: `out[q] = sum_j factors[q][j] * payload[source_j(q)]`,
    /// skipping out-of-grid window entries. `factors` is
    /// `[h*w, window*window]` (typically a softmax output), `payload` is
    /// `[h, w, c]`.
    pub fn soft_copy(&mut self, factors: VarId, payload: VarId, window: usize) -> Result<VarId> {
        let (tf, tp) = (&self.nodes[factors.0].value, &self.nodes[payload.0].value);
        if tp.dims.len() != 3 {
            return Err(Error::shape("soft_copy payload", "[h, w, c]", format!("{:?}", tp.dims)));
        }
        let (h, w, c) = (tp.dims[0], tp.dims[1], tp.dims[2]);
        if tf.dims != vec![h * w, window * window] {
            return Err(Error::shape(
                "soft_copy factors",
                format!("[{}, {}]", h * w, window * window),
                format!("{:?}", tf.dims),
            ));
        }
        let mut data = vec![R::zero(); h * w * c];
        for q in 0..h * w {
            for j in 0..window * window {
                if let Some(src) = window_source(q, j, h, w, window) {
                    let f = tf.data[q * window * window + j];
                    for ch in 0..c {
                        data[q * c + ch] += f * tp.data[src * c + ch];
                    }
                }
            }
        }
        let value = Tensor {
            dims: vec![h, w, c],
            data,
        };
        let ng = self.needs(factors) || self.needs(payload);
        Ok(self.push(
            value,
            Op::SoftCopy {
                factors,
                payload,
                window,
            },
            ng,
        ))
    }

    /// Mean-per-element smoothed L1: quadratic inside `[-delta, delta]`,
    /// linear outside, continuous at the joins. Output is a scalar.
    pub fn l1_smooth(&mut self, a: VarId, b: VarId, delta: R) -> Result<VarId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.dims != tb.dims {
            return Err(Error::shape(
                "l1_smooth",
                format!("{:?}", ta.dims),
                format!("{:?}", tb.dims),
            ));
        }
        if delta <= R::zero() {
            return Err(Error::validation("l1_smooth delta must be positive"));
        }
        let n = R::from_f64(ta.len() as f64);
        let mut acc = R::zero();
        for (&x, &y) in ta.data.iter().zip(&tb.data) {
            let d = x - y;
            let ad = d.abs();
            if ad <= delta {
                acc += d * d / (R::from_f64(2.0) * delta);
            } else {
                acc += ad - delta / R::from_f64(2.0);
            }
        }
        let value = Tensor::scalar(acc / n);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::L1Smooth { a, b, delta }, ng))
    }

    /// Reverse sweep from a scalar `loss` node. Returns one gradient slot
    /// per tape node; slots of constants and untouched nodes are `None`.
    pub fn backward(&self, loss: VarId) -> Result<Vec<Option<Tensor<R>>>> {
        let lt = &self.nodes[loss.0].value;
        if lt.len() != 1 {
            return Err(Error::shape("backward loss", "scalar", format!("{:?}", lt.dims)));
        }
        let mut grads: Vec<Option<Tensor<R>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.needs(loss) {
            return Ok(grads);
        }
        grads[loss.0] = Some(Tensor::scalar(R::one()));
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            self.backward_step(i, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<R>>], id: VarId, contrib: Tensor<R>) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (gv, cv) in g.data.iter_mut().zip(&contrib.data) {
                    *gv += *cv;
                }
            }
            slot @ None => *slot = Some(contrib),
        }
    }

    fn backward_step(
        &self,
        i: usize,
        gout: &Tensor<R>,
        grads: &mut [Option<Tensor<R>>],
    ) -> Result<()> {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                let neg = Tensor {
                    dims: gout.dims.clone(),
                    data: gout.data.iter().map(|&g| -g).collect(),
                };
                self.accumulate(grads, *b, neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let ga = Tensor {
                    dims: gout.dims.clone(),
                    data: gout.data.iter().zip(&tb.data).map(|(&g, &y)| g * y).collect(),
                };
                let gb = Tensor {
                    dims: gout.dims.clone(),
                    data: gout.data.iter().zip(&ta.data).map(|(&g, &x)| g * x).collect(),
                };
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::Scale(a, c) => {
                let ga = Tensor {
                    dims: gout.dims.clone(),
                    data: gout.data.iter().map(|&g| g * *c).collect(),
                };
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let ta = &self.nodes[a.0].value;
                let g = gout.data[0];
                self.accumulate(
                    grads,
                    *a,
                    Tensor {
                        dims: ta.dims.clone(),
                        data: vec![g; ta.len()],
                    },
                );
            }
            Op::Relu(a) => {
                let ta = &self.nodes[a.0].value;
                let ga = Tensor {
                    dims: ta.dims.clone(),
                    data: ta
                        .data
                        .iter()
                        .zip(&gout.data)
                        .map(|(&x, &g)| if x > R::zero() { g } else { R::zero() })
                        .collect(),
                };
                self.accumulate(grads, *a, ga);
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            } => {
                let ti = &self.nodes[input.0].value;
                let tw = &self.nodes[weight.0].value;
                let (h, w, c_in) = (ti.dims[0], ti.dims[1], ti.dims[2]);
                let (c_out, k) = (tw.dims[0], tw.dims[1]);
                let (gi, gw, gb) = conv_backward(
                    &gout.data,
                    &ti.data,
                    &tw.data,
                    (h, w, c_in),
                    (c_out, k),
                    *spec,
                );
                self.accumulate(
                    grads,
                    *input,
                    Tensor {
                        dims: ti.dims.clone(),
                        data: gi,
                    },
                );
                self.accumulate(
                    grads,
                    *weight,
                    Tensor {
                        dims: tw.dims.clone(),
                        data: gw,
                    },
                );
                if let Some(b) = bias {
                    self.accumulate(
                        grads,
                        *b,
                        Tensor {
                            dims: vec![c_out],
                            data: gb,
                        },
                    );
                }
            }
            Op::ResizeBilinear { input, dst } => {
                let ti = &self.nodes[input.0].value;
                let (h, w, c) = (ti.dims[0], ti.dims[1], ti.dims[2]);
                let mut gi = vec![R::zero(); ti.len()];
                for (dpix, taps) in bilinear_taps(h, w, dst.0, dst.1) {
                    for &(src, wgt) in &taps {
                        let wgt = R::from_f64(wgt);
                        for ch in 0..c {
                            gi[src * c + ch] += gout.data[dpix * c + ch] * wgt;
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *input,
                    Tensor {
                        dims: ti.dims.clone(),
                        data: gi,
                    },
                );
            }
            Op::LocalLogits { query, key, window } => {
                let (tq, tk) = (&self.nodes[query.0].value, &self.nodes[key.0].value);
                let (h, w, c) = (tq.dims[0], tq.dims[1], tq.dims[2]);
                let ww = window * window;
                let mut gq = vec![R::zero(); tq.len()];
                let mut gk = vec![R::zero(); tk.len()];
                for q in 0..h * w {
                    for j in 0..ww {
                        if let Some(src) = window_source(q, j, h, w, *window) {
                            let g = gout.data[q * ww + j];
                            for ch in 0..c {
                                gq[q * c + ch] += g * tk.data[src * c + ch];
                                gk[src * c + ch] += g * tq.data[q * c + ch];
                            }
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *query,
                    Tensor {
                        dims: tq.dims.clone(),
                        data: gq,
                    },
                );
                self.accumulate(
                    grads,
                    *key,
                    Tensor {
                        dims: tk.dims.clone(),
                        data: gk,
                    },
                );
            }
            Op::SoftmaxRows(logits) => {
                let y = &self.nodes[i].value;
                let (rows, cols) = (y.dims[0], y.dims[1]);
                let mut gl = vec![R::zero(); y.len()];
                for r in 0..rows {
                    let mut inner = R::zero();
                    for j in 0..cols {
                        inner += gout.data[r * cols + j] * y.data[r * cols + j];
                    }
                    for j in 0..cols {
                        gl[r * cols + j] =
                            y.data[r * cols + j] * (gout.data[r * cols + j] - inner);
                    }
                }
                self.accumulate(
                    grads,
                    *logits,
                    Tensor {
                        dims: y.dims.clone(),
                        data: gl,
                    },
                );
            }
            Op::SoftCopy {
                factors,
                payload,
                window,
            } => {
                let (tf, tp) = (&self.nodes[factors.0].value, &self.nodes[payload.0].value);
                let (h, w, c) = (tp.dims[0], tp.dims[1], tp.dims[2]);
                let ww = window * window;
                let mut gf = vec![R::zero(); tf.len()];
                let mut gp = vec![R::zero(); tp.len()];
                for q in 0..h * w {
                    for j in 0..ww {
                        if let Some(src) = window_source(q, j, h, w, *window) {
                            let f = tf.data[q * ww + j];
                            for ch in 0..c {
                                let g = gout.data[q * c + ch];
                                gf[q * ww + j] += g * tp.data[src * c + ch];
                                gp[src * c + ch] += g * f;
                            }
                        }
                    }
                }
                self.accumulate(
                    grads,
                    *factors,
                    Tensor {
                        dims: tf.dims.clone(),
                        data: gf,
                    },
                );
                self.accumulate(
                    grads,
                    *payload,
                    Tensor {
                        dims: tp.dims.clone(),
                        data: gp,
                    },
                );
            }
            Op::L1Smooth { a, b, delta } => {
                let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let g = gout.data[0] / R::from_f64(ta.len() as f64);
                let mut ga = Vec::with_capacity(ta.len());
                for (&x, &y) in ta.data.iter().zip(&tb.data) {
                    let d = x - y;
                    let slope = if d.abs() <= *delta {
                        d / *delta
                    } else if d > R::zero() {
                        R::one()
                    } else {
                        -R::one()
                    };
                    ga.push(g * slope);
                }
                let gb = Tensor {
                    dims: tb.dims.clone(),
                    data: ga.iter().map(|&v| -v).collect(),
                };
                self.accumulate(
                    grads,
                    *a,
                    Tensor {
                        dims: ta.dims.clone(),
                        data: ga,
                    },
                );
                self.accumulate(grads, *b, gb);
            }
        }
        Ok(())
    }
}

/// Maps a window entry `j` of pixel `q` to its source pixel index, or `None`
/// if the offset lands outside the grid. Entry `j` enumerates the
/// `window x window` neighborhood row-major, centered on `q`.
pub fn window_source(q: usize, j: usize, h: usize, w: usize, window: usize) -> Option<usize> {
    let r = (window / 2) as i64;
    let (qy, qx) = ((q / w) as i64, (q % w) as i64);
    let sy = qy + (j / window) as i64 - r;
    let sx = qx + (j % window) as i64 - r;
    if sy < 0 || sy >= h as i64 || sx < 0 || sx >= w as i64 {
        None
    } else {
        Some((sy * w as i64 + sx) as usize)
    }
}

/// Resolves an input row/col for a conv tap, or `None` when zero padding
/// swallows it.
fn pad_index(i: i64, n: usize, pad: PadMode) -> Option<usize> {
    match pad {
        PadMode::Zero => {
            if i < 0 || i >= n as i64 {
                None
            } else {
                Some(i as usize)
            }
        }
        PadMode::Reflect => Some(crate::gabor::reflect_index(i, n)),
    }
}

pub(crate) fn conv_forward<R: Real>(
    input: &[R],
    weight: &[R],
    bias: Option<&[R]>,
    (h, w, c_in): (usize, usize, usize),
    (c_out, k): (usize, usize),
    spec: ConvSpec,
) -> Vec<R> {
    let out_h = h.div_ceil(spec.stride);
    let out_w = w.div_ceil(spec.stride);
    let r = (k / 2) as i64;
    let mut out = vec![R::zero(); out_h * out_w * c_out];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let base = (oy * out_w + ox) * c_out;
            for oc in 0..c_out {
                out[base + oc] = bias.map_or(R::zero(), |b| b[oc]);
            }
            for ky in 0..k {
                let Some(iy) = pad_index((oy * spec.stride) as i64 + ky as i64 - r, h, spec.pad)
                else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) =
                        pad_index((ox * spec.stride) as i64 + kx as i64 - r, w, spec.pad)
                    else {
                        continue;
                    };
                    let ibase = (iy * w + ix) * c_in;
                    for oc in 0..c_out {
                        let wbase = ((oc * k + ky) * k + kx) * c_in;
                        let mut acc = R::zero();
                        for ic in 0..c_in {
                            acc += input[ibase + ic] * weight[wbase + ic];
                        }
                        out[base + oc] += acc;
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
fn conv_backward<R: Real>(
    gout: &[R],
    input: &[R],
    weight: &[R],
    (h, w, c_in): (usize, usize, usize),
    (c_out, k): (usize, usize),
    spec: ConvSpec,
) -> (Vec<R>, Vec<R>, Vec<R>) {
    let out_h = h.div_ceil(spec.stride);
    let out_w = w.div_ceil(spec.stride);
    let r = (k / 2) as i64;
    let mut gi = vec![R::zero(); h * w * c_in];
    let mut gw = vec![R::zero(); c_out * k * k * c_in];
    let mut gb = vec![R::zero(); c_out];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let base = (oy * out_w + ox) * c_out;
            for oc in 0..c_out {
                gb[oc] += gout[base + oc];
            }
            for ky in 0..k {
                let Some(iy) = pad_index((oy * spec.stride) as i64 + ky as i64 - r, h, spec.pad)
                else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) =
                        pad_index((ox * spec.stride) as i64 + kx as i64 - r, w, spec.pad)
                    else {
                        continue;
                    };
                    let ibase = (iy * w + ix) * c_in;
                    for oc in 0..c_out {
                        let g = gout[base + oc];
                        let wbase = ((oc * k + ky) * k + kx) * c_in;
                        for ic in 0..c_in {
                            gi[ibase + ic] += g * weight[wbase + ic];
                            gw[wbase + ic] += g * input[ibase + ic];
                        }
                    }
                }
            }
        }
    }
    (gi, gw, gb)
}

/// Shared tap table for the bilinear resize forward and backward passes:
/// for each destination pixel, up to four `(source_pixel, weight)` pairs.
/// Weights are computed in f64 regardless of the graph scalar type so both
/// modes sample identical positions.
fn bilinear_taps(
    h: usize,
    w: usize,
    dst_h: usize,
    dst_w: usize,
) -> Vec<(usize, Vec<(usize, f64)>)> {
    let sy = h as f64 / dst_h as f64;
    let sx = w as f64 / dst_w as f64;
    let mut taps = Vec::with_capacity(dst_h * dst_w);
    for y in 0..dst_h {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let dy = fy - y0 as f64;
        for x in 0..dst_w {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let dx = fx - x0 as f64;
            let mut entry = Vec::with_capacity(4);
            let mut push = |py: usize, px: usize, wt: f64| {
                if wt != 0.0 {
                    entry.push((py * w + px, wt));
                }
            };
            push(y0, x0, (1.0 - dy) * (1.0 - dx));
            push(y0, x1, (1.0 - dy) * dx);
            push(y1, x0, dy * (1.0 - dx));
            push(y1, x1, dy * dx);
            taps.push((y * dst_w + x, entry));
        }
    }
    taps
}
