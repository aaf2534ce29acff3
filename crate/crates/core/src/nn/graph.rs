//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together
//! with the values needed to differentiate it. Nodes are appended in
//! evaluation order, so [`Graph::backward`] is a single reverse sweep.

use std::sync::Arc;

use super::kernels::{self, ConvGeom, Interp, WindowLayout};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<u32>,
    },
    Relu(Var),
    Gelu(Var),
    /// `exp(lo + span * sigmoid(x))`
    SigmoidLogRange {
        x: Var,
        span: T,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Add(Var, Var),
    Concat(Vec<Var>),
    Resample {
        x: Var,
        rows: Arc<Interp<T>>,
        cols: Arc<Interp<T>>,
    },
    Crop {
        x: Var,
        y0: usize,
        x0: usize,
    },
    Transpose(Var),
    Reshape(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    WindowAttention {
        qkv: Var,
        heads: usize,
        layout: Arc<WindowLayout>,
        probs: Vec<T>,
    },
    /// Scalar with precomputed partial derivatives w.r.t. each input.
    Reduce(Vec<(Var, Tensor<T>)>),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recorded computation over tensors of scalar type `T`.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node that required one.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn shape_err(msg: String) -> Error {
    Error::Shape(msg)
}

impl<T: Float> Graph<T> {
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

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// A leaf whose gradient is retained by [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd) = self.value(x).chw()?;
        let ws = self.shape(w).to_vec();
        let [cout, wc, k, k2] = ws[..] else {
            return Err(shape_err(format!("conv weight must be 4-D, got {ws:?}")));
        };
        if wc != cin || k != k2 || self.value(b).numel() != cout {
            return Err(shape_err(format!(
                "conv weight {ws:?} incompatible with input channels {cin}"
            )));
        }
        let geom = ConvGeom::new(cin, h, wd, cout, k, stride, pad)
            .ok_or_else(|| shape_err(format!("conv kernel {k} larger than input {h}x{wd}")))?;
        let y = kernels::conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &geom,
        );
        let value = Tensor::from_vec(&[cout, geom.oh, geom.ow], y)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, ng))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape_err(format!("max_pool2 needs even dims, got {h}x{w}")));
        }
        let (y, argmax) = kernels::max_pool2(self.value(x).data(), c, h, w);
        let value = Tensor::from_vec(&[c, h / 2, w / 2], y)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::MaxPool2 { x, argmax }, ng))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::ZERO { v } else { T::ZERO });
        let ng = self.ng(x);
        self.push(value, Op::Relu(x), ng)
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::gelu);
        let ng = self.ng(x);
        self.push(value, Op::Gelu(x), ng)
    }

    /// Maps logits into `(lo, hi)` geometrically: `exp(ln lo + (ln hi - ln lo)·σ(x))`.
    pub fn sigmoid_log_range(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, span) = (T::from_f64(lo.ln()), T::from_f64(hi.ln() - lo.ln()));
        let value = self
            .value(x)
            .map(|v| (l + span * kernels::sigmoid(v)).exp());
        let ng = self.ng(x);
        self.push(value, Op::SigmoidLogRange { x, span }, ng)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::from_f64(scale), T::from_f64(shift));
        let value = self.value(x).map(|v| s * v + t);
        let ng = self.ng(x);
        self.push(value, Op::Affine { x, scale: s }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(format!(
                "add {:?} + {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Channel concatenation of `[C_i, H, W]` maps.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_channels(&parts)?;
        let ng = xs.iter().any(|&v| self.ng(v));
        Ok(self.push(value, Op::Concat(xs.to_vec()), ng))
    }

    /// Separable bilinear resampling of a `[C, H, W]` map.
    pub fn resample(&mut self, x: Var, rows: Arc<Interp<T>>, cols: Arc<Interp<T>>) -> Result<Var> {
        let (c, h, w) = self.value(x).chw()?;
        if rows.in_len != h || cols.in_len != w {
            return Err(shape_err(format!(
                "resample built for {}x{}, input is {h}x{w}",
                rows.in_len, cols.in_len
            )));
        }
        let y = kernels::resample_forward(self.value(x).data(), c, &rows, &cols);
        let value = Tensor::from_vec(&[c, rows.out_len, cols.out_len], y)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Resample { x, rows, cols }, ng))
    }

    /// Spatial crop of a `[C, H, W]` (or `[H, W]`) map.
    pub fn crop(&mut self, x: Var, y0: usize, x0: usize, h: usize, w: usize) -> Result<Var> {
        let value = self.value(x).crop(y0, x0, h, w)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Crop { x, y0, x0 }, ng))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let [r, c] = t.shape()[..] else {
            return Err(shape_err(format!("transpose needs 2-D, got {:?}", t.shape())));
        };
        let src = t.data();
        let mut out = vec![T::ZERO; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::from_vec(&[c, r], out)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Transpose(x), ng))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        Ok(self.push(value, Op::Reshape(x), ng))
    }

    /// `x·w + b` for `x: [N, I]`, `w: [I, O]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        let (&[n, i], &[wi, o]) = (xs.as_slice(), ws.as_slice()) else {
            return Err(shape_err(format!("linear {xs:?} x {ws:?}")));
        };
        if i != wi || self.value(b).numel() != o {
            return Err(shape_err(format!("linear {xs:?} x {ws:?}")));
        }
        let mut y = vec![T::ZERO; n * o];
        let bias = self.value(b).data();
        for row in y.chunks_mut(o) {
            row.copy_from_slice(bias);
        }
        T::gemm(n, i, o, self.value(x).data(), false, self.value(w).data(), false, &mut y, true);
        let value = Tensor::from_vec(&[n, o], y)?;
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(value, Op::Linear { x, w, b }, ng))
    }

    /// Normalizes each row of `[N, C]` over its `C` entries.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [_, c] = self.shape(x)[..] else {
            return Err(shape_err(format!("layer_norm needs [N, C], got {:?}", self.shape(x))));
        };
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return Err(shape_err("layer_norm affine size mismatch".into()));
        }
        let (y, xhat, rstd) = kernels::layer_norm_forward(
            self.value(x).data(),
            c,
            self.value(gamma).data(),
            self.value(beta).data(),
            1e-5,
        );
        let value = Tensor::from_vec(self.shape(x), y)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    /// Windowed multi-head self-attention over packed `[N, 3C]` projections.
    pub fn window_attention(&mut self, qkv: Var, heads: usize, layout: Arc<WindowLayout>) -> Result<Var> {
        let [n, c3] = self.shape(qkv)[..] else {
            return Err(shape_err("window_attention needs [N, 3C]".into()));
        };
        let c = c3 / 3;
        if c3 % 3 != 0 || heads == 0 || c % heads != 0 || n != layout.h * layout.w {
            return Err(shape_err(format!(
                "window_attention: {n} tokens of width {c3} with {heads} heads on {}x{}",
                layout.h, layout.w
            )));
        }
        let (y, probs) = kernels::window_attention_forward(self.value(qkv).data(), c, heads, &layout);
        let value = Tensor::from_vec(&[n, c], y)?;
        let ng = self.ng(qkv);
        Ok(self.push(
            value,
            Op::WindowAttention {
                qkv,
                heads,
                layout,
                probs,
            },
            ng,
        ))
    }

    /// Records a scalar computed outside the graph, given its partial
    /// derivatives with respect to each input.
    pub fn reduce(&mut self, value: T, partials: Vec<(Var, Tensor<T>)>) -> Result<Var> {
        for (v, g) in &partials {
            if g.shape() != self.shape(*v) {
                return Err(shape_err("reduce: partial shape mismatch".into()));
            }
        }
        let ng = partials.iter().any(|(v, _)| self.ng(*v));
        Ok(self.push(Tensor::scalar(value), Op::Reduce(partials), ng))
    }

    /// Sum of scalar nodes weighted by `weights`.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = T::ZERO;
        let mut partials = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            if self.value(v).numel() != 1 {
                return Err(shape_err("weighted_sum of non-scalar".into()));
            }
            total += T::from_f64(w) * self.value(v).data()[0];
            partials.push((v, Tensor::from_vec(self.shape(v), vec![T::from_f64(w)])?));
        }
        self.reduce(total, partials)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).numel(), 1, "backward needs a scalar");
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(self.shape(loss), T::ONE));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn accumulate_vec(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Vec<T>) {
        if !self.ng(v) {
            return;
        }
        let g = Tensor::from_vec(self.shape(v), g).expect("gradient shape");
        self.accumulate(grads, v, g);
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let need_dw = self.ng(*w) || self.ng(*b);
                let (dx, dw, db) = kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    g.data(),
                    geom,
                    self.ng(*x),
                    need_dw,
                );
                if let Some(dx) = dx {
                    self.accumulate_vec(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    self.accumulate_vec(grads, *w, dw);
                }
                if let Some(db) = db {
                    self.accumulate_vec(grads, *b, db);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = vec![T::ZERO; self.value(*x).numel()];
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    dx[i as usize] += gv;
                }
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Relu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| if v > T::ZERO { gv } else { T::ZERO })
                    .collect();
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Gelu(x) => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &gv)| kernels::gelu_grad(v) * gv)
                    .collect();
                self.accumulate_vec(grads, *x, dx);
            }
            Op::SigmoidLogRange { x, span } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .zip(g.data())
                    .map(|((&v, &y), &gv)| {
                        let s = kernels::sigmoid(v);
                        gv * y * *span * s * (T::ONE - s)
                    })
                    .collect();
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Affine { x, scale } => {
                let mut dx = g.clone();
                dx.scale(*scale);
                self.accumulate(grads, *x, dx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Concat(xs) => {
                let mut offset = 0;
                for &x in xs {
                    let n = self.value(x).numel();
                    self.accumulate_vec(grads, x, g.data()[offset..offset + n].to_vec());
                    offset += n;
                }
            }
            Op::Resample { x, rows, cols } => {
                let (c, _, _) = self.value(*x).chw().expect("resample input");
                let dx = kernels::resample_backward(g.data(), c, rows, cols);
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Crop { x, y0, x0 } => {
                let mut dx = Tensor::zeros(self.shape(*x));
                dx.paste(g, *y0, *x0).expect("crop gradient");
                self.accumulate(grads, *x, dx);
            }
            Op::Transpose(x) => {
                let [r, c] = self.shape(*x)[..] else { unreachable!() };
                let src = g.data();
                let mut dx = vec![T::ZERO; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = src[j * r + i];
                    }
                }
                self.accumulate_vec(grads, *x, dx);
            }
            Op::Reshape(x) => {
                self.accumulate_vec(grads, *x, g.data().to_vec());
            }
            Op::Linear { x, w, b } => {
                let [n, i] = self.shape(*x)[..] else { unreachable!() };
                let o = self.shape(*w)[1];
                if self.ng(*x) {
                    let mut dx = vec![T::ZERO; n * i];
                    T::gemm(n, o, i, g.data(), false, self.value(*w).data(), true, &mut dx, false);
                    self.accumulate_vec(grads, *x, dx);
                }
                if self.ng(*w) {
                    let mut dw = vec![T::ZERO; i * o];
                    T::gemm(i, n, o, self.value(*x).data(), true, g.data(), false, &mut dw, false);
                    self.accumulate_vec(grads, *w, dw);
                }
                if self.ng(*b) {
                    let mut db = vec![T::ZERO; o];
                    for row in g.data().chunks(o) {
                        for (d, &v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    self.accumulate_vec(grads, *b, db);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let c = self.shape(*x)[1];
                let (dx, dg, db) =
                    kernels::layer_norm_backward(g.data(), xhat, rstd, self.value(*gamma).data(), c);
                self.accumulate_vec(grads, *x, dx);
                self.accumulate_vec(grads, *gamma, dg);
                self.accumulate_vec(grads, *beta, db);
            }
            Op::WindowAttention {
                qkv,
                heads,
                layout,
                probs,
            } => {
                let c = self.shape(*qkv)[1] / 3;
                let d = kernels::window_attention_backward(
                    self.value(*qkv).data(),
                    probs,
                    g.data(),
                    c,
                    *heads,
                    layout,
                );
                self.accumulate_vec(grads, *qkv, d);
            }
            Op::Reduce(partials) => {
                let s = g.data()[0];
                for (v, p) in partials {
                    let mut d = p.clone();
                    d.scale(s);
                    self.accumulate(grads, *v, d);
                }
            }
        }
    }
}
