//! Float64 building blocks with explicit forward and backward passes.
//!
//! Gradient buffers have the same type as the layer (`zeros_like`), and every
//! `backward` accumulates into them so that batches can sum per-example
//! gradients.

use crate::tensor::{join, Params, Tensor};

fn uniform_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `[out, in]`, row-major.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(input: usize, output: usize, seed: u64, name: &str) -> Self {
        let bound = uniform_bound(input);
        Self {
            weight: Tensor::uniform(&[output, input], bound, seed, &join(name, "weight")),
            bias: Tensor::uniform(&[output], bound, seed, &join(name, "bias")),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n_in = self.input_dim();
        debug_assert_eq!(x.len(), n_in);
        self.weight
            .data
            .chunks_exact(n_in)
            .zip(&self.bias.data)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&self, x: &[f64], grad_out: &[f64], grads: &mut Linear) -> Vec<f64> {
        let n_in = self.input_dim();
        let mut grad_in = vec![0.0; n_in];
        for (o, &g) in grad_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grads.bias.data[o] += g;
            let row = &self.weight.data[o * n_in..(o + 1) * n_in];
            let grow = &mut grads.weight.data[o * n_in..(o + 1) * n_in];
            for i in 0..n_in {
                grow[i] += g * x[i];
                grad_in[i] += g * row[i];
            }
        }
        grad_in
    }
}

impl Params for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// 3x3 convolution, stride 1, zero padding 1, on channel-major `[C, H, W]` data.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    /// `[out, in, 3, 3]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv3x3 {
    pub fn new(input: usize, output: usize, seed: u64, name: &str) -> Self {
        let bound = uniform_bound(input * 9);
        Self {
            weight: Tensor::uniform(&[output, input, 3, 3], bound, seed, &join(name, "weight")),
            bias: Tensor::uniform(&[output], bound, seed, &join(name, "bias")),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: self.weight.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    pub fn forward(&self, x: &[f64], h: usize, w: usize) -> Vec<f64> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let plane = h * w;
        let mut out = vec![0.0; cout * plane];
        for o in 0..cout {
            let dst = &mut out[o * plane..(o + 1) * plane];
            dst.fill(self.bias.data[o]);
            for c in 0..cin {
                let src = &x[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let wv = self.weight.data[((o * cin + c) * 3 + ky) * 3 + kx];
                        for y in 0..h {
                            let iy = y + ky;
                            if iy < 1 || iy > h {
                                continue;
                            }
                            let srow = &src[(iy - 1) * w..iy * w];
                            let drow = &mut dst[y * w..(y + 1) * w];
                            // ix = x + kx - 1 must lie in [0, w)
                            let x0 = 1usize.saturating_sub(kx);
                            let x1 = (w + 1 - kx).min(w);
                            for xx in x0..x1 {
                                drow[xx] += wv * srow[xx + kx - 1];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(
        &self,
        x: &[f64],
        grad_out: &[f64],
        h: usize,
        w: usize,
        grads: &mut Conv3x3,
    ) -> Vec<f64> {
        let (cin, cout) = (self.in_channels(), self.out_channels());
        let plane = h * w;
        let mut grad_in = vec![0.0; cin * plane];
        for o in 0..cout {
            let gy = &grad_out[o * plane..(o + 1) * plane];
            grads.bias.data[o] += gy.iter().sum::<f64>();
            for c in 0..cin {
                let src = &x[c * plane..(c + 1) * plane];
                let gsrc = &mut grad_in[c * plane..(c + 1) * plane];
                for ky in 0..3 {
                    for kx in 0..3 {
                        let widx = ((o * cin + c) * 3 + ky) * 3 + kx;
                        let wv = self.weight.data[widx];
                        let mut gw = 0.0;
                        for y in 0..h {
                            let iy = y + ky;
                            if iy < 1 || iy > h {
                                continue;
                            }
                            let x0 = 1usize.saturating_sub(kx);
                            let x1 = (w + 1 - kx).min(w);
                            let grow = &gy[y * w..(y + 1) * w];
                            let base = (iy - 1) * w;
                            for xx in x0..x1 {
                                let si = base + xx + kx - 1;
                                gw += grow[xx] * src[si];
                                gsrc[si] += grow[xx] * wv;
                            }
                        }
                        grads.weight.data[widx] += gw;
                    }
                }
            }
        }
        grad_in
    }
}

impl Params for Conv3x3 {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// 2x2 average pooling with stride 2 on `[C, H, W]`; `h` and `w` must be even.
pub fn avg_pool2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let s = src[2 * y * w + 2 * xx]
                    + src[2 * y * w + 2 * xx + 1]
                    + src[(2 * y + 1) * w + 2 * xx]
                    + src[(2 * y + 1) * w + 2 * xx + 1];
                out[ch * oh * ow + y * ow + xx] = 0.25 * s;
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut grad_in = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                grad_in[ch * h * w + y * w + xx] =
                    0.25 * grad_out[ch * oh * ow + (y / 2) * ow + xx / 2];
            }
        }
    }
    grad_in
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `[vocab, dim]`
    pub table: Tensor,
}

impl Embedding {
    pub fn new(vocab: usize, dim: usize, seed: u64, name: &str) -> Self {
        Self {
            table: Tensor::uniform(&[vocab, dim], 1.0, seed, &join(name, "table")),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.table.shape[0]
    }

    pub fn dim(&self) -> usize {
        self.table.shape[1]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            table: self.table.zeros_like(),
        }
    }

    pub fn row(&self, id: u32) -> &[f64] {
        let d = self.dim();
        &self.table.data[id as usize * d..(id as usize + 1) * d]
    }

    pub fn accumulate(&self, id: u32, grad: &[f64], grads: &mut Embedding) {
        let d = self.dim();
        let dst = &mut grads.table.data[id as usize * d..(id as usize + 1) * d];
        for (a, g) in dst.iter_mut().zip(grad) {
            *a += g;
        }
    }
}

impl Params for Embedding {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&join(prefix, "table"), &self.table);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "table"), &mut self.table);
    }
}

/// Single-direction LSTM with gate order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `[4H, E]`
    pub w_ih: Tensor,
    /// `[4H, H]`
    pub w_hh: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

/// Activations saved by [`Lstm::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct LstmTrace {
    inputs: Vec<Vec<f64>>,
    h_prev: Vec<Vec<f64>>,
    c_prev: Vec<Vec<f64>>,
    /// post-activation gates `[i, f, g, o]`, each of length H
    gates: Vec<Vec<f64>>,
    cells: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, seed: u64, name: &str) -> Self {
        let bound = uniform_bound(hidden);
        Self {
            w_ih: Tensor::uniform(&[4 * hidden, input], bound, seed, &join(name, "w_ih")),
            w_hh: Tensor::uniform(&[4 * hidden, hidden], bound, seed, &join(name, "w_hh")),
            bias: Tensor::uniform(&[4 * hidden], bound, seed, &join(name, "bias")),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.shape[1]
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.shape[1]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_ih: self.w_ih.zeros_like(),
            w_hh: self.w_hh.zeros_like(),
            bias: self.bias.zeros_like(),
        }
    }

    /// Runs the recurrence from a zero state and returns the final hidden state.
    pub fn forward(&self, inputs: &[&[f64]]) -> (Vec<f64>, LstmTrace) {
        let hd = self.hidden();
        let e = self.input_dim();
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        let mut trace = LstmTrace::default();
        for x in inputs {
            let mut z = self.bias.data.clone();
            for (r, zr) in z.iter_mut().enumerate() {
                let wi = &self.w_ih.data[r * e..(r + 1) * e];
                let wh = &self.w_hh.data[r * hd..(r + 1) * hd];
                *zr += wi.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>()
                    + wh.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut gates = vec![0.0; 4 * hd];
            for k in 0..hd {
                gates[k] = sigmoid(z[k]);
                gates[hd + k] = sigmoid(z[hd + k]);
                gates[2 * hd + k] = z[2 * hd + k].tanh();
                gates[3 * hd + k] = sigmoid(z[3 * hd + k]);
            }
            let mut c_new = vec![0.0; hd];
            let mut h_new = vec![0.0; hd];
            for k in 0..hd {
                c_new[k] = gates[hd + k] * c[k] + gates[k] * gates[2 * hd + k];
                h_new[k] = gates[3 * hd + k] * c_new[k].tanh();
            }
            trace.inputs.push(x.to_vec());
            trace.h_prev.push(std::mem::replace(&mut h, h_new));
            trace.c_prev.push(std::mem::replace(&mut c, c_new.clone()));
            trace.gates.push(gates);
            trace.cells.push(c_new);
        }
        (h, trace)
    }

    /// Backpropagates a gradient on the final hidden state through time.
    /// Returns the gradient for each input vector, in input order.
    pub fn backward(&self, trace: &LstmTrace, grad_h: &[f64], grads: &mut Lstm) -> Vec<Vec<f64>> {
        let hd = self.hidden();
        let e = self.input_dim();
        let steps = trace.inputs.len();
        let mut dh = grad_h.to_vec();
        let mut dc = vec![0.0; hd];
        let mut grad_inputs = vec![Vec::new(); steps];
        for t in (0..steps).rev() {
            let gates = &trace.gates[t];
            let mut dz = vec![0.0; 4 * hd];
            let mut dc_prev = vec![0.0; hd];
            for k in 0..hd {
                let (i, f, g, o) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
                let tc = trace.cells[t][k].tanh();
                let d_o = dh[k] * tc;
                let dck = dc[k] + dh[k] * o * (1.0 - tc * tc);
                dz[k] = dck * g * i * (1.0 - i);
                dz[hd + k] = dck * trace.c_prev[t][k] * f * (1.0 - f);
                dz[2 * hd + k] = dck * i * (1.0 - g * g);
                dz[3 * hd + k] = d_o * o * (1.0 - o);
                dc_prev[k] = dck * f;
            }
            let x = &trace.inputs[t];
            let hp = &trace.h_prev[t];
            let mut dx = vec![0.0; e];
            let mut dh_prev = vec![0.0; hd];
            for (r, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grads.bias.data[r] += g;
                let wi = &self.w_ih.data[r * e..(r + 1) * e];
                let gwi = &mut grads.w_ih.data[r * e..(r + 1) * e];
                for j in 0..e {
                    gwi[j] += g * x[j];
                    dx[j] += g * wi[j];
                }
                let wh = &self.w_hh.data[r * hd..(r + 1) * hd];
                let gwh = &mut grads.w_hh.data[r * hd..(r + 1) * hd];
                for j in 0..hd {
                    gwh[j] += g * hp[j];
                    dh_prev[j] += g * wh[j];
                }
            }
            grad_inputs[t] = dx;
            dh = dh_prev;
            dc = dc_prev;
        }
        grad_inputs
    }
}

impl Params for Lstm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(&str, &'a Tensor)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
