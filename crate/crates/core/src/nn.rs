//! Dense rectifier networks with hand-written backpropagation.
//!
//! Parameters live in one flat `f64` vector; for each layer the weight matrix
//! (row-major, `out x in`) is followed by the bias vector. Hidden layers use a
//! rectifier, the last layer is linear.

use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // inherent float methods exist whenever std is linked
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
}

/// Cached activations of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Workspace {
    /// `acts[0]` is the input, `acts[l]` the post-activation output of layer `l`.
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    pub fn new(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "need at least input and output widths");
        assert!(widths.iter().all(|&w| w > 0));
        Self {
            widths: widths.to_vec(),
        }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    /// Hidden layers uniform in `±1/sqrt(fan_in)`, biases zero. The output
    /// layer is zero when `zero_output`, otherwise drawn like the hidden ones.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, zero_output: bool) -> Vec<f64> {
        let mut params = Vec::with_capacity(self.param_count());
        let layers = self.widths.len() - 1;
        for (l, w) in self.widths.windows(2).enumerate() {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let last = l + 1 == layers;
            for _ in 0..w[0] * w[1] {
                params.push(if last && zero_output {
                    0.0
                } else {
                    rng.random_range(-bound..bound)
                });
            }
            params.extend(core::iter::repeat_n(0.0, w[1]));
        }
        params
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.widths.iter().map(|&w| vec![0.0; w]).collect(),
            delta: Vec::new(),
            delta_prev: Vec::new(),
        }
    }

    /// Runs the network; the output is `ws.output()`.
    pub fn forward<'w>(&self, params: &[f64], input: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        debug_assert_eq!(params.len(), self.param_count());
        debug_assert_eq!(input.len(), self.widths[0]);
        if ws.acts.len() != self.widths.len() {
            *ws = self.workspace();
        }
        ws.acts[0].copy_from_slice(input);
        let layers = self.widths.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let weights = &params[offset..offset + n_in * n_out];
            let bias = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut s = bias[o];
                for (w, v) in row.iter().zip(x.iter()) {
                    s += w * v;
                }
                y[o] = if l + 1 < layers { s.max(0.0) } else { s };
            }
        }
        &ws.acts[layers]
    }

    /// Accumulates `d(grad_out . output)/d(params)` into `grad_params`, using the
    /// activations cached by the last [`Mlp::forward`] on `ws`. Optionally
    /// writes the input gradient.
    pub fn backward(
        &self,
        params: &[f64],
        ws: &mut Workspace,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let layers = self.widths.len() - 1;
        ws.delta.clear();
        ws.delta.extend_from_slice(grad_out);
        let mut end = self.param_count();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
            let start = end - (n_in * n_out + n_out);
            let x = &ws.acts[l];
            {
                let (gw, gb) = grad_params[start..end].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = ws.delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(x.iter()) {
                        *g += d * v;
                    }
                }
            }
            if l > 0 || grad_input.is_some() {
                let weights = &params[start..start + n_in * n_out];
                ws.delta_prev.clear();
                ws.delta_prev.resize(n_in, 0.0);
                for o in 0..n_out {
                    let d = ws.delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, w) in ws.delta_prev.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *p += d * w;
                    }
                }
                if l > 0 {
                    // Rectifier mask of the layer feeding this one.
                    for (p, a) in ws.delta_prev.iter_mut().zip(x.iter()) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                }
                core::mem::swap(&mut ws.delta, &mut ws.delta_prev);
            }
            end = start;
        }
        if let Some(gi) = grad_input {
            gi.copy_from_slice(&ws.delta[..self.widths[0]]);
        }
    }
}
