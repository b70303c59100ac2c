//! Minimal f64 neural-network engine: 3D convolution, group normalization,
//! pooling, linear layers and Adam, all with hand-written analytic
//! backpropagation.
//!
//! Layers own their weights and gradient buffers. `forward` borrows the
//! layer immutably and returns whatever cache backward needs; `backward`
//! accumulates parameter gradients in place and returns the input gradient.
//! Everything is deterministic given the construction seed and data order.

mod adam;
mod conv;
mod linear;
mod norm;
mod pool;

pub use adam::Adam;
pub use conv::Conv3d;
pub use linear::{Linear, Mlp, MlpCache};
pub use norm::{GnCache, GroupNorm};
pub use pool::{global_avg_pool, global_avg_pool_backward, MaxPool3d, MaxPoolCache};

/// A channel-major feature map: `data[c][z][y][x]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatMap {
    pub c: usize,
    pub dhw: [usize; 3],
    pub data: Vec<f64>,
}

impl FeatMap {
    pub fn zeros(c: usize, dhw: [usize; 3]) -> Self {
        Self { c, dhw, data: vec![0.0; c * dhw[0] * dhw[1] * dhw[2]] }
    }

    pub fn spatial_len(&self) -> usize {
        self.dhw[0] * self.dhw[1] * self.dhw[2]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spatial_len();
        &mut self.data[c * n..(c + 1) * n]
    }
}

/// Visits every (name, weights, grads) triple of a model, in a fixed
/// traversal order. The optimizer, checkpointing and the finite-difference
/// harness are all built on this.
pub trait Params {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64]));
}

pub fn zero_grads(model: &mut dyn Params) {
    model.visit("", &mut |_, _, g| g.fill(0.0));
}

pub fn num_params(model: &mut dyn Params) -> usize {
    let mut n = 0;
    model.visit("", &mut |_, w, _| n += w.len());
    n
}

/// Flattened copy of all weights, traversal order.
pub fn flat_params(model: &mut dyn Params) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit("", &mut |_, w, _| out.extend_from_slice(w));
    out
}

/// Flattened copy of all gradients, traversal order.
pub fn flat_grads(model: &mut dyn Params) -> Vec<f64> {
    let mut out = Vec::new();
    model.visit("", &mut |_, _, g| out.extend_from_slice(g));
    out
}

/// Writes a flat vector (as produced by [`flat_params`]) back into the model.
pub fn set_flat_params(model: &mut dyn Params, flat: &[f64]) {
    let mut offset = 0;
    model.visit("", &mut |_, w, _| {
        w.copy_from_slice(&flat[offset..offset + w.len()]);
        offset += w.len();
    });
    assert_eq!(offset, flat.len(), "flat parameter vector length mismatch");
}

/// In-place ReLU.
pub fn relu_forward(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Gradient through ReLU given the post-activation output.
pub fn relu_backward(y: &[f64], gy: &mut [f64]) {
    for (g, &out) in gy.iter_mut().zip(y) {
        if out <= 0.0 {
            *g = 0.0;
        }
    }
}

pub(crate) fn join_name(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
