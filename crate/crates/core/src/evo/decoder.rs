//! Rate matrices decoded from disk embeddings.
//!
//! Features `φ(p) = (|p|, p₁/|p|, p₂/|p|)` (zero at the origin) pass through
//! an affine map, optionally with tanh hidden layers, to `2A` outputs: the
//! first `A` are stationary logits, the rest holding-time pre-activations.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use super::rate::{decode_backward, decode_raw, RateMatrix, RateParams};
use crate::geometry::DiskPoint;

const ZERO_NORM: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `n_out × n_in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self { n_in, n_out, weights: vec![0.0; n_in * n_out], bias: vec![0.0; n_out] }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_out)
            .map(|o| self.bias[o] + self.weights[o * self.n_in..(o + 1) * self.n_in].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Decoder {
    pub n_states: usize,
    pub layers: Vec<Layer>,
}

/// Gradient with the same layout as [`Decoder`].
pub type DecoderGrad = Decoder;

impl Decoder {
    /// All-zero weights; every embedding decodes to Jukes–Cantor.
    pub fn zeros(n_states: usize, hidden: &[usize]) -> Self {
        let mut dims = vec![3];
        dims.extend_from_slice(hidden);
        dims.push(2 * n_states);
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Self { n_states, layers }
    }

    /// Small Gaussian weights (scale `std`), zero biases.
    pub fn random<R: Rng + ?Sized>(n_states: usize, hidden: &[usize], std: f64, rng: &mut R) -> Self {
        let mut d = Self::zeros(n_states, hidden);
        for l in &mut d.layers {
            for w in &mut l.weights {
                *w = std * rng.sample::<f64, _>(StandardNormal);
            }
        }
        d
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        let mut i = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&flat[i..i + n]);
            i += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&flat[i..i + n]);
            i += n;
        }
    }

    fn zeroed(&self) -> DecoderGrad {
        let mut g = self.clone();
        g.set_params(&vec![0.0; self.n_params()]);
        g
    }

    /// Raw `(logits, pre)` outputs and the layer activations for the reverse pass.
    fn forward(&self, p: &DiskPoint) -> (RateParams, Vec<Vec<f64>>) {
        let mut acts = vec![features(p)];
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.apply(acts.last().unwrap());
            if i + 1 < self.layers.len() {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        let out = acts.last().unwrap();
        let a = self.n_states;
        (RateParams { logits: out[..a].to_vec(), pre: out[a..].to_vec() }, acts)
    }

    pub fn decode(&self, p: &DiskPoint) -> RateMatrix {
        self.forward(p).0.rate_matrix()
    }

    /// Accumulates into `grad` the pull-back of `(∂f/∂Q, ∂f/∂s)` at embedding
    /// `p`, and returns `∂f/∂p`.
    pub fn backward(&self, p: &DiskPoint, g_q: &DMatrix<f64>, g_s: &[f64], grad: &mut DecoderGrad) -> [f64; 2] {
        let (raw, acts) = self.forward(p);
        let (gl, gp) = decode_backward(&raw.logits, &raw.pre, g_q, g_s);
        let mut g: Vec<f64> = gl.into_iter().chain(gp).collect();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let x = &acts[i];
            if i + 1 < self.layers.len() {
                // Output of this layer went through tanh.
                for (gv, y) in g.iter_mut().zip(&acts[i + 1]) {
                    *gv *= 1.0 - y * y;
                }
            }
            let gl = &mut grad.layers[i];
            let mut gx = vec![0.0; l.n_in];
            for o in 0..l.n_out {
                gl.bias[o] += g[o];
                for k in 0..l.n_in {
                    gl.weights[o * l.n_in + k] += g[o] * x[k];
                    gx[k] += g[o] * l.weights[o * l.n_in + k];
                }
            }
            g = gx;
        }
        features_backward(p, &g)
    }

    pub fn grad_zeros(&self) -> DecoderGrad {
        self.zeroed()
    }
}

/// `φ(p) = (|p|, p₁/|p|, p₂/|p|)`, zero below the origin threshold.
pub fn features(p: &DiskPoint) -> Vec<f64> {
    let n = p.norm();
    if n < ZERO_NORM {
        vec![0.0; 3]
    } else {
        vec![n, p.x / n, p.y / n]
    }
}

fn features_backward(p: &DiskPoint, g: &[f64]) -> [f64; 2] {
    let n = p.norm();
    if n < ZERO_NORM {
        return [0.0, 0.0];
    }
    let (ux, uy) = (p.x / n, p.y / n);
    // ∂(p_i/|p|)/∂p_j = (δ_ij - u_i u_j) / |p|
    let gx = g[0] * ux + (g[1] * (1.0 - ux * ux) - g[2] * ux * uy) / n;
    let gy = g[0] * uy + (g[2] * (1.0 - uy * uy) - g[1] * ux * uy) / n;
    [gx, gy]
}

/// `(s, h)` decoded at `p` without assembling `Q`.
pub fn decode_parts(dec: &Decoder, p: &DiskPoint) -> (Vec<f64>, Vec<f64>) {
    let raw = dec.forward(p).0;
    decode_raw(&raw.logits, &raw.pre)
}
