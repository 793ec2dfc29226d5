//! Rate matrices factored into stationary weights and holding times.

use nalgebra::DMatrix;

use crate::error::Error;

/// `Q_ij = s_j / h_i` off the diagonal, rows summing to zero.
///
/// `s` sums to one and the holding times `h` have mean one.
#[derive(Clone, Debug, PartialEq)]
pub struct RateMatrix {
    stationary: Vec<f64>,
    holding: Vec<f64>,
    q: DMatrix<f64>,
}

impl RateMatrix {
    /// Normalizes `stationary` to sum 1 and `holding` to mean 1.
    pub fn new(stationary: &[f64], holding: &[f64]) -> Result<Self, Error> {
        let a = stationary.len();
        if a < 2 || holding.len() != a {
            return Err(Error::InvalidParameter("rate matrix needs >= 2 states and matching lengths".into()));
        }
        if stationary.iter().chain(holding).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidParameter("stationary weights and holding times must be positive".into()));
        }
        let ssum: f64 = stationary.iter().sum();
        let hmean: f64 = holding.iter().sum::<f64>() / a as f64;
        let s: Vec<f64> = stationary.iter().map(|v| v / ssum).collect();
        let h: Vec<f64> = holding.iter().map(|v| v / hmean).collect();
        Ok(Self::assemble(s, h))
    }

    pub fn jukes_cantor(n_states: usize) -> Self {
        Self::assemble(vec![1.0 / n_states as f64; n_states], vec![1.0; n_states])
    }

    fn assemble(s: Vec<f64>, h: Vec<f64>) -> Self {
        let a = s.len();
        let q = DMatrix::from_fn(a, a, |i, j| if i == j { -(1.0 - s[i]) / h[i] } else { s[j] / h[i] });
        Self { stationary: s, holding: h, q }
    }

    pub fn n_states(&self) -> usize {
        self.stationary.len()
    }

    /// Root distribution of every tree.
    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn holding(&self) -> &[f64] {
        &self.holding
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// Distribution that `Q` leaves invariant, proportional to `s ⊙ h`.
    pub fn equilibrium(&self) -> Vec<f64> {
        let w: Vec<f64> = self.stationary.iter().zip(&self.holding).map(|(s, h)| s * h).collect();
        let t: f64 = w.iter().sum();
        w.into_iter().map(|v| v / t).collect()
    }
}

/// Unconstrained parameters: `s = softmax(logits)`,
/// `h = softplus(pre) / mean(softplus(pre))`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RateParams {
    pub logits: Vec<f64>,
    pub pre: Vec<f64>,
}

impl RateParams {
    /// All-zero parameters, which decode to Jukes–Cantor.
    pub fn zeros(n_states: usize) -> Self {
        Self { logits: vec![0.0; n_states], pre: vec![0.0; n_states] }
    }

    pub fn n_states(&self) -> usize {
        self.logits.len()
    }

    pub fn rate_matrix(&self) -> RateMatrix {
        let (s, h) = decode_raw(&self.logits, &self.pre);
        RateMatrix::assemble(s, h)
    }

    /// Pulls adjoints of `Q` and of the root distribution back to
    /// `(logits, pre)`.
    pub fn backward(&self, g_q: &DMatrix<f64>, g_s: &[f64]) -> (Vec<f64>, Vec<f64>) {
        decode_backward(&self.logits, &self.pre, g_q, g_s)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `(s, h)` from logits and holding-time pre-activations.
pub(crate) fn decode_raw(logits: &[f64], pre: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let s = e.iter().map(|v| v / z).collect();
    let r: Vec<f64> = pre.iter().map(|&p| softplus(p)).collect();
    let rm = r.iter().sum::<f64>() / r.len() as f64;
    let h = r.iter().map(|v| v / rm).collect();
    (s, h)
}

/// Reverse pass of [`decode_raw`] followed by `Q` assembly.
pub(crate) fn decode_backward(logits: &[f64], pre: &[f64], g_q: &DMatrix<f64>, g_s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = logits.len();
    let (s, h) = decode_raw(logits, pre);
    // Q_ij = (s_j - δ_ij) / h_i
    let mut gs: Vec<f64> = g_s.to_vec();
    let mut gh = vec![0.0; a];
    for i in 0..a {
        for j in 0..a {
            let qij = (s[j] - if i == j { 1.0 } else { 0.0 }) / h[i];
            gs[j] += g_q[(i, j)] / h[i];
            gh[i] -= g_q[(i, j)] * qij / h[i];
        }
    }
    let sg: f64 = gs.iter().zip(&s).map(|(g, s)| g * s).sum();
    let g_logits = (0..a).map(|k| s[k] * (gs[k] - sg)).collect();
    let r: Vec<f64> = pre.iter().map(|&p| softplus(p)).collect();
    let rsum: f64 = r.iter().sum();
    let hg: f64 = gh.iter().zip(&h).map(|(g, h)| g * h).sum();
    let g_pre = (0..a).map(|k| (a as f64 * gh[k] - hg) / rsum * sigmoid(pre[k])).collect();
    (g_logits, g_pre)
}
