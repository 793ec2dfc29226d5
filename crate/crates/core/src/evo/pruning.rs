//! Felsenstein pruning with per-pattern rescaling.
//!
//! A partial is stored as values `L(p, a)` whose per-pattern maximum is 1,
//! plus `σ(p)`: the true conditional likelihood is `e^{σ(p)} L(p, a)`. This
//! keeps deep trees and long alignments inside the float range.
//!
//! The reverse pass works with scale-free adjoints `g(p, a) = e^{σ(p)} ∂ℓ/∂T(p, a)`
//! where `T` is the unscaled partial, so no exponent ever needs to be undone.

use nalgebra::DMatrix;

/// Conditional likelihoods below one node, over site patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct Partial {
    pub n_states: usize,
    pub values: Vec<f64>,
    pub log_scale: Vec<f64>,
}

impl Partial {
    pub fn leaf(values: Vec<f64>, n_states: usize) -> Self {
        let n = values.len() / n_states;
        Self { n_states, values, log_scale: vec![0.0; n] }
    }

    pub fn n_patterns(&self) -> usize {
        self.log_scale.len()
    }
}

/// Row-major copy of a transition matrix for the inner loops.
pub fn row_major(p: &DMatrix<f64>) -> Vec<f64> {
    let a = p.nrows();
    let mut out = vec![0.0; a * a];
    for i in 0..a {
        for j in 0..a {
            out[i * a + j] = p[(i, j)];
        }
    }
    out
}

#[inline]
fn message(p: &[f64], child: &[f64], a: usize, out: &mut [f64]) {
    for i in 0..a {
        let row = &p[i * a..(i + 1) * a];
        out[i] = row.iter().zip(child).map(|(x, y)| x * y).sum();
    }
}

/// Partial of a node from its children's partials and branch transition
/// matrices (row-major).
pub fn combine(children: &[(&[f64], &Partial)]) -> Partial {
    let a = children[0].1.n_states;
    let n = children[0].1.n_patterns();
    let mut values = vec![1.0; n * a];
    let mut log_scale = vec![0.0; n];
    let mut m = vec![0.0; a];
    for p in 0..n {
        let out = &mut values[p * a..(p + 1) * a];
        for (pm, child) in children {
            message(pm, &child.values[p * a..(p + 1) * a], a, &mut m);
            for (o, v) in out.iter_mut().zip(&m) {
                *o *= v;
            }
            log_scale[p] += child.log_scale[p];
        }
        let c = out.iter().cloned().fold(0.0, f64::max);
        if c > 0.0 {
            for o in out.iter_mut() {
                *o /= c;
            }
            log_scale[p] += c.ln();
        } else {
            log_scale[p] = f64::NEG_INFINITY;
        }
    }
    Partial { n_states: a, values, log_scale }
}

/// `Σ_p w_p (log Σ_a η_a L(p,a) + σ(p))`.
pub fn root_log_likelihood(partial: &Partial, eta: &[f64], weights: &[f64]) -> f64 {
    let a = partial.n_states;
    let mut total = 0.0;
    for (p, w) in weights.iter().enumerate() {
        let s: f64 = partial.values[p * a..(p + 1) * a].iter().zip(eta).map(|(l, e)| l * e).sum();
        total += w * (s.ln() + partial.log_scale[p]);
    }
    total
}

/// Per-pattern log-likelihoods at a root.
pub fn root_pattern_log_likelihoods(partial: &Partial, eta: &[f64]) -> Vec<f64> {
    let a = partial.n_states;
    (0..partial.n_patterns())
        .map(|p| {
            let s: f64 = partial.values[p * a..(p + 1) * a].iter().zip(eta).map(|(l, e)| l * e).sum();
            s.ln() + partial.log_scale[p]
        })
        .collect()
}

/// Adds `coef · ∂ℓ_root/∂(partial)` into `g` and `coef · ∂ℓ_root/∂η` into `g_eta`.
pub fn root_backward(partial: &Partial, eta: &[f64], weights: &[f64], coef: f64, g: &mut [f64], g_eta: &mut [f64]) {
    let a = partial.n_states;
    for (p, w) in weights.iter().enumerate() {
        let l = &partial.values[p * a..(p + 1) * a];
        let s: f64 = l.iter().zip(eta).map(|(l, e)| l * e).sum();
        let k = coef * w / s;
        for i in 0..a {
            g[p * a + i] += k * eta[i];
            g_eta[i] += k * l[i];
        }
    }
}

/// Reverse pass of [`combine`].
///
/// `g_node` is the node's scale-free adjoint. Adds each child's adjoint into
/// `g_children[k]` and returns `∂ℓ/∂P_k` (row-major) for every branch.
pub fn combine_backward(children: &[(&[f64], &Partial)], g_node: &[f64], g_children: &mut [&mut [f64]]) -> Vec<Vec<f64>> {
    let a = children[0].1.n_states;
    let n = children[0].1.n_patterns();
    let k = children.len();
    let mut g_p = vec![vec![0.0; a * a]; k];
    let mut msgs = vec![vec![0.0; a]; k];
    let mut prod = vec![0.0; a];
    let mut others = vec![0.0; a];
    for p in 0..n {
        for (c, (pm, child)) in children.iter().enumerate() {
            message(pm, &child.values[p * a..(p + 1) * a], a, &mut msgs[c]);
        }
        prod.fill(1.0);
        for m in &msgs {
            for (x, y) in prod.iter_mut().zip(m) {
                *x *= y;
            }
        }
        let cmax = prod.iter().cloned().fold(0.0, f64::max);
        if cmax <= 0.0 {
            continue;
        }
        let gn = &g_node[p * a..(p + 1) * a];
        for (c, (pm, child)) in children.iter().enumerate() {
            // Product of the other messages, recomputed to avoid dividing by zeros.
            others.fill(1.0 / cmax);
            for (d, m) in msgs.iter().enumerate() {
                if d != c {
                    for (x, y) in others.iter_mut().zip(m) {
                        *x *= y;
                    }
                }
            }
            let lc = &child.values[p * a..(p + 1) * a];
            let gc = &mut g_children[c][p * a..(p + 1) * a];
            for i in 0..a {
                let t = gn[i] * others[i];
                if t == 0.0 {
                    continue;
                }
                for j in 0..a {
                    gc[j] += t * pm[i * a + j];
                    g_p[c][i * a + j] += t * lc[j];
                }
            }
        }
    }
    g_p
}
