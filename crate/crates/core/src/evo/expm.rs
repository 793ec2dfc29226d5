//! Transition matrices `exp(βQ)` and their reverse-mode derivatives.
//!
//! `Q` is reversible with respect to `π ∝ s ⊙ h`, so `D^{1/2} Q D^{-1/2}`
//! (with `D = diag(π)`) is symmetric and a symmetric eigendecomposition gives
//! `Q = V Λ V^{-1}`. When `π` is so uneven that `V` is ill-conditioned the
//! Padé route of nalgebra is used instead.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::rate::RateMatrix;
use crate::error::Error;

const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Debug)]
enum Route {
    Spectral { lambda: DVector<f64>, v: DMatrix<f64>, v_inv: DMatrix<f64> },
    Pade,
}

/// Precomputed exponentiation of one rate matrix.
#[derive(Clone, Debug)]
pub struct Exponentiator {
    q: DMatrix<f64>,
    route: Route,
}

impl Exponentiator {
    pub fn new(rate: &RateMatrix) -> Self {
        let q = rate.q().clone();
        let pi = rate.equilibrium();
        let (lo, hi) = pi.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &p| (lo.min(p), hi.max(p)));
        if (hi / lo).sqrt() > MAX_CONDITION {
            return Self { q, route: Route::Pade };
        }
        let a = q.nrows();
        let sq: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
        let mut sym = DMatrix::from_fn(a, a, |i, j| sq[i] * q[(i, j)] / sq[j]);
        sym = (&sym + sym.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let v = DMatrix::from_fn(a, a, |i, k| eig.eigenvectors[(i, k)] / sq[i]);
        let v_inv = DMatrix::from_fn(a, a, |k, j| eig.eigenvectors[(j, k)] * sq[j]);
        Self { q, route: Route::Spectral { lambda: eig.eigenvalues, v, v_inv } }
    }

    /// Forces the Padé route (used to cross-check the spectral one).
    pub fn pade(rate: &RateMatrix) -> Self {
        Self { q: rate.q().clone(), route: Route::Pade }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self.route, Route::Spectral { .. })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    /// `exp(βQ)`; `β` must be non-negative and finite.
    pub fn transition(&self, beta: f64) -> Result<DMatrix<f64>, Error> {
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("branch length {beta} must be non-negative")));
        }
        Ok(self.transition_unchecked(beta))
    }

    pub(crate) fn transition_unchecked(&self, beta: f64) -> DMatrix<f64> {
        match &self.route {
            Route::Spectral { lambda, v, v_inv } => {
                let mut p = v.clone();
                for (k, mut col) in p.column_iter_mut().enumerate() {
                    col *= (beta * lambda[k]).exp();
                }
                let mut p = p * v_inv;
                // Clean round-off: probabilities are non-negative.
                p.apply(|x| *x = x.max(0.0));
                p
            }
            Route::Pade => (&self.q * beta).exp(),
        }
    }

    /// Given `G = ∂f/∂P` at `P = exp(βQ)`, returns `(∂f/∂Q, ∂f/∂β)`.
    pub fn backward(&self, beta: f64, p: &DMatrix<f64>, g: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let g_beta = (&self.q * p).component_mul(g).sum();
        let g_q = match &self.route {
            Route::Spectral { lambda, v, v_inv } => {
                // Adjoint Fréchet derivative: V^{-T} [(V^T G V^{-T}) ∘ Φ] V^T.
                let a = lambda.len();
                let x: Vec<f64> = lambda.iter().map(|l| beta * l).collect();
                let phi = DMatrix::from_fn(a, a, |i, j| divided_difference_exp(x[i], x[j]));
                let inner = (v.transpose() * g * v_inv.transpose()).component_mul(&phi);
                v_inv.transpose() * inner * v.transpose() * beta
            }
            Route::Pade => {
                // exp([[X^T, G], [0, X^T]]) carries L*(G) in its upper-right block.
                let a = self.q.nrows();
                let xt = self.q.transpose() * beta;
                let mut block = DMatrix::zeros(2 * a, 2 * a);
                block.view_mut((0, 0), (a, a)).copy_from(&xt);
                block.view_mut((a, a), (a, a)).copy_from(&xt);
                block.view_mut((0, a), (a, a)).copy_from(g);
                let e = block.exp();
                e.view((0, a), (a, a)).into_owned() * beta
            }
        };
        (g_q, g_beta)
    }
}

/// `(e^a - e^b) / (a - b)`, with the derivative on the diagonal.
fn divided_difference_exp(a: f64, b: f64) -> f64 {
    let d = a - b;
    if d.abs() < 1e-8 * (1.0 + a.abs().max(b.abs())) {
        let m = 0.5 * (a + b);
        m.exp() * (1.0 + d * d / 24.0)
    } else {
        (a.exp() - b.exp()) / d
    }
}
