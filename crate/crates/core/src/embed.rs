//! Stress embedding of sequences in the disk.
//!
//! Minimizes `Σ_{i<j} (d(z_i, z_j) - t_ij)^2` over leaf positions with
//! Riemannian gradient descent: the Euclidean gradient is rescaled by the
//! inverse metric `(1-|z|^2)^2/4` and applied through the exponential map.
//! Steps are halved until the loss decreases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{hamming_matrix, Alignment, HammingMode};
use crate::error::Error;
use crate::geometry::{distance_grad, exp_map, hyp_distance, DiskPoint, TangentVector};

const WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedConfig {
    /// Multiplies Hamming proportions to give target hyperbolic distances.
    pub scale: f64,
    pub hamming: HammingMode,
    pub max_iters: usize,
    /// Stop once the mean relative loss improvement per accepted step, over
    /// the last few steps, falls below this.
    pub tol: f64,
    /// Initial points are uniform in the disk of this Euclidean radius.
    pub init_radius: f64,
    pub seed: u64,
    pub initial_step: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self { scale: 4.0, hamming: HammingMode::Proportion, max_iters: 5000, tol: 1e-6, init_radius: 0.2, seed: 0, initial_step: 0.1 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub points: Vec<DiskPoint>,
    pub loss_history: Vec<f64>,
}

pub fn stress_loss(points: &[DiskPoint], target: &[Vec<f64>]) -> f64 {
    let mut loss = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            loss += (hyp_distance(&points[i], &points[j]) - target[i][j]).powi(2);
        }
    }
    loss
}

/// Euclidean gradient of [`stress_loss`] with respect to every point.
pub fn stress_grad(points: &[DiskPoint], target: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = points.len();
    let mut g = vec![[0.0; 2]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = 2.0 * (hyp_distance(&points[i], &points[j]) - target[i][j]);
            let gi = distance_grad(&points[i], &points[j]);
            let gj = distance_grad(&points[j], &points[i]);
            g[i][0] += r * gi[0];
            g[i][1] += r * gi[1];
            g[j][0] += r * gj[0];
            g[j][1] += r * gj[1];
        }
    }
    g
}

/// Uniform points in the disk of radius `radius`.
pub fn initial_points(n: usize, radius: f64, seed: u64) -> Vec<DiskPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = radius * rng.random::<f64>().sqrt();
            let a = rng.random::<f64>() * std::f64::consts::TAU;
            DiskPoint::new(r * a.cos(), r * a.sin())
        })
        .collect()
}

/// Target distances from an alignment.
pub fn target_distances(aln: &Alignment, config: &EmbedConfig) -> Vec<Vec<f64>> {
    let mut t = hamming_matrix(aln, config.hamming);
    for row in &mut t {
        for v in row.iter_mut() {
            *v *= config.scale;
        }
    }
    t
}

pub fn embed(aln: &Alignment, config: &EmbedConfig) -> Result<EmbeddingSet, Error> {
    let target = target_distances(aln, config);
    let init = initial_points(aln.n_taxa(), config.init_radius, config.seed);
    embed_from(&target, init, config)
}

/// Descent from given starting points.
pub fn embed_from(target: &[Vec<f64>], init: Vec<DiskPoint>, config: &EmbedConfig) -> Result<EmbeddingSet, Error> {
    let n = init.len();
    if n < 2 {
        return Err(Error::InvalidParameter("embedding needs at least two points".into()));
    }
    if target.len() != n || target.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidParameter("target matrix does not match the number of points".into()));
    }
    let mut points = init;
    let mut loss = stress_loss(&points, target);
    let mut history = vec![loss];
    let mut step = config.initial_step;
    for _ in 0..config.max_iters {
        let g = stress_grad(&points, target);
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<DiskPoint> = points
                .iter()
                .zip(&g)
                .map(|(z, gz)| {
                    let k = -step * (1.0 - z.norm2()).powi(2) / 4.0;
                    exp_map(z, &TangentVector::new(k * gz[0], k * gz[1]))
                })
                .collect();
            let l = stress_loss(&trial, target);
            if l.is_finite() && l < loss {
                accepted = Some((trial, l));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, l)) = accepted else { break };
        points = trial;
        loss = l;
        history.push(loss);
        step *= 1.5;
        // Average relative improvement over the last few accepted steps.
        let w = WINDOW.min(history.len() - 1);
        let past = history[history.len() - 1 - w];
        if loss == 0.0 || (w == WINDOW && (past - loss) / (past * w as f64) < config.tol) {
            break;
        }
    }
    Ok(EmbeddingSet { points, loss_history: history })
}
