use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::proposal::Memo;
use super::resample::{ess, log_sum_exp, resample};
use super::state::{Node, PartialState};
use super::{node_id, stream, Context, ModelParams, Problem, SmcConfig};
use crate::error::Error;

/// Candidates scored by the nested sampler for one particle at one rank.
#[derive(Clone, Debug)]
pub struct Lookahead {
    /// Flattened `pair * draws + draw`.
    pub potentials: Vec<f64>,
    /// Standard normal pair behind each candidate; `None` in deterministic mode.
    pub eps: Vec<Option<[f64; 2]>>,
    pub draws: usize,
    pub selected: usize,
}

/// Everything one rank of the sampler produced.
#[derive(Clone, Debug)]
pub struct RankRecord {
    pub resampled: bool,
    pub ancestors: Vec<usize>,
    /// Normalized log weights carried into this rank (`-ln K` after resampling).
    pub log_carry: Vec<f64>,
    /// Incremental log weights.
    pub log_weights: Vec<f64>,
    /// `log Σ_k exp(carry_k + w_k)`: this rank's factor of the estimate.
    pub log_z_term: f64,
    pub ess: f64,
    /// The state each particle extended.
    pub parents: Vec<PartialState>,
    /// The node each particle created.
    pub nodes: Vec<Arc<Node>>,
    pub lookahead: Vec<Option<Lookahead>>,
}

#[derive(Clone, Debug)]
pub struct ParticleSystem {
    pub particles: usize,
    pub leaves: Vec<Arc<Node>>,
    /// Rank-0 target: the leaves' marginal likelihoods.
    pub leaf_log_lik: f64,
    pub ranks: Vec<RankRecord>,
    pub states: Vec<PartialState>,
    /// Normalized log weights after the last rank.
    pub final_log_weights: Vec<f64>,
    pub log_z: f64,
}

impl ParticleSystem {
    /// Index of the particle with the largest final weight (first on ties).
    pub fn best(&self) -> usize {
        let mut best = 0;
        for (k, w) in self.final_log_weights.iter().enumerate() {
            if *w > self.final_log_weights[best] {
                best = k;
            }
        }
        best
    }

    pub fn ess(&self) -> Vec<f64> {
        self.ranks.iter().map(|r| r.ess).collect()
    }
}

pub(crate) struct StepOut {
    pub node: Arc<Node>,
    pub log_w: f64,
    pub lookahead: Option<Lookahead>,
}

/// One particle's extension at one rank. The resampling uniform has already
/// been drawn from `rng`.
pub(crate) trait Extend: Sync {
    fn extend(&self, ctx: &Context, state: &PartialState, id: usize, rng: &mut ChaCha8Rng, memo: Option<&Memo>) -> StepOut;
}

pub(crate) fn run(problem: &Problem, params: &ModelParams, cfg: &SmcConfig, step: &dyn Extend) -> Result<ParticleSystem, Error> {
    cfg.validate()?;
    params.validate(problem)?;
    let n = problem.n_taxa();
    let k = cfg.particles;
    let ln_k = (k as f64).ln();
    let ctx = Context::new(problem, params, cfg.deterministic);
    let leaves = ctx.leaves();
    let leaf_log_lik: f64 = leaves.iter().map(|l| l.log_lik).sum();
    let memo: Option<Memo> = (cfg.deterministic && cfg.memoize).then(|| Mutex::new(HashMap::new()));
    let mut states = vec![PartialState { roots: leaves.clone() }; k];
    let mut carry = vec![-ln_k; k];
    let mut ranks = Vec::with_capacity(n.saturating_sub(1));
    let mut log_z = leaf_log_lik;
    for rank in 1..n {
        let mut rngs: Vec<ChaCha8Rng> = (0..k).map(|p| stream(cfg.seed, rank, p)).collect();
        let u_anc: Vec<f64> = rngs.iter_mut().map(|g| g.random()).collect();
        let resampled = rank > 1
            && match cfg.ess_threshold {
                None => true,
                Some(t) => ess(&carry) < t * k as f64,
            };
        let ancestors = if resampled {
            resample(&carry, &u_anc, cfg.resampling).map_err(|e| Error::Numeric(format!("rank {rank}: {e}")))?
        } else {
            (0..k).collect()
        };
        let log_carry = if resampled { vec![-ln_k; k] } else { carry.clone() };
        let parents: Vec<PartialState> = ancestors.iter().map(|&a| states[a].clone()).collect();
        let outs: Vec<StepOut> = parents
            .par_iter()
            .zip(rngs.par_iter_mut())
            .enumerate()
            .map(|(p, (s, g))| step.extend(&ctx, s, node_id(n, k, rank, p), g, memo.as_ref()))
            .collect();
        let log_weights: Vec<f64> = outs.iter().map(|o| o.log_w).collect();
        if let Some(p) = log_weights.iter().position(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Numeric(format!("rank {rank}: particle {p} has weight {}", log_weights[p])));
        }
        let x: Vec<f64> = log_carry.iter().zip(&log_weights).map(|(c, w)| c + w).collect();
        let term = log_sum_exp(&x);
        if !term.is_finite() {
            return Err(Error::Numeric(format!("rank {rank}: all particle weights are zero")));
        }
        carry = x.iter().map(|v| v - term).collect();
        log_z += term;
        states = parents.iter().zip(&outs).map(|(s, o)| {
            let (i, j) = o.node.proposal.as_ref().expect("internal node").pair;
            s.merged(i, j, o.node.clone())
        }).collect();
        debug_assert!(states.iter().all(|s| s.n_roots() == n - rank));
        let (nodes, lookahead) = outs.into_iter().map(|o| (o.node, o.lookahead)).unzip();
        ranks.push(RankRecord { resampled, ancestors, log_carry, log_weights, log_z_term: term, ess: ess(&x), parents, nodes, lookahead });
    }
    Ok(ParticleSystem { particles: k, leaves, leaf_log_lik, ranks, states, final_log_weights: carry, log_z })
}
