//! Nested combinatorial SMC: every live pair is scored with `M` parent
//! draws, one candidate is kept with probability proportional to its
//! potential, and the particle weight is the mean potential.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::proposal::{extend, Memo};
use super::resample::{categorical, log_sum_exp};
use super::state::PartialState;
use super::system::{run, Extend, Lookahead, StepOut};
use super::{pair_at, Context, ModelParams, ParticleSystem, Problem, SmcConfig};
use crate::error::Error;

pub(crate) struct Ncsmc {
    pub draws: usize,
}

impl Extend for Ncsmc {
    fn extend(&self, ctx: &Context, state: &PartialState, id: usize, rng: &mut ChaCha8Rng, memo: Option<&Memo>) -> StepOut {
        let rho = state.n_roots();
        let n_pairs = rho * (rho - 1) / 2;
        let m = self.draws;
        let u: f64 = rng.random();
        let mut eps = Vec::with_capacity(n_pairs * m);
        for _ in 0..n_pairs * m {
            let e = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            eps.push((!ctx.deterministic).then_some(e));
        }
        let mut potentials = Vec::with_capacity(n_pairs * m);
        let mut nodes = Vec::with_capacity(n_pairs * m);
        for j in 0..n_pairs {
            let pair = pair_at(rho, j);
            for d in 0..m {
                if ctx.deterministic && d > 0 {
                    // Every draw of a deterministic candidate is the same.
                    potentials.push(potentials[j * m]);
                    nodes.push(None);
                    continue;
                }
                let (node, w) = extend(ctx, state, pair, eps[j * m + d], id, memo);
                potentials.push(w);
                nodes.push(Some(node));
            }
        }
        assert_eq!(potentials.len(), n_pairs * m);
        let log_w = log_sum_exp(&potentials) - ((n_pairs * m) as f64).ln();
        // With no finite potential the weight is -inf and the driver aborts;
        // any candidate serves as the placeholder.
        let selected = categorical(&potentials, u).unwrap_or(0);
        let slot = if ctx.deterministic { selected - selected % m } else { selected };
        let node = nodes[slot].clone().expect("candidate node");
        StepOut { node, log_w, lookahead: Some(Lookahead { potentials, eps, draws: m, selected }) }
    }
}

/// Runs `N - 1` ranks of resample, look ahead and select.
pub fn run_ncsmc(problem: &Problem, params: &ModelParams, config: &SmcConfig) -> Result<ParticleSystem, Error> {
    run(problem, params, config, &Ncsmc { draws: config.draws })
}
