//! Combinatorial SMC: one uniformly chosen pair per particle per rank.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::proposal::{extend, Memo};
use super::state::PartialState;
use super::system::{run, Extend, StepOut};
use super::{pair_at, Context, ModelParams, ParticleSystem, Problem, SmcConfig};
use crate::error::Error;

pub(crate) struct Csmc;

impl Extend for Csmc {
    fn extend(&self, ctx: &Context, state: &PartialState, id: usize, rng: &mut ChaCha8Rng, memo: Option<&Memo>) -> StepOut {
        let rho = state.n_roots();
        let n_pairs = rho * (rho - 1) / 2;
        let u: f64 = rng.random();
        let pair = pair_at(rho, ((u * n_pairs as f64) as usize).min(n_pairs - 1));
        let eps = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let eps = (!ctx.deterministic).then_some(eps);
        let (node, log_w) = extend(ctx, state, pair, eps, id, memo);
        StepOut { node, log_w, lookahead: None }
    }
}

/// Runs `N - 1` ranks of resample, propose and weight.
pub fn run_csmc(problem: &Problem, params: &ModelParams, config: &SmcConfig) -> Result<ParticleSystem, Error> {
    run(problem, params, config, &Csmc)
}
