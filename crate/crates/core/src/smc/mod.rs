//! Combinatorial sequential Monte Carlo over embedded forests.
//!
//! Every particle starts from the forest of leaves and at each rank merges
//! two roots under a new parent whose position in the disk is drawn from a
//! wrapped normal centred on the geodesic point nearest the origin. Branch
//! lengths are hyperbolic distances from the parent to its children.
//!
//! Random numbers come from one ChaCha8 stream per `(rank, particle)`, so
//! results do not depend on thread scheduling.

pub mod csmc;
pub mod ncsmc;
pub mod proposal;
pub mod resample;
pub mod state;
mod system;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::{Alignment, SitePatterns};
use crate::error::Error;
use crate::evo::pruning::{root_log_likelihood, Partial};
use crate::evo::{BranchPrior, Decoder, RateMatrix, RateParams};
use crate::geometry::DiskPoint;
use crate::real::Real;

pub use csmc::run_csmc;
pub use ncsmc::run_ncsmc;
pub use proposal::branch_jacobian_log_det;
pub use resample::Resampling;
pub use state::{tree_topology_key, unrooted_splits, Node, PartialState, ProposalRecord, RateContext, TopologyKey};
pub use system::{Lookahead, ParticleSystem};

/// An alignment prepared for sampling: taxa sorted by name, sites
/// compressed to patterns.
#[derive(Clone, Debug)]
pub struct Problem {
    pub taxa: Vec<String>,
    /// `order[i]` is the alignment row of taxon `i`.
    pub order: Vec<usize>,
    pub patterns: SitePatterns,
}

impl Problem {
    pub fn new(aln: &Alignment) -> Self {
        let mut order: Vec<usize> = (0..aln.n_taxa()).collect();
        order.sort_by(|&a, &b| aln.taxa()[a].cmp(&aln.taxa()[b]));
        let sorted = aln.select(&order);
        Self { taxa: sorted.taxa().to_vec(), order, patterns: sorted.patterns() }
    }

    pub fn n_taxa(&self) -> usize {
        self.taxa.len()
    }

    pub fn n_states(&self) -> usize {
        self.patterns.n_states
    }

    /// Reorders per-alignment-row values into taxon order.
    pub fn from_alignment_order<T: Clone>(&self, values: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| values[i].clone()).collect()
    }

    /// Inverse of [`Problem::from_alignment_order`].
    pub fn to_alignment_order<T: Clone>(&self, values: &[T]) -> Vec<T> {
        let mut out: Vec<Option<T>> = vec![None; values.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = Some(values[k].clone());
        }
        out.into_iter().map(|v| v.expect("order is a permutation")).collect()
    }
}

/// Where substitution rates come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// One rate matrix for every branch.
    Global(RateParams),
    /// Rates decoded from each parent's embedding; roots use their own.
    Decoder(Decoder),
}

impl RateModel {
    pub fn n_states(&self) -> usize {
        match self {
            RateModel::Global(p) => p.n_states(),
            RateModel::Decoder(d) => d.n_states,
        }
    }
}

/// Everything the sampler's output depends on besides the data and seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Leaf positions in taxon order.
    pub embeddings: Vec<DiskPoint>,
    /// Pre-softplus standard deviations of the proposal's tangent draw.
    pub proposal: [f64; 2],
    pub rates: RateModel,
    pub prior: BranchPrior,
}

/// Pre-activation giving proposal standard deviation 0.2, i.e. `Σ = 0.04 I`.
pub const DEFAULT_PROPOSAL_RAW: f64 = -1.507_772_168_055_659;

impl ModelParams {
    /// Jukes–Cantor rates and the default proposal scale.
    pub fn new(embeddings: Vec<DiskPoint>, n_states: usize) -> Self {
        Self {
            embeddings,
            proposal: [DEFAULT_PROPOSAL_RAW; 2],
            rates: RateModel::Global(RateParams::zeros(n_states)),
            prior: BranchPrior::default(),
        }
    }

    /// Proposal standard deviations `softplus(raw)`.
    pub fn proposal_scale(&self) -> [f64; 2] {
        [self.proposal[0].softplus(), self.proposal[1].softplus()]
    }

    pub fn validate(&self, problem: &Problem) -> Result<(), Error> {
        if self.embeddings.len() != problem.n_taxa() {
            return Err(Error::InvalidParameter(format!(
                "{} embeddings for {} taxa",
                self.embeddings.len(),
                problem.n_taxa()
            )));
        }
        if self.rates.n_states() != problem.n_states() {
            return Err(Error::InvalidParameter("rate model and alignment alphabet sizes differ".into()));
        }
        let finite = self.embeddings.iter().all(|p| p.x.is_finite() && p.y.is_finite() && p.norm() < 1.0)
            && self.proposal.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Numeric("non-finite or out-of-disk parameter".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SmcConfig {
    /// Number of particles `K`.
    pub particles: usize,
    /// Parent draws per candidate pair in the nested sampler (`M`).
    pub draws: usize,
    pub seed: u64,
    pub resampling: Resampling,
    /// Resample only when the effective sample size falls below this
    /// fraction of `K`; `None` resamples at every rank.
    pub ess_threshold: Option<f64>,
    /// Place parents at the proposal mean instead of sampling them.
    pub deterministic: bool,
    /// Reuse subtree computations keyed by topology (deterministic mode only).
    pub memoize: bool,
}

impl Default for SmcConfig {
    fn default() -> Self {
        Self {
            particles: 16,
            draws: 1,
            seed: 0,
            resampling: Resampling::Multinomial,
            ess_threshold: None,
            deterministic: false,
            memoize: false,
        }
    }
}

impl SmcConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.particles == 0 || self.draws == 0 {
            return Err(Error::InvalidParameter("particles and draws must be at least 1".into()));
        }
        if let Some(t) = self.ess_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!("ess threshold {t} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-run constants shared by all particles.
pub(crate) struct Context<'a> {
    pub problem: &'a Problem,
    pub params: &'a ModelParams,
    pub scale: [f64; 2],
    pub global: Option<Arc<RateContext>>,
    pub deterministic: bool,
}

impl<'a> Context<'a> {
    pub fn new(problem: &'a Problem, params: &'a ModelParams, deterministic: bool) -> Self {
        let global = match &params.rates {
            RateModel::Global(p) => Some(Arc::new(RateContext::new(p.rate_matrix()))),
            RateModel::Decoder(_) => None,
        };
        Self { problem, params, scale: params.proposal_scale(), global, deterministic }
    }

    /// Rate model in force at a node embedded at `p`.
    pub fn rate_at(&self, p: &DiskPoint) -> Arc<RateContext> {
        match (&self.global, &self.params.rates) {
            (Some(g), _) => g.clone(),
            (None, RateModel::Decoder(d)) => Arc::new(RateContext::new(d.decode(p))),
            (None, RateModel::Global(_)) => unreachable!("global context is built up front"),
        }
    }

    pub fn leaves(&self) -> Vec<Arc<Node>> {
        let pat = &self.problem.patterns;
        (0..self.problem.n_taxa())
            .map(|t| {
                let emb = self.params.embeddings[t];
                let rate = self.rate_at(&emb);
                let partial = Partial::leaf(pat.leaves[t].clone(), pat.n_states);
                let log_lik = root_log_likelihood(&partial, rate.eta(), &pat.weights);
                Arc::new(Node {
                    id: t,
                    taxon: Some(t),
                    min_taxon: t,
                    n_leaves: 1,
                    embedding: emb,
                    children: Vec::new(),
                    partial: Arc::new(partial),
                    log_lik,
                    log_prior: 0.0,
                    key: state::leaf_key(t),
                    rate,
                    proposal: None,
                })
            })
            .collect()
    }
}

/// Random stream for one particle at one rank.
pub(crate) fn stream(seed: u64, rank: usize, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((rank as u64) << 32) | particle as u64);
    rng
}

/// Node ids: leaves take `0..N`, the node made by particle `k` at rank `r`
/// takes `N + (r-1)K + k`.
pub(crate) fn node_id(n_taxa: usize, particles: usize, rank: usize, k: usize) -> usize {
    n_taxa + (rank - 1) * particles + k
}

/// `ln C(n, 2)`.
pub(crate) fn ln_pairs(n: usize) -> f64 {
    ((n * (n - 1) / 2) as f64).ln()
}

/// Unordered pairs `(i, j)`, `i < j`, in lexicographic order.
pub(crate) fn pair_at(n: usize, mut idx: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("pair index out of range")
}

/// Rate matrix for a standalone scoring call.
pub fn rate_matrix_of(rates: &RateModel, at: &DiskPoint) -> RateMatrix {
    match rates {
        RateModel::Global(p) => p.rate_matrix(),
        RateModel::Decoder(d) => d.decode(at),
    }
}

#[cfg(test)]
mod tests;
