//! Parent proposals and incremental weights.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::state::{merge_key, Node, PartialState, ProposalRecord, RateContext};
use super::{ln_pairs, Context};
use crate::evo::pruning::{combine, root_log_likelihood, row_major, Partial};
use crate::evo::MIN_BRANCH;
use crate::geometry::{closest_point_to_origin, distance_grad, geodesic_between, hyp_distance, DiskPoint, TangentVector};
use crate::real::Real;
use crate::wrapped_normal::WrappedNormalParams;

/// Smallest `|det|` allowed into the log.
pub const MIN_JACOBIAN: f64 = 1e-12;

/// `log |det ∂(β_L, β_R)/∂parent|`, clamped below at [`MIN_JACOBIAN`].
pub fn branch_jacobian_log_det<T: Real>(parent: &DiskPoint<T>, left: &DiskPoint<T>, right: &DiskPoint<T>) -> T {
    let gl = distance_grad(parent, left);
    let gr = distance_grad(parent, right);
    let det = (gl[0] * gr[1] - gl[1] * gr[0]).abs();
    if det.val() < MIN_JACOBIAN {
        T::cst(MIN_JACOBIAN.ln())
    } else {
        det.ln()
    }
}

/// The differentiable part of one merge, from the two child embeddings and
/// proposal scales to everything the weight needs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Local<T> {
    pub mean: DiskPoint<T>,
    pub parent: DiskPoint<T>,
    pub tangent: TangentVector<T>,
    pub beta: [T; 2],
    pub log_q: T,
    pub log_jac: T,
}

pub(crate) fn local_map<T: Real>(left: DiskPoint<T>, right: DiskPoint<T>, scale: [T; 2], eps: Option<[f64; 2]>) -> Local<T> {
    let mean = closest_point_to_origin(&geodesic_between(&left, &right));
    match eps {
        None => Local {
            mean,
            parent: mean,
            tangent: TangentVector::zero(),
            beta: [hyp_distance(&left, &mean), hyp_distance(&right, &mean)],
            log_q: T::zero(),
            log_jac: T::zero(),
        },
        Some(e) => {
            let wn = WrappedNormalParams::diagonal(mean, scale[0], scale[1]);
            let (parent, tangent) = wn.push_forward([T::cst(e[0]), T::cst(e[1])]);
            Local {
                mean,
                parent,
                tangent,
                beta: [hyp_distance(&left, &parent), hyp_distance(&right, &parent)],
                log_q: wn.log_density_from_tangent(&tangent),
                log_jac: branch_jacobian_log_det(&parent, &left, &right),
            }
        }
    }
}

/// Transition matrices (row-major) for the two branches below a parent.
pub(crate) fn branch_matrices(rate: &RateContext, beta: [f64; 2]) -> [Vec<f64>; 2] {
    beta.map(|b| row_major(&rate.expm.transition_unchecked(b.max(MIN_BRANCH))))
}

/// Values of a merge that depend only on the subtree topology when parents
/// are placed deterministically.
#[derive(Clone)]
pub(crate) struct MemoEntry {
    local: Local<f64>,
    partial: Arc<Partial>,
    log_lik: f64,
    rate: Arc<RateContext>,
}

pub(crate) type Memo = Mutex<HashMap<Arc<[u32]>, MemoEntry>>;

/// Merges roots `i < j` of `state` into node `id` and returns it with the
/// incremental log weight.
pub(crate) fn extend(
    ctx: &Context,
    state: &PartialState,
    (i, j): (usize, usize),
    eps: Option<[f64; 2]>,
    id: usize,
    memo: Option<&Memo>,
) -> (Arc<Node>, f64) {
    let (l, r) = (&state.roots[i], &state.roots[j]);
    let key = merge_key(&l.key, &r.key);
    let cached = memo.and_then(|m| m.lock().expect("memo lock").get(&key).cloned());
    let entry = match cached {
        Some(e) => e,
        None => {
            let scale = ctx.scale;
            let local = local_map(l.embedding, r.embedding, scale, eps);
            let rate = ctx.rate_at(&local.parent);
            let [pl, pr] = branch_matrices(&rate, local.beta);
            let partial = combine(&[(&pl, &l.partial), (&pr, &r.partial)]);
            let log_lik = root_log_likelihood(&partial, rate.eta(), &ctx.problem.patterns.weights);
            let e = MemoEntry { local, partial: Arc::new(partial), log_lik, rate };
            if let Some(m) = memo {
                m.lock().expect("memo lock").insert(key.clone(), e.clone());
            }
            e
        }
    };
    let prior = &ctx.params.prior;
    let local = entry.local;
    let log_q_topology = -ln_pairs(state.n_roots());
    let branch_prior = prior.log_density(local.beta[0].max(MIN_BRANCH)) + prior.log_density(local.beta[1].max(MIN_BRANCH));
    let log_w = entry.log_lik - l.log_lik - r.log_lik + branch_prior - log_q_topology - local.log_q + local.log_jac;
    let node = Node {
        id,
        taxon: None,
        min_taxon: l.min_taxon.min(r.min_taxon),
        n_leaves: l.n_leaves + r.n_leaves,
        embedding: local.parent,
        children: vec![(l.clone(), local.beta[0]), (r.clone(), local.beta[1])],
        partial: entry.partial,
        log_lik: entry.log_lik,
        log_prior: l.log_prior + r.log_prior + branch_prior,
        key,
        rate: entry.rate,
        proposal: Some(ProposalRecord {
            pair: (i, j),
            mean: local.mean,
            parent: local.parent,
            eps,
            tangent: local.tangent,
            branch: local.beta,
            log_q_topology,
            log_q_embed: local.log_q,
            log_jacobian: local.log_jac,
        }),
    };
    (Arc::new(node), log_w)
}
