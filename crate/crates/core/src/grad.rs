//! Pathwise gradient of `log Ẑ`.
//!
//! All random numbers are held fixed: tangent draws enter through the
//! reparameterized proposal, while resampling, pair choices and nested
//! selections are treated as constants (no score-function terms). The
//! reverse sweep visits ranks from last to first. At each rank the weight
//! adjoints are seeded into the nodes created there, then those nodes pass
//! adjoints to their children through pruning, the matrix exponential and
//! the local geometry. Candidates the nested sampler scored but did not
//! keep are rebuilt and swept on the spot.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::evo::pruning::{combine_backward, root_backward, row_major};
use crate::evo::{Decoder, MIN_BRANCH};
use crate::geometry::DiskPoint;
use crate::real::Dual;
use crate::smc::proposal::{extend, local_map};
use crate::smc::resample::log_sum_exp;
use crate::smc::state::Node;
use crate::smc::{pair_at, run_csmc, run_ncsmc, Context, ModelParams, ParticleSystem, Problem, RateModel, SmcConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    #[default]
    Csmc,
    Ncsmc,
}

pub fn run_sampler(problem: &Problem, params: &ModelParams, config: &SmcConfig, sampler: Sampler) -> Result<ParticleSystem, Error> {
    match sampler {
        Sampler::Csmc => run_csmc(problem, params, config),
        Sampler::Ncsmc => run_ncsmc(problem, params, config),
    }
}

/// Gradient with the layout of [`ModelParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrad {
    pub embeddings: Vec<[f64; 2]>,
    pub proposal: [f64; 2],
    pub rates: Vec<f64>,
}

impl ParamGrad {
    /// Same order as [`flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.embeddings.iter().flatten().copied().collect();
        out.extend_from_slice(&self.proposal);
        out.extend_from_slice(&self.rates);
        out
    }

    pub fn norm(&self) -> f64 {
        self.flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Embeddings, proposal pre-activations, then rate parameters.
pub fn flat_params(p: &ModelParams) -> Vec<f64> {
    let mut out: Vec<f64> = p.embeddings.iter().flat_map(|z| [z.x, z.y]).collect();
    out.extend_from_slice(&p.proposal);
    match &p.rates {
        RateModel::Global(r) => {
            out.extend_from_slice(&r.logits);
            out.extend_from_slice(&r.pre);
        }
        RateModel::Decoder(d) => out.extend(d.params()),
    }
    out
}

/// Inverse of [`flat_params`]; embeddings are pulled back inside the disk.
pub fn set_flat_params(p: &mut ModelParams, flat: &[f64]) {
    let n = p.embeddings.len();
    for (i, z) in p.embeddings.iter_mut().enumerate() {
        *z = DiskPoint::new(flat[2 * i], flat[2 * i + 1]);
    }
    p.proposal = [flat[2 * n], flat[2 * n + 1]];
    let rest = &flat[2 * n + 2..];
    match &mut p.rates {
        RateModel::Global(r) => {
            let a = r.logits.len();
            r.logits.copy_from_slice(&rest[..a]);
            r.pre.copy_from_slice(&rest[a..2 * a]);
        }
        RateModel::Decoder(d) => d.set_params(rest),
    }
}

#[derive(Default)]
struct Adj {
    /// Coefficient of the node's own root log-likelihood.
    coef: f64,
    /// Scale-free adjoint of the node's partial.
    partial: Option<Vec<f64>>,
    emb: [f64; 2],
    beta: [f64; 2],
    log_q: f64,
    log_jac: f64,
}

struct Sweep<'a> {
    ctx: &'a Context<'a>,
    adj: Vec<Adj>,
    g_q: DMatrix<f64>,
    g_s: Vec<f64>,
    dec: Option<Decoder>,
    g_scale: [f64; 2],
}

impl Sweep<'_> {
    /// Adjoint `w` of an incremental log weight produced by creating `node`.
    fn seed(&mut self, own: &mut Adj, node: &Node, w: f64) {
        if w == 0.0 {
            return;
        }
        own.coef += w;
        let rec = node.proposal.as_ref().expect("internal node");
        let lambda = self.ctx.params.prior.rate;
        for (b, (child, beta)) in node.children.iter().enumerate() {
            self.adj[child.id].coef -= w;
            if *beta >= MIN_BRANCH {
                own.beta[b] -= w * lambda;
            }
        }
        if rec.eps.is_some() {
            own.log_q -= w;
            own.log_jac += w;
        }
    }

    fn rate_backward(&mut self, node: &Node, g_q: &DMatrix<f64>, g_eta: &[f64], emb: &mut [f64; 2]) {
        match &mut self.dec {
            None => {
                self.g_q += g_q;
                for (a, b) in self.g_s.iter_mut().zip(g_eta) {
                    *a += b;
                }
            }
            Some(grad) => {
                let RateModel::Decoder(d) = &self.ctx.params.rates else { unreachable!() };
                let g = d.backward(&node.embedding, g_q, g_eta, grad);
                emb[0] += g[0];
                emb[1] += g[1];
            }
        }
    }

    /// Sends a finished node's adjoint to its rate model and its children.
    fn process(&mut self, node: &Node, mut own: Adj) {
        let a = node.partial.n_states;
        let weights = &self.ctx.problem.patterns.weights;
        let mut g_eta = vec![0.0; a];
        let mut g_q = DMatrix::zeros(a, a);
        if own.coef != 0.0 {
            let g = own.partial.get_or_insert_with(|| vec![0.0; node.partial.values.len()]);
            root_backward(&node.partial, node.rate.eta(), weights, own.coef, g, &mut g_eta);
        }
        if node.is_leaf() {
            self.rate_backward(node, &g_q, &g_eta, &mut own.emb);
            let t = node.taxon.expect("leaf");
            self.adj[t].emb = own.emb;
            return;
        }
        let (l, r) = (&node.children[0], &node.children[1]);
        if let Some(g_node) = &own.partial {
            let mats: Vec<DMatrix<f64>> = [l.1, r.1].iter().map(|b| node.rate.expm.transition_unchecked(b.max(MIN_BRANCH))).collect();
            let rm: Vec<Vec<f64>> = mats.iter().map(row_major).collect();
            let mut gl = self.adj[l.0.id].partial.take().unwrap_or_else(|| vec![0.0; g_node.len()]);
            let mut gr = self.adj[r.0.id].partial.take().unwrap_or_else(|| vec![0.0; g_node.len()]);
            let g_p = combine_backward(&[(&rm[0], &l.0.partial), (&rm[1], &r.0.partial)], g_node, &mut [&mut gl, &mut gr]);
            // Leaf partials are data; their adjoints are dropped.
            if !l.0.is_leaf() {
                self.adj[l.0.id].partial = Some(gl);
            }
            if !r.0.is_leaf() {
                self.adj[r.0.id].partial = Some(gr);
            }
            for (b, (beta, gp)) in [l.1, r.1].iter().zip(&g_p).enumerate() {
                let g = DMatrix::from_row_slice(a, a, gp);
                let (gq, gb) = node.rate.expm.backward(beta.max(MIN_BRANCH), &mats[b], &g);
                g_q += gq;
                if *beta >= MIN_BRANCH {
                    own.beta[b] += gb;
                }
            }
        }
        self.rate_backward(node, &g_q, &g_eta, &mut own.emb);
        let outs = [own.emb[0], own.emb[1], own.beta[0], own.beta[1], own.log_q, own.log_jac];
        if outs.iter().all(|v| *v == 0.0) {
            return;
        }
        let rec = node.proposal.as_ref().expect("internal node");
        let (zl, zr) = (l.0.embedding, r.0.embedding);
        let s = self.ctx.scale;
        let v = [zl.x, zl.y, zr.x, zr.y, s[0], s[1]];
        let d: [Dual<6>; 6] = std::array::from_fn(|i| Dual::var(v[i], i));
        let loc = local_map(DiskPoint { x: d[0], y: d[1] }, DiskPoint { x: d[2], y: d[3] }, [d[4], d[5]], rec.eps);
        let vals = [loc.parent.x, loc.parent.y, loc.beta[0], loc.beta[1], loc.log_q, loc.log_jac];
        let mut g_in = [0.0; 6];
        for (g, o) in outs.iter().zip(&vals) {
            for i in 0..6 {
                g_in[i] += g * o.d[i];
            }
        }
        self.adj[l.0.id].emb[0] += g_in[0];
        self.adj[l.0.id].emb[1] += g_in[1];
        self.adj[r.0.id].emb[0] += g_in[2];
        self.adj[r.0.id].emb[1] += g_in[3];
        self.g_scale[0] += g_in[4];
        self.g_scale[1] += g_in[5];
    }
}

/// `log Ẑ` of one run and its pathwise gradient.
pub fn gradient(problem: &Problem, params: &ModelParams, config: &SmcConfig, sampler: Sampler) -> Result<(ParticleSystem, ParamGrad), Error> {
    let sys = run_sampler(problem, params, config, sampler)?;
    let grad = backward(problem, params, config, &sys)?;
    Ok((sys, grad))
}

/// Reverse sweep over a finished run.
pub fn backward(problem: &Problem, params: &ModelParams, config: &SmcConfig, sys: &ParticleSystem) -> Result<ParamGrad, Error> {
    let ctx = Context::new(problem, params, config.deterministic);
    let n = problem.n_taxa();
    let k = sys.particles;
    let a = problem.n_states();
    let mut sweep = Sweep {
        ctx: &ctx,
        adj: (0..n + n.saturating_sub(1) * k).map(|_| Adj::default()).collect(),
        g_q: DMatrix::zeros(a, a),
        g_s: vec![0.0; a],
        dec: match &params.rates {
            RateModel::Decoder(d) => Some(d.grad_zeros()),
            RateModel::Global(_) => None,
        },
        g_scale: [0.0; 2],
    };
    for leaf in 0..n {
        sweep.adj[leaf].coef = 1.0;
    }
    let mut g_carry = vec![0.0; k];
    for (ri, rec) in sys.ranks.iter().enumerate().rev() {
        let x: Vec<f64> = rec.log_carry.iter().zip(&rec.log_weights).map(|(c, w)| c + w).collect();
        let pi: Vec<f64> = x.iter().map(|v| (v - rec.log_z_term).exp()).collect();
        let total: f64 = g_carry.iter().sum();
        let g_x: Vec<f64> = (0..k).map(|p| pi[p] + g_carry[p] - pi[p] * total).collect();
        g_carry = if rec.resampled || ri == 0 { vec![0.0; k] } else { g_x.clone() };
        for p in 0..k {
            let node = rec.nodes[p].clone();
            let mut own = std::mem::take(&mut sweep.adj[node.id]);
            match &rec.lookahead[p] {
                None => sweep.seed(&mut own, &node, g_x[p]),
                Some(la) => {
                    let lse = log_sum_exp(&la.potentials);
                    let soft: Vec<f64> = la.potentials.iter().map(|v| g_x[p] * (v - lse).exp()).collect();
                    let state = &rec.parents[p];
                    let rho = state.n_roots();
                    let m = la.draws;
                    for j in 0..soft.len() / m {
                        let group = j * m..(j + 1) * m;
                        // Deterministic candidates of one pair are identical: sweep once.
                        let slots: Vec<(usize, f64)> = if config.deterministic {
                            vec![(j * m, soft[group].iter().sum())]
                        } else {
                            group.map(|c| (c, soft[c])).collect()
                        };
                        for (c, w) in slots {
                            let chosen = if config.deterministic { c == la.selected - la.selected % m } else { c == la.selected };
                            if chosen {
                                sweep.seed(&mut own, &node, w);
                            } else if w != 0.0 {
                                let (cand, _) = extend(&ctx, state, pair_at(rho, j), la.eps[c], usize::MAX, None);
                                let mut tmp = Adj::default();
                                sweep.seed(&mut tmp, &cand, w);
                                sweep.process(&cand, tmp);
                            }
                        }
                    }
                }
            }
            sweep.adj[node.id] = own;
        }
        for node in &rec.nodes {
            let own = std::mem::take(&mut sweep.adj[node.id]);
            sweep.process(node, own);
        }
    }
    for leaf in &sys.leaves {
        let own = std::mem::take(&mut sweep.adj[leaf.id]);
        sweep.process(leaf, own);
    }
    let embeddings: Vec<[f64; 2]> = (0..n).map(|t| sweep.adj[t].emb).collect();
    let raw = params.proposal;
    let proposal = [0, 1].map(|i| sweep.g_scale[i] * sigmoid(raw[i]));
    let rates = match (&params.rates, sweep.dec) {
        (RateModel::Global(r), _) => {
            let (gl, gp) = r.backward(&sweep.g_q, &sweep.g_s);
            gl.into_iter().chain(gp).collect()
        }
        (RateModel::Decoder(_), Some(g)) => g.params(),
        (RateModel::Decoder(_), None) => unreachable!(),
    };
    let grad = ParamGrad { embeddings, proposal, rates };
    if let Some(i) = grad.flat().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at coordinate {i}")));
    }
    Ok(grad)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
