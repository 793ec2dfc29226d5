//! Substitution model, branch-length prior and tree likelihoods.

pub mod decoder;
pub mod expm;
pub mod pruning;
pub mod rate;
pub mod simulate;

use std::collections::HashMap;

use crate::alignment::SitePatterns;
use crate::error::Error;
pub use decoder::Decoder;
pub use expm::Exponentiator;
pub use pruning::Partial;
pub use rate::{RateMatrix, RateParams};

/// Branch lengths below this are raised to it before exponentiation and in the prior.
pub const MIN_BRANCH: f64 = 1e-9;

/// Independent exponential prior on every branch length.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BranchPrior {
    pub rate: f64,
}

impl BranchPrior {
    pub fn new(rate: f64) -> Result<Self, Error> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidParameter(format!("branch prior rate {rate} must be positive")));
        }
        Ok(Self { rate })
    }

    pub fn log_density(&self, beta: f64) -> f64 {
        self.rate.ln() - self.rate * beta
    }
}

impl Default for BranchPrior {
    fn default() -> Self {
        Self { rate: 10.0 }
    }
}

/// Rooted tree with labelled leaves and branch lengths; internal nodes may
/// have any number of children.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    pub name: Option<String>,
    pub children: Vec<(Tree, f64)>,
}

impl Tree {
    pub fn leaf(name: &str) -> Self {
        Self { name: Some(name.to_string()), children: Vec::new() }
    }

    pub fn node(children: Vec<(Tree, f64)>) -> Self {
        Self { name: None, children }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn leaf_names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        if self.is_leaf() {
            out.push(self.name.as_deref().unwrap_or(""));
        }
        for (c, _) in &self.children {
            c.collect_leaves(out);
        }
    }

    pub fn branch_lengths(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(t) = stack.pop() {
            for (c, b) in &t.children {
                out.push(*b);
                stack.push(c);
            }
        }
        out
    }
}

/// Per-site and total log-likelihood of a tree.
#[derive(Clone, Debug, PartialEq)]
pub struct TreeLikelihood {
    pub per_site: Vec<f64>,
    pub total: f64,
}

/// Pruning over a plain tree whose leaf names index `taxa`.
pub fn felsenstein_log_likelihood(tree: &Tree, rate: &RateMatrix, patterns: &SitePatterns, taxa: &[String]) -> Result<TreeLikelihood, Error> {
    let index: HashMap<&str, usize> = taxa.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let expm = Exponentiator::new(rate);
    let root = tree_partial(tree, &expm, patterns, &index)?;
    let per_pattern = pruning::root_pattern_log_likelihoods(&root, rate.stationary());
    let total = per_pattern.iter().zip(&patterns.weights).map(|(l, w)| l * w).sum();
    let per_site = patterns.site_pattern.iter().map(|&p| per_pattern[p]).collect();
    Ok(TreeLikelihood { per_site, total })
}

fn tree_partial(tree: &Tree, expm: &Exponentiator, patterns: &SitePatterns, index: &HashMap<&str, usize>) -> Result<Partial, Error> {
    if tree.is_leaf() {
        let name = tree.name.as_deref().unwrap_or("");
        let &i = index.get(name).ok_or_else(|| Error::UnmappedLeaf(name.to_string()))?;
        return Ok(Partial::leaf(patterns.leaves[i].clone(), patterns.n_states));
    }
    let mut parts = Vec::with_capacity(tree.children.len());
    for (c, b) in &tree.children {
        let p = pruning::row_major(&expm.transition(b.max(MIN_BRANCH))?);
        parts.push((p, tree_partial(c, expm, patterns, index)?));
    }
    let refs: Vec<(&[f64], &Partial)> = parts.iter().map(|(p, l)| (p.as_slice(), l)).collect();
    Ok(pruning::combine(&refs))
}

/// Likelihood plus the exponential prior over every branch.
pub fn tree_log_posterior(tree: &Tree, rate: &RateMatrix, prior: &BranchPrior, patterns: &SitePatterns, taxa: &[String]) -> Result<f64, Error> {
    let ll = felsenstein_log_likelihood(tree, rate, patterns, taxa)?.total;
    Ok(ll + tree.branch_lengths().iter().map(|&b| prior.log_density(b.max(MIN_BRANCH))).sum::<f64>())
}
