//! Forests of embedded subtrees.
//!
//! Nodes are immutable and shared between particles through `Arc`, so
//! resampling only copies root lists.

use std::sync::Arc;

use crate::error::Error;
use crate::evo::{Exponentiator, Partial, RateMatrix, Tree};
use crate::geometry::{DiskPoint, TangentVector};

const OPEN: u32 = u32::MAX;
const CLOSE: u32 = u32::MAX - 1;

/// Substitution model in force at one node.
#[derive(Clone, Debug)]
pub struct RateContext {
    pub rate: RateMatrix,
    pub expm: Exponentiator,
}

impl RateContext {
    pub fn new(rate: RateMatrix) -> Self {
        let expm = Exponentiator::new(&rate);
        Self { rate, expm }
    }

    /// Root distribution used at the top of a subtree.
    pub fn eta(&self) -> &[f64] {
        self.rate.stationary()
    }
}

/// How a parent node was proposed.
#[derive(Clone, Debug, PartialEq)]
pub struct ProposalRecord {
    /// Indices of the merged roots in the parent state's root list.
    pub pair: (usize, usize),
    /// Geodesic point closest to the origin; the proposal mean.
    pub mean: DiskPoint,
    pub parent: DiskPoint,
    /// Standard normal pair behind the tangent draw; `None` when the parent
    /// was placed deterministically at the mean.
    pub eps: Option<[f64; 2]>,
    pub tangent: TangentVector,
    pub branch: [f64; 2],
    pub log_q_topology: f64,
    pub log_q_embed: f64,
    pub log_jacobian: f64,
}

#[derive(Debug)]
pub struct Node {
    pub id: usize,
    pub taxon: Option<usize>,
    pub min_taxon: usize,
    pub n_leaves: usize,
    pub embedding: DiskPoint,
    /// Children with the branch length above each.
    pub children: Vec<(Arc<Node>, f64)>,
    pub partial: Arc<Partial>,
    /// Log-likelihood of the subtree with this node as root.
    pub log_lik: f64,
    /// Sum of branch-length log prior densities inside the subtree.
    pub log_prior: f64,
    /// Canonical topology encoding, see [`TopologyKey`].
    pub key: Arc<[u32]>,
    pub rate: Arc<RateContext>,
    pub proposal: Option<ProposalRecord>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Plain tree with leaf names from `taxa`.
    pub fn to_tree(&self, taxa: &[String]) -> Tree {
        match self.taxon {
            Some(t) => Tree::leaf(&taxa[t]),
            None => Tree::node(self.children.iter().map(|(c, b)| (c.to_tree(taxa), *b)).collect()),
        }
    }

    /// Taxon indices below this node.
    pub fn taxa(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_leaves);
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if let Some(t) = n.taxon {
                out.push(t);
            }
            stack.extend(n.children.iter().map(|(c, _)| c.as_ref()));
        }
        out.sort_unstable();
        out
    }
}

/// Encoding of a leaf.
pub(crate) fn leaf_key(taxon: usize) -> Arc<[u32]> {
    Arc::from(vec![taxon as u32])
}

/// Encoding of a merge; `left` must have the smaller minimum taxon.
pub(crate) fn merge_key(left: &[u32], right: &[u32]) -> Arc<[u32]> {
    let mut k = Vec::with_capacity(left.len() + right.len() + 2);
    k.push(OPEN);
    k.extend_from_slice(left);
    k.extend_from_slice(right);
    k.push(CLOSE);
    Arc::from(k)
}

/// Rooted subtrees over disjoint taxon sets, sorted by smallest taxon.
#[derive(Clone, Debug)]
pub struct PartialState {
    pub roots: Vec<Arc<Node>>,
}

impl PartialState {
    pub fn n_roots(&self) -> usize {
        self.roots.len()
    }

    /// Forest target: likelihood of every tree plus the branch prior.
    pub fn log_target(&self) -> f64 {
        self.roots.iter().map(|r| r.log_lik + r.log_prior).sum()
    }

    /// Replaces roots `i < j` by `parent`, keeping the order.
    pub fn merged(&self, i: usize, j: usize, parent: Arc<Node>) -> Self {
        let mut roots = Vec::with_capacity(self.roots.len() - 1);
        for (k, r) in self.roots.iter().enumerate() {
            if k == i {
                roots.push(parent.clone());
            } else if k != j {
                roots.push(r.clone());
            }
        }
        // The parent keeps roots[i]'s minimum taxon, so the order holds.
        Self { roots }
    }

    pub fn topology_key(&self) -> TopologyKey {
        let mut k = Vec::new();
        for (n, r) in self.roots.iter().enumerate() {
            if n > 0 {
                k.push(CLOSE - 1);
            }
            k.extend_from_slice(&r.key);
        }
        TopologyKey(k)
    }

    /// The single tree of a complete state.
    pub fn tree(&self, taxa: &[String]) -> Result<Tree, Error> {
        match self.roots.as_slice() {
            [root] => Ok(root.to_tree(taxa)),
            _ => Err(Error::Tree(format!("state has {} roots, expected one", self.roots.len()))),
        }
    }
}

/// Canonical encoding of a forest topology: taxon indices with nesting
/// markers, children ordered by smallest taxon. Equal keys mean equal
/// forests, so it is used directly as a map key.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopologyKey(pub Vec<u32>);

impl TopologyKey {
    /// 64-bit FNV-1a digest.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in &self.0 {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

/// Canonical key of a plain tree whose leaf names index `taxa`; matches
/// [`PartialState::topology_key`] of a complete state with the same shape.
pub fn tree_topology_key(tree: &Tree, taxa: &[String]) -> Result<TopologyKey, Error> {
    fn walk(t: &Tree, taxa: &[String]) -> Result<(usize, Vec<u32>), Error> {
        if t.is_leaf() {
            let name = t.name.as_deref().unwrap_or("");
            let i = taxa.iter().position(|x| x == name).ok_or_else(|| Error::UnmappedLeaf(name.into()))?;
            return Ok((i, vec![i as u32]));
        }
        if t.children.len() != 2 {
            return Err(Error::Tree(format!("node with {} children is not binary", t.children.len())));
        }
        let mut a = walk(&t.children[0].0, taxa)?;
        let mut b = walk(&t.children[1].0, taxa)?;
        if b.0 < a.0 {
            std::mem::swap(&mut a, &mut b);
        }
        Ok((a.0, merge_key(&a.1, &b.1).to_vec()))
    }
    Ok(TopologyKey(walk(tree, taxa)?.1))
}

/// Bipartitions induced by the internal edges of a binary rooted tree,
/// ignoring the root: each split is given by the side without taxon 0.
/// Two trees have the same unrooted topology iff their split sets agree.
pub fn unrooted_splits(tree: &Tree, taxa: &[String]) -> Result<Vec<Vec<usize>>, Error> {
    let n = taxa.len();
    fn walk(t: &Tree, taxa: &[String], out: &mut Vec<Vec<usize>>) -> Result<Vec<usize>, Error> {
        if t.is_leaf() {
            let name = t.name.as_deref().unwrap_or("");
            let i = taxa.iter().position(|x| x == name).ok_or_else(|| Error::UnmappedLeaf(name.into()))?;
            return Ok(vec![i]);
        }
        let mut all = Vec::new();
        for (c, _) in &t.children {
            all.extend(walk(c, taxa, out)?);
        }
        all.sort_unstable();
        out.push(all.clone());
        Ok(all)
    }
    let mut clades = Vec::new();
    walk(tree, taxa, &mut clades)?;
    let mut splits: Vec<Vec<usize>> = clades
        .into_iter()
        .map(|c| if c.contains(&0) { (0..n).filter(|t| !c.contains(t)).collect() } else { c })
        .filter(|s: &Vec<usize>| s.len() >= 2 && s.len() <= n - 2)
        .collect();
    splits.sort();
    splits.dedup();
    Ok(splits)
}
