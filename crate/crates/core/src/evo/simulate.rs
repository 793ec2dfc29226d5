//! Forward simulation of sequences down a tree.

use rand::Rng;

use super::{Exponentiator, RateMatrix, Tree, MIN_BRANCH};
use crate::alignment::{Alignment, Alphabet};
use crate::error::Error;

fn draw<R: Rng + ?Sized>(probs: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Draws `n_sites` columns: root states from the root distribution, then
/// each child state from the transition row of its parent state.
pub fn simulate_alignment<R: Rng + ?Sized>(
    tree: &Tree,
    rate: &RateMatrix,
    alphabet: &Alphabet,
    n_sites: usize,
    rng: &mut R,
) -> Result<Alignment, Error> {
    if alphabet.size() != rate.n_states() {
        return Err(Error::InvalidParameter("alphabet and rate matrix sizes differ".into()));
    }
    let expm = Exponentiator::new(rate);
    let root: Vec<usize> = (0..n_sites).map(|_| draw(rate.stationary().iter().copied(), rng)).collect();
    let mut out = Vec::new();
    descend(tree, &root, &expm, rng, &mut out)?;
    let symbols = alphabet.symbols();
    let (taxa, seqs) = out
        .into_iter()
        .map(|(name, states)| (name, states.iter().map(|&s| symbols[s] as char).collect::<String>()))
        .unzip();
    Alignment::new(taxa, seqs, alphabet.clone())
}

fn descend<R: Rng + ?Sized>(
    t: &Tree,
    states: &[usize],
    expm: &Exponentiator,
    rng: &mut R,
    out: &mut Vec<(String, Vec<usize>)>,
) -> Result<(), Error> {
    if t.is_leaf() {
        out.push((t.name.clone().unwrap_or_default(), states.to_vec()));
        return Ok(());
    }
    for (child, beta) in &t.children {
        let p = expm.transition(beta.max(MIN_BRANCH))?;
        let next: Vec<usize> = states.iter().map(|&s| draw(p.row(s).iter().copied(), rng)).collect();
        descend(child, &next, expm, rng, out)?;
    }
    Ok(())
}
