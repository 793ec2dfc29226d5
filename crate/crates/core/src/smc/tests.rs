use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::state::tree_topology_key;
use super::*;
use crate::evo::{tree_log_posterior, Decoder, Tree};
use crate::grad::{flat_params, gradient, set_flat_params, Sampler};
use crate::testutil::gauss_legendre;
use crate::geometry::hyp_distance;
use crate::wrapped_normal::{wn_log_density_euclidean, WrappedNormalParams};

fn problem(seqs: &[(&str, &str)]) -> Problem {
    Problem::new(&Alignment::dna(seqs).unwrap())
}

fn ring(n: usize, r: f64) -> Vec<DiskPoint> {
    (0..n).map(|i| {
        let a = 0.4 + i as f64 * std::f64::consts::TAU / n as f64;
        DiskPoint::new(r * a.cos(), r * (1.3 * a).sin())
    }).collect()
}

fn four() -> (Problem, ModelParams) {
    let p = problem(&[("a", "ACGTTGCAAC"), ("b", "ACGTTGCTAC"), ("c", "ACCTTGGAAT"), ("d", "TCCATGGAAT")]);
    let params = ModelParams::new(ring(4, 0.45), 4);
    (p, params)
}

fn cfg(k: usize, seed: u64) -> SmcConfig {
    SmcConfig { particles: k, seed, ..Default::default() }
}

#[test]
fn fixed_seed_is_bit_identical() {
    let (p, m) = four();
    let a = run_csmc(&p, &m, &cfg(8, 3)).unwrap();
    let b = run_csmc(&p, &m, &cfg(8, 3)).unwrap();
    assert_eq!(a.log_z.to_bits(), b.log_z.to_bits());
    let c = run_ncsmc(&p, &m, &SmcConfig { draws: 2, ..cfg(8, 3) }).unwrap();
    let d = run_ncsmc(&p, &m, &SmcConfig { draws: 2, ..cfg(8, 3) }).unwrap();
    assert_eq!(c.log_z.to_bits(), d.log_z.to_bits());
    assert_ne!(a.log_z, run_csmc(&p, &m, &cfg(8, 4)).unwrap().log_z);
}

#[test]
fn ranks_have_shrinking_forests_and_consistent_records() {
    let (p, m) = four();
    let sys = run_csmc(&p, &m, &cfg(6, 1)).unwrap();
    assert_eq!(sys.ranks.len(), 3);
    for (r, rec) in sys.ranks.iter().enumerate() {
        for (state, node) in rec.parents.iter().zip(&rec.nodes) {
            assert_eq!(state.n_roots(), 4 - r);
            let pr = node.proposal.as_ref().unwrap();
            for (c, (child, beta)) in node.children.iter().enumerate() {
                assert!(*beta > 0.0 && beta.is_finite());
                assert_eq!(*beta, pr.branch[c]);
                assert!((hyp_distance(&child.embedding, &node.embedding) - beta).abs() < 1e-12);
            }
            assert!((pr.log_q_topology + ln_pairs(4 - r)).abs() < 1e-15);
        }
        assert!(rec.ancestors.iter().all(|&a| a < 6));
    }
    assert!(sys.states.iter().all(|s| s.n_roots() == 1));
}

#[test]
fn log_z_telescopes() {
    let (p, m) = four();
    let sys = run_csmc(&p, &m, &cfg(5, 2)).unwrap();
    let want = sys.leaf_log_lik + sys.ranks.iter().map(|r| r.log_z_term).sum::<f64>();
    assert!((sys.log_z - want).abs() < 1e-12);
    // Every rank term is the log-mean weight when resampling every rank.
    for r in &sys.ranks {
        let lse = resample::log_sum_exp(&r.log_weights) - (5f64).ln();
        assert!((lse - r.log_z_term).abs() < 1e-12);
    }
}

#[test]
fn forest_target_of_leaves_and_full_tree() {
    let (p, m) = four();
    let sys = run_csmc(&p, &m, &cfg(4, 5)).unwrap();
    let leaves = PartialState { roots: sys.leaves.clone() };
    let eta = [0.25; 4];
    let mut want = 0.0;
    for t in 0..4 {
        for (pat, w) in p.patterns.weights.iter().enumerate() {
            let v = &p.patterns.leaves[t][pat * 4..pat * 4 + 4];
            want += w * v.iter().zip(&eta).map(|(a, b)| a * b).sum::<f64>().ln();
        }
    }
    assert!((leaves.log_target() - want).abs() < 1e-12);
    let rate = RateMatrix::jukes_cantor(4);
    for s in &sys.states {
        let tree = s.tree(&p.taxa).unwrap();
        let direct = tree_log_posterior(&tree, &rate, &m.prior, &p.patterns, &p.taxa).unwrap();
        assert!((s.log_target() - direct).abs() < 1e-9, "{} vs {direct}", s.log_target());
    }
}

#[test]
fn incremental_weight_matches_recomputation() {
    let (p, m) = four();
    let sys = run_csmc(&p, &m, &cfg(4, 8)).unwrap();
    for rec in &sys.ranks {
        for ((state, node), w) in rec.parents.iter().zip(&rec.nodes).zip(&rec.log_weights) {
            let pr = node.proposal.as_ref().unwrap();
            let next = state.merged(pr.pair.0, pr.pair.1, node.clone());
            let want = next.log_target() - state.log_target() - pr.log_q_topology - pr.log_q_embed + pr.log_jacobian;
            assert!((w - want).abs() < 1e-9);
        }
    }
}

#[test]
fn doubling_particles_keeps_first_rank_weights() {
    let (p, m) = four();
    let a = run_csmc(&p, &m, &cfg(4, 9)).unwrap();
    let b = run_csmc(&p, &m, &cfg(8, 9)).unwrap();
    assert_eq!(a.ranks[0].log_weights[..], b.ranks[0].log_weights[..4]);
}

/// N = 2 by an independent route: Euclidean density through the log map,
/// finite-difference Jacobian, brute-force cherry likelihood.
#[test]
fn two_taxa_matches_direct_monte_carlo() {
    let p = problem(&[("x", "ACGTA"), ("y", "ACTTA")]);
    let m = ModelParams::new(vec![DiskPoint::new(0.3, 0.1), DiskPoint::new(-0.2, 0.35)], 4);
    let k = 6;
    let sys = run_csmc(&p, &m, &cfg(k, 11)).unwrap();
    let jc = |b: f64, same: bool| if same { 0.25 + 0.75 * (-b).exp() } else { 0.25 - 0.25 * (-b).exp() };
    let (sx, sy) = ("ACGTA".as_bytes(), "ACTTA".as_bytes());
    let mut ws = Vec::new();
    for node in &sys.ranks[0].nodes {
        let pr = node.proposal.as_ref().unwrap();
        let v = pr.parent;
        let [b1, b2] = [hyp_distance(&m.embeddings[0], &v), hyp_distance(&m.embeddings[1], &v)];
        let mut ll = 0.0;
        for s in 0..5 {
            let site: f64 = b"ACGT".iter().map(|&r| 0.25 * jc(b1, r == sx[s]) * jc(b2, r == sy[s])).sum();
            ll += site.ln();
        }
        let wn = WrappedNormalParams::diagonal(pr.mean, 0.2, 0.2);
        let logq = wn_log_density_euclidean(&v, &wn);
        let h = 1e-6;
        let bl = |x: f64, y: f64| {
            let q = DiskPoint::new(x, y);
            [hyp_distance(&m.embeddings[0], &q), hyp_distance(&m.embeddings[1], &q)]
        };
        let (xp, xm, yp, ym) = (bl(v.x + h, v.y), bl(v.x - h, v.y), bl(v.x, v.y + h), bl(v.x, v.y - h));
        let det = ((xp[0] - xm[0]) * (yp[1] - ym[1]) - (yp[0] - ym[0]) * (xp[1] - xm[1])) / (4.0 * h * h);
        let prior = 2.0 * 10f64.ln() - 10.0 * (b1 + b2);
        ws.push(ll + prior - logq + det.abs().ln());
    }
    // The leaf terms of the weight cancel the rank-0 factor.
    let want = resample::log_sum_exp(&ws) - (k as f64).ln();
    assert!((sys.log_z - want).abs() < 1e-6, "{} vs {want}", sys.log_z);
}

/// `E[Ẑ]` for two taxa: the single-point Jacobian weight integrates the
/// target over branch lengths reachable by the triangle inequality, once
/// per preimage (two of them).
#[test]
fn two_taxa_unbiased_for_reachable_target() {
    let seq = [("x", "AC"), ("y", "AT")];
    let p = problem(&seq);
    let e = [DiskPoint::new(0.2, 0.1), DiskPoint::new(-0.1, 0.15)];
    let m = ModelParams::new(e.to_vec(), 4);
    let d = hyp_distance(&e[0], &e[1]);
    let jc = |b: f64, same: bool| if same { 0.25 + 0.75 * (-b).exp() } else { 0.25 - 0.25 * (-b).exp() };
    let lik = |b1: f64, b2: f64| {
        let a = b"ACGT".iter().map(|&r| 0.25 * jc(b1, r == b'A') * jc(b2, r == b'A')).sum::<f64>();
        let c = b"ACGT".iter().map(|&r| 0.25 * jc(b1, r == b'C') * jc(b2, r == b'T')).sum::<f64>();
        a * c * 100.0 * (-10.0 * (b1 + b2)).exp()
    };
    // u = b1 + b2 in [d, d + 4], w = b1 - b2 in [-d, d]; dβ = du dw / 2.
    let (x, wt) = gauss_legendre(48);
    let mut z = 0.0;
    for (xu, wu) in x.iter().zip(&wt) {
        let u = d + 2.0 * (xu + 1.0);
        for (xw, ww) in x.iter().zip(&wt) {
            let w = d * xw;
            z += wu * 2.0 * ww * d * 0.5 * lik((u + w) / 2.0, (u - w) / 2.0);
        }
    }
    let z_reach = 2.0 * z;
    let reps = 20_000;
    let vals: Vec<f64> = (0..reps).map(|s| run_csmc(&p, &m, &cfg(4, 1000 + s)).unwrap().log_z.exp()).collect();
    let mean = vals.iter().sum::<f64>() / reps as f64;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64).sqrt();
    let se = sd / (reps as f64).sqrt();
    assert!((mean - z_reach).abs() < 3.0 * se, "mean {mean} oracle {z_reach} se {se}");
}

#[test]
fn nested_reduces_to_plain_for_two_taxa() {
    let p = problem(&[("x", "ACGTA"), ("y", "ACTTA")]);
    let m = ModelParams::new(vec![DiskPoint::new(0.3, 0.1), DiskPoint::new(-0.2, 0.35)], 4);
    let a = run_csmc(&p, &m, &cfg(5, 21)).unwrap();
    let b = run_ncsmc(&p, &m, &SmcConfig { draws: 1, ..cfg(5, 21) }).unwrap();
    assert_eq!(a.log_z, b.log_z);
}

#[test]
fn nested_grid_sizes_and_weights() {
    let (p, m) = four();
    let sys = run_ncsmc(&p, &m, &SmcConfig { draws: 3, ..cfg(4, 2) }).unwrap();
    for (r, rec) in sys.ranks.iter().enumerate() {
        let rho = 4 - r;
        for (la, w) in rec.lookahead.iter().zip(&rec.log_weights) {
            let la = la.as_ref().unwrap();
            assert_eq!(la.potentials.len(), rho * (rho - 1) / 2 * 3);
            let mean = resample::log_sum_exp(&la.potentials) - (la.potentials.len() as f64).ln();
            assert!((mean - w).abs() < 1e-12);
        }
    }
}

#[test]
fn nested_potential_equals_plain_weight_for_same_draw() {
    // Replays a nested candidate through the plain sampler's weight.
    let (p, m) = four();
    let sys = run_ncsmc(&p, &m, &SmcConfig { draws: 2, ..cfg(3, 6) }).unwrap();
    let ctx = Context::new(&p, &m, false);
    let rec = &sys.ranks[1];
    let la = rec.lookahead[0].as_ref().unwrap();
    for (c, pot) in la.potentials.iter().enumerate() {
        let (_, w) = proposal::extend(&ctx, &rec.parents[0], pair_at(3, c / 2), la.eps[c], 0, None);
        assert_eq!(w, *pot);
    }
}

#[test]
fn nested_selection_follows_potentials() {
    let lw = [0.3f64.ln(), f64::NEG_INFINITY, 0.5f64.ln(), 0.2f64.ln()];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let mut c = [0usize; 4];
    for _ in 0..n {
        c[resample::categorical(&lw, rng.random()).unwrap()] += 1;
    }
    assert_eq!(c[1], 0);
    let chi2: f64 = [(0, 0.3), (2, 0.5), (3, 0.2)].iter().map(|&(i, q)| (c[i] as f64 - q * n as f64).powi(2) / (q * n as f64)).sum();
    assert!(chi2 < 9.21, "{chi2}");
}

#[test]
fn pair_choice_is_uniform() {
    let (p, m) = four();
    let n = 4000;
    let mut c = [0usize; 6];
    for s in 0..n {
        let sys = run_csmc(&p, &m, &cfg(1, 50 + s)).unwrap();
        let (i, j) = sys.ranks[0].nodes[0].proposal.as_ref().unwrap().pair;
        c[(0..6).position(|x| pair_at(4, x) == (i, j)).unwrap()] += 1;
    }
    let e = n as f64 / 6.0;
    let chi2: f64 = c.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 15.086, "{chi2}");
}

#[test]
fn taxon_input_order_does_not_matter() {
    let seqs = [("a", "ACGTTGCAAC"), ("b", "ACGTTGCTAC"), ("c", "ACCTTGGAAT"), ("d", "TCCATGGAAT")];
    let p1 = problem(&seqs);
    let p2 = problem(&[seqs[2], seqs[0], seqs[3], seqs[1]]);
    assert_eq!(p1.taxa, p2.taxa);
    let m = ModelParams::new(ring(4, 0.4), 4);
    for s in 0..3 {
        assert_eq!(run_csmc(&p1, &m, &cfg(6, s)).unwrap().log_z, run_csmc(&p2, &m, &cfg(6, s)).unwrap().log_z);
    }
}

#[test]
fn memoization_changes_nothing() {
    let (p, m) = four();
    for ncsmc in [false, true] {
        let base = SmcConfig { deterministic: true, draws: 2, ..cfg(8, 7) };
        let memo = SmcConfig { memoize: true, ..base.clone() };
        let run = |c: &SmcConfig| if ncsmc { run_ncsmc(&p, &m, c) } else { run_csmc(&p, &m, c) }.unwrap();
        let (a, b) = (run(&base), run(&memo));
        assert_eq!(a.log_z.to_bits(), b.log_z.to_bits());
        for (ra, rb) in a.ranks.iter().zip(&b.ranks) {
            for (x, y) in ra.log_weights.iter().zip(&rb.log_weights) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }
}

fn swap_all(t: &Tree) -> Tree {
    if t.is_leaf() {
        return t.clone();
    }
    Tree::node(t.children.iter().rev().map(|(c, b)| (swap_all(c), *b)).collect())
}

#[test]
fn topology_key_ignores_child_order() {
    let (p, m) = four();
    let sys = run_csmc(&p, &m, &cfg(6, 3)).unwrap();
    for s in &sys.states {
        let t = s.tree(&p.taxa).unwrap();
        let key = s.topology_key();
        assert_eq!(tree_topology_key(&t, &p.taxa).unwrap(), key);
        assert_eq!(tree_topology_key(&swap_all(&t), &p.taxa).unwrap(), key);
    }
}

#[test]
fn topology_keys_separate_all_five_taxon_forests() {
    // Every merge sequence on five taxa; forests compared as sets of clades.
    let p = problem(&[("a", "A"), ("b", "C"), ("c", "G"), ("d", "T"), ("e", "A")]);
    let m = ModelParams::new(ring(5, 0.5), 4);
    let ctx = Context::new(&p, &m, true);
    let mut seen: std::collections::HashMap<TopologyKey, BTreeSet<Vec<Vec<usize>>>> = Default::default();
    let mut sequences = 0;
    fn clades(s: &PartialState) -> BTreeSet<Vec<Vec<usize>>> {
        let mut out = BTreeSet::new();
        fn walk(n: &Node, acc: &mut Vec<Vec<usize>>) {
            acc.push(n.taxa());
            for (c, _) in &n.children {
                walk(c, acc);
            }
        }
        for r in &s.roots {
            let mut acc = Vec::new();
            walk(r, &mut acc);
            acc.sort();
            out.insert(acc);
        }
        out
    }
    let mut stack = vec![PartialState { roots: ctx.leaves() }];
    while let Some(s) = stack.pop() {
        let c = clades(&s);
        let prev = seen.entry(s.topology_key()).or_insert_with(|| c.clone());
        assert_eq!(*prev, c, "distinct forests share a key");
        if s.n_roots() == 1 {
            sequences += 1;
            continue;
        }
        let rho = s.n_roots();
        for j in 0..rho * (rho - 1) / 2 {
            let (a, b) = pair_at(rho, j);
            let (node, _) = proposal::extend(&ctx, &s, (a, b), None, 0, None);
            stack.push(s.merged(a, b, node));
        }
    }
    assert_eq!(sequences, 180);
    // Keys also distinguish: as many keys as distinct clade sets.
    let distinct: BTreeSet<_> = seen.values().cloned().collect();
    assert_eq!(distinct.len(), seen.len());
}

fn check_gradient(p: &Problem, m: &ModelParams, c: &SmcConfig, sampler: Sampler) {
    let (_, g) = gradient(p, m, c, sampler).unwrap();
    let g = g.flat();
    let base = flat_params(m);
    let f = |x: &[f64]| {
        let mut q = m.clone();
        set_flat_params(&mut q, x);
        crate::grad::run_sampler(p, &q, c, sampler).unwrap().log_z
    };
    let h = 1e-5;
    for i in 0..base.len() {
        let (mut a, mut b) = (base.clone(), base.clone());
        a[i] += h;
        b[i] -= h;
        let fd = (f(&a) - f(&b)) / (2.0 * h);
        assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "{sampler:?} coordinate {i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn gradient_matches_finite_differences_plain() {
    let (p, m) = four();
    check_gradient(&p, &m, &cfg(4, 12), Sampler::Csmc);
    check_gradient(&p, &m, &SmcConfig { deterministic: true, ..cfg(4, 12) }, Sampler::Csmc);
}

#[test]
fn gradient_matches_finite_differences_nested() {
    let (p, m) = four();
    check_gradient(&p, &m, &SmcConfig { draws: 2, ..cfg(3, 13) }, Sampler::Ncsmc);
    check_gradient(&p, &m, &SmcConfig { draws: 2, deterministic: true, ..cfg(3, 13) }, Sampler::Ncsmc);
}

#[test]
fn gradient_with_learned_rates_decoder_and_carried_weights() {
    let (p, mut m) = four();
    m.rates = RateModel::Global(RateParams { logits: vec![0.2, -0.1, 0.3, 0.0], pre: vec![0.5, -0.3, 0.1, 0.2] });
    m.proposal = [-1.2, -1.8];
    check_gradient(&p, &m, &SmcConfig { ess_threshold: Some(0.6), ..cfg(5, 14) }, Sampler::Csmc);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    m.rates = RateModel::Decoder(Decoder::random(4, &[3], 0.5, &mut rng));
    check_gradient(&p, &m, &cfg(3, 15), Sampler::Csmc);
    check_gradient(&p, &m, &SmcConfig { draws: 2, ..cfg(2, 15) }, Sampler::Ncsmc);
}

#[test]
fn mirrored_pair_has_mirrored_embedding_gradient() {
    let p = problem(&[("a", "ACGTAC"), ("b", "ACGTTC")]);
    let m = ModelParams::new(vec![DiskPoint::new(0.35, 0.12), DiskPoint::new(-0.35, 0.12)], 4);
    let c = SmcConfig { deterministic: true, ..cfg(4, 9) };
    let (_, g) = gradient(&p, &m, &c, Sampler::Csmc).unwrap();
    let [a, b] = [g.embeddings[0], g.embeddings[1]];
    assert!(a[0].abs() > 1e-3);
    assert!((a[0] + b[0]).abs() < 1e-10 * a[0].abs().max(1.0), "{a:?} {b:?}");
    assert!((a[1] - b[1]).abs() < 1e-10 * a[1].abs().max(1.0), "{a:?} {b:?}");
}
