//! Simulates 300 Jukes–Cantor sites on a six-taxon tree, embeds, trains,
//! and reports whether the best particle recovers the generating topology.
//!
//! `cargo run --release --example recover_tree -- [particles] [steps per phase]`

use std::time::Instant;

use hyperphylo::alignment::Alphabet;
use hyperphylo::embed::{embed, EmbedConfig};
use hyperphylo::evo::{simulate::simulate_alignment, RateMatrix, Tree};
use hyperphylo::grad::{run_sampler, Sampler};
use hyperphylo::smc::{unrooted_splits, ModelParams, Problem, SmcConfig};
use hyperphylo::train::{elbo_estimate, train, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), hyperphylo::Error> {
    let l = Tree::leaf;
    let tree = Tree::node(vec![
        (Tree::node(vec![(l("t1"), 0.12), (l("t2"), 0.3)]), 0.2),
        (Tree::node(vec![(Tree::node(vec![(l("t3"), 0.08), (l("t4"), 0.25)]), 0.15), (Tree::node(vec![(l("t5"), 0.4), (l("t6"), 0.1)]), 0.3)]), 0.05),
    ]);
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("integer argument"));
    let k = args.next().unwrap_or(32);
    let steps = args.next().unwrap_or(500);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let aln = simulate_alignment(&tree, &RateMatrix::jukes_cantor(4), &Alphabet::dna(), 300, &mut rng)?;
    let problem = Problem::new(&aln);
    let truth = unrooted_splits(&tree, &problem.taxa)?;
    let points = embed(&aln, &EmbedConfig::default())?.points;
    let init = ModelParams::new(problem.from_alignment_order(&points), 4);

    let eval = SmcConfig { particles: k, seed: 1000, ..Default::default() };
    let before = elbo_estimate(&problem, &init, &eval, Sampler::Csmc, 10)?;
    let start = Instant::now();
    let config = TrainConfig {
        smc: SmcConfig { particles: k, ..Default::default() },
        deterministic_steps: steps,
        stochastic_steps: steps,
        ..Default::default()
    };
    let (fitted, _) = train(&problem, init, &config)?;
    let after = elbo_estimate(&problem, &fitted, &eval, Sampler::Csmc, 10)?;
    let system = run_sampler(&problem, &fitted, &eval, Sampler::Csmc)?;
    let found = unrooted_splits(&system.states[system.best()].tree(&problem.taxa)?, &problem.taxa)?;
    println!(
        "K = {k}, {steps} + {steps} steps in {:.1} s; ELBO {before:.1} -> {after:.1}; topology recovered: {}",
        start.elapsed().as_secs_f64(),
        found == truth
    );
    Ok(())
}
