//! The four subcommands and their artifacts.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use hyperphylo::alignment::Alignment;
use hyperphylo::embed::{embed, EmbeddingSet};
use hyperphylo::evo::{felsenstein_log_likelihood, BranchPrior, Decoder, RateMatrix, MIN_BRANCH};
use hyperphylo::grad::{run_sampler, Sampler};
use hyperphylo::smc::{ModelParams, ParticleSystem, Problem, RateModel, SmcConfig};
use hyperphylo::train::{elbo_estimate, train};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{read_alignment, Format};
use crate::newick::{parse_newick, state_newick};
use crate::params::ParamsFile;

#[derive(Debug, Parser)]
#[command(name = "hyperphylo", version, about = "Hyperbolic sequential Monte Carlo for Bayesian phylogenetics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Embed taxa in the Poincaré disk from pairwise Hamming distances.
    Embed(Args),
    /// Run the sampler once and write the highest-weight tree.
    Sample(Args),
    /// Fit embeddings, proposal and rates by gradient ascent on the ELBO.
    Train(Args),
    /// Score a Newick tree: likelihood plus branch-length prior.
    Loglik(Args),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Csmc,
    Ncsmc,
}

#[derive(Debug, Default, clap::Args)]
pub struct Args {
    /// Alignment file.
    pub input: Option<PathBuf>,
    /// Number of particles.
    #[arg(long)]
    pub k: Option<usize>,
    /// Parent draws per candidate pair (nested sampler).
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rate of the exponential branch-length prior.
    #[arg(long)]
    pub lambda_bl: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// JSON file whose keys override the flags.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Start from saved parameters instead of a fresh embedding.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Newick tree to score.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    #[arg(long)]
    pub deterministic_steps: Option<usize>,
    #[arg(long)]
    pub stochastic_steps: Option<usize>,
}

impl Args {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut c = RunConfig::default();
        if let Some(p) = &self.input {
            c.input = Some(p.clone());
        }
        if let Some(k) = self.k {
            c.smc.particles = k;
        }
        if let Some(m) = self.m {
            c.smc.draws = m;
        }
        if let Some(s) = self.seed {
            c.smc.seed = s;
            c.embed.seed = s;
        }
        if let Some(l) = self.lambda_bl {
            c.lambda_bl = l;
        }
        if let Some(m) = self.mode {
            c.mode = match m {
                Mode::Csmc => Sampler::Csmc,
                Mode::Ncsmc => Sampler::Ncsmc,
            };
        }
        c.format = self.format.or(c.format);
        if let Some(d) = &self.out_dir {
            c.out_dir = d.clone();
        }
        c.params = self.params.clone().or(c.params);
        c.tree = self.tree.clone().or(c.tree);
        if let Some(n) = self.deterministic_steps {
            c.train.deterministic_steps = n;
        }
        if let Some(n) = self.stochastic_steps {
            c.train.stochastic_steps = n;
        }
        if let Some(path) = &self.config {
            c = c.with_file(path)?;
        }
        c.validate()?;
        Ok(c)
    }
}

/// What a command wrote and what it reports on stdout.
#[derive(Debug)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub results: Value,
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let mut body = text.to_string();
        if !body.ends_with('\n') {
            body.push('\n');
        }
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn finish(mut self, command: &str, config: &RunConfig, results: Value) -> Result<Outcome, CliError> {
        let outputs: Vec<String> = self
            .files
            .iter()
            .chain(std::iter::once(&self.dir.join("manifest.json")))
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect();
        let manifest = json!({
            "tool": "hyperphylo",
            "version": env!("CARGO_PKG_VERSION"),
            "params_version": crate::params::PARAMS_VERSION,
            "command": command,
            "seed": config.smc.seed,
            "config": config,
            "outputs": outputs,
            "results": results,
        });
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Config(e.to_string()))?;
        self.write("manifest.json", &text)?;
        Ok(Outcome { files: self.files, results })
    }
}

pub fn load_alignment(config: &RunConfig) -> Result<Alignment, CliError> {
    let path = config.input.as_deref().ok_or_else(|| CliError::Config("no input alignment given".into()))?;
    let format = config.input_format().unwrap_or(Format::Fasta);
    read_alignment(path, format, &config.alphabet()?)
}

fn fresh_params(config: &RunConfig, aln: &Alignment, problem: &Problem) -> Result<(ModelParams, EmbeddingSet), CliError> {
    let set = embed(aln, &config.embed)?;
    let mut params = ModelParams::new(problem.from_alignment_order(&set.points), problem.n_states());
    params.prior = BranchPrior::new(config.lambda_bl)?;
    if let Some(d) = &config.decoder {
        let mut rng = ChaCha8Rng::seed_from_u64(config.embed.seed);
        params.rates = RateModel::Decoder(Decoder::random(problem.n_states(), &d.hidden, d.init_std, &mut rng));
    }
    Ok((params, set))
}

/// Saved parameters when given, else a fresh embedding.
pub fn initial_params(config: &RunConfig, aln: &Alignment, problem: &Problem) -> Result<ModelParams, CliError> {
    match &config.params {
        Some(path) => {
            let mut p = ParamsFile::load(path)?.to_params(problem)?;
            p.prior = BranchPrior::new(config.lambda_bl)?;
            Ok(p)
        }
        None => Ok(fresh_params(config, aln, problem)?.0),
    }
}

/// One row per taxon in alignment order.
fn embeddings_csv(problem: &Problem, params: &ModelParams) -> String {
    let mut s = String::from("taxon,x,y\n");
    for row in 0..problem.n_taxa() {
        let t = problem.order.iter().position(|&r| r == row).expect("every row has a taxon");
        let p = params.embeddings[t];
        let _ = writeln!(s, "{},{},{}", problem.taxa[t], p.x, p.y);
    }
    s
}

fn ess_csv(sys: &ParticleSystem) -> String {
    let mut s = String::from("rank,ess,resampled,log_z_term\n");
    for (r, rec) in sys.ranks.iter().enumerate() {
        let _ = writeln!(s, "{},{},{},{}", r + 1, rec.ess, rec.resampled, rec.log_z_term);
    }
    s
}

fn write_system(out: &mut Output, config: &RunConfig, problem: &Problem, sys: &ParticleSystem) -> Result<Value, CliError> {
    let best = sys.best();
    out.write("tree.nwk", &state_newick(&sys.states[best], &problem.taxa)?)?;
    out.write("log_z.txt", &format!("{}", sys.log_z))?;
    out.write("ess.csv", &ess_csv(sys))?;
    if config.dump_trees {
        let mut trees = String::new();
        let mut weights = String::from("particle,log_weight\n");
        for (k, st) in sys.states.iter().enumerate() {
            trees.push_str(&state_newick(st, &problem.taxa)?);
            let _ = writeln!(weights, "{k},{}", sys.final_log_weights[k]);
        }
        out.write("trees.nwk", &trees)?;
        out.write("particle_weights.csv", &weights)?;
    }
    Ok(json!({
        "log_z": sys.log_z,
        "best_particle": best,
        "best_log_weight": sys.final_log_weights[best],
        "final_ess": sys.ess(),
    }))
}

pub fn cmd_embed(config: &RunConfig) -> Result<Outcome, CliError> {
    let aln = load_alignment(config)?;
    let problem = Problem::new(&aln);
    let (params, set) = fresh_params(config, &aln, &problem)?;
    let mut out = Output::new(&config.out_dir)?;
    out.write("embeddings.csv", &embeddings_csv(&problem, &params))?;
    let mut loss = String::from("iter,loss\n");
    for (i, l) in set.loss_history.iter().enumerate() {
        let _ = writeln!(loss, "{i},{l}");
    }
    out.write("embed_loss.csv", &loss)?;
    out.write("params.json", &ParamsFile::from_params(&problem, &params).to_json())?;
    let results = json!({ "final_loss": set.loss_history.last(), "iterations": set.loss_history.len() });
    out.finish("embed", config, results)
}

pub fn cmd_sample(config: &RunConfig) -> Result<Outcome, CliError> {
    let aln = load_alignment(config)?;
    let problem = Problem::new(&aln);
    let params = initial_params(config, &aln, &problem)?;
    let sys = run_sampler(&problem, &params, &config.smc, config.mode)?;
    let mut out = Output::new(&config.out_dir)?;
    out.write("embeddings.csv", &embeddings_csv(&problem, &params))?;
    let results = write_system(&mut out, config, &problem, &sys)?;
    out.finish("sample", config, results)
}

/// Sampler settings for the before/after ELBO and the final tree; seeds
/// are offset so they never coincide with the ones used for gradients.
fn eval_config(config: &RunConfig) -> SmcConfig {
    SmcConfig { seed: config.smc.seed.wrapping_add(1 << 32), deterministic: false, memoize: false, ..config.smc.clone() }
}

pub fn cmd_train(config: &RunConfig) -> Result<Outcome, CliError> {
    let aln = load_alignment(config)?;
    let problem = Problem::new(&aln);
    let init = initial_params(config, &aln, &problem)?;
    let eval = eval_config(config);
    let seeds = config.train.eval_seeds;
    let before = elbo_estimate(&problem, &init, &eval, config.mode, seeds)?;
    let (fit, trace) = train(&problem, init, &config.train_config())?;
    let after = elbo_estimate(&problem, &fit, &eval, config.mode, seeds)?;
    let sys = run_sampler(&problem, &fit, &eval, config.mode)?;
    let mut out = Output::new(&config.out_dir)?;
    out.write("trace.csv", &trace.to_csv())?;
    out.write("params.json", &ParamsFile::from_params(&problem, &fit).to_json())?;
    out.write("embeddings.csv", &embeddings_csv(&problem, &fit))?;
    let mut results = write_system(&mut out, config, &problem, &sys)?;
    results["elbo_initial"] = json!(before);
    results["elbo_final"] = json!(after);
    results["steps"] = json!(trace.steps.len());
    out.finish("train", config, results)
}

fn loglik_rate(config: &RunConfig, problem: &Problem) -> Result<RateMatrix, CliError> {
    if let Some(path) = &config.params {
        return match ParamsFile::load(path)?.rates {
            RateModel::Global(r) if r.n_states() == problem.n_states() => Ok(r.rate_matrix()),
            RateModel::Global(_) => Err(CliError::Config("params rate model does not match the alphabet".into())),
            RateModel::Decoder(_) => Err(CliError::Config("loglik needs a global rate matrix, not a decoder".into())),
        };
    }
    match &config.rate {
        Some(r) => Ok(RateMatrix::new(&r.stationary, &r.holding)?),
        None => Ok(RateMatrix::jukes_cantor(problem.n_states())),
    }
}

pub fn cmd_loglik(config: &RunConfig) -> Result<Outcome, CliError> {
    let aln = load_alignment(config)?;
    let problem = Problem::new(&aln);
    let path = config.tree.as_deref().ok_or_else(|| CliError::Config("loglik needs --tree".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let tree = parse_newick(&text)?;
    let mut leaves: Vec<&str> = tree.leaf_names();
    leaves.sort_unstable();
    let mut taxa: Vec<&str> = aln.taxa().iter().map(String::as_str).collect();
    taxa.sort_unstable();
    if leaves != taxa {
        return Err(CliError::Config("tree leaves and alignment taxa differ".into()));
    }
    let rate = loglik_rate(config, &problem)?;
    let prior = BranchPrior::new(config.lambda_bl)?;
    let ll = felsenstein_log_likelihood(&tree, &rate, &aln.patterns(), aln.taxa())?.total;
    let lp: f64 = tree.branch_lengths().iter().map(|&b| prior.log_density(b.max(MIN_BRANCH))).sum();
    let results = json!({ "log_likelihood": ll, "log_prior": lp, "log_posterior": ll + lp });
    let mut out = Output::new(&config.out_dir)?;
    out.write("loglik.json", &serde_json::to_string_pretty(&results).map_err(|e| CliError::Config(e.to_string()))?)?;
    out.finish("loglik", config, results)
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Embed(a) => cmd_embed(&a.resolve()?),
        Command::Sample(a) => cmd_sample(&a.resolve()?),
        Command::Train(a) => cmd_train(&a.resolve()?),
        Command::Loglik(a) => cmd_loglik(&a.resolve()?),
    }
}
