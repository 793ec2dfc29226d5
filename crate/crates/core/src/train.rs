//! Gradient ascent on `E[log Ẑ]`.
//!
//! Training runs in two phases. The first places every parent at its
//! proposal mean, so branch lengths are deterministic and only embeddings
//! and rates move. The second restores sampled parents and tunes all
//! parameters, including the proposal scale.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::grad::{flat_params, gradient, run_sampler, set_flat_params, Sampler};
use crate::smc::{ModelParams, Problem, SmcConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub sampler: Sampler,
    /// Sampler settings; `deterministic` is overridden per phase.
    pub smc: SmcConfig,
    pub deterministic_steps: usize,
    pub stochastic_steps: usize,
    pub step_size: f64,
    /// Multiplies the step size after every step.
    pub decay: f64,
    /// Ascend `log Ẑ / S` instead of `log Ẑ`, so one step size suits any alignment length.
    pub per_site: bool,
    /// Independent runs averaged per gradient.
    pub seeds_per_step: usize,
    /// Largest change of any single coordinate in one step.
    pub max_update: f64,
    pub learn_embeddings: bool,
    pub learn_rates: bool,
    pub learn_proposal: bool,
    /// Abort once `log Ẑ` has stayed this far below its first value ...
    pub divergence_nats: f64,
    /// ... for this many consecutive steps.
    pub divergence_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sampler: Sampler::Csmc,
            smc: SmcConfig::default(),
            deterministic_steps: 500,
            stochastic_steps: 500,
            step_size: 5e-3,
            decay: 0.999,
            per_site: true,
            seeds_per_step: 1,
            max_update: 0.05,
            learn_embeddings: true,
            learn_rates: true,
            learn_proposal: true,
            divergence_nats: 50.0,
            divergence_steps: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), Error> {
        self.smc.validate()?;
        let ok = self.step_size > 0.0
            && self.step_size.is_finite()
            && self.decay > 0.0
            && self.decay <= 1.0
            && self.seeds_per_step >= 1
            && self.max_update > 0.0
            && self.divergence_nats > 0.0;
        if !ok {
            return Err(Error::InvalidParameter("training settings out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Deterministic,
    Stochastic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub phase: Phase,
    /// Mean `log Ẑ` over this step's runs, before the update.
    pub log_z: f64,
    pub grad_norm: f64,
    pub param_hash: u64,
    pub elapsed_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub steps: Vec<TraceStep>,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,phase,log_z,grad_norm,elapsed_s\n");
        for t in &self.steps {
            let phase = match t.phase {
                Phase::Deterministic => "deterministic",
                Phase::Stochastic => "stochastic",
            };
            s.push_str(&format!("{},{},{},{},{:.6}\n", t.step, phase, t.log_z, t.grad_norm, t.elapsed_s));
        }
        s
    }
}

/// Seed of run `i` at optimization step `step`.
fn run_seed(base: u64, step: usize, per_step: usize, i: usize) -> u64 {
    base.wrapping_add((step * per_step + i) as u64)
}

/// Mean `log Ẑ` over `seeds` independent runs starting at `config.seed`.
pub fn elbo_estimate(problem: &Problem, params: &ModelParams, config: &SmcConfig, sampler: Sampler, seeds: usize) -> Result<f64, Error> {
    let mut total = 0.0;
    for i in 0..seeds {
        let c = SmcConfig { seed: config.seed.wrapping_add(i as u64), ..config.clone() };
        total += run_sampler(problem, params, &c, sampler)?.log_z;
    }
    Ok(total / seeds as f64)
}

fn param_hash(flat: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in flat {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Runs both phases from `init`.
pub fn train(problem: &Problem, init: ModelParams, config: &TrainConfig) -> Result<(ModelParams, TrainingTrace), Error> {
    config.validate()?;
    init.validate(problem)?;
    let n = problem.n_taxa();
    let mut params = init;
    let mut trace = TrainingTrace::default();
    let start = Instant::now();
    let mut lr = config.step_size;
    let mut first: Option<f64> = None;
    let mut below = 0;
    let phases = [(Phase::Deterministic, config.deterministic_steps), (Phase::Stochastic, config.stochastic_steps)];
    let n_sites: f64 = problem.patterns.weights.iter().sum();
    let scale = if config.per_site { 1.0 / n_sites } else { 1.0 };
    let mut step = 0;
    for (phase, count) in phases {
        let smc = SmcConfig { deterministic: phase == Phase::Deterministic, ..config.smc.clone() };
        for _ in 0..count {
            let mut flat = flat_params(&params);
            let mut g = vec![0.0; flat.len()];
            let mut log_z = 0.0;
            for i in 0..config.seeds_per_step {
                let c = SmcConfig { seed: run_seed(config.smc.seed, step, config.seeds_per_step, i), ..smc.clone() };
                let (sys, grad) = gradient(problem, &params, &c, config.sampler)?;
                log_z += sys.log_z / config.seeds_per_step as f64;
                for (a, b) in g.iter_mut().zip(grad.flat()) {
                    *a += scale * b / config.seeds_per_step as f64;
                }
            }
            // Coordinates that this phase does not learn.
            let emb = 0..2 * n;
            let prop = 2 * n..2 * n + 2;
            let rates = 2 * n + 2..flat.len();
            let frozen = [
                (!config.learn_embeddings, emb),
                (!config.learn_proposal || phase == Phase::Deterministic, prop),
                (!config.learn_rates, rates),
            ];
            for (off, range) in frozen {
                if off {
                    g[range].fill(0.0);
                }
            }
            let grad_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            trace.steps.push(TraceStep {
                step,
                phase,
                log_z,
                grad_norm,
                param_hash: param_hash(&flat),
                elapsed_s: start.elapsed().as_secs_f64(),
            });
            let f = *first.get_or_insert(log_z);
            below = if log_z < f - config.divergence_nats { below + 1 } else { 0 };
            if below >= config.divergence_steps {
                return Err(Error::Numeric(format!(
                    "diverged: log Ẑ stayed more than {} nats below its initial value {f} for {below} steps",
                    config.divergence_nats
                )));
            }
            for (x, gi) in flat.iter_mut().zip(&g) {
                *x += (lr * gi).clamp(-config.max_update, config.max_update);
            }
            set_flat_params(&mut params, &flat);
            lr *= config.decay;
            step += 1;
        }
    }
    Ok((params, trace))
}
