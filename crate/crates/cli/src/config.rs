//! Run configuration: defaults, then command-line flags, then a JSON file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use hyperphylo::alignment::Alphabet;
use hyperphylo::embed::EmbedConfig;
use hyperphylo::grad::Sampler;
use hyperphylo::smc::SmcConfig;
use hyperphylo::train::TrainConfig;

use crate::error::CliError;
use crate::io::Format;

/// Optimizer and schedule; the sampler settings come from the run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub deterministic_steps: usize,
    pub stochastic_steps: usize,
    pub step_size: f64,
    pub decay: f64,
    pub per_site: bool,
    pub seeds_per_step: usize,
    pub max_update: f64,
    pub learn_embeddings: bool,
    pub learn_rates: bool,
    pub learn_proposal: bool,
    pub divergence_nats: f64,
    pub divergence_steps: usize,
    /// Runs averaged for the ELBO reported before and after training.
    pub eval_seeds: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            deterministic_steps: t.deterministic_steps,
            stochastic_steps: t.stochastic_steps,
            step_size: t.step_size,
            decay: t.decay,
            per_site: t.per_site,
            seeds_per_step: t.seeds_per_step,
            max_update: t.max_update,
            learn_embeddings: t.learn_embeddings,
            learn_rates: t.learn_rates,
            learn_proposal: t.learn_proposal,
            divergence_nats: t.divergence_nats,
            divergence_steps: t.divergence_steps,
            eval_seeds: 8,
        }
    }
}

/// Position-dependent rates from a small network instead of one global matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecoderSettings {
    pub hidden: Vec<usize>,
    /// Standard deviation of the initial weights.
    pub init_std: f64,
}

impl Default for DecoderSettings {
    fn default() -> Self {
        Self { hidden: vec![16], init_std: 0.1 }
    }
}

/// A fixed rate matrix for scoring trees: stationary weights and holding times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub stationary: Vec<f64>,
    pub holding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Guessed from the input's extension when absent.
    pub format: Option<Format>,
    /// State symbols. `ACGT` selects DNA, where `N` and ambiguity codes are
    /// missing data; for any alphabet `-`, `?` and `.` are missing.
    pub alphabet: String,
    pub out_dir: PathBuf,
    pub lambda_bl: f64,
    pub mode: Sampler,
    pub smc: SmcConfig,
    pub embed: EmbedConfig,
    pub train: TrainSettings,
    pub decoder: Option<DecoderSettings>,
    /// Saved parameters to start from instead of a fresh embedding.
    pub params: Option<PathBuf>,
    /// Tree to score (`loglik`).
    pub tree: Option<PathBuf>,
    /// Rate matrix for `loglik`; Jukes–Cantor when neither this nor `params` is given.
    pub rate: Option<RateSpec>,
    /// Also write every particle's tree.
    pub dump_trees: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            format: None,
            alphabet: "ACGT".into(),
            out_dir: PathBuf::from("out"),
            lambda_bl: 10.0,
            mode: Sampler::Csmc,
            smc: SmcConfig { particles: 64, ..SmcConfig::default() },
            embed: EmbedConfig::default(),
            train: TrainSettings::default(),
            decoder: None,
            params: None,
            tree: None,
            rate: None,
            dump_trees: false,
        }
    }
}

/// Recursively overwrites `base` with every key present in `patch`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

impl RunConfig {
    /// Applies a JSON file on top of `self`; unknown keys are rejected.
    pub fn with_file(self, path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.with_json(&text)
    }

    pub fn with_json(self, text: &str) -> Result<Self, CliError> {
        let patch: Value = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if !patch.is_object() {
            return Err(CliError::Config("top level must be an object".into()));
        }
        let mut base = serde_json::to_value(&self).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut base, patch);
        serde_json::from_value(base).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn alphabet(&self) -> Result<Alphabet, CliError> {
        if self.alphabet.eq_ignore_ascii_case("ACGT") {
            return Ok(Alphabet::dna());
        }
        Ok(Alphabet::custom(&self.alphabet)?)
    }

    pub fn input_format(&self) -> Option<Format> {
        self.format.or_else(|| self.input.as_deref().map(Format::from_path))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            sampler: self.mode,
            smc: self.smc.clone(),
            deterministic_steps: t.deterministic_steps,
            stochastic_steps: t.stochastic_steps,
            step_size: t.step_size,
            decay: t.decay,
            per_site: t.per_site,
            seeds_per_step: t.seeds_per_step,
            max_update: t.max_update,
            learn_embeddings: t.learn_embeddings,
            learn_rates: t.learn_rates,
            learn_proposal: t.learn_proposal,
            divergence_nats: t.divergence_nats,
            divergence_steps: t.divergence_steps,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.lambda_bl > 0.0 && self.lambda_bl.is_finite()) {
            return bad(format!("lambda_bl {} must be positive", self.lambda_bl));
        }
        self.alphabet()?;
        self.smc.validate()?;
        if !(self.embed.scale > 0.0 && self.embed.scale.is_finite()) || self.embed.init_radius <= 0.0 || self.embed.init_radius >= 1.0 {
            return bad("embed.scale must be positive and embed.init_radius in (0, 1)".into());
        }
        self.train_config().validate()?;
        if self.train.eval_seeds == 0 {
            return bad("train.eval_seeds must be at least 1".into());
        }
        if let Some(d) = &self.decoder {
            if d.hidden.contains(&0) || !(d.init_std >= 0.0 && d.init_std.is_finite()) {
                return bad("decoder layers must be non-empty and init_std non-negative".into());
            }
        }
        Ok(())
    }
}
