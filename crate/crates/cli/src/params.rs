//! Versioned JSON snapshot of model parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use hyperphylo::evo::BranchPrior;
use hyperphylo::geometry::DiskPoint;
use hyperphylo::smc::{ModelParams, Problem, RateModel};

use crate::error::CliError;

pub const PARAMS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsFile {
    pub version: u32,
    /// Taxon names, one per embedding.
    pub taxa: Vec<String>,
    pub embeddings: Vec<[f64; 2]>,
    /// Pre-softplus proposal standard deviations.
    pub proposal: [f64; 2],
    pub rates: RateModel,
    pub lambda_bl: f64,
}

impl ParamsFile {
    pub fn from_params(problem: &Problem, params: &ModelParams) -> Self {
        Self {
            version: PARAMS_VERSION,
            taxa: problem.taxa.clone(),
            embeddings: params.embeddings.iter().map(|p| [p.x, p.y]).collect(),
            proposal: params.proposal,
            rates: params.rates.clone(),
            lambda_bl: params.prior.rate,
        }
    }

    /// Matches taxa by name, so the file may list them in any order.
    pub fn to_params(&self, problem: &Problem) -> Result<ModelParams, CliError> {
        if self.version != PARAMS_VERSION {
            return Err(CliError::Config(format!("params version {} is not {PARAMS_VERSION}", self.version)));
        }
        if self.taxa.len() != self.embeddings.len() {
            return Err(CliError::Config("params: taxa and embeddings differ in length".into()));
        }
        let mut embeddings = Vec::with_capacity(problem.n_taxa());
        for t in &problem.taxa {
            let i = self
                .taxa
                .iter()
                .position(|s| s == t)
                .ok_or_else(|| CliError::Config(format!("params have no embedding for taxon {t}")))?;
            let [x, y] = self.embeddings[i];
            if !(x.is_finite() && y.is_finite() && x * x + y * y < 1.0) {
                return Err(CliError::Config(format!("embedding of {t} is not inside the unit disk")));
            }
            embeddings.push(DiskPoint::new(x, y));
        }
        if self.taxa.len() != problem.n_taxa() {
            return Err(CliError::Config("params list taxa absent from the alignment".into()));
        }
        let params = ModelParams {
            embeddings,
            proposal: self.proposal,
            rates: self.rates.clone(),
            prior: BranchPrior::new(self.lambda_bl)?,
        };
        params.validate(problem)?;
        Ok(params)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("params serialize");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hyperphylo::alignment::Alignment;

    #[test]
    fn round_trip_with_reordered_taxa() {
        let p = Problem::new(&Alignment::dna(&[("b", "ACGT"), ("a", "ACGA"), ("c", "TCGA")]).unwrap());
        let mut m = ModelParams::new(vec![DiskPoint::new(0.1, 0.2), DiskPoint::new(-0.3, 0.0), DiskPoint::new(0.0, -0.5)], 4);
        m.proposal = [-1.0, -2.0];
        let mut f = ParamsFile::from_params(&p, &m);
        f.taxa.reverse();
        f.embeddings.reverse();
        let back: ParamsFile = serde_json::from_str(&f.to_json()).unwrap();
        assert_eq!(back.to_params(&p).unwrap(), m);
    }

    #[test]
    fn mismatched_taxa_or_points_are_rejected() {
        let p = Problem::new(&Alignment::dna(&[("a", "ACGT"), ("b", "ACGA")]).unwrap());
        let m = ModelParams::new(vec![DiskPoint::new(0.1, 0.2), DiskPoint::new(-0.3, 0.0)], 4);
        let mut f = ParamsFile::from_params(&p, &m);
        f.taxa[1] = "z".into();
        assert!(f.to_params(&p).is_err());
        let mut f = ParamsFile::from_params(&p, &m);
        f.embeddings[0] = [1.0, 0.5];
        assert!(f.to_params(&p).is_err());
    }
}
