use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("alignment: {0}")]
    Alignment(String),
    #[error("unknown characters in taxon {taxon}: {chars}")]
    UnknownCharacters { taxon: String, chars: String },
    #[error("sequence length mismatch: taxon {taxon} has {got} sites, expected {expected}")]
    Ragged { taxon: String, got: usize, expected: usize },
    #[error("leaf {0} has no row in the alignment")]
    UnmappedLeaf(String),
    #[error("tree: {0}")]
    Tree(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}
