//! Experiment harness: flat-text configuration parsing, rank-correlation
//! statistics, and the ranking-fidelity study that compares a progressively
//! pruned supernet against an equally trained one-shot supernet.

mod config;
mod rank;
mod stats;

pub use config::{engine_config_from, engine_config_from_text, parse_config, ConfigFile};
pub use rank::{run_rank_study, RankStudyConfig, RankStudyReport, SeedOutcome};
pub use stats::kendall_tau;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("line {line}: expected 'key = value', got {got:?}")]
    BadLine { line: usize, got: String },
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("unknown key(s): {0}")]
    UnknownKeys(String),
    #[error("key {key:?}: invalid value {value:?} ({reason})")]
    BadValue { key: String, value: String, reason: String },
    #[error("kendall tau undefined: {0} has no untied pair")]
    AllTied(&'static str),
    #[error("rank study needs at least 2 candidate networks, got {0}")]
    TooFewNetworks(usize),
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
    #[error(transparent)]
    Eval(#[from] crate::evaluators::EvalError),
    #[error(transparent)]
    SuperNet(#[from] crate::supernet::SuperNetError),
    #[error(transparent)]
    Variation(#[from] crate::variation::VariationError),
}
