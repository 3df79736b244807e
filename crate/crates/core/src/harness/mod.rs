//! Run orchestration: configuration, dataset loading, batch fuzzing,
//! replay against another threat model, ablation sweeps and the
//! exhaustive small-budget oracle.

pub mod config;
pub mod dataset;
pub mod run;

pub use config::{ObjectiveKind, RunConfig, SmoothingKind, ThreatKind};
pub use dataset::{load_dataset, parse_dataset, SeedKind, SeedRecord};
pub use run::{
    ablate, brute_force_oracle, build_client, candidate_sets, derive_seed, fuzz_all, load_stopwords, replay, run,
    seed_rng, OracleResult, RunOutput, Workbench,
};
