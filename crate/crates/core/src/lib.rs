//! Two-step rank ensemble for dialog answer retrieval.
//!
//! Merges the candidate rankings of one or more MRR-optimized models (trained
//! on the single human-derived answer) with an NDCG-optimized model (trained
//! on dense relevance annotations) into one ranking that keeps the
//! human-derived answer near the top while ordering the rest by relevance.
//!
//! The merge works purely on ranks:
//!
//! 1. **MRR step.** Build a small candidate set as the union of
//!    - `H`: candidates every MRR model places in its top `rho_h`,
//!    - `T`: candidates any MRR model places in its top `rho_t`,
//!    - `N`: candidates in the NDCG model's top `rho_nn` that some MRR model
//!      also places in its top `rho_nm`,
//!
//!    and order it by the product of the MRR models' ranks.
//! 2. **NDCG step.** Order every remaining candidate by
//!    `rank_ndcg^p * rank_primary`, where `rank_primary` comes from the
//!    designated primary MRR model.
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`dataset`] | Questions, ground-truth index, dense relevance, JSONL loading |
//! | [`rankings`] | Model runs, score-to-rank conversion, top-n prefixes |
//! | [`metrics`] | MRR, recall@k, mean rank, NDCG, dataset reports |
//! | [`ensemble`] | Candidate subsets, the two-step merge, the alpha blend baseline |
//! | [`experiments`] | Ablation, sweeps, provenance listings, synthetic data |

pub mod dataset;
pub mod ensemble;
pub mod experiments;
pub mod metrics;
pub mod rankings;

mod error;

pub use dataset::{Dataset, QuestionRecord};
pub use ensemble::{EnsembleConfig, MergedRanking, Provenance};
pub use error::Error;
pub use metrics::{EvalOptions, MetricsReport};
pub use rankings::{ModelRun, RankVector, RunKind, RunSet};

pub type Result<T, E = Error> = std::result::Result<T, E>;
