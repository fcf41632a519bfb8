//! The two-step rank ensemble and the alpha-blend baseline.
//!
//! The first step collects a small set of candidates that probably contains
//! the human-derived answer and ranks it by the product of the MRR models'
//! ranks. Its members are drawn from three subsets:
//!
//! * `H` (high certainty): in the top `rho_h` of *every* MRR model.
//! * `T` (top answers): in the top `rho_t` of *any* MRR model.
//! * `N` (NDCG agreement): in the NDCG model's top `rho_nn` and in the top
//!   `rho_nm` of some MRR model.
//!
//! The second step ranks everything else by `r_N^p * r_M`, with `r_M` the
//! primary MRR model's rank over the full candidate list. Ties in both steps
//! fall back to the primary model's rank, then to the candidate index.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::rankings::{scores_to_ranks, ModelRun, RankError, RankVector, RunSet};

pub const DEFAULT_RHO_H: usize = 3;
pub const DEFAULT_RHO_T: usize = 1;
pub const DEFAULT_RHO_NN: usize = 5;
pub const DEFAULT_RHO_NM: usize = 10;
pub const DEFAULT_P: f64 = 3.0;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Rank(#[from] RankError),
    #[error("question {question_id:?}: model {model_id:?} ranks {found} candidates, expected {expected}")]
    LengthMismatch {
        question_id: String,
        model_id: String,
        expected: usize,
        found: usize,
    },
    #[error("candidate {candidate} out of range for {n} candidates")]
    InvalidCandidate { candidate: usize, n: usize },
    #[error("rank product for candidate {candidate} overflows 64 bits; too many MRR models or candidates")]
    Overflow { candidate: usize },
    #[error("model {0:?} has no scores; the blend needs score-kind runs")]
    ScoresRequired(String),
    #[error("alpha = {0} is outside [0, 1]")]
    AlphaOutOfRange(f64),
}

/// Hyperparameters and model roles for the two-step merge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub rho_h: usize,
    pub rho_t: usize,
    pub rho_nn: usize,
    pub rho_nm: usize,
    pub p: f64,
    pub enable_h: bool,
    pub enable_t: bool,
    pub enable_n: bool,
    /// The MRR model used in the second step and for tie-breaks.
    pub primary_mrr_model: String,
    pub mrr_model_ids: Vec<String>,
    pub ndcg_model_id: String,
}

impl EnsembleConfig {
    /// Default hyperparameters with every subset enabled; the first MRR model
    /// is primary.
    pub fn new(mrr_model_ids: Vec<String>, ndcg_model_id: impl Into<String>) -> Self {
        Self {
            rho_h: DEFAULT_RHO_H,
            rho_t: DEFAULT_RHO_T,
            rho_nn: DEFAULT_RHO_NN,
            rho_nm: DEFAULT_RHO_NM,
            p: DEFAULT_P,
            enable_h: true,
            enable_t: true,
            enable_n: true,
            primary_mrr_model: mrr_model_ids.first().cloned().unwrap_or_default(),
            mrr_model_ids,
            ndcg_model_id: ndcg_model_id.into(),
        }
    }

    pub fn validate(&self) -> Result<(), EnsembleError> {
        let invalid = |msg: String| Err(EnsembleError::InvalidConfig(msg));
        if self.mrr_model_ids.is_empty() {
            return invalid("at least one MRR model is required".into());
        }
        if !self.mrr_model_ids.contains(&self.primary_mrr_model) {
            return invalid(format!(
                "primary MRR model {:?} is not among the MRR models",
                self.primary_mrr_model
            ));
        }
        let unique: BTreeSet<&String> = self.mrr_model_ids.iter().collect();
        if unique.len() != self.mrr_model_ids.len() {
            return invalid("MRR model ids must be distinct".into());
        }
        if !(self.p.is_finite() && self.p > 0.0) {
            return invalid(format!("p must be a positive real, got {}", self.p));
        }
        Ok(())
    }

    /// True when no subset is enabled and the merge is the NDCG step alone.
    pub fn ndcg_only(&self) -> bool {
        !(self.enable_h || self.enable_t || self.enable_n)
    }
}

/// Which subset placed a candidate in the first step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    H,
    T,
    N,
    Remainder,
}

impl Provenance {
    /// Bracketed tag for listings; empty for the remainder.
    pub fn tag(self) -> &'static str {
        match self {
            Self::H => "[H]",
            Self::T => "[T]",
            Self::N => "[N]",
            Self::Remainder => "",
        }
    }
}

/// First-step membership, one tag per candidate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateSet {
    tags: Vec<Provenance>,
}

impl CandidateSet {
    /// Union of the subsets; a candidate in several gets the first of H, T, N.
    pub fn from_subsets(
        n: usize,
        high: &BTreeSet<usize>,
        top: &BTreeSet<usize>,
        agreement: &BTreeSet<usize>,
    ) -> Self {
        let tags = (0..n)
            .map(|c| {
                if high.contains(&c) {
                    Provenance::H
                } else if top.contains(&c) {
                    Provenance::T
                } else if agreement.contains(&c) {
                    Provenance::N
                } else {
                    Provenance::Remainder
                }
            })
            .collect();
        Self { tags }
    }

    pub fn tags(&self) -> &[Provenance] {
        &self.tags
    }

    pub fn tag(&self, candidate: usize) -> Provenance {
        self.tags[candidate]
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t != Provenance::Remainder)
            .map(|(c, _)| c)
    }

    pub fn len(&self) -> usize {
        self.members().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Final order for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergedRanking {
    /// Candidates best-first.
    pub order: Vec<usize>,
    /// Tag per candidate index.
    pub provenance: Vec<Provenance>,
    pub mrr_set_size: usize,
}

impl MergedRanking {
    pub fn to_rank_vector(&self) -> RankVector {
        RankVector::from_order(self.order.clone()).expect("merged order is a permutation")
    }
}

/// The rank vectors one question needs, resolved from the runs.
#[derive(Debug, Clone, Copy)]
pub struct QuestionRanks<'a> {
    pub mrr: &'a [&'a RankVector],
    pub primary: &'a RankVector,
    pub ndcg: &'a RankVector,
}

impl QuestionRanks<'_> {
    pub fn len(&self) -> usize {
        self.primary.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primary.is_empty()
    }

    pub fn high_certainty_set(&self, cfg: &EnsembleConfig) -> BTreeSet<usize> {
        if !cfg.enable_h {
            return BTreeSet::new();
        }
        let (first, rest) = self.mrr.split_first().expect("at least one MRR model");
        first
            .top_n(cfg.rho_h)
            .iter()
            .copied()
            .filter(|&c| rest.iter().all(|m| m.rank(c) <= cfg.rho_h))
            .collect()
    }

    pub fn top_answers_set(&self, cfg: &EnsembleConfig) -> BTreeSet<usize> {
        if !cfg.enable_t {
            return BTreeSet::new();
        }
        self.mrr
            .iter()
            .flat_map(|m| m.top_n(cfg.rho_t).iter().copied())
            .collect()
    }

    pub fn ndcg_agreement_set(&self, cfg: &EnsembleConfig) -> BTreeSet<usize> {
        if !cfg.enable_n {
            return BTreeSet::new();
        }
        self.ndcg
            .top_n(cfg.rho_nn)
            .iter()
            .copied()
            .filter(|&c| self.mrr.iter().any(|m| m.rank(c) <= cfg.rho_nm))
            .collect()
    }

    pub fn mrr_candidate_set(&self, cfg: &EnsembleConfig) -> CandidateSet {
        CandidateSet::from_subsets(
            self.len(),
            &self.high_certainty_set(cfg),
            &self.top_answers_set(cfg),
            &self.ndcg_agreement_set(cfg),
        )
    }

    fn check_candidate(&self, candidate: usize) -> Result<(), EnsembleError> {
        if candidate >= self.len() {
            return Err(EnsembleError::InvalidCandidate {
                candidate,
                n: self.len(),
            });
        }
        Ok(())
    }

    /// Product of the candidate's ranks across the MRR models.
    pub fn mrr_step_rank(&self, candidate: usize) -> Result<u64, EnsembleError> {
        self.check_candidate(candidate)?;
        self.mrr.iter().try_fold(1u64, |acc, m| {
            acc.checked_mul(m.rank(candidate) as u64)
                .ok_or(EnsembleError::Overflow { candidate })
        })
    }

    /// `r_N^p * r_M`; smaller is better.
    pub fn ndcg_step_key(&self, candidate: usize, p: f64) -> Result<f64, EnsembleError> {
        self.check_candidate(candidate)?;
        let r_n = self.ndcg.rank(candidate) as f64;
        let r_m = self.primary.rank(candidate) as f64;
        Ok(r_n.powf(p) * r_m)
    }

    pub fn two_step_rank(&self, cfg: &EnsembleConfig) -> Result<MergedRanking, EnsembleError> {
        let set = self.mrr_candidate_set(cfg);
        let tie = |a: usize, b: usize| {
            self.primary
                .rank(a)
                .cmp(&self.primary.rank(b))
                .then(a.cmp(&b))
        };

        let mut head = set
            .members()
            .map(|c| Ok((self.mrr_step_rank(c)?, c)))
            .collect::<Result<Vec<_>, EnsembleError>>()?;
        head.sort_by(|(ka, a), (kb, b)| ka.cmp(kb).then_with(|| tie(*a, *b)));

        let mut tail = (0..self.len())
            .filter(|&c| set.tag(c) == Provenance::Remainder)
            .map(|c| Ok((self.ndcg_step_key(c, cfg.p)?, c)))
            .collect::<Result<Vec<_>, EnsembleError>>()?;
        tail.sort_by(|(ka, a), (kb, b)| ka.total_cmp(kb).then_with(|| tie(*a, *b)));

        let mrr_set_size = head.len();
        let order = head
            .into_iter()
            .map(|(_, c)| c)
            .chain(tail.into_iter().map(|(_, c)| c))
            .collect();
        Ok(MergedRanking {
            order,
            provenance: set.tags,
            mrr_set_size,
        })
    }
}

/// A validated config bound to the runs it names.
#[derive(Debug, Clone)]
pub struct Ensemble<'a> {
    config: &'a EnsembleConfig,
    mrr_runs: Vec<&'a ModelRun>,
    primary: &'a ModelRun,
    ndcg: &'a ModelRun,
}

impl<'a> Ensemble<'a> {
    pub fn new(config: &'a EnsembleConfig, runs: &'a RunSet) -> Result<Self, EnsembleError> {
        config.validate()?;
        let mrr_runs = config
            .mrr_model_ids
            .iter()
            .map(|id| runs.get(id))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            config,
            mrr_runs,
            primary: runs.get(&config.primary_mrr_model)?,
            ndcg: runs.get(&config.ndcg_model_id)?,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        self.config
    }

    /// Resolves the question's rank vectors and hands them to `f`.
    pub fn with_question<T>(
        &self,
        question_id: &str,
        f: impl FnOnce(QuestionRanks<'_>) -> Result<T, EnsembleError>,
    ) -> Result<T, EnsembleError> {
        let primary = self.primary.ranks(question_id)?;
        let ndcg = self.ndcg.ranks(question_id)?;
        let mrr = self
            .mrr_runs
            .iter()
            .map(|run| run.ranks(question_id))
            .collect::<Result<Vec<_>, _>>()?;
        let n = primary.len();
        for (run, rv) in self
            .mrr_runs
            .iter()
            .chain([&self.ndcg])
            .zip(mrr.iter().chain([&ndcg]))
        {
            if rv.len() != n {
                return Err(EnsembleError::LengthMismatch {
                    question_id: question_id.to_string(),
                    model_id: run.model_id().to_string(),
                    expected: n,
                    found: rv.len(),
                });
            }
        }
        f(QuestionRanks {
            mrr: &mrr,
            primary,
            ndcg,
        })
    }

    pub fn high_certainty_set(&self, question_id: &str) -> Result<BTreeSet<usize>, EnsembleError> {
        self.with_question(question_id, |q| Ok(q.high_certainty_set(self.config)))
    }

    pub fn top_answers_set(&self, question_id: &str) -> Result<BTreeSet<usize>, EnsembleError> {
        self.with_question(question_id, |q| Ok(q.top_answers_set(self.config)))
    }

    pub fn ndcg_agreement_set(&self, question_id: &str) -> Result<BTreeSet<usize>, EnsembleError> {
        self.with_question(question_id, |q| Ok(q.ndcg_agreement_set(self.config)))
    }

    pub fn mrr_candidate_set(&self, question_id: &str) -> Result<CandidateSet, EnsembleError> {
        self.with_question(question_id, |q| Ok(q.mrr_candidate_set(self.config)))
    }

    pub fn mrr_step_rank(&self, question_id: &str, candidate: usize) -> Result<u64, EnsembleError> {
        self.with_question(question_id, |q| q.mrr_step_rank(candidate))
    }

    pub fn ndcg_step_key(&self, question_id: &str, candidate: usize) -> Result<f64, EnsembleError> {
        self.with_question(question_id, |q| q.ndcg_step_key(candidate, self.config.p))
    }

    pub fn two_step_rank(&self, question_id: &str) -> Result<MergedRanking, EnsembleError> {
        self.with_question(question_id, |q| q.two_step_rank(self.config))
    }

    /// Merges every dataset question, in dataset order.
    pub fn merge_dataset(&self, ds: &Dataset) -> Result<Vec<MergedRanking>, EnsembleError> {
        ds.questions()
            .par_iter()
            .map(|q| self.two_step_rank(&q.question_id))
            .collect()
    }
}

/// Ranks `alpha * mrr_scores + (1 - alpha) * ndcg_scores`.
pub fn naive_blend(
    mrr_scores: &[f64],
    ndcg_scores: &[f64],
    alpha: f64,
) -> Result<RankVector, EnsembleError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EnsembleError::AlphaOutOfRange(alpha));
    }
    if mrr_scores.len() != ndcg_scores.len() {
        return Err(EnsembleError::InvalidConfig(format!(
            "score vectors differ in length ({} vs {})",
            mrr_scores.len(),
            ndcg_scores.len()
        )));
    }
    let blended: Vec<f64> = mrr_scores
        .iter()
        .zip(ndcg_scores)
        .map(|(m, n)| alpha * m + (1.0 - alpha) * n)
        .collect();
    Ok(scores_to_ranks(&blended)?)
}

/// [`naive_blend`] on one question of two score-kind runs.
pub fn naive_blend_runs(
    mrr_run: &ModelRun,
    ndcg_run: &ModelRun,
    alpha: f64,
    question_id: &str,
) -> Result<RankVector, EnsembleError> {
    fn scores<'r>(run: &'r ModelRun, question_id: &str) -> Result<&'r [f64], EnsembleError> {
        run.ranks(question_id)?;
        run.scores(question_id)
            .ok_or_else(|| EnsembleError::ScoresRequired(run.model_id().to_string()))
    }
    naive_blend(
        scores(mrr_run, question_id)?,
        scores(ndcg_run, question_id)?,
        alpha,
    )
}
