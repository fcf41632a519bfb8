//! Model runs and rank vectors.
//!
//! A run holds one model's output for every question, either as scores
//! (higher is better) or as 1-based ranks. Everything downstream consumes
//! ranks; scores are converted with [`scores_to_ranks`], breaking ties by
//! ascending candidate index.
//!
//! Prediction files are JSONL with a header record naming the model:
//!
//! ```text
//! {"model_id":"fga","kind":"scores"}
//! {"question_id":"q1","scores":[0.9,0.1,0.5]}
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RankError {
    #[error("empty score or rank vector")]
    Empty,
    #[error("non-finite score at candidate {index}")]
    NonFinite { index: usize },
    #[error("not a permutation of 1..={n}: {detail}")]
    NotPermutation { n: usize, detail: String },
    #[error("unknown question_id {0:?}")]
    UnknownQuestion(String),
    #[error("unknown model_id {0:?}")]
    UnknownModel(String),
    #[error("duplicate model_id {0:?}")]
    DuplicateModel(String),
    #[error("run {model_id:?} lists question {question_id:?} twice")]
    DuplicateQuestion {
        model_id: String,
        question_id: String,
    },
    #[error("line {line}: malformed prediction record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: record kind does not match run kind {expected}")]
    MixedKinds { line: usize, expected: RunKind },
    #[error("prediction file has no header record")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Scores,
    Ranks,
}

impl std::fmt::Display for RunKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Scores => "scores",
            Self::Ranks => "ranks",
        })
    }
}

/// 1-based ranks indexed by candidate, always a permutation of `1..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankVector {
    ranks: Vec<usize>,
    // order[pos] is the candidate placed at rank pos + 1
    order: Vec<usize>,
}

impl RankVector {
    pub fn new(ranks: Vec<usize>) -> Result<Self, RankError> {
        let n = ranks.len();
        if n == 0 {
            return Err(RankError::Empty);
        }
        let mut order = vec![usize::MAX; n];
        for (candidate, &rank) in ranks.iter().enumerate() {
            if rank == 0 || rank > n {
                return Err(RankError::NotPermutation {
                    n,
                    detail: format!("rank {rank} at candidate {candidate}"),
                });
            }
            if order[rank - 1] != usize::MAX {
                return Err(RankError::NotPermutation {
                    n,
                    detail: format!("rank {rank} repeated"),
                });
            }
            order[rank - 1] = candidate;
        }
        Ok(Self { ranks, order })
    }

    /// Builds from a best-first list of candidate indices.
    pub fn from_order(order: Vec<usize>) -> Result<Self, RankError> {
        let n = order.len();
        if n == 0 {
            return Err(RankError::Empty);
        }
        let mut ranks = vec![0; n];
        for (pos, &candidate) in order.iter().enumerate() {
            if candidate >= n || ranks[candidate] != 0 {
                return Err(RankError::NotPermutation {
                    n,
                    detail: format!("candidate {candidate} at position {pos}"),
                });
            }
            ranks[candidate] = pos + 1;
        }
        Ok(Self { ranks, order })
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Rank of `candidate`. Panics if out of range.
    pub fn rank(&self, candidate: usize) -> usize {
        self.ranks[candidate]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    /// Candidates best-first.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// The `min(n, len)` best candidates, best-first.
    pub fn top_n(&self, n: usize) -> &[usize] {
        &self.order[..n.min(self.order.len())]
    }
}

/// Converts scores to ranks. Higher score means better rank; equal scores
/// are ranked by ascending candidate index.
pub fn scores_to_ranks(scores: &[f64]) -> Result<RankVector, RankError> {
    if scores.is_empty() {
        return Err(RankError::Empty);
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(RankError::NonFinite { index });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // Stable sort keeps index order among equal scores.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    RankVector::from_order(order)
}

/// Number of candidates that share their score with at least one other.
pub fn tied_candidates(scores: &[f64]) -> usize {
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tied = 0;
    let mut start = 0;
    for i in 1..=sorted.len() {
        if i == sorted.len() || sorted[i] != sorted[start] {
            if i - start > 1 {
                tied += i - start;
            }
            start = i;
        }
    }
    tied
}

/// One model's output over a set of questions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    model_id: String,
    kind: RunKind,
    scores: BTreeMap<String, Vec<f64>>,
    ranks: BTreeMap<String, RankVector>,
}

impl ModelRun {
    pub fn from_scores<I>(model_id: impl Into<String>, per_question: I) -> Result<Self, RankError>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let model_id = model_id.into();
        let mut scores = BTreeMap::new();
        let mut ranks = BTreeMap::new();
        for (question_id, vector) in per_question {
            let rv = scores_to_ranks(&vector)?;
            if scores.contains_key(&question_id) {
                return Err(RankError::DuplicateQuestion {
                    model_id,
                    question_id,
                });
            }
            ranks.insert(question_id.clone(), rv);
            scores.insert(question_id, vector);
        }
        Ok(Self {
            model_id,
            kind: RunKind::Scores,
            scores,
            ranks,
        })
    }

    pub fn from_ranks<I>(model_id: impl Into<String>, per_question: I) -> Result<Self, RankError>
    where
        I: IntoIterator<Item = (String, Vec<usize>)>,
    {
        let model_id = model_id.into();
        let mut ranks = BTreeMap::new();
        for (question_id, vector) in per_question {
            let rv = RankVector::new(vector)?;
            if ranks.insert(question_id.clone(), rv).is_some() {
                return Err(RankError::DuplicateQuestion {
                    model_id,
                    question_id,
                });
            }
        }
        Ok(Self {
            model_id,
            kind: RunKind::Ranks,
            scores: BTreeMap::new(),
            ranks,
        })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn kind(&self) -> RunKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Question ids in lexicographic order.
    pub fn question_ids(&self) -> impl Iterator<Item = &str> {
        self.ranks.keys().map(String::as_str)
    }

    pub fn vector_len(&self, question_id: &str) -> Option<usize> {
        self.ranks.get(question_id).map(RankVector::len)
    }

    pub fn ranks(&self, question_id: &str) -> Result<&RankVector, RankError> {
        self.ranks
            .get(question_id)
            .ok_or_else(|| RankError::UnknownQuestion(question_id.to_string()))
    }

    /// Raw scores; `None` for rank-kind runs or unknown questions.
    pub fn scores(&self, question_id: &str) -> Option<&[f64]> {
        self.scores.get(question_id).map(Vec::as_slice)
    }

    /// Questions whose score vector contains at least one tie.
    pub fn questions_with_ties(&self) -> usize {
        self.scores
            .values()
            .filter(|s| tied_candidates(s) > 0)
            .count()
    }

    /// The top-`n` operator: candidates this model ranks `1..=n`.
    pub fn top_n(&self, n: usize, question_id: &str) -> Result<BTreeSet<usize>, RankError> {
        Ok(self.ranks(question_id)?.top_n(n).iter().copied().collect())
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        let header = RunHeader {
            model_id: self.model_id.clone(),
            kind: self.kind,
        };
        serde_json::to_writer(&mut writer, &header)?;
        writer.write_all(b"\n")?;
        match self.kind {
            RunKind::Scores => {
                for (question_id, scores) in &self.scores {
                    let record =
                        serde_json::json!({ "question_id": question_id, "scores": scores });
                    serde_json::to_writer(&mut writer, &record)?;
                    writer.write_all(b"\n")?;
                }
            }
            RunKind::Ranks => {
                for (question_id, ranks) in &self.ranks {
                    let record =
                        serde_json::json!({ "question_id": question_id, "ranks": ranks.ranks() });
                    serde_json::to_writer(&mut writer, &record)?;
                    writer.write_all(b"\n")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct RunHeader {
    model_id: String,
    kind: RunKind,
}

#[derive(Deserialize)]
struct RunRecord {
    question_id: String,
    scores: Option<Vec<f64>>,
    ranks: Option<Vec<i64>>,
}

/// Reads a prediction file: a header record then one record per question.
pub fn load_run<R: BufRead>(source: R) -> Result<ModelRun, RankError> {
    let mut header: Option<RunHeader> = None;
    let mut scores = Vec::new();
    let mut ranks = Vec::new();
    let malformed = |line: usize, message: String| RankError::Malformed { line, message };
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(head) = &header else {
            header = Some(serde_json::from_str(&line).map_err(|e| {
                malformed(line_no, format!("expected header {{model_id, kind}}: {e}"))
            })?);
            continue;
        };
        let record: RunRecord =
            serde_json::from_str(&line).map_err(|e| malformed(line_no, e.to_string()))?;
        match (head.kind, record.scores, record.ranks) {
            (_, Some(_), Some(_)) => {
                return Err(malformed(line_no, "both scores and ranks present".into()))
            }
            (_, None, None) => return Err(malformed(line_no, "no scores or ranks".into())),
            (RunKind::Scores, Some(s), None) => scores.push((record.question_id, s)),
            (RunKind::Ranks, None, Some(r)) => {
                let r = r
                    .into_iter()
                    .map(|v| usize::try_from(v).map_err(|_| v))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|v| malformed(line_no, format!("negative rank {v}")))?;
                ranks.push((record.question_id, r));
            }
            (expected, _, _) => {
                return Err(RankError::MixedKinds {
                    line: line_no,
                    expected,
                })
            }
        }
    }
    let header = header.ok_or(RankError::MissingHeader)?;
    match header.kind {
        RunKind::Scores => ModelRun::from_scores(header.model_id, scores),
        RunKind::Ranks => ModelRun::from_ranks(header.model_id, ranks),
    }
}

/// Runs addressed by model id, in insertion order.
#[derive(Debug, Clone, Default)]
pub struct RunSet {
    runs: Vec<ModelRun>,
    index: HashMap<String, usize>,
}

impl RunSet {
    pub fn new(runs: Vec<ModelRun>) -> Result<Self, RankError> {
        let mut set = Self::default();
        for run in runs {
            set.push(run)?;
        }
        Ok(set)
    }

    pub fn push(&mut self, run: ModelRun) -> Result<(), RankError> {
        if self.index.contains_key(run.model_id()) {
            return Err(RankError::DuplicateModel(run.model_id().to_string()));
        }
        self.index
            .insert(run.model_id().to_string(), self.runs.len());
        self.runs.push(run);
        Ok(())
    }

    pub fn get(&self, model_id: &str) -> Result<&ModelRun, RankError> {
        self.index
            .get(model_id)
            .map(|&i| &self.runs[i])
            .ok_or_else(|| RankError::UnknownModel(model_id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ModelRun> {
        self.runs.iter()
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn top_n(
        &self,
        model_id: &str,
        n: usize,
        question_id: &str,
    ) -> Result<BTreeSet<usize>, RankError> {
        self.get(model_id)?.top_n(n, question_id)
    }
}
