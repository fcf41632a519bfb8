//! Evaluation corpus: questions, their candidate lists, the sparse
//! ground-truth answer and optional dense relevance annotations.
//!
//! Annotation files are JSONL, one question per line:
//!
//! ```text
//! {"question_id":"q1","candidate_count":4,"gt_index":2,"relevance":[0.0,0.3333333333333333,1.0,0.0]}
//! ```
//!
//! `relevance` and `candidates` (display labels) are optional. Blank lines are
//! ignored.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rankings::ModelRun;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate question_id {0:?}")]
    DuplicateQuestion(String),
    #[error("question {question_id:?}: candidate_count must be at least 1")]
    NoCandidates { question_id: String },
    #[error("question {question_id:?}: gt_index out of range ({gt_index} >= {candidate_count})")]
    GtOutOfRange {
        question_id: String,
        gt_index: usize,
        candidate_count: usize,
    },
    #[error("question {question_id:?}: relevance length {found} does not match candidate_count {expected}")]
    RelevanceLength {
        question_id: String,
        expected: usize,
        found: usize,
    },
    #[error("question {question_id:?}: relevance[{index}] = {value} is outside [0, 1]")]
    RelevanceRange {
        question_id: String,
        index: usize,
        value: f64,
    },
    #[error("question {question_id:?}: {found} candidate labels for {expected} candidates")]
    LabelLength {
        question_id: String,
        expected: usize,
        found: usize,
    },
    #[error("run {model_id:?} is missing question {question_id:?}")]
    MissingQuestion {
        model_id: String,
        question_id: String,
    },
    #[error("run {model_id:?} has question {question_id:?} which is not in the dataset")]
    ExtraQuestion {
        model_id: String,
        question_id: String,
    },
    #[error(
        "run {model_id:?}, question {question_id:?}: expected {expected} entries, found {found}"
    )]
    LengthMismatch {
        model_id: String,
        question_id: String,
        expected: usize,
        found: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One dialog question and its annotations.
///
/// Candidates are identified by position `0..candidate_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub question_id: String,
    pub candidate_count: usize,
    /// Index of the human-derived answer.
    pub gt_index: usize,
    /// Fraction of annotators that marked each candidate correct.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevance: Option<Vec<f64>>,
    /// Display labels, never used for scoring.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
}

impl QuestionRecord {
    pub fn new(
        question_id: impl Into<String>,
        candidate_count: usize,
        gt_index: usize,
        relevance: Option<Vec<f64>>,
    ) -> Result<Self, DataError> {
        let record = Self {
            question_id: question_id.into(),
            candidate_count,
            gt_index,
            relevance,
            candidates: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let question_id = || self.question_id.clone();
        if self.candidate_count == 0 {
            return Err(DataError::NoCandidates {
                question_id: question_id(),
            });
        }
        if self.gt_index >= self.candidate_count {
            return Err(DataError::GtOutOfRange {
                question_id: question_id(),
                gt_index: self.gt_index,
                candidate_count: self.candidate_count,
            });
        }
        if let Some(relevance) = &self.relevance {
            if relevance.len() != self.candidate_count {
                return Err(DataError::RelevanceLength {
                    question_id: question_id(),
                    expected: self.candidate_count,
                    found: relevance.len(),
                });
            }
            // NaN fails the range check too.
            if let Some((index, &value)) = relevance
                .iter()
                .enumerate()
                .find(|(_, v)| !(0.0..=1.0).contains(*v))
            {
                return Err(DataError::RelevanceRange {
                    question_id: question_id(),
                    index,
                    value,
                });
            }
        }
        if let Some(labels) = &self.candidates {
            if labels.len() != self.candidate_count {
                return Err(DataError::LabelLength {
                    question_id: question_id(),
                    expected: self.candidate_count,
                    found: labels.len(),
                });
            }
        }
        Ok(())
    }

    /// Display label for a candidate: its text when present, else `#index`.
    pub fn label(&self, candidate: usize) -> String {
        self.candidates
            .as_ref()
            .and_then(|labels| labels.get(candidate).cloned())
            .unwrap_or_else(|| format!("#{candidate}"))
    }
}

/// An ordered, immutable collection of questions with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    questions: Vec<QuestionRecord>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn from_records(questions: Vec<QuestionRecord>) -> Result<Self, DataError> {
        let mut index = HashMap::with_capacity(questions.len());
        for (position, question) in questions.iter().enumerate() {
            question.validate()?;
            if index
                .insert(question.question_id.clone(), position)
                .is_some()
            {
                return Err(DataError::DuplicateQuestion(question.question_id.clone()));
            }
        }
        Ok(Self { questions, index })
    }

    /// Number of questions, `d`.
    pub fn len(&self) -> usize {
        self.questions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn questions(&self) -> &[QuestionRecord] {
        &self.questions
    }

    pub fn get(&self, question_id: &str) -> Option<&QuestionRecord> {
        self.index.get(question_id).map(|&i| &self.questions[i])
    }

    pub fn contains(&self, question_id: &str) -> bool {
        self.index.contains_key(question_id)
    }

    /// True when every question carries dense relevance.
    pub fn fully_annotated(&self) -> bool {
        self.questions.iter().all(|q| q.relevance.is_some())
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for question in &self.questions {
            serde_json::to_writer(&mut writer, question)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Reads an annotation file. Record order is preserved.
pub fn load_dataset<R: BufRead>(source: R) -> Result<Dataset, DataError> {
    let mut questions = Vec::new();
    let mut seen = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QuestionRecord =
            serde_json::from_str(&line).map_err(|e| DataError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        record.validate()?;
        if seen.insert(record.question_id.clone(), line_no).is_some() {
            return Err(DataError::DuplicateQuestion(record.question_id));
        }
        questions.push(record);
    }
    Dataset::from_records(questions)
}

/// Checks that `run` covers exactly the dataset's questions with vectors of
/// the right length.
pub fn validate_run_against_dataset(run: &ModelRun, ds: &Dataset) -> Result<(), DataError> {
    for question in ds.questions() {
        let Some(found) = run.vector_len(&question.question_id) else {
            return Err(DataError::MissingQuestion {
                model_id: run.model_id().to_string(),
                question_id: question.question_id.clone(),
            });
        };
        if found != question.candidate_count {
            return Err(DataError::LengthMismatch {
                model_id: run.model_id().to_string(),
                question_id: question.question_id.clone(),
                expected: question.candidate_count,
                found,
            });
        }
    }
    // Sorted so the reported extra question does not depend on hashing.
    let extra: BTreeSet<&str> = run.question_ids().filter(|id| !ds.contains(id)).collect();
    if let Some(question_id) = extra.into_iter().next() {
        return Err(DataError::ExtraQuestion {
            model_id: run.model_id().to_string(),
            question_id: question_id.to_string(),
        });
    }
    Ok(())
}
