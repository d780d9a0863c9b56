//! Black-box teachers that order (or score) a question's candidate documents.
//!
//! A teacher sees the question and the candidate texts and returns either a
//! [`TeacherRanking`] (a permutation, most relevant first) or
//! [`TeacherScores`] (one relevance value in `[0, 1]` per candidate). The
//! sources are a remote chat-completions model, the synthetic oracle and the
//! lexical metric baselines.

mod oracle;
mod parse;
mod prompt;
mod remote;

pub mod mock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    bm25_scores, rouge2_scores, rule_based_rank, Bm25Params, CandidateSet, CorpusIndex,
};
use crate::error::{Error, Result};
use crate::numkit::Permutation;
use crate::scalar::Scalar;

pub use oracle::{oracle_rank, OracleMode, OracleTeacher};
pub use parse::{parse_rerank_response, parse_score_response, render_ranking};
pub use prompt::{build_rerank_prompt, build_score_prompt, escape_text};
pub use remote::{
    cache_key, CacheRecord, RemoteMode, RemoteStats, RemoteTeacher, ResponseCache,
    TeacherEndpointConfig, CACHE_FILE_NAME, DEFAULT_API_KEY_ENV,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Remote,
    Oracle,
    Bm25,
    Rouge2,
    RuleBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherRanking {
    pub qid: String,
    pub permutation: Permutation,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default)]
    pub repaired: bool,
    /// The teacher never produced a usable answer; the permutation is the identity.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherScores {
    pub qid: String,
    pub scores: Vec<f64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
    #[serde(default)]
    pub fallback: bool,
}

impl TeacherScores {
    pub fn new(qid: String, scores: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if scores.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::invalid("teacher scores must lie in [0, 1]"));
        }
        Ok(Self {
            qid,
            scores,
            provenance,
            raw: None,
            fallback: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSignal {
    Ranking(TeacherRanking),
    Scores(TeacherScores),
}

impl TeacherSignal {
    pub fn len(&self) -> usize {
        match self {
            TeacherSignal::Ranking(r) => r.permutation.len(),
            TeacherSignal::Scores(s) => s.scores.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn repaired(&self) -> bool {
        matches!(self, TeacherSignal::Ranking(r) if r.repaired)
    }

    pub fn fallback(&self) -> bool {
        match self {
            TeacherSignal::Ranking(r) => r.fallback,
            TeacherSignal::Scores(s) => s.fallback,
        }
    }

    /// The ordering this signal implies; scores sort descending, ties by index.
    pub fn permutation(&self) -> Permutation {
        match self {
            TeacherSignal::Ranking(r) => r.permutation.clone(),
            TeacherSignal::Scores(s) => Permutation::by_descending(&s.scores),
        }
    }
}

/// Everything a teacher may look at for one question.
#[derive(Debug, Clone, Copy)]
pub struct TeachRequest<'a> {
    pub qid: &'a str,
    pub question: &'a str,
    pub answers: &'a [String],
    pub candidates: &'a CandidateSet,
    pub texts: &'a [String],
}

pub trait Teacher: Sync {
    fn provenance(&self) -> Provenance;

    fn teach(&self, request: &TeachRequest<'_>) -> Result<TeacherSignal>;

    /// Answers many requests; results come back in request order.
    fn teach_all(&self, requests: &[TeachRequest<'_>]) -> Vec<Result<TeacherSignal>> {
        requests.par_iter().map(|r| self.teach(r)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Bm25,
    Rouge2,
    RuleBased,
}

/// Lexical baselines used as teachers: order candidates by BM25, by ROUGE-2,
/// or answer-bearing documents first.
pub struct MetricTeacher<'a, F> {
    kind: MetricKind,
    index: &'a CorpusIndex<F>,
    bm25: Bm25Params,
}

impl<'a, F: Scalar> MetricTeacher<'a, F> {
    pub fn new(kind: MetricKind, index: &'a CorpusIndex<F>) -> Self {
        Self {
            kind,
            index,
            bm25: Bm25Params::default(),
        }
    }

    pub fn with_bm25(mut self, params: Bm25Params) -> Self {
        self.bm25 = params;
        self
    }
}

impl<F: Scalar> Teacher for MetricTeacher<'_, F> {
    fn provenance(&self) -> Provenance {
        match self.kind {
            MetricKind::Bm25 => Provenance::Bm25,
            MetricKind::Rouge2 => Provenance::Rouge2,
            MetricKind::RuleBased => Provenance::RuleBased,
        }
    }

    fn teach(&self, req: &TeachRequest<'_>) -> Result<TeacherSignal> {
        if req.texts.is_empty() {
            return Err(Error::EmptyInput("candidate list"));
        }
        let permutation = match self.kind {
            MetricKind::Bm25 => Permutation::by_descending(&bm25_scores(
                req.question,
                &req.candidates.doc_ids(),
                self.index,
                self.bm25,
            )?),
            MetricKind::Rouge2 => {
                Permutation::by_descending(&rouge2_scores(req.question, req.texts))
            }
            MetricKind::RuleBased => rule_based_rank(req.texts, req.answers)?,
        };
        Ok(TeacherSignal::Ranking(TeacherRanking {
            qid: req.qid.to_string(),
            permutation,
            provenance: self.provenance(),
            raw: None,
            repaired: false,
            fallback: false,
        }))
    }
}
