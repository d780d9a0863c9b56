//! Retrieval and answer metrics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{contains_answer, CandidateSet, Corpus, QAExample};
use crate::error::{Error, Result};
use crate::numkit::Permutation;

pub type RetrievalResult = CandidateSet;

/// Fraction of questions whose top `k` documents contain an answer.
pub fn hit_rate(
    results: &[RetrievalResult],
    examples: &[QAExample],
    corpus: &Corpus,
    k: usize,
) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::EmptyInput("retrieval results"));
    }
    let hits = hit_flags(results, examples, corpus, k)?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / hits.len() as f64)
}

/// Per-result hit indicator at cutoff `k`, in result order.
pub fn hit_flags(
    results: &[RetrievalResult],
    examples: &[QAExample],
    corpus: &Corpus,
    k: usize,
) -> Result<Vec<bool>> {
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let answers: HashMap<&str, &[String]> = examples
        .iter()
        .map(|e| (e.qid.as_str(), e.answers.as_slice()))
        .collect();
    results
        .iter()
        .map(|r| {
            let ans = answers
                .get(r.qid.as_str())
                .ok_or_else(|| Error::Integrity(format!("no example for qid {}", r.qid)))?;
            if r.len() < k {
                return Err(Error::invalid(format!(
                    "{} has {} retrieved documents, fewer than k = {k}",
                    r.qid,
                    r.len()
                )));
            }
            for c in &r.candidates[..k] {
                if contains_answer(corpus.text(c.doc_id)?, ans) {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect()
}

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(text: &str) -> String {
    let lowered: String = text
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn exact_match<S: AsRef<str>>(prediction: &str, answers: &[S]) -> f64 {
    let p = normalize_answer(prediction);
    if answers.iter().any(|a| normalize_answer(a.as_ref()) == p) {
        1.0
    } else {
        0.0
    }
}

fn token_f1(prediction: &str, truth: &str) -> f64 {
    let p = normalize_answer(prediction);
    let t = normalize_answer(truth);
    let p: Vec<&str> = p.split_whitespace().collect();
    let t: Vec<&str> = t.split_whitespace().collect();
    if p.is_empty() || t.is_empty() {
        return if p.is_empty() && t.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in &t {
        *counts.entry(w).or_insert(0) += 1;
    }
    let mut common = 0;
    for w in &p {
        if let Some(c) = counts.get_mut(w) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / t.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best token-level F1 over the gold answers (multiset overlap).
pub fn f1<S: AsRef<str>>(prediction: &str, answers: &[S]) -> f64 {
    answers
        .iter()
        .map(|a| token_f1(prediction, a.as_ref()))
        .fold(0.0, f64::max)
}

/// Spearman's rho between the positions items receive in two orderings.
pub fn spearman(a: &Permutation, b: &Permutation) -> Result<f64> {
    let k = a.len();
    if k != b.len() {
        return Err(Error::invalid(format!(
            "orderings of length {k} and {}",
            b.len()
        )));
    }
    if k < 2 {
        return Err(Error::invalid("spearman needs at least two items"));
    }
    let pa = a.positions();
    let pb = b.positions();
    let d2: f64 = pa
        .iter()
        .zip(&pb)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    let k = k as f64;
    Ok(1.0 - 6.0 * d2 / (k * (k * k - 1.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpearmanSummary {
    pub per_question: Vec<f64>,
    pub mean: f64,
    /// Counts over `[-1, 1]` in buckets of width 0.1; rho = 1 lands in the last one.
    pub histogram: Vec<usize>,
}

impl SpearmanSummary {
    pub fn from_values(per_question: Vec<f64>) -> Self {
        let mut histogram = vec![0; 20];
        for &rho in &per_question {
            let b = (((rho + 1.0) / 0.1).floor() as isize).clamp(0, 19) as usize;
            histogram[b] += 1;
        }
        let mean = if per_question.is_empty() {
            0.0
        } else {
            per_question.iter().sum::<f64>() / per_question.len() as f64
        };
        Self {
            per_question,
            mean,
            histogram,
        }
    }
}

/// Agreement between re-ranking answers and score answers for the same questions.
pub fn compare_teacher_signals(
    rankings: &[Permutation],
    score_vectors: &[Vec<f64>],
) -> Result<SpearmanSummary> {
    if rankings.len() != score_vectors.len() {
        return Err(Error::Integrity(format!(
            "{} rankings but {} score vectors",
            rankings.len(),
            score_vectors.len()
        )));
    }
    let values = rankings
        .iter()
        .zip(score_vectors)
        .enumerate()
        .map(|(i, (r, s))| {
            if r.len() != s.len() {
                return Err(Error::Integrity(format!(
                    "question {i}: ranking of {} items, {} scores",
                    r.len(),
                    s.len()
                )));
            }
            spearman(r, &Permutation::by_descending(s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpearmanSummary::from_values(values))
}

/// Aggregated metrics for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub questions: usize,
    pub hit_rates: BTreeMap<usize, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
    #[serde(default)]
    pub config: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new(
        results: &[RetrievalResult],
        examples: &[QAExample],
        corpus: &Corpus,
        ks: &[usize],
    ) -> Result<Self> {
        let hit_rates = ks
            .iter()
            .map(|&k| Ok((k, hit_rate(results, examples, corpus, k)?)))
            .collect::<Result<_>>()?;
        Ok(Self {
            questions: results.len(),
            hit_rates,
            exact_match: None,
            f1: None,
            config: BTreeMap::new(),
        })
    }

    /// Adds mean EM and F1 over `(prediction, answers)` pairs.
    pub fn with_answers(mut self, pairs: &[(String, Vec<String>)]) -> Self {
        if !pairs.is_empty() {
            let n = pairs.len() as f64;
            self.exact_match = Some(pairs.iter().map(|(p, a)| exact_match(p, a)).sum::<f64>() / n);
            self.f1 = Some(pairs.iter().map(|(p, a)| f1(p, a)).sum::<f64>() / n);
        }
        self
    }

    pub fn hr(&self, k: usize) -> Option<f64> {
        self.hit_rates.get(&k).copied()
    }

    /// Plain-text table: HR@k columns ascending, then EM and F1.
    pub fn render_table(&self, label: &str) -> String {
        let mut header = vec![format!("{:<24}", "run")];
        let mut row = vec![format!("{label:<24}")];
        for (k, v) in &self.hit_rates {
            header.push(format!("{:>8}", format!("HR@{k}")));
            row.push(format!("{v:>8.4}"));
        }
        for (name, v) in [("EM", self.exact_match), ("F1", self.f1)] {
            header.push(format!("{name:>8}"));
            row.push(match v {
                Some(v) => format!("{v:>8.4}"),
                None => format!("{:>8}", "-"),
            });
        }
        format!("{}\n{}\n", header.join(" "), row.join(" "))
    }
}
