//! Documents, questions, dense top-k retrieval and the lexical baselines.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{dot, words, EncoderModel};
use crate::error::{Error, Result};
use crate::numkit::Permutation;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: u64,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub qid: String,
    pub question: String,
    pub answers: Vec<String>,
    pub split: Split,
}

fn read_jsonl<T, V>(path: &Path, mut validate: V) -> Result<Vec<T>>
where
    T: serde::de::DeserializeOwned,
    V: FnMut(&T) -> std::result::Result<(), String>,
{
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let label = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: label.clone(),
            line: i + 1,
            message,
        };
        let record: T = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        validate(&record).map_err(parse_err)?;
        out.push(record);
    }
    Ok(out)
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a JSON-lines file without extra validation.
pub fn read_records<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    read_jsonl(path.as_ref(), |_: &T| Ok(()))
}

pub fn load_examples(path: impl AsRef<Path>) -> Result<Vec<QAExample>> {
    let path = path.as_ref();
    let examples: Vec<QAExample> = read_jsonl(path, |ex: &QAExample| {
        if ex.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if ex.answers.is_empty() {
            return Err("answers must hold at least one string".into());
        }
        Ok(())
    })?;
    let mut seen = HashSet::new();
    for ex in &examples {
        if !seen.insert(ex.qid.as_str()) {
            return Err(Error::Integrity(format!(
                "{}: duplicate qid {:?}",
                path.display(),
                ex.qid
            )));
        }
    }
    Ok(examples)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    let path = path.as_ref();
    let docs: Vec<Document> = read_jsonl(path, |d: &Document| {
        if d.text.trim().is_empty() {
            Err("document text is empty".into())
        } else {
            Ok(())
        }
    })?;
    let mut seen = HashSet::new();
    for d in &docs {
        if !seen.insert(d.id) {
            return Err(Error::Integrity(format!(
                "{}: duplicate document id {}",
                path.display(),
                d.id
            )));
        }
    }
    Ok(docs)
}

/// Documents with id lookup.
#[derive(Debug, Clone)]
pub struct Corpus {
    docs: Vec<Document>,
    by_id: HashMap<u64, usize>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.id, i).is_some() {
                return Err(Error::Integrity(format!("duplicate document id {}", d.id)));
            }
        }
        Ok(Self { docs, by_id })
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn get(&self, id: u64) -> Option<&Document> {
        self.position(id).map(|i| &self.docs[i])
    }

    pub fn text(&self, id: u64) -> Result<&str> {
        self.get(id)
            .map(|d| d.text.as_str())
            .ok_or_else(|| Error::Integrity(format!("unknown document id {id}")))
    }
}

/// Term statistics for the lexical baselines.
#[derive(Debug, Clone)]
pub struct LexicalStats {
    pub doc_freq: HashMap<String, u32>,
    pub term_counts: Vec<HashMap<String, u32>>,
    pub doc_len: Vec<usize>,
    pub avg_doc_len: f64,
}

impl LexicalStats {
    pub fn from_docs(docs: &[Document]) -> Self {
        let term_counts: Vec<HashMap<String, u32>> = docs
            .iter()
            .map(|d| {
                let mut tc = HashMap::new();
                for w in words(&d.text) {
                    *tc.entry(w).or_insert(0) += 1;
                }
                tc
            })
            .collect();
        let doc_len: Vec<usize> = term_counts
            .iter()
            .map(|tc| tc.values().map(|&c| c as usize).sum())
            .collect();
        let mut doc_freq = HashMap::new();
        for tc in &term_counts {
            for term in tc.keys() {
                *doc_freq.entry(term.clone()).or_insert(0) += 1;
            }
        }
        let avg_doc_len = if docs.is_empty() {
            0.0
        } else {
            doc_len.iter().sum::<usize>() as f64 / docs.len() as f64
        };
        Self {
            doc_freq,
            term_counts,
            doc_len,
            avg_doc_len,
        }
    }
}

/// Encoded corpus plus lexical statistics. Immutable once built.
#[derive(Debug, Clone)]
pub struct CorpusIndex<F> {
    corpus: Corpus,
    dim: usize,
    vectors: Vec<F>,
    lexical: LexicalStats,
    max_len: usize,
}

pub fn build_index<F: Scalar>(
    docs: Vec<Document>,
    model: &EncoderModel<F>,
    max_len: usize,
) -> Result<CorpusIndex<F>> {
    if docs.is_empty() {
        return Err(Error::invalid("cannot index an empty corpus"));
    }
    let corpus = Corpus::new(docs)?;
    let encoded: Vec<Vec<F>> = corpus
        .docs()
        .par_iter()
        .map(|d| model.encode(&model.tokenize(&d.text, max_len)?))
        .collect::<Result<_>>()?;
    let lexical = LexicalStats::from_docs(corpus.docs());
    Ok(CorpusIndex {
        dim: model.dim(),
        vectors: encoded.into_iter().flatten().collect(),
        lexical,
        corpus,
        max_len,
    })
}

impl<F: Scalar> CorpusIndex<F> {
    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn lexical(&self) -> &LexicalStats {
        &self.lexical
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }

    pub fn vector(&self, pos: usize) -> &[F] {
        &self.vectors[pos * self.dim..(pos + 1) * self.dim]
    }

    /// Re-encodes every document with `model`, keeping the lexical statistics.
    pub fn reencode(&self, model: &EncoderModel<F>) -> Result<Self> {
        build_index(self.corpus.docs().to_vec(), model, self.max_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub doc_id: u64,
    pub score: f64,
}

/// The `k` retrieved documents for one question, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub qid: String,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<u64> {
        self.candidates.iter().map(|c| c.doc_id).collect()
    }

    /// Descending scores, ties by ascending id, distinct ids.
    pub fn is_well_ordered(&self) -> bool {
        let distinct: HashSet<u64> = self.candidates.iter().map(|c| c.doc_id).collect();
        distinct.len() == self.candidates.len()
            && self.candidates.windows(2).all(|w| {
                w[0].score > w[1].score || (w[0].score == w[1].score && w[0].doc_id < w[1].doc_id)
            })
    }
}

fn rank_order<F: Scalar>(a: &(F, u64), b: &(F, u64)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.cmp(&b.1))
}

/// Exact top-k by dot product against an already encoded query.
pub fn retrieve_topk_vector<F: Scalar>(
    index: &CorpusIndex<F>,
    qid: &str,
    query: &[F],
    k: usize,
) -> Result<CandidateSet> {
    let m = index.len();
    if k == 0 || k > m {
        return Err(Error::invalid(format!("k must lie in 1..={m}, got {k}")));
    }
    let mut scored: Vec<(F, u64)> = index
        .corpus
        .docs()
        .iter()
        .enumerate()
        .map(|(pos, d)| (dot(query, index.vector(pos)), d.id))
        .collect();
    if k < m {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    Ok(CandidateSet {
        qid: qid.to_string(),
        candidates: scored
            .into_iter()
            .map(|(s, id)| Candidate {
                doc_id: id,
                score: s.as_f64(),
            })
            .collect(),
    })
}

pub fn retrieve_topk<F: Scalar>(
    index: &CorpusIndex<F>,
    model: &EncoderModel<F>,
    qid: &str,
    question: &str,
    k: usize,
) -> Result<CandidateSet> {
    let q = model.encode(&model.tokenize(question, index.max_len)?)?;
    retrieve_topk_vector(index, qid, &q, k)
}

/// Top-k for many questions, in input order.
pub fn retrieve_all<F: Scalar>(
    index: &CorpusIndex<F>,
    model: &EncoderModel<F>,
    examples: &[QAExample],
    k: usize,
) -> Result<Vec<CandidateSet>> {
    examples
        .par_iter()
        .map(|ex| retrieve_topk(index, model, &ex.qid, &ex.question, k))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

/// Okapi BM25 of `question` against each candidate document.
///
/// Each distinct query term counts once; `idf = ln(1 + (N − df + 0.5)/(df + 0.5))`.
pub fn bm25_scores<F: Scalar>(
    question: &str,
    doc_ids: &[u64],
    index: &CorpusIndex<F>,
    params: Bm25Params,
) -> Result<Vec<f64>> {
    let stats = &index.lexical;
    let n = index.len() as f64;
    let mut terms: Vec<String> = words(question).collect();
    terms.sort();
    terms.dedup();
    doc_ids
        .iter()
        .map(|&id| {
            let pos = index
                .corpus
                .position(id)
                .ok_or_else(|| Error::Integrity(format!("unknown document id {id}")))?;
            let tc = &stats.term_counts[pos];
            let len_norm =
                1.0 - params.b + params.b * stats.doc_len[pos] as f64 / stats.avg_doc_len;
            Ok(terms
                .iter()
                .filter_map(|t| {
                    let tf = f64::from(*tc.get(t)?);
                    let df = f64::from(stats.doc_freq[t]);
                    let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
                    Some(idf * tf * (params.k1 + 1.0) / (tf + params.k1 * len_norm))
                })
                .sum())
        })
        .collect()
}

fn bigrams(text: &str) -> HashMap<(String, String), u32> {
    let ws: Vec<String> = words(text).collect();
    let mut out = HashMap::new();
    for w in ws.windows(2) {
        *out.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
    }
    out
}

/// ROUGE-2 F1 between `question` and each candidate text, with clipped bigram counts.
pub fn rouge2_scores<S: AsRef<str>>(question: &str, texts: &[S]) -> Vec<f64> {
    let q = bigrams(question);
    let q_total: u32 = q.values().sum();
    texts
        .iter()
        .map(|t| {
            let d = bigrams(t.as_ref());
            let d_total: u32 = d.values().sum();
            if q_total == 0 || d_total == 0 {
                return 0.0;
            }
            let overlap: u32 = q
                .iter()
                .map(|(bg, &c)| c.min(*d.get(bg).unwrap_or(&0)))
                .sum();
            if overlap == 0 {
                return 0.0;
            }
            let p = f64::from(overlap) / f64::from(d_total);
            let r = f64::from(overlap) / f64::from(q_total);
            2.0 * p * r / (p + r)
        })
        .collect()
}

/// Lowercase, punctuation replaced by spaces, whitespace collapsed.
pub fn normalize_for_match(text: &str) -> String {
    words(text).collect::<Vec<_>>().join(" ")
}

/// True iff some normalized answer occurs in the normalized text on token boundaries.
pub fn contains_answer<S: AsRef<str>>(text: &str, answers: &[S]) -> bool {
    let hay = format!(" {} ", normalize_for_match(text));
    answers.iter().any(|a| {
        let needle = normalize_for_match(a.as_ref());
        !needle.is_empty() && hay.contains(&format!(" {needle} "))
    })
}

/// Stable partition: answer-bearing candidates first, both groups in original order.
pub fn rule_based_rank<S: AsRef<str>>(texts: &[S], answers: &[S]) -> Result<Permutation> {
    if texts.is_empty() {
        return Err(Error::EmptyInput("candidate list"));
    }
    let flags: Vec<bool> = texts
        .iter()
        .map(|t| contains_answer(t.as_ref(), answers))
        .collect();
    rule_based_from_flags(&flags)
}

pub fn rule_based_from_flags(flags: &[bool]) -> Result<Permutation> {
    let (hits, misses): (Vec<usize>, Vec<usize>) = (0..flags.len()).partition(|&i| flags[i]);
    Permutation::new(hits.into_iter().chain(misses).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataCategory {
    FollowingAnswer,
    FirstAnswer,
    NoAnswer,
}

impl DataCategory {
    pub const ALL: [DataCategory; 3] = [
        DataCategory::FollowingAnswer,
        DataCategory::FirstAnswer,
        DataCategory::NoAnswer,
    ];

    pub fn from_flags(flags: &[bool]) -> Self {
        match flags.iter().position(|&f| f) {
            None => DataCategory::NoAnswer,
            Some(0) => DataCategory::FirstAnswer,
            Some(_) => DataCategory::FollowingAnswer,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DataCategory::FollowingAnswer => "following_answer",
            DataCategory::FirstAnswer => "first_answer",
            DataCategory::NoAnswer => "no_answer",
        }
    }
}

impl std::str::FromStr for DataCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DataCategory::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown data category {s:?}")))
    }
}

/// Categorizes candidate texts given in retrieval order.
pub fn categorize<S: AsRef<str>>(texts: &[S], answers: &[S]) -> DataCategory {
    let flags: Vec<bool> = texts
        .iter()
        .map(|t| contains_answer(t.as_ref(), answers))
        .collect();
    DataCategory::from_flags(&flags)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::Role;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: i as u64,
                text: t.to_string(),
            })
            .collect()
    }

    fn model() -> EncoderModel<f64> {
        EncoderModel::uniform(Role::Retriever, 8, 64, 1).unwrap()
    }

    #[test]
    fn load_files() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.jsonl");
        fs::write(&empty, "").unwrap();
        assert!(load_examples(&empty).unwrap().is_empty());
        assert!(load_corpus(&empty).unwrap().is_empty());

        let ok = dir.path().join("ok.jsonl");
        let lines: Vec<String> = (0..3)
            .map(|i| {
                format!(
                    r#"{{"qid":"q{i}","question":"who {i}","answers":["a{i}"],"split":"train"}}"#
                )
            })
            .collect();
        fs::write(&ok, lines.join("\n")).unwrap();
        let ex = load_examples(&ok).unwrap();
        assert_eq!(
            ex.iter().map(|e| e.qid.as_str()).collect::<Vec<_>>(),
            ["q0", "q1", "q2"]
        );

        let bad = dir.path().join("bad.jsonl");
        fs::write(
            &bad,
            format!(
                "{}\n{}\n",
                lines[0], r#"{"qid":"q9","question":"x","split":"test"}"#
            ),
        )
        .unwrap();
        match load_examples(&bad) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("answers"), "{message}");
            }
            other => panic!("{other:?}"),
        }

        let no_answers = dir.path().join("na.jsonl");
        fs::write(
            &no_answers,
            r#"{"qid":"q","question":"x","answers":[],"split":"test"}"#,
        )
        .unwrap();
        assert!(matches!(
            load_examples(&no_answers),
            Err(Error::Parse { line: 1, .. })
        ));

        let dup = dir.path().join("dup.jsonl");
        fs::write(
            &dup,
            "{\"id\":1,\"text\":\"a\"}\n{\"id\":1,\"text\":\"b\"}\n",
        )
        .unwrap();
        assert!(matches!(load_corpus(&dup), Err(Error::Integrity(_))));
    }

    #[test]
    fn index_basics() {
        let m = model();
        let idx = build_index(docs(&["alpha beta"]), &m, 128).unwrap();
        assert_eq!(idx.len(), 1);
        assert!(build_index(Vec::new(), &m, 128).is_err());

        let d = docs(&["a b c", "a b", "one two three four five"]);
        let a = build_index(d.clone(), &m, 128).unwrap();
        let b = build_index(d, &m, 128).unwrap();
        assert_eq!(a.vectors, b.vectors);
        assert!((a.lexical().avg_doc_len - 10.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn retrieval_examples() {
        let m = model();
        let texts = ["red fox", "blue whale", "green frog", "red whale"];
        let idx = build_index(docs(&texts), &m, 128).unwrap();
        let all = retrieve_topk(&idx, &m, "q", "red whale", 4).unwrap();
        assert_eq!(all.len(), 4);
        assert!(all.is_well_ordered());
        assert!(retrieve_topk(&idx, &m, "q", "red", 5).is_err());
        assert!(retrieve_topk(&idx, &m, "q", "red", 0).is_err());

        let zero = EncoderModel::<f64>::zeros(Role::Retriever, 8, 64).unwrap();
        let zidx = build_index(docs(&texts), &zero, 128).unwrap();
        let top = retrieve_topk(&zidx, &zero, "q", "red", 2).unwrap();
        assert_eq!(top.doc_ids(), vec![0, 1]);
    }

    #[test]
    fn bm25_examples() {
        let m = model();
        let single = build_index(docs(&["paris"]), &m, 128).unwrap();
        let s = bm25_scores("paris", &[0], &single, Bm25Params::default()).unwrap();
        assert!((s[0] - (4.0f64 / 3.0).ln()).abs() < 1e-12);
        assert!((s[0] - 0.28768).abs() < 1e-5);

        let idx = build_index(
            docs(&["x y z w", "paris y z w", "paris paris z w", "k l m n"]),
            &m,
            128,
        )
        .unwrap();
        let s = bm25_scores("paris", &[0, 1, 2], &idx, Bm25Params::default()).unwrap();
        assert_eq!(s[0], 0.0);
        assert!(s[2] > s[1]);
        assert!(s[2] < 2.0 * s[1]);
        assert!(bm25_scores("paris", &[99], &idx, Bm25Params::default()).is_err());
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge2_scores("a b c", &["a b c"]), vec![1.0]);
        assert_eq!(rouge2_scores("a b c", &["c b a"]), vec![0.0]);
        assert_eq!(rouge2_scores("a b c", &["a b d"]), vec![0.5]);
        assert_eq!(rouge2_scores("a", &["a b"]), vec![0.0]);
    }

    #[test]
    fn containment_examples() {
        assert!(contains_answer("He was born in Paris in 1900.", &["Paris"]));
        assert!(!contains_answer("a comparison", &["par"]));
        assert!(contains_answer("only y.", &["X", "Y"]));
        assert!(contains_answer("The U.S. Army", &["u s army"]));
        assert!(!contains_answer("anything", &["?!"]));
    }

    #[test]
    fn rule_based_examples() {
        let p = rule_based_from_flags(&[false, true, false]).unwrap();
        assert_eq!(p.one_based(), vec![2, 1, 3]);
        assert_eq!(
            rule_based_from_flags(&[false; 4]).unwrap(),
            Permutation::identity(4)
        );
        assert_eq!(
            rule_based_from_flags(&[true; 4]).unwrap(),
            Permutation::identity(4)
        );
        let p = rule_based_rank(&["nothing", "has paris", "nope"], &["paris"]).unwrap();
        assert_eq!(p.one_based(), vec![2, 1, 3]);
        assert!(rule_based_rank::<&str>(&[], &["x"]).is_err());
    }

    #[test]
    fn categories() {
        assert_eq!(
            DataCategory::from_flags(&[true, false, true]),
            DataCategory::FirstAnswer
        );
        assert_eq!(
            DataCategory::from_flags(&[false, true, false, false, false]),
            DataCategory::FollowingAnswer
        );
        assert_eq!(
            DataCategory::from_flags(&[false; 5]),
            DataCategory::NoAnswer
        );
        assert_eq!(
            categorize(&["x", "the answer"], &["answer"]),
            DataCategory::FollowingAnswer
        );
        for c in DataCategory::ALL {
            assert_eq!(c.name().parse::<DataCategory>().unwrap(), c);
        }
    }
}
