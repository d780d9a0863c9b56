//! Synthetic retrieval world with known ground truth.
//!
//! Every document carries a hidden topic profile: a dominant topic, a
//! secondary topic, optional weight on the dominant topic's ring neighbors
//! and a faint dense background. Its text is sampled from that profile (topic
//! words plus shared filler words). Each question is written from the profile
//! of one gold document, and its answer is a unique token planted in that
//! document. Latent relevance of a document to a question is the cosine of
//! their realized topic-word counts, so it is graded and readable from the
//! text once word topics are known. Questions are redrawn until the gold
//! document is the unique maximum.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{categorize, CandidateSet, Corpus, DataCategory, Document, QAExample, Split};
use crate::error::{Error, Result};
use crate::seed;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const EXAMPLES_FILE: &str = "examples.jsonl";
pub const LATENT_FILE: &str = "latent.tsv";

const MAX_QUESTION_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_train: usize,
    pub num_valid: usize,
    pub num_test: usize,
    pub vocab_size: usize,
    pub topics: usize,
    /// Share of the vocabulary used as topic-neutral filler words.
    pub filler_fraction: f64,
    pub doc_len: usize,
    pub question_len: usize,
    /// Probability that a document token is a filler word.
    pub doc_filler_rate: f64,
    /// Probability that a question token is a filler word.
    pub question_filler_rate: f64,
    /// Weight of the secondary topic relative to the dominant one.
    pub secondary_weight: f64,
    /// Maximum per-topic weight of the dense background.
    pub background: f64,
    /// Weight of the topics adjacent to the dominant one on the topic ring.
    pub neighbor_weight: f64,
    /// Factor applied to the neighbor weight per further step around the ring.
    pub neighbor_decay: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_docs: 2000,
            num_train: 1000,
            num_valid: 200,
            num_test: 500,
            vocab_size: 1000,
            topics: 50,
            filler_fraction: 0.3,
            doc_len: 40,
            question_len: 20,
            doc_filler_rate: 0.1,
            question_filler_rate: 0.1,
            secondary_weight: 0.6,
            background: 0.05,
            neighbor_weight: 0.0,
            neighbor_decay: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn num_questions(&self) -> usize {
        self.num_train + self.num_valid + self.num_test
    }

    fn validate(&self) -> Result<()> {
        let filler = (self.vocab_size as f64 * self.filler_fraction).round() as usize;
        let positive = [
            ("num_docs", self.num_docs),
            ("vocab_size", self.vocab_size),
            ("topics", self.topics),
            ("doc_len", self.doc_len),
            ("question_len", self.question_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.topics < 2 {
            return Err(Error::invalid("need at least two topics"));
        }
        if self.topics > self.vocab_size - filler || filler == 0 {
            return Err(Error::invalid(
                "vocabulary too small for the topic count and filler fraction",
            ));
        }
        for (name, p) in [
            ("filler_fraction", self.filler_fraction),
            ("doc_filler_rate", self.doc_filler_rate),
            ("question_filler_rate", self.question_filler_rate),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.neighbor_weight >= 0.0) || !(0.0..1.0).contains(&self.neighbor_decay) {
            return Err(Error::invalid(
                "neighbor_weight must be >= 0 and neighbor_decay in [0, 1)",
            ));
        }
        if !(self.secondary_weight >= 0.0) || !(self.background > 0.0) {
            return Err(Error::invalid(
                "secondary_weight must be >= 0 and background > 0",
            ));
        }
        Ok(())
    }
}

/// Hidden relevance of every document to every question.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRelevance {
    doc_ids: Vec<u64>,
    position: HashMap<u64, usize>,
    rows: HashMap<String, Vec<f64>>,
}

impl LatentRelevance {
    pub fn new(doc_ids: Vec<u64>) -> Self {
        let position = doc_ids.iter().enumerate().map(|(i, &d)| (d, i)).collect();
        Self {
            doc_ids,
            position,
            rows: HashMap::new(),
        }
    }

    pub fn doc_ids(&self) -> &[u64] {
        &self.doc_ids
    }

    pub fn num_questions(&self) -> usize {
        self.rows.len()
    }

    /// Sets the relevance of every document (in `doc_ids` order) for `qid`.
    pub fn insert(&mut self, qid: String, row: Vec<f64>) -> Result<()> {
        if row.len() != self.doc_ids.len() {
            return Err(Error::invalid(format!(
                "latent row for {qid} has {} values, corpus has {}",
                row.len(),
                self.doc_ids.len()
            )));
        }
        self.rows.insert(qid, row);
        Ok(())
    }

    pub fn get(&self, qid: &str, doc_id: u64) -> Result<f64> {
        let row = self
            .rows
            .get(qid)
            .ok_or_else(|| Error::Integrity(format!("no latent relevance for question {qid}")))?;
        self.position
            .get(&doc_id)
            .map(|&p| row[p])
            .filter(|v| v.is_finite())
            .ok_or_else(|| {
                Error::Integrity(format!("no latent relevance for ({qid}, doc {doc_id})"))
            })
    }

    pub fn lookup_all(&self, qid: &str, doc_ids: &[u64]) -> Result<Vec<f64>> {
        doc_ids.iter().map(|&d| self.get(qid, d)).collect()
    }

    pub fn row(&self, qid: &str) -> Option<&[f64]> {
        self.rows.get(qid).map(Vec::as_slice)
    }

    /// One `qid<TAB>doc_id<TAB>relevance` line per pair, questions in sorted order.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut qids: Vec<&String> = self.rows.keys().collect();
        qids.sort();
        for qid in qids {
            for (d, v) in self.doc_ids.iter().zip(&self.rows[qid]) {
                if v.is_finite() {
                    writeln!(w, "{qid}\t{d}\t{v}").map_err(|e| Error::io(path, e))?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a sidecar file. Pairs absent from the file stay undefined and
    /// surface as integrity errors on lookup.
    pub fn read_tsv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let label = path.display().to_string();
        let mut triples = Vec::new();
        let mut doc_ids = Vec::new();
        let mut seen_docs = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: &str| Error::Parse {
                path: label.clone(),
                line: i + 1,
                message: message.to_string(),
            };
            let mut parts = line.split('\t');
            let (Some(qid), Some(doc), Some(rel), None) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(err("expected qid, doc id and relevance separated by tabs"));
            };
            let doc: u64 = doc.parse().map_err(|_| err("doc id is not an integer"))?;
            let rel: f64 = rel.parse().map_err(|_| err("relevance is not a number"))?;
            if !rel.is_finite() {
                return Err(err("relevance must be finite"));
            }
            if seen_docs.insert(doc, ()).is_none() {
                doc_ids.push(doc);
            }
            triples.push((qid.to_string(), doc, rel));
        }
        doc_ids.sort_unstable();
        let mut out = Self::new(doc_ids);
        let m = out.doc_ids.len();
        for (qid, doc, rel) in triples {
            let p = out.position[&doc];
            out.rows.entry(qid).or_insert_with(|| vec![f64::NAN; m])[p] = rel;
        }
        Ok(out)
    }
}

/// A generated corpus, its questions and the hidden relevance table.
#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub corpus: Vec<Document>,
    pub examples: Vec<QAExample>,
    pub latent: LatentRelevance,
    pub gold: HashMap<String, u64>,
}

impl SynthWorld {
    pub fn split(&self, split: Split) -> Vec<QAExample> {
        self.examples
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect()
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::corpus::write_jsonl(dir.join(CORPUS_FILE), &self.corpus)?;
        crate::corpus::write_jsonl(dir.join(EXAMPLES_FILE), &self.examples)?;
        self.latent.write_tsv(dir.join(LATENT_FILE))
    }
}

struct Vocabulary {
    topic_words: Vec<Vec<String>>,
    filler: Vec<String>,
}

impl Vocabulary {
    fn new(cfg: &SynthConfig) -> Self {
        let filler_n = (cfg.vocab_size as f64 * cfg.filler_fraction).round() as usize;
        let per_topic = (cfg.vocab_size - filler_n) / cfg.topics;
        Self {
            topic_words: (0..cfg.topics)
                .map(|t| (0..per_topic).map(|j| format!("t{t}w{j}")).collect())
                .collect(),
            filler: (0..filler_n).map(|j| format!("f{j}")).collect(),
        }
    }
}

/// Unnormalized topic weights.
struct Profile {
    weights: Vec<f64>,
}

fn draw_profile(cfg: &SynthConfig, rng: &mut impl Rng) -> Profile {
    let mut weights: Vec<f64> = (0..cfg.topics)
        .map(|_| rng.random::<f64>() * cfg.background)
        .collect();
    let primary = rng.random_range(0..cfg.topics);
    let mut secondary = rng.random_range(0..cfg.topics - 1);
    if secondary >= primary {
        secondary += 1;
    }
    if cfg.neighbor_weight > 0.0 {
        for (t, w) in weights.iter_mut().enumerate() {
            let d = t.abs_diff(primary);
            let d = d.min(cfg.topics - d);
            if d > 0 {
                *w += cfg.neighbor_weight * cfg.neighbor_decay.powi(d as i32 - 1);
            }
        }
    }
    weights[primary] += 1.0;
    weights[secondary] += cfg.secondary_weight;
    Profile { weights }
}

/// Sampled words and the unit vector of their topic counts (filler excluded).
struct Text {
    words: Vec<String>,
    topics: Vec<f64>,
}

fn topic_word(vocab: &Vocabulary, topic: usize, rng: &mut impl Rng) -> String {
    let words = &vocab.topic_words[topic];
    words[rng.random_range(0..words.len())].clone()
}

fn filler_word(vocab: &Vocabulary, rng: &mut impl Rng) -> String {
    vocab.filler[rng.random_range(0..vocab.filler.len())].clone()
}

fn unit(mut counts: Vec<f64>) -> Vec<f64> {
    let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.iter_mut().for_each(|c| *c /= norm);
    }
    counts
}

/// Each token independently: filler with probability `filler_rate`, else a
/// word of a topic drawn from the profile.
fn sample_text(
    profile: &Profile,
    vocab: &Vocabulary,
    len: usize,
    filler_rate: f64,
    rng: &mut impl Rng,
) -> Text {
    let total: f64 = profile.weights.iter().sum();
    let mut counts = vec![0.0; profile.weights.len()];
    let words = (0..len)
        .map(|_| {
            if rng.random::<f64>() < filler_rate {
                return filler_word(vocab, rng);
            }
            let mut u = rng.random::<f64>() * total;
            let mut topic = profile.weights.len() - 1;
            for (t, w) in profile.weights.iter().enumerate() {
                if u < *w {
                    topic = t;
                    break;
                }
                u -= w;
            }
            counts[topic] += 1.0;
            topic_word(vocab, topic, rng)
        })
        .collect();
    Text {
        words,
        topics: unit(counts),
    }
}

/// Fixed composition: `round(len * filler_rate)` filler words and topic word
/// counts proportional to the profile (largest remainder), in shuffled order.
/// Documents with the same profile shape then have the same topic-count norm.
fn stratified_text(
    profile: &Profile,
    vocab: &Vocabulary,
    len: usize,
    filler_rate: f64,
    rng: &mut impl Rng,
) -> Text {
    let n_filler = ((len as f64 * filler_rate).round() as usize).min(len - 1);
    let n_topic = len - n_filler;
    let total: f64 = profile.weights.iter().sum();
    let quotas: Vec<f64> = profile
        .weights
        .iter()
        .map(|w| w / total * n_topic as f64)
        .collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder: Vec<usize> = (0..quotas.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a].fract(), quotas[b].fract());
        rb.partial_cmp(&ra)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let short = n_topic - counts.iter().sum::<usize>();
    for &t in by_remainder.iter().take(short) {
        counts[t] += 1;
    }
    let mut words: Vec<String> = (0..n_filler).map(|_| filler_word(vocab, rng)).collect();
    for (t, &c) in counts.iter().enumerate() {
        words.extend((0..c).map(|_| topic_word(vocab, t, rng)));
    }
    words.shuffle(rng);
    Text {
        words,
        topics: unit(counts.into_iter().map(|c| c as f64).collect()),
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Builds the world. Relevance of a document to a question is the cosine of
/// their realized topic counts. A question is redrawn from its gold
/// document's profile until the gold document is the strict maximum.
pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let vocab = Vocabulary::new(cfg);
    let mut rng = seed::rng(seed::child(cfg.seed, "synth"));

    let profiles: Vec<Profile> = (0..cfg.num_docs)
        .map(|_| draw_profile(cfg, &mut rng))
        .collect();
    let docs: Vec<Text> = profiles
        .iter()
        .map(|p| stratified_text(p, &vocab, cfg.doc_len, cfg.doc_filler_rate, &mut rng))
        .collect();
    let mut doc_words: Vec<Vec<String>> = docs.iter().map(|d| d.words.clone()).collect();

    // Gold documents are drawn without replacement, cycling if questions outnumber documents.
    let n_q = cfg.num_questions();
    let mut gold_pos = Vec::with_capacity(n_q);
    while gold_pos.len() < n_q {
        let mut perm: Vec<usize> = (0..cfg.num_docs).collect();
        perm.shuffle(&mut rng);
        gold_pos.extend(perm.into_iter().take(n_q - gold_pos.len()));
    }

    let doc_ids: Vec<u64> = (0..cfg.num_docs as u64).collect();
    let mut latent = LatentRelevance::new(doc_ids.clone());
    let mut examples = Vec::with_capacity(n_q);
    let mut gold = HashMap::with_capacity(n_q);
    for (i, &g) in gold_pos.iter().enumerate() {
        let qid = format!("q{i:05}");
        let answer = format!("ans{i:05}");
        let (question, row) = (0..MAX_QUESTION_DRAWS)
            .find_map(|_| {
                let q = sample_text(
                    &profiles[g],
                    &vocab,
                    cfg.question_len,
                    cfg.question_filler_rate,
                    &mut rng,
                );
                let row: Vec<f64> = docs.iter().map(|d| dot(&q.topics, &d.topics)).collect();
                let unique_max = row.iter().enumerate().all(|(d, v)| d == g || *v < row[g]);
                unique_max.then_some((q.words, row))
            })
            .ok_or_else(|| {
                Error::Integrity(format!(
                    "no question for {qid} made its gold document the unique relevance maximum"
                ))
            })?;
        let at = rng.random_range(0..=doc_words[g].len());
        doc_words[g].insert(at, answer.clone());
        latent.insert(qid.clone(), row)?;
        gold.insert(qid.clone(), doc_ids[g]);

        let split = if i < cfg.num_train {
            Split::Train
        } else if i < cfg.num_train + cfg.num_valid {
            Split::Valid
        } else {
            Split::Test
        };
        examples.push(QAExample {
            qid,
            question: format!("{}?", question.join(" ")),
            answers: vec![answer],
            split,
        });
    }

    let corpus = doc_ids
        .iter()
        .zip(doc_words)
        .map(|(&id, words)| Document {
            id,
            text: format!("{}.", words.join(" ")),
        })
        .collect();
    Ok(SynthWorld {
        corpus,
        examples,
        latent,
        gold,
    })
}

/// Training examples grouped by the category of their retrieved candidates.
#[derive(Debug, Clone, Default)]
pub struct CategoryMix {
    /// Size of each category before any limit is applied.
    pub counts: BTreeMap<DataCategory, usize>,
    pub groups: BTreeMap<DataCategory, Vec<QAExample>>,
}

impl CategoryMix {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }
}

/// Partitions `examples` by [`categorize`] over their candidate sets and keeps
/// at most `limit` examples per category. Empty categories are reported with
/// a zero count.
pub fn plant_category_mix(
    examples: &[QAExample],
    candidates: &[CandidateSet],
    corpus: &Corpus,
    limit: Option<usize>,
) -> Result<CategoryMix> {
    let by_qid: HashMap<&str, &CandidateSet> =
        candidates.iter().map(|c| (c.qid.as_str(), c)).collect();
    let mut mix = CategoryMix::default();
    for c in DataCategory::ALL {
        mix.counts.insert(c, 0);
        mix.groups.insert(c, Vec::new());
    }
    for ex in examples {
        let cands = by_qid
            .get(ex.qid.as_str())
            .ok_or_else(|| Error::Integrity(format!("no candidates for {}", ex.qid)))?;
        let texts: Vec<&str> = cands
            .doc_ids()
            .into_iter()
            .map(|id| corpus.text(id))
            .collect::<Result<_>>()?;
        let answers: Vec<&str> = ex.answers.iter().map(String::as_str).collect();
        let cat = categorize(&texts, &answers);
        *mix.counts.get_mut(&cat).unwrap() += 1;
        let group = mix.groups.get_mut(&cat).unwrap();
        if limit.is_none_or(|n| group.len() < n) {
            group.push(ex.clone());
        }
    }
    for (c, n) in &mix.counts {
        if *n == 0 {
            log::info!("category {} has no members", c.name());
        }
    }
    Ok(mix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{contains_answer, Candidate};

    fn small() -> SynthConfig {
        SynthConfig {
            num_docs: 200,
            num_train: 40,
            num_valid: 10,
            num_test: 20,
            seed: 9,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.examples, b.examples);
        assert_eq!(a.latent, b.latent);
        let c = generate(&SynthConfig {
            seed: 10,
            ..small()
        })
        .unwrap();
        assert_ne!(a.corpus, c.corpus);
    }

    #[test]
    fn gold_is_unique_argmax_and_holds_answer() {
        let w = generate(&small()).unwrap();
        assert_eq!(w.examples.len(), 70);
        for ex in &w.examples {
            let row = w.latent.row(&ex.qid).unwrap();
            let argmax = (0..row.len())
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            assert_eq!(w.latent.doc_ids()[argmax], w.gold[&ex.qid]);
            let gold_text = &w.corpus[argmax].text;
            assert!(contains_answer(gold_text, &ex.answers));
            let holders = w
                .corpus
                .iter()
                .filter(|d| contains_answer(&d.text, &ex.answers))
                .count();
            assert_eq!(holders, 1);
        }
    }

    #[test]
    fn splits_follow_config() {
        let w = generate(&small()).unwrap();
        assert_eq!(w.split(Split::Train).len(), 40);
        assert_eq!(w.split(Split::Valid).len(), 10);
        assert_eq!(w.split(Split::Test).len(), 20);
    }

    #[test]
    fn more_questions_than_documents() {
        let cfg = SynthConfig {
            num_docs: 30,
            num_train: 50,
            num_valid: 0,
            num_test: 0,
            ..small()
        };
        let w = generate(&cfg).unwrap();
        for ex in &w.examples {
            let gold = w.gold[&ex.qid] as usize;
            assert!(contains_answer(&w.corpus[gold].text, &ex.answers));
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&SynthConfig {
            topics: 1,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            vocab_size: 40,
            topics: 50,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            doc_filler_rate: 1.0,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn latent_sidecar_round_trip() {
        let w = generate(&SynthConfig {
            num_docs: 20,
            num_train: 5,
            num_valid: 0,
            num_test: 0,
            ..small()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(LATENT_FILE);
        w.latent.write_tsv(&path).unwrap();
        let back = LatentRelevance::read_tsv(&path).unwrap();
        assert_eq!(back, w.latent);

        std::fs::write(&path, "q1\t0\t0.5\nq1\t1\n").unwrap();
        assert!(matches!(
            LatentRelevance::read_tsv(&path),
            Err(Error::Parse { line: 2, .. })
        ));
        std::fs::write(&path, "q1\t0\t0.5\nq2\t1\t0.25\n").unwrap();
        let partial = LatentRelevance::read_tsv(&path).unwrap();
        assert_eq!(partial.get("q1", 0).unwrap(), 0.5);
        assert!(matches!(partial.get("q1", 1), Err(Error::Integrity(_))));
    }

    #[test]
    fn category_mix_partitions() {
        let docs: Vec<Document> = ["has gold", "nothing", "gold again"]
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                id: i as u64,
                text: t.to_string(),
            })
            .collect();
        let corpus = Corpus::new(docs).unwrap();
        let mk = |qid: &str, ids: &[u64]| CandidateSet {
            qid: qid.into(),
            candidates: ids
                .iter()
                .map(|&doc_id| Candidate { doc_id, score: 0.0 })
                .collect(),
        };
        let ex = |qid: &str, ans: &str| QAExample {
            qid: qid.into(),
            question: "q".into(),
            answers: vec![ans.into()],
            split: Split::Train,
        };
        let examples = vec![
            ex("a", "gold"),
            ex("b", "gold"),
            ex("c", "zzz"),
            ex("d", "again"),
        ];
        let cands = vec![
            mk("a", &[0, 1]),
            mk("b", &[1, 2]),
            mk("c", &[0, 1]),
            mk("d", &[2, 0]),
        ];
        let mix = plant_category_mix(&examples, &cands, &corpus, None).unwrap();
        assert_eq!(mix.counts[&DataCategory::FirstAnswer], 2);
        assert_eq!(mix.counts[&DataCategory::FollowingAnswer], 1);
        assert_eq!(mix.counts[&DataCategory::NoAnswer], 1);
        assert_eq!(mix.total(), examples.len());

        let limited = plant_category_mix(&examples, &cands, &corpus, Some(1)).unwrap();
        assert_eq!(limited.groups[&DataCategory::FirstAnswer].len(), 1);
        assert_eq!(limited.counts[&DataCategory::FirstAnswer], 2);
        assert!(plant_category_mix(&examples, &cands[..2], &corpus, None).is_err());
    }

    #[test]
    fn documents_have_fixed_filler_count() {
        let cfg = small();
        let w = generate(&cfg).unwrap();
        let expected = (cfg.doc_len as f64 * cfg.doc_filler_rate).round() as usize;
        for d in &w.corpus {
            let words: Vec<String> = crate::encoder::words(&d.text).collect();
            let filler = words.iter().filter(|t| t.starts_with('f')).count();
            let answers = words.iter().filter(|t| t.starts_with("ans")).count();
            assert_eq!(filler, expected);
            assert_eq!(words.len(), cfg.doc_len + answers);
        }
    }

    #[test]
    fn relevance_is_topic_cosine() {
        let w = generate(&small()).unwrap();
        for row in w.examples.iter().map(|e| w.latent.row(&e.qid).unwrap()) {
            assert!(row.iter().all(|v| (0.0..=1.0 + 1e-12).contains(v)));
        }
    }

    #[test]
    fn ring_neighbors() {
        let w = generate(&SynthConfig {
            neighbor_weight: 0.2,
            background: 0.05,
            ..small()
        })
        .unwrap();
        assert_eq!(w.examples.len(), 70);
        assert!(generate(&SynthConfig {
            neighbor_weight: 0.2,
            neighbor_decay: 1.0,
            ..small()
        })
        .is_err());
        assert!(generate(&SynthConfig {
            neighbor_weight: -0.1,
            ..small()
        })
        .is_err());
    }
}
