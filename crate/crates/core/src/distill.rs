//! Ranker and retriever training.
//!
//! Stage 1 fits the ranker to teacher permutations with ListMLE over the
//! temperature-scaled candidate scores. Stage 2 freezes the ranker and fits
//! the retriever to the ranker's candidate distribution by minimizing
//! `KL(P_rank ‖ P_retr)`. Direct distillation skips the ranker and fits the
//! retriever to a softmax over teacher relevance scores.
//!
//! A batch holds whole records (one question with its `k` candidates); its
//! loss is the mean over records. Per-record gradients are computed in
//! parallel and summed in record order, so runs are bit-reproducible.

use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    categorize, retrieve_all, CandidateSet, Corpus, CorpusIndex, DataCategory, QAExample,
};
use crate::encoder::{
    EncoderModel, Gradient, TokenSequence, DEFAULT_DIM, DEFAULT_MAX_LEN, DEFAULT_VOCAB_BUCKETS,
};
use crate::error::{Error, Result};
use crate::numkit::{
    adam_step, kl_divergence, listmle_grad, listmle_loss, softmax_temp, AdamConfig, AdamState,
    Distribution, Permutation,
};
use crate::scalar::Scalar;
use crate::seed;
use crate::teacher::{TeachRequest, Teacher, TeacherSignal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub k: usize,
    pub theta_ranker: f64,
    pub theta_retriever: f64,
    pub lr_ranker: f64,
    pub lr_retriever: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub max_len: usize,
    pub dim: usize,
    pub vocab_buckets: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Drop records whose teacher answer fell back to the retrieval order.
    pub exclude_fallback: bool,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            k: 5,
            theta_ranker: 1.0,
            theta_retriever: 1.0,
            lr_ranker: 5e-5,
            lr_retriever: 2e-5,
            epochs: 5,
            batch_size: 20,
            max_len: DEFAULT_MAX_LEN,
            dim: DEFAULT_DIM,
            vocab_buckets: DEFAULT_VOCAB_BUCKETS,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            exclude_fallback: false,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        for (name, v) in [
            ("theta_ranker", self.theta_ranker),
            ("theta_retriever", self.theta_retriever),
        ] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        for (name, v) in [
            ("lr_ranker", self.lr_ranker),
            ("lr_retriever", self.lr_retriever),
        ] {
            if !(v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be non-negative")));
            }
        }
        if self.batch_size == 0 || self.max_len == 0 {
            return Err(Error::invalid("batch_size and max_len must be positive"));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// One question, its candidates and the teacher's verdict on them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub qid: String,
    pub question: String,
    pub candidates: CandidateSet,
    /// Candidate texts in candidate order.
    pub texts: Vec<String>,
    pub signal: TeacherSignal,
    pub category: DataCategory,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreparedRecords {
    pub records: Vec<TrainingRecord>,
    /// Questions the teacher was asked about.
    pub total: usize,
    pub repaired: usize,
    pub fallback: usize,
    /// Questions dropped because the teacher failed or answered inconsistently.
    pub skipped: Vec<(String, String)>,
}

/// Retrieves top-k for each example with the current retriever and asks the teacher once.
pub fn prepare_records<F: Scalar>(
    examples: &[QAExample],
    index: &CorpusIndex<F>,
    retriever: &EncoderModel<F>,
    teacher: &dyn Teacher,
    config: &DistillConfig,
) -> Result<PreparedRecords> {
    config.validate()?;
    let candidates = retrieve_all(index, retriever, examples, config.k)?;
    label_candidates(examples, candidates, index.corpus(), teacher, config)
}

/// Asks the teacher about already retrieved candidate sets, one per example in the same order.
pub fn label_candidates(
    examples: &[QAExample],
    candidates: Vec<CandidateSet>,
    corpus: &Corpus,
    teacher: &dyn Teacher,
    config: &DistillConfig,
) -> Result<PreparedRecords> {
    config.validate()?;
    if examples.len() != candidates.len() {
        return Err(Error::Integrity(format!(
            "{} examples but {} candidate sets",
            examples.len(),
            candidates.len()
        )));
    }
    if let Some((ex, c)) = examples
        .iter()
        .zip(&candidates)
        .find(|(e, c)| e.qid != c.qid)
    {
        return Err(Error::Integrity(format!(
            "candidate set {} paired with example {}",
            c.qid, ex.qid
        )));
    }
    let texts: Vec<Vec<String>> = candidates
        .iter()
        .map(|c| {
            c.doc_ids()
                .into_iter()
                .map(|id| corpus.text(id).map(str::to_string))
                .collect()
        })
        .collect::<Result<_>>()?;
    let requests: Vec<TeachRequest<'_>> = examples
        .iter()
        .zip(&candidates)
        .zip(&texts)
        .map(|((ex, c), t)| TeachRequest {
            qid: &ex.qid,
            question: &ex.question,
            answers: &ex.answers,
            candidates: c,
            texts: t,
        })
        .collect();
    let answers = teacher.teach_all(&requests);

    let mut out = PreparedRecords {
        total: examples.len(),
        ..Default::default()
    };
    for (((ex, cands), texts), answer) in examples.iter().zip(candidates).zip(texts).zip(answers) {
        let signal = match answer {
            Ok(s) if s.len() == cands.len() => s,
            Ok(s) => {
                let msg = format!(
                    "teacher returned {} items for {} candidates",
                    s.len(),
                    cands.len()
                );
                out.skipped.push((ex.qid.clone(), msg));
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", ex.qid);
                out.skipped.push((ex.qid.clone(), e.to_string()));
                continue;
            }
        };
        out.repaired += usize::from(signal.repaired());
        out.fallback += usize::from(signal.fallback());
        if signal.fallback() && config.exclude_fallback {
            continue;
        }
        out.records.push(TrainingRecord {
            qid: ex.qid.clone(),
            question: ex.question.clone(),
            category: categorize(&texts, &ex.answers),
            candidates: cands,
            texts,
            signal,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub steps: u64,
    pub seconds: f64,
    pub records: usize,
    pub repaired: usize,
    pub fallback: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.mean_loss).collect()
    }

    /// One `{epoch, mean_loss, seconds}` line per epoch.
    pub fn write_log(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        crate::corpus::write_jsonl(path, &self.epochs)
    }
}

/// Token sequences of one record.
#[derive(Debug, Clone)]
pub struct Tokenized {
    pub query: TokenSequence,
    pub docs: Vec<TokenSequence>,
}

impl Tokenized {
    pub fn new<F: Scalar>(
        model: &EncoderModel<F>,
        question: &str,
        texts: &[String],
        max_len: usize,
    ) -> Result<Self> {
        Ok(Self {
            query: model.tokenize(question, max_len)?,
            docs: texts
                .iter()
                .map(|t| model.tokenize(t, max_len))
                .collect::<Result<_>>()?,
        })
    }

    fn from_record<F: Scalar>(
        model: &EncoderModel<F>,
        r: &TrainingRecord,
        max_len: usize,
    ) -> Result<Self> {
        Self::new(model, &r.question, &r.texts, max_len)
    }
}

/// Loss of one record and its gradient with respect to the candidate scores.
pub type RecordObjective<'a, F, T> =
    dyn Fn(&EncoderModel<F>, &Tokenized, &T) -> Result<(F, Vec<F>)> + Sync + 'a;

/// Mean loss and mean parameter gradient over a batch.
pub fn batch_gradient<F: Scalar, T: Sync>(
    model: &EncoderModel<F>,
    batch: &[(&Tokenized, &T)],
    objective: &RecordObjective<'_, F, T>,
) -> Result<(F, Gradient<F>)> {
    let parts: Vec<(F, Gradient<F>)> = batch
        .par_iter()
        .map(|(tok, target)| {
            let (loss, upstream) = objective(model, tok, target)?;
            Ok((
                loss,
                model.backward_scores(&tok.query, &tok.docs, &upstream)?,
            ))
        })
        .collect::<Result<_>>()?;
    let scale = F::one() / F::lit(batch.len() as f64);
    let mut grad = Gradient::new(model.dim());
    let mut loss = F::zero();
    for (l, g) in &parts {
        loss += *l;
        grad.add_scaled(g, scale);
    }
    Ok((loss * scale, grad))
}

struct LoopSpec<'a> {
    lr: f64,
    label: &'a str,
}

fn train_loop<F: Scalar, T: Sync>(
    instances: &[(Tokenized, T)],
    model: &mut EncoderModel<F>,
    config: &DistillConfig,
    spec: LoopSpec<'_>,
    objective: &RecordObjective<'_, F, T>,
) -> Result<TrainReport> {
    if instances.is_empty() {
        return Err(Error::invalid("no training records"));
    }
    let started = Instant::now();
    let adam = config.adam(spec.lr);
    let mut state = AdamState::new(model.params().len());
    let mut dense = vec![F::zero(); model.params().len()];
    let mut rng = seed::rng(seed::child(config.seed, spec.label));
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut report = TrainReport {
        records: instances.len(),
        ..Default::default()
    };
    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&Tokenized, &T)> = chunk
                .iter()
                .map(|&i| (&instances[i].0, &instances[i].1))
                .collect();
            let (loss, grad) = batch_gradient(model, &batch, objective)?;
            loss_sum += loss.as_f64() * chunk.len() as f64;
            grad.accumulate_into(&mut dense, F::one());
            adam_step(model.params_mut(), &dense, &mut state, &adam)?;
            for (row, _) in grad.rows() {
                dense[row * model.dim()..(row + 1) * model.dim()].fill(F::zero());
            }
            report.steps += 1;
        }
        let mean_loss = loss_sum / instances.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::invalid(format!("loss diverged in epoch {epoch}")));
        }
        log::debug!("{} epoch {epoch}: mean loss {mean_loss:.6}", spec.label);
        report.epochs.push(EpochStats {
            epoch,
            mean_loss,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
    }
    report.seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

fn signal_counts(records: &[TrainingRecord], report: &mut TrainReport) {
    report.repaired = records.iter().filter(|r| r.signal.repaired()).count();
    report.fallback = records.iter().filter(|r| r.signal.fallback()).count();
}

/// ListMLE objective on `scores / θ`.
pub fn listmle_objective<F: Scalar>(
    theta: f64,
) -> impl Fn(&EncoderModel<F>, &Tokenized, &Permutation) -> Result<(F, Vec<F>)> + Sync {
    let theta = F::lit(theta);
    move |model, tok, pi| {
        let logits: Vec<F> = model
            .score_candidates(&tok.query, &tok.docs)?
            .into_iter()
            .map(|s| s / theta)
            .collect();
        let loss = listmle_loss(&logits, pi)?;
        let grad = listmle_grad(&logits, pi)?
            .into_iter()
            .map(|g| g / theta)
            .collect();
        Ok((loss, grad))
    }
}

/// `KL(target ‖ softmax(scores/θ))` and its gradient `(q − p)/θ`.
pub fn kl_objective<F: Scalar>(
    theta: f64,
) -> impl Fn(&EncoderModel<F>, &Tokenized, &Distribution<F>) -> Result<(F, Vec<F>)> + Sync {
    let theta = F::lit(theta);
    move |model, tok, target| {
        let scores = model.score_candidates(&tok.query, &tok.docs)?;
        let q = softmax_temp(&scores, theta)?;
        let loss = kl_divergence(target, &q)?;
        let grad = q
            .probs()
            .iter()
            .zip(target.probs())
            .map(|(&qi, &pi)| (qi - pi) / theta)
            .collect();
        Ok((loss, grad))
    }
}

/// Stage 1: fit `ranker` to the teacher permutations.
pub fn stage1_train_ranker<F: Scalar>(
    records: &[TrainingRecord],
    ranker: &mut EncoderModel<F>,
    config: &DistillConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let instances: Vec<(Tokenized, Permutation)> = records
        .iter()
        .map(|r| match &r.signal {
            TeacherSignal::Ranking(t) => Ok((
                Tokenized::from_record(ranker, r, config.max_len)?,
                t.permutation.clone(),
            )),
            TeacherSignal::Scores(_) => Err(Error::invalid(format!(
                "record {} carries scores; stage 1 needs a ranking",
                r.qid
            ))),
        })
        .collect::<Result<_>>()?;
    let objective = listmle_objective::<F>(config.theta_ranker);
    let mut report = train_loop(
        &instances,
        ranker,
        config,
        LoopSpec {
            lr: config.lr_ranker,
            label: "stage1",
        },
        &objective,
    )?;
    signal_counts(records, &mut report);
    Ok(report)
}

/// Fits `retriever` to fixed per-record target distributions.
pub fn train_retriever_on_targets<F: Scalar>(
    instances: &[(Tokenized, Distribution<F>)],
    retriever: &mut EncoderModel<F>,
    config: &DistillConfig,
    label: &str,
) -> Result<TrainReport> {
    config.validate()?;
    let objective = kl_objective::<F>(config.theta_retriever);
    train_loop(
        instances,
        retriever,
        config,
        LoopSpec {
            lr: config.lr_retriever,
            label,
        },
        &objective,
    )
}

/// Stage 2: fit `retriever` to the frozen ranker's candidate distributions.
///
/// The ranker is only read; its scores are recomputed for every record visit.
pub fn stage2_train_retriever<F: Scalar>(
    records: &[TrainingRecord],
    ranker: &EncoderModel<F>,
    retriever: &mut EncoderModel<F>,
    config: &DistillConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let instances: Vec<(Tokenized, Tokenized)> = records
        .iter()
        .map(|r| {
            Ok((
                Tokenized::from_record(retriever, r, config.max_len)?,
                Tokenized::from_record(ranker, r, config.max_len)?,
            ))
        })
        .collect::<Result<_>>()?;
    let theta_rank = F::lit(config.theta_ranker);
    let kl = kl_objective::<F>(config.theta_retriever);
    let objective = move |model: &EncoderModel<F>, tok: &Tokenized, ranker_tok: &Tokenized| {
        let p = softmax_temp(
            &ranker.score_candidates(&ranker_tok.query, &ranker_tok.docs)?,
            theta_rank,
        )?;
        kl(model, tok, &p)
    };
    let mut report = train_loop(
        &instances,
        retriever,
        config,
        LoopSpec {
            lr: config.lr_retriever,
            label: "stage2",
        },
        &objective,
    )?;
    signal_counts(records, &mut report);
    Ok(report)
}

/// The ranker's candidate distributions, computed once.
pub fn ranker_targets<F: Scalar>(
    records: &[TrainingRecord],
    ranker: &EncoderModel<F>,
    retriever_like: &EncoderModel<F>,
    config: &DistillConfig,
) -> Result<Vec<(Tokenized, Distribution<F>)>> {
    records
        .iter()
        .map(|r| {
            let rt = Tokenized::from_record(ranker, r, config.max_len)?;
            let p = softmax_temp(
                &ranker.score_candidates(&rt.query, &rt.docs)?,
                F::lit(config.theta_ranker),
            )?;
            Ok((
                Tokenized::from_record(retriever_like, r, config.max_len)?,
                p,
            ))
        })
        .collect()
}

/// Direct distillation: fit `retriever` to `softmax(teacher scores / θ_ranker)`.
pub fn direct_distill_train<F: Scalar>(
    records: &[TrainingRecord],
    retriever: &mut EncoderModel<F>,
    config: &DistillConfig,
) -> Result<TrainReport> {
    config.validate()?;
    let instances: Vec<(Tokenized, Distribution<F>)> = records
        .iter()
        .map(|r| match &r.signal {
            TeacherSignal::Scores(s) => {
                let scores: Vec<F> = s.scores.iter().map(|&x| F::lit(x)).collect();
                Ok((
                    Tokenized::from_record(retriever, r, config.max_len)?,
                    softmax_temp(&scores, F::lit(config.theta_ranker))?,
                ))
            }
            TeacherSignal::Ranking(_) => Err(Error::invalid(format!(
                "record {} carries a ranking; direct distillation needs scores",
                r.qid
            ))),
        })
        .collect::<Result<_>>()?;
    let mut report = train_retriever_on_targets(&instances, retriever, config, "direct")?;
    signal_counts(records, &mut report);
    Ok(report)
}

/// Candidate ordering induced by a model's scores, ties by candidate index.
pub fn model_ordering<F: Scalar>(
    model: &EncoderModel<F>,
    question: &str,
    texts: &[String],
    max_len: usize,
) -> Result<Permutation> {
    let tok = Tokenized::new(model, question, texts, max_len)?;
    Ok(Permutation::by_descending(
        &model.score_candidates(&tok.query, &tok.docs)?,
    ))
}
