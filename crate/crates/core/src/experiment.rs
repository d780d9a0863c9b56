//! End-to-end runs: baseline retrieval, teacher labelling, distillation and
//! held-out evaluation, plus the sweeps built on top of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_index, retrieve_all, CandidateSet, CorpusIndex, DataCategory, Document, QAExample, Split,
};
use crate::distill::{
    direct_distill_train, model_ordering, prepare_records, stage1_train_ranker,
    stage2_train_retriever, DistillConfig, PreparedRecords, TrainReport,
};
use crate::encoder::{EncoderModel, Role};
use crate::error::{Error, Result};
use crate::eval::{spearman, MetricReport};
use crate::scalar::Scalar;
use crate::seed;
use crate::synth::{plant_category_mix, LatentRelevance};
use crate::teacher::{
    oracle_rank, MetricKind, MetricTeacher, OracleMode, OracleTeacher, RemoteMode, RemoteTeacher,
    Teacher, TeacherEndpointConfig,
};

/// Which teacher labels the training candidates.
#[derive(Debug, Clone, PartialEq)]
pub enum TeacherChoice {
    Oracle {
        p_swap: f64,
    },
    /// Oracle relevance scores with Gaussian noise; trains by direct distillation.
    OracleScores {
        noise_sd: f64,
    },
    Remote {
        endpoint: TeacherEndpointConfig,
        mode: RemoteMode,
    },
    Bm25,
    Rouge2,
    RuleBased,
    /// No teacher: evaluate the untrained retriever only.
    None,
}

impl TeacherChoice {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Oracle { .. } => "oracle",
            Self::OracleScores { .. } => "oracle_scores",
            Self::Remote {
                mode: RemoteMode::Rerank,
                ..
            } => "remote",
            Self::Remote {
                mode: RemoteMode::Score,
                ..
            } => "remote_scores",
            Self::Bm25 => "bm25",
            Self::Rouge2 => "rouge2",
            Self::RuleBased => "rule_based",
            Self::None => "none",
        }
    }

    /// Whether the teacher emits scores (direct distillation) rather than rankings.
    pub fn emits_scores(&self) -> bool {
        matches!(
            self,
            Self::OracleScores { .. }
                | Self::Remote {
                    mode: RemoteMode::Score,
                    ..
                }
        )
    }

    pub fn build<'a, F: Scalar>(
        &self,
        latent: Option<&'a LatentRelevance>,
        index: &'a CorpusIndex<F>,
        seed: u64,
    ) -> Result<Option<Box<dyn Teacher + 'a>>> {
        let need_latent = || {
            latent.ok_or_else(|| {
                Error::Integrity("the oracle teacher needs a latent relevance file".into())
            })
        };
        let teacher_seed = seed::child(seed, "teacher");
        Ok(Some(match self {
            Self::Oracle { p_swap } => Box::new(OracleTeacher::new(
                need_latent()?,
                OracleMode::Rank { p_swap: *p_swap },
                teacher_seed,
            )?),
            Self::OracleScores { noise_sd } => Box::new(OracleTeacher::new(
                need_latent()?,
                OracleMode::Scores {
                    noise_sd: *noise_sd,
                },
                teacher_seed,
            )?),
            Self::Remote { endpoint, mode } => {
                Box::new(RemoteTeacher::new(endpoint.clone(), *mode)?)
            }
            Self::Bm25 => Box::new(MetricTeacher::new(MetricKind::Bm25, index)),
            Self::Rouge2 => Box::new(MetricTeacher::new(MetricKind::Rouge2, index)),
            Self::RuleBased => Box::new(MetricTeacher::new(MetricKind::RuleBased, index)),
            Self::None => return Ok(None),
        }))
    }
}

impl fmt::Display for TeacherChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A corpus, its questions and (for synthetic data) the hidden relevance.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub docs: Vec<Document>,
    pub examples: Vec<QAExample>,
    pub latent: Option<LatentRelevance>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<QAExample> {
        self.examples
            .iter()
            .filter(|e| e.split == split)
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub distill: DistillConfig,
    pub teacher: TeacherChoice,
    /// Cut-offs reported on the held-out split.
    pub eval_ks: Vec<usize>,
    /// Use only the first `n` training examples.
    pub train_size: Option<usize>,
    /// Train only on examples whose baseline candidates fall in this category.
    pub category: Option<DataCategory>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            distill: DistillConfig::default(),
            teacher: TeacherChoice::Oracle { p_swap: 0.0 },
            eval_ks: vec![1, 5, 10, 20],
            train_size: None,
            category: None,
        }
    }
}

pub struct ExperimentOutcome<F> {
    pub baseline: MetricReport,
    pub distilled: Option<MetricReport>,
    /// Mean Spearman of the trained ranker's held-out orderings against the noiseless oracle.
    pub ranker_spearman: Option<f64>,
    pub prepared: Option<PreparedRecords>,
    pub stage1: Option<TrainReport>,
    pub stage2: Option<TrainReport>,
    pub ranker: Option<EncoderModel<F>>,
    pub retriever: EncoderModel<F>,
}

impl<F> ExperimentOutcome<F> {
    /// Distilled metrics when training happened, else the baseline.
    pub fn final_report(&self) -> &MetricReport {
        self.distilled.as_ref().unwrap_or(&self.baseline)
    }
}

/// The untrained encoder every run starts from.
pub fn initial_model<F: Scalar>(config: &DistillConfig) -> Result<EncoderModel<F>> {
    EncoderModel::uniform(
        Role::Retriever,
        config.dim,
        config.vocab_buckets,
        seed::child(config.seed, "encoder-init"),
    )
}

fn evaluate<F: Scalar>(
    index: &CorpusIndex<F>,
    model: &EncoderModel<F>,
    examples: &[QAExample],
    ks: &[usize],
) -> Result<MetricReport> {
    let depth = ks.iter().copied().max().unwrap_or(5);
    let results = retrieve_all(index, model, examples, depth)?;
    MetricReport::new(&results, examples, index.corpus(), ks)
}

/// Mean Spearman between `ranker` orderings and noiseless oracle orderings of the given candidate sets.
pub fn ranker_agreement<F: Scalar>(
    ranker: &EncoderModel<F>,
    latent: &LatentRelevance,
    index: &CorpusIndex<F>,
    examples: &[QAExample],
    candidates: &[CandidateSet],
    max_len: usize,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("held-out examples"));
    }
    let mut rng = seed::rng(0);
    let mut total = 0.0;
    for (ex, cands) in examples.iter().zip(candidates) {
        let ids = cands.doc_ids();
        let texts: Vec<String> = ids
            .iter()
            .map(|&id| index.corpus().text(id).map(str::to_string))
            .collect::<Result<_>>()?;
        let truth = oracle_rank(latent, &ex.qid, &ids, 0.0, &mut rng)?;
        let got = model_ordering(ranker, &ex.question, &texts, max_len)?;
        total += spearman(&truth, &got)?;
    }
    Ok(total / examples.len() as f64)
}

fn training_examples<F: Scalar>(
    data: &Dataset,
    config: &ExperimentConfig,
    index: &CorpusIndex<F>,
    base: &EncoderModel<F>,
) -> Result<Vec<QAExample>> {
    let mut train = data.split(Split::Train);
    if let Some(cat) = config.category {
        let candidates = retrieve_all(index, base, &train, config.distill.k)?;
        let mix = plant_category_mix(&train, &candidates, index.corpus(), None)?;
        train = mix.groups.get(&cat).cloned().unwrap_or_default();
    }
    if let Some(n) = config.train_size {
        train.truncate(n);
    }
    Ok(train)
}

/// Runs one full pipeline and evaluates on the test split.
pub fn run_experiment<F: Scalar>(
    data: &Dataset,
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome<F>> {
    let dc = &config.distill;
    dc.validate()?;
    if config.eval_ks.is_empty() {
        return Err(Error::invalid("no evaluation cut-offs"));
    }
    let test = data.split(Split::Test);
    if test.is_empty() {
        return Err(Error::EmptyInput("test split"));
    }
    let base = initial_model::<F>(dc)?;
    let index = build_index(data.docs.clone(), &base, dc.max_len)?;
    let baseline = evaluate(&index, &base, &test, &config.eval_ks)?;

    let Some(teacher) = config
        .teacher
        .build(data.latent.as_ref(), &index, dc.seed)?
    else {
        return Ok(ExperimentOutcome {
            baseline,
            distilled: None,
            ranker_spearman: None,
            prepared: None,
            stage1: None,
            stage2: None,
            ranker: None,
            retriever: base,
        });
    };

    let train = training_examples(data, config, &index, &base)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training examples"));
    }
    let prepared = prepare_records(&train, &index, &base, teacher.as_ref(), dc)?;
    if prepared.records.is_empty() {
        return Err(Error::EmptyInput("usable teacher records"));
    }

    let mut retriever = base.clone();
    let (ranker, stage1, stage2) = if config.teacher.emits_scores() {
        let report = direct_distill_train(&prepared.records, &mut retriever, dc)?;
        (None, None, report)
    } else {
        let mut ranker = base.clone().with_role(Role::Ranker);
        let s1 = stage1_train_ranker(&prepared.records, &mut ranker, dc)?;
        let s2 = stage2_train_retriever(&prepared.records, &ranker, &mut retriever, dc)?;
        (Some(ranker), Some(s1), s2)
    };

    let ranker_spearman = match (&ranker, &data.latent) {
        (Some(r), Some(latent)) => {
            let cands = retrieve_all(&index, &base, &test, dc.k)?;
            Some(ranker_agreement(
                r, latent, &index, &test, &cands, dc.max_len,
            )?)
        }
        _ => None,
    };

    let distilled_index = index.reencode(&retriever)?;
    let distilled = evaluate(&distilled_index, &retriever, &test, &config.eval_ks)?;
    Ok(ExperimentOutcome {
        baseline,
        distilled: Some(distilled),
        ranker_spearman,
        prepared: Some(prepared),
        stage1,
        stage2: Some(stage2),
        ranker,
        retriever,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    TrainSize,
    ListSize,
    DataCategory,
}

impl FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train_size" => Ok(Self::TrainSize),
            "list_size" => Ok(Self::ListSize),
            "data_category" => Ok(Self::DataCategory),
            other => Err(Error::invalid(format!(
                "unknown ablation axis {other:?} (expected train_size, list_size or data_category)"
            ))),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TrainSize => "train_size",
            Self::ListSize => "list_size",
            Self::DataCategory => "data_category",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub train_records: usize,
    pub baseline: MetricReport,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: AblationAxis,
    pub rows: Vec<SweepRow>,
    /// Set when a sub-run failed; rows hold the runs that finished before it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SweepReport {
    pub fn render_table(&self, k: usize) -> String {
        let mut out = format!(
            "{:<16} {:>8} {:>10} {:>10}\n",
            self.axis.to_string(),
            "records",
            format!("base@{k}"),
            format!("HR@{k}")
        );
        for row in &self.rows {
            let fmt = |r: &MetricReport| r.hr(k).map_or("-".to_string(), |v| format!("{v:.4}"));
            out.push_str(&format!(
                "{:<16} {:>8} {:>10} {:>10}\n",
                row.value,
                row.train_records,
                fmt(&row.baseline),
                fmt(&row.metrics)
            ));
        }
        if let Some(e) = &self.error {
            out.push_str(&format!("aborted: {e}\n"));
        }
        out
    }

    pub fn by_value(&self) -> BTreeMap<&str, &SweepRow> {
        self.rows.iter().map(|r| (r.value.as_str(), r)).collect()
    }
}

/// Runs the pipeline once per axis value with a shared seed.
///
/// For [`AblationAxis::DataCategory`] the values are ignored and every
/// category present in the training split gets a row; `train_size` then
/// caps each category. A failing sub-run stops the sweep and is recorded in
/// [`SweepReport::error`].
pub fn run_ablation<F: Scalar>(
    data: &Dataset,
    base: &ExperimentConfig,
    axis: AblationAxis,
    values: &[usize],
) -> Result<SweepReport> {
    let mut runs: Vec<(String, ExperimentConfig)> = Vec::new();
    match axis {
        AblationAxis::TrainSize | AblationAxis::ListSize => {
            if values.is_empty() {
                return Err(Error::invalid(format!(
                    "the {axis} sweep needs at least one value"
                )));
            }
            for &v in values {
                let mut cfg = base.clone();
                match axis {
                    AblationAxis::TrainSize => cfg.train_size = Some(v),
                    _ => cfg.distill.k = v,
                }
                runs.push((v.to_string(), cfg));
            }
        }
        AblationAxis::DataCategory => {
            let model = initial_model::<F>(&base.distill)?;
            let index = build_index(data.docs.clone(), &model, base.distill.max_len)?;
            let train = data.split(Split::Train);
            let candidates = retrieve_all(&index, &model, &train, base.distill.k)?;
            let mix = plant_category_mix(&train, &candidates, index.corpus(), None)?;
            for (cat, n) in mix.counts {
                if n > 0 {
                    let mut cfg = base.clone();
                    cfg.category = Some(cat);
                    runs.push((cat.name().to_string(), cfg));
                }
            }
        }
    }

    let mut report = SweepReport {
        axis,
        rows: Vec::new(),
        error: None,
    };
    for (value, cfg) in runs {
        log::info!("{axis} = {value}");
        match run_experiment::<F>(data, &cfg) {
            Ok(out) => report.rows.push(SweepRow {
                value,
                train_records: out.prepared.as_ref().map_or(0, |p| p.records.len()),
                metrics: out.final_report().clone(),
                baseline: out.baseline,
            }),
            Err(e) => {
                report.error = Some(format!("{axis} = {value}: {e}"));
                break;
            }
        }
    }
    Ok(report)
}
