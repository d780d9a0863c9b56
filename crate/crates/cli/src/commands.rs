use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use idistill::corpus::{
    build_index, load_corpus, load_examples, read_records, retrieve_all, write_jsonl, CandidateSet,
    Document, QAExample, Split,
};
use idistill::distill::{
    direct_distill_train, label_candidates, stage1_train_ranker, stage2_train_retriever,
    PreparedRecords, TrainReport, TrainingRecord,
};
use idistill::encoder::Role;
use idistill::eval::MetricReport;
use idistill::experiment::{initial_model, run_ablation, AblationAxis, Dataset, TeacherChoice};
use idistill::synth::{generate, LatentRelevance, CORPUS_FILE, EXAMPLES_FILE, LATENT_FILE};
use idistill::teacher::{RemoteStats, RemoteTeacher, Teacher};
use idistill::{Encoder, Error};

use crate::error::{CliError, CliResult};
use crate::manifest::Run;
use crate::settings::Settings;

pub const INIT_CHECKPOINT: &str = "retriever_init.ckpt";
pub const INDEX_SUMMARY: &str = "index.json";
pub const CANDIDATES: &str = "candidates.jsonl";
pub const RECORDS: &str = "records.jsonl";
pub const TEACH_REPORT: &str = "teach_report.json";
pub const RANKER_CHECKPOINT: &str = "ranker.ckpt";
pub const RETRIEVER_CHECKPOINT: &str = "retriever.ckpt";
pub const DIRECT_CHECKPOINT: &str = "retriever_direct.ckpt";
pub const METRICS: &str = "metrics.json";
pub const SWEEP: &str = "sweep.json";

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn start(command: &str, s: &Settings) -> CliResult<Run> {
    Run::start(command, s.out_dir(), s.echo())
}

fn load_docs(run: &mut Run, s: &Settings) -> CliResult<Vec<Document>> {
    let p = run.input("corpus", &s.require_path("corpus")?)?;
    Ok(load_corpus(p)?)
}

fn load_qa(run: &mut Run, s: &Settings) -> CliResult<Vec<QAExample>> {
    let p = run.input("examples", &s.require_path("examples")?)?;
    Ok(load_examples(p)?)
}

/// The `--checkpoint` model, or the seeded untrained encoder.
fn start_model(run: &mut Run, s: &Settings) -> CliResult<Encoder> {
    match s.path("checkpoint") {
        Some(p) => Ok(Encoder::load(run.input("checkpoint", &p)?)?),
        None => Ok(initial_model(&s.distill()?)?),
    }
}

fn select_split(examples: Vec<QAExample>, split: Split) -> Vec<QAExample> {
    examples.into_iter().filter(|e| e.split == split).collect()
}

pub fn synth(s: &Settings) -> CliResult<()> {
    let cfg = s.synth()?;
    let mut run = start("synth", s)?;
    run.resolved("synth", &cfg)?;
    let world = generate(&cfg)?;
    world.write(s.out_dir())?;
    for name in [CORPUS_FILE, EXAMPLES_FILE, LATENT_FILE] {
        run.output(name);
    }
    println!(
        "synth: {} documents, {} questions",
        world.corpus.len(),
        world.examples.len()
    );
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct IndexSummary {
    documents: usize,
    dim: usize,
    max_len: usize,
    vectors_sha256: String,
}

pub fn index(s: &Settings) -> CliResult<()> {
    let dc = s.distill()?;
    let mut run = start("index", s)?;
    run.resolved("distill", &dc)?;
    let docs = load_docs(&mut run, s)?;
    let fresh = s.path("checkpoint").is_none();
    let model = start_model(&mut run, s)?;
    let index = build_index(docs, &model, dc.max_len)?;
    let mut hasher = Sha256::new();
    for pos in 0..index.len() {
        for v in index.vector(pos) {
            hasher.update(v.to_le_bytes());
        }
    }
    let summary = IndexSummary {
        documents: index.len(),
        dim: index.dim(),
        max_len: index.max_len(),
        vectors_sha256: hex::encode(hasher.finalize()),
    };
    if fresh {
        model.save(run.output(INIT_CHECKPOINT))?;
    }
    write_json(&run.output(INDEX_SUMMARY), &summary)?;
    println!(
        "index: {} documents, dim {}",
        summary.documents, summary.dim
    );
    run.finish()?;
    Ok(())
}

pub fn retrieve(s: &Settings) -> CliResult<()> {
    let dc = s.distill()?;
    let mut run = start("retrieve", s)?;
    run.resolved("distill", &dc)?;
    let docs = load_docs(&mut run, s)?;
    let mut examples = select_split(load_qa(&mut run, s)?, s.split(Split::Train)?);
    if let Some(n) = s.get::<usize>("train_size")? {
        examples.truncate(n);
    }
    if examples.is_empty() {
        return Err(Error::EmptyInput("questions in the selected split").into());
    }
    let model = start_model(&mut run, s)?;
    let index = build_index(docs, &model, dc.max_len)?;
    let results = retrieve_all(&index, &model, &examples, dc.k)?;
    write_jsonl(run.output(CANDIDATES), &results)?;
    println!("retrieve: top-{} for {} questions", dc.k, results.len());
    run.finish()?;
    Ok(())
}

#[derive(Serialize)]
struct Skipped<'a> {
    qid: &'a str,
    reason: &'a str,
}

#[derive(Serialize)]
struct TeachReport<'a> {
    teacher: &'a str,
    total: usize,
    records: usize,
    repaired: usize,
    fallback: usize,
    skipped: Vec<Skipped<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    remote: Option<RemoteStats>,
}

pub fn teach(s: &Settings) -> CliResult<()> {
    let dc = s.distill()?;
    let choice = s.teacher()?;
    if choice == TeacherChoice::None {
        return Err(CliError::Usage(
            "teach needs a teacher other than none".into(),
        ));
    }
    let mut run = start("teach", s)?;
    run.resolved("distill", &dc)?;
    let docs = load_docs(&mut run, s)?;
    let examples = load_qa(&mut run, s)?;
    let cands: Vec<CandidateSet> =
        read_records(run.input("candidates", &s.require_path("candidates")?)?)?;
    let latent = match s.path("latent") {
        Some(p) => Some(LatentRelevance::read_tsv(run.input("latent", &p)?)?),
        None => None,
    };

    let by_qid: HashMap<&str, &QAExample> = examples.iter().map(|e| (e.qid.as_str(), e)).collect();
    let ordered: Vec<QAExample> = cands
        .iter()
        .map(|c| {
            by_qid
                .get(c.qid.as_str())
                .map(|e| (*e).clone())
                .ok_or_else(|| {
                    Error::Integrity(format!("candidate set for unknown question {}", c.qid))
                })
        })
        .collect::<Result<_, _>>()?;

    let model = initial_model::<f64>(&dc)?;
    let index = build_index(docs, &model, dc.max_len)?;
    let (prepared, remote): (PreparedRecords, Option<RemoteStats>) = match &choice {
        TeacherChoice::Remote { endpoint, mode } => {
            let teacher = RemoteTeacher::new(endpoint.clone(), *mode)?;
            let p = label_candidates(&ordered, cands, index.corpus(), &teacher, &dc)?;
            (p, Some(teacher.stats()))
        }
        other => {
            let teacher: Box<dyn Teacher + '_> = other
                .build(latent.as_ref(), &index, dc.seed)?
                .expect("the none teacher was rejected above");
            (
                label_candidates(&ordered, cands, index.corpus(), teacher.as_ref(), &dc)?,
                None,
            )
        }
    };

    write_jsonl(run.output(RECORDS), &prepared.records)?;
    let report = TeachReport {
        teacher: choice.name(),
        total: prepared.total,
        records: prepared.records.len(),
        repaired: prepared.repaired,
        fallback: prepared.fallback,
        skipped: prepared
            .skipped
            .iter()
            .map(|(qid, reason)| Skipped { qid, reason })
            .collect(),
        remote,
    };
    write_json(&run.output(TEACH_REPORT), &report)?;
    println!(
        "teach: {} questions, {} records, {} repaired, {} fallback, {} skipped",
        report.total,
        report.records,
        report.repaired,
        report.fallback,
        report.skipped.len()
    );
    run.finish()?;
    Ok(())
}

fn load_training(run: &mut Run, s: &Settings) -> CliResult<Vec<TrainingRecord>> {
    let p = run.input("records", &s.require_path("records")?)?;
    Ok(read_records(p)?)
}

fn print_losses(label: &str, report: &TrainReport) {
    let losses: Vec<String> = report.losses().iter().map(|l| format!("{l:.5}")).collect();
    println!(
        "{label}: {} records, {} steps, loss {}",
        report.records,
        report.steps,
        losses.join(" ")
    );
}

pub fn train_ranker(s: &Settings) -> CliResult<()> {
    let dc = s.distill()?;
    let mut run = start("train-ranker", s)?;
    run.resolved("distill", &dc)?;
    let records = load_training(&mut run, s)?;
    let mut ranker = start_model(&mut run, s)?.with_role(Role::Ranker);
    let mut report = stage1_train_ranker(&records, &mut ranker, &dc)?;
    ranker.save(run.output(RANKER_CHECKPOINT))?;
    report.checkpoint = Some(RANKER_CHECKPOINT.into());
    report.write_log(run.timing_output("stage1_log.jsonl"))?;
    print_losses("train-ranker", &report);
    run.finish()?;
    Ok(())
}

pub fn train_retriever(s: &Settings) -> CliResult<()> {
    let dc = s.distill()?;
    let mut run = start("train-retriever", s)?;
    run.resolved("distill", &dc)?;
    let records = load_training(&mut run, s)?;
    let ranker = Encoder::load(run.input("ranker", &s.require_path("ranker")?)?)?;
    if ranker.role() != Role::Ranker {
        return Err(Error::Integrity("--ranker checkpoint does not hold a ranker".into()).into());
    }
    let mut retriever = start_model(&mut run, s)?.with_role(Role::Retriever);
    let mut report = stage2_train_retriever(&records, &ranker, &mut retriever, &dc)?;
    retriever.save(run.output(RETRIEVER_CHECKPOINT))?;
    report.checkpoint = Some(RETRIEVER_CHECKPOINT.into());
    report.write_log(run.timing_output("stage2_log.jsonl"))?;
    print_losses("train-retriever", &report);
    run.finish()?;
    Ok(())
}

pub fn direct(s: &Settings) -> CliResult<()> {
    let dc = s.distill()?;
    let mut run = start("direct", s)?;
    run.resolved("distill", &dc)?;
    let records = load_training(&mut run, s)?;
    let mut retriever = start_model(&mut run, s)?.with_role(Role::Retriever);
    let mut report = direct_distill_train(&records, &mut retriever, &dc)?;
    retriever.save(run.output(DIRECT_CHECKPOINT))?;
    report.checkpoint = Some(DIRECT_CHECKPOINT.into());
    report.write_log(run.timing_output("direct_log.jsonl"))?;
    print_losses("direct", &report);
    run.finish()?;
    Ok(())
}

pub fn eval(s: &Settings) -> CliResult<()> {
    let dc = s.distill()?;
    let ks: Vec<usize> = s.list("eval_ks")?.unwrap_or_else(|| vec![1, 5, 10, 20]);
    let depth = ks.iter().copied().max().ok_or_else(|| CliError::Value {
        key: "eval_ks".into(),
        message: "no cut-offs".into(),
    })?;
    let split = s.split(Split::Test)?;
    let mut run = start("eval", s)?;
    run.resolved("distill", &dc)?;
    let docs = load_docs(&mut run, s)?;
    let examples = select_split(load_qa(&mut run, s)?, split);
    if examples.is_empty() {
        return Err(Error::EmptyInput("questions in the selected split").into());
    }
    let model = start_model(&mut run, s)?;
    let index = build_index(docs, &model, dc.max_len)?;
    let results = retrieve_all(&index, &model, &examples, depth)?;
    let mut report = MetricReport::new(&results, &examples, index.corpus(), &ks)?;
    let label = s
        .path("checkpoint")
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "untrained".into());
    report.config = BTreeMap::from([
        ("model".to_string(), label.clone()),
        ("split".to_string(), format!("{split:?}").to_lowercase()),
    ]);
    write_json(&run.output(METRICS), &report)?;
    print!("{}", report.render_table(&label));
    run.finish()?;
    Ok(())
}

pub fn ablate(s: &Settings) -> CliResult<()> {
    let cfg = s.experiment()?;
    let axis: AblationAxis = s
        .get("axis")?
        .ok_or_else(|| CliError::Usage("--axis is required".into()))?;
    let values: Vec<usize> = s.list("values")?.unwrap_or_default();
    let mut run = start("ablate", s)?;
    run.resolved("distill", &cfg.distill)?;
    let docs = load_docs(&mut run, s)?;
    let examples = load_qa(&mut run, s)?;
    let latent = match s.path("latent") {
        Some(p) => Some(LatentRelevance::read_tsv(run.input("latent", &p)?)?),
        None => None,
    };
    let data = Dataset {
        docs,
        examples,
        latent,
    };
    let report = run_ablation::<f64>(&data, &cfg, axis, &values)?;
    write_json(&run.output(SWEEP), &report)?;
    let k = if cfg.eval_ks.contains(&5) {
        5
    } else {
        cfg.eval_ks[0]
    };
    print!("{}", report.render_table(k));
    run.finish()?;
    match report.error {
        Some(e) => Err(CliError::Sweep(e)),
        None => Ok(()),
    }
}
