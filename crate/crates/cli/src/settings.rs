//! Flat `key = value` configuration merged with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use idistill::corpus::{DataCategory, Split};
use idistill::distill::DistillConfig;
use idistill::experiment::{ExperimentConfig, TeacherChoice};
use idistill::synth::SynthConfig;
use idistill::teacher::{RemoteMode, TeacherEndpointConfig};

use crate::error::{CliError, CliResult};

/// Every recognised key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed; sub-stages derive child seeds from it"),
    ("out", "output directory (default: out)"),
    ("corpus", "corpus JSONL"),
    ("examples", "examples JSONL"),
    ("latent", "latent relevance TSV (oracle teachers)"),
    ("candidates", "candidate sets JSONL from `retrieve`"),
    ("records", "teacher-labelled records JSONL from `teach`"),
    ("checkpoint", "encoder checkpoint to start from or evaluate"),
    ("ranker", "trained ranker checkpoint for `train-retriever`"),
    ("split", "train | valid | test"),
    ("k", "candidates per question"),
    ("theta", "softmax temperature for both ranker and retriever"),
    ("theta_ranker", "ranker temperature"),
    ("theta_retriever", "retriever temperature"),
    ("lr", "learning rate for both stages"),
    ("lr_ranker", "ranker learning rate"),
    ("lr_retriever", "retriever learning rate"),
    ("epochs", "training epochs"),
    ("batch_size", "records per optimizer step"),
    ("max_len", "token cap per text"),
    ("dim", "embedding width"),
    ("vocab_buckets", "hash buckets"),
    ("beta1", "Adam beta1"),
    ("beta2", "Adam beta2"),
    ("eps", "Adam epsilon"),
    (
        "exclude_fallback",
        "drop records whose teacher answer fell back (true | false)",
    ),
    (
        "teacher",
        "oracle | oracle_scores | remote | remote_scores | bm25 | rouge2 | rule_based | none",
    ),
    ("p_swap", "oracle adjacent-swap probability"),
    ("noise_sd", "oracle score noise"),
    ("endpoint", "chat-completions base URL"),
    ("model", "remote model name"),
    ("cache_dir", "teacher response cache directory"),
    ("timeout_secs", "remote request timeout"),
    ("max_in_flight", "concurrent remote requests"),
    ("retry_budget", "extra attempts per remote request"),
    ("backoff_ms", "first retry delay"),
    ("api_key_env", "environment variable holding the API key"),
    ("eval_ks", "comma-separated HR@k cut-offs"),
    ("train_size", "use only the first n training questions"),
    ("category", "following_answer | first_answer | no_answer"),
    ("axis", "train_size | list_size | data_category"),
    ("values", "comma-separated sweep values"),
    ("num_docs", "synthetic corpus size"),
    ("num_train", "synthetic training questions"),
    ("num_valid", "synthetic validation questions"),
    ("num_test", "synthetic test questions"),
    ("vocab_size", "synthetic vocabulary size"),
    ("topics", "synthetic topic count"),
    ("filler_fraction", "share of the vocabulary used as filler"),
    ("doc_len", "synthetic document length"),
    ("question_len", "synthetic question length"),
    ("doc_filler_rate", "filler share of document tokens"),
    ("question_filler_rate", "filler share of question tokens"),
    ("secondary_weight", "secondary topic weight"),
    ("background", "per-topic background jitter"),
    ("neighbor_weight", "weight of ring-neighbour topics"),
    ("neighbor_decay", "decay per ring step"),
];

const PATH_KEYS: &[&str] = &[
    "corpus",
    "examples",
    "latent",
    "candidates",
    "records",
    "checkpoint",
    "ranker",
    "cache_dir",
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl Settings {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_config(path: &Path, text: &str) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if !known(k) {
                return Err(err(format!("unknown key {k:?}")));
            }
            if values.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err(format!("duplicate key {k:?}")));
            }
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingInput {
                path: path.to_path_buf(),
            },
            _ => CliError::io(path, e),
        })?;
        Self::parse_config(path, &text)
    }

    /// Sets `key`, replacing any value from the config file.
    pub fn set(&mut self, key: &str, value: impl Into<String>) -> CliResult<()> {
        if !known(key) {
            return Err(CliError::Usage(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.into());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| CliError::Value {
                    key: key.to_string(),
                    message: format!("{v:?}: {e}"),
                })
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<T>().map_err(|e| CliError::Value {
                            key: key.to_string(),
                            message: format!("{s:?}: {e}"),
                        })
                    })
                    .collect()
            })
            .transpose()
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> CliResult<PathBuf> {
        self.path(key)
            .ok_or_else(|| CliError::Usage(format!("--{} is required", key.replace('_', "-"))))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.path("out").unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn seed(&self) -> CliResult<u64> {
        self.get_or("seed", 0)
    }

    pub fn split(&self, default: Split) -> CliResult<Split> {
        Ok(self.get::<Split>("split")?.unwrap_or(default))
    }

    /// The settings as they go into a manifest: paths reduced to file names,
    /// the output directory left out.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "out")
            .map(|(k, v)| {
                let v = if PATH_KEYS.contains(&k.as_str()) {
                    Path::new(v)
                        .file_name()
                        .map_or_else(|| v.clone(), |n| n.to_string_lossy().into_owned())
                } else {
                    v.clone()
                };
                (k.clone(), v)
            })
            .collect()
    }

    pub fn distill(&self) -> CliResult<DistillConfig> {
        let d = DistillConfig::default();
        let theta: Option<f64> = self.get("theta")?;
        let lr: Option<f64> = self.get("lr")?;
        let cfg = DistillConfig {
            k: self.get_or("k", d.k)?,
            theta_ranker: self
                .get("theta_ranker")?
                .or(theta)
                .unwrap_or(d.theta_ranker),
            theta_retriever: self
                .get("theta_retriever")?
                .or(theta)
                .unwrap_or(d.theta_retriever),
            lr_ranker: self.get("lr_ranker")?.or(lr).unwrap_or(d.lr_ranker),
            lr_retriever: self.get("lr_retriever")?.or(lr).unwrap_or(d.lr_retriever),
            epochs: self.get_or("epochs", d.epochs)?,
            batch_size: self.get_or("batch_size", d.batch_size)?,
            max_len: self.get_or("max_len", d.max_len)?,
            dim: self.get_or("dim", d.dim)?,
            vocab_buckets: self.get_or("vocab_buckets", d.vocab_buckets)?,
            beta1: self.get_or("beta1", d.beta1)?,
            beta2: self.get_or("beta2", d.beta2)?,
            eps: self.get_or("eps", d.eps)?,
            exclude_fallback: self.get_or("exclude_fallback", d.exclude_fallback)?,
            seed: self.seed()?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn synth(&self) -> CliResult<SynthConfig> {
        let d = SynthConfig::default();
        Ok(SynthConfig {
            num_docs: self.get_or("num_docs", d.num_docs)?,
            num_train: self.get_or("num_train", d.num_train)?,
            num_valid: self.get_or("num_valid", d.num_valid)?,
            num_test: self.get_or("num_test", d.num_test)?,
            vocab_size: self.get_or("vocab_size", d.vocab_size)?,
            topics: self.get_or("topics", d.topics)?,
            filler_fraction: self.get_or("filler_fraction", d.filler_fraction)?,
            doc_len: self.get_or("doc_len", d.doc_len)?,
            question_len: self.get_or("question_len", d.question_len)?,
            doc_filler_rate: self.get_or("doc_filler_rate", d.doc_filler_rate)?,
            question_filler_rate: self.get_or("question_filler_rate", d.question_filler_rate)?,
            secondary_weight: self.get_or("secondary_weight", d.secondary_weight)?,
            background: self.get_or("background", d.background)?,
            neighbor_weight: self.get_or("neighbor_weight", d.neighbor_weight)?,
            neighbor_decay: self.get_or("neighbor_decay", d.neighbor_decay)?,
            seed: self.seed()?,
        })
    }

    pub fn endpoint(&self) -> CliResult<TeacherEndpointConfig> {
        let d = TeacherEndpointConfig::default();
        Ok(TeacherEndpointConfig {
            base_url: self
                .raw("endpoint")
                .ok_or_else(|| CliError::Usage("remote teachers need --endpoint".into()))?
                .to_string(),
            model: self.get_or("model", d.model)?,
            timeout: self
                .get::<u64>("timeout_secs")?
                .map_or(d.timeout, Duration::from_secs),
            max_in_flight: self.get_or("max_in_flight", d.max_in_flight)?,
            retry_budget: self.get_or("retry_budget", d.retry_budget)?,
            cache_dir: self.path("cache_dir"),
            api_key_env: self.get_or("api_key_env", d.api_key_env)?,
            backoff: self
                .get::<u64>("backoff_ms")?
                .map_or(d.backoff, Duration::from_millis),
        })
    }

    pub fn teacher(&self) -> CliResult<TeacherChoice> {
        let name = self.raw("teacher").unwrap_or("oracle");
        Ok(match name {
            "oracle" => TeacherChoice::Oracle {
                p_swap: self.get_or("p_swap", 0.0)?,
            },
            "oracle_scores" => TeacherChoice::OracleScores {
                noise_sd: self.get_or("noise_sd", 0.0)?,
            },
            "remote" => TeacherChoice::Remote {
                endpoint: self.endpoint()?,
                mode: RemoteMode::Rerank,
            },
            "remote_scores" => TeacherChoice::Remote {
                endpoint: self.endpoint()?,
                mode: RemoteMode::Score,
            },
            "bm25" => TeacherChoice::Bm25,
            "rouge2" => TeacherChoice::Rouge2,
            "rule_based" => TeacherChoice::RuleBased,
            "none" => TeacherChoice::None,
            other => {
                return Err(CliError::Value {
                    key: "teacher".into(),
                    message: format!("unknown teacher {other:?}"),
                })
            }
        })
    }

    pub fn experiment(&self) -> CliResult<ExperimentConfig> {
        let d = ExperimentConfig::default();
        Ok(ExperimentConfig {
            distill: self.distill()?,
            teacher: self.teacher()?,
            eval_ks: self.list("eval_ks")?.unwrap_or(d.eval_ks),
            train_size: self.get("train_size")?,
            category: self.get::<DataCategory>("category")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<Settings> {
        Settings::parse_config(Path::new("run.cfg"), text)
    }

    #[test]
    fn config_lines_and_comments() {
        let s = parse("# sweep\nk = 3\n\nepochs=2  # short\n").unwrap();
        assert_eq!(s.raw("k"), Some("3"));
        assert_eq!(s.raw("epochs"), Some("2"));
    }

    #[test]
    fn config_errors_name_the_line() {
        let e = parse("k = 3\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("run.cfg:2"), "{e}");
        assert!(parse("k 3").is_err());
        assert!(parse("k = 3\nk = 4").is_err());
    }

    #[test]
    fn flags_win_over_file() {
        let mut s = parse("k = 3\ntheta = 2\n").unwrap();
        s.set("k", "7").unwrap();
        let d = s.distill().unwrap();
        assert_eq!(d.k, 7);
        assert_eq!(d.theta_ranker, 2.0);
        assert_eq!(d.theta_retriever, 2.0);
        assert!(s.set("nope", "1").is_err());
    }

    #[test]
    fn specific_keys_beat_shared_ones() {
        let s = parse("lr = 0.1\nlr_ranker = 0.5\n").unwrap();
        let d = s.distill().unwrap();
        assert_eq!(d.lr_ranker, 0.5);
        assert_eq!(d.lr_retriever, 0.1);
    }

    #[test]
    fn bad_values_are_invalid_arguments() {
        let s = parse("k = many\n").unwrap();
        assert_eq!(s.distill().unwrap_err().code(), crate::error::code::INVALID);
        let s = parse("teacher = crowd\n").unwrap();
        assert_eq!(s.teacher().unwrap_err().code(), crate::error::code::INVALID);
    }

    #[test]
    fn echo_strips_directories() {
        let s = parse("corpus = /tmp/a/corpus.jsonl\nk = 5\nout = /tmp/run1\n").unwrap();
        let e = s.echo();
        assert!(!e.contains_key("out"));
        assert_eq!(e["corpus"], "corpus.jsonl");
        assert_eq!(e["k"], "5");
    }

    #[test]
    fn remote_teacher_needs_endpoint() {
        let s = parse("teacher = remote\n").unwrap();
        assert_eq!(s.teacher().unwrap_err().code(), crate::error::code::USAGE);
        let s =
            parse("teacher = remote\nendpoint = http://127.0.0.1:1\nretry_budget = 0\n").unwrap();
        match s.teacher().unwrap() {
            TeacherChoice::Remote { endpoint, .. } => assert_eq!(endpoint.retry_budget, 0),
            other => panic!("{other:?}"),
        }
    }
}
