//! Hashed embedding-bag dual encoder.
//!
//! Text is lowercased, split on runs of non-alphanumeric characters and each
//! token is hashed (64-bit FNV-1a of its UTF-8 bytes) into one of
//! `vocab_buckets` rows of a shared embedding table. A text's representation
//! is the mean of its token rows, and a query/document pair is scored by the
//! dot product of the two means. Ranker and retriever are two independent
//! instances of the same model.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed;

pub const DEFAULT_DIM: usize = 64;
pub const DEFAULT_VOCAB_BUCKETS: usize = 1 << 15;
pub const DEFAULT_MAX_LEN: usize = 128;
pub const MIN_VOCAB_BUCKETS: usize = 16;
pub const INIT_SCALE: f64 = 0.05;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IDST";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 4;

/// Lowercased alphanumeric words of `text`, in order.
pub fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Hash bucket ids of a tokenized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<usize>) -> Self {
        Self { ids }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

pub fn bucket_of(word: &str, vocab_buckets: usize) -> usize {
    (seed::fnv1a(word.as_bytes()) % vocab_buckets as u64) as usize
}

pub fn tokenize(text: &str, max_len: usize, vocab_buckets: usize) -> Result<TokenSequence> {
    if vocab_buckets < MIN_VOCAB_BUCKETS {
        return Err(Error::invalid(format!(
            "vocab_buckets must be at least {MIN_VOCAB_BUCKETS}, got {vocab_buckets}"
        )));
    }
    if max_len == 0 {
        return Err(Error::invalid("max_len must be positive"));
    }
    let ids: Vec<usize> = words(text)
        .take(max_len)
        .map(|w| bucket_of(&w, vocab_buckets))
        .collect();
    if ids.is_empty() {
        return Err(Error::EmptyInput("text has no alphanumeric tokens"));
    }
    Ok(TokenSequence { ids })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Ranker,
    Retriever,
}

impl Role {
    fn to_byte(self) -> u8 {
        match self {
            Role::Ranker => 0,
            Role::Retriever => 1,
        }
    }

    fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Role::Ranker),
            1 => Ok(Role::Retriever),
            other => Err(Error::Format(format!("unknown role byte {other}"))),
        }
    }
}

/// Sparse gradient over embedding rows, keyed by bucket id.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<F> {
    dim: usize,
    rows: BTreeMap<usize, Vec<F>>,
}

impl<F: Scalar> Gradient<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    fn row_mut(&mut self, row: usize) -> &mut Vec<F> {
        let dim = self.dim;
        self.rows.entry(row).or_insert_with(|| vec![F::zero(); dim])
    }

    fn axpy(&mut self, row: usize, scale: F, v: &[F]) {
        for (g, &x) in self.row_mut(row).iter_mut().zip(v) {
            *g += scale * x;
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = (usize, &[F])> {
        self.rows.iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn get(&self, row: usize, col: usize) -> F {
        self.rows.get(&row).map_or(F::zero(), |v| v[col])
    }

    pub fn is_zero(&self) -> bool {
        self.rows.values().flatten().all(|x| *x == F::zero())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradient<F>, scale: F) {
        for (&row, v) in &other.rows {
            self.axpy(row, scale, v);
        }
    }

    /// `dense += scale * self`, where `dense` is laid out like the embedding table.
    pub fn accumulate_into(&self, dense: &mut [F], scale: F) {
        for (&row, v) in &self.rows {
            let start = row * self.dim;
            for (d, &x) in dense[start..start + self.dim].iter_mut().zip(v) {
                *d += scale * x;
            }
        }
    }
}

/// Embedding table shared by the query and document towers.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel<F> {
    role: Role,
    dim: usize,
    vocab_buckets: usize,
    table: Vec<F>,
}

impl<F: Scalar> EncoderModel<F> {
    fn check_shape(dim: usize, vocab_buckets: usize) -> Result<()> {
        if dim < 2 {
            return Err(Error::invalid(format!("dim must be at least 2, got {dim}")));
        }
        if vocab_buckets < MIN_VOCAB_BUCKETS {
            return Err(Error::invalid(format!(
                "vocab_buckets must be at least {MIN_VOCAB_BUCKETS}, got {vocab_buckets}"
            )));
        }
        Ok(())
    }

    pub fn zeros(role: Role, dim: usize, vocab_buckets: usize) -> Result<Self> {
        Self::check_shape(dim, vocab_buckets)?;
        Ok(Self {
            role,
            dim,
            vocab_buckets,
            table: vec![F::zero(); dim * vocab_buckets],
        })
    }

    /// I.i.d. uniform entries in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn uniform(role: Role, dim: usize, vocab_buckets: usize, seed: u64) -> Result<Self> {
        Self::check_shape(dim, vocab_buckets)?;
        let mut rng = seed::rng(seed);
        let table = (0..dim * vocab_buckets)
            .map(|_| F::lit(rng.random_range(-INIT_SCALE..=INIT_SCALE)))
            .collect();
        Ok(Self {
            role,
            dim,
            vocab_buckets,
            table,
        })
    }

    pub fn from_table(role: Role, dim: usize, vocab_buckets: usize, table: Vec<F>) -> Result<Self> {
        Self::check_shape(dim, vocab_buckets)?;
        if table.len() != dim * vocab_buckets {
            return Err(Error::DimensionMismatch {
                expected: dim * vocab_buckets,
                found: table.len(),
            });
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("embedding table has non-finite entries"));
        }
        Ok(Self {
            role,
            dim,
            vocab_buckets,
            table,
        })
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab_buckets(&self) -> usize {
        self.vocab_buckets
    }

    pub fn params(&self) -> &[F] {
        &self.table
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.table
    }

    pub fn row(&self, id: usize) -> &[F] {
        &self.table[id * self.dim..(id + 1) * self.dim]
    }

    pub fn row_mut(&mut self, id: usize) -> &mut [F] {
        let dim = self.dim;
        &mut self.table[id * dim..(id + 1) * dim]
    }

    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenSequence> {
        tokenize(text, max_len, self.vocab_buckets)
    }

    fn check_tokens(&self, tokens: &TokenSequence) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput("token sequence"));
        }
        if let Some(&bad) = tokens.ids.iter().find(|&&t| t >= self.vocab_buckets) {
            return Err(Error::invalid(format!(
                "token id {bad} out of range for {} buckets",
                self.vocab_buckets
            )));
        }
        Ok(())
    }

    /// Mean of the token rows.
    pub fn encode(&self, tokens: &TokenSequence) -> Result<Vec<F>> {
        self.check_tokens(tokens)?;
        let mut out = vec![F::zero(); self.dim];
        for &t in &tokens.ids {
            for (o, &x) in out.iter_mut().zip(self.row(t)) {
                *o += x;
            }
        }
        let n = F::lit(tokens.len() as f64);
        out.iter_mut().for_each(|o| *o /= n);
        Ok(out)
    }

    pub fn score_pair(&self, query: &TokenSequence, doc: &TokenSequence) -> Result<F> {
        Ok(dot(&self.encode(query)?, &self.encode(doc)?))
    }

    /// Scores of one query against each candidate.
    pub fn score_candidates(
        &self,
        query: &TokenSequence,
        docs: &[TokenSequence],
    ) -> Result<Vec<F>> {
        let q = self.encode(query)?;
        docs.iter().map(|d| Ok(dot(&q, &self.encode(d)?))).collect()
    }

    /// Gradient of `Σ_i upstream[i] · score(query, docs[i])` with respect to the table.
    pub fn backward_scores(
        &self,
        query: &TokenSequence,
        docs: &[TokenSequence],
        upstream: &[F],
    ) -> Result<Gradient<F>> {
        if docs.len() != upstream.len() {
            return Err(Error::invalid(format!(
                "{} candidates but {} upstream gradients",
                docs.len(),
                upstream.len()
            )));
        }
        let q = self.encode(query)?;
        let encoded: Vec<Vec<F>> = docs.iter().map(|d| self.encode(d)).collect::<Result<_>>()?;

        let mut grad = Gradient::new(self.dim);
        // d(score_i)/dq = d_i, so the query mean receives Σ_i g_i d_i.
        let mut dq = vec![F::zero(); self.dim];
        for (d, &g) in encoded.iter().zip(upstream) {
            for (acc, &x) in dq.iter_mut().zip(d) {
                *acc += g * x;
            }
        }
        let q_scale = F::one() / F::lit(query.len() as f64);
        for &t in &query.ids {
            grad.axpy(t, q_scale, &dq);
        }
        for (doc, &g) in docs.iter().zip(upstream) {
            if g == F::zero() {
                continue;
            }
            let d_scale = g / F::lit(doc.len() as f64);
            for &t in &doc.ids {
                grad.axpy(t, d_scale, &q);
            }
        }
        Ok(grad)
    }

    /// Serializes to the checkpoint layout:
    /// magic `IDST`, version u32, role byte, dim u32, vocab_buckets u32,
    /// row-major little-endian f64 payload, CRC32 of the payload. Integers are
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.table.len() * 8 + 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(self.role.to_byte());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.vocab_buckets as u32).to_le_bytes());
        for x in &self.table {
            out.extend_from_slice(&x.as_f64().to_le_bytes());
        }
        let crc = crc32fast::hash(&out[HEADER_LEN..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(format!("{} bytes", bytes.len())));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
        }
        if bytes.len() < HEADER_LEN + 4 {
            return Err(Error::Truncated(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let role = Role::from_byte(bytes[8])?;
        let dim = u32_at(9) as usize;
        let vocab_buckets = u32_at(13) as usize;
        let payload = &bytes[HEADER_LEN..bytes.len() - 4];
        if payload.len() % 8 != 0 {
            return Err(Error::Truncated(format!(
                "payload of {} bytes is not a whole number of f64 values",
                payload.len()
            )));
        }
        let expected = dim * vocab_buckets;
        if payload.len() / 8 != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: payload.len() / 8,
            });
        }
        let stored = u32_at(bytes.len() - 4);
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }
        let table = payload
            .chunks_exact(8)
            .map(|c| F::lit(f64::from_le_bytes(c.try_into().unwrap())))
            .collect();
        Self::from_table(role, dim, vocab_buckets, table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}
