use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::kernel::{self, Position, Scratch};
use super::sampler::UnigramTable;
use super::vocab::{Vocabulary, DEFAULT_MAX_VOCAB, OOV, PAD};
use super::EmbedError;
use crate::splitter::Sequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// `E_in` uniform in `[-0.5/d, 0.5/d]`.
    #[default]
    Uniform,
    /// All parameters zero.
    Zero,
}

/// Which window positions are reconstructed on each update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    #[default]
    All,
    Newest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub lr: f32,
    pub k_neg: usize,
    pub unigram_exponent: f64,
    pub max_vocab: usize,
    pub seed: u64,
    pub init: Init,
    pub targets: Targets,
    /// Frequent-token subsampling threshold; off when absent.
    pub subsample: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            lr: 0.025,
            k_neg: 5,
            unigram_exponent: 0.75,
            max_vocab: DEFAULT_MAX_VOCAB,
            seed: 0,
            init: Init::Uniform,
            targets: Targets::All,
            subsample: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        let bad = |what: &str| Err(EmbedError::Config(what.to_string()));
        if self.dim == 0 {
            return bad("dim must be positive");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive and finite");
        }
        if !(self.unigram_exponent.is_finite() && self.unigram_exponent >= 0.0) {
            return bad("unigram_exponent must be non-negative");
        }
        if self.max_vocab < 3 {
            return bad("max_vocab must leave room for at least one hostname");
        }
        if let Some(t) = self.subsample {
            if !(t.is_finite() && t > 0.0) {
                return bad("subsample threshold must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainStats {
    pub sequences_seen: u64,
    pub tokens_seen: u64,
    pub positions_trained: u64,
    pub last_loss: f64,
}

/// Online CBOW model with negative sampling.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    pub(crate) config: ModelConfig,
    pub(crate) vocab: Vocabulary,
    pub(crate) e_in: Vec<f32>,
    pub(crate) e_out: Vec<f32>,
    pub(crate) rng: ChaCha8Rng,
    pub(crate) stats: TrainStats,
    pub(crate) total_count: u64,
    pub(crate) sampler: UnigramTable,
    scratch: Scratch<f32>,
    ids: Vec<u32>,
    context: Vec<u32>,
    negatives: Vec<u32>,
}

impl EmbeddingModel {
    pub fn new(config: ModelConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let mut m = EmbeddingModel {
            vocab: Vocabulary::new(config.max_vocab),
            e_in: Vec::new(),
            e_out: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            stats: TrainStats::default(),
            total_count: 0,
            sampler: UnigramTable::default(),
            scratch: Scratch::default(),
            ids: Vec::new(),
            context: Vec::new(),
            negatives: Vec::new(),
            config,
        };
        m.grow_rows();
        Ok(m)
    }

    pub(crate) fn from_parts(
        config: ModelConfig,
        vocab: Vocabulary,
        e_in: Vec<f32>,
        e_out: Vec<f32>,
        rng: ChaCha8Rng,
        stats: TrainStats,
        sampler: UnigramTable,
    ) -> Self {
        let total_count = vocab.counts().iter().sum();
        EmbeddingModel {
            config,
            vocab,
            e_in,
            e_out,
            rng,
            stats,
            total_count,
            sampler,
            scratch: Scratch::default(),
            ids: Vec::new(),
            context: Vec::new(),
            negatives: Vec::new(),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn stats(&self) -> TrainStats {
        self.stats
    }

    pub fn input_matrix(&self) -> &[f32] {
        &self.e_in
    }

    pub fn output_matrix(&self) -> &[f32] {
        &self.e_out
    }

    /// Counts one observation of `hostname`, interning it if new.
    pub fn observe(&mut self, hostname: &str) -> u32 {
        let id = self.vocab.intern(hostname);
        self.total_count += 1;
        self.grow_rows();
        id
    }

    pub fn intern(&mut self, hostname: &str) -> u32 {
        self.observe(hostname)
    }

    /// Allocates parameter rows for ids assigned since the last call.
    fn grow_rows(&mut self) {
        let d = self.config.dim;
        let have = self.e_in.len() / d;
        let want = self.vocab.len();
        if want <= have {
            return;
        }
        self.e_out.resize(want * d, 0.0);
        self.e_in.reserve((want - have) * d);
        for id in have..want {
            if id as u32 == PAD || self.config.init == Init::Zero {
                self.e_in.extend(std::iter::repeat_n(0.0, d));
            } else {
                let half = 0.5 / d as f32;
                for _ in 0..d {
                    self.e_in.push(self.rng.random_range(-half..half));
                }
            }
        }
    }

    /// One SGD pass over the window. Tokens never observed are interned
    /// (with one count) so standalone use needs no separate `observe`.
    pub fn update(&mut self, seq: &Sequence) -> Result<f64, EmbedError> {
        if seq.real_len < 2 {
            return Err(EmbedError::DegenerateSequence);
        }
        self.ids.clear();
        for t in seq.real_tokens() {
            let id = match self.vocab.get(t) {
                Some(id) => id,
                None => {
                    self.total_count += 1;
                    self.vocab.intern(t)
                }
            };
            self.ids.push(id);
        }
        self.grow_rows();
        if self.sampler.is_stale(self.vocab.len(), self.total_count) {
            self.sampler = UnigramTable::build(self.vocab.counts(), self.config.unigram_exponent);
        }

        let n = self.ids.len();
        let first = match self.config.targets {
            Targets::All => 0,
            Targets::Newest => n - 1,
        };
        let (d, lr) = (self.config.dim, self.config.lr);
        let mut loss = 0.0;
        let mut trained = 0u64;
        for t in first..n {
            let target = self.ids[t];
            if target == OOV || !self.keep_target(target) {
                continue;
            }
            self.context.clear();
            self.context.extend(self.ids.iter().enumerate().filter(|&(i, _)| i != t).map(|(_, &id)| id));
            self.negatives.clear();
            for _ in 0..self.config.k_neg {
                if let Some(neg) = self.sampler.sample_excluding(&mut self.rng, target) {
                    self.negatives.push(neg);
                }
            }
            let pos = Position { context: &self.context, target, negatives: &self.negatives };
            loss += kernel::forward(&self.e_in, &self.e_out, d, &pos, &mut self.scratch);
            kernel::apply(&mut self.e_in, &mut self.e_out, d, &pos, &self.scratch, lr);
            trained += 1;
        }
        let mean = if trained == 0 { 0.0 } else { loss / trained as f64 };
        self.stats.sequences_seen += 1;
        self.stats.tokens_seen += n as u64;
        self.stats.positions_trained += trained;
        self.stats.last_loss = mean;
        Ok(mean)
    }

    /// word2vec-style subsampling: keeps a frequent target with probability
    /// `sqrt(t / f)` where `f` is its relative frequency.
    fn keep_target(&mut self, id: u32) -> bool {
        let Some(t) = self.config.subsample else { return true };
        let f = self.vocab.count(id) as f64 / self.total_count.max(1) as f64;
        if f <= t {
            return true;
        }
        self.rng.random::<f64>() < (t / f).sqrt()
    }

    fn context_vector(&self, context: &[u32]) -> Result<Vec<f64>, EmbedError> {
        let d = self.config.dim;
        let ids: Vec<u32> = context.iter().copied().filter(|&id| id != PAD).collect();
        if ids.is_empty() {
            return Err(EmbedError::EmptyContext);
        }
        let mut c = vec![0.0f64; d];
        for &id in &ids {
            let r = self.row_in(id).ok_or(EmbedError::OutOfRange(id))?;
            for (acc, &x) in c.iter_mut().zip(r) {
                *acc += f64::from(x);
            }
        }
        c.iter_mut().for_each(|x| *x /= ids.len() as f64);
        Ok(c)
    }

    /// Full softmax over non-reserved ids given context ids; reserved slots
    /// are zero.
    pub fn predict_scores(&self, context: &[u32]) -> Result<Vec<f64>, EmbedError> {
        let c = self.context_vector(context)?;
        let d = self.config.dim;
        let v = self.vocab.len();
        let mut scores = vec![0.0; v];
        if v <= 2 {
            return Ok(scores);
        }
        let logits: Vec<f64> = (2..v)
            .map(|w| self.e_out[w * d..(w + 1) * d].iter().zip(&c).map(|(&o, &x)| f64::from(o) * x).sum())
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (s, e) in scores[2..].iter_mut().zip(exps) {
            *s = e / z;
        }
        Ok(scores)
    }

    /// Context given as hostnames; unknown ones count as OOV.
    pub fn predict_scores_for(&self, context: &[&str]) -> Result<Vec<f64>, EmbedError> {
        let ids: Vec<u32> = context.iter().map(|h| self.vocab.lookup(h)).collect();
        self.predict_scores(&ids)
    }

    fn row_in(&self, id: u32) -> Option<&[f32]> {
        let d = self.config.dim;
        self.e_in.get(id as usize * d..(id as usize + 1) * d)
    }

    /// Copy of the input embedding of `id`.
    pub fn embedding(&self, id: u32) -> Result<Vec<f32>, EmbedError> {
        if id as usize >= self.vocab.len() {
            return Err(EmbedError::OutOfRange(id));
        }
        Ok(self.row_in(id).expect("rows cover the vocabulary").to_vec())
    }

    pub fn embedding_of(&self, hostname: &str) -> Option<Vec<f32>> {
        self.vocab.get(hostname).and_then(|id| self.embedding(id).ok())
    }

    /// True when every parameter is finite and the PAD rows are zero.
    pub fn is_healthy(&self) -> bool {
        let d = self.config.dim;
        self.e_in.iter().chain(&self.e_out).all(|x| x.is_finite())
            && self.e_in[..d].iter().chain(&self.e_out[..d]).all(|&x| x == 0.0)
    }

    /// Read-only copy of what profilers need.
    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot {
            inner: Arc::new(SnapshotInner {
                vocab: self.vocab.clone(),
                e_in: self.e_in.clone(),
                dim: self.config.dim,
                updates: self.stats.sequences_seen,
            }),
        }
    }
}

#[derive(Debug)]
struct SnapshotInner {
    vocab: Vocabulary,
    e_in: Vec<f32>,
    dim: usize,
    updates: u64,
}

/// Immutable, cheaply clonable view of a model's vocabulary and input
/// embeddings at publication time.
#[derive(Debug, Clone)]
pub struct ModelSnapshot {
    inner: Arc<SnapshotInner>,
}

impl ModelSnapshot {
    /// Builds a snapshot from explicit embeddings, one row per token.
    pub fn from_embeddings<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, Vec<f32>)>,
    {
        let mut vocab = Vocabulary::new(usize::MAX);
        let mut e_in = vec![0.0; 2 * dim];
        for (host, row) in rows {
            assert_eq!(row.len(), dim, "row width must equal dim");
            let before = vocab.len();
            vocab.intern(host);
            assert!(vocab.len() > before, "duplicate token {host}");
            e_in.extend(row);
        }
        ModelSnapshot { inner: Arc::new(SnapshotInner { vocab, e_in, dim, updates: 0 }) }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.inner.vocab
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    /// Training updates the source model had applied when published.
    pub fn updates(&self) -> u64 {
        self.inner.updates
    }

    pub fn row(&self, id: u32) -> Option<&[f32]> {
        let d = self.inner.dim;
        if id == PAD {
            return None;
        }
        self.inner.e_in.get(id as usize * d..(id as usize + 1) * d)
    }

    pub fn embedding_of(&self, hostname: &str) -> Option<&[f32]> {
        self.inner.vocab.get(hostname).and_then(|id| self.row(id))
    }

    /// Same underlying allocation.
    pub fn ptr_eq(&self, other: &ModelSnapshot) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (f64::from(x), f64::from(y));
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitter::Key;
    use std::net::IpAddr;

    fn seq(tokens: &[&str]) -> Sequence {
        Sequence::from_tokens(Key::ip(IpAddr::from([10, 0, 0, 1])), tokens.len().max(2), tokens.iter().copied(), 0)
    }

    fn zero_model(dim: usize) -> EmbeddingModel {
        EmbeddingModel::new(ModelConfig { dim, init: Init::Zero, ..ModelConfig::default() }).unwrap()
    }

    #[test]
    fn zero_init_loss() {
        let mut m = zero_model(2);
        for h in ["a", "b", "c"] {
            m.observe(h);
        }
        let loss = m.update(&seq(&["a", "b", "c"])).unwrap();
        assert!((loss - 6.0 * std::f64::consts::LN_2).abs() < 1e-9, "{loss}");
    }

    #[test]
    fn degenerate_sequence() {
        let mut m = zero_model(2);
        let s = Sequence::from_tokens(Key::ip(IpAddr::from([1, 1, 1, 1])), 3, ["a"], 0);
        assert_eq!(m.update(&s), Err(EmbedError::DegenerateSequence));
        assert_eq!(m.stats().sequences_seen, 0);
    }

    #[test]
    fn alternating_pair_learns() {
        let mut m = EmbeddingModel::new(ModelConfig { dim: 8, lr: 0.05, seed: 3, ..ModelConfig::default() }).unwrap();
        for h in ["a", "b", "c", "d"] {
            m.observe(h);
        }
        let pair = seq(&["a", "b"]);
        let first = m.update(&pair).unwrap();
        let mut last = first;
        for _ in 0..100 {
            last = m.update(&pair).unwrap();
        }
        assert!(last < first);
        let scores = m.predict_scores_for(&["a"]).unwrap();
        let b = m.vocab().lookup("b") as usize;
        assert!(scores.iter().enumerate().all(|(i, &s)| i == b || s < scores[b]));
        assert!(m.is_healthy());
    }

    #[test]
    fn predict_on_zero_model_is_uniform() {
        let mut m = zero_model(4);
        for h in ["a", "b", "c", "d"] {
            m.observe(h);
        }
        let s = m.predict_scores(&[2]).unwrap();
        assert_eq!(s[..2], [0.0, 0.0]);
        assert!(s[2..].iter().all(|&p| (p - 0.25).abs() < 1e-12));
        assert_eq!(m.predict_scores(&[PAD]), Err(EmbedError::EmptyContext));
    }

    #[test]
    fn embeddings() {
        let mut m = EmbeddingModel::new(ModelConfig { dim: 4, ..ModelConfig::default() }).unwrap();
        m.observe("a");
        assert_eq!(m.embedding(PAD).unwrap(), vec![0.0; 4]);
        assert!(m.embedding(2).unwrap().iter().all(|x| x.abs() <= 0.125));
        assert_eq!(m.embedding(3), Err(EmbedError::OutOfRange(3)));
        assert_eq!(zero_model(4).embedding(OOV).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn newest_only_targets() {
        let mut m = zero_model(2);
        m.config.targets = Targets::Newest;
        m.update(&seq(&["a", "b", "c"])).unwrap();
        assert_eq!(m.stats().positions_trained, 1);
    }

    #[test]
    fn oov_is_context_only() {
        let mut m =
            EmbeddingModel::new(ModelConfig { dim: 2, max_vocab: 3, init: Init::Zero, ..ModelConfig::default() })
                .unwrap();
        m.observe("a");
        m.update(&seq(&["a", "zzz"])).unwrap();
        assert_eq!(m.stats().positions_trained, 1);
        assert_eq!(m.output_matrix()[2..4], [0.0, 0.0]);
    }

    #[test]
    fn snapshot_is_frozen() {
        let mut m = zero_model(2);
        m.observe("a");
        let snap = m.snapshot();
        m.observe("b");
        assert!(snap.embedding_of("b").is_none());
        assert!(snap.embedding_of("a").is_some());
        assert!(snap.ptr_eq(&snap.clone()));
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
        assert!((cosine(&[1.0, 1.0], &[2.0, 2.0]) - 1.0).abs() < 1e-12);
    }
}
