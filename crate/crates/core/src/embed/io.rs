//! Versioned binary model file.
//!
//! Layout (little-endian): magic `NV2V`, format version u32, hyperparameters,
//! RNG position, training stats, vocabulary (length-prefixed UTF-8 tokens
//! with u64 counts), the negative-sampling table, then `E_in` and `E_out`
//! as row-major f32.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{EmbeddingModel, Init, ModelConfig, Targets, TrainStats};
use super::sampler::UnigramTable;
use super::vocab::{Vocabulary, FIRST_ID};
use super::EmbedError;

pub const MAGIC: [u8; 4] = *b"NV2V";
pub const FORMAT_VERSION: u32 = 1;

impl EmbeddingModel {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbedError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let mut r = BufReader::new(File::open(path)?);
        EmbeddingModel::read_from(&mut r)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self, EmbedError> {
        EmbeddingModel::read_from(&mut bytes)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let c = &self.config;
        w.write_all(&MAGIC)?;
        w.write_u32::<LE>(FORMAT_VERSION)?;

        w.write_u32::<LE>(c.dim as u32)?;
        w.write_u32::<LE>(c.k_neg as u32)?;
        w.write_f32::<LE>(c.lr)?;
        w.write_f64::<LE>(c.unigram_exponent)?;
        w.write_u64::<LE>(c.max_vocab as u64)?;
        w.write_u64::<LE>(c.seed)?;
        w.write_u8(match c.init {
            Init::Uniform => 0,
            Init::Zero => 1,
        })?;
        w.write_u8(match c.targets {
            Targets::All => 0,
            Targets::Newest => 1,
        })?;
        w.write_u8(u8::from(c.subsample.is_some()))?;
        w.write_f64::<LE>(c.subsample.unwrap_or(0.0))?;

        w.write_all(&self.rng.get_seed())?;
        w.write_u64::<LE>(self.rng.get_stream())?;
        w.write_u128::<LE>(self.rng.get_word_pos())?;

        let s = &self.stats;
        w.write_u64::<LE>(s.sequences_seen)?;
        w.write_u64::<LE>(s.tokens_seen)?;
        w.write_u64::<LE>(s.positions_trained)?;
        w.write_f64::<LE>(s.last_loss)?;

        let counts = self.vocab.counts();
        w.write_u64::<LE>(self.vocab.len() as u64 - u64::from(FIRST_ID))?;
        w.write_u64::<LE>(counts[0])?;
        w.write_u64::<LE>(counts[1])?;
        for (id, token) in self.vocab.tokens() {
            w.write_u32::<LE>(token.len() as u32)?;
            w.write_all(token.as_bytes())?;
            w.write_u64::<LE>(counts[id as usize])?;
        }
        let (ids, cumulative, built_len, built_total) = self.sampler.to_parts();
        w.write_u64::<LE>(built_len as u64)?;
        w.write_u64::<LE>(built_total)?;
        w.write_u64::<LE>(ids.len() as u64)?;
        for (&id, &c) in ids.iter().zip(cumulative) {
            w.write_u32::<LE>(id)?;
            w.write_f64::<LE>(c)?;
        }
        for &x in self.e_in.iter().chain(&self.e_out) {
            w.write_f32::<LE>(x)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, EmbedError> {
        read_model(r).map_err(|e| match e {
            EmbedError::Io(ref io) if io.kind() == io::ErrorKind::UnexpectedEof => EmbedError::CorruptFile,
            other => other,
        })
    }
}

fn read_model<R: Read>(r: &mut R) -> Result<EmbeddingModel, EmbedError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(EmbedError::CorruptFile);
    }
    let version = r.read_u32::<LE>()?;
    if version != FORMAT_VERSION {
        return Err(EmbedError::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }

    let dim = r.read_u32::<LE>()? as usize;
    let k_neg = r.read_u32::<LE>()? as usize;
    let lr = r.read_f32::<LE>()?;
    let unigram_exponent = r.read_f64::<LE>()?;
    let max_vocab = usize::try_from(r.read_u64::<LE>()?).map_err(|_| EmbedError::CorruptFile)?;
    let seed = r.read_u64::<LE>()?;
    let init = match r.read_u8()? {
        0 => Init::Uniform,
        1 => Init::Zero,
        _ => return Err(EmbedError::CorruptFile),
    };
    let targets = match r.read_u8()? {
        0 => Targets::All,
        1 => Targets::Newest,
        _ => return Err(EmbedError::CorruptFile),
    };
    let has_subsample = r.read_u8()?;
    let threshold = r.read_f64::<LE>()?;
    let subsample = match has_subsample {
        0 => None,
        1 => Some(threshold),
        _ => return Err(EmbedError::CorruptFile),
    };
    let config = ModelConfig { dim, lr, k_neg, unigram_exponent, max_vocab, seed, init, targets, subsample };
    config.validate().map_err(|_| EmbedError::CorruptFile)?;

    let mut rng_seed = [0u8; 32];
    r.read_exact(&mut rng_seed)?;
    let mut rng = ChaCha8Rng::from_seed(rng_seed);
    rng.set_stream(r.read_u64::<LE>()?);
    rng.set_word_pos(r.read_u128::<LE>()?);

    let stats = TrainStats {
        sequences_seen: r.read_u64::<LE>()?,
        tokens_seen: r.read_u64::<LE>()?,
        positions_trained: r.read_u64::<LE>()?,
        last_loss: r.read_f64::<LE>()?,
    };

    let n_tokens = r.read_u64::<LE>()?;
    if n_tokens.saturating_add(u64::from(FIRST_ID)) > max_vocab as u64 {
        return Err(EmbedError::CorruptFile);
    }
    let mut counts = vec![r.read_u64::<LE>()?, r.read_u64::<LE>()?];
    let mut tokens = Vec::new();
    for _ in 0..n_tokens {
        let len = r.read_u32::<LE>()? as usize;
        if len > crate::tuple_gen::MAX_HOSTNAME_LEN {
            return Err(EmbedError::CorruptFile);
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        tokens.push(String::from_utf8(buf).map_err(|_| EmbedError::CorruptFile)?);
        counts.push(r.read_u64::<LE>()?);
    }
    let vocab = Vocabulary::from_parts(max_vocab, tokens, counts).ok_or(EmbedError::CorruptFile)?;

    let built_len = r.read_u64::<LE>()? as usize;
    let built_total = r.read_u64::<LE>()?;
    let n_entries = r.read_u64::<LE>()?;
    if n_entries > vocab.len() as u64 || built_len > vocab.len() {
        return Err(EmbedError::CorruptFile);
    }
    let (mut ids, mut cumulative) = (Vec::new(), Vec::new());
    for _ in 0..n_entries {
        ids.push(r.read_u32::<LE>()?);
        cumulative.push(r.read_f64::<LE>()?);
    }
    let sampler = UnigramTable::from_parts(ids, cumulative, built_len, built_total).ok_or(EmbedError::CorruptFile)?;

    let cells = vocab.len().checked_mul(dim).ok_or(EmbedError::CorruptFile)?;
    let read_matrix = |r: &mut R| -> Result<Vec<f32>, EmbedError> {
        let mut m = vec![0f32; cells];
        r.read_f32_into::<LE>(&mut m)?;
        Ok(m)
    };
    let e_in = read_matrix(r)?;
    let e_out = read_matrix(r)?;
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(EmbedError::CorruptFile);
    }
    let model = EmbeddingModel::from_parts(config, vocab, e_in, e_out, rng, stats, sampler);
    if !model.is_healthy() {
        return Err(EmbedError::CorruptFile);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::splitter::{Key, Sequence};
    use std::net::IpAddr;

    fn trained() -> EmbeddingModel {
        let mut m = EmbeddingModel::new(ModelConfig { dim: 4, seed: 9, ..ModelConfig::default() }).unwrap();
        let key = Key::ip(IpAddr::from([10, 0, 0, 1]));
        for i in 0..50 {
            let hosts = [format!("h{}", i % 7), format!("h{}", (i + 1) % 7), format!("h{}", (i + 3) % 7)];
            for h in &hosts {
                m.observe(h);
            }
            m.update(&Sequence::from_tokens(key.clone(), 3, hosts.iter().map(String::as_str), 0)).unwrap();
        }
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = trained();
        let bytes = m.to_bytes();
        let back = EmbeddingModel::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.vocab(), m.vocab());
        assert_eq!(back.stats(), m.stats());
        assert!(back.input_matrix().iter().zip(m.input_matrix()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn resumed_training_matches() {
        let mut a = trained();
        let mut b = EmbeddingModel::from_bytes(&a.to_bytes()).unwrap();
        // The new token makes the sampler stale in both copies at different points
        // unless the table itself was persisted.
        for hosts in [["h1", "h2"], ["h2", "new.example"], ["h1", "h5"]] {
            let s = Sequence::from_tokens(Key::ip(IpAddr::from([1, 2, 3, 4])), 2, hosts, 0);
            a.update(&s).unwrap();
            b.update(&s).unwrap();
        }
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn truncation_and_version() {
        let bytes = trained().to_bytes();
        for cut in [0, 3, 8, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(EmbeddingModel::from_bytes(&bytes[..cut]), Err(EmbedError::CorruptFile)), "cut {cut}");
        }
        let mut future = bytes.clone();
        future[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            EmbeddingModel::from_bytes(&future),
            Err(EmbedError::VersionMismatch { found: 2, supported: 1 })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(EmbeddingModel::from_bytes(&extra), Err(EmbedError::CorruptFile)));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nv2v");
        let m = trained();
        m.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), m.to_bytes());
        assert_eq!(EmbeddingModel::load(&path).unwrap().to_bytes(), m.to_bytes());
    }
}
