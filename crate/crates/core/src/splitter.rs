//! Keyed splitting of the tuple stream into per-key sliding windows.
//!
//! Each key owns a FIFO of at most `n` hostname tokens. When a push fills the
//! queue, the full window is emitted (every `stride`-th time) and the oldest
//! token is dropped, so windows slide one tuple at a time by default.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::net::IpAddr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tuple_gen::FlowTuple;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitterError {
    #[error("queue size must be at least 2, got {0}")]
    QueueSize(usize),
    #[error("stride must be at least 1")]
    Stride,
    #[error("key must name at least one attribute")]
    EmptyKey,
    #[error("key attribute {0:?} repeated")]
    DuplicateAttr(KeyAttr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("unknown key")]
pub struct UnknownKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyAttr {
    SrcIp,
    Hostname,
}

/// Ordered, non-empty subset of tuple attributes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<KeyAttr>", into = "Vec<KeyAttr>")]
pub struct KeySpec {
    attrs: Vec<KeyAttr>,
}

impl KeySpec {
    pub fn new(attrs: Vec<KeyAttr>) -> Result<Self, SplitterError> {
        if attrs.is_empty() {
            return Err(SplitterError::EmptyKey);
        }
        if attrs.len() == 2 && attrs[0] == attrs[1] {
            return Err(SplitterError::DuplicateAttr(attrs[0]));
        }
        if attrs.len() > 2 {
            return Err(SplitterError::DuplicateAttr(attrs[2]));
        }
        Ok(KeySpec { attrs })
    }

    /// The per-user key: source address only.
    pub fn src_ip() -> Self {
        KeySpec { attrs: vec![KeyAttr::SrcIp] }
    }

    pub fn attrs(&self) -> &[KeyAttr] {
        &self.attrs
    }

    pub fn key_of(&self, t: &FlowTuple) -> Key {
        let part = |a: KeyAttr| match a {
            KeyAttr::SrcIp => KeyPart::Ip(t.src_ip),
            KeyAttr::Hostname => KeyPart::Host(t.hostname.clone()),
        };
        Key { first: part(self.attrs[0]), second: self.attrs.get(1).map(|&a| part(a)) }
    }
}

impl Default for KeySpec {
    fn default() -> Self {
        KeySpec::src_ip()
    }
}

impl TryFrom<Vec<KeyAttr>> for KeySpec {
    type Error = SplitterError;

    fn try_from(v: Vec<KeyAttr>) -> Result<Self, Self::Error> {
        KeySpec::new(v)
    }
}

impl From<KeySpec> for Vec<KeyAttr> {
    fn from(k: KeySpec) -> Self {
        k.attrs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeyPart {
    Ip(IpAddr),
    Host(Arc<str>),
}

impl fmt::Display for KeyPart {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KeyPart::Ip(ip) => write!(f, "{ip}"),
            KeyPart::Host(h) => f.write_str(h),
        }
    }
}

/// Attribute values identifying one stream.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key {
    first: KeyPart,
    second: Option<KeyPart>,
}

impl Key {
    pub fn ip(ip: IpAddr) -> Self {
        Key { first: KeyPart::Ip(ip), second: None }
    }

    pub fn parts(&self) -> impl Iterator<Item = &KeyPart> {
        std::iter::once(&self.first).chain(self.second.as_ref())
    }

    /// Stable 64-bit FNV-1a hash used for shard routing.
    pub fn stable_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for part in self.parts() {
            match part {
                KeyPart::Ip(IpAddr::V4(a)) => {
                    feed(&[4]);
                    feed(&a.octets());
                }
                KeyPart::Ip(IpAddr::V6(a)) => {
                    feed(&[6]);
                    feed(&a.octets());
                }
                KeyPart::Host(s) => {
                    feed(&[0x68]);
                    feed(s.as_bytes());
                    feed(&[0]);
                }
            }
        }
        h
    }

    pub fn shard(&self, shards: usize) -> usize {
        (self.stable_hash() % shards.max(1) as u64) as usize
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.first)?;
        if let Some(s) = &self.second {
            write!(f, "|{s}")?;
        }
        Ok(())
    }
}

/// A fixed-size window of hostname tokens, front-padded with `None`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sequence {
    pub key: Key,
    /// Exactly `n` slots; real tokens occupy the last `real_len` in arrival order.
    pub tokens: Vec<Option<Arc<str>>>,
    pub real_len: usize,
    /// Timestamp of the newest token.
    pub ts_micros: u64,
}

impl Sequence {
    /// Builds a padded window from real tokens (oldest first).
    pub fn from_tokens<I, S>(key: Key, n: usize, real: I, ts_micros: u64) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<Arc<str>>,
    {
        let real: Vec<Arc<str>> = real.into_iter().map(Into::into).collect();
        assert!(!real.is_empty() && real.len() <= n, "window must hold 1..=n tokens");
        let real_len = real.len();
        let mut tokens = vec![None; n - real_len];
        tokens.extend(real.into_iter().map(Some));
        Sequence { key, tokens, real_len, ts_micros }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.real_len == 0
    }

    pub fn real_tokens(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().flatten().map(|t| &**t)
    }

    pub fn newest(&self) -> &str {
        self.tokens.last().and_then(|t| t.as_deref()).expect("sequences hold at least one token")
    }
}

#[derive(Debug, Clone)]
pub struct KeyQueue {
    buffer: VecDeque<(Arc<str>, u64)>,
    last_seen: u64,
    last_seq: u64,
    fills: u64,
    pushes: u64,
}

impl KeyQueue {
    pub fn len(&self) -> usize {
        self.buffer.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffer.is_empty()
    }

    pub fn last_seen(&self) -> u64 {
        self.last_seen
    }

    /// Tuples pushed to this key since it was created.
    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.buffer.iter().map(|(h, _)| &**h)
    }
}

/// What one push produced.
#[derive(Debug, Clone)]
pub struct Observation {
    /// Full window for training, when the push filled the queue on a stride.
    pub emitted: Option<Sequence>,
    /// The key's most recent window including this push, for prediction.
    pub current: Sequence,
    /// Pushes to this key so far, including this one.
    pub key_pushes: u64,
}

/// Single-writer splitter state for one shard.
#[derive(Debug, Clone)]
pub struct Splitter {
    spec: KeySpec,
    n: usize,
    stride: u64,
    queues: HashMap<Key, KeyQueue>,
    pushes: u64,
}

impl Splitter {
    pub fn new(spec: KeySpec, n: usize, stride: usize) -> Result<Self, SplitterError> {
        if n < 2 {
            return Err(SplitterError::QueueSize(n));
        }
        if stride == 0 {
            return Err(SplitterError::Stride);
        }
        Ok(Splitter { spec, n, stride: stride as u64, queues: HashMap::new(), pushes: 0 })
    }

    pub fn queue_size(&self) -> usize {
        self.n
    }

    pub fn key_spec(&self) -> &KeySpec {
        &self.spec
    }

    pub fn push(&mut self, t: &FlowTuple) -> Option<Sequence> {
        let key = self.spec.key_of(t);
        self.push_keyed(key, t.hostname.clone(), t.ts_micros).emitted
    }

    /// Pushes and also returns the key's current window.
    pub fn observe(&mut self, t: &FlowTuple) -> Observation {
        let key = self.spec.key_of(t);
        self.push_keyed(key, t.hostname.clone(), t.ts_micros)
    }

    pub fn push_keyed(&mut self, key: Key, hostname: Arc<str>, ts_micros: u64) -> Observation {
        self.pushes += 1;
        let n = self.n;
        let seq_no = self.pushes;
        let q = self.queues.entry(key.clone()).or_insert_with(|| KeyQueue {
            buffer: VecDeque::with_capacity(n),
            last_seen: ts_micros,
            last_seq: seq_no,
            fills: 0,
            pushes: 0,
        });
        q.pushes += 1;
        q.buffer.push_back((hostname, ts_micros));
        q.last_seen = q.last_seen.max(ts_micros);
        q.last_seq = seq_no;
        let current = window(&key, n, &q.buffer);
        let mut emitted = None;
        if q.buffer.len() == n {
            if q.fills % self.stride == 0 {
                emitted = Some(current.clone());
            }
            q.fills += 1;
            q.buffer.pop_front();
        }
        Observation { emitted, current, key_pushes: q.pushes }
    }

    /// Current queue contents of `key` as a padded window; does not mutate.
    pub fn snapshot(&self, key: &Key) -> Result<Sequence, UnknownKey> {
        match self.queues.get(key) {
            Some(q) if !q.buffer.is_empty() => Ok(window(key, self.n, &q.buffer)),
            _ => Err(UnknownKey),
        }
    }

    pub fn queue(&self, key: &Key) -> Option<&KeyQueue> {
        self.queues.get(key)
    }

    /// Drops keys idle for longer than `ttl_micros`, then least-recently-seen
    /// keys until at most `max_keys` remain. Returns evicted keys, oldest first.
    pub fn evict_idle(&mut self, now: u64, ttl_micros: u64, max_keys: usize) -> Vec<Key> {
        let mut idle: Vec<(u64, u64, Key)> = Vec::new();
        let mut live: Vec<(u64, u64, Key)> = Vec::new();
        for (k, q) in &self.queues {
            let entry = (q.last_seen, q.last_seq, k.clone());
            if now.saturating_sub(q.last_seen) > ttl_micros {
                idle.push(entry);
            } else {
                live.push(entry);
            }
        }
        idle.sort();
        live.sort();
        let overflow = live.len().saturating_sub(max_keys);
        let evicted: Vec<Key> = idle.into_iter().chain(live.into_iter().take(overflow)).map(|e| e.2).collect();
        for k in &evicted {
            self.queues.remove(k);
        }
        evicted
    }

    pub fn live_keys(&self) -> usize {
        self.queues.len()
    }

    pub fn retained_tokens(&self) -> usize {
        self.queues.values().map(KeyQueue::len).sum()
    }
}

fn window(key: &Key, n: usize, buf: &VecDeque<(Arc<str>, u64)>) -> Sequence {
    let real_len = buf.len();
    let mut tokens = Vec::with_capacity(n);
    tokens.resize(n - real_len, None);
    tokens.extend(buf.iter().map(|(h, _)| Some(h.clone())));
    let ts_micros = buf.back().map_or(0, |(_, ts)| *ts);
    Sequence { key: key.clone(), tokens, real_len, ts_micros }
}
