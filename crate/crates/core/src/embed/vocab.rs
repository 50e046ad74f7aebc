use std::collections::HashMap;
use std::sync::Arc;

pub const PAD: u32 = 0;
pub const OOV: u32 = 1;
pub const FIRST_ID: u32 = 2;
pub const DEFAULT_MAX_VOCAB: usize = 1 << 20;

/// Hostname to id mapping with reserved PAD and OOV ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<Arc<str>, u32>,
    id_to_token: Vec<Arc<str>>,
    counts: Vec<u64>,
    capacity: usize,
}

impl Vocabulary {
    /// `capacity` counts the two reserved ids and is raised to at least 2.
    pub fn new(capacity: usize) -> Self {
        Vocabulary {
            token_to_id: HashMap::new(),
            id_to_token: vec![Arc::from("<pad>"), Arc::from("<oov>")],
            counts: vec![0, 0],
            capacity: capacity.max(2),
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    /// True when no hostname has been interned.
    pub fn is_empty(&self) -> bool {
        self.len() == FIRST_ID as usize
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.len() >= self.capacity
    }

    /// Returns the id of `hostname`, assigning one if there is room, and
    /// counts one observation. Returns OOV (also counted) when full.
    pub fn intern(&mut self, hostname: &str) -> u32 {
        let id = self.assign(hostname);
        self.counts[id as usize] += 1;
        id
    }

    /// Like `intern` without counting an observation.
    pub fn assign(&mut self, hostname: &str) -> u32 {
        if let Some(&id) = self.token_to_id.get(hostname) {
            return id;
        }
        if self.is_full() {
            return OOV;
        }
        let id = self.id_to_token.len() as u32;
        let token: Arc<str> = Arc::from(hostname);
        self.token_to_id.insert(token.clone(), id);
        self.id_to_token.push(token);
        self.counts.push(0);
        id
    }

    pub fn get(&self, hostname: &str) -> Option<u32> {
        self.token_to_id.get(hostname).copied()
    }

    /// Id of `hostname`, or OOV when it has not been interned.
    pub fn lookup(&self, hostname: &str) -> u32 {
        self.get(hostname).unwrap_or(OOV)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|t| &**t)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Non-reserved `(id, token)` pairs in id order.
    pub fn tokens(&self) -> impl Iterator<Item = (u32, &str)> {
        self.id_to_token.iter().enumerate().skip(FIRST_ID as usize).map(|(i, t)| (i as u32, &**t))
    }

    /// Rebuilds a vocabulary from its non-reserved tokens and all counts.
    pub(crate) fn from_parts(capacity: usize, tokens: Vec<String>, counts: Vec<u64>) -> Option<Self> {
        if counts.len() != tokens.len() + FIRST_ID as usize {
            return None;
        }
        let mut v = Vocabulary::new(capacity);
        if tokens.len() + FIRST_ID as usize > v.capacity {
            return None;
        }
        for t in &tokens {
            if v.get(t).is_some() {
                return None;
            }
            v.assign(t);
        }
        v.counts = counts;
        Some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning() {
        let mut v = Vocabulary::new(DEFAULT_MAX_VOCAB);
        assert!(v.is_empty());
        assert_eq!(v.intern("a.com"), 2);
        assert_eq!(v.intern("a.com"), 2);
        assert_eq!(v.count(2), 2);
        assert_eq!(v.token(2), Some("a.com"));
        assert_eq!(v.lookup("b.com"), OOV);
    }

    #[test]
    fn capacity_maps_to_oov() {
        let mut v = Vocabulary::new(3);
        assert_eq!(v.intern("a.com"), 2);
        assert_eq!(v.intern("b.com"), OOV);
        assert_eq!(v.len(), 3);
        assert_eq!(v.count(OOV), 1);
    }

    #[test]
    fn parts_round_trip() {
        let mut v = Vocabulary::new(10);
        v.intern("x");
        v.intern("y");
        v.intern("x");
        let tokens = v.tokens().map(|(_, t)| t.to_string()).collect();
        assert_eq!(Vocabulary::from_parts(10, tokens, v.counts().to_vec()), Some(v));
        assert_eq!(Vocabulary::from_parts(10, vec!["x".into(), "x".into()], vec![0; 4]), None);
    }
}
