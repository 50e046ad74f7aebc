use std::cmp::Ordering;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CategoryStore, Profile};
use crate::embed::{ModelSnapshot, FIRST_ID, OOV, PAD};
use crate::par::{self, Exec};
use crate::splitter::{Key, Sequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    #[default]
    Cosine,
    Dot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum KnnError {
    #[error("hostname not in vocabulary")]
    NotInVocabulary,
    /// No labeled hostname is in the vocabulary.
    #[error("no labeled hostnames to compare against")]
    EmptyStore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("no token of the sequence is in the vocabulary")]
pub struct NoProfile;

/// Flat exact kNN index over the labeled hostnames present in a model
/// snapshot. Results per vocabulary id are computed once and memoized.
#[derive(Debug)]
pub struct ProfileIndex {
    snapshot: ModelSnapshot,
    store: Arc<CategoryStore>,
    similarity: Similarity,
    k: usize,
    dim: usize,
    /// Labeled, in-vocabulary ids in ascending order.
    ids: Vec<u32>,
    /// Row-major vectors of `ids`, unit-normalized for cosine.
    vectors: Vec<f64>,
    memo: Vec<OnceLock<Option<Arc<[f64]>>>>,
}

fn normalized(row: &[f32], similarity: Similarity) -> Vec<f64> {
    let v: Vec<f64> = row.iter().map(|&x| f64::from(x)).collect();
    if similarity == Similarity::Dot {
        return v;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v
    } else {
        v.into_iter().map(|x| x / norm).collect()
    }
}

impl ProfileIndex {
    pub fn new(snapshot: ModelSnapshot, store: Arc<CategoryStore>, k: usize, similarity: Similarity) -> Self {
        assert!(k >= 1, "k must be at least 1");
        let dim = snapshot.dim();
        let vocab = snapshot.vocab();
        let mut ids: Vec<u32> = store.hostnames().into_iter().filter_map(|h| vocab.get(h)).collect();
        ids.sort_unstable();
        let mut vectors = Vec::with_capacity(ids.len() * dim);
        for &id in &ids {
            vectors.extend(normalized(snapshot.row(id).expect("vocab ids have rows"), similarity));
        }
        let memo = (0..vocab.len()).map(|_| OnceLock::new()).collect();
        ProfileIndex { snapshot, store, similarity, k, dim, ids, vectors, memo }
    }

    pub fn snapshot(&self) -> &ModelSnapshot {
        &self.snapshot
    }

    pub fn store(&self) -> &CategoryStore {
        &self.store
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Number of labeled hostnames searchable in this snapshot.
    pub fn indexed(&self) -> usize {
        self.ids.len()
    }

    /// Category weights for one hostname.
    pub fn knn_categories(&self, hostname: &str) -> Result<Arc<[f64]>, KnnError> {
        let id = self.snapshot.vocab().get(hostname).ok_or(KnnError::NotInVocabulary)?;
        self.categories_of(id)
    }

    pub fn categories_of(&self, id: u32) -> Result<Arc<[f64]>, KnnError> {
        if id < FIRST_ID || id as usize >= self.memo.len() {
            return Err(KnnError::NotInVocabulary);
        }
        self.memo[id as usize].get_or_init(|| self.compute(id).map(Arc::from)).clone().ok_or(KnnError::EmptyStore)
    }

    fn compute(&self, id: u32) -> Option<Vec<f64>> {
        let host = self.snapshot.vocab().token(id)?;
        if let Some(w) = self.store.label_distribution(host) {
            return Some(w);
        }
        if self.ids.is_empty() {
            return None;
        }
        let query = normalized(self.snapshot.row(id)?, self.similarity);
        let scored: Vec<(f64, u32)> = self
            .ids
            .iter()
            .zip(self.vectors.chunks_exact(self.dim))
            .map(|(&nid, v)| (v.iter().zip(&query).map(|(a, b)| a * b).sum(), nid))
            .collect();
        let top = top_k(scored, self.k);
        Some(self.blend(&top))
    }

    /// Similarity-weighted sum of neighbor label indicators (negative
    /// similarities count as zero), normalized. When every weight is zero the
    /// neighbors count equally.
    fn blend(&self, top: &[(f64, u32)]) -> Vec<f64> {
        let vocab = self.snapshot.vocab();
        let mut w = vec![0.0; self.store.taxonomy_len()];
        let mut add = |weight: f64, nid: u32| {
            let cats = self.store.get(vocab.token(nid).unwrap()).unwrap();
            for &c in cats {
                w[usize::from(c)] += weight;
            }
        };
        let total: f64 = top.iter().map(|(s, _)| s.max(0.0)).sum();
        for &(s, nid) in top {
            if total > 0.0 {
                add(s.max(0.0), nid);
            } else {
                add(1.0, nid);
            }
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= z);
        w
    }

    /// Fills the memo for every vocabulary id.
    pub fn precompute(&self, exec: Exec) {
        par::map_range(exec, self.memo.len(), |i| {
            let _ = self.categories_of(i as u32);
        });
    }

    /// Averages kNN categories over the in-vocabulary tokens of `seq`.
    pub fn profile(&self, seq: &Sequence) -> Result<Profile, NoProfile> {
        self.profile_tokens(seq.key.clone(), seq.real_tokens())
    }

    pub fn profile_tokens<'a, I>(&self, key: Key, tokens: I) -> Result<Profile, NoProfile>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let vocab = self.snapshot.vocab();
        let mut acc = vec![0.0; self.store.taxonomy_len()];
        let mut support = 0u64;
        for t in tokens {
            let id = vocab.lookup(t);
            if id == OOV || id == PAD {
                continue;
            }
            if let Ok(w) = self.categories_of(id) {
                acc.iter_mut().zip(w.iter()).for_each(|(a, b)| *a += b);
                support += 1;
            }
        }
        Profile::from_weights(key, acc, support).ok_or(NoProfile)
    }
}

/// Best `k` by similarity descending, ties broken by ascending id.
pub fn top_k(mut scored: Vec<(f64, u32)>, k: usize) -> Vec<(f64, u32)> {
    let cmp = |a: &(f64, u32), b: &(f64, u32)| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    scored
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiling::CategoryTaxonomy;
    use std::net::IpAddr;

    fn setup() -> (ModelSnapshot, Arc<CategoryStore>) {
        let tax = CategoryTaxonomy::new(["A", "B"]).unwrap();
        let snap = ModelSnapshot::from_embeddings(
            2,
            [
                ("a1", vec![1.0, 0.1]),
                ("a2", vec![0.9, 0.0]),
                ("b1", vec![0.0, 1.0]),
                ("b2", vec![0.1, 0.9]),
                ("q", vec![1.0, 0.05]),
                ("twin", vec![0.0, 2.0]),
            ],
        );
        let mut store = CategoryStore::new(&tax);
        store.insert("a1", [0]);
        store.insert("a2", [0]);
        store.insert("b1", [1]);
        store.insert("b2", [1]);
        store.insert("offline.example", [1]);
        (snap, Arc::new(store))
    }

    #[test]
    fn self_label_short_circuit() {
        let (snap, store) = setup();
        let idx = ProfileIndex::new(snap, store, 3, Similarity::Cosine);
        assert_eq!(&*idx.knn_categories("a1").unwrap(), &[1.0, 0.0]);
        assert_eq!(idx.indexed(), 4);
        assert_eq!(idx.knn_categories("offline.example"), Err(KnnError::NotInVocabulary));
    }

    #[test]
    fn nearest_cluster_wins() {
        let (snap, store) = setup();
        let idx = ProfileIndex::new(snap.clone(), store.clone(), 3, Similarity::Cosine);
        let w = idx.knn_categories("q").unwrap();
        assert!(w[0] > w[1]);
        let idx = ProfileIndex::new(snap, store, 1, Similarity::Cosine);
        assert_eq!(&*idx.knn_categories("twin").unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn profile_from_sequence() {
        let (snap, store) = setup();
        let idx = ProfileIndex::new(snap, store, 2, Similarity::Cosine);
        let key = Key::ip(IpAddr::from([10, 0, 0, 1]));
        let p = idx.profile(&Sequence::from_tokens(key.clone(), 3, ["a1"], 0)).unwrap();
        assert_eq!(p.weights, vec![1.0, 0.0]);
        assert_eq!(p.support, 1);
        let p = idx.profile(&Sequence::from_tokens(key.clone(), 3, ["q", "unknown.example"], 0)).unwrap();
        assert_eq!(p.support, 1);
        assert_eq!(idx.profile(&Sequence::from_tokens(key, 3, ["x.example", "y.example"], 0)), Err(NoProfile));
    }

    #[test]
    fn empty_index() {
        let tax = CategoryTaxonomy::new(["A"]).unwrap();
        let snap = ModelSnapshot::from_embeddings(1, [("h", vec![1.0])]);
        let idx = ProfileIndex::new(snap, Arc::new(CategoryStore::new(&tax)), 1, Similarity::Cosine);
        assert_eq!(idx.knn_categories("h"), Err(KnnError::EmptyStore));
    }

    #[test]
    fn negative_similarities_fall_back_to_plain_average() {
        let tax = CategoryTaxonomy::new(["A", "B"]).unwrap();
        let snap = ModelSnapshot::from_embeddings(1, [("a", vec![-1.0]), ("b", vec![-2.0]), ("q", vec![1.0])]);
        let mut store = CategoryStore::new(&tax);
        store.insert("a", [0]);
        store.insert("b", [1]);
        let idx = ProfileIndex::new(snap, Arc::new(store), 2, Similarity::Cosine);
        assert_eq!(&*idx.knn_categories("q").unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn top_k_ties_by_id() {
        let v = vec![(0.5, 9), (0.9, 4), (0.5, 2), (0.1, 1)];
        assert_eq!(top_k(v.clone(), 2), vec![(0.9, 4), (0.5, 2)]);
        assert_eq!(top_k(v, 10).len(), 4);
    }
}
