use std::collections::HashMap;
use std::sync::Arc;

use super::{CategoryId, CategoryStore, Profile};
use crate::splitter::Key;

#[derive(Debug, Default, Clone)]
struct History {
    visited: Vec<Arc<str>>,
    categories: Vec<CategoryId>,
}

/// Category-accumulation profiler. Every visit is kept and each profile is
/// recounted from the full per-user category multiset, so its cost grows
/// with a user's history.
#[derive(Debug, Clone)]
pub struct BaselineProfiler {
    store: Arc<CategoryStore>,
    users: HashMap<Key, History>,
}

impl BaselineProfiler {
    pub fn new(store: Arc<CategoryStore>) -> Self {
        BaselineProfiler { store, users: HashMap::new() }
    }

    pub fn update(&mut self, key: &Key, hostname: &Arc<str>) {
        let h = match self.users.get_mut(key) {
            Some(h) => h,
            None => self.users.entry(key.clone()).or_default(),
        };
        h.visited.push(hostname.clone());
        if let Some(cats) = self.store.get(hostname) {
            h.categories.extend_from_slice(cats);
        }
    }

    pub fn profile(&self, key: &Key) -> Option<Profile> {
        let h = self.users.get(key)?;
        let mut counts = vec![0.0; self.store.taxonomy_len()];
        for &c in &h.categories {
            counts[usize::from(c)] += 1.0;
        }
        let labeled = h.visited.iter().filter(|v| self.store.contains(v)).count() as u64;
        Profile::from_weights(key.clone(), counts, labeled)
    }

    pub fn users(&self) -> usize {
        self.users.len()
    }

    pub fn history_len(&self, key: &Key) -> usize {
        self.users.get(key).map_or(0, |h| h.visited.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiling::CategoryTaxonomy;
    use std::net::IpAddr;

    #[test]
    fn counting() {
        let tax = CategoryTaxonomy::new(["A", "B"]).unwrap();
        let mut store = CategoryStore::new(&tax);
        store.insert("h1", [0]);
        store.insert("h2", [0, 1]);
        let mut b = BaselineProfiler::new(Arc::new(store));
        let user = Key::ip(IpAddr::from([10, 0, 0, 1]));
        assert_eq!(b.profile(&user), None);
        b.update(&user, &Arc::from("cdn.example"));
        assert_eq!(b.profile(&user), None);
        b.update(&user, &Arc::from("h1"));
        b.update(&user, &Arc::from("h2"));
        let p = b.profile(&user).unwrap();
        assert!((p.weights[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.weights[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.support, 2);
        assert_eq!(b.history_len(&user), 3);
    }
}
