use rand::Rng;

use super::vocab::FIRST_ID;

/// Negative-sampling distribution proportional to `count^exponent` over
/// non-reserved ids with a non-zero count.
#[derive(Debug, Clone, Default)]
pub struct UnigramTable {
    ids: Vec<u32>,
    cumulative: Vec<f64>,
    built_len: usize,
    built_total: u64,
}

impl UnigramTable {
    pub fn build(counts: &[u64], exponent: f64) -> Self {
        let mut ids = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (id, &c) in counts.iter().enumerate().skip(FIRST_ID as usize) {
            if c > 0 {
                acc += (c as f64).powf(exponent);
                ids.push(id as u32);
                cumulative.push(acc);
            }
        }
        UnigramTable { ids, cumulative, built_len: counts.len(), built_total: counts.iter().sum() }
    }

    /// True once the vocabulary or the total count has grown enough that the
    /// table should be rebuilt. Growth thresholds are geometric so rebuilds
    /// cost amortized O(1) per observation.
    pub fn is_stale(&self, vocab_len: usize, total_count: u64) -> bool {
        if self.ids.is_empty() {
            return total_count > self.built_total;
        }
        vocab_len * 10 >= self.built_len * 11 || total_count * 4 >= self.built_total * 5
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<u32> {
        let total = *self.cumulative.last()?;
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u);
        Some(self.ids[i.min(self.ids.len() - 1)])
    }

    /// Draws one id different from `exclude`, giving up after a bounded number
    /// of rejections (only possible when `exclude` dominates the table).
    pub fn sample_excluding<R: Rng + ?Sized>(&self, rng: &mut R, exclude: u32) -> Option<u32> {
        if self.ids.len() == 1 && self.ids[0] == exclude {
            return None;
        }
        (0..32).find_map(|_| self.sample(rng).filter(|&id| id != exclude))
    }

    pub(crate) fn to_parts(&self) -> (&[u32], &[f64], usize, u64) {
        (&self.ids, &self.cumulative, self.built_len, self.built_total)
    }

    pub(crate) fn from_parts(ids: Vec<u32>, cumulative: Vec<f64>, built_len: usize, built_total: u64) -> Option<Self> {
        let increasing = cumulative.windows(2).all(|w| w[0] < w[1]);
        let ids_sorted = ids.windows(2).all(|w| w[0] < w[1]);
        let positive = cumulative.first().is_none_or(|&c| c > 0.0 && c.is_finite());
        let in_range = ids.last().is_none_or(|&id| (id as usize) < built_len && id >= FIRST_ID);
        (ids.len() == cumulative.len() && increasing && ids_sorted && positive && in_range).then_some(UnigramTable {
            ids,
            cumulative,
            built_len,
            built_total,
        })
    }

    /// Sampling probability of `id` (for tests).
    pub fn probability(&self, id: u32) -> f64 {
        let Some(total) = self.cumulative.last() else { return 0.0 };
        match self.ids.binary_search(&id) {
            Ok(i) => (self.cumulative[i] - if i == 0 { 0.0 } else { self.cumulative[i - 1] }) / total,
            Err(_) => 0.0,
        }
    }
}
