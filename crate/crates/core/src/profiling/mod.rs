//! Category profiles from embeddings (kNN over labeled hostnames) and from
//! the category-accumulation baseline.

mod baseline;
mod knn;
mod taxonomy;

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::splitter::Key;

pub use baseline::BaselineProfiler;
pub use knn::{top_k, KnnError, NoProfile, ProfileIndex, Similarity};
pub use taxonomy::{
    load_categories, CategoryFileError, CategoryId, CategoryStore, CategoryTaxonomy, TaxonomyError, IAB_TIER1,
};

/// A user's normalized category weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Profile {
    pub key: Key,
    pub weights: Vec<f64>,
    pub support: u64,
}

impl Profile {
    /// Normalizes non-negative weights; `None` when they sum to zero.
    pub fn from_weights(key: Key, mut weights: Vec<f64>, support: u64) -> Option<Self> {
        debug_assert!(weights.iter().all(|&w| w >= 0.0));
        let z: f64 = weights.iter().sum();
        if !(z > 0.0 && z.is_finite()) {
            return None;
        }
        weights.iter_mut().for_each(|w| *w /= z);
        Some(Profile { key, weights, support })
    }

    pub fn is_normalized(&self) -> bool {
        self.weights.iter().all(|&w| w >= 0.0) && (self.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9
    }

    /// Category ids by weight descending, ties by id.
    pub fn ranked(&self) -> Vec<(CategoryId, f64)> {
        let mut r: Vec<(CategoryId, f64)> =
            self.weights.iter().enumerate().map(|(i, &w)| (i as CategoryId, w)).collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    #[default]
    TotalVariation,
    /// Euclidean distance scaled by 1/√2 so it also lies in [0, 1].
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("profiles have {0} and {1} categories")]
pub struct TaxonomyMismatch(pub usize, pub usize);

pub fn profile_distance(p: &[f64], q: &[f64], metric: DistanceMetric) -> Result<f64, TaxonomyMismatch> {
    if p.len() != q.len() {
        return Err(TaxonomyMismatch(p.len(), q.len()));
    }
    let pairs = p.iter().zip(q);
    Ok(match metric {
        DistanceMetric::TotalVariation => 0.5 * pairs.map(|(a, b)| (a - b).abs()).sum::<f64>(),
        DistanceMetric::L2 => (pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 2.0).sqrt(),
    })
}

pub fn total_variation(p: &[f64], q: &[f64]) -> Result<f64, TaxonomyMismatch> {
    profile_distance(p, q, DistanceMetric::TotalVariation)
}

/// Writes profiles as `user,<category...>,support,ts_micros`.
pub struct ProfileCsvWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> ProfileCsvWriter<W> {
    pub fn new(w: W, taxonomy: &CategoryTaxonomy) -> csv::Result<Self> {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        let mut header = vec!["user"];
        header.extend(taxonomy.names().iter().map(String::as_str));
        header.extend(["support", "ts_micros"]);
        inner.write_record(&header)?;
        Ok(ProfileCsvWriter { inner })
    }

    pub fn write(&mut self, p: &Profile, ts_micros: u64) -> csv::Result<()> {
        let mut row = Vec::with_capacity(p.weights.len() + 3);
        row.push(p.key.to_string());
        row.extend(p.weights.iter().map(|w| w.to_string()));
        row.push(p.support.to_string());
        row.push(ts_micros.to_string());
        self.inner.write_record(&row)
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }

    pub fn into_inner(self) -> std::io::Result<W> {
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::net::IpAddr;

    #[test]
    fn distance_examples() {
        let tv = |p: &[f64], q: &[f64]| total_variation(p, q).unwrap();
        assert_eq!(tv(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        assert_eq!(tv(&[1.0, 0.0], &[0.0, 1.0]), 1.0);
        assert_eq!(tv(&[0.5, 0.5], &[1.0, 0.0]), 0.5);
        assert_eq!(total_variation(&[1.0], &[0.5, 0.5]), Err(TaxonomyMismatch(1, 2)));
        let l2 = profile_distance(&[1.0, 0.0], &[0.0, 1.0], DistanceMetric::L2).unwrap();
        assert!((l2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization() {
        let key = Key::ip(IpAddr::from([1, 2, 3, 4]));
        let p = Profile::from_weights(key.clone(), vec![1.0, 3.0], 2).unwrap();
        assert_eq!(p.weights, vec![0.25, 0.75]);
        assert!(p.is_normalized());
        assert_eq!(p.ranked()[0], (1, 0.75));
        assert_eq!(Profile::from_weights(key, vec![0.0, 0.0], 0), None);
    }

    #[test]
    fn csv_header_quotes_commas() {
        let t = CategoryTaxonomy::new(["A", "Law, Gov't & Politics"]).unwrap();
        let mut w = ProfileCsvWriter::new(Vec::new(), &t).unwrap();
        let p = Profile::from_weights(Key::ip(IpAddr::from([10, 0, 0, 1])), vec![1.0, 1.0], 3).unwrap();
        w.write(&p, 7).unwrap();
        let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
        assert_eq!(text, "user,A,\"Law, Gov't & Politics\",support,ts_micros\n10.0.0.1,0.5,0.5,3,7\n");
    }
}
