use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

use crate::tuple_gen::normalize_hostname;

/// The 26 first-level IAB content categories, one per line.
pub const IAB_TIER1: &str = include_str!("../../data/iab_tier1.txt");

pub type CategoryId = u16;

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("line {line}: empty category name")]
    EmptyName { line: usize },
    #[error("line {line}: duplicate category {name:?}")]
    Duplicate { line: usize, name: String },
    #[error("taxonomy has no categories")]
    Empty,
    #[error("too many categories")]
    TooLarge,
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryTaxonomy {
    names: Vec<String>,
    index: HashMap<String, CategoryId>,
}

impl CategoryTaxonomy {
    pub fn new<I, S>(names: I) -> Result<Self, TaxonomyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut t = CategoryTaxonomy { names: Vec::new(), index: HashMap::new() };
        for (i, name) in names.into_iter().enumerate() {
            let name: String = name.into();
            let line = i + 1;
            if name.trim().is_empty() {
                return Err(TaxonomyError::EmptyName { line });
            }
            if t.index.contains_key(&name) {
                return Err(TaxonomyError::Duplicate { line, name });
            }
            let id = CategoryId::try_from(t.names.len()).map_err(|_| TaxonomyError::TooLarge)?;
            t.index.insert(name.clone(), id);
            t.names.push(name);
        }
        if t.names.is_empty() {
            return Err(TaxonomyError::Empty);
        }
        Ok(t)
    }

    /// One name per line; surrounding whitespace is trimmed.
    pub fn parse(text: &str) -> Result<Self, TaxonomyError> {
        let lines: Vec<&str> = text.lines().map(str::trim).collect();
        let end = lines.iter().rposition(|l| !l.is_empty()).map_or(0, |i| i + 1);
        CategoryTaxonomy::new(lines[..end].iter().copied())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaxonomyError> {
        CategoryTaxonomy::parse(&fs::read_to_string(path)?)
    }

    pub fn iab_tier1() -> Self {
        CategoryTaxonomy::parse(IAB_TIER1).expect("bundled taxonomy is valid")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: CategoryId) -> Option<&str> {
        self.names.get(usize::from(id)).map(String::as_str)
    }

    pub fn id(&self, name: &str) -> Option<CategoryId> {
        self.index.get(name).copied()
    }
}

impl Default for CategoryTaxonomy {
    fn default() -> Self {
        CategoryTaxonomy::iab_tier1()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CategoryFileError {
    #[error("line {line}: unknown category {name:?}")]
    UnknownCategory { line: usize, name: String },
    #[error("line {line}: expected `hostname<TAB>cat1,cat2,...`")]
    MalformedLine { line: usize },
    #[error("io: {0}")]
    Io(String),
}

/// Hostname labels over one taxonomy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CategoryStore {
    taxonomy_len: usize,
    labels: HashMap<Arc<str>, Box<[CategoryId]>>,
}

impl CategoryStore {
    pub fn new(taxonomy: &CategoryTaxonomy) -> Self {
        CategoryStore { taxonomy_len: taxonomy.len(), labels: HashMap::new() }
    }

    pub fn taxonomy_len(&self) -> usize {
        self.taxonomy_len
    }

    /// Adds labels to a normalized hostname, merging with any it already has.
    pub fn insert(&mut self, hostname: &str, categories: impl IntoIterator<Item = CategoryId>) {
        let mut set: BTreeSet<CategoryId> =
            self.labels.get(hostname).map(|c| c.iter().copied().collect()).unwrap_or_default();
        for c in categories {
            assert!(usize::from(c) < self.taxonomy_len, "category id {c} outside taxonomy");
            set.insert(c);
        }
        if !set.is_empty() {
            self.labels.insert(Arc::from(hostname), set.into_iter().collect());
        }
    }

    pub fn get(&self, hostname: &str) -> Option<&[CategoryId]> {
        self.labels.get(hostname).map(|c| &**c)
    }

    pub fn contains(&self, hostname: &str) -> bool {
        self.labels.contains_key(hostname)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labeled hostnames in lexicographic order.
    pub fn hostnames(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.labels.keys().map(|h| &**h).collect();
        v.sort_unstable();
        v
    }

    /// Label set as a probability vector (uniform over the labels).
    pub fn label_distribution(&self, hostname: &str) -> Option<Vec<f64>> {
        let cats = self.get(hostname)?;
        let mut w = vec![0.0; self.taxonomy_len];
        for &c in cats {
            w[usize::from(c)] = 1.0 / cats.len() as f64;
        }
        Some(w)
    }

    /// Parses `hostname<TAB>cat1,cat2,...` lines. Category names may
    /// themselves contain commas (`Law, Gov't & Politics`), so a list is
    /// split on commas and adjacent pieces are re-joined until they form a
    /// known name.
    pub fn parse(text: &str, taxonomy: &CategoryTaxonomy) -> Result<Self, CategoryFileError> {
        let mut store = CategoryStore::new(taxonomy);
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let (host, cats) = raw.split_once('\t').ok_or(CategoryFileError::MalformedLine { line })?;
            let host = normalize_hostname(host).ok_or(CategoryFileError::MalformedLine { line })?;
            let mut ids = Vec::new();
            let mut pending = String::new();
            for piece in cats.split(',') {
                if !pending.is_empty() {
                    pending.push(',');
                }
                pending.push_str(piece);
                if let Some(id) = taxonomy.id(pending.trim()) {
                    ids.push(id);
                    pending.clear();
                }
            }
            if !pending.trim().is_empty() {
                return Err(CategoryFileError::UnknownCategory { line, name: pending.trim().to_string() });
            }
            if ids.is_empty() {
                return Err(CategoryFileError::MalformedLine { line });
            }
            store.insert(&host, ids);
        }
        Ok(store)
    }

    pub fn write<W: Write>(&self, w: &mut W, taxonomy: &CategoryTaxonomy) -> io::Result<()> {
        for host in self.hostnames() {
            let names: Vec<&str> = self.get(host).unwrap().iter().filter_map(|&c| taxonomy.name(c)).collect();
            writeln!(w, "{host}\t{}", names.join(","))?;
        }
        Ok(())
    }
}

pub fn load_categories(
    path: impl AsRef<Path>,
    taxonomy: &CategoryTaxonomy,
) -> Result<CategoryStore, CategoryFileError> {
    let text = fs::read_to_string(path).map_err(|e| CategoryFileError::Io(e.to_string()))?;
    CategoryStore::parse(&text, taxonomy)
}
