//! Corpus statistics: word counts, a length histogram and a category
//! histogram.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::critique::{word_count, CritiqueRecord, QaPair};
use crate::error::{PipelineError, Result};

pub const BUCKET_WIDTH: usize = 10;
pub const UNCATEGORIZED: &str = "uncategorized";

/// Items whose text is measured.
pub trait Described {
    fn text(&self) -> &str;
    fn category(&self) -> Option<&str> {
        None
    }
}

impl Described for CritiqueRecord {
    fn text(&self) -> &str {
        &self.critique
    }
    fn category(&self) -> Option<&str> {
        self.category.as_deref()
    }
}

impl Described for QaPair {
    fn text(&self) -> &str {
        &self.answer
    }
    fn category(&self) -> Option<&str> {
        Some(self.aspect.as_str())
    }
}

impl Described for String {
    fn text(&self) -> &str {
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bucket {
    /// Inclusive lower bound in words; the bucket is `[lo, lo + width)`.
    pub lo: usize,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub mean_words: f64,
    pub bucket_width: usize,
    /// Nonempty buckets in ascending order.
    pub length_histogram: Vec<Bucket>,
    /// Items without a category are counted under `uncategorized`.
    pub category_histogram: BTreeMap<String, usize>,
}

pub fn corpus_stats<T: Described>(items: &[T]) -> Result<CorpusStats> {
    if items.is_empty() {
        return Err(PipelineError::InvalidArgument("corpus statistics need at least one item".into()));
    }
    let mut buckets: BTreeMap<usize, usize> = BTreeMap::new();
    let mut categories: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for item in items {
        let words = word_count(item.text());
        total += words;
        *buckets.entry(words / BUCKET_WIDTH * BUCKET_WIDTH).or_default() += 1;
        *categories.entry(item.category().unwrap_or(UNCATEGORIZED).to_string()).or_default() += 1;
    }
    Ok(CorpusStats {
        count: items.len(),
        mean_words: total as f64 / items.len() as f64,
        bucket_width: BUCKET_WIDTH,
        length_histogram: buckets.into_iter().map(|(lo, count)| Bucket { lo, count }).collect(),
        category_histogram: categories,
    })
}
