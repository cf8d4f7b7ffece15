//! Token n-gram overlap detection against evaluation snippets.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use serde::{Deserialize, Serialize};

pub const DEFAULT_NGRAM: usize = 10;

/// Lowercase, then split on every character that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn window_key(window: &[String]) -> String {
    // Tokens never contain spaces, so the join is unambiguous.
    window.join(" ")
}

fn hash_key(key: &str) -> u64 {
    let mut h = DefaultHasher::new();
    key.hash(&mut h);
    h.finish()
}

/// Every distinct length-`n` token window of an indexed corpus, bucketed by a
/// 64-bit hash. Hash hits are confirmed against the stored window text, so a
/// collision can never produce a false verdict.
#[derive(Debug, Clone)]
pub struct NGramIndex {
    n: usize,
    grams: HashMap<u64, Vec<String>>,
    gram_count: usize,
    source_count: usize,
}

impl NGramIndex {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "n-gram length must be positive");
        Self {
            n,
            grams: HashMap::new(),
            gram_count: 0,
            source_count: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn gram_count(&self) -> usize {
        self.gram_count
    }

    pub fn source_count(&self) -> usize {
        self.source_count
    }

    pub fn add_document(&mut self, text: &str) {
        self.source_count += 1;
        for w in tokenize(text).windows(self.n) {
            let key = window_key(w);
            let bucket = self.grams.entry(hash_key(&key)).or_default();
            if !bucket.contains(&key) {
                bucket.push(key);
                self.gram_count += 1;
            }
        }
    }

    fn contains_window(&self, window: &[String]) -> bool {
        let key = window_key(window);
        self.grams
            .get(&hash_key(&key))
            .is_some_and(|bucket| bucket.contains(&key))
    }

    /// True iff some length-`n` window of `candidate` occurs in the corpus.
    pub fn is_contaminated(&self, candidate: &str) -> bool {
        self.first_overlap(candidate).is_some()
    }

    /// The first overlapping window, for reporting.
    pub fn first_overlap(&self, candidate: &str) -> Option<String> {
        tokenize(candidate)
            .windows(self.n)
            .find(|w| self.contains_window(w))
            .map(window_key)
    }
}

pub fn build_index<S: AsRef<str>>(corpus: &[S], n: usize) -> NGramIndex {
    let mut index = NGramIndex::new(n);
    for doc in corpus {
        index.add_document(doc.as_ref());
    }
    index
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecontamReport {
    pub n: usize,
    pub indexed_documents: usize,
    pub indexed_grams: usize,
    pub kept: usize,
    pub discarded: usize,
    pub discard_rate: f64,
}

/// Partition items by contamination, keeping input order in both halves.
pub fn partition<T>(items: Vec<T>, text_of: impl Fn(&T) -> &str, index: &NGramIndex) -> (Vec<T>, Vec<T>, DecontamReport) {
    let (dirty, clean): (Vec<T>, Vec<T>) = items.into_iter().partition(|it| index.is_contaminated(text_of(it)));
    let total = clean.len() + dirty.len();
    let report = DecontamReport {
        n: index.n(),
        indexed_documents: index.source_count(),
        indexed_grams: index.gram_count(),
        kept: clean.len(),
        discarded: dirty.len(),
        discard_rate: if total == 0 { 0.0 } else { dirty.len() as f64 / total as f64 },
    };
    (clean, dirty, report)
}
