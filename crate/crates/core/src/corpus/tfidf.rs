use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Corpus, Document};

/// Document frequencies gathered from a (training) corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentFrequencies {
    pub num_docs: usize,
    /// Indexed by vocabulary id.
    pub df: Vec<u32>,
}

impl DocumentFrequencies {
    pub fn from_corpus(corpus: &Corpus) -> Self {
        let mut df = vec![0u32; corpus.d_text()];
        for doc in &corpus.documents {
            for &w in doc.text_counts.keys() {
                df[w] += 1;
            }
        }
        Self {
            num_docs: corpus.len(),
            df,
        }
    }

    pub fn d_text(&self) -> usize {
        self.df.len()
    }

    /// `ln(N / df)`, or 0 for tokens never seen in the source corpus.
    pub fn idf(&self, token: usize) -> f64 {
        match self.df.get(token) {
            Some(&df) if df > 0 && self.num_docs > 0 => (self.num_docs as f64 / f64::from(df)).ln(),
            _ => 0.0,
        }
    }

    /// Dense, l2-normalized tf-idf vector. The zero vector is returned as is.
    pub fn vectorize_counts(&self, counts: &BTreeMap<usize, u32>) -> Vec<f64> {
        let mut out = vec![0.0; self.d_text()];
        for (&w, &tf) in counts {
            if w < out.len() {
                out[w] = f64::from(tf) * self.idf(w);
            }
        }
        let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.iter_mut().for_each(|v| *v /= norm);
        }
        out
    }

    pub fn vectorize(&self, doc: &Document) -> Vec<f64> {
        self.vectorize_counts(&doc.text_counts)
    }
}
