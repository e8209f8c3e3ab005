//! Timestamped bimodal corpora: documents, vocabulary, categories and the
//! time axis they live on.

mod io;
mod split;
mod tfidf;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use io::{
    load_corpus, read_features, read_manifest, read_vocabulary, write_bundle, write_features,
    write_manifest, Bundle, LoadOptions, LoadReport, ManifestRecord, VocabularyRank,
    FEATURES_MAGIC,
};
pub use split::{split, Split, SplitSpec};
pub use tfidf::DocumentFrequencies;

use crate::error::{Error, Result};

/// One timestamped image/text instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub image_feat: Vec<f64>,
    /// Vocabulary index to occurrence count.
    pub text_counts: BTreeMap<usize, u32>,
    /// Offset from the corpus origin, in time units.
    pub timestamp: f64,
    /// Category indices, never empty.
    pub labels: BTreeSet<usize>,
}

impl Document {
    pub fn shares_label(&self, other: &Document) -> bool {
        self.labels.intersection(&other.labels).next().is_some()
    }

    pub fn shared_label_count(&self, other: &Document) -> usize {
        self.labels.intersection(&other.labels).count()
    }
}

/// Maps continuous corpus time to the discrete slices used by the topic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeAxis {
    /// Seconds per time unit.
    pub unit: f64,
    /// Epoch seconds of the earliest document.
    pub origin: i64,
    pub num_slices: usize,
    /// `t_f - t_s` in time units.
    pub span: f64,
}

impl TimeAxis {
    pub fn new(unit: f64, origin: i64, span: f64) -> Result<Self> {
        if !(unit > 0.0 && unit.is_finite()) {
            return Err(Error::Config(format!("time unit must be positive, got {unit}")));
        }
        if !(span >= 0.0 && span.is_finite()) {
            return Err(Error::Corpus(format!("invalid timespan {span}")));
        }
        Ok(Self {
            unit,
            origin,
            num_slices: span.floor() as usize + 1,
            span,
        })
    }

    /// Slice index of an offset; one slice per time unit, clamped to the axis.
    pub fn slice_of(&self, t: f64) -> usize {
        if t.is_nan() || t <= 0.0 {
            return 0;
        }
        (t.floor() as usize).min(self.num_slices - 1)
    }

    pub fn to_offset(&self, epoch_seconds: i64) -> f64 {
        (epoch_seconds - self.origin) as f64 / self.unit
    }

    pub fn to_epoch_seconds(&self, offset: f64) -> i64 {
        self.origin + (offset * self.unit).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// Token strings, indexed by vocabulary id.
    pub vocabulary: Vec<String>,
    /// Category names, indexed by category id.
    pub categories: Vec<String>,
    pub time_axis: TimeAxis,
    pub d_image: usize,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn d_text(&self) -> usize {
        self.vocabulary.len()
    }

    /// Same vocabulary, categories and time axis, different documents.
    pub fn with_documents(&self, documents: Vec<Document>) -> Corpus {
        Corpus {
            documents,
            vocabulary: self.vocabulary.clone(),
            categories: self.categories.clone(),
            time_axis: self.time_axis,
            d_image: self.d_image,
        }
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        self.vocabulary.binary_search_by(|t| t.as_str().cmp(token)).ok().or_else(|| {
            // Vocabulary files may impose a non-lexicographic order.
            self.vocabulary.iter().position(|t| t == token)
        })
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    /// Checks every document invariant against this corpus.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for doc in &self.documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(Error::Corpus(format!("duplicate document id `{}`", doc.id)));
            }
            if doc.image_feat.len() != self.d_image {
                return Err(Error::Corpus(format!(
                    "document `{}` has {} image features, expected {}",
                    doc.id,
                    doc.image_feat.len(),
                    self.d_image
                )));
            }
            if doc.image_feat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Corpus(format!(
                    "document `{}` has a non-finite image feature",
                    doc.id
                )));
            }
            if doc.labels.is_empty() {
                return Err(Error::Corpus(format!("document `{}` has no labels", doc.id)));
            }
            if doc.labels.iter().any(|&l| l >= self.categories.len()) {
                return Err(Error::Corpus(format!(
                    "document `{}` references an unknown category",
                    doc.id
                )));
            }
            if doc.text_counts.keys().any(|&w| w >= self.vocabulary.len()) {
                return Err(Error::Corpus(format!(
                    "document `{}` references a token outside the vocabulary",
                    doc.id
                )));
            }
            if !(doc.timestamp >= -1e-9 && doc.timestamp <= self.time_axis.span + 1e-9) {
                return Err(Error::Corpus(format!(
                    "document `{}` timestamp {} outside [0, {}]",
                    doc.id, doc.timestamp, self.time_axis.span
                )));
            }
        }
        Ok(())
    }

    /// Build a corpus from manifest records and their feature rows.
    ///
    /// `vocabulary`, when given, is authoritative: tokens outside it are dropped
    /// and counted in the report. Otherwise the vocabulary is the (optionally
    /// truncated) union of manifest tokens in lexicographic order.
    pub fn from_records(
        records: &[ManifestRecord],
        features: &[Vec<f32>],
        d_image: usize,
        options: &LoadOptions,
        vocabulary: Option<Vec<String>>,
    ) -> Result<(Corpus, LoadReport)> {
        if records.is_empty() {
            return Err(Error::Empty("manifest has no documents".into()));
        }
        if features.len() != records.len() {
            return Err(Error::Features(format!(
                "{} feature rows for {} manifest documents",
                features.len(),
                records.len()
            )));
        }
        let vocabulary = match vocabulary {
            Some(v) => v,
            None => io::union_vocabulary(records, options.max_vocab, options.vocab_rank),
        };
        let token_ids: BTreeMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();
        let categories: Vec<String> = records
            .iter()
            .flat_map(|r| r.labels.iter().cloned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();

        let origin = records.iter().map(|r| r.timestamp).min().unwrap();
        let last = records.iter().map(|r| r.timestamp).max().unwrap();
        let time_axis = TimeAxis::new(options.time_unit, origin, (last - origin) as f64 / options.time_unit)?;

        let mut report = LoadReport::default();
        let mut documents = Vec::with_capacity(records.len());
        for (line, rec) in records.iter().enumerate() {
            let row = features.get(rec.feat_row as usize).ok_or_else(|| Error::Manifest {
                line: line + 1,
                message: format!("feat_row {} out of range", rec.feat_row),
            })?;
            let mut text_counts = BTreeMap::new();
            for (tok, &count) in &rec.tokens {
                match token_ids.get(tok.as_str()) {
                    Some(&id) => {
                        text_counts.insert(id, count);
                    }
                    None => report.dropped_tokens += 1,
                }
            }
            let labels = rec
                .labels
                .iter()
                .map(|l| categories.binary_search(l).expect("category collected above"))
                .collect();
            documents.push(Document {
                id: rec.id.clone(),
                image_feat: row.iter().map(|&v| f64::from(v)).collect(),
                text_counts,
                timestamp: time_axis.to_offset(rec.timestamp),
                labels,
            });
        }
        let corpus = Corpus {
            documents,
            vocabulary,
            categories,
            time_axis,
            d_image,
        };
        corpus.validate()?;
        report.documents = corpus.len();
        report.vocabulary = corpus.d_text();
        report.categories = corpus.categories.len();
        report.d_image = d_image;
        report.num_slices = corpus.time_axis.num_slices;
        Ok((corpus, report))
    }

    /// Manifest records and feature rows that reproduce this corpus.
    pub fn to_records(&self) -> (Vec<ManifestRecord>, Vec<Vec<f32>>) {
        let records = self
            .documents
            .iter()
            .enumerate()
            .map(|(row, d)| ManifestRecord {
                id: d.id.clone(),
                timestamp: self.time_axis.to_epoch_seconds(d.timestamp),
                tokens: d
                    .text_counts
                    .iter()
                    .map(|(&w, &c)| (self.vocabulary[w].clone(), c))
                    .collect(),
                labels: d.labels.iter().map(|&l| self.categories[l].clone()).collect(),
                feat_row: row as u32,
            })
            .collect();
        let features = self
            .documents
            .iter()
            .map(|d| d.image_feat.iter().map(|&v| v as f32).collect())
            .collect();
        (records, features)
    }
}
