//! Manifest (JSON Lines), feature matrix (binary) and vocabulary file I/O.
//!
//! Features layout, little-endian:
//!
//! ```text
//! "TXNF" | u32 rows | u32 d_image | rows * d_image f32, row-major
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const FEATURES_MAGIC: &[u8; 4] = b"TXNF";

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub id: String,
    /// Epoch seconds.
    pub timestamp: i64,
    pub tokens: BTreeMap<String, u32>,
    pub labels: Vec<String>,
    pub feat_row: u32,
}

/// How the vocabulary is ranked when it is truncated to `max_vocab` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VocabularyRank {
    /// Number of documents containing the token.
    #[default]
    DocumentFrequency,
    /// Total occurrences across the corpus.
    RawCount,
}

impl std::str::FromStr for VocabularyRank {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "df" | "document_frequency" => Ok(Self::DocumentFrequency),
            "count" | "raw_count" => Ok(Self::RawCount),
            other => Err(Error::Config(format!("unknown vocabulary rank `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Seconds per time unit.
    pub time_unit: f64,
    /// Keep only the most frequent tokens; `None` keeps all.
    pub max_vocab: Option<usize>,
    pub vocab_rank: VocabularyRank,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            time_unit: 86_400.0,
            max_vocab: None,
            vocab_rank: VocabularyRank::DocumentFrequency,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub documents: usize,
    pub vocabulary: usize,
    pub categories: usize,
    pub d_image: usize,
    pub num_slices: usize,
    /// Manifest token entries that were not in the vocabulary.
    pub dropped_tokens: usize,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        let bad = |message: String| Error::Manifest {
            line: line_no,
            message,
        };
        if rec.labels.is_empty() {
            return Err(bad(format!("document `{}` has an empty label set", rec.id)));
        }
        if let Some((tok, _)) = rec.tokens.iter().find(|(_, &c)| c == 0) {
            return Err(bad(format!("token `{tok}` has count 0")));
        }
        if !ids.insert(rec.id.clone()) {
            return Err(bad(format!("duplicate document id `{}`", rec.id)));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec).expect("manifest records serialize");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Returns the rows and their width.
pub fn read_features(path: &Path) -> Result<(Vec<Vec<f32>>, usize)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file), "features");
    r.magic(FEATURES_MAGIC)?;
    let rows = r.u32("row count")? as usize;
    let dim = r.u32("feature dimension")? as usize;
    let mut out = Vec::with_capacity(rows);
    for row in 0..rows {
        let mut v = Vec::with_capacity(dim);
        for col in 0..dim {
            let x = r.f32("feature value")?;
            if !x.is_finite() {
                return Err(Error::Features(format!(
                    "non-finite value at row {row}, column {col}"
                )));
            }
            v.push(x);
        }
        out.push(v);
    }
    r.finish()?;
    Ok((out, dim))
}

pub fn write_features(path: &Path, rows: &[Vec<f32>], dim: usize) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file));
    let io = |e| Error::io(path, e);
    w.bytes(FEATURES_MAGIC).map_err(io)?;
    w.u32(rows.len() as u32).map_err(io)?;
    w.u32(dim as u32).map_err(io)?;
    for row in rows {
        if row.len() != dim {
            return Err(Error::Shape {
                expected: dim,
                actual: row.len(),
                context: "feature row",
            });
        }
        for &v in row {
            w.f32(v).map_err(io)?;
        }
    }
    w.into_inner().flush().map_err(io)
}

pub fn read_vocabulary(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let vocab: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let distinct: BTreeSet<&String> = vocab.iter().collect();
    if distinct.len() != vocab.len() {
        return Err(Error::Corpus(format!("{}: duplicate vocabulary tokens", path.display())));
    }
    Ok(vocab)
}

pub(super) fn union_vocabulary(
    records: &[ManifestRecord],
    max_vocab: Option<usize>,
    rank: VocabularyRank,
) -> Vec<String> {
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for rec in records {
        for (tok, &count) in &rec.tokens {
            let inc = match rank {
                VocabularyRank::DocumentFrequency => 1,
                VocabularyRank::RawCount => u64::from(count),
            };
            *freq.entry(tok.as_str()).or_default() += inc;
        }
    }
    let mut tokens: Vec<(&str, u64)> = freq.into_iter().collect();
    if let Some(max) = max_vocab {
        tokens.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        tokens.truncate(max);
    }
    let mut vocab: Vec<String> = tokens.into_iter().map(|(t, _)| t.to_string()).collect();
    vocab.sort();
    vocab
}

/// Load and validate a corpus from a manifest, a features file and an
/// optional vocabulary file.
pub fn load_corpus(
    manifest_path: &Path,
    features_path: &Path,
    vocabulary_path: Option<&Path>,
    options: &LoadOptions,
) -> Result<(Corpus, LoadReport)> {
    let records = read_manifest(manifest_path)?;
    let (features, dim) = read_features(features_path)?;
    if features.len() != records.len() {
        return Err(Error::Features(format!(
            "header declares {} rows but the manifest has {} documents",
            features.len(),
            records.len()
        )));
    }
    let vocabulary = vocabulary_path.map(read_vocabulary).transpose()?;
    Corpus::from_records(&records, &features, dim, options, vocabulary)
}

/// File layout of a canonical corpus bundle directory.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
}

impl Bundle {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn manifest(&self) -> PathBuf {
        self.dir.join("manifest.jsonl")
    }

    pub fn features(&self) -> PathBuf {
        self.dir.join("features.bin")
    }

    pub fn vocabulary(&self) -> PathBuf {
        self.dir.join("vocab.txt")
    }

    pub fn load(&self, options: &LoadOptions) -> Result<(Corpus, LoadReport)> {
        load_corpus(
            &self.manifest(),
            &self.features(),
            Some(&self.vocabulary()),
            options,
        )
    }
}

/// Write manifest, features and vocabulary into `dir` in canonical form.
pub fn write_bundle(corpus: &Corpus, dir: &Path) -> Result<Bundle> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bundle = Bundle::new(dir);
    let (records, features) = corpus.to_records();
    write_manifest(&bundle.manifest(), &records)?;
    write_features(&bundle.features(), &features, corpus.d_image)?;
    let vocab_path = bundle.vocabulary();
    let mut text = corpus.vocabulary.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(&vocab_path, text).map_err(|e| Error::io(&vocab_path, e))?;
    Ok(bundle)
}
