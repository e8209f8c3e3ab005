//! Temporal correlation models backing `sim_temp`: recency decay, category
//! densities and word densities from a chained topic model.
//!
//! Model file layout, little-endian:
//!
//! ```text
//! "TXNT" | kind tag ("REC" | "KDE" | "TOP") | u32 version
//! REC: f64 h
//! KDE: f64 bandwidth | u32 grid_size | f64 span | u32 categories
//!      per category: u32 n_obs (0 = no curve) | n_obs f64 | f64 peak | grid_size f64
//! TOP: u32 topics | f64 unit | u64 origin (two's complement) | f64 span | u32 slices
//!      u32 vocab | f64 floor | u32 aggregate (0 geometric, 1 product)
//!      per word: u32 has_curve | slices f64 when present
//!      slices * topics * vocab f64 topic-word distributions
//! ```

mod kde;
mod recency;
mod topic;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array3;

pub use kde::{gaussian_kde, CategoryKde, KdeCurve};
pub use recency::RecencyModel;
pub use topic::{Aggregate, TopicConfig, TopicDensity};

use crate::codec::{Reader, Writer};
use crate::corpus::{Document, TimeAxis};
use crate::error::{Error, Result};

pub const TEMPORAL_MAGIC: &[u8; 4] = b"TXNT";
const VERSION: u32 = 1;

/// Counters for queries that fell back to 0.
#[derive(Debug, Default)]
pub struct Diagnostics {
    missing_label: AtomicU64,
    empty_text: AtomicU64,
}

impl Clone for Diagnostics {
    fn clone(&self) -> Self {
        Self {
            missing_label: AtomicU64::new(self.missing_label()),
            empty_text: AtomicU64::new(self.empty_text()),
        }
    }
}

impl Diagnostics {
    pub(crate) fn record_missing_label(&self) {
        self.missing_label.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn record_empty_text(&self) {
        self.empty_text.fetch_add(1, Ordering::Relaxed);
    }

    /// Category queries without a shared fitted label.
    pub fn missing_label(&self) -> u64 {
        self.missing_label.load(Ordering::Relaxed)
    }

    /// Topic queries whose text had no known token.
    pub fn empty_text(&self) -> u64 {
        self.empty_text.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalKind {
    Recency,
    Category,
    Topic,
}

impl std::str::FromStr for TemporalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "recency" => Ok(Self::Recency),
            "category" => Ok(Self::Category),
            "topic" => Ok(Self::Topic),
            other => Err(Error::Config(format!("unknown temporal model kind `{other}`"))),
        }
    }
}

impl TemporalKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Recency => "recency",
            Self::Category => "category",
            Self::Topic => "topic",
        }
    }

    fn tag(self) -> &'static [u8; 3] {
        match self {
            Self::Recency => b"REC",
            Self::Category => b"KDE",
            Self::Topic => b"TOP",
        }
    }
}

/// A fitted, frozen temporal correlation model.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporalModel {
    Recency(RecencyModel),
    Category(CategoryKde),
    Topic(TopicDensity),
}

impl TemporalModel {
    pub fn kind(&self) -> TemporalKind {
        match self {
            Self::Recency(_) => TemporalKind::Recency,
            Self::Category(_) => TemporalKind::Category,
            Self::Topic(_) => TemporalKind::Topic,
        }
    }

    /// `sim_temp(d_i, d_j)` in `[0, 1]`.
    ///
    /// The topic variant conditions on `d_i`'s words and `d_j`'s time only, so
    /// it is not symmetric.
    pub fn sim(&self, d_i: &Document, d_j: &Document) -> f64 {
        match self {
            Self::Recency(m) => m.sim(d_i.timestamp, d_j.timestamp),
            Self::Category(m) => m.sim(d_i.timestamp, &d_i.labels, d_j.timestamp, &d_j.labels),
            Self::Topic(m) => m.sim(&d_i.text_counts, d_j.timestamp),
        }
    }

    pub fn diagnostics(&self) -> Option<&Diagnostics> {
        match self {
            Self::Recency(_) => None,
            Self::Category(m) => Some(&m.diagnostics),
            Self::Topic(m) => Some(&m.diagnostics),
        }
    }

    /// Precompute per-document quantities so pairwise queries over `docs`
    /// are cheap.
    pub fn prepare<'a>(&'a self, docs: &'a [Document]) -> PreparedTemporal<'a> {
        let cache = match self {
            Self::Recency(_) => Cache::Direct,
            Self::Category(m) => Cache::Category(
                docs.iter()
                    .map(|d| m.label_densities(&d.labels, d.timestamp))
                    .collect(),
            ),
            Self::Topic(m) => Cache::Topic {
                profiles: docs.iter().map(|d| m.profile(d.text_counts.keys())).collect(),
                slices: docs.iter().map(|d| m.time_axis.slice_of(d.timestamp)).collect(),
            },
        };
        PreparedTemporal {
            model: self,
            docs,
            cache,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Writer::new(BufWriter::new(file));
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.into_inner().flush().map_err(|e| Error::io(path, e))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(Vec::new());
        self.write_to(&mut w).expect("writing to memory");
        w.into_inner()
    }

    fn write_to<W: Write>(&self, w: &mut Writer<W>) -> std::io::Result<()> {
        w.bytes(TEMPORAL_MAGIC)?;
        w.bytes(self.kind().tag())?;
        w.u32(VERSION)?;
        match self {
            Self::Recency(m) => w.f64(m.h)?,
            Self::Category(m) => {
                w.f64(m.bandwidth)?;
                w.u32(m.grid_size as u32)?;
                w.f64(m.span)?;
                w.u32(m.curves.len() as u32)?;
                for curve in &m.curves {
                    match curve {
                        None => w.u32(0)?,
                        Some(c) => {
                            w.u32(c.observations.len() as u32)?;
                            w.f64s(&c.observations)?;
                            w.f64(c.peak)?;
                            w.f64s(&c.grid)?;
                        }
                    }
                }
            }
            Self::Topic(m) => {
                let axis = m.time_axis;
                w.u32(m.topics as u32)?;
                w.f64(axis.unit)?;
                w.u64(axis.origin as u64)?;
                w.f64(axis.span)?;
                w.u32(axis.num_slices as u32)?;
                w.u32(m.vocab_size() as u32)?;
                w.f64(m.floor)?;
                w.u32(match m.aggregate {
                    Aggregate::GeometricMean => 0,
                    Aggregate::Product => 1,
                })?;
                for curve in &m.phi {
                    match curve {
                        None => w.u32(0)?,
                        Some(c) => {
                            w.u32(1)?;
                            w.f64s(c)?;
                        }
                    }
                }
                w.f64s(m.beta.as_slice().expect("standard layout"))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read(bytes)
    }

    fn read<R: Read>(inner: R) -> Result<Self> {
        let bad = |message: String| Error::Format {
            kind: "temporal model",
            message,
        };
        let mut r = Reader::new(inner, "temporal model");
        r.magic(TEMPORAL_MAGIC)?;
        let tag = r.tag()?;
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let model = match &tag {
            b"REC" => Self::Recency(RecencyModel::new(r.f64("h")?)?),
            b"KDE" => {
                let bandwidth = r.f64("bandwidth")?;
                let grid_size = r.u32("grid size")? as usize;
                let span = r.f64("span")?;
                let n = r.u32("category count")? as usize;
                let mut curves = Vec::with_capacity(n);
                for _ in 0..n {
                    let n_obs = r.u32("observation count")? as usize;
                    if n_obs == 0 {
                        curves.push(None);
                        continue;
                    }
                    let observations = r.f64s(n_obs, "observations")?;
                    let peak = r.f64("peak")?;
                    let grid = r.f64s(grid_size, "grid")?;
                    curves.push(Some(KdeCurve {
                        observations,
                        peak,
                        grid,
                    }));
                }
                Self::Category(CategoryKde {
                    bandwidth,
                    grid_size,
                    span,
                    curves,
                    diagnostics: Diagnostics::default(),
                })
            }
            b"TOP" => {
                let topics = r.u32("topics")? as usize;
                let unit = r.f64("unit")?;
                let origin = r.u64("origin")? as i64;
                let span = r.f64("span")?;
                let slices = r.u32("slices")? as usize;
                let time_axis = TimeAxis::new(unit, origin, span)?;
                if time_axis.num_slices != slices {
                    return Err(bad("slice count disagrees with span".into()));
                }
                let vocab = r.u32("vocabulary size")? as usize;
                let floor = r.f64("floor")?;
                let aggregate = match r.u32("aggregate")? {
                    0 => Aggregate::GeometricMean,
                    1 => Aggregate::Product,
                    other => return Err(bad(format!("unknown aggregate {other}"))),
                };
                let mut phi = Vec::with_capacity(vocab);
                for _ in 0..vocab {
                    phi.push(match r.u32("curve flag")? {
                        0 => None,
                        _ => Some(r.f64s(slices, "word curve")?),
                    });
                }
                let beta = Array3::from_shape_vec(
                    (slices, topics, vocab),
                    r.f64s(slices * topics * vocab, "topic-word distributions")?,
                )
                .map_err(|e| bad(e.to_string()))?;
                Self::Topic(TopicDensity {
                    topics,
                    time_axis,
                    floor,
                    aggregate,
                    phi,
                    beta,
                    diagnostics: Diagnostics::default(),
                })
            }
            other => return Err(bad(format!("unknown kind tag {:?}", String::from_utf8_lossy(other)))),
        };
        r.finish()?;
        Ok(model)
    }
}

enum Cache {
    Direct,
    Category(Vec<Vec<(usize, f64)>>),
    Topic {
        profiles: Vec<Option<Vec<f64>>>,
        slices: Vec<usize>,
    },
}

/// A temporal model bound to a fixed document list with per-document
/// quantities precomputed. Agrees exactly with [`TemporalModel::sim`].
pub struct PreparedTemporal<'a> {
    model: &'a TemporalModel,
    docs: &'a [Document],
    cache: Cache,
}

impl PreparedTemporal<'_> {
    pub fn sim(&self, i: usize, j: usize) -> f64 {
        match (&self.cache, self.model) {
            (Cache::Direct, model) => model.sim(&self.docs[i], &self.docs[j]),
            (Cache::Category(dens), TemporalModel::Category(m)) => {
                kde::best_shared_product(&dens[i], &dens[j]).unwrap_or_else(|| {
                    m.diagnostics.record_missing_label();
                    0.0
                })
            }
            (Cache::Topic { profiles, slices }, TemporalModel::Topic(m)) => match &profiles[i] {
                Some(p) => p[slices[j]].clamp(0.0, 1.0),
                None => {
                    m.diagnostics.record_empty_text();
                    0.0
                }
            },
            _ => unreachable!("cache built for a different model kind"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn doc(t: f64, labels: &[usize], words: &[usize]) -> Document {
        Document {
            id: format!("{t}"),
            image_feat: vec![],
            text_counts: words.iter().map(|&w| (w, 1)).collect::<BTreeMap<_, _>>(),
            timestamp: t,
            labels: labels.iter().copied().collect::<BTreeSet<_>>(),
        }
    }

    fn models() -> Vec<TemporalModel> {
        let kde = CategoryKde::from_observations(vec![vec![1.0, 2.0], vec![], vec![4.0]], 1.0, 64, 5.0)
            .unwrap();
        let topic = TopicDensity {
            topics: 1,
            time_axis: TimeAxis::new(1.0, 0, 5.0).unwrap(),
            floor: 1e-6,
            aggregate: Aggregate::GeometricMean,
            phi: vec![
                Some(vec![0.5, 0.1, 0.1, 0.1, 0.1, 0.1]),
                None,
                Some(vec![0.0, 0.0, 0.0, 0.0, 0.5, 0.5]),
            ],
            beta: Array3::from_elem((6, 1, 3), 0.25),
            diagnostics: Diagnostics::default(),
        };
        vec![
            TemporalModel::Recency(RecencyModel::new(0.3).unwrap()),
            TemporalModel::Category(kde),
            TemporalModel::Topic(topic),
        ]
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for m in models() {
            let p = dir.path().join(m.kind().name());
            m.save(&p).unwrap();
            let back = TemporalModel::load(&p).unwrap();
            assert_eq!(back, m);
            assert_eq!(back.to_bytes(), m.to_bytes());
        }
    }

    #[test]
    fn rejects_unknown_tag() {
        let mut bytes = models()[0].to_bytes();
        bytes[4..7].copy_from_slice(b"XYZ");
        assert!(TemporalModel::from_bytes(&bytes).is_err());
    }

    #[test]
    fn prepared_matches_direct() {
        let docs = vec![
            doc(0.5, &[0], &[0, 2]),
            doc(1.7, &[0, 2], &[2]),
            doc(4.2, &[2], &[0]),
            doc(3.0, &[1], &[1]),
        ];
        for m in models() {
            let prep = m.prepare(&docs);
            for i in 0..docs.len() {
                for j in 0..docs.len() {
                    assert_eq!(prep.sim(i, j), m.sim(&docs[i], &docs[j]), "{:?} {i} {j}", m.kind());
                }
            }
        }
    }

    #[test]
    fn topic_similarity_is_asymmetric() {
        let docs = vec![doc(0.0, &[0], &[0]), doc(4.0, &[0], &[2])];
        let m = &models()[2];
        assert!((m.sim(&docs[0], &docs[1]) - m.sim(&docs[1], &docs[0])).abs() > 0.1);
    }
}
