//! Synthetic timestamped bimodal corpora with planted category, temporal and
//! word-drift structure.
//!
//! Each category has two endpoint image prototypes and two endpoint word
//! distributions. A document's position `p` in `[0, 1]` is its mode index
//! scaled to `[0, 1]` when the category has two or more modes, and its
//! timestamp over the span otherwise; it mixes the endpoints with weight
//! `clamp(drift * p, 0, 1)`. With `drift = 0` every document of a category
//! shares the first prototype and word distribution.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, LoadOptions, ManifestRecord};
use crate::error::{Error, Result};

/// One Gaussian component of a category's timestamp mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub center: f64,
    pub width: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_categories: usize,
    pub docs_per_category: usize,
    /// Timespan in time units.
    pub timespan: f64,
    /// Per category; an empty list means uniform timestamps.
    pub modes: Vec<Vec<Mode>>,
    pub d_image: usize,
    pub sigma_img: f64,
    pub vocab_size: usize,
    pub words_per_doc: usize,
    /// Symmetric Dirichlet concentration of each word distribution.
    pub concentration: f64,
    pub drift: f64,
    /// Probability that a document receives a second, random label.
    pub extra_label_prob: f64,
    /// Seconds per time unit of the emitted manifest.
    pub time_unit: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self::separable(0)
    }
}

/// Two short bursts per category, staggered across categories.
fn two_modes(c: usize, span: f64) -> Vec<Mode> {
    let shift = (c % 5) as f64 * 0.04 * span;
    vec![
        Mode {
            center: 0.2 * span + shift,
            width: 0.005 * span,
            weight: 0.5,
        },
        Mode {
            center: 0.6 * span + shift,
            width: 0.005 * span,
            weight: 0.5,
        },
    ]
}

impl SynthSpec {
    /// Ten well separated categories with uniform timestamps and no drift.
    pub fn separable(seed: u64) -> Self {
        Self {
            num_categories: 10,
            docs_per_category: 200,
            timespan: 100.0,
            modes: vec![Vec::new(); 10],
            d_image: 32,
            sigma_img: 0.1,
            vocab_size: 400,
            words_per_doc: 20,
            concentration: 0.05,
            drift: 0.0,
            extra_label_prob: 0.0,
            time_unit: 86400.0,
            seed,
        }
    }

    /// Every category has two temporally separated bursts with distinct image
    /// prototypes and word usage. Categories hold more relevant test
    /// documents than a top-50 cut-off.
    pub fn two_mode(seed: u64) -> Self {
        let base = Self::separable(seed);
        Self {
            docs_per_category: 600,
            modes: (0..base.num_categories).map(|c| two_modes(c, base.timespan)).collect(),
            drift: 1.0,
            sigma_img: 0.5,
            ..base
        }
    }

    /// Shared base of the drift and periodic presets: noisy images and short
    /// texts so that neither saturates.
    fn contrast_base(seed: u64) -> Self {
        Self {
            docs_per_category: 600,
            sigma_img: 1.0,
            words_per_doc: 8,
            ..Self::separable(seed)
        }
    }

    /// Uniform timestamps with image prototypes and words drifting over time.
    pub fn drifting(seed: u64) -> Self {
        Self {
            drift: 1.0,
            ..Self::contrast_base(seed)
        }
    }

    /// Categories recurring in four periodic bursts, no drift.
    pub fn periodic(seed: u64) -> Self {
        let base = Self::contrast_base(seed);
        let period = base.timespan / 4.0;
        let modes = (0..base.num_categories)
            .map(|c| {
                let phase = (c as f64 + 0.5) / base.num_categories as f64 * period;
                (0..4)
                    .map(|k| Mode {
                        center: phase + k as f64 * period,
                        width: 0.005 * base.timespan,
                        weight: 0.25,
                    })
                    .collect()
            })
            .collect();
        Self { modes, ..base }
    }

    pub fn num_docs(&self) -> usize {
        self.num_categories * self.docs_per_category
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_categories == 0 || self.docs_per_category == 0 {
            return fail("needs at least one category and one document per category".into());
        }
        if self.vocab_size == 0 || self.words_per_doc == 0 {
            return fail("vocabulary and words per document must be positive".into());
        }
        if self.d_image == 0 {
            return fail("image dimension must be positive".into());
        }
        if !(self.timespan > 0.0 && self.timespan.is_finite()) || !(self.time_unit > 0.0) {
            return fail("timespan and time unit must be positive".into());
        }
        if !(self.sigma_img >= 0.0) || !(self.drift >= 0.0) || !(self.concentration > 0.0) {
            return fail("sigma_img and drift must be >= 0, concentration > 0".into());
        }
        if !(0.0..=1.0).contains(&self.extra_label_prob) || (self.extra_label_prob > 0.0 && self.num_categories < 2) {
            return fail("extra_label_prob must be in [0, 1] and needs two categories".into());
        }
        if self.modes.len() != self.num_categories {
            return fail(format!("{} mode lists for {} categories", self.modes.len(), self.num_categories));
        }
        for (c, modes) in self.modes.iter().enumerate() {
            if modes.is_empty() {
                continue;
            }
            if modes.iter().any(|m| !(m.width > 0.0) || !(m.weight >= 0.0) || !m.center.is_finite()) {
                return fail(format!("category {c} has a mode with non-positive width or negative weight"));
            }
            let total: f64 = modes.iter().map(|m| m.weight).sum();
            if (total - 1.0).abs() > 1e-9 {
                return fail(format!("category {c} mode weights sum to {total}"));
            }
        }
        Ok(())
    }
}

/// The planted structure behind a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// `[category][endpoint]` image prototypes.
    pub prototypes: Vec<[Vec<f64>; 2]>,
    /// `[category][endpoint]` word distributions.
    pub word_dists: Vec<[Vec<f64>; 2]>,
    /// Primary category of each document, in corpus order.
    pub category: Vec<usize>,
    /// Mixture component of each document (`None` for uniform categories).
    pub mode: Vec<Option<usize>>,
    /// Generator time of each document.
    pub time: Vec<f64>,
    /// Generator time of corpus offset 0.
    pub origin: f64,
}

impl GroundTruth {
    /// True timestamp density of category `c` at generator time `t`,
    /// ignoring truncation to the timespan.
    pub fn density(&self, spec: &SynthSpec, c: usize, t: f64) -> f64 {
        let modes = &spec.modes[c];
        if modes.is_empty() {
            return if (0.0..=spec.timespan).contains(&t) {
                1.0 / spec.timespan
            } else {
                0.0
            };
        }
        modes
            .iter()
            .map(|m| {
                let z = (t - m.center) / m.width;
                m.weight * (-0.5 * z * z).exp() / (m.width * (2.0 * std::f64::consts::PI).sqrt())
            })
            .sum()
    }
}

fn dirichlet<R: Rng>(n: usize, alpha: f64, rng: &mut R) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("positive shape");
    loop {
        let v: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let s: f64 = v.iter().sum();
        if s > 0.0 && s.is_finite() {
            return v.into_iter().map(|x| x / s).collect();
        }
    }
}

fn sample_time<R: Rng>(modes: &[Mode], span: f64, rng: &mut R) -> (f64, Option<usize>) {
    if modes.is_empty() {
        return (rng.random_range(0.0..=span), None);
    }
    let pick = WeightedIndex::new(modes.iter().map(|m| m.weight))
        .expect("validated weights")
        .sample(rng);
    let m = modes[pick];
    let normal = Normal::new(m.center, m.width).expect("validated width");
    for _ in 0..1000 {
        let t = normal.sample(rng);
        if (0.0..=span).contains(&t) {
            return (t, Some(pick));
        }
    }
    (m.center.clamp(0.0, span), Some(pick))
}

fn lerp(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect()
}

/// Generate a corpus and its ground truth; deterministic per seed.
pub fn generate(spec: &SynthSpec) -> Result<(Corpus, GroundTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let prototypes: Vec<[Vec<f64>; 2]> = (0..spec.num_categories)
        .map(|_| {
            let mut draw = || (0..spec.d_image).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            [draw(), draw()]
        })
        .collect();
    let word_dists: Vec<[Vec<f64>; 2]> = (0..spec.num_categories)
        .map(|_| {
            [
                dirichlet(spec.vocab_size, spec.concentration, &mut rng),
                dirichlet(spec.vocab_size, spec.concentration, &mut rng),
            ]
        })
        .collect();

    let mut order: Vec<usize> = (0..spec.num_docs()).map(|i| i / spec.docs_per_category).collect();
    order.shuffle(&mut rng);

    let width = spec.vocab_size.saturating_sub(1).to_string().len();
    let vocabulary: Vec<String> = (0..spec.vocab_size).map(|w| format!("w{w:0width$}")).collect();
    let cwidth = spec.num_categories.saturating_sub(1).to_string().len();
    let names: Vec<String> = (0..spec.num_categories).map(|c| format!("c{c:0cwidth$}")).collect();
    let dwidth = spec.num_docs().saturating_sub(1).to_string().len();

    let mut truth = GroundTruth {
        prototypes,
        word_dists,
        category: Vec::with_capacity(order.len()),
        mode: Vec::with_capacity(order.len()),
        time: Vec::with_capacity(order.len()),
        origin: 0.0,
    };
    let mut records = Vec::with_capacity(order.len());
    let mut features = Vec::with_capacity(order.len());
    let noise = Normal::new(0.0, spec.sigma_img.max(0.0)).expect("finite sigma");
    for (i, &c) in order.iter().enumerate() {
        let modes = &spec.modes[c];
        let (t, mode) = sample_time(modes, spec.timespan, &mut rng);
        let position = match mode {
            Some(m) if modes.len() >= 2 => m as f64 / (modes.len() - 1) as f64,
            _ => t / spec.timespan,
        };
        let w = (spec.drift * position).clamp(0.0, 1.0);
        let [p0, p1] = &truth.prototypes[c];
        let feat: Vec<f32> = lerp(p0, p1, w)
            .into_iter()
            .map(|v| (v + if spec.sigma_img > 0.0 { noise.sample(&mut rng) } else { 0.0 }) as f32)
            .collect();
        let [w0, w1] = &truth.word_dists[c];
        let words = WeightedIndex::new(lerp(w0, w1, w)).expect("word distribution has mass");
        let mut tokens = std::collections::BTreeMap::new();
        for _ in 0..spec.words_per_doc {
            *tokens.entry(vocabulary[words.sample(&mut rng)].clone()).or_insert(0u32) += 1;
        }
        let mut labels = vec![names[c].clone()];
        if spec.extra_label_prob > 0.0 && rng.random::<f64>() < spec.extra_label_prob {
            let mut other = rng.random_range(0..spec.num_categories - 1);
            if other >= c {
                other += 1;
            }
            labels.push(names[other].clone());
        }
        records.push(ManifestRecord {
            id: format!("d{i:0dwidth$}"),
            timestamp: (t * spec.time_unit).round() as i64,
            tokens,
            labels,
            feat_row: i as u32,
        });
        features.push(feat);
        truth.category.push(c);
        truth.mode.push(mode);
        truth.time.push(t);
    }
    let options = LoadOptions {
        time_unit: spec.time_unit,
        ..LoadOptions::default()
    };
    let (corpus, _) = Corpus::from_records(&records, &features, spec.d_image, &options, Some(vocabulary))?;
    truth.origin = records.iter().map(|r| r.timestamp).min().unwrap_or(0) as f64 / spec.time_unit;
    Ok((corpus, truth))
}

/// Average precision at `k` of `relevance` ranked by descending `scores`
/// (ties by position), computed by enumerating the definition. `None` when
/// nothing is relevant.
pub fn oracle_ap(scores: &[f64], relevance: &[bool], k: usize) -> Option<f64> {
    let total = relevance.iter().filter(|&&r| r).count();
    if total == 0 || k == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    let ranked: Vec<bool> = order.iter().map(|&i| relevance[i]).collect();
    let mut sum = 0.0;
    for r in 1..=k.min(ranked.len()) {
        if ranked[r - 1] {
            let hits = ranked[..r].iter().filter(|&&x| x).count();
            sum += hits as f64 / r as f64;
        }
    }
    Some(sum / total.min(k) as f64)
}
