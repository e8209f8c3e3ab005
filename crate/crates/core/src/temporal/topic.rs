//! Word temporal densities from a chained per-slice topic model.
//!
//! Documents are grouped by time slice and each group is fitted with
//! collapsed-Gibbs LDA. The topic-word counts of a slice, damped by `kappa`,
//! seed the sampler of the next slice so topic identities carry over time.
//! Each word's curve over slices is the normalized mean over topics of its
//! per-topic temporal profile.

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Diagnostics;
use crate::corpus::{Corpus, TimeAxis};
use crate::error::{Error, Result};

/// How per-word densities are combined over a document's words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregate {
    /// `(prod_w q_w)^(1/|W|)`
    #[default]
    GeometricMean,
    /// `prod_w q_w`
    Product,
}

impl std::str::FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" | "geometric_mean" => Ok(Self::GeometricMean),
            "product" => Ok(Self::Product),
            other => Err(Error::Config(format!("unknown topic aggregate `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicConfig {
    pub topics: usize,
    pub iterations: usize,
    /// Carry-over of the previous slice's topic-word counts.
    pub kappa: f64,
    /// Document-topic prior; `None` means `50 / topics`.
    pub alpha: Option<f64>,
    /// Topic-word prior.
    pub beta: f64,
    /// Floor on per-slice word mass.
    pub floor: f64,
    pub aggregate: Aggregate,
    pub seed: u64,
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self {
            topics: 10,
            iterations: 200,
            kappa: 0.5,
            alpha: None,
            beta: 0.01,
            floor: 1e-6,
            aggregate: Aggregate::GeometricMean,
            seed: 0,
        }
    }
}

impl TopicConfig {
    fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(Error::Config("number of topics must be >= 1".into()));
        }
        if !(self.kappa >= 0.0) || !(self.beta > 0.0) || self.alpha.is_some_and(|a| !(a > 0.0)) {
            return Err(Error::Config("topic priors must be positive and kappa >= 0".into()));
        }
        if !(self.floor > 0.0 && self.floor < 1.0) {
            return Err(Error::Config(format!("probability floor must be in (0, 1), got {}", self.floor)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TopicDensity {
    pub topics: usize,
    pub time_axis: TimeAxis,
    pub floor: f64,
    pub aggregate: Aggregate,
    /// Per vocabulary word, a distribution over slices; `None` for words
    /// never seen in training.
    pub phi: Vec<Option<Vec<f64>>>,
    /// Topic-word distributions, indexed `[slice, topic, word]`.
    pub beta: Array3<f64>,
    pub(crate) diagnostics: Diagnostics,
}

impl PartialEq for TopicDensity {
    fn eq(&self, other: &Self) -> bool {
        self.topics == other.topics
            && self.time_axis == other.time_axis
            && self.floor == other.floor
            && self.aggregate == other.aggregate
            && self.phi == other.phi
            && self.beta == other.beta
    }
}

/// Consecutive slices fitted together: empty slices merge forward into the
/// next nonempty one, trailing empty slices into the last group.
fn slice_groups(docs_per_slice: &[Vec<usize>]) -> Vec<(Vec<usize>, Vec<usize>)> {
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    let mut pending = Vec::new();
    for (s, docs) in docs_per_slice.iter().enumerate() {
        pending.push(s);
        if !docs.is_empty() {
            groups.push((std::mem::take(&mut pending), docs.clone()));
        }
    }
    if let Some(last) = groups.last_mut() {
        last.0.extend(pending);
    }
    groups
}

fn draw<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in weights.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Collapsed-Gibbs state for the documents of one slice group.
struct SliceSampler<'a> {
    vocab: usize,
    topics: usize,
    alpha: f64,
    beta: f64,
    /// `topic * vocab + word`, prior pseudo-counts plus assignments.
    word_topic: Vec<f64>,
    topic_total: Vec<f64>,
    doc_topic: Vec<Vec<f64>>,
    tokens: &'a [Vec<usize>],
    assignments: Vec<Vec<usize>>,
}

impl<'a> SliceSampler<'a> {
    fn new(prior: &[f64], tokens: &'a [Vec<usize>], vocab: usize, topics: usize, alpha: f64, beta: f64) -> Self {
        let topic_total = (0..topics)
            .map(|k| prior[k * vocab..(k + 1) * vocab].iter().sum())
            .collect();
        Self {
            vocab,
            topics,
            alpha,
            beta,
            word_topic: prior.to_vec(),
            topic_total,
            doc_topic: vec![vec![0.0; topics]; tokens.len()],
            tokens,
            assignments: tokens.iter().map(|t| vec![0; t.len()]).collect(),
        }
    }

    fn conditional(&self, d: usize, w: usize, weights: &mut [f64]) {
        let v_beta = self.vocab as f64 * self.beta;
        for (k, p) in weights.iter_mut().enumerate() {
            *p = (self.doc_topic[d][k] + self.alpha) * (self.word_topic[k * self.vocab + w] + self.beta)
                / (self.topic_total[k] + v_beta);
        }
    }

    fn add(&mut self, d: usize, w: usize, k: usize, delta: f64) {
        self.doc_topic[d][k] += delta;
        self.word_topic[k * self.vocab + w] += delta;
        self.topic_total[k] += delta;
    }

    /// Sequential initialization from the prior-informed conditional.
    fn initialize<R: Rng>(&mut self, rng: &mut R) {
        let mut weights = vec![0.0; self.topics];
        for d in 0..self.tokens.len() {
            for n in 0..self.tokens[d].len() {
                let w = self.tokens[d][n];
                self.conditional(d, w, &mut weights);
                let k = draw(&weights, rng);
                self.assignments[d][n] = k;
                self.add(d, w, k, 1.0);
            }
        }
    }

    fn sweep<R: Rng>(&mut self, rng: &mut R) {
        let mut weights = vec![0.0; self.topics];
        for d in 0..self.tokens.len() {
            for n in 0..self.tokens[d].len() {
                let w = self.tokens[d][n];
                let old = self.assignments[d][n];
                self.add(d, w, old, -1.0);
                self.conditional(d, w, &mut weights);
                let k = draw(&weights, rng);
                self.assignments[d][n] = k;
                self.add(d, w, k, 1.0);
            }
        }
    }

    /// Topic-word counts from this slice's assignments only.
    fn own_counts(&self) -> Vec<f64> {
        let mut counts = vec![0.0; self.topics * self.vocab];
        for (doc, z) in self.tokens.iter().zip(&self.assignments) {
            for (&w, &k) in doc.iter().zip(z) {
                counts[k * self.vocab + w] += 1.0;
            }
        }
        counts
    }
}

impl TopicDensity {
    /// Fit on the training corpus; slices come from its time axis.
    pub fn fit(train: &Corpus, config: &TopicConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Empty("topic model needs training documents".into()));
        }
        let axis = train.time_axis;
        let (vocab, topics, slices) = (train.d_text(), config.topics, axis.num_slices);
        let alpha = config.alpha.unwrap_or(50.0 / topics as f64);
        let beta_prior = config.beta;

        let tokens: Vec<Vec<usize>> = train
            .documents
            .iter()
            .map(|d| {
                d.text_counts
                    .iter()
                    .flat_map(|(&w, &c)| std::iter::repeat_n(w, c as usize))
                    .collect()
            })
            .collect();
        let mut word_total = vec![0u64; vocab];
        for doc in &tokens {
            for &w in doc {
                word_total[w] += 1;
            }
        }

        let mut docs_per_slice = vec![Vec::new(); slices];
        for (i, d) in train.documents.iter().enumerate() {
            docs_per_slice[axis.slice_of(d.timestamp)].push(i);
        }
        let groups = slice_groups(&docs_per_slice);

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut beta = Array3::<f64>::zeros((slices, topics, vocab));
        let mut prior = vec![0.0; topics * vocab];
        for (group_slices, doc_ids) in &groups {
            let group_tokens: Vec<Vec<usize>> = doc_ids.iter().map(|&i| tokens[i].clone()).collect();
            let mut sampler = SliceSampler::new(&prior, &group_tokens, vocab, topics, alpha, beta_prior);
            sampler.initialize(&mut rng);
            for _ in 0..config.iterations {
                sampler.sweep(&mut rng);
            }
            let own = sampler.own_counts();
            for k in 0..topics {
                let row = &own[k * vocab..(k + 1) * vocab];
                let total: f64 = row.iter().sum::<f64>() + vocab as f64 * beta_prior;
                for &s in group_slices {
                    for w in 0..vocab {
                        beta[[s, k, w]] = (row[w] + beta_prior) / total;
                    }
                }
            }
            for (p, o) in prior.iter_mut().zip(&own) {
                *p = config.kappa * (*p + o);
            }
        }

        let phi = (0..vocab)
            .map(|w| {
                if word_total[w] == 0 {
                    return None;
                }
                let mut curve = vec![0.0; slices];
                for k in 0..topics {
                    let total: f64 = (0..slices).map(|s| beta[[s, k, w]]).sum();
                    for (s, c) in curve.iter_mut().enumerate() {
                        *c += beta[[s, k, w]] / total / topics as f64;
                    }
                }
                let sum: f64 = curve.iter().sum();
                curve.iter_mut().for_each(|c| *c /= sum);
                Some(curve)
            })
            .collect();

        Ok(Self {
            topics,
            time_axis: axis,
            floor: config.floor,
            aggregate: config.aggregate,
            phi,
            beta,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.phi.len()
    }

    /// `max(phi_w(slice), floor)`, or the floor for words without a curve.
    pub fn word_mass(&self, word: usize, slice: usize) -> f64 {
        match self.phi.get(word).and_then(Option::as_ref) {
            Some(curve) => curve[slice].max(self.floor),
            None => self.floor,
        }
    }

    /// Temporal profile of a bag of words over all slices, scaled so its
    /// maximum is 1. `None` when no token is in the vocabulary.
    pub fn profile<'a>(&self, tokens: impl IntoIterator<Item = &'a usize>) -> Option<Vec<f64>> {
        let words: Vec<usize> = tokens
            .into_iter()
            .copied()
            .filter(|&w| w < self.vocab_size())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        if words.is_empty() {
            return None;
        }
        let slices = self.time_axis.num_slices;
        let log_sums: Vec<f64> = (0..slices)
            .map(|s| words.iter().map(|&w| self.word_mass(w, s).ln()).sum())
            .collect();
        let top = log_sums.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = match self.aggregate {
            Aggregate::GeometricMean => 1.0 / words.len() as f64,
            Aggregate::Product => 1.0,
        };
        Some(log_sums.iter().map(|&l| ((l - top) * scale).exp()).collect())
    }

    /// Temporal correlation of document `i`'s words with time `t_j`.
    pub fn sim(&self, tokens_i: &BTreeMap<usize, u32>, t_j: f64) -> f64 {
        match self.profile(tokens_i.keys()) {
            Some(profile) => profile[self.time_axis.slice_of(t_j)].clamp(0.0, 1.0),
            None => {
                self.diagnostics.record_empty_text();
                0.0
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use std::collections::BTreeSet;

    fn doc(id: usize, t: f64, words: &[(usize, u32)]) -> Document {
        Document {
            id: format!("d{id}"),
            image_feat: vec![0.0],
            text_counts: words.iter().copied().collect(),
            timestamp: t,
            labels: BTreeSet::from([0]),
        }
    }

    fn corpus(docs: Vec<Document>, vocab: usize, span: f64) -> Corpus {
        Corpus {
            documents: docs,
            vocabulary: (0..vocab).map(|w| format!("w{w}")).collect(),
            categories: vec!["c".into()],
            time_axis: TimeAxis::new(1.0, 0, span).unwrap(),
            d_image: 1,
        }
    }

    #[test]
    fn merges_empty_slices_forward() {
        let g = slice_groups(&[vec![], vec![0], vec![], vec![], vec![1], vec![]]);
        assert_eq!(g, vec![(vec![0, 1], vec![0]), (vec![2, 3, 4, 5], vec![1])]);
    }

    #[test]
    fn single_slice_curves_are_one() {
        let c = corpus(vec![doc(0, 0.0, &[(0, 2), (1, 1)]), doc(1, 0.5, &[(1, 3)])], 3, 0.5);
        let m = TopicDensity::fit(&c, &TopicConfig { topics: 2, iterations: 20, ..Default::default() }).unwrap();
        assert_eq!(m.phi[0], Some(vec![1.0]));
        assert_eq!(m.phi[1], Some(vec![1.0]));
        assert_eq!(m.phi[2], None);
    }

    #[test]
    fn word_confined_to_one_slice() {
        // w0 everywhere, w1 only in slice 3 of 5.
        let docs = (0..5)
            .map(|s| {
                if s == 3 {
                    doc(s, s as f64, &[(0, 2), (1, 4)])
                } else {
                    doc(s, s as f64, &[(0, 2)])
                }
            })
            .collect();
        let c = corpus(docs, 2, 4.0);
        let cfg = TopicConfig { topics: 1, iterations: 10, ..Default::default() };
        let m = TopicDensity::fit(&c, &cfg).unwrap();
        let phi = m.phi[1].as_ref().unwrap();
        // Off-slice mass is beta / (2 + 2 beta) per slice versus (4 + beta) / (6 + 2 beta).
        let off = 0.01 / 2.02;
        let on = 4.01 / 6.02;
        let expected_on = on / (on + 4.0 * off);
        assert!((phi[3] - expected_on).abs() < 1e-12);
        assert!(phi[3] > 0.95);
        assert!((phi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn geometric_mean_profile() {
        // Two words; slice masses (0.5, 0.5) and (0.125, 0.875).
        let m = TopicDensity {
            topics: 1,
            time_axis: TimeAxis::new(1.0, 0, 1.0).unwrap(),
            floor: 1e-6,
            aggregate: Aggregate::GeometricMean,
            phi: vec![Some(vec![0.5, 0.5]), Some(vec![0.125, 0.875])],
            beta: Array3::zeros((2, 1, 2)),
            diagnostics: Diagnostics::default(),
        };
        let tokens = BTreeMap::from([(0, 1), (1, 3)]);
        // Direct product oracle.
        let g0 = (0.5f64 * 0.125).sqrt();
        let g1 = (0.5f64 * 0.875).sqrt();
        assert!((g0 - 0.25).abs() < 1e-15);
        assert!((m.sim(&tokens, 0.2) - g0 / g1).abs() < 1e-12);
        assert!((m.sim(&tokens, 1.0) - 1.0).abs() < 1e-12);

        let mp = TopicDensity { aggregate: Aggregate::Product, ..m.clone() };
        assert!((mp.sim(&tokens, 0.0) - (0.5 * 0.125) / (0.5 * 0.875)).abs() < 1e-12);

        assert_eq!(m.sim(&BTreeMap::from([(9, 1)]), 0.0), 0.0);
        assert_eq!(m.diagnostics.empty_text(), 1);
    }

    #[test]
    fn uniform_densities_score_one_everywhere() {
        let m = TopicDensity {
            topics: 1,
            time_axis: TimeAxis::new(1.0, 0, 3.0).unwrap(),
            floor: 1e-6,
            aggregate: Aggregate::GeometricMean,
            phi: vec![Some(vec![0.25; 4]); 3],
            beta: Array3::zeros((4, 1, 3)),
            diagnostics: Diagnostics::default(),
        };
        let tokens = BTreeMap::from([(0, 1), (2, 1)]);
        for t in [0.0, 1.5, 3.0] {
            assert!((m.sim(&tokens, t) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_determinism() {
        let docs = (0..12)
            .map(|i| doc(i, (i % 4) as f64, &[(i % 5, 2), ((i * 3) % 5, 1)]))
            .collect();
        let c = corpus(docs, 5, 3.0);
        let cfg = TopicConfig { topics: 3, iterations: 15, seed: 7, ..Default::default() };
        let a = TopicDensity::fit(&c, &cfg).unwrap();
        let b = TopicDensity::fit(&c, &cfg).unwrap();
        assert_eq!(a, b);
        for curve in a.phi.iter().flatten() {
            assert!((curve.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(curve.iter().all(|&v| v >= 0.0));
        }
    }
}
