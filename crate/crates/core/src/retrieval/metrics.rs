//! Truncated ranking metrics and the temporal histogram fit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary relevance of one query's ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedRelevance {
    /// Relevance flags in rank order (at least the top K).
    pub flags: Vec<bool>,
    /// Relevant candidates in the whole collection.
    pub total_relevant: usize,
}

impl RankedRelevance {
    /// For a ranking covering every candidate.
    pub fn from_full_ranking(flags: Vec<bool>) -> Self {
        let total_relevant = flags.iter().filter(|&&f| f).count();
        Self {
            flags,
            total_relevant,
        }
    }
}

/// Graded relevance of one query's ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct GradedRanking {
    /// Grades in rank order.
    pub grades: Vec<u32>,
    /// Every candidate's grade, in any order; defines the ideal ranking.
    pub pool: Vec<u32>,
}

impl GradedRanking {
    pub fn from_full_ranking(grades: Vec<u32>) -> Self {
        Self {
            pool: grades.clone(),
            grades,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gain {
    /// `rel`
    #[default]
    Linear,
    /// `2^rel - 1`
    Exponential,
}

impl std::str::FromStr for Gain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "exponential" => Ok(Self::Exponential),
            other => Err(Error::Config(format!("unknown nDCG gain `{other}`"))),
        }
    }
}

impl Gain {
    fn apply(self, grade: u32) -> f64 {
        match self {
            Gain::Linear => f64::from(grade),
            Gain::Exponential => 2f64.powi(grade as i32) - 1.0,
        }
    }
}

/// Mean of a per-query metric and how many queries were left out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub value: f64,
    pub evaluated: usize,
    /// Queries without any relevant candidate.
    pub excluded: usize,
}

/// `AP@K = (1 / min(R, K)) * sum over relevant ranks r <= K of precision@r`;
/// `None` when the query has no relevant candidate.
pub fn average_precision(ranking: &RankedRelevance, k: usize) -> Option<f64> {
    if ranking.total_relevant == 0 || k == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (r, &rel) in ranking.flags.iter().take(k).enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    Some(sum / ranking.total_relevant.min(k) as f64)
}

fn summarize(values: impl Iterator<Item = Option<f64>>, what: &str) -> Result<MetricSummary> {
    let (mut sum, mut evaluated, mut excluded) = (0.0, 0usize, 0usize);
    for v in values {
        match v {
            Some(v) => {
                sum += v;
                evaluated += 1;
            }
            None => excluded += 1,
        }
    }
    if evaluated == 0 {
        return Err(Error::UndefinedMetric(format!(
            "{what}: none of {excluded} queries has a relevant candidate"
        )));
    }
    Ok(MetricSummary {
        value: sum / evaluated as f64,
        evaluated,
        excluded,
    })
}

pub fn map_at_k(rankings: &[RankedRelevance], k: usize) -> Result<MetricSummary> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    summarize(rankings.iter().map(|r| average_precision(r, k)), "mAP")
}

/// `sum_{r=1..K} gain(rel_r) / log2(r + 1)`
pub fn dcg(grades: &[u32], k: usize, gain: Gain) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, &g)| gain.apply(g) / ((r + 2) as f64).log2())
        .sum()
}

/// `None` when the ideal DCG is 0.
pub fn ndcg(ranking: &GradedRanking, k: usize, gain: Gain) -> Option<f64> {
    let mut ideal = ranking.pool.clone();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg(&ideal, k, gain);
    if idcg <= 0.0 {
        return None;
    }
    Some(dcg(&ranking.grades, k, gain) / idcg)
}

pub fn ndcg_at_k(rankings: &[GradedRanking], k: usize, gain: Gain) -> Result<MetricSummary> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    summarize(rankings.iter().map(|r| ndcg(r, k, gain)), "nDCG")
}

/// One point of a precision-scope curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScopePoint {
    pub k: usize,
    pub map: f64,
}

/// mAP@k for each k of a strictly increasing list.
pub fn precision_scope(rankings: &[RankedRelevance], k_list: &[usize]) -> Result<Vec<ScopePoint>> {
    if k_list.is_empty() || k_list.windows(2).any(|w| w[0] >= w[1]) || k_list[0] == 0 {
        return Err(Error::Config(format!(
            "scope k values must be positive and strictly increasing, got {k_list:?}"
        )));
    }
    k_list
        .iter()
        .map(|&k| {
            Ok(ScopePoint {
                k,
                map: map_at_k(rankings, k)?.value,
            })
        })
        .collect()
}

/// Histogram of timestamps over `[start, end]`, normalized to sum 1 (all
/// zeros when `times` is empty). Values outside the range land in the edge
/// bins.
pub fn normalized_histogram(times: &[f64], start: f64, end: f64, bins: usize) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    if times.is_empty() || bins == 0 {
        return hist;
    }
    let width = (end - start) / bins as f64;
    for &t in times {
        let b = if width > 0.0 {
            (((t - start) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        hist[b] += 1.0;
    }
    let n = times.len() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    hist
}

/// Histogram intersection `sum_b min(p_b, q_b)` of two normalized histograms.
pub fn histogram_intersection(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a.min(*b)).sum::<f64>().clamp(0.0, 1.0)
}

/// How well the temporal distribution of retrieved relevant instances matches
/// the ground truth; 0 for an empty result set.
pub fn temporal_fit(results: &[f64], ground_truth: &[f64], start: f64, end: f64, bins: usize) -> Result<f64> {
    if bins == 0 {
        return Err(Error::Config("temporal fit needs >= 1 bin".into()));
    }
    if results.is_empty() || ground_truth.is_empty() {
        return Ok(0.0);
    }
    let p = normalized_histogram(results, start, end, bins);
    let q = normalized_histogram(ground_truth, start, end, bins);
    Ok(histogram_intersection(&p, &q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ap_hand_value() {
        let r = RankedRelevance {
            flags: vec![true, false, true, false],
            total_relevant: 2,
        };
        assert!((average_precision(&r, 50).unwrap() - 0.8333).abs() < 1e-4);
        assert!((average_precision(&r, 50).unwrap() - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn ap_edge_cases() {
        let perfect = RankedRelevance {
            flags: vec![true; 5],
            total_relevant: 9,
        };
        assert_eq!(average_precision(&perfect, 5), Some(1.0));
        let miss = RankedRelevance {
            flags: vec![false; 5],
            total_relevant: 3,
        };
        assert_eq!(average_precision(&miss, 5), Some(0.0));
        let none = RankedRelevance::from_full_ranking(vec![false; 3]);
        assert_eq!(average_precision(&none, 5), None);
        assert!(map_at_k(&[none], 5).is_err());
    }

    #[test]
    fn map_excludes_queries_without_relevant() {
        let rs = vec![
            RankedRelevance::from_full_ranking(vec![true, false]),
            RankedRelevance::from_full_ranking(vec![false, false]),
            RankedRelevance::from_full_ranking(vec![false, true]),
        ];
        let s = map_at_k(&rs, 2).unwrap();
        assert_eq!(s.evaluated, 2);
        assert_eq!(s.excluded, 1);
        assert!((s.value - 0.75).abs() < 1e-15);
    }

    #[test]
    fn ndcg_hand_value() {
        let r = GradedRanking::from_full_ranking(vec![2, 0, 1]);
        assert!((dcg(&r.grades, 50, Gain::Linear) - 2.5).abs() < 1e-15);
        let v = ndcg(&r, 50, Gain::Linear).unwrap();
        assert!((v - 2.5 / (2.0 + 1.0 / 3f64.log2())).abs() < 1e-15);
        assert!((v - 0.9502).abs() < 1e-4);
        assert_eq!(ndcg(&GradedRanking::from_full_ranking(vec![3, 2, 0]), 50, Gain::Linear), Some(1.0));
        assert_eq!(ndcg(&GradedRanking::from_full_ranking(vec![0, 0]), 50, Gain::Linear), None);
    }

    #[test]
    fn exponential_gain() {
        let r = GradedRanking::from_full_ranking(vec![1, 2]);
        let expected = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
        assert!((ndcg(&r, 10, Gain::Exponential).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn scope_at_one_is_precision_at_one() {
        let rs = vec![
            RankedRelevance::from_full_ranking(vec![true, false]),
            RankedRelevance::from_full_ranking(vec![false, true]),
            RankedRelevance::from_full_ranking(vec![true, true]),
        ];
        let curve = precision_scope(&rs, &[1]).unwrap();
        assert!((curve[0].map - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_scope(&rs, &[10, 20, 30, 40, 50]).unwrap().len(), 5);
        assert!(precision_scope(&rs, &[2, 2]).is_err());
        assert!(precision_scope(&rs, &[]).is_err());
    }

    #[test]
    fn temporal_fit_cases() {
        let a = [0.1, 0.6, 0.2, 0.9];
        assert!((temporal_fit(&a, &a, 0.0, 1.0, 4).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(temporal_fit(&[0.1, 0.2], &[0.8, 0.9], 0.0, 1.0, 2).unwrap(), 0.0);
        // p = [0.5, 0.5], q = [0.25, 0.75]
        let v = temporal_fit(&[0.2, 0.7], &[0.2, 0.6, 0.7, 0.8], 0.0, 1.0, 2).unwrap();
        assert!((v - 0.75).abs() < 1e-15);
        assert_eq!(temporal_fit(&[], &a, 0.0, 1.0, 4).unwrap(), 0.0);
        assert!(temporal_fit(&a, &a, 0.0, 1.0, 0).is_err());
    }
}
