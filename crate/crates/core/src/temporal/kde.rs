//! Per-category Gaussian kernel density over the corpus timespan.

use std::f64::consts::PI;

use super::Diagnostics;
use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Peak-normalized density curve of one category.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeCurve {
    pub observations: Vec<f64>,
    /// Largest raw density on the grid; the normalizer.
    pub peak: f64,
    /// Normalized density on the grid, max exactly 1.
    pub grid: Vec<f64>,
}

/// Raw Gaussian-kernel density estimate at `t`.
pub fn gaussian_kde(observations: &[f64], bandwidth: f64, t: f64) -> f64 {
    if observations.is_empty() {
        return 0.0;
    }
    let norm = 1.0 / (bandwidth * (2.0 * PI).sqrt());
    let sum: f64 = observations
        .iter()
        .map(|&o| {
            let z = (t - o) / bandwidth;
            (-0.5 * z * z).exp()
        })
        .sum();
    norm * sum / observations.len() as f64
}

#[derive(Debug, Clone)]
pub struct CategoryKde {
    pub bandwidth: f64,
    pub grid_size: usize,
    /// Grid covers `[0, span]`.
    pub span: f64,
    /// Indexed by category id; `None` for categories without observations.
    pub curves: Vec<Option<KdeCurve>>,
    pub(crate) diagnostics: Diagnostics,
}

impl PartialEq for CategoryKde {
    fn eq(&self, other: &Self) -> bool {
        self.bandwidth == other.bandwidth
            && self.grid_size == other.grid_size
            && self.span == other.span
            && self.curves == other.curves
    }
}

impl CategoryKde {
    /// Fit one curve per category on the documents of `train`.
    pub fn fit(train: &Corpus, bandwidth: f64, grid_size: usize) -> Result<Self> {
        let mut per_category = vec![Vec::new(); train.categories.len()];
        for doc in &train.documents {
            for &l in &doc.labels {
                per_category[l].push(doc.timestamp);
            }
        }
        Self::from_observations(per_category, bandwidth, grid_size, train.time_axis.span)
    }

    pub fn from_observations(
        per_category: Vec<Vec<f64>>,
        bandwidth: f64,
        grid_size: usize,
        span: f64,
    ) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("KDE bandwidth must be positive, got {bandwidth}")));
        }
        if grid_size < 2 {
            return Err(Error::Config(format!("KDE grid needs >= 2 points, got {grid_size}")));
        }
        let step = span / (grid_size - 1) as f64;
        let curves = per_category
            .into_iter()
            .map(|obs| {
                if obs.is_empty() {
                    return None;
                }
                let raw: Vec<f64> = (0..grid_size)
                    .map(|g| gaussian_kde(&obs, bandwidth, g as f64 * step))
                    .collect();
                let peak = raw.iter().copied().fold(0.0, f64::max);
                // A bandwidth far below the grid step can underflow every grid point.
                let peak = if peak > 0.0 { peak } else { f64::MIN_POSITIVE };
                let grid = raw.iter().map(|&r| r / peak).collect();
                Some(KdeCurve {
                    observations: obs,
                    peak,
                    grid,
                })
            })
            .collect();
        Ok(Self {
            bandwidth,
            grid_size,
            span,
            curves,
            diagnostics: Diagnostics::default(),
        })
    }

    /// Peak-normalized density of `category` at `t`, interpolated on the grid
    /// inside the timespan and evaluated directly outside it.
    pub fn density(&self, category: usize, t: f64) -> Result<f64> {
        let curve = self
            .curves
            .get(category)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::UnknownCategory(category.to_string()))?;
        Ok(self.curve_density(curve, t))
    }

    fn curve_density(&self, curve: &KdeCurve, t: f64) -> f64 {
        if self.span > 0.0 && (0.0..=self.span).contains(&t) {
            let pos = t / self.span * (self.grid_size - 1) as f64;
            let lo = (pos.floor() as usize).min(self.grid_size - 2);
            let frac = pos - lo as f64;
            curve.grid[lo] * (1.0 - frac) + curve.grid[lo + 1] * frac
        } else {
            (gaussian_kde(&curve.observations, self.bandwidth, t) / curve.peak).clamp(0.0, 1.0)
        }
    }

    /// Density of every fitted label of `labels` at `t`, as `(label, density)`.
    pub fn label_densities<'l>(
        &self,
        labels: impl IntoIterator<Item = &'l usize>,
        t: f64,
    ) -> Vec<(usize, f64)> {
        labels
            .into_iter()
            .filter_map(|&l| {
                let curve = self.curves.get(l)?.as_ref()?;
                Some((l, self.curve_density(curve, t)))
            })
            .collect()
    }

    /// Max over shared, fitted labels of `p(t_i | l) * p(t_j | l)`; 0 when
    /// there is no such label.
    pub fn sim<'a, I>(&self, t_i: f64, labels_i: I, t_j: f64, labels_j: I) -> f64
    where
        I: IntoIterator<Item = &'a usize>,
    {
        let dj = self.label_densities(labels_j, t_j);
        let di = self.label_densities(labels_i, t_i);
        best_shared_product(&di, &dj).unwrap_or_else(|| {
            self.diagnostics.record_missing_label();
            0.0
        })
    }
}

/// Largest product over labels present in both density lists.
pub(crate) fn best_shared_product(a: &[(usize, f64)], b: &[(usize, f64)]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &(la, pa) in a {
        for &(lb, pb) in b {
            if la == lb {
                let v = pa * pb;
                best = Some(best.map_or(v, |m: f64| m.max(v)));
            }
        }
    }
    best
}
