#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tcm::objective::{self, BatchPlan, ObjectiveConfig};
use tcm::projection::{Dims, ProjectionModel};

/// A frozen batch and model for finite-difference checks.
pub struct ToyBatch {
    pub model: ProjectionModel<f64>,
    pub images: Array2<f64>,
    pub texts: Array2<f64>,
    pub plan: BatchPlan,
    pub config: ObjectiveConfig,
}

pub fn toy_batch(seed: u64, docs: usize, dims: Dims) -> ToyBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ProjectionModel::<f64>::init(dims, &mut rng);
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
    }
    let images = Array2::from_shape_simple_fn((docs, dims.d_image), || rng.random_range(-1.0..1.0));
    let mut texts: Array2<f64> = Array2::from_shape_simple_fn((docs, dims.d_text), || rng.random_range(0.0..1.0));
    for mut row in texts.rows_mut() {
        let n: f64 = row.dot(&row);
        let n = n.sqrt();
        row.mapv_inplace(|v| v / n);
    }
    let labels: Vec<BTreeSet<usize>> = (0..docs)
        .map(|i| {
            let mut l = BTreeSet::from([i % 3]);
            if rng.random::<f64>() < 0.3 {
                l.insert(rng.random_range(0..3));
            }
            l
        })
        .collect();
    let refs: Vec<&BTreeSet<usize>> = labels.iter().collect();
    let mut sim_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let plan = BatchPlan::build(&refs, 2, |_, _| sim_rng.random_range(0.0..=1.0), &mut rng).unwrap();
    let config = ObjectiveConfig {
        margin: rng.random_range(0.5..1.5),
        lambda: rng.random_range(0.5..2.0),
        epsilon: 1e-8,
        negatives_per_anchor: 2,
    };
    ToyBatch {
        model,
        images,
        texts,
        plan,
        config,
    }
}

pub fn loss(batch: &ToyBatch, model: &ProjectionModel<f64>) -> f64 {
    objective::evaluate(model, batch.images.view(), batch.texts.view(), &batch.plan, &batch.config)
        .unwrap()
        .0
        .total
}

/// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over every
/// parameter, using central differences with step `h`.
pub fn gradient_relative_error(batch: &ToyBatch, h: f64) -> f64 {
    let (_, grads) =
        objective::evaluate(&batch.model, batch.images.view(), batch.texts.view(), &batch.plan, &batch.config)
            .unwrap();
    let analytic: Vec<f64> = grads.tensors().iter().flat_map(|t| t.iter().copied()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut probe = batch.model.clone();
    let shapes: Vec<usize> = batch.model.tensors().iter().map(|t| t.len()).collect();
    for (t, &len) in shapes.iter().enumerate() {
        for e in 0..len {
            let orig = probe.tensors()[t][e];
            probe.tensors_mut()[t][e] = orig + h;
            let up = loss(batch, &probe);
            probe.tensors_mut()[t][e] = orig - h;
            let down = loss(batch, &probe);
            probe.tensors_mut()[t][e] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-300)
}

pub const TOY_DIMS: Dims = Dims {
    d_image: 8,
    d_text: 8,
    hidden: 6,
    embed: 4,
};

/// Definitional AP@k over a ranked relevance list.
pub fn brute_ap(ranked: &[bool], total_relevant: usize, k: usize) -> Option<f64> {
    if total_relevant == 0 {
        return None;
    }
    let mut sum = 0.0;
    for r in 1..=k.min(ranked.len()) {
        if ranked[r - 1] {
            let hits = (1..=r).filter(|&x| ranked[x - 1]).count();
            sum += hits as f64 / r as f64;
        }
    }
    Some(sum / total_relevant.min(k) as f64)
}

pub fn brute_dcg(grades: &[u32], k: usize) -> f64 {
    let mut s = 0.0;
    for r in 1..=k.min(grades.len()) {
        s += f64::from(grades[r - 1]) / ((r + 1) as f64).log2();
    }
    s
}

/// All permutations of `0..n` (Heap's algorithm).
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, a, out);
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}
