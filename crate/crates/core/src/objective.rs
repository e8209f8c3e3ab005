//! Training objective: bidirectional margin ranking loss plus the temporal
//! soft constraints, evaluated on a mini-batch of projections.
//!
//! All losses here take the unit-norm projections of a batch (`images` and
//! `texts`, one row per document) and return gradients with respect to those
//! rows; [`evaluate`] chains them through the networks.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::{ModelGrads, ProjectionModel};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub margin: f64,
    /// Weight of the temporal term; 0 gives the atemporal ranking learner.
    pub lambda: f64,
    /// Denominator guard of the harmonic-mean similarity.
    pub epsilon: f64,
    pub negatives_per_anchor: usize,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            margin: 1.0,
            lambda: 1.0,
            epsilon: 1e-8,
            negatives_per_anchor: 1,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-6) {
            return Err(Error::Config(format!(
                "epsilon must be in (0, 1e-6], got {}",
                self.epsilon
            )));
        }
        if self.negatives_per_anchor == 0 {
            return Err(Error::Config("negatives_per_anchor must be >= 1".into()));
        }
        Ok(())
    }
}

/// A same-category batch member and its (frozen) temporal correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Positive {
    pub index: usize,
    pub sim_temp: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorPlan {
    /// Texts ranked against the anchor's image.
    pub text_negatives: Vec<usize>,
    /// Images ranked against the anchor's text.
    pub image_negatives: Vec<usize>,
    pub positives: Vec<Positive>,
}

/// Sampled negatives and positive sets for every member of a batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchPlan {
    pub anchors: Vec<AnchorPlan>,
    /// Anchors that share a category with every other batch member.
    pub skipped_anchors: usize,
}

impl BatchPlan {
    /// Sample negatives among batch members sharing no category with the
    /// anchor and collect positives (other members sharing at least one).
    ///
    /// `sim_temp(i, j)` is only called for positive pairs and must lie in
    /// `[0, 1]`.
    pub fn build<R, S>(
        labels: &[&BTreeSet<usize>],
        negatives_per_anchor: usize,
        mut sim_temp: S,
        rng: &mut R,
    ) -> Result<Self>
    where
        R: Rng + ?Sized,
        S: FnMut(usize, usize) -> f64,
    {
        let mut plan = BatchPlan::default();
        for (i, li) in labels.iter().enumerate() {
            let mut negatives = Vec::new();
            let mut anchor = AnchorPlan::default();
            for (j, lj) in labels.iter().enumerate() {
                if j == i {
                    continue;
                }
                if li.is_disjoint(lj) {
                    negatives.push(j);
                } else {
                    let s = sim_temp(i, j);
                    if !(0.0..=1.0).contains(&s) {
                        return Err(Error::Config(format!(
                            "temporal similarity {s} outside [0, 1] for pair ({i}, {j})"
                        )));
                    }
                    anchor.positives.push(Positive { index: j, sim_temp: s });
                }
            }
            if negatives.is_empty() {
                plan.skipped_anchors += 1;
            } else {
                let k = negatives_per_anchor.min(negatives.len());
                anchor.text_negatives = sample(rng, negatives.len(), k)
                    .into_iter()
                    .map(|p| negatives[p])
                    .collect();
                anchor.image_negatives = sample(rng, negatives.len(), k)
                    .into_iter()
                    .map(|p| negatives[p])
                    .collect();
            }
            plan.anchors.push(anchor);
        }
        Ok(plan)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// Loss value and gradients with respect to the batch projections.
#[derive(Debug, Clone)]
pub struct ProjectionGrads<F> {
    pub loss: F,
    pub images: Array2<F>,
    pub texts: Array2<F>,
}

impl<F: Scalar> ProjectionGrads<F> {
    fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            loss: F::zero(),
            images: Array2::zeros((rows, dim)),
            texts: Array2::zeros((rows, dim)),
        }
    }
}

fn check_batch<F: Scalar>(images: &ArrayView2<F>, texts: &ArrayView2<F>, plan: &BatchPlan) -> Result<()> {
    if images.dim() != texts.dim() {
        return Err(Error::Shape {
            expected: images.len(),
            actual: texts.len(),
            context: "image and text projections",
        });
    }
    if images.nrows() != plan.len() {
        return Err(Error::Shape {
            expected: plan.len(),
            actual: images.nrows(),
            context: "batch rows versus plan anchors",
        });
    }
    Ok(())
}

/// `max(0, m - s(I_i, T_i) + s(I_i, T_n))` over sampled text negatives plus
/// the text-anchored counterpart over image negatives.
///
/// At the hinge kink the subgradient is taken as 0.
pub fn ranking_loss<F: Scalar>(
    images: ArrayView2<F>,
    texts: ArrayView2<F>,
    plan: &BatchPlan,
    margin: f64,
) -> Result<ProjectionGrads<F>> {
    check_batch(&images, &texts, plan)?;
    let m = F::from_f64_lossy(margin);
    let mut out = ProjectionGrads::zeros(images.nrows(), images.ncols());
    for (i, anchor) in plan.anchors.iter().enumerate() {
        let (u_i, v_i) = (images.row(i), texts.row(i));
        let pos = u_i.dot(&v_i);
        // Image anchor against negative texts.
        for &n in &anchor.text_negatives {
            let v_n = texts.row(n);
            let h = m - pos + u_i.dot(&v_n);
            if h > F::zero() {
                out.loss += h;
                out.images.row_mut(i).scaled_add(F::one(), &(&v_n - &v_i));
                out.texts.row_mut(i).scaled_add(-F::one(), &u_i);
                out.texts.row_mut(n).scaled_add(F::one(), &u_i);
            }
        }
        // Text anchor against negative images.
        for &n in &anchor.image_negatives {
            let u_n = images.row(n);
            let h = m - pos + v_i.dot(&u_n);
            if h > F::zero() {
                out.loss += h;
                out.texts.row_mut(i).scaled_add(F::one(), &(&u_n - &u_i));
                out.images.row_mut(i).scaled_add(-F::one(), &v_i);
                out.images.row_mut(n).scaled_add(F::one(), &v_i);
            }
        }
    }
    Ok(out)
}

/// Harmonic mean of two cross-modal similarities, negatives clamped to 0:
/// `2ab / (a + b + eps)`. Returns the value and its partial derivatives with
/// respect to the raw (unclamped) inputs.
pub fn harmonic_similarity<F: Scalar>(a_raw: F, b_raw: F, epsilon: F) -> (F, F, F) {
    let zero = F::zero();
    let two = F::one() + F::one();
    let a = a_raw.max(zero);
    let b = b_raw.max(zero);
    let den = a + b + epsilon;
    let value = two * a * b / den;
    let den2 = den * den;
    let da = if a_raw > zero { two * b * (b + epsilon) / den2 } else { zero };
    let db = if b_raw > zero { two * a * (a + epsilon) / den2 } else { zero };
    (value, da, db)
}

/// Cross-modality similarity between batch members `i` and `j`, built from
/// `P_I(x_I^i) . P_T(x_T^j)` and `P_T(x_T^i) . P_I(x_I^j)`.
pub fn sim_cmod<F: Scalar>(images: ArrayView2<F>, texts: ArrayView2<F>, i: usize, j: usize, epsilon: f64) -> F {
    let a = images.row(i).dot(&texts.row(j));
    let b = texts.row(i).dot(&images.row(j));
    harmonic_similarity(a, b, F::from_f64_lossy(epsilon)).0
}

/// The two soft-constraint terms for one anchor, averaged over its positives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ConstraintTerms {
    /// Temporally correlated positives projected apart.
    pub c1: f64,
    /// Temporally uncorrelated positives projected close.
    pub c2: f64,
}

impl ConstraintTerms {
    pub fn total(&self) -> f64 {
        self.c1 + self.c2
    }
}

/// Constraint terms from precomputed `(sim_temp, sim_cmod)` pairs.
pub fn constraint_terms(pairs: &[(f64, f64)]) -> ConstraintTerms {
    if pairs.is_empty() {
        return ConstraintTerms::default();
    }
    let n = pairs.len() as f64;
    let c1 = pairs.iter().map(|&(st, sc)| st * (1.0 - sc)).sum::<f64>() / n;
    let c2 = pairs.iter().map(|&(st, sc)| (1.0 - st) * sc).sum::<f64>() / n;
    ConstraintTerms { c1, c2 }
}

/// `C1 + C2` for anchor `i`, accumulating `scale` times its gradient into
/// `grads`. Gradients flow only through the cross-modality similarity.
pub fn temporal_penalty<F: Scalar>(
    images: ArrayView2<F>,
    texts: ArrayView2<F>,
    i: usize,
    positives: &[Positive],
    epsilon: f64,
    scale: F,
    grads: &mut ProjectionGrads<F>,
) -> F {
    if positives.is_empty() {
        return F::zero();
    }
    let eps = F::from_f64_lossy(epsilon);
    let one = F::one();
    let two = one + one;
    let inv = one / F::from_usize(positives.len()).unwrap();
    let mut total = F::zero();
    for p in positives {
        let j = p.index;
        let st = F::from_f64_lossy(p.sim_temp);
        let a = images.row(i).dot(&texts.row(j));
        let b = texts.row(i).dot(&images.row(j));
        let (sc, da, db) = harmonic_similarity(a, b, eps);
        total += inv * (st * (one - sc) + (one - st) * sc);
        let dsc = scale * inv * (one - two * st);
        if da != F::zero() {
            let g = dsc * da;
            grads.images.row_mut(i).scaled_add(g, &texts.row(j));
            grads.texts.row_mut(j).scaled_add(g, &images.row(i));
        }
        if db != F::zero() {
            let g = dsc * db;
            grads.texts.row_mut(i).scaled_add(g, &images.row(j));
            grads.images.row_mut(j).scaled_add(g, &texts.row(i));
        }
    }
    total
}

/// Breakdown of the objective on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossTerms {
    pub ranking: f64,
    /// Sum of per-anchor penalties, before the lambda weight.
    pub temporal: f64,
    /// `ranking + lambda * temporal`
    pub total: f64,
}

/// `L_rank + lambda * sum_i (C1 + C2)(i)` and its gradient with respect to the
/// batch projections. The temporal term is skipped entirely when lambda is 0.
pub fn total_loss<F: Scalar>(
    images: ArrayView2<F>,
    texts: ArrayView2<F>,
    plan: &BatchPlan,
    config: &ObjectiveConfig,
) -> Result<(LossTerms, ProjectionGrads<F>)> {
    let mut grads = ranking_loss(images, texts, plan, config.margin)?;
    let ranking = grads.loss;
    let mut temporal = F::zero();
    if config.lambda > 0.0 {
        let lambda = F::from_f64_lossy(config.lambda);
        for (i, anchor) in plan.anchors.iter().enumerate() {
            temporal += temporal_penalty(
                images,
                texts,
                i,
                &anchor.positives,
                config.epsilon,
                lambda,
                &mut grads,
            );
        }
        grads.loss = ranking + lambda * temporal;
    }
    let terms = LossTerms {
        ranking: ranking.to_f64_lossy(),
        temporal: temporal.to_f64_lossy(),
        total: grads.loss.to_f64_lossy(),
    };
    Ok((terms, grads))
}

/// Forward both networks on a batch, evaluate [`total_loss`] and backpropagate
/// into parameter gradients.
pub fn evaluate<F: Scalar>(
    model: &ProjectionModel<F>,
    image_inputs: ArrayView2<F>,
    text_inputs: ArrayView2<F>,
    plan: &BatchPlan,
    config: &ObjectiveConfig,
) -> Result<(LossTerms, ModelGrads<F>)> {
    let image_pass = model.image.forward_batch(image_inputs)?;
    let text_pass = model.text.forward_batch(text_inputs)?;
    let (terms, g) = total_loss(image_pass.output().view(), text_pass.output().view(), plan, config)?;
    let image = model.image.backward_params(&image_pass, g.images.view())?;
    let text = model.text.backward_params(&text_pass, g.texts.view())?;
    Ok((terms, ModelGrads { image, text }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn plan_one_negative() -> BatchPlan {
        BatchPlan {
            anchors: vec![
                AnchorPlan {
                    text_negatives: vec![1],
                    image_negatives: vec![1],
                    positives: vec![],
                },
                AnchorPlan::default(),
            ],
            skipped_anchors: 0,
        }
    }

    #[test]
    fn satisfied_margin_gives_zero_loss() {
        let images = array![[1.0, 0.0], [-1.0, 0.0]];
        let texts = array![[1.0, 0.0], [-1.0, 0.0]];
        let g = ranking_loss(images.view(), texts.view(), &plan_one_negative(), 1.0).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.images.iter().chain(g.texts.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn orthogonal_pairs_give_two() {
        // pos sim 0, neg sim 0 in both directions.
        let images = array![[1.0, 0.0], [1.0, 0.0]];
        let texts = array![[0.0, 1.0], [0.0, 1.0]];
        let g = ranking_loss(images.view(), texts.view(), &plan_one_negative(), 1.0).unwrap();
        assert_eq!(g.loss, 2.0);
    }

    #[test]
    fn empty_negatives_give_zero() {
        let images = array![[1.0, 0.0], [0.0, 1.0]];
        let plan = BatchPlan {
            anchors: vec![AnchorPlan::default(), AnchorPlan::default()],
            skipped_anchors: 2,
        };
        let g = ranking_loss(images.view(), images.view(), &plan, 1.0).unwrap();
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn hinge_kink_has_zero_subgradient() {
        // m - pos + neg = 1 - 1 + 0 = 0 exactly.
        let images = array![[1.0, 0.0], [0.0, 1.0]];
        let texts = array![[1.0, 0.0], [0.0, 1.0]];
        let g = ranking_loss(images.view(), texts.view(), &plan_one_negative(), 1.0).unwrap();
        assert_eq!(g.loss, 0.0);
        assert!(g.images.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn harmonic_similarity_values() {
        let (v, _, _) = harmonic_similarity(0.8f64, 0.8, 1e-8);
        assert!((v - 0.8).abs() < 1e-7);
        let (v, _, _) = harmonic_similarity(0.6f64, 0.3, 0.0);
        assert!((v - 0.4).abs() < 1e-15);
        let (v, da, db) = harmonic_similarity(-0.5f64, 1.0, 1e-8);
        assert!(v.abs() < 1e-12);
        assert_eq!(da, 0.0);
        assert_eq!(db, 0.0);
        let (v, _, _) = harmonic_similarity(0.0f64, 0.0, 1e-8);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn constraint_hand_values() {
        let t = constraint_terms(&[(1.0, 0.0)]);
        assert_eq!((t.c1, t.c2, t.total()), (1.0, 0.0, 1.0));
        let t = constraint_terms(&[(0.0, 0.0), (0.0, 0.0)]);
        assert_eq!(t.total(), 0.0);
        let t = constraint_terms(&[(0.5, 0.5)]);
        assert_eq!((t.c1, t.c2, t.total()), (0.25, 0.25, 0.5));
        assert_eq!(constraint_terms(&[]).total(), 0.0);
    }

    #[test]
    fn penalty_on_constructed_projections() {
        // sim_cmod(0, 1) = 0: a = u0.v1 = 0, b = v0.u1 = 0.
        let images = array![[1.0, 0.0], [0.0, 1.0]];
        let texts = array![[1.0, 0.0], [0.0, 1.0]];
        let mut g = ProjectionGrads::zeros(2, 2);
        let p = temporal_penalty(
            images.view(),
            texts.view(),
            0,
            &[Positive { index: 1, sim_temp: 1.0 }],
            1e-8,
            1.0,
            &mut g,
        );
        assert_eq!(p, 1.0);
    }

    #[test]
    fn plan_respects_categories() {
        let sets: Vec<BTreeSet<usize>> = vec![
            [0].into(),
            [0, 1].into(),
            [1].into(),
            [2].into(),
            [2].into(),
        ];
        let labels: Vec<&BTreeSet<usize>> = sets.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = BatchPlan::build(&labels, 2, |_, _| 0.5, &mut rng).unwrap();
        for (i, a) in plan.anchors.iter().enumerate() {
            for &n in a.text_negatives.iter().chain(&a.image_negatives) {
                assert!(sets[i].is_disjoint(&sets[n]));
            }
            for p in &a.positives {
                assert!(!sets[i].is_disjoint(&sets[p.index]));
                assert_ne!(p.index, i);
            }
            assert!(a.text_negatives.len() <= 2);
        }
        assert_eq!(plan.skipped_anchors, 0);

        let same: Vec<BTreeSet<usize>> = vec![[0].into(), [0].into()];
        let labels: Vec<&BTreeSet<usize>> = same.iter().collect();
        let plan = BatchPlan::build(&labels, 1, |_, _| 1.0, &mut rng).unwrap();
        assert_eq!(plan.skipped_anchors, 2);
    }

    #[test]
    fn out_of_range_sim_temp_rejected() {
        let sets: Vec<BTreeSet<usize>> = vec![[0].into(), [0].into()];
        let labels: Vec<&BTreeSet<usize>> = sets.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(BatchPlan::build(&labels, 1, |_, _| 1.5, &mut rng).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::default().validate().is_ok());
        let bad = ObjectiveConfig {
            epsilon: 1e-3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ObjectiveConfig {
            margin: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
