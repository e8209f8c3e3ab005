use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use tcm::corpus::{split, Corpus, Document, DocumentFrequencies, SplitSpec, TimeAxis};
use tcm::objective::{constraint_terms, harmonic_similarity, sim_cmod};
use tcm::projection::Modality;
use tcm::retrieval::{average_precision, ndcg, GradedRanking, RankedRelevance, RetrievalIndex, Gain};
use tcm::synth::oracle_ap;
use tcm::temporal::{CategoryKde, RecencyModel};

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(unit)
}

fn corpus_of(n: usize) -> Corpus {
    let documents = (0..n)
        .map(|i| Document {
            id: format!("d{i:04}"),
            image_feat: vec![i as f64],
            text_counts: BTreeMap::from([(0, 1)]),
            timestamp: i as f64,
            labels: BTreeSet::from([i % 2]),
        })
        .collect();
    Corpus {
        documents,
        vocabulary: vec!["w".into()],
        categories: vec!["a".into(), "b".into()],
        time_axis: TimeAxis::new(1.0, 0, n.saturating_sub(1) as f64).unwrap(),
        d_image: 1,
    }
}

proptest! {
    #[test]
    fn sim_cmod_is_bounded_and_symmetric(rows in prop::collection::vec(unit_vec(5), 4)) {
        let images = Array2::from_shape_vec((2, 5), rows[..2].concat()).unwrap();
        let texts = Array2::from_shape_vec((2, 5), rows[2..].concat()).unwrap();
        let a: f64 = sim_cmod(images.view(), texts.view(), 0, 1, 1e-8);
        let b: f64 = sim_cmod(images.view(), texts.view(), 1, 0, 1e-8);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn harmonic_mean_is_at_most_the_arithmetic_mean(a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let (v, _, _) = harmonic_similarity(a, b, 1e-8);
        prop_assert!(v >= 0.0);
        prop_assert!(v <= (a.max(0.0) + b.max(0.0)) / 2.0 + 1e-12);
    }

    #[test]
    fn constraint_penalty_is_bounded(pairs in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..20)) {
        let t = constraint_terms(&pairs);
        prop_assert!((0.0..=1.0).contains(&t.total()));
        prop_assert!(t.c1 >= 0.0 && t.c2 >= 0.0);
    }

    #[test]
    fn tfidf_is_unit_norm_or_zero(counts in prop::collection::btree_map(0usize..12, 1u32..5, 0..8), df in prop::collection::vec(0u32..10, 12)) {
        let freqs = DocumentFrequencies { num_docs: 10, df };
        let v = freqs.vectorize_counts(&counts);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        prop_assert!(v.iter().all(|x| *x >= 0.0));
    }

    #[test]
    fn split_is_a_partition(n in 1usize..300, dev in 0.05f64..=1.0, val in 0.0f64..0.9, seed in any::<u64>()) {
        let corpus = corpus_of(n);
        let spec = SplitSpec { dev_fraction: dev, val_fraction_of_dev: val, seed };
        if let Ok(parts) = split(&corpus, &spec) {
            let mut ids: Vec<&str> = parts.train.documents.iter()
                .chain(&parts.val.documents)
                .chain(&parts.test.documents)
                .map(|d| d.id.as_str())
                .collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }
    }

    #[test]
    fn ap_matches_oracle_and_is_bounded(scores in prop::collection::vec(0.0f64..1.0, 1..12), rel in prop::collection::vec(any::<bool>(), 12), k in 1usize..15) {
        let n = scores.len();
        let rel = &rel[..n];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        let ranking = RankedRelevance::from_full_ranking(order.iter().map(|&i| rel[i]).collect());
        let ours = average_precision(&ranking, k);
        let oracle = oracle_ap(&scores, rel, k);
        prop_assert_eq!(ours.is_some(), oracle.is_some());
        if let (Some(a), Some(b)) = (ours, oracle) {
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&a));
        }
    }

    #[test]
    fn ndcg_is_bounded(grades in prop::collection::vec(0u32..4, 1..12), k in 1usize..15) {
        for gain in [Gain::Linear, Gain::Exponential] {
            if let Some(v) = ndcg(&GradedRanking::from_full_ranking(grades.clone()), k, gain) {
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
            }
        }
    }

    #[test]
    fn recency_and_kde_sims_are_bounded(t in -50.0f64..150.0, u in -50.0f64..150.0, obs in prop::collection::vec(0.0f64..100.0, 1..10)) {
        let r = RecencyModel::new(0.3).unwrap().sim(t, u);
        prop_assert!(r > 0.0 || (t - u).abs() > 100.0);
        prop_assert!(r <= 1.0);
        let kde = CategoryKde::from_observations(vec![obs], 1.0, 64, 100.0).unwrap();
        let s = kde.sim(t, &BTreeSet::from([0]), u, &BTreeSet::from([0]));
        prop_assert!((0.0..=1.0).contains(&s));
    }

    #[test]
    fn ranking_is_scale_invariant_for_a_linear_stub(x in prop::collection::vec(-1.0f64..1.0, 3), c in 0.01f64..100.0) {
        // Stub projection: fixed linear map followed by normalization.
        let w = Array2::from_shape_vec((4, 3), vec![0.3, -0.2, 0.9, 0.5, 0.1, -0.4, -0.7, 0.6, 0.2, 0.05, 0.8, 0.3]).unwrap();
        let project = |v: &[f64]| -> Option<Array1<f64>> {
            let y = w.dot(&Array1::from(v.to_vec()));
            let n = y.dot(&y).sqrt();
            (n > 1e-9).then(|| y / n)
        };
        let Some(q1) = project(&x) else { return Ok(()); };
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        let q2 = project(&scaled).unwrap();
        let index = stub_index();
        let a = index.rank_projected(q1.view(), Modality::Image, 6).unwrap();
        let b = index.rank_projected(q2.view(), Modality::Image, 6).unwrap();
        let ids = |t: &tcm::retrieval::TopK| t.hits.iter().map(|h| h.doc_id.clone()).collect::<Vec<_>>();
        prop_assert_eq!(ids(&a), ids(&b));
    }
}

/// Index over six documents with a tiny model; only the image matrix is used.
fn stub_index() -> RetrievalIndex {
    use rand::SeedableRng;
    use tcm::projection::{Dims, ProjectionModel};
    let dims = Dims { d_image: 2, d_text: 1, hidden: 5, embed: 4 };
    let model = ProjectionModel::<f64>::init(dims, &mut rand_chacha::ChaCha8Rng::seed_from_u64(9));
    let docs: Vec<Document> = (0..6)
        .map(|i| Document {
            id: format!("d{i}"),
            image_feat: vec![(i as f64).sin(), (i as f64).cos()],
            text_counts: BTreeMap::from([(0, 1)]),
            timestamp: i as f64,
            labels: BTreeSet::from([0]),
        })
        .collect();
    let freqs = DocumentFrequencies { num_docs: 6, df: vec![3] };
    RetrievalIndex::from_documents(&docs, 5.0, &model, &freqs).unwrap()
}
