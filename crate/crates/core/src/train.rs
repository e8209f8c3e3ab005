//! Mini-batch training with early stopping, and the end-to-end
//! split/fit/train/evaluate pipeline.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{split, Corpus, Document, DocumentFrequencies};
use crate::error::{Error, Result};
use crate::objective::{self, BatchPlan};
use crate::projection::{Checkpoint, ProjectionModel, Sgd};
use crate::retrieval::{self, Direction, EvalReport, RetrievalIndex};
use crate::temporal::{CategoryKde, RecencyModel, TemporalKind, TemporalModel, TopicDensity};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;
const NEGATIVE_STREAM: u64 = 2;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean total loss per training document.
    pub train_loss: f64,
    /// Mean ranking loss per training document.
    pub ranking_loss: f64,
    /// Mean weighted temporal loss (`lambda * L_temp`) per training document.
    pub temporal_loss: f64,
    /// Mean of image-to-text and text-to-image validation mAP@K.
    pub val_map: Option<f64>,
    pub learning_rate: f64,
    /// Anchors without an in-batch negative.
    pub skipped_anchors: usize,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Model of the best validation epoch (or the last epoch without
    /// validation data).
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Fit the temporal model of `kind` on the training split.
pub fn fit_temporal(kind: TemporalKind, train: &Corpus, cfg: &RunConfig) -> Result<TemporalModel> {
    Ok(match kind {
        TemporalKind::Recency => TemporalModel::Recency(RecencyModel::new(cfg.recency_h)?),
        TemporalKind::Category => TemporalModel::Category(CategoryKde::fit(train, cfg.kde_bandwidth, cfg.kde_grid)?),
        TemporalKind::Topic => TemporalModel::Topic(TopicDensity::fit(train, &cfg.topic_config())?),
    })
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn batch_inputs(docs: &[&Document], d_image: usize, freqs: &DocumentFrequencies) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut images = Array2::zeros((docs.len(), d_image));
    let mut texts = Array2::zeros((docs.len(), freqs.d_text()));
    for (r, d) in docs.iter().enumerate() {
        if d.image_feat.len() != d_image {
            return Err(Error::Shape {
                expected: d_image,
                actual: d.image_feat.len(),
                context: "image features",
            });
        }
        images.row_mut(r).assign(&ndarray::ArrayView1::from(&d.image_feat));
        texts.row_mut(r).assign(&ndarray::Array1::from(freqs.vectorize(d)));
    }
    Ok((images, texts))
}

/// Mean mAP@K over both directions on `docs`; `None` when `docs` is empty or
/// no query has a relevant candidate.
pub fn validation_map(
    docs: &[Document],
    span: f64,
    model: &ProjectionModel<f64>,
    freqs: &DocumentFrequencies,
    k: usize,
) -> Result<Option<f64>> {
    if docs.is_empty() {
        return Ok(None);
    }
    let index = RetrievalIndex::from_documents(docs, span, model, freqs)?;
    let mut sum = 0.0;
    for dir in Direction::BOTH {
        match retrieval::map_for_direction(&index, dir, k) {
            Ok(v) => sum += v,
            Err(Error::UndefinedMetric(_)) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(sum / 2.0))
}

/// Train on `train`, early-stopping on `val`.
///
/// `temporal` is required when `lambda > 0` and ignored otherwise.
/// `on_epoch` sees every log line as soon as the epoch ends.
pub fn train(
    train: &Corpus,
    val: &Corpus,
    temporal: Option<&TemporalModel>,
    cfg: &RunConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training split is empty".into()));
    }
    let objective_cfg = cfg.objective();
    let temporal = if objective_cfg.lambda > 0.0 {
        Some(temporal.ok_or_else(|| Error::Config("lambda > 0 requires a fitted temporal model".into()))?)
    } else {
        None
    };
    let prepared = temporal.map(|t| t.prepare(&train.documents));
    let freqs = DocumentFrequencies::from_corpus(train);
    let dims = cfg.dims(train.d_image, freqs.d_text());
    let mut model = ProjectionModel::<f64>::init(dims, &mut rng(cfg.seed, INIT_STREAM));
    let mut sgd = Sgd::new(&model, cfg.sgd())?;
    let mut shuffle_rng = rng(cfg.seed, SHUFFLE_STREAM);
    let mut negative_rng = rng(cfg.seed, NEGATIVE_STREAM);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, ProjectionModel<f64>, usize)> = None;
    let mut stale = 0usize;
    let mut stopped_early = false;
    let n = train.len() as f64;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut ranking, mut temporal_sum) = (0.0, 0.0, 0.0);
        let mut skipped = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let docs: Vec<&Document> = batch.iter().map(|&i| &train.documents[i]).collect();
            let labels: Vec<_> = docs.iter().map(|d| &d.labels).collect();
            let plan = BatchPlan::build(
                &labels,
                objective_cfg.negatives_per_anchor,
                |a, b| prepared.as_ref().map_or(0.0, |p| p.sim(batch[a], batch[b])),
                &mut negative_rng,
            )?;
            skipped += plan.skipped_anchors;
            let (images, texts) = batch_inputs(&docs, train.d_image, &freqs)?;
            let (terms, grads) = objective::evaluate(&model, images.view(), texts.view(), &plan, &objective_cfg)?;
            total += terms.total;
            ranking += terms.ranking;
            temporal_sum += objective_cfg.lambda * terms.temporal;
            sgd.step(&mut model, &grads, batch.len())?;
        }
        if !model.all_finite() {
            return Err(Error::NonFiniteGradient(format!("parameters after epoch {epoch}")));
        }
        let val_map = validation_map(&val.documents, val.time_axis.span, &model, &freqs, cfg.k)?;
        let improved = match (val_map, &best) {
            (None, _) => true,
            (Some(v), Some((b, _, _))) => v > *b,
            (Some(_), None) => true,
        };
        if improved {
            best = Some((val_map.unwrap_or(f64::NEG_INFINITY), model.clone(), epoch));
            stale = 0;
        } else {
            stale += 1;
        }
        let entry = EpochLog {
            epoch,
            train_loss: total / n,
            ranking_loss: ranking / n,
            temporal_loss: temporal_sum / n,
            val_map,
            learning_rate: sgd.learning_rate(),
            skipped_anchors: skipped,
            improved,
        };
        on_epoch(&entry);
        log.push(entry);
        if stale > cfg.patience {
            stopped_early = true;
            break;
        }
    }
    let (_, model, best_epoch) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            seed: cfg.seed,
            config: cfg.to_text(),
            frequencies: freqs,
        },
        log,
        best_epoch,
        stopped_early,
    })
}

/// Reports for both directions on the test split.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, test: &Corpus, cfg: &RunConfig) -> Result<[EvalReport; 2]> {
    let index = retrieval::build_index(test, &checkpoint.model, &checkpoint.frequencies)?;
    let opts = cfg.eval_options();
    Ok([
        retrieval::evaluate(&index, Direction::ImageToText, &opts)?,
        retrieval::evaluate(&index, Direction::TextToImage, &opts)?,
    ])
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcome: TrainOutcome,
    pub reports: [EvalReport; 2],
}

impl ExperimentResult {
    /// Mean test mAP@K over both directions.
    pub fn mean_map(&self) -> f64 {
        (self.reports[0].map_at_k + self.reports[1].map_at_k) / 2.0
    }

    pub fn mean_temporal_fit(&self) -> f64 {
        (self.reports[0].temporal_fit + self.reports[1].temporal_fit) / 2.0
    }
}

/// Split `corpus`, fit `cfg.temporal` on the training part when `lambda > 0`,
/// train, and evaluate on the test part.
pub fn run_experiment(corpus: &Corpus, cfg: &RunConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let parts = split(corpus, &cfg.split_spec())?;
    let temporal = match (cfg.lambda > 0.0, cfg.temporal) {
        (false, _) => None,
        (true, Some(kind)) => Some(fit_temporal(kind, &parts.train, cfg)?),
        (true, None) => return Err(Error::Config("lambda > 0 requires `temporal` to be set".into())),
    };
    let outcome = train(&parts.train, &parts.val, temporal.as_ref(), cfg, |_| {})?;
    let reports = evaluate_checkpoint(&outcome.checkpoint, &parts.test, cfg)?;
    Ok(ExperimentResult { outcome, reports })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};

    fn toy_cfg() -> RunConfig {
        RunConfig {
            hidden: 16,
            embed_dim: 8,
            epochs: 3,
            batch_size: 16,
            learning_rate: 0.1,
            k: 10,
            k_list: vec![5, 10],
            ..RunConfig::default()
        }
    }

    fn toy_corpus() -> Corpus {
        let spec = SynthSpec {
            num_categories: 3,
            docs_per_category: 30,
            d_image: 6,
            vocab_size: 40,
            modes: vec![Vec::new(); 3],
            ..SynthSpec::separable(5)
        };
        generate(&spec).unwrap().0
    }

    #[test]
    fn lambda_requires_temporal_model() {
        let c = toy_corpus();
        let err = train(&c, &c, None, &toy_cfg(), |_| {}).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn deterministic_logs_and_checkpoints() {
        let c = toy_corpus();
        let cfg = RunConfig {
            temporal: Some(TemporalKind::Category),
            ..toy_cfg()
        };
        let a = run_experiment(&c, &cfg).unwrap();
        let b = run_experiment(&c, &cfg).unwrap();
        assert_eq!(a.outcome.log, b.outcome.log);
        assert_eq!(a.outcome.checkpoint.to_bytes(), b.outcome.checkpoint.to_bytes());
        assert_eq!(a.reports, b.reports);
    }

    #[test]
    fn patience_zero_stops_at_first_non_improvement() {
        let c = toy_corpus();
        let cfg = RunConfig {
            lambda: 0.0,
            patience: 0,
            epochs: 20,
            ..toy_cfg()
        };
        let parts = split(&c, &cfg.split_spec()).unwrap();
        let out = train(&parts.train, &parts.val, None, &cfg, |_| {}).unwrap();
        let first_bad = out.log.iter().position(|e| !e.improved);
        match first_bad {
            Some(i) => {
                assert_eq!(out.log.len(), i + 1);
                assert!(out.stopped_early);
            }
            None => assert_eq!(out.log.len(), 20),
        }
        assert!(out.log[out.best_epoch - 1].improved);
    }

    #[test]
    fn empty_validation_keeps_last_epoch() {
        let c = toy_corpus();
        let cfg = RunConfig {
            lambda: 0.0,
            val_fraction: 0.0,
            ..toy_cfg()
        };
        let parts = split(&c, &cfg.split_spec()).unwrap();
        assert!(parts.val.is_empty());
        let out = train(&parts.train, &parts.val, None, &cfg, |_| {}).unwrap();
        assert_eq!(out.best_epoch, 3);
        assert!(out.log.iter().all(|e| e.val_map.is_none()));
    }
}
