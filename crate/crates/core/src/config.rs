//! Run configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored; unknown keys are rejected.
//! Serialization lists every key in a fixed order, so the text form of a
//! configuration is canonical.

use std::path::Path;
use std::str::FromStr;

use crate::corpus::{LoadOptions, SplitSpec, VocabularyRank};
use crate::error::{Error, Result};
use crate::objective::ObjectiveConfig;
use crate::projection::{DecaySchedule, Dims, SgdConfig};
use crate::retrieval::{EvalOptions, Gain};
use crate::temporal::{Aggregate, TemporalKind, TopicConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub margin: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub negatives_per_anchor: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub decay: f64,
    pub decay_schedule: DecaySchedule,
    pub epochs: usize,
    pub batch_size: usize,
    /// Non-improving epochs tolerated before stopping.
    pub patience: usize,
    /// Temporal model fitted by in-process pipelines; `None` trains without one.
    pub temporal: Option<TemporalKind>,
    pub kde_bandwidth: f64,
    pub kde_grid: usize,
    pub recency_h: f64,
    pub topics: usize,
    pub topic_iters: usize,
    pub topic_kappa: f64,
    pub topic_alpha: Option<f64>,
    pub topic_beta: f64,
    pub topic_floor: f64,
    pub topic_aggregate: Aggregate,
    pub k: usize,
    pub k_list: Vec<usize>,
    pub fit_bins: usize,
    pub ndcg_gain: Gain,
    pub seed: u64,
    /// Seconds per time unit.
    pub time_unit: f64,
    pub dev_fraction: f64,
    pub val_fraction: f64,
    pub vocab_max: Option<usize>,
    pub vocab_rank: VocabularyRank,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            embed_dim: 100,
            hidden: 1024,
            margin: 1.0,
            lambda: 1.0,
            epsilon: 1e-8,
            negatives_per_anchor: 1,
            learning_rate: 5e-3,
            momentum: 0.9,
            decay: 1e-6,
            decay_schedule: DecaySchedule::InverseTime,
            epochs: 25,
            batch_size: 64,
            patience: 3,
            temporal: None,
            kde_bandwidth: 1.0,
            kde_grid: 1024,
            recency_h: 0.3,
            topics: 10,
            topic_iters: 200,
            topic_kappa: 0.5,
            topic_alpha: None,
            topic_beta: 0.01,
            topic_floor: 1e-6,
            topic_aggregate: Aggregate::GeometricMean,
            k: 50,
            k_list: vec![10, 20, 30, 40, 50],
            fit_bins: 10,
            ndcg_gain: Gain::Linear,
            seed: 0,
            time_unit: 86400.0,
            dev_fraction: 0.9,
            val_fraction: 0.15,
            vocab_max: None,
            vocab_rank: VocabularyRank::DocumentFrequency,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_optional<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_optional<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

impl RunConfig {
    /// Set one key from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "margin" => self.margin = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "negatives_per_anchor" => self.negatives_per_anchor = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "momentum" => self.momentum = parse(key, v)?,
            "decay" => self.decay = parse(key, v)?,
            "decay_schedule" => self.decay_schedule = v.parse()?,
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "patience" => self.patience = parse(key, v)?,
            "temporal" => {
                self.temporal = match v {
                    "none" => None,
                    other => Some(other.parse()?),
                }
            }
            "kde_bandwidth" => self.kde_bandwidth = parse(key, v)?,
            "kde_grid" => self.kde_grid = parse(key, v)?,
            "recency_h" => self.recency_h = parse(key, v)?,
            "topics" => self.topics = parse(key, v)?,
            "topic_iters" => self.topic_iters = parse(key, v)?,
            "topic_kappa" => self.topic_kappa = parse(key, v)?,
            "topic_alpha" => self.topic_alpha = parse_optional(key, v)?,
            "topic_beta" => self.topic_beta = parse(key, v)?,
            "topic_floor" => self.topic_floor = parse(key, v)?,
            "topic_aggregate" => self.topic_aggregate = v.parse()?,
            "k" => self.k = parse(key, v)?,
            "k_list" => {
                self.k_list = v
                    .split(',')
                    .map(|s| parse(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "fit_bins" => self.fit_bins = parse(key, v)?,
            "ndcg_gain" => self.ndcg_gain = v.parse()?,
            "seed" => self.seed = parse(key, v)?,
            "time_unit" => self.time_unit = parse(key, v)?,
            "dev_fraction" => self.dev_fraction = parse(key, v)?,
            "val_fraction" | "val_fraction_of_dev" => self.val_fraction = parse(key, v)?,
            "vocab_max" | "max_vocab" => self.vocab_max = parse_optional(key, v)?,
            "vocab_rank" => self.vocab_rank = v.parse()?,
            other => return Err(Error::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got `{assignment}`")))?;
        self.set(k, v)
    }

    /// Parse configuration text on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical `key = value` lines.
    pub fn to_text(&self) -> String {
        let decay_schedule = match self.decay_schedule {
            DecaySchedule::InverseTime => "inverse_time",
            DecaySchedule::None => "none",
        };
        let aggregate = match self.topic_aggregate {
            Aggregate::GeometricMean => "geometric",
            Aggregate::Product => "product",
        };
        let gain = match self.ndcg_gain {
            Gain::Linear => "linear",
            Gain::Exponential => "exponential",
        };
        let rank = match self.vocab_rank {
            VocabularyRank::DocumentFrequency => "df",
            VocabularyRank::RawCount => "count",
        };
        let k_list: Vec<String> = self.k_list.iter().map(usize::to_string).collect();
        let entries: Vec<(&str, String)> = vec![
            ("embed_dim", self.embed_dim.to_string()),
            ("hidden", self.hidden.to_string()),
            ("margin", self.margin.to_string()),
            ("lambda", self.lambda.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("negatives_per_anchor", self.negatives_per_anchor.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("decay", self.decay.to_string()),
            ("decay_schedule", decay_schedule.into()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("temporal", self.temporal.map_or("none", TemporalKind::name).into()),
            ("kde_bandwidth", self.kde_bandwidth.to_string()),
            ("kde_grid", self.kde_grid.to_string()),
            ("recency_h", self.recency_h.to_string()),
            ("topics", self.topics.to_string()),
            ("topic_iters", self.topic_iters.to_string()),
            ("topic_kappa", self.topic_kappa.to_string()),
            ("topic_alpha", show_optional(&self.topic_alpha)),
            ("topic_beta", self.topic_beta.to_string()),
            ("topic_floor", self.topic_floor.to_string()),
            ("topic_aggregate", aggregate.into()),
            ("k", self.k.to_string()),
            ("k_list", k_list.join(",")),
            ("fit_bins", self.fit_bins.to_string()),
            ("ndcg_gain", gain.into()),
            ("seed", self.seed.to_string()),
            ("time_unit", self.time_unit.to_string()),
            ("dev_fraction", self.dev_fraction.to_string()),
            ("val_fraction", self.val_fraction.to_string()),
            ("vocab_max", show_optional(&self.vocab_max)),
            ("vocab_rank", rank.into()),
        ];
        entries.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("kde_grid", self.kde_grid),
            ("topics", self.topics),
            ("k", self.k),
            ("fit_bins", self.fit_bins),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.kde_grid < 2 {
            return fail("kde_grid must be >= 2");
        }
        for (name, v) in [
            ("kde_bandwidth", self.kde_bandwidth),
            ("recency_h", self.recency_h),
            ("topic_beta", self.topic_beta),
            ("topic_floor", self.topic_floor),
            ("time_unit", self.time_unit),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.topic_kappa >= 0.0) || self.topic_alpha.is_some_and(|a| !(a > 0.0)) {
            return fail("topic_kappa must be >= 0 and topic_alpha > 0");
        }
        if self.k_list.is_empty() || self.k_list[0] == 0 || self.k_list.windows(2).any(|w| w[0] >= w[1]) {
            return fail("k_list must be positive and strictly increasing");
        }
        if !(self.dev_fraction > 0.0 && self.dev_fraction <= 1.0) {
            return fail("dev_fraction must be in (0, 1]");
        }
        if !(self.val_fraction >= 0.0 && self.val_fraction < 1.0) {
            return fail("val_fraction must be in [0, 1)");
        }
        if self.vocab_max == Some(0) {
            return fail("vocab_max must be >= 1 or none");
        }
        self.objective().validate()?;
        let sgd = self.sgd();
        if !(sgd.learning_rate > 0.0) || !(0.0..1.0).contains(&sgd.momentum) || !(sgd.decay >= 0.0) {
            return fail("learning_rate must be > 0, momentum in [0, 1), decay >= 0");
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            margin: self.margin,
            lambda: self.lambda,
            epsilon: self.epsilon,
            negatives_per_anchor: self.negatives_per_anchor,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            decay: self.decay,
            schedule: self.decay_schedule,
        }
    }

    pub fn dims(&self, d_image: usize, d_text: usize) -> Dims {
        Dims {
            d_image,
            d_text,
            hidden: self.hidden,
            embed: self.embed_dim,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            dev_fraction: self.dev_fraction,
            val_fraction_of_dev: self.val_fraction,
            seed: self.seed,
        }
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            time_unit: self.time_unit,
            max_vocab: self.vocab_max,
            vocab_rank: self.vocab_rank,
        }
    }

    pub fn topic_config(&self) -> TopicConfig {
        TopicConfig {
            topics: self.topics,
            iterations: self.topic_iters,
            kappa: self.topic_kappa,
            alpha: self.topic_alpha,
            beta: self.topic_beta,
            floor: self.topic_floor,
            aggregate: self.topic_aggregate,
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            k: self.k,
            k_list: self.k_list.clone(),
            bins: self.fit_bins,
            gain: self.ndcg_gain,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.embed_dim, 100);
        assert_eq!(cfg.hidden, 1024);
        assert_eq!(cfg.epochs, 25);
        assert_eq!(cfg.k, 50);
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("lambda=0").unwrap();
        cfg.apply_override("temporal = topic").unwrap();
        cfg.apply_override("topic_alpha=0.1").unwrap();
        cfg.apply_override("k_list=1,5,9").unwrap();
        cfg.apply_override("vocab_max=500").unwrap();
        let text = cfg.to_text();
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&text).unwrap().to_text(), text);
    }

    #[test]
    fn comments_and_errors() {
        let cfg = RunConfig::parse("# run\nseed = 7 # trailing\n\nbatch_size=10000\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.batch_size, 10000);
        assert!(RunConfig::parse("bogus = 1").is_err());
        assert!(RunConfig::parse("seed").is_err());
        assert!(RunConfig::parse("epochs = 0").is_err());
        assert!(RunConfig::parse("margin = -1").is_err());
        assert!(RunConfig::parse("k_list = 10,5").is_err());
        assert!(RunConfig::parse("temporal = seasonal").is_err());
        assert!(RunConfig::parse("epsilon = 0.01").is_err());
    }
}
