//! Flat `key = value` run configuration with dotted keys. One registry
//! defines every accepted key, its default, and its help line; unknown keys
//! are rejected and missing keys fall back to the documented default. All
//! randomness derives from the single `seed` key.

use crate::data::{SyntheticSpec, SyntheticTask};
use crate::error::{Error, Result};
use crate::loss::{GainKind, LossKind, LossSpec};
use crate::model::{ModelSpec, Pooling, Variant};
use crate::rng::derive_seed;
use crate::train::TrainConfig;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

pub struct ConfigKey {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const CONFIG_KEYS: &[ConfigKey] = &[
    ConfigKey { key: "seed", default: "42", help: "base seed; every submodule derives its own stream from it" },
    ConfigKey { key: "model.variant", default: "univariate", help: "univariate | gsf | serank | serank_b | serank_no_squeeze | serank_no_excitation" },
    ConfigKey { key: "model.hidden_widths", default: "64,32,16", help: "comma-separated hidden layer widths" },
    ConfigKey { key: "model.group_size", default: "2", help: "GSF group size m" },
    ConfigKey { key: "model.shrinkage", default: "2", help: "excitation bottleneck shrinkage r" },
    ConfigKey { key: "model.pooling", default: "mean", help: "squeeze pooling: mean | max" },
    ConfigKey { key: "model.batch_norm", default: "false", help: "batch-normalize hidden layers" },
    ConfigKey { key: "model.se_on_input", default: "true", help: "place a block on the raw input as well" },
    ConfigKey { key: "model.double_relu_excitation", default: "false", help: "fidelity flag: relu outer excitation activation instead of sigmoid" },
    ConfigKey { key: "loss.kind", default: "softmax_ce", help: "pairwise_logistic | pairwise_logistic_lambda | softmax_ce" },
    ConfigKey { key: "loss.gain", default: "pow2minus1", help: "label gain: identity | pow2minus1" },
    ConfigKey { key: "loss.lambda_normalize", default: "true", help: "divide lambda weights by the query maxDCG" },
    ConfigKey { key: "train.learning_rate", default: "0.5", help: "Adagrad learning rate" },
    ConfigKey { key: "train.batch_size", default: "128", help: "queries per training batch" },
    ConfigKey { key: "train.max_steps", default: "30000", help: "training steps (step mode)" },
    ConfigKey { key: "train.max_epochs", default: "0", help: "when > 0, train this many epochs and keep the last checkpoint" },
    ConfigKey { key: "train.doc_cap", default: "200", help: "max documents per query during training (never at evaluation)" },
    ConfigKey { key: "train.eval_every", default: "500", help: "validate every N steps (0 disables)" },
    ConfigKey { key: "train.adagrad_init_acc", default: "0.1", help: "initial Adagrad accumulator value" },
    ConfigKey { key: "train.clip_norm", default: "0", help: "global gradient-norm clip (0 disables)" },
    ConfigKey { key: "train.select_metric_k", default: "5", help: "NDCG cutoff used for model selection" },
    ConfigKey { key: "data.train", default: "", help: "training split path (LETOR text)" },
    ConfigKey { key: "data.valid", default: "", help: "validation split path" },
    ConfigKey { key: "data.test", default: "", help: "test split path" },
    ConfigKey { key: "data.feature_count", default: "136", help: "feature channels per document" },
    ConfigKey { key: "data.normalize", default: "true", help: "standardize features with training-split stats" },
    ConfigKey { key: "data.discard_no_relevant", default: "true", help: "drop all-zero-label queries from train/valid splits" },
    ConfigKey { key: "synth.task", default: "plain", help: "synthetic task: plain | contextual" },
    ConfigKey { key: "synth.train_queries", default: "5000", help: "synthetic training queries" },
    ConfigKey { key: "synth.valid_queries", default: "500", help: "synthetic validation queries" },
    ConfigKey { key: "synth.test_queries", default: "500", help: "synthetic test queries" },
    ConfigKey { key: "synth.docs_per_query", default: "16", help: "documents per synthetic query" },
    ConfigKey { key: "synth.feature_count", default: "20", help: "feature channels per synthetic document" },
];

/// A resolved configuration: defaults overlaid with file values and any
/// command-line overrides.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: CONFIG_KEYS
                .iter()
                .map(|k| (k.key, k.default.to_string()))
                .collect(),
        }
    }
}

fn known_key(key: &str) -> Result<&'static str> {
    CONFIG_KEYS
        .iter()
        .find(|k| k.key == key)
        .map(|k| k.key)
        .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: lineno + 1,
                msg: format!("expected key = value, found {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path.as_ref())?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = known_key(key)?;
        self.values.insert(key, value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        &self.values[known_key(key).expect("callers use registry keys")]
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)
            .parse()
            .map_err(|_| Error::Config(format!("bad value {:?} for {key}", self.get(key))))
    }

    pub fn seed(&self) -> Result<u64> {
        self.parse_as("seed")
    }

    pub fn feature_count(&self) -> Result<usize> {
        self.parse_as("data.feature_count")
    }

    pub fn normalize(&self) -> Result<bool> {
        self.parse_as("data.normalize")
    }

    pub fn discard_no_relevant(&self) -> Result<bool> {
        self.parse_as("data.discard_no_relevant")
    }

    pub fn data_path(&self, split: &str) -> Option<&str> {
        let v = self.get(&format!("data.{split}"));
        if v.is_empty() {
            None
        } else {
            Some(v)
        }
    }

    pub fn model_spec(&self, input_width: usize) -> Result<ModelSpec> {
        let widths = self
            .get("model.hidden_widths")
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad width {t:?} in model.hidden_widths")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let spec = ModelSpec {
            variant: Variant::parse(self.get("model.variant"))?,
            input_width,
            hidden_widths: widths,
            group_size: self.parse_as("model.group_size")?,
            shrinkage: self.parse_as("model.shrinkage")?,
            pooling: Pooling::parse(self.get("model.pooling"))?,
            batch_norm: self.parse_as("model.batch_norm")?,
            se_on_input: self.parse_as("model.se_on_input")?,
            double_relu_excitation: self.parse_as("model.double_relu_excitation")?,
            seed: derive_seed(self.seed()?, "model-init"),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn loss_spec(&self) -> Result<LossSpec> {
        Ok(LossSpec {
            kind: LossKind::parse(self.get("loss.kind"))?,
            gain: GainKind::parse(self.get("loss.gain"))?,
            lambda_normalize: self.parse_as("loss.lambda_normalize")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            learning_rate: self.parse_as("train.learning_rate")?,
            batch_size: self.parse_as("train.batch_size")?,
            max_steps: self.parse_as("train.max_steps")?,
            max_epochs: self.parse_as("train.max_epochs")?,
            doc_cap: self.parse_as("train.doc_cap")?,
            eval_every: self.parse_as("train.eval_every")?,
            seed: derive_seed(self.seed()?, "train"),
            adagrad_init_acc: self.parse_as("train.adagrad_init_acc")?,
            clip_norm: self.parse_as("train.clip_norm")?,
            loss: self.loss_spec()?,
            select_metric_k: self.parse_as("train.select_metric_k")?,
        })
    }

    /// Synthetic specs for the three splits, each on its own seed stream.
    pub fn synthetic_specs(&self) -> Result<[SyntheticSpec; 3]> {
        let task = match self.get("synth.task") {
            "plain" => SyntheticTask::Plain,
            "contextual" => SyntheticTask::Contextual,
            other => return Err(Error::Config(format!("unknown synth.task {other:?}"))),
        };
        let base = derive_seed(self.seed()?, "synthetic");
        let spec = |count_key: &str, split: &str| -> Result<SyntheticSpec> {
            Ok(SyntheticSpec {
                task,
                queries: self.parse_as(count_key)?,
                docs_per_query: self.parse_as("synth.docs_per_query")?,
                feature_count: self.parse_as("synth.feature_count")?,
                seed: base,
                split: split.to_string(),
            })
        };
        Ok([
            spec("synth.train_queries", "train")?,
            spec("synth.valid_queries", "valid")?,
            spec("synth.test_queries", "test")?,
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_every_key() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.get("train.batch_size"), "128");
        assert_eq!(cfg.get("model.hidden_widths"), "64,32,16");
        let tc = cfg.train_config().unwrap();
        assert_eq!(tc.learning_rate, 0.5);
        assert_eq!(tc.max_steps, 30_000);
        assert_eq!(tc.doc_cap, 200);
        let ms = cfg.model_spec(136).unwrap();
        assert_eq!(ms.hidden_widths, vec![64, 32, 16]);
        assert_eq!(ms.shrinkage, 2);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse("model.variant = serank\nbogus.key = 1\n").is_err());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg = RunConfig::parse("# a comment\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(cfg.seed().unwrap(), 7);
    }

    #[test]
    fn values_override_defaults() {
        let cfg = RunConfig::parse("model.variant = serank_b\ntrain.batch_size = 16\n").unwrap();
        let spec = cfg.model_spec(20).unwrap();
        assert_eq!(spec.variant, Variant::SerankB);
        assert_eq!(cfg.train_config().unwrap().batch_size, 16);
    }

    #[test]
    fn bad_values_name_the_key() {
        let cfg = RunConfig::parse("train.batch_size = soup\n").unwrap();
        let err = cfg.train_config().unwrap_err().to_string();
        assert!(err.contains("train.batch_size"), "{err}");
    }

    #[test]
    fn synthetic_splits_share_task_seed_with_distinct_streams() {
        let cfg = RunConfig::parse("seed = 1\n").unwrap();
        let [a, b, c] = cfg.synthetic_specs().unwrap();
        assert_eq!(a.seed, b.seed);
        assert_eq!(b.seed, c.seed);
        assert_ne!(a.split, b.split);
        assert_ne!(b.split, c.split);
        assert_ne!(cfg.train_config().unwrap().seed, cfg.model_spec(4).unwrap().seed);
    }
}
