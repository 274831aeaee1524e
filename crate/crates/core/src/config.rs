//! Flat `key=value` configuration for PONE training.
//!
//! Keys and defaults:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `k` | 5 | augmented positives per pair |
//! | `t` | 0.07 | sampler softmax temperature |
//! | `h` | 128 | negative candidate pool size |
//! | `negatives_per_positive` | 1 | negatives drawn per pair |
//! | `epochs` | 100 | training epochs |
//! | `learning_rate` | 1e-3 | Adam step size |
//! | `dropout` | 0.5 | hidden-layer dropout rate |
//! | `mlp_hidden` | 256/512/128 | hidden layer widths |
//! | `batch_size` | 64 | mini-batch size |
//! | `alpha` | 0.1 | EDA change rate |
//! | `eda_ops` | sr,ri,rs,rd | enabled EDA operations |
//! | `max_iterations` | 10 | label-filter round cap |
//! | `label_threshold` | 0.5 | pseudo-label cut |
//! | `fine_tune_epochs` | 20 | epochs per filter round |
//! | `stop_on_fixpoint` | true | stop once labels settle |
//! | `drop_flipped` | false | discard label-0 samples instead of using them as negatives |
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::augmentor::{EdaConfig, EdaOperation};
use crate::error::{Error, Result};
use crate::label_filter::FilterConfig;
use crate::negative_sampler::SamplerConfig;
use crate::scorer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoneConfig {
    pub sampler: SamplerConfig,
    pub eda: EdaConfig,
    pub train: TrainConfig,
    pub filter: FilterConfig,
}

impl PoneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&body).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(body: &str) -> Result<Self> {
        let mut cfg = PoneConfig::default();
        for (idx, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", idx + 1)))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "k" => self.eda.k = num(key, value)?,
            "t" => self.sampler.temperature = num(key, value)?,
            "h" => self.sampler.pool_size = num(key, value)?,
            "negatives_per_positive" => self.sampler.negatives_per_positive = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "learning_rate" => self.train.learning_rate = num(key, value)?,
            "dropout" => self.train.dropout = num(key, value)?,
            "batch_size" => self.train.batch_size = num(key, value)?,
            "mlp_hidden" => {
                self.train.hidden = value
                    .split('/')
                    .map(|v| num("mlp_hidden", v.trim()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "alpha" => self.eda.alpha = num(key, value)?,
            "eda_ops" => {
                self.eda.operations = value
                    .split(',')
                    .map(|op| op.trim().parse::<EdaOperation>().map_err(|e| e.to_string()))
                    .collect::<std::result::Result<_, _>>()?
            }
            "max_iterations" => self.filter.max_iterations = num(key, value)?,
            "label_threshold" => self.filter.label_threshold = num(key, value)?,
            "fine_tune_epochs" => self.filter.fine_tune_epochs = num(key, value)?,
            "stop_on_fixpoint" => self.filter.stop_on_fixpoint = num(key, value)?,
            "drop_flipped" => self.filter.drop_flipped = num(key, value)?,
            other => return Err(format!("unknown key `{other}`")),
        }
        Ok(())
    }

    /// Points every component at the same seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sampler.seed = seed;
        self.eda.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.eda.validate()?;
        self.train.validate()?;
        self.filter.validate()
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = PoneConfig::default();
        assert_eq!(c.eda.k, 5);
        assert_eq!(c.sampler.temperature, 0.07);
        assert_eq!(c.train.epochs, 100);
        assert_eq!(c.train.learning_rate, 1e-3);
        assert_eq!(c.train.dropout, 0.5);
        assert_eq!(c.train.hidden, vec![256, 512, 128]);
    }

    #[test]
    fn parses_keys_and_comments() {
        let c = PoneConfig::parse(
            "# tiny\nk = 3\nt=0.1\nmlp_hidden=16/8\n\neda_ops=rs,sr\ndrop_flipped=true\n",
        )
        .unwrap();
        assert_eq!(c.eda.k, 3);
        assert_eq!(c.sampler.temperature, 0.1);
        assert_eq!(c.train.hidden, vec![16, 8]);
        assert_eq!(
            c.eda.operations,
            vec![EdaOperation::RandomSwap, EdaOperation::SynonymReplacement]
        );
        assert!(c.filter.drop_flipped);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            PoneConfig::parse("bogus=1"),
            Err(Error::Config(_))
        ));
        assert!(matches!(PoneConfig::parse("k"), Err(Error::Config(_))));
        assert!(matches!(PoneConfig::parse("k=abc"), Err(Error::Config(_))));
        assert!(matches!(PoneConfig::parse("t=0"), Err(Error::Config(_))));
        assert!(matches!(
            PoneConfig::parse("label_threshold=1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seed_reaches_every_component() {
        let c = PoneConfig::default().with_seed(9);
        assert_eq!((c.sampler.seed, c.eda.seed, c.train.seed), (9, 9, 9));
    }
}
