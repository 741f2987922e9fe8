//! `key = value` run configuration files.

use std::collections::BTreeMap;
use std::str::FromStr;

use onenn::training::{sigma_threshold, Regime, SgdConfig, TrainConfig};

use crate::CliError;

/// Shown by `onenn train --help`.
pub const HELP: &str = "\
Config file: one `key = value` per line, `#` starts a comment.
  regime               population-gd | diag-dynamics | sgd (default sgd)
  n, d                 context length and ambient dimension (default 16, 8)
  sigma                initial query self-score magnitude, logit units, or `auto`
  c_d_hat              constant used by sigma = auto (default 1)
  eta                  step size, population-gd and diag-dynamics (default 0.5)
  steps                gradient steps, population-gd and diag-dynamics (default 500)
  mc_samples_per_step  Monte-Carlo prompts per step (default 10000)
  seed, seeds          first seed and number of consecutive seeds (default 0, 1)
  dataset_size         SGD training prompts (default 10000)
  batch_size           SGD prompts per update (default 128)
  epochs               SGD passes over the dataset (default 2000)
  lr                   SGD step size (default 0.1)
  init_scale           SGD initial weight standard deviation (default 0.02)
  test_delta           squared-distance separation of the SGD test set, or `none` (default 0.1)
  test_size            SGD test prompts (default 1000)
  log_x                `true` for a logarithmic step axis in loss.svg
";


#[derive(Debug)]
pub struct KeyValues {
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Config(format!("line {}: expected key = value, got '{line}'", i + 1)));
            };
            let key = k.trim().to_string();
            if let Some((_, prev)) = entries.insert(key.clone(), (v.trim().to_string(), i + 1)) {
                return Err(CliError::Config(format!("line {}: '{key}' already set on line {prev}", i + 1)));
            }
        }
        Ok(Self { entries })
    }

    fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| CliError::Config(format!("line {line}: cannot parse {key} = '{v}'"))),
        }
    }

    fn take_raw(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((k, (_, line))) => Err(CliError::Config(format!("line {line}: unknown key '{k}'"))),
        }
    }
}

/// A parsed training file.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub config: TrainConfig,
    pub seeds: usize,
    pub c_d_hat: f64,
    pub sigma_auto: bool,
    pub log_x: bool,
}

impl TrainSettings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut kv = KeyValues::parse(text)?;
        let regime = match kv.take_raw("regime") {
            None => Regime::Sgd,
            Some((v, line)) => v.parse::<Regime>().map_err(|e| CliError::Config(format!("line {line}: {e}")))?,
        };
        let n = kv.take("n")?.unwrap_or(16);
        let d = kv.take("d")?.unwrap_or(8);
        let c_d_hat = kv.take("c_d_hat")?.unwrap_or(1.0);
        let (sigma, sigma_auto) = match kv.take_raw("sigma") {
            None => (None, true),
            Some((v, _)) if v == "auto" => (None, true),
            Some((v, line)) => (Some(v.parse::<f64>().map_err(|_| CliError::Config(format!("line {line}: cannot parse sigma = '{v}'")))?), false),
        };
        let sigma = match sigma {
            Some(s) => s,
            None if regime == Regime::Sgd => 0.0,
            None => sigma_threshold(n, d, c_d_hat).map_err(|e| CliError::Config(format!("sigma = auto: {e}")))?.value,
        };
        let defaults = SgdConfig::default();
        let test_delta = match kv.take_raw("test_delta") {
            None => defaults.test_delta,
            Some((v, _)) if v == "none" => None,
            Some((v, line)) => Some(v.parse::<f64>().map_err(|_| CliError::Config(format!("line {line}: cannot parse test_delta = '{v}'")))?),
        };
        let sgd = SgdConfig {
            dataset_size: kv.take("dataset_size")?.unwrap_or(defaults.dataset_size),
            batch_size: kv.take("batch_size")?.unwrap_or(defaults.batch_size),
            epochs: kv.take("epochs")?.unwrap_or(defaults.epochs),
            lr: kv.take("lr")?.unwrap_or(defaults.lr),
            init_scale: kv.take("init_scale")?.unwrap_or(defaults.init_scale),
            test_delta,
            test_size: kv.take("test_size")?.unwrap_or(defaults.test_size),
        };
        let config = TrainConfig {
            n,
            d,
            sigma,
            eta: kv.take("eta")?.unwrap_or(0.5),
            steps: kv.take("steps")?.unwrap_or(500),
            mc_samples_per_step: kv.take("mc_samples_per_step")?.unwrap_or(10_000),
            regime,
            sgd: (regime == Regime::Sgd).then_some(sgd),
            seed: kv.take("seed")?.unwrap_or(0),
        };
        let seeds = kv.take("seeds")?.unwrap_or(1);
        let log_x = kv.take("log_x")?.unwrap_or(false);
        kv.finish()?;
        if seeds == 0 {
            return Err(CliError::Config("seeds must be >= 1".into()));
        }
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self { config, seeds, c_d_hat, sigma_auto, log_x })
    }
}
