//! `key = value` experiment configuration with a closed key set.

use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;

use damr::channel::ChannelConfig;
use damr::dataset::{GenerateParams, SplitSpec};
use damr::metrics::DEFAULT_BIN_WIDTH_DB;
use damr::modulation::ShapingConfig;
use damr::nn::{Optimizer, TrainConfig};

use crate::CliError;

/// Every accepted key with a one-line description, in documentation order.
pub const KEYS: &[(&str, &str)] = &[
    ("output_dir", "directory for checkpoints, CSVs and the config copy (required)"),
    ("dataset", "dataset file written by gen-data and read by every other command (required)"),
    ("n_rx", "receivers per record, 1..=6 (default 6)"),
    ("n_records", "records to generate (default 16000)"),
    ("seed", "dataset generation seed (default 1)"),
    ("snr_min_db", "lower bound of the base SNR draw (default 0)"),
    ("snr_max_db", "upper bound of the base SNR draw (default 20)"),
    ("snr_jitter_db", "per-receiver SNR jitter half-width (default 3)"),
    ("num_taps", "fading taps (default 4)"),
    ("tap_decay_db", "power decay per tap (default 3)"),
    ("cfo_max", "maximum carrier offset in cycles per sample (default 0.001)"),
    ("sro_max_ppm", "maximum sample-rate offset (default 20)"),
    ("tap_correlation", "tap-gain correlation between receivers (default 0.3)"),
    ("split_seed", "seed of the train/test/val partition (default 7)"),
    ("train_frac", "training fraction (default 0.6)"),
    ("test_frac", "test fraction (default 0.2)"),
    ("val_frac", "validation fraction (default 0.2)"),
    ("batch_size", "samples per optimizer step (default 256)"),
    ("learning_rate", "step size (default 0.001)"),
    ("epochs", "maximum epochs (default 30)"),
    ("train_seed", "seed for initialization, shuffling and dropout (default 11)"),
    ("optimizer", "adam or sgd (default adam)"),
    ("momentum", "momentum for sgd (default 0.9)"),
    ("patience", "early-stopping patience in epochs, 0 disables (default 5)"),
    ("bin_width_db", "F1-vs-SNR bin width (default 4)"),
    ("perf_warmup", "untimed episodes before benchmarking (default 5)"),
    ("perf_samples", "timed episodes, at least 100 (default 100)"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub output_dir: PathBuf,
    pub dataset: PathBuf,
    pub generate: GenerateParams,
    pub split: SplitSpec,
    pub split_seed: u64,
    pub train: TrainConfig,
    pub bin_width_db: f64,
    pub perf_warmup: usize,
    pub perf_samples: usize,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Schema(format!("invalid value '{value}' for key '{key}'")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut output_dir = None;
        let mut dataset = None;
        let mut channel = ChannelConfig::default();
        let mut generate = GenerateParams {
            n_records: 16_000,
            n_rx: 6,
            channel: ChannelConfig::default(),
            shaping: ShapingConfig::default(),
            seed: 1,
        };
        let mut split = SplitSpec::default();
        let mut split_seed = 7;
        let mut train = TrainConfig {
            seed: 11,
            ..TrainConfig::default()
        };
        let mut optimizer = "adam".to_string();
        let mut momentum = 0.9;
        let mut bin_width_db = DEFAULT_BIN_WIDTH_DB;
        let mut perf_warmup = 5;
        let mut perf_samples = 100;
        let mut seen = HashSet::new();

        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CliError::Schema(format!("line {}: expected key = value", lineno + 1)))?;
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(CliError::Schema(format!("unknown key '{key}'")));
            }
            if !seen.insert(key.to_string()) {
                return Err(CliError::Schema(format!("duplicate key '{key}'")));
            }
            match key {
                "output_dir" => output_dir = Some(PathBuf::from(value)),
                "dataset" => dataset = Some(PathBuf::from(value)),
                "n_rx" => generate.n_rx = parse(key, value)?,
                "n_records" => generate.n_records = parse(key, value)?,
                "seed" => generate.seed = parse(key, value)?,
                "snr_min_db" => channel.snr_range_db.0 = parse(key, value)?,
                "snr_max_db" => channel.snr_range_db.1 = parse(key, value)?,
                "snr_jitter_db" => channel.per_receiver_snr_jitter_db = parse(key, value)?,
                "num_taps" => channel.num_taps = parse(key, value)?,
                "tap_decay_db" => channel.tap_decay_db = parse(key, value)?,
                "cfo_max" => channel.cfo_max_normalized = parse(key, value)?,
                "sro_max_ppm" => channel.sro_max_ppm = parse(key, value)?,
                "tap_correlation" => channel.cross_correlation = parse(key, value)?,
                "split_seed" => split_seed = parse(key, value)?,
                "train_frac" => split.train_frac = parse(key, value)?,
                "test_frac" => split.test_frac = parse(key, value)?,
                "val_frac" => split.val_frac = parse(key, value)?,
                "batch_size" => train.batch_size = parse(key, value)?,
                "learning_rate" => train.learning_rate = parse(key, value)?,
                "epochs" => train.epochs = parse(key, value)?,
                "train_seed" => train.seed = parse(key, value)?,
                "optimizer" => optimizer = value.to_ascii_lowercase(),
                "momentum" => momentum = parse(key, value)?,
                "patience" => {
                    let p: usize = parse(key, value)?;
                    train.patience = (p > 0).then_some(p);
                }
                "bin_width_db" => bin_width_db = parse(key, value)?,
                "perf_warmup" => perf_warmup = parse(key, value)?,
                "perf_samples" => perf_samples = parse(key, value)?,
                _ => unreachable!("key list and match arms disagree"),
            }
        }

        train.optimizer = match optimizer.as_str() {
            "adam" => Optimizer::default(),
            "sgd" => Optimizer::Sgd { momentum },
            other => return Err(CliError::Schema(format!("invalid value '{other}' for key 'optimizer'"))),
        };
        channel
            .validate()
            .map_err(|e| CliError::Schema(e.to_string()))?;
        generate.channel = channel;
        split.validate().map_err(|e| CliError::Schema(e.to_string()))?;
        if !(1..=damr::channel::MAX_RECEIVERS).contains(&generate.n_rx) {
            return Err(CliError::Schema(format!("n_rx must be in 1..=6, got {}", generate.n_rx)));
        }
        if train.batch_size == 0 || train.epochs == 0 || !(train.learning_rate > 0.0) {
            return Err(CliError::Schema("batch_size, epochs and learning_rate must be positive".into()));
        }
        if !(bin_width_db > 0.0) {
            return Err(CliError::Schema("bin_width_db must be positive".into()));
        }
        if perf_samples < damr::simnet::MIN_PERF_SAMPLES {
            return Err(CliError::Schema(format!(
                "perf_samples must be at least {}",
                damr::simnet::MIN_PERF_SAMPLES
            )));
        }
        Ok(Self {
            output_dir: output_dir.ok_or_else(|| CliError::Schema("missing key 'output_dir'".into()))?,
            dataset: dataset.ok_or_else(|| CliError::Schema("missing key 'dataset'".into()))?,
            generate,
            split,
            split_seed,
            train,
            bin_width_db,
            perf_warmup,
            perf_samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "output_dir = out\ndataset = data.tmrs\n";

    #[test]
    fn defaults() {
        let c = Config::parse(MINIMAL).unwrap();
        assert_eq!(c.generate.n_records, 16_000);
        assert_eq!(c.generate.n_rx, 6);
        assert_eq!(c.generate.channel, ChannelConfig::default());
        assert_eq!(c.train.batch_size, 256);
        assert_eq!(c.train.epochs, 30);
        assert_eq!(c.train.patience, Some(5));
    }

    #[test]
    fn comments_and_overrides() {
        let c = Config::parse(&format!("{MINIMAL}# note\nepochs = 3 # short\noptimizer = SGD\npatience = 0\n")).unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.optimizer, Optimizer::Sgd { momentum: 0.9 });
        assert_eq!(c.train.patience, None);
    }

    #[test]
    fn schema_violations() {
        for bad in [
            "output_dir = out\n",
            "output_dir = out\ndataset = d\nfoo = 1\n",
            "output_dir = out\ndataset = d\nepochs = many\n",
            "output_dir = out\ndataset = d\nepochs = 2\nepochs = 3\n",
            "output_dir = out\ndataset = d\nnot a pair\n",
            "output_dir = out\ndataset = d\nn_rx = 7\n",
            "output_dir = out\ndataset = d\ntrain_frac = 0.9\n",
            "output_dir = out\ndataset = d\noptimizer = lbfgs\n",
        ] {
            assert!(matches!(Config::parse(bad), Err(CliError::Schema(_))), "{bad:?}");
        }
    }
}
