//! Flat `key = value` settings: a config file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use fairrank::fairness::{DisparityConfig, MeritFunction};
use fairrank::metrics::UtilityMetric;
use fairrank::policy::ModelSpec;
use fairrank::trainer::{Optimizer, TrainConfig};

/// Keys accepted in config files, in the order they are echoed.
pub const TRAIN_KEYS: &[&str] = &[
    "train",
    "train-groups",
    "validation",
    "validation-groups",
    "test",
    "test-groups",
    "lambda",
    "gamma",
    "samples",
    "lr",
    "epochs",
    "metric",
    "disparity",
    "merit",
    "seed",
    "optimizer",
    "baseline",
    "patience",
    "eval-samples",
    "model",
    "hidden",
];

pub const SWEEP_KEYS: &[&str] = &["lambdas", "seeds"];

#[derive(Debug, Default, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Reads a config file. Blank lines and `#` comments are skipped.
    pub fn from_file(path: &Path, known: &[&str]) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), i + 1))?;
            let key = key.trim().to_string();
            if !known.contains(&key.as_str()) {
                bail!("{}:{}: unknown key `{key}`", path.display(), i + 1);
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn set(&mut self, key: &str, value: Option<String>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v);
        }
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!("invalid value for {key} ({v:?}): {e}"))
            })
            .transpose()
    }

    pub fn get_or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }

    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        let Some(raw) = self.values.get(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<T>().map_err(|e| anyhow!("invalid entry {s:?} in {key}: {e}")))
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }
}

/// Training flags shared by `train` and `sweep`.
#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// Config file of `key = value` lines; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training set in LETOR format
    #[arg(long)]
    pub train: Option<String>,
    /// Group sidecar for the training set (default: <train>.groups if present)
    #[arg(long)]
    pub train_groups: Option<String>,
    #[arg(long)]
    pub validation: Option<String>,
    #[arg(long)]
    pub validation_groups: Option<String>,
    #[arg(long)]
    pub test: Option<String>,
    #[arg(long)]
    pub test_groups: Option<String>,
    /// Utility/fairness trade-off
    #[arg(long)]
    pub lambda: Option<String>,
    /// Entropy regularisation coefficient
    #[arg(long)]
    pub gamma: Option<String>,
    /// Rankings sampled per query for the gradient estimate
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long)]
    pub lr: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    /// dcg, ndcg, ndcg@K, err, err:GRADE or avgrank
    #[arg(long)]
    pub metric: Option<String>,
    /// none, individual or group
    #[arg(long)]
    pub disparity: Option<String>,
    /// identity, square or sqrt
    #[arg(long)]
    pub merit: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// adam or sgd
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Subtract the sampled-reward baseline (true or false)
    #[arg(long)]
    pub baseline: Option<String>,
    /// Epochs without validation improvement before stopping (0 disables)
    #[arg(long)]
    pub patience: Option<String>,
    /// Rankings sampled per query when evaluating disparity for n > 7
    #[arg(long)]
    pub eval_samples: Option<String>,
    /// linear, linear-bias or mlp
    #[arg(long)]
    pub model: Option<String>,
    /// Hidden units of the mlp model
    #[arg(long)]
    pub hidden: Option<String>,
}

impl TrainFlags {
    pub fn settings(&self, known: &[&str]) -> Result<Settings> {
        let mut s = match &self.config {
            Some(p) => Settings::from_file(p, known)?,
            None => Settings::default(),
        };
        let flags = [
            ("train", &self.train),
            ("train-groups", &self.train_groups),
            ("validation", &self.validation),
            ("validation-groups", &self.validation_groups),
            ("test", &self.test),
            ("test-groups", &self.test_groups),
            ("lambda", &self.lambda),
            ("gamma", &self.gamma),
            ("samples", &self.samples),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("metric", &self.metric),
            ("disparity", &self.disparity),
            ("merit", &self.merit),
            ("seed", &self.seed),
            ("optimizer", &self.optimizer),
            ("baseline", &self.baseline),
            ("patience", &self.patience),
            ("eval-samples", &self.eval_samples),
            ("model", &self.model),
            ("hidden", &self.hidden),
        ];
        for (k, v) in flags {
            s.set(k, v.clone());
        }
        Ok(s)
    }
}

pub fn parse_disparity(kind: Option<String>, merit: MeritFunction) -> Result<Option<DisparityConfig>> {
    match kind.as_deref().map(str::trim) {
        None | Some("none") => Ok(None),
        Some(k) => Ok(Some(DisparityConfig {
            kind: k.parse()?,
            merit,
        })),
    }
}

pub fn train_config(s: &Settings) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let merit = s.get_or("merit", MeritFunction::Identity)?;
    let optimizer = match s.get::<String>("optimizer")?.as_deref() {
        None | Some("adam") => Optimizer::adam(),
        Some("sgd") => Optimizer::Sgd,
        Some(o) => bail!("unknown optimizer {o:?} (expected adam or sgd)"),
    };
    let hidden = s.get_or("hidden", 32usize)?;
    let model = match s.get::<String>("model")?.as_deref() {
        None | Some("linear") => ModelSpec::Linear { bias: false },
        Some("linear-bias") => ModelSpec::Linear { bias: true },
        Some("mlp") => ModelSpec::Mlp { hidden },
        Some(m) => bail!("unknown model {m:?} (expected linear, linear-bias or mlp)"),
    };
    let patience = match s.get::<usize>("patience")? {
        None => d.patience,
        Some(0) => None,
        Some(p) => Some(p),
    };
    let config = TrainConfig {
        lambda: s.get_or("lambda", d.lambda)?,
        gamma: s.get_or("gamma", d.gamma)?,
        samples: s.get_or("samples", d.samples)?,
        learning_rate: s.get_or("lr", d.learning_rate)?,
        optimizer,
        epochs: s.get_or("epochs", d.epochs)?,
        metric: s.get_or::<UtilityMetric>("metric", d.metric)?,
        disparity: parse_disparity(s.get("disparity")?, merit)?,
        seed: s.get_or("seed", d.seed)?,
        use_baseline: s.get_or("baseline", d.use_baseline)?,
        patience,
        eval_samples: s.get_or("eval-samples", d.eval_samples)?,
        model,
    };
    config.validate()?;
    Ok(config)
}

/// Every training key with its resolved value, ready to be read back with
/// `--config`.
pub fn echo(config: &TrainConfig, s: &Settings) -> String {
    let mut out = String::new();
    let mut line = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
    for key in [
        "train",
        "train-groups",
        "validation",
        "validation-groups",
        "test",
        "test-groups",
    ] {
        if let Some(p) = s.path(key) {
            // absolute, so the echo re-runs from any directory
            let p = std::path::absolute(&p).unwrap_or(p);
            line(key, p.display().to_string());
        }
    }
    line("lambda", config.lambda.to_string());
    line("gamma", config.gamma.to_string());
    line("samples", config.samples.to_string());
    line("lr", config.learning_rate.to_string());
    line("epochs", config.epochs.to_string());
    line("metric", config.metric.to_string());
    match config.disparity {
        Some(d) => {
            line("disparity", d.kind.to_string());
            line("merit", d.merit.to_string());
        }
        None => line("disparity", "none".into()),
    }
    line("seed", config.seed.to_string());
    line(
        "optimizer",
        match config.optimizer {
            Optimizer::Sgd => "sgd".into(),
            Optimizer::Adam { .. } => "adam".into(),
        },
    );
    line("baseline", config.use_baseline.to_string());
    line("patience", config.patience.unwrap_or(0).to_string());
    line("eval-samples", config.eval_samples.to_string());
    match config.model {
        ModelSpec::Linear { bias: false } => line("model", "linear".into()),
        ModelSpec::Linear { bias: true } => line("model", "linear-bias".into()),
        ModelSpec::Mlp { hidden } => {
            line("model", "mlp".into());
            line("hidden", hidden.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_and_echo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(
            &path,
            "# comment\nlambda = 3\nmetric = ndcg@5\ndisparity = group\n\nmodel = mlp\nhidden = 8\n",
        )
        .unwrap();
        let flags = TrainFlags {
            config: Some(path),
            lambda: Some("7.5".into()),
            ..TrainFlags::default()
        };
        let s = flags.settings(TRAIN_KEYS).unwrap();
        let c = train_config(&s).unwrap();
        assert_eq!(c.lambda, 7.5);
        assert_eq!(c.metric, UtilityMetric::Ndcg { k: Some(5) });
        assert_eq!(c.model, ModelSpec::Mlp { hidden: 8 });

        let echoed = dir.path().join("echo.txt");
        fs::write(&echoed, echo(&c, &s)).unwrap();
        let again = train_config(&Settings::from_file(&echoed, TRAIN_KEYS).unwrap()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.txt");
        fs::write(&path, "lamda = 3\n").unwrap();
        assert!(Settings::from_file(&path, TRAIN_KEYS).is_err());
        let mut s = Settings::default();
        s.set("samples", Some("0".into()));
        assert!(train_config(&s).is_err());
        s.set("samples", Some("ten".into()));
        assert!(train_config(&s).is_err());
    }
}
