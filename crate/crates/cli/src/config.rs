//! Run configuration: defaults, `key = value` config files, and the CLI
//! flags that mirror them. Precedence is flag > config file > default, and
//! every resolved value is echoed into the run log so an artifact is
//! self-describing.

use std::path::{Path, PathBuf};

use clap::Args;

use streamgain::features::{FeatureKind, Normalization, Transform};
use streamgain::training::{AdamConfig, LossConfig, LossFamily, TrainConfig, VadConfig};
use streamgain::{Error, Result};

/// Flags shared by `train` and `sweep`, one per config key.
#[derive(Args, Debug, Default)]
pub struct RunFlags {
    /// `key = value` config file; explicit flags override its entries
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// manifest of raw `role<TAB>path` clips to mix training data from
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// pre-mixed dataset directory (output of `mix`) to train on
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// GRU units per layer
    #[arg(long)]
    pub hidden: Option<usize>,
    /// total optimizer steps (a resumed run continues toward this target)
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub seq_len_seconds: Option<f64>,
    /// audio seconds per batch; 60 is the standard protocol
    #[arg(long)]
    pub batch_budget_seconds: Option<f64>,
    /// mse | fixed | snr
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta_db: Option<f64>,
    /// mag | lps
    #[arg(long)]
    pub feature: Option<String>,
    /// none | global | fd | fi
    #[arg(long)]
    pub norm: Option<String>,
    /// online-normalization time constant in seconds
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// comma-separated SNR conditions in dB, e.g. `0,10,20`
    #[arg(long)]
    pub snr_set: Option<String>,
    /// mixtures to synthesize for the training pool (manifest mode)
    #[arg(long)]
    pub train_mixes: Option<usize>,
    /// length of each synthesized training mixture in seconds
    #[arg(long)]
    pub mix_seconds: Option<f64>,
    /// save an intermediate checkpoint every N steps (0 = final only)
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
}

/// Every knob a training-style run resolves to.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub manifest: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub hidden: usize,
    pub steps: u64,
    pub seq_len_seconds: f64,
    pub batch_budget_seconds: f64,
    pub loss: String,
    pub alpha: f64,
    pub beta_db: f64,
    pub feature: String,
    pub norm: String,
    pub tau: f64,
    pub lr: f64,
    pub snr_set: Vec<f64>,
    pub train_mixes: usize,
    pub mix_seconds: f64,
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            dataset: None,
            out_dir: PathBuf::from("run"),
            seed: 0,
            hidden: 256,
            steps: 500,
            seq_len_seconds: 10.0,
            batch_budget_seconds: 60.0,
            loss: "fixed".into(),
            alpha: 0.35,
            beta_db: 18.2,
            feature: "lps".into(),
            norm: "fd".into(),
            tau: 3.0,
            lr: 1e-3,
            snr_set: vec![0.0, 10.0, 20.0],
            train_mixes: 32,
            mix_seconds: 8.0,
            checkpoint_every: 0,
        }
    }
}

pub fn parse_snr_set(s: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad SNR value {v:?} in {s:?}")))
        })
        .collect::<Result<_>>()?;
    if vals.is_empty() {
        return Err(Error::InvalidConfig("empty SNR set".into()));
    }
    Ok(vals)
}

impl RunConfig {
    /// Applies a config file (when given), then the explicit flags on top.
    pub fn resolve(flags: &RunFlags) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(path) = &flags.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::InvalidConfig(format!("config {}: {e}", path.display()))
            })?;
            cfg.apply_file(&text, path)?;
        }
        cfg.apply_flags(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_file(&mut self, text: &str, path: &Path) -> Result<()> {
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{} line {}: expected `key = value`, got {line:?}",
                    path.display(),
                    ln + 1
                ))
            })?;
            self.set(key.trim(), value.trim()).map_err(|e| {
                Error::InvalidConfig(format!("{} line {}: {e}", path.display(), ln + 1))
            })?;
        }
        Ok(())
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
        }
        match key {
            "manifest" => self.manifest = Some(PathBuf::from(value)),
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "hidden" => self.hidden = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "seq_len_seconds" => self.seq_len_seconds = num(key, value)?,
            "batch_budget_seconds" => self.batch_budget_seconds = num(key, value)?,
            "loss" => self.loss = value.to_string(),
            "alpha" => self.alpha = num(key, value)?,
            "beta_db" => self.beta_db = num(key, value)?,
            "feature" => self.feature = value.to_string(),
            "norm" => self.norm = value.to_string(),
            "tau" => self.tau = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "snr_set" => self.snr_set = parse_snr_set(value)?,
            "train_mixes" => self.train_mixes = num(key, value)?,
            "mix_seconds" => self.mix_seconds = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key {other:?}")))
            }
        }
        Ok(())
    }

    fn apply_flags(&mut self, flags: &RunFlags) -> Result<()> {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = &flags.$field {
                    self.$field = v.clone();
                }
            };
        }
        if let Some(v) = &flags.manifest {
            self.manifest = Some(v.clone());
        }
        if let Some(v) = &flags.dataset {
            self.dataset = Some(v.clone());
        }
        take!(out_dir);
        take!(seed);
        take!(hidden);
        take!(steps);
        take!(seq_len_seconds);
        take!(batch_budget_seconds);
        take!(loss);
        take!(alpha);
        take!(beta_db);
        take!(feature);
        take!(norm);
        take!(tau);
        take!(lr);
        take!(train_mixes);
        take!(mix_seconds);
        take!(checkpoint_every);
        if let Some(s) = &flags.snr_set {
            self.snr_set = parse_snr_set(s)?;
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        // fail on unknown names here, before any data is touched
        LossFamily::parse(&self.loss)?;
        Transform::parse(&self.feature)?;
        Normalization::parse(&self.norm)?;
        if self.manifest.is_none() && self.dataset.is_none() {
            return Err(Error::InvalidConfig(
                "either a manifest or a dataset directory is required".into(),
            ));
        }
        Ok(())
    }

    pub fn feature_kind(&self) -> Result<FeatureKind> {
        FeatureKind::new(
            Transform::parse(&self.feature)?,
            Normalization::parse(&self.norm)?,
            self.tau,
        )
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            seed: self.seed,
            hidden: self.hidden,
            steps: self.steps,
            seq_len_seconds: self.seq_len_seconds,
            batch_budget_seconds: self.batch_budget_seconds,
            loss: LossConfig::new(
                LossFamily::parse(&self.loss)?,
                self.alpha,
                self.beta_db,
                VadConfig::default(),
            )?,
            feature: self.feature_kind()?,
            adam: AdamConfig { lr: self.lr, ..AdamConfig::default() },
        })
    }

    /// The keys the training module does not echo itself (it covers the
    /// model/loss/optimizer knobs); together the two sets log every value.
    pub fn echo_lines(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| {
            p.as_ref().map_or("-".to_string(), |p| p.display().to_string())
        };
        let snrs =
            self.snr_set.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("manifest".into(), path(&self.manifest)),
            ("dataset".into(), path(&self.dataset)),
            ("out_dir".into(), self.out_dir.display().to_string()),
            ("snr_set".into(), snrs),
            ("train_mixes".into(), self.train_mixes.to_string()),
            ("mix_seconds".into(), self.mix_seconds.to_string()),
            ("checkpoint_every".into(), self.checkpoint_every.to_string()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest_flags() -> RunFlags {
        RunFlags { manifest: Some(PathBuf::from("m.tsv")), ..RunFlags::default() }
    }

    #[test]
    fn defaults_reproduce_the_standard_operating_point() {
        let cfg = RunConfig::resolve(&manifest_flags()).unwrap();
        assert_eq!(cfg.feature, "lps");
        assert_eq!(cfg.norm, "fd");
        assert_eq!(cfg.tau, 3.0);
        assert_eq!(cfg.seq_len_seconds, 10.0);
        assert_eq!(cfg.alpha, 0.35);
        assert_eq!(cfg.beta_db, 18.2);
        assert_eq!(cfg.hidden, 256);
    }

    #[test]
    fn file_then_flags_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "alpha = 0.5\nhidden = 64\n# comment\n\nseed = 9\n").unwrap();
        let flags = RunFlags {
            config: Some(path),
            alpha: Some(0.9),
            ..manifest_flags()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!(cfg.alpha, 0.9); // flag wins
        assert_eq!(cfg.hidden, 64); // file wins over default
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "momentum = 0.9\n").unwrap();
        let flags = RunFlags { config: Some(path), ..manifest_flags() };
        let err = RunConfig::resolve(&flags).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)), "{err}");
        assert!(err.to_string().contains("momentum"));
    }

    #[test]
    fn bad_enum_values_are_rejected_up_front() {
        let flags = RunFlags { loss: Some("hinge".into()), ..manifest_flags() };
        assert!(RunConfig::resolve(&flags).is_err());
        let flags = RunFlags { norm: Some("batch".into()), ..manifest_flags() };
        assert!(RunConfig::resolve(&flags).is_err());
    }

    #[test]
    fn a_data_source_is_required() {
        assert!(RunConfig::resolve(&RunFlags::default()).is_err());
    }

    #[test]
    fn snr_sets_parse_as_comma_lists() {
        assert_eq!(parse_snr_set("0, 10,2.5").unwrap(), vec![0.0, 10.0, 2.5]);
        assert!(parse_snr_set("0;10").is_err());
    }
}
