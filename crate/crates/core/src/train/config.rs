use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::features::ExtractorKind;
use crate::nets::{DiscriminatorConfig, GeneratorConfig, LossWeights};
use crate::smooth::SmoothnessConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Every knob of a training run. Text form is `key = value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub lambda_gan: f64,
    pub lambda_cyc: f64,
    pub lambda_smooth: f64,
    pub lr: f64,
    pub epochs_total: usize,
    /// Defaults to half of `epochs_total`.
    pub epochs_constant: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub sigma_sq: f64,
    pub n_pairs: usize,
    pub stop_gradient_weights: bool,
    pub extractor: ExtractorKind,
    pub patch_size: usize,
    pub hist_bins: usize,
    pub proxy_channels: usize,
    pub proxy_weights: Option<PathBuf>,
    /// 0 disables the replay buffer.
    pub replay_buffer_size: usize,
    pub channels: usize,
    pub gen_base_channels: usize,
    pub gen_downsample: usize,
    pub gen_res_blocks: usize,
    pub disc_base_channels: usize,
    pub disc_layers: usize,
    pub precision: Precision,
    /// Epoch interval between checkpoints (0: only the final one).
    pub checkpoint_every: usize,
    /// Epoch interval between sample grids (0: none).
    pub sample_every: usize,
    /// Cap on steps per epoch (0: one pass over the larger pool).
    pub steps_per_epoch: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambda_gan: 1.0,
            lambda_cyc: 10.0,
            lambda_smooth: 1.0,
            lr: 2e-4,
            epochs_total: 40,
            epochs_constant: None,
            batch_size: 1,
            seed: 0,
            sigma_sq: 0.1,
            n_pairs: 256,
            stop_gradient_weights: true,
            extractor: ExtractorKind::Histogram,
            patch_size: 8,
            hist_bins: 16,
            proxy_channels: 64,
            proxy_weights: None,
            replay_buffer_size: 50,
            channels: 1,
            gen_base_channels: 32,
            gen_downsample: 2,
            gen_res_blocks: 3,
            disc_base_channels: 32,
            disc_layers: 3,
            precision: Precision::F64,
            checkpoint_every: 10,
            sample_every: 5,
            steps_per_epoch: 0,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value.parse().map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainingConfig {
    pub const KEYS: [&'static str; 28] = [
        "lambda_gan",
        "lambda_cyc",
        "lambda_smooth",
        "lr",
        "epochs_total",
        "epochs_constant",
        "batch_size",
        "seed",
        "sigma_sq",
        "n_pairs",
        "stop_gradient_weights",
        "extractor",
        "patch_size",
        "hist_bins",
        "proxy_channels",
        "proxy_weights",
        "replay_buffer_size",
        "channels",
        "gen_base_channels",
        "gen_downsample",
        "gen_res_blocks",
        "disc_base_channels",
        "disc_layers",
        "precision",
        "checkpoint_every",
        "sample_every",
        "steps_per_epoch",
        "identity_loss",
    ];

    /// Sets one field from text. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lambda_gan" => self.lambda_gan = parse(key, value)?,
            "lambda_cyc" => self.lambda_cyc = parse(key, value)?,
            "lambda_smooth" => self.lambda_smooth = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "epochs_total" => self.epochs_total = parse(key, value)?,
            "epochs_constant" => self.epochs_constant = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "sigma_sq" => self.sigma_sq = parse(key, value)?,
            "n_pairs" => self.n_pairs = parse(key, value)?,
            "stop_gradient_weights" => self.stop_gradient_weights = parse_bool(key, value)?,
            "extractor" => self.extractor = value.parse()?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "hist_bins" => self.hist_bins = parse(key, value)?,
            "proxy_channels" => self.proxy_channels = parse(key, value)?,
            "proxy_weights" => self.proxy_weights = Some(PathBuf::from(value)).filter(|p| !p.as_os_str().is_empty()),
            "replay_buffer_size" => self.replay_buffer_size = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "gen_base_channels" => self.gen_base_channels = parse(key, value)?,
            "gen_downsample" => self.gen_downsample = parse(key, value)?,
            "gen_res_blocks" => self.gen_res_blocks = parse(key, value)?,
            "disc_base_channels" => self.disc_base_channels = parse(key, value)?,
            "disc_layers" => self.disc_layers = parse(key, value)?,
            "precision" => {
                self.precision = match value {
                    "f32" | "32" => Precision::F32,
                    "f64" | "64" => Precision::F64,
                    _ => return Err(Error::Config(format!("precision must be f32 or f64, got {value:?}"))),
                }
            }
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "sample_every" => self.sample_every = parse(key, value)?,
            "steps_per_epoch" => self.steps_per_epoch = parse(key, value)?,
            "identity_loss" => {
                if parse_bool(key, value)? {
                    return Err(Error::Config("identity loss is not supported".into()));
                }
            }
            _ => return Err(Error::UnknownConfigKeys(vec![key.to_string()])),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. All unknown keys
    /// are reported together.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = TrainingConfig::default();
        let mut unknown = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let key = key.trim();
            if !Self::KEYS.contains(&key) {
                unknown.push(key.to_string());
                continue;
            }
            cfg.set(key, value)?;
        }
        if !unknown.is_empty() {
            return Err(Error::UnknownConfigKeys(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_text(&text)
    }

    /// Canonical text form; `parse_text(to_text())` round-trips.
    pub fn to_text(&self) -> String {
        let mut map = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("lambda_gan", format!("{:?}", self.lambda_gan));
        put("lambda_cyc", format!("{:?}", self.lambda_cyc));
        put("lambda_smooth", format!("{:?}", self.lambda_smooth));
        put("lr", format!("{:?}", self.lr));
        put("epochs_total", self.epochs_total.to_string());
        put("epochs_constant", self.constant_epochs().to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("sigma_sq", format!("{:?}", self.sigma_sq));
        put("n_pairs", self.n_pairs.to_string());
        put("stop_gradient_weights", self.stop_gradient_weights.to_string());
        put("extractor", self.extractor.to_string());
        put("patch_size", self.patch_size.to_string());
        put("hist_bins", self.hist_bins.to_string());
        put("proxy_channels", self.proxy_channels.to_string());
        put("proxy_weights", self.proxy_weights.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("replay_buffer_size", self.replay_buffer_size.to_string());
        put("channels", self.channels.to_string());
        put("gen_base_channels", self.gen_base_channels.to_string());
        put("gen_downsample", self.gen_downsample.to_string());
        put("gen_res_blocks", self.gen_res_blocks.to_string());
        put("disc_base_channels", self.disc_base_channels.to_string());
        put("disc_layers", self.disc_layers.to_string());
        put(
            "precision",
            match self.precision {
                Precision::F32 => "f32",
                Precision::F64 => "f64",
            }
            .into(),
        );
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("sample_every", self.sample_every.to_string());
        put("steps_per_epoch", self.steps_per_epoch.to_string());
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn constant_epochs(&self) -> usize {
        self.epochs_constant.unwrap_or(self.epochs_total / 2)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss_weights().validate()?;
        self.smoothness().validate()?;
        self.generator().validate()?;
        self.discriminator().validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs_total == 0 {
            return Err(Error::Config("epochs_total must be positive".into()));
        }
        if self.constant_epochs() > self.epochs_total {
            return Err(Error::Config(format!(
                "epochs_constant {} exceeds epochs_total {}",
                self.constant_epochs(),
                self.epochs_total
            )));
        }
        if self.batch_size == 0 || self.patch_size == 0 || self.hist_bins == 0 || self.proxy_channels == 0 {
            return Err(Error::Config("batch_size, patch_size, hist_bins and proxy_channels must be positive".into()));
        }
        if !(self.channels == 1 || self.channels == 3) {
            return Err(Error::Config(format!("channels must be 1 or 3, got {}", self.channels)));
        }
        Ok(())
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { gan: self.lambda_gan, cyc: self.lambda_cyc, smooth: self.lambda_smooth }
    }

    pub fn smoothness(&self) -> SmoothnessConfig {
        SmoothnessConfig { sigma_sq: self.sigma_sq, n_pairs: self.n_pairs, stop_gradient: self.stop_gradient_weights }
    }

    pub fn generator(&self) -> GeneratorConfig {
        GeneratorConfig {
            in_channels: self.channels,
            base_channels: self.gen_base_channels,
            n_downsample: self.gen_downsample,
            n_res_blocks: self.gen_res_blocks,
            out_channels: self.channels,
        }
    }

    pub fn discriminator(&self) -> DiscriminatorConfig {
        DiscriminatorConfig {
            in_channels: self.channels,
            base_channels: self.disc_base_channels,
            n_layers: self.disc_layers,
        }
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainingConfig { lambda_smooth: 0.0, seed: 7, ..Default::default() };
        cfg.set("extractor", "cnn_proxy").unwrap();
        cfg.set("precision", "f32").unwrap();
        let back = TrainingConfig::parse_text(&cfg.to_text()).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
        assert_eq!(back.epochs_constant, Some(20));
    }

    #[test]
    fn unknown_keys_are_listed() {
        let err = TrainingConfig::parse_text("lr = 0.001\nfoo = 1\n# note\nbar=2\n").unwrap_err();
        match err {
            Error::UnknownConfigKeys(k) => assert_eq!(k, vec!["foo".to_string(), "bar".to_string()]),
            other => panic!("{other:?}"),
        }
        assert!(TrainingConfig::parse_text("lambda_cyc = -1").is_err());
        assert!(TrainingConfig::parse_text("epochs_total = 4\nepochs_constant = 5").is_err());
    }
}
