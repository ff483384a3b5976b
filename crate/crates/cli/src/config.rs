//! Layered experiment configuration.
//!
//! Every setting has a `snake_case` key. Layers are applied in order:
//! built-in defaults, `FSGCD_SEED`, preset, config file, command-line flags.
//! Config files hold one `key = value` per line; `#` starts a comment.

use std::fs;
use std::path::{Path, PathBuf};

use fsgcd_core::data::{AugmentConfig, SyntheticConfig};
use fsgcd_core::encoder::EncoderConfig;
use fsgcd_core::losses::Components;
use fsgcd_core::presets::preset;
use fsgcd_core::trainer::TrainConfig;
use fsgcd_core::{Error, Result};
use serde::Serialize;

pub const SEED_ENV: &str = "FSGCD_SEED";
pub const SYNTHETIC_SMOKE: &str = "synthetic-smoke";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EncoderSettings {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub bottleneck_dim: Option<usize>,
    pub adapter_scale: f64,
    pub train_scale: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub features: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub views: Option<PathBuf>,
    pub frozen_block: Option<PathBuf>,
    pub seed: u64,
    pub c_l: Option<f64>,
    pub p_l: Option<f64>,
    pub encoder: EncoderSettings,
    pub train: TrainConfig,
    /// Used when no feature file is given.
    pub synthetic: Option<SyntheticConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            preset: None,
            features: None,
            split: None,
            views: None,
            frozen_block: None,
            seed: 0,
            c_l: None,
            p_l: None,
            encoder: EncoderSettings {
                hidden_dim: 2048,
                embed_dim: 256,
                bottleneck_dim: None,
                adapter_scale: 0.1,
                train_scale: false,
            },
            train: TrainConfig::default(),
            synthetic: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("cannot parse {value:?} for {key} as a boolean"))),
    }
}

fn parse_components(value: &str) -> Result<Components> {
    let mut c = Components {
        asl: false,
        ucl: false,
        ktl: false,
        al: false,
    };
    for name in value.split(',').map(|s| s.trim().to_ascii_lowercase()) {
        match name.as_str() {
            "asl" => c.asl = true,
            "ucl" => c.ucl = true,
            "ktl" => c.ktl = true,
            "al" => c.al = true,
            "all" => c = Components::ALL,
            "" => {}
            other => return Err(Error::InvalidConfig(format!("unknown loss component {other:?}"))),
        }
    }
    Ok(c)
}

/// Key/value pairs contributed by a preset.
pub fn preset_layer(name: &str) -> Result<Vec<(String, String)>> {
    let p = preset(name)?;
    let mut kv = vec![
        ("c_l".to_string(), p.class_ratio.to_string()),
        ("p_l".to_string(), p.label_ratio.to_string()),
    ];
    if p.name == SYNTHETIC_SMOKE {
        let extra = [
            ("synthetic_classes", p.class_count.to_string()),
            ("synthetic_samples_per_class", "40".into()),
            ("synthetic_dim", "16".into()),
            ("synthetic_separation", "12".into()),
            ("stage1_epochs", "5".into()),
            ("stage2_epochs", "10".into()),
            ("hidden_dim", "256".into()),
            ("eval_every", "2".into()),
        ];
        kv.extend(extra.into_iter().map(|(k, v)| (k.to_string(), v)));
    }
    Ok(kv)
}

/// Parses a config file into ordered key/value pairs.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("{}:{}: expected `key = value`", path.display(), n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    fn synthetic_mut(&mut self) -> &mut SyntheticConfig {
        let seed = self.seed;
        self.synthetic.get_or_insert(SyntheticConfig {
            class_count: 10,
            samples_per_class: 50,
            dimension: 16,
            class_separation: 10.0,
            seed,
        })
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().to_ascii_lowercase().replace('-', "_");
        let k = key.as_str();
        let path = || Some(PathBuf::from(value.trim()));
        match k {
            "preset" => self.preset = Some(value.trim().to_string()),
            "features" => self.features = path(),
            "split" => self.split = path(),
            "views" => self.views = path(),
            "frozen_block" => self.frozen_block = path(),
            "seed" => {
                self.seed = parse(k, value)?;
                self.train.seed = self.seed;
                if let Some(s) = &mut self.synthetic {
                    s.seed = self.seed;
                }
            }
            "c_l" | "class_ratio" => self.c_l = Some(parse(k, value)?),
            "p_l" | "label_ratio" => self.p_l = Some(parse(k, value)?),
            "stage1_epochs" => self.train.stage1_epochs = parse(k, value)?,
            "stage2_epochs" => self.train.stage2_epochs = parse(k, value)?,
            "lr" => self.train.lr = parse(k, value)?,
            "momentum" => self.train.momentum = parse(k, value)?,
            "weight_decay" => self.train.weight_decay = parse(k, value)?,
            "batch_size" => self.train.batch_size = parse(k, value)?,
            "eval_every" => self.train.eval_every = parse(k, value)?,
            "eval_restarts" => self.train.eval_restarts = parse(k, value)?,
            "eval_all" => self.train.eval_all_samples = parse_bool(k, value)?,
            "partner_gradients" => self.train.partner_gradients = parse_bool(k, value)?,
            "margin" => self.train.loss.margin = parse(k, value)?,
            "tau_s" => self.train.loss.tau_s = parse(k, value)?,
            "tau_u" => self.train.loss.tau_u = parse(k, value)?,
            "lambda" => self.train.loss.lambda = parse(k, value)?,
            "include_positives" => self.train.loss.include_positives = parse_bool(k, value)?,
            "components" => self.train.loss.components = parse_components(value)?,
            "noise_sigma" | "dropout_prob" | "scale_jitter" => {
                let a = self.train.augment;
                let (mut sigma, mut drop, mut jitter) = (a.noise_sigma(), a.dropout_prob(), a.scale_jitter());
                match k {
                    "noise_sigma" => sigma = parse(k, value)?,
                    "dropout_prob" => drop = parse(k, value)?,
                    _ => {
                        let (lo, hi) = value
                            .split_once(',')
                            .ok_or_else(|| Error::InvalidConfig("scale_jitter expects `lo,hi`".into()))?;
                        jitter = (parse(k, lo)?, parse(k, hi)?);
                    }
                }
                self.train.augment = AugmentConfig::new(sigma, drop, jitter)?;
            }
            "hidden_dim" => self.encoder.hidden_dim = parse(k, value)?,
            "embed_dim" => self.encoder.embed_dim = parse(k, value)?,
            "bottleneck_dim" => self.encoder.bottleneck_dim = Some(parse(k, value)?),
            "adapter_scale" => self.encoder.adapter_scale = parse(k, value)?,
            "train_scale" => self.encoder.train_scale = parse_bool(k, value)?,
            "synthetic_classes" => self.synthetic_mut().class_count = parse(k, value)?,
            "synthetic_samples_per_class" => self.synthetic_mut().samples_per_class = parse(k, value)?,
            "synthetic_dim" => self.synthetic_mut().dimension = parse(k, value)?,
            "synthetic_separation" => self.synthetic_mut().class_separation = parse(k, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn apply(&mut self, layer: &[(String, String)]) -> Result<()> {
        layer.iter().try_for_each(|(k, v)| self.set(k, v))
    }

    /// Builds the effective configuration from all layers.
    pub fn resolve(
        config_file: Option<&Path>,
        preset_flag: Option<&str>,
        flags: &[(String, String)],
    ) -> Result<Self> {
        let mut cfg = Self::default();
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.set("seed", &seed)
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={seed:?} is not an integer")))?;
        }
        let file = config_file.map(read_config_file).transpose()?.unwrap_or_default();
        let preset_name = preset_flag.map(str::to_string).or_else(|| {
            file.iter()
                .rev()
                .find(|(k, _)| k.trim().eq_ignore_ascii_case("preset"))
                .map(|(_, v)| v.clone())
        });
        if let Some(name) = &preset_name {
            cfg.apply(&preset_layer(name)?)?;
            cfg.preset = Some(name.clone());
        }
        cfg.apply(&file)?;
        cfg.apply(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(s) = &self.synthetic {
            s.validate()?;
        }
        Ok(())
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        let mut c = EncoderConfig::new(input_dim);
        let e = &self.encoder;
        c.hidden_dim = e.hidden_dim;
        c.embed_dim = e.embed_dim;
        if let Some(b) = e.bottleneck_dim {
            c.bottleneck_dim = b;
        }
        c.scale = e.adapter_scale;
        c.train_scale = e.train_scale;
        c
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Split ratios, required unless a split manifest is supplied.
    pub fn ratios(&self) -> Result<(f64, f64)> {
        match (self.c_l, self.p_l) {
            (Some(c), Some(p)) => Ok((c, p)),
            _ => Err(Error::InvalidConfig(
                "split ratios missing: give --preset or both --c-l and --p-l".into(),
            )),
        }
    }
}
