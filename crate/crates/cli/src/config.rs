//! Run configuration: built-in defaults, overridden by a `key=value` file,
//! overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;

/// Tunables shared by the training commands. Every field is optional so
/// that unset flags fall through to the config file and then the defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct TrainFlags {
    /// key=value file of defaults; flags take precedence
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Embedding width of a newly created encoder
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    /// Longest sequence, in tokens including BOS and EOS
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Learning-rate multiplier for a transferred decoder
    #[arg(long)]
    pub fine_tune_scale: Option<f32>,
    /// Learning-rate multiplier for a pretrained encoder
    #[arg(long)]
    pub encoder_lr_scale: Option<f32>,
    /// Masking probability for encoder pretraining
    #[arg(long)]
    pub mask_prob: Option<f64>,
    /// Fraction of the corpus held out for validation
    #[arg(long)]
    pub val_fraction: Option<f64>,
    /// Write 0 in the seconds column so reruns give identical files
    #[arg(long)]
    pub no_timing: bool,
}

/// The fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub k: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub fine_tune_scale: f32,
    pub encoder_lr_scale: f32,
    pub mask_prob: f64,
    pub val_fraction: f64,
    pub record_timing: bool,
}

/// Per-command defaults for the values that differ between commands.
#[derive(Clone, Copy, Debug)]
pub struct Defaults {
    pub epochs: usize,
    pub lr: f64,
}

const KEYS: [&str; 15] = [
    "seed",
    "epochs",
    "batch_size",
    "lr",
    "k",
    "layers",
    "heads",
    "ffn_hidden",
    "max_len",
    "dropout",
    "fine_tune_scale",
    "encoder_lr_scale",
    "mask_prob",
    "val_fraction",
    "record_timing",
];

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// ignored; dashes in keys are read as underscores.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key=value, got {line:?}", i + 1))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            bail!("line {}: unknown key {key:?}", i + 1);
        }
        out.push((key, v.trim().to_owned()));
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| anyhow!("invalid value {value:?} for {key}"))
}

impl RunConfig {
    fn defaults(d: Defaults) -> (Option<u64>, Self) {
        let cfg = Self {
            seed: 0,
            epochs: d.epochs,
            batch_size: 32,
            lr: d.lr,
            k: 64,
            layers: 2,
            heads: 4,
            ffn_hidden: 128,
            max_len: 64,
            dropout: 0.1,
            fine_tune_scale: 0.1,
            encoder_lr_scale: 1.0,
            mask_prob: 0.15,
            val_fraction: 0.1,
            record_timing: true,
        };
        (None, cfg)
    }

    fn set(&mut self, seed: &mut Option<u64>, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => *seed = Some(parse(key, value)?),
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "ffn_hidden" => self.ffn_hidden = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "fine_tune_scale" => self.fine_tune_scale = parse(key, value)?,
            "encoder_lr_scale" => self.encoder_lr_scale = parse(key, value)?,
            "mask_prob" => self.mask_prob = parse(key, value)?,
            "val_fraction" => self.val_fraction = parse(key, value)?,
            "record_timing" => self.record_timing = parse(key, value)?,
            _ => bail!("unknown key {key:?}"),
        }
        Ok(())
    }

    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(flags: &TrainFlags, defaults: Defaults) -> Result<Self> {
        let (mut seed, mut cfg) = Self::defaults(defaults);
        if let Some(path) = &flags.config {
            let text = read_config(path)?;
            for (k, v) in parse_config_text(&text).with_context(|| format!("config file {}", path.display()))? {
                cfg.set(&mut seed, &k, &v).with_context(|| format!("config file {}", path.display()))?;
            }
        }
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = flags.$f { cfg.$f = v; })* };
        }
        take!(epochs, batch_size, lr, k, layers, heads, ffn_hidden, max_len, dropout, fine_tune_scale, encoder_lr_scale, mask_prob, val_fraction);
        if flags.no_timing {
            cfg.record_timing = false;
        }
        cfg.seed = flags
            .seed
            .or(seed)
            .ok_or_else(|| anyhow!("a seed is required: pass --seed or set seed in the config file"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("k", self.k),
            ("layers", self.layers),
            ("heads", self.heads),
            ("ffn_hidden", self.ffn_hidden),
        ];
        for (name, v) in dims {
            if v == 0 {
                bail!("{name} must be positive");
            }
        }
        if self.max_len < 3 {
            bail!("max_len must be at least 3, got {}", self.max_len);
        }
        for (name, v) in [("fine_tune_scale", self.fine_tune_scale), ("encoder_lr_scale", self.encoder_lr_scale)] {
            if !(v > 0.0 && v <= 1.0) {
                bail!("{name} must be in (0, 1], got {v}");
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            bail!("lr must be positive, got {}", self.lr);
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bail!("dropout must be in [0, 1), got {}", self.dropout);
        }
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            bail!("mask_prob must be in (0, 1], got {}", self.mask_prob);
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            bail!("val_fraction must be in [0, 1), got {}", self.val_fraction);
        }
        Ok(())
    }

    /// `key=value` lines in a fixed order, for history CSV headers.
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("seed={}", self.seed),
            format!("epochs={}", self.epochs),
            format!("batch_size={}", self.batch_size),
            format!("lr={}", self.lr),
            format!("k={}", self.k),
            format!("layers={}", self.layers),
            format!("heads={}", self.heads),
            format!("ffn_hidden={}", self.ffn_hidden),
            format!("max_len={}", self.max_len),
            format!("dropout={}", self.dropout),
            format!("fine_tune_scale={}", self.fine_tune_scale),
            format!("encoder_lr_scale={}", self.encoder_lr_scale),
            format!("mask_prob={}", self.mask_prob),
            format!("val_fraction={}", self.val_fraction),
            format!("record_timing={}", self.record_timing),
        ]
    }
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))
}
