use std::fmt::Write as _;
use std::path::Path;

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::interaction_graph::{GatActivation, GatConfig};
use crate::io_util::read_to_string;

/// Every hyper-parameter of a run, addressable as flat `key=value` text.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub disable_lar: bool,
    pub disable_lsi: bool,
    pub disable_gil: bool,
    pub teacher_forcing: bool,
    /// Intent–slot edge threshold; `None` means `1/n` per utterance.
    pub delta: Option<f64>,
    pub window: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub gat_activation: GatActivation,
    pub max_count: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub pool_dim: usize,
    pub max_len: usize,
    pub leaky_slope: f64,
    pub ridge: f64,
    /// Drop `j = i` pairs from L_inter.
    pub exclude_self: bool,
    /// Let slot losses reach the label encoder through intent node states.
    pub label_grad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let gat = GatConfig::default();
        Self {
            alpha: 0.6,
            beta: 1.0,
            gamma: 0.3,
            lambda: 0.5,
            lr: 1e-3,
            batch_size: 32,
            epochs: 50,
            seed: 1,
            disable_lar: false,
            disable_lsi: false,
            disable_gil: false,
            teacher_forcing: true,
            delta: None,
            window: 1,
            gat_layers: gat.layers,
            gat_heads: gat.heads,
            gat_activation: gat.activation,
            max_count: 3,
            dim: enc.dim,
            blocks: enc.blocks,
            heads: enc.heads,
            ff_dim: enc.ff_dim,
            pool_dim: enc.pool_dim,
            max_len: enc.max_len,
            leaky_slope: enc.leaky_slope,
            ridge: 1e-6,
            exclude_self: false,
            label_grad: true,
        }
    }
}

const KEYS: [&str; 30] = [
    "alpha",
    "beta",
    "gamma",
    "lambda",
    "lr",
    "batch_size",
    "epochs",
    "seed",
    "disable_lar",
    "disable_lsi",
    "disable_gil",
    "teacher_forcing",
    "delta",
    "window",
    "gat_layers",
    "gat_heads",
    "gat_activation",
    "max_count",
    "dim",
    "blocks",
    "heads",
    "ff_dim",
    "pool_dim",
    "max_len",
    "leaky_slope",
    "ridge",
    "exclude_self",
    "label_grad",
    // accepted aliases
    "batch",
    "learning_rate",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value for {key}: {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean for {key}: {value:?}"))),
    }
}

impl TrainConfig {
    pub fn keys() -> &'static [&'static str] {
        &KEYS
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "alpha" => self.alpha = parse_num(key, value)?,
            "beta" => self.beta = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "lr" | "learning_rate" => self.lr = parse_num(key, value)?,
            "batch_size" | "batch" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "disable_lar" => self.disable_lar = parse_bool(key, value)?,
            "disable_lsi" => self.disable_lsi = parse_bool(key, value)?,
            "disable_gil" => self.disable_gil = parse_bool(key, value)?,
            "teacher_forcing" => self.teacher_forcing = parse_bool(key, value)?,
            "delta" => {
                self.delta = match value {
                    "auto" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "window" => self.window = parse_num(key, value)?,
            "gat_layers" => self.gat_layers = parse_num(key, value)?,
            "gat_heads" => self.gat_heads = parse_num(key, value)?,
            "gat_activation" => {
                self.gat_activation = match value {
                    "sigmoid" => GatActivation::Sigmoid,
                    "leaky_relu" => GatActivation::LeakyRelu(0.01),
                    v => match v.strip_prefix("leaky_relu:") {
                        Some(slope) => GatActivation::LeakyRelu(parse_num(key, slope)?),
                        None => {
                            return Err(Error::Config(format!(
                                "gat_activation must be leaky_relu[:slope] or sigmoid, got {v:?}"
                            )))
                        }
                    },
                }
            }
            "max_count" => self.max_count = parse_num(key, value)?,
            "dim" => self.dim = parse_num(key, value)?,
            "blocks" => self.blocks = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "ff_dim" => self.ff_dim = parse_num(key, value)?,
            "pool_dim" => self.pool_dim = parse_num(key, value)?,
            "max_len" => self.max_len = parse_num(key, value)?,
            "leaky_slope" => self.leaky_slope = parse_num(key, value)?,
            "ridge" => self.ridge = parse_num(key, value)?,
            "exclude_self" => self.exclude_self = parse_bool(key, value)?,
            "label_grad" => self.label_grad = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines on top of `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Parse {
                path: origin.to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text, origin)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }

    /// Round-trips through [`TrainConfig::parse`] exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("alpha", self.alpha.to_string());
        kv("beta", self.beta.to_string());
        kv("gamma", self.gamma.to_string());
        kv("lambda", self.lambda.to_string());
        kv("lr", self.lr.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("disable_lar", self.disable_lar.to_string());
        kv("disable_lsi", self.disable_lsi.to_string());
        kv("disable_gil", self.disable_gil.to_string());
        kv("teacher_forcing", self.teacher_forcing.to_string());
        kv(
            "delta",
            self.delta.map_or_else(|| "auto".to_string(), |d| d.to_string()),
        );
        kv("window", self.window.to_string());
        kv("gat_layers", self.gat_layers.to_string());
        kv("gat_heads", self.gat_heads.to_string());
        kv(
            "gat_activation",
            match self.gat_activation {
                GatActivation::Sigmoid => "sigmoid".to_string(),
                GatActivation::LeakyRelu(s) => format!("leaky_relu:{s}"),
            },
        );
        kv("max_count", self.max_count.to_string());
        kv("dim", self.dim.to_string());
        kv("blocks", self.blocks.to_string());
        kv("heads", self.heads.to_string());
        kv("ff_dim", self.ff_dim.to_string());
        kv("pool_dim", self.pool_dim.to_string());
        kv("max_len", self.max_len.to_string());
        kv("leaky_slope", self.leaky_slope.to_string());
        kv("ridge", self.ridge.to_string());
        kv("exclude_self", self.exclude_self.to_string());
        kv("label_grad", self.label_grad.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        for (name, v) in [
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda", self.lambda),
            ("ridge", self.ridge),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be a finite value >= 0, got {v}"));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be >= 1".into());
        }
        if let Some(d) = self.delta {
            if !(0.0..1.0).contains(&d) {
                return bad(format!("delta must lie in [0, 1), got {d}"));
            }
        }
        if self.max_count == 0 {
            return bad("max_count must be >= 1".into());
        }
        if self.gat_layers == 0 || self.gat_heads == 0 || self.dim % self.gat_heads != 0 {
            return bad("gat_layers >= 1 and gat_heads dividing dim required".into());
        }
        self.encoder().validate()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            blocks: self.blocks,
            heads: self.heads,
            max_len: self.max_len,
            pool_dim: self.pool_dim,
            ff_dim: self.ff_dim,
            leaky_slope: self.leaky_slope,
        }
    }

    pub fn gat(&self) -> GatConfig {
        GatConfig {
            layers: self.gat_layers,
            heads: self.gat_heads,
            activation: self.gat_activation,
            ..GatConfig::default()
        }
    }

    /// The γ actually used by the loss.
    pub fn effective_gamma(&self) -> f64 {
        if self.disable_lar {
            0.0
        } else {
            self.gamma
        }
    }
}

/// The architecture a config actually trains.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub config: TrainConfig,
    pub regularizers: bool,
    pub injection: bool,
    pub graph: bool,
}

impl Architecture {
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "label-aware regularizers: {} (gamma={})",
            on_off(self.regularizers),
            self.config.gamma
        );
        let _ = writeln!(
            out,
            "label-semantic injection: {}",
            if self.injection {
                "on"
            } else {
                "off (raw utterance and token states; label spaces only embed intent nodes)"
            }
        );
        let _ = writeln!(
            out,
            "graph interaction layer: {}",
            if self.graph {
                "on"
            } else {
                "off (token states attend over selected intent embeddings)"
            }
        );
        out
    }
}

fn on_off(b: bool) -> &'static str {
    if b {
        "on"
    } else {
        "off"
    }
}

/// Resolves the ablation flags into the effective architecture.
pub fn ablate(config: &TrainConfig) -> Architecture {
    let mut effective = config.clone();
    effective.gamma = config.effective_gamma();
    Architecture {
        config: effective,
        regularizers: !config.disable_lar,
        injection: !config.disable_lsi,
        graph: !config.disable_gil,
    }
}
