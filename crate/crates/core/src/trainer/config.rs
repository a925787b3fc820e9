//! Training configuration and its `key = value` file form.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{Backbone, ModelConfig};
use crate::objective::Ablation;

/// Kernel bandwidth policy for the compression term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelConfig {
    /// Median pairwise distance per batch and side.
    Median,
    Fixed { sigma_k: f64, sigma_m: f64 },
}

impl KernelConfig {
    fn to_value(self) -> String {
        match self {
            Self::Median => "median".into(),
            Self::Fixed { sigma_k, sigma_m } => format!("fixed:{sigma_k},{sigma_m}"),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        if s == "median" {
            return Some(Self::Median);
        }
        let (k, m) = s.strip_prefix("fixed:")?.split_once(',')?;
        Some(Self::Fixed {
            sigma_k: k.trim().parse().ok()?,
            sigma_m: m.trim().parse().ok()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gumbel_tau: f64,
    /// Linear anneal target reached at `max_epochs`.
    pub gumbel_tau_end: Option<f64>,
    pub contrast_tau: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub backbone: Backbone,
    pub dim: usize,
    pub layers: usize,
    pub mask_hidden: usize,
    pub mask_init_bias: f64,
    pub head_hidden: Option<usize>,
    pub ablation: Ablation,
    pub kernel: KernelConfig,
    pub inclusive_nce: bool,
    pub freeze_mask: bool,
    /// Cutoff of the validation Recall used for early stopping.
    pub monitor_n: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            beta: 0.01,
            gumbel_tau: 0.2,
            gumbel_tau_end: None,
            contrast_tau: 0.2,
            lr: 1e-3,
            batch_size: 1024,
            max_epochs: 200,
            patience: 10,
            seed: 2024,
            backbone: Backbone::LightGcn,
            dim: 64,
            layers: 3,
            mask_hidden: 64,
            mask_init_bias: 1.0,
            head_hidden: None,
            ablation: Ablation::default(),
            kernel: KernelConfig::Median,
            inclusive_nce: false,
            freeze_mask: false,
            monitor_n: 20,
        }
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if !(self.contrast_tau > 0.0 && self.contrast_tau <= 1.0) {
            return bad(format!("contrast_tau must lie in (0, 1], got {}", self.contrast_tau));
        }
        for (name, t) in [("gumbel_tau", Some(self.gumbel_tau)), ("gumbel_tau_end", self.gumbel_tau_end)] {
            if let Some(t) = t {
                if !(t > 0.0 && t.is_finite()) {
                    return bad(format!("{name} must be positive, got {t}"));
                }
            }
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be non-negative".into());
        }
        if self.dim == 0 || self.mask_hidden == 0 || self.monitor_n == 0 {
            return bad("dim, mask_hidden and monitor_n must be positive".into());
        }
        if let KernelConfig::Fixed { sigma_k, sigma_m } = self.kernel {
            if !(sigma_k > 0.0 && sigma_m > 0.0) {
                return bad("fixed kernel bandwidths must be positive".into());
            }
        }
        Ok(())
    }

    /// Gumbel temperature used during `epoch` (1-based) and for evaluating
    /// a checkpoint saved at that epoch.
    pub fn gumbel_tau_at(&self, epoch: usize) -> f64 {
        match self.gumbel_tau_end {
            Some(end) if self.max_epochs > 1 => {
                let t = (epoch.saturating_sub(1) as f64 / (self.max_epochs - 1) as f64).min(1.0);
                self.gumbel_tau + t * (end - self.gumbel_tau)
            }
            Some(end) if epoch >= 1 => end,
            _ => self.gumbel_tau,
        }
    }

    pub fn model_config(&self, text_dim: usize) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            dim: self.dim,
            layers: self.layers,
            mask_hidden: self.mask_hidden,
            mask_init_bias: self.mask_init_bias,
            text_dim,
            head_hidden: self.head_hidden,
        }
    }

    /// Canonical `key = value` text, one line per field.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        let lines: [(&str, String); 24] = [
            ("alpha", self.alpha.to_string()),
            ("beta", self.beta.to_string()),
            ("gumbel_tau", self.gumbel_tau.to_string()),
            ("gumbel_tau_end", opt(self.gumbel_tau_end.map(|v| v.to_string()))),
            ("contrast_tau", self.contrast_tau.to_string()),
            ("lr", self.lr.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("backbone", self.backbone.name().to_string()),
            ("dim", self.dim.to_string()),
            ("layers", self.layers.to_string()),
            ("mask_hidden", self.mask_hidden.to_string()),
            ("mask_init_bias", self.mask_init_bias.to_string()),
            ("head_hidden", opt(self.head_hidden.map(|v| v.to_string()))),
            ("no_mi_min", self.ablation.no_mi_min.to_string()),
            ("no_mi_max", self.ablation.no_mi_max.to_string()),
            ("no_pk", self.ablation.no_pk.to_string()),
            ("no_rk", self.ablation.no_rk.to_string()),
            ("kernel", self.kernel.to_value()),
            ("inclusive_nce", self.inclusive_nce.to_string()),
            ("freeze_mask", self.freeze_mask.to_string()),
            ("monitor_n", self.monitor_n.to_string()),
        ];
        for (k, v) in lines {
            writeln!(out, "{k} = {v}").unwrap();
        }
        out
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let invalid = || Error::Config(format!("invalid value {value:?} for {key}"));
        macro_rules! num {
            () => {
                value.parse().map_err(|_| invalid())?
            };
        }
        let flag = || parse_bool(value).ok_or_else(invalid);
        let optional = |v: &str| -> Result<Option<String>> { Ok((v != "none").then(|| v.to_string())) };
        match key.trim() {
            "alpha" => self.alpha = num!(),
            "beta" => self.beta = num!(),
            "gumbel_tau" => self.gumbel_tau = num!(),
            "gumbel_tau_end" => {
                self.gumbel_tau_end = optional(value)?.map(|v| v.parse().map_err(|_| invalid())).transpose()?
            }
            "contrast_tau" => self.contrast_tau = num!(),
            "lr" => self.lr = num!(),
            "batch_size" => self.batch_size = num!(),
            "max_epochs" => self.max_epochs = num!(),
            "patience" => self.patience = num!(),
            "seed" => self.seed = num!(),
            "backbone" => self.backbone = Backbone::parse(value).ok_or_else(invalid)?,
            "dim" => self.dim = num!(),
            "layers" => self.layers = num!(),
            "mask_hidden" => self.mask_hidden = num!(),
            "mask_init_bias" => self.mask_init_bias = num!(),
            "head_hidden" => self.head_hidden = optional(value)?.map(|v| v.parse().map_err(|_| invalid())).transpose()?,
            "no_mi_min" => self.ablation.no_mi_min = flag()?,
            "no_mi_max" => self.ablation.no_mi_max = flag()?,
            "no_pk" => self.ablation.no_pk = flag()?,
            "no_rk" => self.ablation.no_rk = flag()?,
            "kernel" => self.kernel = KernelConfig::parse(value).ok_or_else(invalid)?,
            "inclusive_nce" => self.inclusive_nce = flag()?,
            "freeze_mask" => self.freeze_mask = flag()?,
            "monitor_n" => self.monitor_n = num!(),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies every assignment in a config file over `self`. Blank lines
    /// and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Malformed {
                line: idx + 1,
                message: "expected `key = value`".into(),
            })?;
            self.set(k, v).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", idx + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }
}
