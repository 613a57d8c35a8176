//! Training configuration and its flat `key = value` file form.

use std::fmt;
use std::str::FromStr;

use crate::model::{ModelConfig, Precision};

use super::optim::{AdamWConfig, ScheduleKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    SftOnly,
    Bash,
    Rac,
    ScsOnline,
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainMode::SftOnly => "sft_only",
            TrainMode::Bash => "bash",
            TrainMode::Rac => "rac",
            TrainMode::ScsOnline => "scs_online",
        })
    }
}

impl FromStr for TrainMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sft_only" | "sft" => Ok(TrainMode::SftOnly),
            "bash" => Ok(TrainMode::Bash),
            "rac" => Ok(TrainMode::Rac),
            "scs_online" | "scs" => Ok(TrainMode::ScsOnline),
            _ => Err(format!("unknown mode {s:?} (expected sft_only, bash, rac or scs_online)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    /// K1: supervised warmup steps.
    pub warmup_steps: usize,
    /// K2: combined steps per outer iteration.
    pub inner_steps: usize,
    /// H: outer iterations (offline rebuilds).
    pub iterations: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub schedule: ScheduleKind,
    pub lr_warmup_fraction: f64,
    pub seed: u64,
    pub include_sft_loss: bool,
    pub reset_optimizer: bool,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Temperature for the model draws in mixing and for RAC responses.
    pub gen_temperature: f64,
    /// Response cap for RAC; 0 derives it from the dataset.
    pub max_new_tokens: usize,
    pub workers: usize,
    /// Follows warmup with a short phase that also shows reference-template
    /// views, so the model can read a reference before correction labels
    /// are built.
    pub template_warmup: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::SftOnly,
            lr: 1e-3,
            warmup_steps: 300,
            inner_steps: 300,
            iterations: 2,
            batch_size: 32,
            beta: 0.2,
            schedule: ScheduleKind::Cosine,
            lr_warmup_fraction: 0.1,
            seed: 0,
            include_sft_loss: true,
            reset_optimizer: true,
            weight_decay: 0.01,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gen_temperature: 1.0,
            max_new_tokens: 0,
            workers: 1,
            template_warmup: true,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    /// Every violated constraint, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            out.push(format!("lr: must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 {
            out.push("batch_size: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.beta) {
            out.push(format!("beta: must lie in [0, 1], got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.lr_warmup_fraction) {
            out.push(format!("lr_warmup_fraction: must lie in [0, 1], got {}", self.lr_warmup_fraction));
        }
        if !(self.gen_temperature > 0.0 && self.gen_temperature.is_finite()) {
            out.push(format!("gen_temperature: must be positive, got {}", self.gen_temperature));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            out.push("adam_beta1/adam_beta2: must lie in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            out.push("adam_eps: must be positive".into());
        }
        if !(self.weight_decay >= 0.0) {
            out.push("weight_decay: must be nonnegative".into());
        }
        if self.mode != TrainMode::SftOnly {
            if self.warmup_steps == 0 {
                out.push(format!("warmup_steps: must be at least 1 in {} mode", self.mode));
            }
            if self.inner_steps == 0 {
                out.push(format!("inner_steps: must be at least 1 in {} mode", self.mode));
            }
            if self.iterations == 0 {
                out.push(format!("iterations: must be at least 1 in {} mode", self.mode));
            }
        }
        if self.workers == 0 {
            out.push("workers: must be at least 1".into());
        }
        out
    }
}

/// Model and training settings together, as stored in a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid configuration: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "mode", "lr", "warmup_steps", "inner_steps", "iterations", "batch_size", "beta", "schedule",
    "lr_warmup_fraction", "seed", "include_sft_loss", "reset_optimizer", "weight_decay", "adam_beta1",
    "adam_beta2", "adam_eps", "gen_temperature", "max_new_tokens", "workers", "n_layers", "n_heads",
    "d_model", "d_ff", "context_len", "vocab_size", "precision", "template_warmup",
];

impl RunConfig {
    /// Sets one field by name. Used for file lines and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        let m = &mut self.model;
        match key {
            "mode" => t.mode = value.parse()?,
            "lr" => t.lr = parse(key, value)?,
            "warmup_steps" => t.warmup_steps = parse(key, value)?,
            "inner_steps" => t.inner_steps = parse(key, value)?,
            "iterations" => t.iterations = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "beta" => t.beta = parse(key, value)?,
            "schedule" => {
                t.schedule = match value {
                    "constant" => ScheduleKind::Constant,
                    "cosine" => ScheduleKind::Cosine,
                    _ => return Err(format!("schedule: expected constant or cosine, got {value:?}")),
                }
            }
            "lr_warmup_fraction" => t.lr_warmup_fraction = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "include_sft_loss" => t.include_sft_loss = parse_bool(key, value)?,
            "reset_optimizer" => t.reset_optimizer = parse_bool(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "gen_temperature" => t.gen_temperature = parse(key, value)?,
            "max_new_tokens" => t.max_new_tokens = parse(key, value)?,
            "workers" => t.workers = parse(key, value)?,
            "template_warmup" => t.template_warmup = parse_bool(key, value)?,
            "n_layers" => m.n_layers = parse(key, value)?,
            "n_heads" => m.n_heads = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "d_ff" => m.d_ff = parse(key, value)?,
            "context_len" => m.context_len = parse(key, value)?,
            "vocab_size" => m.vocab_size = parse(key, value)?,
            "precision" => {
                m.precision = match value {
                    "single" => Precision::Single,
                    "double" => Precision::Double,
                    _ => return Err(format!("precision: expected single or double, got {value:?}")),
                }
            }
            _ => return Err(format!("{key}: unknown key")),
        }
        Ok(())
    }

    /// Applies every line of a config document on top of `self`. All bad
    /// lines are reported together.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                errors.push(format!("line {}: expected key = value", i + 1));
                continue;
            };
            if let Err(e) = self.set(k.trim(), v.trim()) {
                errors.push(format!("line {}: {e}", i + 1));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errors))
        }
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = self.train.problems();
        if let Err(e) = self.model.validate() {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errors))
        }
    }

    /// Canonical text form; `from_text(to_text())` is the identity.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let m = &self.model;
        let schedule = match t.schedule {
            ScheduleKind::Constant => "constant",
            ScheduleKind::Cosine => "cosine",
        };
        let precision = match m.precision {
            Precision::Single => "single",
            Precision::Double => "double",
        };
        let pairs: Vec<(&str, String)> = vec![
            ("mode", t.mode.to_string()),
            ("lr", t.lr.to_string()),
            ("warmup_steps", t.warmup_steps.to_string()),
            ("inner_steps", t.inner_steps.to_string()),
            ("iterations", t.iterations.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("beta", t.beta.to_string()),
            ("schedule", schedule.into()),
            ("lr_warmup_fraction", t.lr_warmup_fraction.to_string()),
            ("seed", t.seed.to_string()),
            ("include_sft_loss", t.include_sft_loss.to_string()),
            ("reset_optimizer", t.reset_optimizer.to_string()),
            ("weight_decay", t.weight_decay.to_string()),
            ("adam_beta1", t.adam_beta1.to_string()),
            ("adam_beta2", t.adam_beta2.to_string()),
            ("adam_eps", t.adam_eps.to_string()),
            ("gen_temperature", t.gen_temperature.to_string()),
            ("max_new_tokens", t.max_new_tokens.to_string()),
            ("workers", t.workers.to_string()),
            ("n_layers", m.n_layers.to_string()),
            ("n_heads", m.n_heads.to_string()),
            ("d_model", m.d_model.to_string()),
            ("d_ff", m.d_ff.to_string()),
            ("context_len", m.context_len.to_string()),
            ("vocab_size", m.vocab_size.to_string()),
            ("precision", precision.into()),
            ("template_warmup", t.template_warmup.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_covers_every_key() {
        let mut c = RunConfig::default();
        c.train.mode = TrainMode::Rac;
        c.train.beta = 0.35;
        c.model.d_model = 32;
        let text = c.to_text();
        assert_eq!(text.lines().count(), CONFIG_KEYS.len());
        for key in CONFIG_KEYS {
            assert!(text.contains(&format!("{key} = ")), "{key}");
        }
        assert_eq!(RunConfig::from_text(&text).unwrap(), c);
    }

    #[test]
    fn every_bad_line_is_reported() {
        let err = RunConfig::from_text("lr = 1e-3\nbogus = 1\n# comment\nbeta = x\nnonsense\n").unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
        assert!(err.0[0].contains("bogus"));
        assert!(err.0[1].contains("beta"));
        assert!(err.0[2].contains("line 5"));
    }

    #[test]
    fn validation_lists_all_problems() {
        let mut c = RunConfig::default();
        c.train.mode = TrainMode::Bash;
        c.train.batch_size = 0;
        c.train.beta = 2.0;
        c.train.iterations = 0;
        let err = c.validate().unwrap_err();
        assert_eq!(err.0.len(), 3, "{err}");
    }
}
