//! Autoregressive generation: greedy and temperature sampling, plus the
//! single-pass teacher-forced argmax used to build correction labels.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TokenId, EOS};
use crate::model::{forward, InferenceState, ModelError, ModelParams, Scalar};
use crate::rng::StreamRng;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("non-finite logit at index {0}")]
    NonFinite(usize),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("context overflow: need {needed} positions, context length is {context_len}")]
    ContextOverflow { needed: usize, context_len: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub max_new_tokens: usize,
    pub temperature: f64,
    pub mode: DecodeMode,
    pub stop_token: TokenId,
}

impl GenerationConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            max_new_tokens,
            temperature: 0.0,
            mode: DecodeMode::Greedy,
            stop_token: EOS,
        }
    }

    pub fn sample(max_new_tokens: usize, temperature: f64) -> Self {
        Self {
            max_new_tokens,
            temperature,
            mode: DecodeMode::Sample,
            stop_token: EOS,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        if self.mode == DecodeMode::Sample && !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SamplerError::InvalidConfig(format!(
                "sampling needs a positive finite temperature, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Eos,
    MaxLen,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenResult {
    pub tokens: Vec<TokenId>,
    pub stopped_by: StopReason,
}

/// Index of the largest value; the lowest index wins exact ties.
pub fn argmax<F: Scalar>(row: &[F]) -> Result<TokenId, SamplerError> {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if !v.is_finite() {
            return Err(SamplerError::NonFinite(i));
        }
        if v > row[best] {
            best = i;
        }
    }
    Ok(best as TokenId)
}

/// `softmax(logits / temperature)` in double precision.
pub fn softmax_at<F: Scalar>(row: &[F], temperature: f64) -> Result<Vec<f64>, SamplerError> {
    let mut scaled = Vec::with_capacity(row.len());
    for (i, v) in row.iter().enumerate() {
        let v = v.to_f64().unwrap_or(f64::NAN);
        if !v.is_finite() {
            return Err(SamplerError::NonFinite(i));
        }
        scaled.push(v / temperature);
    }
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scaled.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scaled.iter_mut() {
        *s /= total;
    }
    Ok(scaled)
}

/// Draws the next token from one logits row.
pub fn next_token<F: Scalar>(row: &[F], config: &GenerationConfig, rng: &mut StreamRng) -> Result<TokenId, SamplerError> {
    match config.mode {
        DecodeMode::Greedy => argmax(row),
        DecodeMode::Sample => {
            config.validate()?;
            let probs = softmax_at(row, config.temperature)?;
            let u: f64 = rng.gen();
            let mut cum = 0.0;
            let mut last_nonzero = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > 0.0 {
                    last_nonzero = i;
                }
                cum += p;
                if u < cum {
                    return Ok(i as TokenId);
                }
            }
            Ok(last_nonzero as TokenId)
        }
    }
}

/// Appends up to `max_new_tokens` tokens after `prefix`, each conditioned on
/// the prefix and everything generated so far. Stops after the stop token.
pub fn generate<F: Scalar>(
    params: &ModelParams<F>,
    prefix: &[TokenId],
    config: &GenerationConfig,
    rng: &mut StreamRng,
) -> Result<GenResult, SamplerError> {
    config.validate()?;
    let needed = prefix.len() + config.max_new_tokens;
    if needed > params.config.context_len {
        return Err(SamplerError::ContextOverflow {
            needed,
            context_len: params.config.context_len,
        });
    }
    if prefix.is_empty() {
        return Err(SamplerError::InvalidConfig("empty prefix".into()));
    }
    let mut state = InferenceState::new(params);
    state.feed_all(prefix)?;
    let mut tokens = Vec::with_capacity(config.max_new_tokens);
    for k in 0..config.max_new_tokens {
        let t = next_token(state.logits(), config, rng)?;
        tokens.push(t);
        if t == config.stop_token {
            return Ok(GenResult {
                tokens,
                stopped_by: StopReason::Eos,
            });
        }
        if k + 1 < config.max_new_tokens {
            state.feed(t)?;
        }
    }
    Ok(GenResult {
        tokens,
        stopped_by: StopReason::MaxLen,
    })
}

/// `out[j] = argmax p(. | prefix, given[..j])` computed with one forward pass
/// over `prefix ++ given[..len-1]`.
pub fn teacher_forced_argmax<F: Scalar>(
    params: &ModelParams<F>,
    prefix: &[TokenId],
    given: &[TokenId],
) -> Result<Vec<TokenId>, SamplerError> {
    let needed = prefix.len() + given.len();
    if needed > params.config.context_len {
        return Err(SamplerError::ContextOverflow {
            needed,
            context_len: params.config.context_len,
        });
    }
    if prefix.is_empty() {
        return Err(SamplerError::InvalidConfig("empty prefix".into()));
    }
    if given.is_empty() {
        return Ok(Vec::new());
    }
    let mut ids = prefix.to_vec();
    ids.extend_from_slice(&given[..given.len() - 1]);
    let logits = forward(params, &ids)?;
    (0..given.len())
        .map(|j| argmax(logits.row(prefix.len() - 1 + j)))
        .collect()
}
