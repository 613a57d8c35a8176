//! Token-level mixing of ground truth and model samples, and the offline
//! construction of a mixed-continuation dataset from a frozen snapshot.
//!
//! For each continuation position `j` a Bernoulli(beta) coin is flipped. On
//! success the model samples `z_j ~ p(. | x, mixed[..j])` and that token is
//! kept; otherwise the ground-truth `y_j` is kept. The coin is always flipped
//! first and the sample drawn only when needed, so RNG consumption is fixed.
//! The mixed continuation always has exactly the length of `y`.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    read_records, write_records, CorpusError, Dataset, Example, ExampleRecord, TokenId, Vocab, BOS,
};
use crate::model::{InferenceState, ModelParams, Scalar};
use crate::parallel::{ordered_map, BuildReport, MAX_SKIP_FRACTION};
use crate::rng::{stream, StreamRng};
use crate::sampler::{next_token, GenerationConfig, SamplerError};

#[derive(Debug, Error)]
pub enum MixError {
    #[error("example {id}: needs {needed} positions, context length is {context_len}")]
    Overflow {
        id: String,
        needed: usize,
        context_len: usize,
    },
    #[error("invalid mix config: {0}")]
    InvalidConfig(String),
    #[error("{skipped} of {total} examples skipped, above the 1% limit")]
    TooManySkipped { skipped: usize, total: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub beta: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            beta: 0.2,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<(), MixError> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(MixError::InvalidConfig(format!("beta {} outside [0, 1]", self.beta)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(MixError::InvalidConfig(format!(
                "temperature {} must be positive",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Choice {
    GroundTruth,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedExample {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    pub mixed: Vec<TokenId>,
    pub flags: Vec<Choice>,
}

impl MixedExample {
    /// The identity mixture (`mixed == y`), as produced with beta = 0.
    pub fn unmixed(example: &Example) -> Self {
        Self {
            id: example.id.clone(),
            prompt: example.prompt.clone(),
            continuation: example.continuation.clone(),
            mixed: example.continuation.clone(),
            flags: vec![Choice::GroundTruth; example.continuation.len()],
        }
    }

    pub fn example(&self) -> Example {
        Example {
            id: self.id.clone(),
            prompt: self.prompt.clone(),
            continuation: self.continuation.clone(),
        }
    }

    pub fn generated_count(&self) -> usize {
        self.flags.iter().filter(|f| **f == Choice::Generated).count()
    }
}

/// Builds one mixed continuation. `rng` is consumed as: coin, then (only on
/// success) one sample, for each position in order.
pub fn mix_continuation<F: Scalar>(
    params: &ModelParams<F>,
    example: &Example,
    config: &MixConfig,
    rng: &mut StreamRng,
) -> Result<MixedExample, MixError> {
    config.validate()?;
    let y = &example.continuation;
    let needed = 1 + example.prompt.len() + y.len().saturating_sub(1);
    if needed > params.config.context_len {
        return Err(MixError::Overflow {
            id: example.id.clone(),
            needed,
            context_len: params.config.context_len,
        });
    }
    let sample_cfg = GenerationConfig::sample(y.len(), config.temperature);
    let mut state = InferenceState::new(params);
    state.feed(BOS).map_err(SamplerError::from)?;
    state.feed_all(&example.prompt).map_err(SamplerError::from)?;
    let mut mixed = Vec::with_capacity(y.len());
    let mut flags = Vec::with_capacity(y.len());
    for (j, &truth) in y.iter().enumerate() {
        let take_model = rng.gen::<f64>() < config.beta;
        if take_model {
            mixed.push(next_token(state.logits(), &sample_cfg, rng)?);
            flags.push(Choice::Generated);
        } else {
            mixed.push(truth);
            flags.push(Choice::GroundTruth);
        }
        if j + 1 < y.len() {
            state.feed(mixed[j]).map_err(SamplerError::from)?;
        }
    }
    Ok(MixedExample {
        id: example.id.clone(),
        prompt: example.prompt.clone(),
        continuation: y.clone(),
        mixed,
        flags,
    })
}

/// Per-example stream for mixing: a function of the seed and example id only.
pub fn mix_stream(seed: u64, example_id: &str) -> StreamRng {
    stream(seed, &format!("mix/{example_id}"))
}

/// Builds the mixed dataset from one frozen parameter snapshot.
pub fn build_ds<F: Scalar>(
    params: &ModelParams<F>,
    dataset: &Dataset,
    config: &MixConfig,
    workers: usize,
) -> Result<BuildReport<MixedExample>, MixError> {
    config.validate()?;
    let results = ordered_map(workers, &dataset.examples, |_, e| {
        let mut rng = mix_stream(config.seed, &e.id);
        mix_continuation(params, e, config, &mut rng)
    });
    let mut report = BuildReport {
        items: Vec::with_capacity(results.len()),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(m) => report.items.push(m),
            Err(MixError::Overflow { id, needed, context_len }) => report
                .skipped
                .push((id, format!("needs {needed} positions, context {context_len}"))),
            Err(e) => return Err(e),
        }
    }
    if report.skip_fraction() > MAX_SKIP_FRACTION {
        return Err(MixError::TooManySkipped {
            skipped: report.skipped.len(),
            total: dataset.len(),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedRecord {
    #[serde(flatten)]
    pub base: ExampleRecord,
    pub mixed_ids: Vec<TokenId>,
    /// 1 where the token was generated by the model, 0 for ground truth.
    pub choice_flags: Vec<u8>,
}

pub fn write_ds(path: &Path, task_name: &str, seed: u64, items: &[MixedExample]) -> Result<(), MixError> {
    let vocab = Vocab::default();
    let shell = Dataset {
        task_name: task_name.to_string(),
        seed,
        examples: Vec::new(),
    };
    let records = items
        .iter()
        .map(|m| {
            Ok(MixedRecord {
                base: ExampleRecord::new(&shell, &m.example(), &vocab)?,
                mixed_ids: m.mixed.clone(),
                choice_flags: m
                    .flags
                    .iter()
                    .map(|f| (*f == Choice::Generated) as u8)
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    write_records(path, &records)?;
    Ok(())
}

pub fn read_ds(path: &Path) -> Result<Vec<MixedExample>, MixError> {
    let vocab = Vocab::default();
    let records: Vec<MixedRecord> = read_records(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = |message: String| MixError::Corpus(CorpusError::Parse { line: i + 1, message });
            let e = r.base.to_example(&vocab).map_err(bad)?;
            if r.mixed_ids.len() != e.continuation.len() || r.choice_flags.len() != e.continuation.len() {
                return Err(bad("mixed_ids and choice_flags must match the continuation length".into()));
            }
            let mut flags = Vec::with_capacity(r.choice_flags.len());
            for (j, f) in r.choice_flags.iter().enumerate() {
                flags.push(match f {
                    0 if r.mixed_ids[j] == e.continuation[j] => Choice::GroundTruth,
                    0 => return Err(bad(format!("ground-truth position {j} differs from y"))),
                    1 => Choice::Generated,
                    other => return Err(bad(format!("bad choice flag {other}"))),
                });
            }
            Ok(MixedExample {
                id: e.id,
                prompt: e.prompt,
                continuation: e.continuation,
                mixed: r.mixed_ids,
                flags,
            })
        })
        .collect()
}
