//! Synthetic tasks with exact answers, tokenization, and dataset files.
//!
//! Three tasks are provided, each with a deterministic oracle mapping the
//! prompt text to its unique correct continuation:
//!
//! * `copy` / `reverse`: `x = s <sep>`, `y = s <eos>` (or `reverse(s) <eos>`)
//! * `addN`: `x = "a+b="` with operands below `10^N`, `y = decimal(a+b) <eos>`
//! * `extractK`: `x = body <sep>`, `y` is every K-th symbol of the body
//!
//! Generation uses one RNG stream per example index, so datasets are a pure
//! function of `(task parameters, seed)` and workers never change bytes.

mod io;
mod tasks;
mod vocab;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use io::{dataset_records, read_dataset, read_records, write_dataset, write_records, ExampleRecord};
pub use tasks::{gen_addition_task, gen_copy_task, gen_extract_task, gen_task};
pub use vocab::{Special, TokenId, Vocab, BOS, DEFAULT_SYMBOLS, EOS, PAD, REF_BEGIN, REF_END, SEP};

/// Context budget assumed by generators when none is given.
pub const DEFAULT_CONTEXT_LEN: usize = 160;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("unknown character {ch:?} at position {position}")]
    UnknownChar { ch: char, position: usize },
    #[error("token id {id} at position {position} is outside vocabulary of size {vocab_size}")]
    IdOutOfRange {
        id: TokenId,
        position: usize,
        vocab_size: usize,
    },
    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),
    #[error("invalid task parameters: {0}")]
    InvalidParams(String),
    #[error("example {id}: {message}")]
    InvalidExample { id: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A synthetic task and its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Copy { reverse: bool },
    Addition { max_digits: u32 },
    Extract { stride: usize },
}

impl Task {
    /// The exact correct continuation text (without `<eos>`) for a prompt.
    pub fn answer(&self, prompt_text: &str) -> Option<String> {
        match *self {
            Task::Copy { reverse } => {
                let body = prompt_text.strip_suffix(Special::Sep.marker())?;
                Some(if reverse {
                    body.chars().rev().collect()
                } else {
                    body.to_string()
                })
            }
            Task::Addition { .. } => {
                let expr = prompt_text.strip_suffix('=')?;
                let (a, b) = expr.split_once('+')?;
                let a: u64 = a.parse().ok()?;
                let b: u64 = b.parse().ok()?;
                Some((a + b).to_string())
            }
            Task::Extract { stride } => {
                let body = prompt_text.strip_suffix(Special::Sep.marker())?;
                Some(extract_every(body, stride))
            }
        }
    }
}

pub(crate) fn extract_every(body: &str, stride: usize) -> String {
    if body.chars().count() < stride {
        return body.chars().take(1).collect();
    }
    body.chars().step_by(stride).collect()
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::Copy { reverse: false } => write!(f, "copy"),
            Task::Copy { reverse: true } => write!(f, "reverse"),
            Task::Addition { max_digits } => write!(f, "add{max_digits}"),
            Task::Extract { stride } => write!(f, "extract{stride}"),
        }
    }
}

impl FromStr for Task {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CorpusError::UnknownTask(s.to_string());
        match s {
            "copy" => Ok(Task::Copy { reverse: false }),
            "reverse" => Ok(Task::Copy { reverse: true }),
            _ => {
                if let Some(d) = s.strip_prefix("add") {
                    Ok(Task::Addition {
                        max_digits: d.parse().map_err(|_| bad())?,
                    })
                } else if let Some(k) = s.strip_prefix("extract") {
                    Ok(Task::Extract {
                        stride: k.parse().map_err(|_| bad())?,
                    })
                } else {
                    Err(bad())
                }
            }
        }
    }
}

/// A prompt `x` and its continuation `y` (which ends with `<eos>`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
}

impl Example {
    /// Number of model input positions needed to score the continuation.
    pub fn scored_len(&self) -> usize {
        self.prompt.len() + self.continuation.len()
    }

    pub fn validate(&self, context_len: usize) -> Result<(), CorpusError> {
        let fail = |message: &str| {
            Err(CorpusError::InvalidExample {
                id: self.id.clone(),
                message: message.to_string(),
            })
        };
        if self.prompt.is_empty() {
            return fail("empty prompt");
        }
        if self.continuation.last() != Some(&EOS) {
            return fail("continuation must end with <eos>");
        }
        let all = self.prompt.iter().chain(self.continuation.iter());
        if all.clone().any(|&t| t == PAD) {
            return fail("PAD inside example");
        }
        if all.filter(|&&t| t == EOS).count() != 1 {
            return fail("exactly one <eos> expected");
        }
        if self.scored_len() > context_len {
            return fail("prompt plus continuation exceeds the context length");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub task_name: String,
    pub seed: u64,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn task(&self) -> Result<Task, CorpusError> {
        self.task_name.parse()
    }

    /// Longest continuation, the natural generation cap for this dataset.
    pub fn max_continuation_len(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.continuation.len())
            .max()
            .unwrap_or(0)
    }

    pub fn validate(&self, context_len: usize) -> Result<(), CorpusError> {
        let mut seen = std::collections::HashSet::new();
        for e in &self.examples {
            if !seen.insert(e.id.as_str()) {
                return Err(CorpusError::InvalidExample {
                    id: e.id.clone(),
                    message: "duplicate id".into(),
                });
            }
            e.validate(context_len)?;
        }
        Ok(())
    }

    /// Splits off the last `n` examples as a held-out set.
    pub fn split_tail(mut self, n: usize) -> (Dataset, Dataset) {
        let cut = self.examples.len().saturating_sub(n);
        let tail = self.examples.split_off(cut);
        let held = Dataset {
            task_name: self.task_name.clone(),
            seed: self.seed,
            examples: tail,
        };
        (self, held)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_names_round_trip() {
        for t in [
            Task::Copy { reverse: false },
            Task::Copy { reverse: true },
            Task::Addition { max_digits: 4 },
            Task::Extract { stride: 3 },
        ] {
            assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
        }
        assert!("mul3".parse::<Task>().is_err());
    }

    #[test]
    fn oracles() {
        assert_eq!(
            Task::Addition { max_digits: 3 }.answer("999+1=").as_deref(),
            Some("1000")
        );
        assert_eq!(
            Task::Copy { reverse: true }.answer("abc<sep>").as_deref(),
            Some("cba")
        );
        assert_eq!(
            Task::Extract { stride: 2 }.answer("abcdef<sep>").as_deref(),
            Some("ace")
        );
        assert_eq!(
            Task::Extract { stride: 4 }.answer("xyz<sep>").as_deref(),
            Some("x")
        );
    }

    #[test]
    fn validation_rejects_malformed() {
        let ok = Example {
            id: "a".into(),
            prompt: vec![10],
            continuation: vec![11, EOS],
        };
        assert!(ok.validate(8).is_ok());
        assert!(ok.validate(2).is_err());
        let mut bad = ok.clone();
        bad.continuation = vec![EOS, EOS];
        assert!(bad.validate(8).is_err());
        bad.continuation = vec![PAD, EOS];
        assert!(bad.validate(8).is_err());
        bad.continuation = vec![11];
        assert!(bad.validate(8).is_err());
    }
}
