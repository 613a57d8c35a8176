//! Reference-answer correction data.
//!
//! For each prompt the frozen model samples a response `z` from `(BOS, x)`.
//! The same model is then shown the reference through the template
//! `f(x, y) = BOS x <ref> y <\ref>` and, teacher-forced on `z`, greedily
//! predicts a label for every position. Positions where the label agrees
//! with `z` are masked out of the loss.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    read_records, write_records, CorpusError, Dataset, Example, ExampleRecord, TokenId, Vocab, BOS, EOS, REF_BEGIN,
    REF_END,
};
use crate::model::{ModelParams, Scalar};
use crate::parallel::{ordered_map, BuildReport, MAX_SKIP_FRACTION};
use crate::rng::{stream, StreamRng};
use crate::sampler::{generate, teacher_forced_argmax, GenerationConfig, SamplerError};

#[derive(Debug, Error)]
pub enum RacError {
    #[error("example {id}: {reason}")]
    Overflow { id: String, reason: String },
    #[error("empty response for example {0}")]
    EmptyResponse(String),
    #[error("{skipped} of {total} examples skipped, above the 1% limit")]
    TooManySkipped { skipped: usize, total: usize },
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Prompt layout that exposes the reference answer: `BOS x <ref> y' <\ref>`
/// where `y'` is `y` without its trailing `<eos>`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RacTemplate;

impl RacTemplate {
    pub fn build(&self, prompt: &[TokenId], reference: &[TokenId]) -> Vec<TokenId> {
        let body = match reference.last() {
            Some(&EOS) => &reference[..reference.len() - 1],
            _ => reference,
        };
        let mut out = Vec::with_capacity(prompt.len() + body.len() + 3);
        out.push(BOS);
        out.extend_from_slice(prompt);
        out.push(REF_BEGIN);
        out.extend_from_slice(body);
        out.push(REF_END);
        out
    }
}

/// Builds the reference-augmented prompt, checking that `reserve` response
/// positions still fit in the context.
pub fn build_rac_prompt(
    prompt: &[TokenId],
    reference: &[TokenId],
    template: &RacTemplate,
    reserve: usize,
    context_len: usize,
) -> Result<Vec<TokenId>, RacError> {
    let built = template.build(prompt, reference);
    if built.len() + reserve > context_len {
        return Err(RacError::Overflow {
            id: String::new(),
            reason: format!(
                "template of {} tokens plus {reserve} response tokens exceeds context {context_len}",
                built.len()
            ),
        });
    }
    Ok(built)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RacExample {
    pub id: String,
    pub prompt: Vec<TokenId>,
    pub continuation: Vec<TokenId>,
    pub response: Vec<TokenId>,
    pub labels: Vec<TokenId>,
    pub mask: Vec<bool>,
}

impl RacExample {
    pub fn example(&self) -> Example {
        Example {
            id: self.id.clone(),
            prompt: self.prompt.clone(),
            continuation: self.continuation.clone(),
        }
    }

    pub fn unmasked(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// Greedy labels for `response` under `f(x, y)` and the disagreement mask.
pub fn gen_rac_labels<F: Scalar>(
    params: &ModelParams<F>,
    prompt: &[TokenId],
    reference: &[TokenId],
    response: &[TokenId],
    template: &RacTemplate,
) -> Result<(Vec<TokenId>, Vec<bool>), RacError> {
    if response.is_empty() {
        return Err(RacError::EmptyResponse(String::new()));
    }
    let context = build_rac_prompt(prompt, reference, template, response.len(), params.config.context_len)?;
    let labels = teacher_forced_argmax(params, &context, response)?;
    let mask = labels.iter().zip(response).map(|(l, z)| l != z).collect();
    Ok((labels, mask))
}

pub fn rac_stream(seed: u64, example_id: &str) -> StreamRng {
    stream(seed, &format!("rac/{example_id}"))
}

fn build_one<F: Scalar>(
    params: &ModelParams<F>,
    e: &Example,
    gen_config: &GenerationConfig,
    template: &RacTemplate,
    seed: u64,
) -> Result<RacExample, RacError> {
    let with_id = |err: RacError| match err {
        RacError::Overflow { reason, .. } => RacError::Overflow { id: e.id.clone(), reason },
        RacError::Sampler(SamplerError::ContextOverflow { needed, context_len }) => RacError::Overflow {
            id: e.id.clone(),
            reason: format!("needs {needed} positions, context {context_len}"),
        },
        RacError::EmptyResponse(_) => RacError::EmptyResponse(e.id.clone()),
        other => other,
    };
    let mut rng = rac_stream(seed, &e.id);
    let mut prefix = Vec::with_capacity(e.prompt.len() + 1);
    prefix.push(BOS);
    prefix.extend_from_slice(&e.prompt);
    let response = generate(params, &prefix, gen_config, &mut rng)
        .map_err(|err| with_id(err.into()))?
        .tokens;
    let (labels, mask) =
        gen_rac_labels(params, &e.prompt, &e.continuation, &response, template).map_err(with_id)?;
    Ok(RacExample {
        id: e.id.clone(),
        prompt: e.prompt.clone(),
        continuation: e.continuation.clone(),
        response,
        labels,
        mask,
    })
}

/// Builds the correction dataset from one frozen snapshot. Examples whose
/// mask is all zeros are kept.
pub fn build_dr<F: Scalar>(
    params: &ModelParams<F>,
    dataset: &Dataset,
    gen_config: &GenerationConfig,
    template: &RacTemplate,
    seed: u64,
    workers: usize,
) -> Result<BuildReport<RacExample>, RacError> {
    gen_config.validate()?;
    let results = ordered_map(workers, &dataset.examples, |_, e| {
        build_one(params, e, gen_config, template, seed)
    });
    let mut report = BuildReport {
        items: Vec::with_capacity(results.len()),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(x) => report.items.push(x),
            Err(RacError::Overflow { id, reason }) => report.skipped.push((id, reason)),
            Err(e) => return Err(e),
        }
    }
    if report.skip_fraction() > MAX_SKIP_FRACTION {
        return Err(RacError::TooManySkipped {
            skipped: report.skipped.len(),
            total: dataset.len(),
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RacRecord {
    #[serde(flatten)]
    pub base: ExampleRecord,
    pub response_ids: Vec<TokenId>,
    pub rac_label_ids: Vec<TokenId>,
    pub mask: Vec<u8>,
}

pub fn write_dr(path: &Path, task_name: &str, seed: u64, items: &[RacExample]) -> Result<(), RacError> {
    let vocab = Vocab::default();
    let shell = Dataset {
        task_name: task_name.to_string(),
        seed,
        examples: Vec::new(),
    };
    let records = items
        .iter()
        .map(|r| {
            Ok(RacRecord {
                base: ExampleRecord::new(&shell, &r.example(), &vocab)?,
                response_ids: r.response.clone(),
                rac_label_ids: r.labels.clone(),
                mask: r.mask.iter().map(|m| *m as u8).collect(),
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    write_records(path, &records)?;
    Ok(())
}

pub fn read_dr(path: &Path) -> Result<Vec<RacExample>, RacError> {
    let vocab = Vocab::default();
    let records: Vec<RacRecord> = read_records(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let bad = |message: String| RacError::Corpus(CorpusError::Parse { line: i + 1, message });
            let e = r.base.to_example(&vocab).map_err(bad)?;
            let n = r.response_ids.len();
            if n == 0 || r.rac_label_ids.len() != n || r.mask.len() != n {
                return Err(bad("response, labels and mask must be nonempty and equal length".into()));
            }
            let mut mask = Vec::with_capacity(n);
            for j in 0..n {
                let differs = r.rac_label_ids[j] != r.response_ids[j];
                match (r.mask[j], differs) {
                    (0, false) => mask.push(false),
                    (1, true) => mask.push(true),
                    (m, _) => return Err(bad(format!("mask {m} at {j} disagrees with labels"))),
                }
            }
            Ok(RacExample {
                id: e.id,
                prompt: e.prompt,
                continuation: e.continuation,
                response: r.response_ids,
                labels: r.rac_label_ids,
                mask,
            })
        })
        .collect()
}
