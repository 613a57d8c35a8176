//! Maximum-likelihood objectives over the three data views.
//!
//! All three are per-token means of next-token negative log-likelihood; they
//! differ only in which tokens form the context and which are the targets:
//!
//! | loss | context after `BOS x` | targets |
//! |------|-----------------------|---------|
//! | sft  | `y[..j]`              | `y[j]`  |
//! | bash | `mixed[..j]`          | `y[j]`  |
//! | rac  | `z[..j]`              | `labels[j]`, only where the mask is set |

use thiserror::Error;

use crate::corpus::{Example, TokenId, BOS, PAD};
use crate::mixing::MixedExample;
use crate::model::{loss_and_grads, ModelError, ModelParams, Scalar, TokenSeq};
use crate::rac::{RacExample, RacTemplate};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("example {id}: {message}")]
    Malformed { id: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub value: f64,
    pub token_count: usize,
    pub components: Vec<(String, f64)>,
}

impl BatchLoss {
    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone)]
pub struct LossGrads<F> {
    pub loss: BatchLoss,
    pub grads: Vec<F>,
}

/// Lays out `BOS x context[..n-1]` with `targets` scored from the position of
/// the last prompt token onward.
fn sequence(prompt: &[TokenId], context: &[TokenId], targets: &[TokenId], mask: &[bool]) -> TokenSeq {
    let n = targets.len();
    let mut inputs = Vec::with_capacity(1 + prompt.len() + n);
    inputs.push(BOS);
    inputs.extend_from_slice(prompt);
    inputs.extend_from_slice(&context[..n.saturating_sub(1)]);
    let offset = prompt.len();
    let mut t = vec![PAD; inputs.len()];
    let mut m = vec![false; inputs.len()];
    t[offset..offset + n].copy_from_slice(targets);
    m[offset..offset + n].copy_from_slice(mask);
    TokenSeq {
        inputs,
        targets: t,
        mask: m,
    }
}

pub fn sft_sequence(e: &Example) -> TokenSeq {
    let mask = vec![true; e.continuation.len()];
    sequence(&e.prompt, &e.continuation, &e.continuation, &mask)
}

pub fn bash_sequence(m: &MixedExample) -> Result<TokenSeq, LossError> {
    if m.mixed.len() != m.continuation.len() {
        return Err(LossError::Malformed {
            id: m.id.clone(),
            message: "mixed continuation length differs from y".into(),
        });
    }
    let mask = vec![true; m.continuation.len()];
    Ok(sequence(&m.prompt, &m.mixed, &m.continuation, &mask))
}

pub fn rac_sequence(r: &RacExample) -> Result<TokenSeq, LossError> {
    if r.labels.len() != r.response.len() || r.mask.len() != r.response.len() {
        return Err(LossError::Malformed {
            id: r.id.clone(),
            message: "response, labels and mask lengths differ".into(),
        });
    }
    Ok(sequence(&r.prompt, &r.response, &r.labels, &r.mask))
}

/// `y` scored after the reference-exposing template `f(x, y)`, so the model
/// learns to read the reference (needed before correction labels mean
/// anything for a model trained from scratch).
pub fn template_sequence(e: &Example, template: &RacTemplate) -> TokenSeq {
    let context = template.build(&e.prompt, &e.continuation);
    let n = e.continuation.len();
    let mut inputs = context;
    let offset = inputs.len() - 1;
    inputs.extend_from_slice(&e.continuation[..n.saturating_sub(1)]);
    let mut targets = vec![PAD; inputs.len()];
    let mut mask = vec![false; inputs.len()];
    targets[offset..offset + n].copy_from_slice(&e.continuation);
    mask[offset..offset + n].iter_mut().for_each(|m| *m = true);
    TokenSeq { inputs, targets, mask }
}

fn run<F: Scalar>(params: &ModelParams<F>, name: &str, seqs: &[TokenSeq]) -> Result<LossGrads<F>, LossError> {
    if seqs.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let out = loss_and_grads(params, seqs)?;
    Ok(LossGrads {
        loss: BatchLoss {
            value: out.loss,
            token_count: out.token_count,
            components: vec![(name.to_string(), out.loss)],
        },
        grads: out.grads,
    })
}

pub fn sft_loss<F: Scalar>(params: &ModelParams<F>, batch: &[Example]) -> Result<LossGrads<F>, LossError> {
    let seqs: Vec<TokenSeq> = batch.iter().map(sft_sequence).collect();
    run(params, "sft", &seqs)
}

/// Targets are always `y`; the mixed tokens only form the context.
pub fn bash_loss<F: Scalar>(params: &ModelParams<F>, batch: &[MixedExample]) -> Result<LossGrads<F>, LossError> {
    let seqs = batch.iter().map(bash_sequence).collect::<Result<Vec<_>, _>>()?;
    run(params, "bash", &seqs)
}

/// Context is the plain prompt and the response, never the reference
/// template. A batch with an empty mask gives zero loss and zero gradient.
pub fn rac_loss<F: Scalar>(params: &ModelParams<F>, batch: &[RacExample]) -> Result<LossGrads<F>, LossError> {
    let seqs = batch.iter().map(rac_sequence).collect::<Result<Vec<_>, _>>()?;
    run(params, "rac", &seqs)
}

/// Supervised loss over `batch` together with the template view of every
/// `every`-th example, as one per-token mean.
pub fn sft_with_template_loss<F: Scalar>(
    params: &ModelParams<F>,
    batch: &[Example],
    template: &RacTemplate,
    every: usize,
) -> Result<LossGrads<F>, LossError> {
    let mut seqs: Vec<TokenSeq> = batch.iter().map(sft_sequence).collect();
    seqs.extend(batch.iter().step_by(every.max(1)).map(|e| template_sequence(e, template)));
    run(params, "sft", &seqs)
}

#[derive(Debug, Clone, Copy)]
pub enum AuxBatch<'a> {
    Bash(&'a [MixedExample]),
    Rac(&'a [RacExample]),
}

/// Sum of the supervised loss on `sft_batch` and the auxiliary loss, with
/// equal weights. `include_sft = false` is the no-supervised-loss ablation.
pub fn combined_step_loss<F: Scalar>(
    params: &ModelParams<F>,
    sft_batch: &[Example],
    aux: AuxBatch<'_>,
    include_sft: bool,
) -> Result<LossGrads<F>, LossError> {
    let aux_out = match aux {
        AuxBatch::Bash(b) => bash_loss(params, b)?,
        AuxBatch::Rac(b) => rac_loss(params, b)?,
    };
    if !include_sft {
        return Ok(aux_out);
    }
    let sft_out = sft_loss(params, sft_batch)?;
    let mut grads = sft_out.grads;
    for (g, a) in grads.iter_mut().zip(&aux_out.grads) {
        *g += *a;
    }
    let mut components = sft_out.loss.components;
    components.extend(aux_out.loss.components);
    Ok(LossGrads {
        loss: BatchLoss {
            value: sft_out.loss.value + aux_out.loss.value,
            token_count: sft_out.loss.token_count + aux_out.loss.token_count,
            components,
        },
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EOS;

    #[test]
    fn sequence_alignment() {
        let e = Example {
            id: "a".into(),
            prompt: vec![10, 11],
            continuation: vec![20, 21, EOS],
        };
        let s = sft_sequence(&e);
        assert_eq!(s.inputs, vec![BOS, 10, 11, 20, 21]);
        assert_eq!(s.targets, vec![PAD, PAD, 20, 21, EOS]);
        assert_eq!(s.mask, vec![false, false, true, true, true]);
    }

    #[test]
    fn bash_context_uses_mixed_targets_use_y() {
        let m = MixedExample {
            id: "m".into(),
            prompt: vec![10],
            continuation: vec![20, 21, EOS],
            mixed: vec![30, 31, 32],
            flags: vec![crate::mixing::Choice::Generated; 3],
        };
        let s = bash_sequence(&m).unwrap();
        assert_eq!(s.inputs, vec![BOS, 10, 30, 31]);
        assert_eq!(&s.targets[1..], &[20, 21, EOS]);
    }

    #[test]
    fn template_sequence_scores_y_after_reference() {
        let e = Example {
            id: "a".into(),
            prompt: vec![10],
            continuation: vec![20, 21, EOS],
        };
        let s = template_sequence(&e, &RacTemplate);
        use crate::corpus::{REF_BEGIN, REF_END};
        assert_eq!(s.inputs, vec![BOS, 10, REF_BEGIN, 20, 21, REF_END, 20, 21]);
        assert_eq!(&s.targets[5..], &[20, 21, EOS]);
        assert_eq!(s.mask.iter().filter(|m| **m).count(), 3);
        assert!(s.mask[5]);
    }

    #[test]
    fn rac_sequence_masks() {
        let r = RacExample {
            id: "r".into(),
            prompt: vec![10],
            continuation: vec![20, EOS],
            response: vec![25, 26, EOS],
            labels: vec![20, 26, EOS],
            mask: vec![true, false, false],
        };
        let s = rac_sequence(&r).unwrap();
        assert_eq!(s.inputs, vec![BOS, 10, 25, 26]);
        assert_eq!(&s.targets[1..], &[20, 26, EOS]);
        assert_eq!(s.mask, vec![false, true, false, false]);
    }
}
