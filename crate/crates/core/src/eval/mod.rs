//! Evaluation: exact match, Rouge, oracle-judged win rate against the stored
//! reference, and the spread of embedding distances between sampled
//! responses and the reference.

mod rouge;

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{write_records, CorpusError, Dataset, Example, Task, TokenId, Vocab, BOS, EOS};
use crate::model::{forward_hidden, ModelError, ModelParams, Scalar};
use crate::parallel::ordered_map;
use crate::rng::stream;
use crate::sampler::{generate, DecodeMode, GenerationConfig, SamplerError};

pub use rouge::{lcs_len, rouge_f1, spaced, RougeOrder};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("n_repeats must be at least 1")]
    NoRepeats,
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Generated tokens up to (not including) the first EOS.
pub fn strip_eos(tokens: &[TokenId]) -> &[TokenId] {
    match tokens.iter().position(|&t| t == EOS) {
        Some(i) => &tokens[..i],
        None => tokens,
    }
}

fn text_of(vocab: &Vocab, tokens: &[TokenId]) -> Result<String, CorpusError> {
    Ok(vocab.decode(strip_eos(tokens))?.trim().to_string())
}

fn prefix_of(e: &Example) -> Vec<TokenId> {
    let mut p = Vec::with_capacity(e.prompt.len() + 1);
    p.push(BOS);
    p.extend_from_slice(&e.prompt);
    p
}

/// Decoded generations for every prompt, `n_repeats` times; repeat `r` of
/// example `id` draws from the stream `(seed, "eval/{r}/{id}")`.
pub fn generate_texts<F: Scalar>(
    params: &ModelParams<F>,
    dataset: &Dataset,
    gen_config: &GenerationConfig,
    n_repeats: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<Vec<String>>, EvalError> {
    let vocab = Vocab::default();
    let mut out = Vec::with_capacity(n_repeats);
    for r in 0..n_repeats {
        let texts = ordered_map(workers, &dataset.examples, |_, e| -> Result<String, EvalError> {
            let mut rng = stream(seed, &format!("eval/{r}/{}", e.id));
            let g = generate(params, &prefix_of(e), gen_config, &mut rng)?;
            Ok(text_of(&vocab, &g.tokens)?)
        });
        out.push(texts.into_iter().collect::<Result<Vec<_>, _>>()?);
    }
    Ok(out)
}

/// Reference answers of a dataset as text.
pub fn reference_texts(dataset: &Dataset) -> Result<Vec<String>, EvalError> {
    let vocab = Vocab::default();
    Ok(dataset
        .examples
        .iter()
        .map(|e| text_of(&vocab, &e.continuation))
        .collect::<Result<_, _>>()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactMatch {
    pub mean: f64,
    pub per_repeat: Vec<f64>,
}

fn exact_match_of(generations: &[Vec<String>], references: &[String]) -> ExactMatch {
    let per_repeat: Vec<f64> = generations
        .iter()
        .map(|texts| {
            let hits = texts.iter().zip(references).filter(|(g, r)| g == r).count();
            hits as f64 / references.len().max(1) as f64
        })
        .collect();
    ExactMatch {
        mean: per_repeat.iter().sum::<f64>() / per_repeat.len().max(1) as f64,
        per_repeat,
    }
}

/// Fraction of prompts whose generation equals the reference answer, per
/// repeat and averaged.
pub fn exact_match_rate<F: Scalar>(
    params: &ModelParams<F>,
    dataset: &Dataset,
    gen_config: &GenerationConfig,
    n_repeats: usize,
    seed: u64,
    workers: usize,
) -> Result<ExactMatch, EvalError> {
    if n_repeats == 0 {
        return Err(EvalError::NoRepeats);
    }
    let gens = generate_texts(params, dataset, gen_config, n_repeats, seed, workers)?;
    Ok(exact_match_of(&gens, &reference_texts(dataset)?))
}

/// Oracle quality of `answer` for a prompt: correctness for addition, and
/// symbol-level Rouge-L against the true answer otherwise.
pub fn judge_score(task: Option<Task>, truth: &str, answer: &str) -> f64 {
    match task {
        Some(Task::Addition { .. }) => (answer == truth) as u8 as f64,
        _ => rouge_f1(&spaced(answer), &spaced(truth), RougeOrder::L),
    }
}

/// 1 if `a` scores higher than `b` under the judge, 0.5 on a tie, else 0.
pub fn judge(task: Option<Task>, truth: &str, a: &str, b: &str) -> f64 {
    let (sa, sb) = (judge_score(task, truth, a), judge_score(task, truth, b));
    if sa > sb {
        1.0
    } else if sa == sb {
        0.5
    } else {
        0.0
    }
}

/// Mean judged outcome of `candidates` against `references`, where `truths`
/// are the oracle answers.
pub fn win_rate(task: Option<Task>, truths: &[String], candidates: &[String], references: &[String]) -> f64 {
    let n = truths.len().min(candidates.len()).min(references.len());
    if n == 0 {
        return 0.0;
    }
    (0..n)
        .map(|i| judge(task, &truths[i], &candidates[i], &references[i]))
        .sum::<f64>()
        / n as f64
}

fn oracle_truths(dataset: &Dataset, task: Option<Task>) -> Result<Vec<String>, EvalError> {
    let vocab = Vocab::default();
    let refs = reference_texts(dataset)?;
    dataset
        .examples
        .iter()
        .zip(refs)
        .map(|(e, r)| {
            let prompt = vocab.decode(&e.prompt)?;
            Ok(task.and_then(|t| t.answer(&prompt)).unwrap_or(r))
        })
        .collect()
}

/// Win rate of the model's generations against the stored references.
pub fn win_rate_vs_reference<F: Scalar>(
    params: &ModelParams<F>,
    dataset: &Dataset,
    gen_config: &GenerationConfig,
    seed: u64,
    workers: usize,
) -> Result<f64, EvalError> {
    let task = dataset.task().ok();
    let gens = generate_texts(params, dataset, gen_config, 1, seed, workers)?;
    Ok(win_rate(task, &oracle_truths(dataset, task)?, &gens[0], &reference_texts(dataset)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub task: String,
    pub exact_match: f64,
    pub exact_match_per_repeat: Vec<f64>,
    pub rouge1: f64,
    pub rouge2: f64,
    pub rouge_l: f64,
    pub win_rate: f64,
    pub mode: String,
    pub temperature: f64,
    pub n_samples: usize,
}

/// All metrics from one set of generations.
pub fn evaluate<F: Scalar>(
    params: &ModelParams<F>,
    dataset: &Dataset,
    method: &str,
    gen_config: &GenerationConfig,
    n_repeats: usize,
    seed: u64,
    workers: usize,
) -> Result<EvalRow, EvalError> {
    if n_repeats == 0 {
        return Err(EvalError::NoRepeats);
    }
    let task = dataset.task().ok();
    let gens = generate_texts(params, dataset, gen_config, n_repeats, seed, workers)?;
    let refs = reference_texts(dataset)?;
    let truths = oracle_truths(dataset, task)?;
    let em = exact_match_of(&gens, &refs);
    let total = (gens.len() * refs.len()).max(1) as f64;
    let mean_rouge = |order| {
        gens.iter()
            .flat_map(|texts| texts.iter().zip(&refs))
            .map(|(g, r)| rouge_f1(&spaced(g), &spaced(r), order))
            .sum::<f64>()
            / total
    };
    let wins = gens.iter().map(|texts| win_rate(task, &truths, texts, &refs)).sum::<f64>() / gens.len() as f64;
    Ok(EvalRow {
        method: method.into(),
        task: dataset.task_name.clone(),
        exact_match: em.mean,
        exact_match_per_repeat: em.per_repeat,
        rouge1: mean_rouge(RougeOrder::One),
        rouge2: mean_rouge(RougeOrder::Two),
        rouge_l: mean_rouge(RougeOrder::L),
        win_rate: wins,
        mode: match gen_config.mode {
            DecodeMode::Greedy => "greedy".into(),
            DecodeMode::Sample => "sample".into(),
        },
        temperature: gen_config.temperature,
        n_samples: refs.len() * n_repeats,
    })
}

pub fn write_eval_report(path: &Path, rows: &[EvalRow]) -> Result<(), EvalError> {
    Ok(write_records(path, rows)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Linear-interpolation quantile of ascending `sorted` at `q` in [0, 1].
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            min: quantile(&v, 0.0),
            q1: quantile(&v, 0.25),
            median: quantile(&v, 0.5),
            q3: quantile(&v, 0.75),
            max: quantile(&v, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceDistribution {
    pub prompt_id: String,
    pub method: String,
    pub distances: Vec<f64>,
    pub summary: Quartiles,
}

/// Mean final-layer hidden state over the positions holding `response` in
/// the sequence `BOS prompt response`.
pub fn response_embedding<F: Scalar>(
    params: &ModelParams<F>,
    prompt: &[TokenId],
    response: &[TokenId],
) -> Result<Vec<f64>, EvalError> {
    let d = params.config.d_model;
    let mut ids = Vec::with_capacity(1 + prompt.len() + response.len());
    ids.push(BOS);
    ids.extend_from_slice(prompt);
    ids.extend_from_slice(response);
    let hidden = forward_hidden(params, &ids)?;
    let start = 1 + prompt.len();
    let mut mean = vec![0.0; d];
    for row in hidden.chunks(d).skip(start) {
        for (m, h) in mean.iter_mut().zip(row) {
            *m += h.to_f64().unwrap_or(f64::NAN);
        }
    }
    let n = response.len().max(1) as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// `1 - cos(a, b)`, clamped at 0; 1 when either vector is zero.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>();
    let nb = b.iter().map(|x| x * x).sum::<f64>();
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na * nb).sqrt()).max(0.0)
}

/// Distances between `n_samples` sampled responses and the reference, all
/// embedded by the same parameters. Sample `k` draws from the stream
/// `(seed, "distance/{id}/{k}")`.
#[allow(clippy::too_many_arguments)]
pub fn embedding_distance_distribution<F: Scalar>(
    params: &ModelParams<F>,
    example: &Example,
    method: &str,
    n_samples: usize,
    gen_config: &GenerationConfig,
    seed: u64,
    workers: usize,
) -> Result<DistanceDistribution, EvalError> {
    if n_samples == 0 {
        return Err(EvalError::NoSamples);
    }
    let reference = response_embedding(params, &example.prompt, &example.continuation)?;
    let prefix = prefix_of(example);
    let ks: Vec<usize> = (0..n_samples).collect();
    let distances = ordered_map(workers, &ks, |_, k| -> Result<f64, EvalError> {
        let mut rng = stream(seed, &format!("distance/{}/{k}", example.id));
        let z = generate(params, &prefix, gen_config, &mut rng)?.tokens;
        let emb = response_embedding(params, &example.prompt, &z)?;
        Ok(cosine_distance(&emb, &reference))
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    Ok(DistanceDistribution {
        prompt_id: example.id.clone(),
        method: method.into(),
        summary: Quartiles::of(&distances),
        distances,
    })
}

pub fn write_distances(path: &Path, items: &[DistanceDistribution]) -> Result<(), EvalError> {
    Ok(write_records(path, items)?)
}

pub const QUARTILE_HEADER: &str = "prompt_id,method,n,min,q1,median,q3,max";

pub fn write_quartile_csv(path: &Path, items: &[DistanceDistribution]) -> Result<(), EvalError> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{QUARTILE_HEADER}")?;
    for d in items {
        let s = &d.summary;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            d.prompt_id,
            d.method,
            d.distances.len(),
            s.min,
            s.q1,
            s.median,
            s.q3,
            s.max
        )?;
    }
    Ok(())
}
