#![allow(dead_code)]

use rand::Rng;
use seqmix::corpus::{TokenId, BOS};
use seqmix::model::{init_params, loss_and_grads, ModelConfig, ModelParams, TokenSeq};
use seqmix::rng::stream;

/// A scaled-down config so tests that need many forwards stay fast.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 16,
        d_ff: 32,
        context_len: 32,
        ..ModelConfig::default()
    }
}

pub fn random_ids(seed: u64, len: usize, vocab: usize) -> Vec<TokenId> {
    let mut rng = stream(seed, "ids");
    let mut ids = vec![BOS];
    ids.extend((1..len).map(|_| rng.gen_range(6..vocab as u32)));
    ids
}

/// Random sequences with random masks (at least one position unmasked).
pub fn random_batch(seed: u64, n: usize, max_len: usize, vocab: usize) -> Vec<TokenSeq> {
    let mut rng = stream(seed, "batch");
    (0..n)
        .map(|i| {
            let len = rng.gen_range(2..=max_len);
            let inputs = random_ids(seed ^ (i as u64 + 1), len, vocab);
            let targets: Vec<TokenId> = (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect();
            let mut mask: Vec<bool> = (0..len).map(|_| rng.gen_bool(0.7)).collect();
            mask[len - 1] = true;
            TokenSeq { inputs, targets, mask }
        })
        .collect()
}

pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Central finite differences on `coords` sampled round-robin over every
/// tensor of the layout; compares against the analytic gradient.
pub fn finite_difference_check(
    params: &ModelParams<f64>,
    batch: &[TokenSeq],
    coords: usize,
    step: f64,
    seed: u64,
) -> GradCheck {
    let analytic = loss_and_grads(params, batch).unwrap().grads;
    let layout = params.layout();
    let mut rng = stream(seed, "fd-coords");
    let mut p = params.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut worst = String::new();
    for i in 0..coords {
        let t = &layout.tensors[i % layout.tensors.len()];
        let idx = t.offset + rng.gen_range(0..t.numel());
        let orig = p.data[idx];
        p.data[idx] = orig + step;
        let up = loss_and_grads(&p, batch).unwrap().loss;
        p.data[idx] = orig - step;
        let down = loss_and_grads(&p, batch).unwrap().loss;
        p.data[idx] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[idx];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel_err {
            max_rel_err = rel;
            worst = format!("{}[{}]: analytic {a:e} numeric {numeric:e}", t.name, idx - t.offset);
        }
    }
    GradCheck { checked: coords, max_rel_err, worst }
}

pub fn default_f64(seed: u64) -> ModelParams<f64> {
    init_params(&ModelConfig::default(), seed).unwrap().cast::<f64>()
}

/// Zeroes the output head and sets its bias to `bias`, so every position
/// produces exactly these logits.
pub fn fixed_head(params: &mut ModelParams<f32>, bias: &[f32]) {
    let l = params.layout();
    let v = params.config.vocab_size;
    let d = params.config.d_model;
    params.data[l.w_head..l.w_head + d * v].fill(0.0);
    params.data[l.b_head..l.b_head + v].copy_from_slice(bias);
}

pub fn one_hot_bias(vocab: usize, token: TokenId, value: f32) -> Vec<f32> {
    let mut b = vec![0.0; vocab];
    b[token as usize] = value;
    b
}

pub fn small_params(seed: u64) -> ModelParams<f32> {
    init_params(&small_config(), seed).unwrap()
}

/// Pearson chi-square statistic of `counts` against `probs`.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

/// Hand-counted Rouge cases: (candidate, reference, [rouge1, rouge2, rougeL]).
/// Each F1 is 2 * overlap / (candidate count + reference count).
pub const ROUGE_GOLDEN: [(&str, &str, [f64; 3]); 10] = [
    ("a b c", "a b c", [1.0, 1.0, 1.0]),
    ("a b", "c d", [0.0, 0.0, 0.0]),
    // unigram precision 2/3, recall 1
    ("the cat sat", "the cat", [0.8, 2.0 / 3.0, 0.8]),
    ("", "a b", [0.0, 0.0, 0.0]),
    // clipped counts; the reference has no bigram
    ("a a a", "a", [0.5, 0.0, 0.5]),
    ("a b c d", "d c b a", [1.0, 0.0, 0.25]),
    ("x y z", "x z", [0.8, 0.0, 0.8]),
    ("a b a b", "a b", [2.0 / 3.0, 0.5, 2.0 / 3.0]),
    ("a  b\tc", "a b c", [1.0, 1.0, 1.0]),
    ("p q r s", "q r s t u", [2.0 / 3.0, 4.0 / 7.0, 2.0 / 3.0]),
];
