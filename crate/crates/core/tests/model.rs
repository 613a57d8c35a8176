mod common;

use common::*;
use seqmix::corpus::EOS;
use seqmix::model::{forward, init_params, loss_and_grads, InferenceState, ModelConfig, TokenSeq};

#[test]
fn softmax_rows_are_normalized() {
    let params = init_params(&ModelConfig::default(), 3).unwrap();
    let ids = random_ids(1, 40, params.config.vocab_size);
    let logits = forward(&params, &ids).unwrap();
    assert_eq!(logits.rows(), 40);
    for j in 0..logits.rows() {
        let row: Vec<f64> = logits.row(j).iter().map(|&v| v as f64).collect();
        assert!(row.iter().all(|v| v.is_finite()));
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let total: f64 = row.iter().map(|v| (v - max).exp() / z).sum();
        assert!((total - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn logits_are_causal() {
    let params = init_params(&ModelConfig::default(), 4).unwrap();
    let v = params.config.vocab_size;
    let ids = random_ids(2, 24, v);
    let base = forward(&params, &ids).unwrap();
    for k in [1usize, 7, 23] {
        let mut changed = ids.clone();
        changed[k] = if changed[k] == 10 { 11 } else { 10 };
        let out = forward(&params, &changed).unwrap();
        for j in 0..ids.len() {
            if j < k {
                assert_eq!(base.row(j), out.row(j), "row {j} moved after perturbing {k}");
            }
        }
        assert_ne!(base.row(k), out.row(k));
    }
}

#[test]
fn forward_is_deterministic_and_bounded() {
    let params = init_params(&ModelConfig::default(), 5).unwrap();
    let ids = random_ids(3, 16, params.config.vocab_size);
    assert_eq!(forward(&params, &ids).unwrap(), forward(&params, &ids).unwrap());
    let too_long = vec![EOS; params.config.context_len + 1];
    assert!(forward(&params, &too_long).is_err());
    assert!(forward(&params, &[999]).is_err());
}

#[test]
fn incremental_decoder_matches_full_forward_bitwise() {
    let params = init_params(&ModelConfig::default(), 6).unwrap();
    let ids = random_ids(4, 30, params.config.vocab_size);
    let full = forward(&params, &ids).unwrap();
    let mut state = InferenceState::new(&params);
    for (j, &t) in ids.iter().enumerate() {
        let row = state.feed(t).unwrap().to_vec();
        assert_eq!(row.as_slice(), full.row(j), "position {j}");
    }
    let mut prefilled = InferenceState::new(&params);
    assert_eq!(prefilled.feed_all(&ids).unwrap(), full.row(29));
}

#[test]
fn uniform_logits_give_ln_v() {
    let mut params = init_params(&ModelConfig::default(), 0).unwrap();
    let layout = params.layout();
    // zero head weights and bias: every logit row is exactly zero
    for t in layout.tensors.iter().filter(|t| t.name.starts_with("head")) {
        params.data[t.range()].fill(0.0);
    }
    let batch = random_batch(1, 6, 12, params.config.vocab_size);
    let out = loss_and_grads(&params, &batch).unwrap();
    let ln_v = (params.config.vocab_size as f64).ln();
    assert!((out.loss - ln_v).abs() < 1e-5, "{} vs {ln_v}", out.loss);
}

#[test]
fn confident_target_gives_near_zero_loss() {
    let mut params = init_params(&ModelConfig::default(), 0).unwrap();
    let layout = params.layout();
    let v = params.config.vocab_size;
    params.data[layout.b_head + 9] = 60.0;
    let batch = vec![TokenSeq {
        inputs: vec![0, 12, 13],
        targets: vec![9, 9, 9],
        mask: vec![true, true, true],
    }];
    let out = loss_and_grads(&params, &batch).unwrap();
    assert!(out.loss < 1e-10, "{}", out.loss);
    assert_eq!(out.token_count, 3);
    assert!(v > 9);
}

#[test]
fn all_masked_batch_is_zero_loss_zero_grad() {
    let params = init_params(&ModelConfig::default(), 0).unwrap();
    let mut batch = random_batch(2, 4, 10, params.config.vocab_size);
    for s in batch.iter_mut() {
        s.mask.iter_mut().for_each(|m| *m = false);
    }
    let out = loss_and_grads(&params, &batch).unwrap();
    assert_eq!(out.loss, 0.0);
    assert_eq!(out.token_count, 0);
    assert!(out.grads.iter().all(|&g| g == 0.0));
}

#[test]
fn masked_positions_do_not_contribute() {
    let params = init_params(&ModelConfig::default(), 8).unwrap();
    let batch = random_batch(3, 4, 12, params.config.vocab_size);
    let base = loss_and_grads(&params, &batch).unwrap();
    let mut altered = batch.clone();
    for s in altered.iter_mut() {
        for (t, m) in s.targets.iter_mut().zip(&s.mask) {
            if !m {
                *t = (*t + 5) % params.config.vocab_size as u32;
            }
        }
    }
    let out = loss_and_grads(&params, &altered).unwrap();
    assert_eq!(base.loss, out.loss);
    assert_eq!(base.grads, out.grads);
}

#[test]
fn misaligned_sequences_are_rejected() {
    let params = init_params(&ModelConfig::default(), 0).unwrap();
    let batch = vec![TokenSeq {
        inputs: vec![0, 7],
        targets: vec![7],
        mask: vec![true, true],
    }];
    assert!(loss_and_grads(&params, &batch).is_err());
}

#[test]
fn gradients_match_finite_differences_small_model() {
    let params = init_params(&small_config(), 11).unwrap().cast::<f64>();
    let batch = random_batch(5, 3, 10, params.config.vocab_size);
    let check = finite_difference_check(&params, &batch, 120, 1e-5, 1);
    assert!(check.max_rel_err <= 1e-4, "worst {}: {}", check.max_rel_err, check.worst);
}

#[test]
fn loss_is_deterministic() {
    let params = init_params(&ModelConfig::default(), 9).unwrap();
    let batch = random_batch(6, 9, 14, params.config.vocab_size);
    let a = loss_and_grads(&params, &batch).unwrap();
    let b = loss_and_grads(&params, &batch).unwrap();
    assert_eq!(a.loss, b.loss);
    assert_eq!(a.grads, b.grads);
}
