mod common;

use common::*;
use proptest::prelude::*;
use seqmix::corpus::{gen_addition_task, gen_copy_task, Dataset, Example, Task, Vocab, EOS};
use seqmix::eval::*;
use seqmix::sampler::GenerationConfig;

#[test]
fn rouge_golden_set_is_exact() {
    for (c, r, want) in ROUGE_GOLDEN {
        let got = [
            rouge_f1(c, r, RougeOrder::One),
            rouge_f1(c, r, RougeOrder::Two),
            rouge_f1(c, r, RougeOrder::L),
        ];
        assert_eq!(got, want, "{c:?} vs {r:?}");
    }
}

proptest! {
    #[test]
    fn rouge_n_is_symmetric(a in proptest::collection::vec(0u8..4, 0..8), b in proptest::collection::vec(0u8..4, 0..8)) {
        let text = |v: &[u8]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let (a, b) = (text(&a), text(&b));
        for order in [RougeOrder::One, RougeOrder::Two, RougeOrder::L] {
            let ab = rouge_f1(&a, &b, order);
            prop_assert_eq!(ab, rouge_f1(&b, &a, order));
            prop_assert!((0.0..=1.0).contains(&ab));
        }
    }
}

/// One example per answer, each with continuation `answer` then EOS.
fn answers(texts: &[&str]) -> Dataset {
    let vocab = Vocab::default();
    Dataset {
        task_name: "copy".into(),
        seed: 0,
        examples: texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut continuation = vocab.encode(t).unwrap();
                continuation.push(EOS);
                Example {
                    id: format!("e{i}"),
                    prompt: vocab.encode("ab").unwrap(),
                    continuation,
                }
            })
            .collect(),
    }
}

/// A model that always emits `7` and never stops.
fn sevens() -> seqmix::model::ModelParams<f32> {
    let mut p = small_params(1);
    let v = p.config.vocab_size;
    let seven = Vocab::default().encode("7").unwrap()[0];
    fixed_head(&mut p, &one_hot_bias(v, seven, 50.0));
    p
}

#[test]
fn exact_match_of_a_model_that_always_answers_right() {
    let p = sevens();
    let gen = GenerationConfig::sample(4, 1.0);
    let right = exact_match_rate(&p, &answers(&["7777", "7777"]), &gen, 3, 1, 1).unwrap();
    assert_eq!(right.per_repeat, vec![1.0, 1.0, 1.0]);
    assert_eq!(right.mean, 1.0);
    let half = exact_match_rate(&p, &answers(&["7777", "777"]), &gen, 2, 1, 1).unwrap();
    assert_eq!(half.mean, 0.5);
    assert!(exact_match_rate(&p, &answers(&["7"]), &gen, 0, 1, 1).is_err());
}

#[test]
fn untrained_model_rarely_adds_correctly() {
    let d = gen_addition_task(200, 4, 3).unwrap();
    let p = seqmix::model::init_params(&seqmix::model::ModelConfig::default(), 3).unwrap();
    let em = exact_match_rate(&p, &d, &GenerationConfig::sample(8, 0.1), 3, 5, 1).unwrap();
    assert_eq!(em.per_repeat.len(), 3);
    let mean = em.per_repeat.iter().sum::<f64>() / 3.0;
    assert!((em.mean - mean).abs() < 1e-15);
    assert!(em.mean < 0.05, "{}", em.mean);
}

#[test]
fn greedy_exact_match_is_deterministic_across_workers() {
    let d = gen_copy_task(40, 2, 5, false, 3).unwrap();
    let p = small_params(9);
    let gen = GenerationConfig::greedy(7);
    let a = generate_texts(&p, &d, &gen, 1, 1, 1).unwrap();
    let b = generate_texts(&p, &d, &gen, 1, 99, 4).unwrap();
    assert_eq!(a, b);
}

#[test]
fn judge_conventions() {
    let add = Some(Task::Addition { max_digits: 4 });
    let truths: Vec<String> = vec!["12".into(), "30".into()];
    // identical to the reference everywhere: all ties
    assert_eq!(win_rate(add, &truths, &truths, &truths), 0.5);
    let corrupted: Vec<String> = vec!["13".into(), "31".into()];
    assert_eq!(win_rate(add, &truths, &truths, &corrupted), 1.0);
    let a: Vec<String> = vec!["12".into(), "31".into()];
    let b: Vec<String> = vec!["11".into(), "30".into()];
    assert_eq!(win_rate(add, &truths, &a, &b) + win_rate(add, &truths, &b, &a), 1.0);
    // other tasks score by symbol-level Rouge-L against the true answer
    assert_eq!(judge(None, "abcd", "abc", "ab"), 1.0);
    assert_eq!(judge(None, "abcd", "ab", "cd"), 0.5);
}

#[test]
fn win_rate_against_references_from_a_model() {
    let p = sevens();
    let gen = GenerationConfig::greedy(2);
    assert_eq!(win_rate_vs_reference(&p, &answers(&["77", "77"]), &gen, 1, 1).unwrap(), 0.5);
    let row = evaluate(&p, &answers(&["77", "78"]), "fixed", &gen, 2, 1, 1).unwrap();
    assert_eq!(row.exact_match, 0.5);
    assert_eq!(row.n_samples, 4);
    assert_eq!(row.rouge1, (1.0 + 0.5) / 2.0);
    assert_eq!(row.mode, "greedy");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("eval.jsonl");
    write_eval_report(&path, &[row.clone()]).unwrap();
    let back: Vec<EvalRow> = seqmix::corpus::read_records(&path).unwrap();
    assert_eq!(back, vec![row]);
}

#[test]
fn distances_are_sound_and_reproducible() {
    let d = gen_copy_task(3, 3, 5, false, 4).unwrap();
    let p = small_params(10);
    let e = &d.examples[0];
    let emb = response_embedding(&p, &e.prompt, &e.continuation).unwrap();
    assert!(cosine_distance(&emb, &emb) < 1e-12);
    assert_eq!(cosine_distance(&emb, &vec![0.0; emb.len()]), 1.0);

    let gen = GenerationConfig::sample(8, 0.7);
    let a = embedding_distance_distribution(&p, e, "sft", 64, &gen, 2, 1).unwrap();
    let b = embedding_distance_distribution(&p, e, "sft", 64, &gen, 2, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.distances.len(), 64);
    assert!(a.distances.iter().all(|x| *x >= 0.0));
    let s = a.summary;
    assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
    assert_eq!(s, Quartiles::of(&a.distances));
    assert!(embedding_distance_distribution(&p, e, "sft", 0, &gen, 2, 1).is_err());

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("q.csv");
    write_quartile_csv(&csv, &[a.clone(), b]).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), QUARTILE_HEADER);
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().nth(1).unwrap().starts_with(&format!("{},sft,64,", e.id)));
    write_distances(&dir.path().join("d.jsonl"), &[a]).unwrap();
}

#[test]
fn quartiles_interpolate_linearly() {
    let q = Quartiles::of(&[4.0, 1.0, 3.0, 2.0]);
    assert_eq!((q.min, q.q1, q.median, q.q3, q.max), (1.0, 1.75, 2.5, 3.25, 4.0));
}
