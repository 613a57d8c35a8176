use rand::Rng;
use rayon::prelude::*;

use super::{extract_every, CorpusError, Dataset, Example, Special, Task, Vocab, DEFAULT_CONTEXT_LEN};
use crate::rng::{stream, StreamRng};

const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz";

fn letters(rng: &mut StreamRng, len: u64) -> String {
    (0..len)
        .map(|_| LETTERS[rng.gen_range(0..LETTERS.len() as u32) as usize] as char)
        .collect()
}

fn build(
    task: Task,
    n: usize,
    seed: u64,
    make: impl Fn(&mut StreamRng) -> (String, String) + Sync,
) -> Result<Dataset, CorpusError> {
    if n == 0 {
        return Err(CorpusError::InvalidParams("n must be at least 1".into()));
    }
    let vocab = Vocab::default();
    let name = task.to_string();
    // copy and reverse share a stream so one seed draws the same strings
    let label = match task {
        Task::Copy { .. } => "copy".to_string(),
        _ => name.clone(),
    };
    let examples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, &format!("{label}/{i}"));
            let (prompt, answer) = make(&mut rng);
            let mut continuation = vocab.encode(&answer)?;
            continuation.push(Special::Eos.id());
            Ok(Example {
                id: format!("{name}-{i:06}"),
                prompt: vocab.encode(&prompt)?,
                continuation,
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(Dataset {
        task_name: name,
        seed,
        examples,
    })
}

/// Copy (or reverse) a random letter string of length in `[min_len, max_len]`.
pub fn gen_copy_task(
    n: usize,
    min_len: usize,
    max_len: usize,
    reverse: bool,
    seed: u64,
) -> Result<Dataset, CorpusError> {
    if min_len < 1 || min_len > max_len {
        return Err(CorpusError::InvalidParams(format!(
            "need 1 <= min_len <= max_len, got {min_len}..{max_len}"
        )));
    }
    // x = s <sep>, y = s <eos>
    if 2 * (max_len + 1) > DEFAULT_CONTEXT_LEN {
        return Err(CorpusError::InvalidParams(format!(
            "max_len {max_len} exceeds the context budget of {DEFAULT_CONTEXT_LEN}"
        )));
    }
    let task = Task::Copy { reverse };
    build(task, n, seed, |rng| {
        let len = rng.gen_range(min_len as u64..=max_len as u64);
        let s = letters(rng, len);
        let prompt = format!("{s}{}", Special::Sep.marker());
        let answer = task.answer(&prompt).expect("well-formed prompt");
        (prompt, answer)
    })
}

/// `a+b=` with `a, b` uniform in `[0, 10^max_digits)`.
pub fn gen_addition_task(n: usize, max_digits: u32, seed: u64) -> Result<Dataset, CorpusError> {
    if !(1..=6).contains(&max_digits) {
        return Err(CorpusError::InvalidParams(format!(
            "max_digits must be in 1..=6, got {max_digits}"
        )));
    }
    let bound = 10u64.pow(max_digits);
    build(Task::Addition { max_digits }, n, seed, |rng| {
        let a = rng.gen_range(0..bound);
        let b = rng.gen_range(0..bound);
        (format!("{a}+{b}="), (a + b).to_string())
    })
}

/// Longest body the extract generator draws, in multiples of the stride.
const EXTRACT_BODY_STRIDES: usize = 4;

/// Every `stride`-th letter of a random body of length in `[1, 4*stride]`.
pub fn gen_extract_task(n: usize, stride: usize, seed: u64) -> Result<Dataset, CorpusError> {
    if stride < 2 {
        return Err(CorpusError::InvalidParams(format!(
            "stride must be at least 2, got {stride}"
        )));
    }
    let max_body = EXTRACT_BODY_STRIDES * stride;
    if max_body + 1 + max_body / stride + 1 > DEFAULT_CONTEXT_LEN {
        return Err(CorpusError::InvalidParams(format!(
            "stride {stride} exceeds the context budget"
        )));
    }
    build(Task::Extract { stride }, n, seed, |rng| {
        let len = rng.gen_range(1..=max_body as u64);
        let body = letters(rng, len);
        let answer = extract_every(&body, stride);
        (format!("{body}{}", Special::Sep.marker()), answer)
    })
}

/// Dispatches to the generator for `task` with the lab's default sizes.
pub fn gen_task(task: Task, n: usize, seed: u64) -> Result<Dataset, CorpusError> {
    match task {
        Task::Copy { reverse } => gen_copy_task(n, 3, 8, reverse, seed),
        Task::Addition { max_digits } => gen_addition_task(n, max_digits, seed),
        Task::Extract { stride } => gen_extract_task(n, stride, seed),
    }
}
