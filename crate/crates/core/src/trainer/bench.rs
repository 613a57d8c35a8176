//! Cost of online scheduled sampling against offline mixing.
//!
//! Both sides train on the same minibatch indices with the same loss. The
//! online step mixes its batch against the current weights inside the step;
//! the offline step reads pre-built mixed examples, whose construction is
//! timed separately as the build phase.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::losses::bash_loss;
use crate::mixing::{build_ds, MixConfig};
use crate::model::ModelParams;
use crate::rng::stream;

use super::{mix_batch, optimizer_step, pick, BatchSampler, OptimizerState, TrainConfig, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub batch_size: usize,
    pub batches: usize,
    /// Offline build of the whole mixed dataset.
    pub bash_build_ms: f64,
    pub bash_build_examples: usize,
    /// Per-batch wall time of an offline training step (fastest of
    /// [`STEP_REPEATS`]).
    pub bash_step_ms: Vec<f64>,
    /// Per-batch wall time of an online step, mixing included.
    pub scs_step_ms: Vec<f64>,
}

impl BenchReport {
    pub fn mean(v: &[f64]) -> f64 {
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// Batches on which the online step was strictly slower.
    pub fn scs_slower_count(&self) -> usize {
        self.scs_step_ms
            .iter()
            .zip(&self.bash_step_ms)
            .filter(|(s, b)| s > b)
            .count()
    }

    pub fn all_finite_positive(&self) -> bool {
        std::iter::once(&self.bash_build_ms)
            .chain(&self.bash_step_ms)
            .chain(&self.scs_step_ms)
            .all(|t| t.is_finite() && *t > 0.0)
    }
}

type State = (ModelParams<f32>, OptimizerState);
type Step<'a> = &'a mut dyn FnMut(&mut State) -> Result<(), TrainError>;

/// Timed repeats of each step from the same starting state, alternating
/// between the two sides so a change in machine load hits both. The fastest
/// repeat is reported; every repeat computes the same update, so the states
/// afterwards are as if each step ran once.
pub const STEP_REPEATS: usize = 3;

fn fastest_pair(
    a: (&mut State, Step<'_>),
    b: (&mut State, Step<'_>),
) -> Result<(f64, f64), TrainError> {
    let (sa, step_a) = a;
    let (sb, step_b) = b;
    let (start_a, start_b) = (sa.clone(), sb.clone());
    let mut best = (f64::INFINITY, f64::INFINITY);
    for r in 0..STEP_REPEATS {
        if r > 0 {
            *sa = start_a.clone();
            *sb = start_b.clone();
        }
        let t = Instant::now();
        step_a(sa)?;
        best.0 = best.0.min(t.elapsed().as_secs_f64() * 1e3);
        let t = Instant::now();
        step_b(sb)?;
        best.1 = best.1.min(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(best)
}

/// Times `batches` online steps and `batches` offline steps, interleaved so
/// that drift in machine load hits both sides alike.
pub fn bench_scs_vs_bash(
    params: &ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    batches: usize,
) -> Result<BenchReport, TrainError> {
    super::check(dataset, config)?;
    let mix = MixConfig {
        beta: config.beta,
        temperature: config.gen_temperature,
        seed: config.seed,
    };
    let t0 = Instant::now();
    let ds = build_ds(params, dataset, &mix, config.workers)?.items;
    let bash_build_ms = t0.elapsed().as_secs_f64() * 1e3;

    let mut scs_state = (params.clone(), OptimizerState::for_layout(config.adamw(), &params.layout()));
    let mut bash_state = scs_state.clone();
    let mut sampler = BatchSampler::new(ds.len().min(dataset.len()), stream(config.seed, "bench/batches"));
    let mut scs_step_ms = Vec::with_capacity(batches);
    let mut bash_step_ms = Vec::with_capacity(batches);
    for i in 0..batches {
        let idx = sampler.next_batch(config.batch_size);
        let plain = pick(&dataset.examples, &idx);
        let mixed = pick(&ds, &idx);
        let label = format!("bench/{i}");
        let mut scs = |(p, opt): &mut State| -> Result<(), TrainError> {
            let m = mix_batch(p, &plain, &mix, &label)?;
            let lg = bash_loss(p, &m)?;
            optimizer_step(&mut p.data, &lg.grads, opt, config.lr).ok();
            Ok(())
        };
        let mut bash = |(p, opt): &mut State| -> Result<(), TrainError> {
            let lg = bash_loss(p, &mixed)?;
            optimizer_step(&mut p.data, &lg.grads, opt, config.lr).ok();
            Ok(())
        };
        let (s_ms, b_ms) = if i % 2 == 0 {
            fastest_pair((&mut scs_state, &mut scs), (&mut bash_state, &mut bash))?
        } else {
            let (b, s) = fastest_pair((&mut bash_state, &mut bash), (&mut scs_state, &mut scs))?;
            (s, b)
        };
        scs_step_ms.push(s_ms);
        bash_step_ms.push(b_ms);
    }
    Ok(BenchReport {
        batch_size: config.batch_size,
        batches,
        bash_build_ms,
        bash_build_examples: ds.len(),
        bash_step_ms,
        scs_step_ms,
    })
}
