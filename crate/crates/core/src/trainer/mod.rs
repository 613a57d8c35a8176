//! Training loops: supervised warmup, offline mixed-continuation training,
//! reference-answer correction, and the online scheduled-sampling reference.
//!
//! Every loop draws its minibatches from named RNG streams of the config seed,
//! so a `(config, dataset, initial params)` triple fully determines the run.
//! The offline modes freeze the parameters, build their auxiliary dataset,
//! then run `inner_steps` combined updates; a single learning-rate schedule
//! spans all `iterations * inner_steps` combined updates.

pub mod bench;
pub mod config;
pub mod optim;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::corpus::{Dataset, Example};
use crate::losses::{bash_loss, combined_step_loss, sft_loss, sft_with_template_loss, AuxBatch, LossError, LossGrads};
use crate::mixing::{build_ds, mix_continuation, write_ds, MixConfig, MixError, MixedExample};
use crate::model::{save_checkpoint, ModelError, ModelParams};
use crate::rac::{build_dr, write_dr, RacError, RacExample, RacTemplate};
use crate::rng::{derive_seed, stream, RngState, StreamRng};
use crate::sampler::GenerationConfig;

pub use config::{ConfigError, RunConfig, TrainConfig, TrainMode, CONFIG_KEYS};
pub use optim::{optimizer_step, AdamWConfig, LrSchedule, NonFiniteGradient, OptimizerState, ScheduleKind};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("parameters have not been through supervised warmup")]
    NotWarmed,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("diverged at step {step} ({phase}): {detail}; last good checkpoint: {}", checkpoint.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    Diverged {
        step: usize,
        phase: String,
        detail: String,
        checkpoint: Option<PathBuf>,
    },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Mix(#[from] MixError),
    #[error(transparent)]
    Rac(#[from] RacError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One optimizer update.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: String,
    pub lr: f64,
    pub loss_total: f64,
    pub loss_sft: Option<f64>,
    pub loss_aux: Option<f64>,
    pub unmasked_token_count: usize,
    pub wall_ms: f64,
}

/// One offline dataset construction.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildRecord {
    pub iteration: usize,
    pub kind: String,
    pub examples: usize,
    pub skipped: usize,
    /// Generated tokens (mixing) or unmasked positions (correction).
    pub signal_tokens: usize,
    pub wall_ms: f64,
    pub artifact: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub rows: Vec<MetricsRow>,
    pub builds: Vec<BuildRecord>,
    pub checkpoints: Vec<PathBuf>,
    pub wall_ms: f64,
}

pub const METRICS_HEADER: &str = "step,phase,lr,loss_total,loss_sft,loss_aux,unmasked_token_count,wall_ms";

impl RunRecord {
    /// Appends `other`, renumbering its steps to follow ours.
    pub fn extend(&mut self, other: RunRecord) {
        let base = self.rows.last().map(|r| r.step + 1).unwrap_or(0);
        self.rows.extend(other.rows.into_iter().map(|mut r| {
            r.step += base;
            r
        }));
        self.builds.extend(other.builds);
        self.checkpoints.extend(other.checkpoints);
        self.wall_ms += other.wall_ms;
    }

    pub fn artifacts(&self) -> Vec<&Path> {
        self.builds.iter().filter_map(|b| b.artifact.as_deref()).collect()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.loss_total)
    }

    pub fn metrics_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3}\n",
                r.step,
                r.phase,
                r.lr,
                r.loss_total,
                opt(r.loss_sft),
                opt(r.loss_aux),
                r.unmasked_token_count,
                r.wall_ms
            ));
        }
        s
    }

    pub fn write_metrics(&self, path: &Path) -> std::io::Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.metrics_csv().as_bytes())
    }
}

/// Epoch-wise shuffled index stream: every index appears once per pass.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    rng: StreamRng,
}

impl BatchSampler {
    pub fn new(n: usize, rng: StreamRng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            rng,
        }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        if self.order.is_empty() {
            return out;
        }
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Offline auxiliary data consumed by one block of combined steps.
#[derive(Debug, Clone)]
pub enum AuxSet {
    /// Supervised loss only.
    None,
    Bash(Vec<MixedExample>),
    Rac(Vec<RacExample>),
}

/// In the template phase, every this-many-th example of a batch is also
/// shown in its reference-template view.
pub const TEMPLATE_EVERY: usize = 2;

/// Length of the template phase relative to `warmup_steps`.
pub const TEMPLATE_FRACTION: f64 = 0.2;

/// Steps in the template phase that follows a warmup of `warmup_steps`.
pub fn template_steps(warmup_steps: usize) -> usize {
    (warmup_steps as f64 * TEMPLATE_FRACTION).round() as usize
}

/// Mutable state of a run: parameters, optimizer and the metrics so far.
struct Session<'a> {
    params: ModelParams<f32>,
    opt: OptimizerState,
    record: RunRecord,
    config: &'a TrainConfig,
    out: Option<&'a Path>,
    rng_state: RngState,
}

impl<'a> Session<'a> {
    fn new(params: ModelParams<f32>, config: &'a TrainConfig, out: Option<&'a Path>) -> Self {
        let opt = OptimizerState::for_layout(config.adamw(), &params.layout());
        Self {
            params,
            opt,
            record: RunRecord::default(),
            config,
            out,
            rng_state: RngState::capture(&stream(config.seed, "run")),
        }
    }

    fn checkpoint(&mut self, name: &str) -> Result<(), TrainError> {
        if let Some(dir) = self.out {
            let path = dir.join(name);
            save_checkpoint(&path, &self.params, &self.rng_state)?;
            self.record.checkpoints.push(path);
        }
        Ok(())
    }

    /// Applies one update from `lg`, or aborts the run if it is non-finite.
    fn apply(&mut self, phase: &str, lr: f64, lg: LossGrads<f32>, started: Instant) -> Result<(), TrainError> {
        let step = self.record.rows.len();
        let bad = if !lg.loss.value.is_finite() {
            Some(format!("loss {}", lg.loss.value))
        } else {
            optimizer_step(&mut self.params.data, &lg.grads, &mut self.opt, lr)
                .err()
                .map(|e| format!("non-finite gradient at parameter {}", e.index))
        };
        if let Some(detail) = bad {
            let checkpoint = match self.out {
                Some(dir) => {
                    let path = dir.join("last_good.ckpt");
                    save_checkpoint(&path, &self.params, &self.rng_state)?;
                    Some(path)
                }
                None => None,
            };
            return Err(TrainError::Diverged {
                step,
                phase: phase.into(),
                detail,
                checkpoint,
            });
        }
        let aux = ["bash", "rac", "scs"].iter().find_map(|n| lg.loss.component(n));
        self.record.rows.push(MetricsRow {
            step,
            phase: phase.into(),
            lr,
            loss_total: lg.loss.value,
            loss_sft: lg.loss.component("sft"),
            loss_aux: aux,
            unmasked_token_count: lg.loss.token_count,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }

    /// Plain supervised steps, then (with `template_warmup`) a short phase on
    /// a fresh optimizer that also shows template views. Template views from
    /// the start stall learning of the task itself.
    fn warmup(&mut self, dataset: &Dataset) -> Result<(), TrainError> {
        let c = self.config;
        self.sft_steps(dataset, c.warmup_steps, "sft/batches", "sft", false)?;
        let extra = template_steps(c.warmup_steps);
        if c.template_warmup && extra > 0 {
            self.opt.reset();
            self.sft_steps(dataset, extra, "sft/template-batches", "sft-template", true)?;
        }
        self.params.sft_warmed = true;
        self.checkpoint("sft.ckpt")
    }

    fn sft_steps(
        &mut self,
        dataset: &Dataset,
        steps: usize,
        label: &str,
        phase: &str,
        template: bool,
    ) -> Result<(), TrainError> {
        let c = self.config;
        let schedule = LrSchedule::new(c.schedule, c.lr, steps, c.lr_warmup_fraction);
        let mut sampler = BatchSampler::new(dataset.len(), stream(c.seed, label));
        for i in 0..steps {
            let t0 = Instant::now();
            let batch = pick(&dataset.examples, &sampler.next_batch(c.batch_size));
            let lg = if template {
                sft_with_template_loss(&self.params, &batch, &RacTemplate, TEMPLATE_EVERY)?
            } else {
                sft_loss(&self.params, &batch)?
            };
            self.apply(phase, schedule.lr(i), lg, t0)?;
        }
        self.rng_state = sampler.rng_state();
        Ok(())
    }

    /// `steps` combined updates against a fixed auxiliary set. `offset` is
    /// the position of the first of them in `schedule`.
    #[allow(clippy::too_many_arguments)]
    fn combined_steps(
        &mut self,
        phase: &str,
        dataset: &Dataset,
        aux: &AuxSet,
        sft_sampler: &mut BatchSampler,
        aux_label: &str,
        schedule: &LrSchedule,
        offset: usize,
        steps: usize,
    ) -> Result<(), TrainError> {
        let c = self.config;
        let aux_len = match aux {
            AuxSet::None => 0,
            AuxSet::Bash(v) => v.len(),
            AuxSet::Rac(v) => v.len(),
        };
        let mut aux_sampler = BatchSampler::new(aux_len, stream(c.seed, aux_label));
        for i in 0..steps {
            let t0 = Instant::now();
            let sft_batch = pick(&dataset.examples, &sft_sampler.next_batch(c.batch_size));
            let aux_idx = aux_sampler.next_batch(c.batch_size);
            let lg = match aux {
                AuxSet::Bash(v) if !v.is_empty() => {
                    combined_step_loss(&self.params, &sft_batch, AuxBatch::Bash(&pick(v, &aux_idx)), c.include_sft_loss)?
                }
                AuxSet::Rac(v) if !v.is_empty() => {
                    combined_step_loss(&self.params, &sft_batch, AuxBatch::Rac(&pick(v, &aux_idx)), c.include_sft_loss)?
                }
                _ => sft_loss(&self.params, &sft_batch)?,
            };
            self.apply(phase, schedule.lr(offset + i), lg, t0)?;
        }
        self.rng_state = sft_sampler.rng_state();
        Ok(())
    }

    fn post_warmup_schedule(&self) -> LrSchedule {
        let c = self.config;
        LrSchedule::new(c.schedule, c.lr, c.iterations * c.inner_steps, c.lr_warmup_fraction)
    }

    fn offline_iterations(&mut self, dataset: &Dataset, kind: OfflineKind) -> Result<(), TrainError> {
        let c = self.config;
        let phase = kind.name();
        let schedule = self.post_warmup_schedule();
        let mut sft_sampler = BatchSampler::new(dataset.len(), stream(c.seed, &format!("{phase}/sft-batches")));
        for h in 0..c.iterations {
            let t0 = Instant::now();
            let build_seed = derive_seed(c.seed, &format!("{phase}/build/{h}"));
            let (aux, mut build) = match kind {
                OfflineKind::Bash => {
                    let mix = MixConfig {
                        beta: c.beta,
                        temperature: c.gen_temperature,
                        seed: build_seed,
                    };
                    let report = build_ds(&self.params, dataset, &mix, c.workers)?;
                    let signal = report.items.iter().map(|m| m.generated_count()).sum();
                    let artifact = match self.out {
                        Some(dir) => {
                            let p = dir.join(format!("ds_iter{h}.jsonl"));
                            write_ds(&p, &dataset.task_name, dataset.seed, &report.items)?;
                            Some(p)
                        }
                        None => None,
                    };
                    let b = BuildRecord {
                        iteration: h,
                        kind: "ds".into(),
                        examples: report.items.len(),
                        skipped: report.skipped.len(),
                        signal_tokens: signal,
                        wall_ms: 0.0,
                        artifact,
                    };
                    (AuxSet::Bash(report.items), b)
                }
                OfflineKind::Rac => {
                    let gen = rac_generation_config(dataset, c);
                    let report = build_dr(&self.params, dataset, &gen, &RacTemplate, build_seed, c.workers)?;
                    let signal = report.items.iter().map(|r| r.unmasked()).sum();
                    let artifact = match self.out {
                        Some(dir) => {
                            let p = dir.join(format!("dr_iter{h}.jsonl"));
                            write_dr(&p, &dataset.task_name, dataset.seed, &report.items)?;
                            Some(p)
                        }
                        None => None,
                    };
                    let b = BuildRecord {
                        iteration: h,
                        kind: "dr".into(),
                        examples: report.items.len(),
                        skipped: report.skipped.len(),
                        signal_tokens: signal,
                        wall_ms: 0.0,
                        artifact,
                    };
                    (AuxSet::Rac(report.items), b)
                }
            };
            build.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
            self.record.builds.push(build);
            self.combined_steps(
                phase,
                dataset,
                &aux,
                &mut sft_sampler,
                &format!("{phase}/aux-batches/{h}"),
                &schedule,
                h * c.inner_steps,
                c.inner_steps,
            )?;
        }
        Ok(())
    }

    fn scs_steps(&mut self, dataset: &Dataset, steps: usize, label: &str) -> Result<(), TrainError> {
        let c = self.config;
        let schedule = LrSchedule::new(c.schedule, c.lr, steps, c.lr_warmup_fraction);
        let mut sampler = BatchSampler::new(dataset.len(), stream(c.seed, label));
        let mix = MixConfig {
            beta: c.beta,
            temperature: c.gen_temperature,
            seed: c.seed,
        };
        for i in 0..steps {
            let t0 = Instant::now();
            let batch = pick(&dataset.examples, &sampler.next_batch(c.batch_size));
            let mixed = mix_batch(&self.params, &batch, &mix, &format!("scs/{i}"))?;
            let mut lg = bash_loss(&self.params, &mixed)?;
            lg.loss.components = vec![("scs".into(), lg.loss.value)];
            self.apply("scs", schedule.lr(i), lg, t0)?;
        }
        self.rng_state = sampler.rng_state();
        Ok(())
    }

    fn finish(mut self, started: Instant) -> (ModelParams<f32>, RunRecord) {
        self.record.wall_ms = started.elapsed().as_secs_f64() * 1e3;
        (self.params, self.record)
    }
}

#[derive(Debug, Clone, Copy)]
enum OfflineKind {
    Bash,
    Rac,
}

impl OfflineKind {
    fn name(self) -> &'static str {
        match self {
            OfflineKind::Bash => "bash",
            OfflineKind::Rac => "rac",
        }
    }
}

/// Mixes a minibatch against the current parameters; each example gets the
/// stream `(mix.seed, "{tag}/{id}")`.
pub fn mix_batch(
    params: &ModelParams<f32>,
    batch: &[Example],
    mix: &MixConfig,
    tag: &str,
) -> Result<Vec<MixedExample>, MixError> {
    batch
        .iter()
        .map(|e| {
            let mut rng = stream(mix.seed, &format!("{tag}/{}", e.id));
            mix_continuation(params, e, mix, &mut rng)
        })
        .collect()
}

/// Response settings for correction data: sampling at the configured
/// temperature, capped at `max_new_tokens` or, when that is 0, two tokens
/// beyond the longest continuation.
pub fn rac_generation_config(dataset: &Dataset, config: &TrainConfig) -> GenerationConfig {
    let cap = if config.max_new_tokens > 0 {
        config.max_new_tokens
    } else {
        dataset.max_continuation_len() + 2
    };
    GenerationConfig::sample(cap, config.gen_temperature)
}

fn check(dataset: &Dataset, config: &TrainConfig) -> Result<(), TrainError> {
    let problems = config.problems();
    if !problems.is_empty() {
        return Err(ConfigError(problems).into());
    }
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    Ok(())
}

/// `warmup_steps` supervised updates, followed by the template phase when
/// `template_warmup` is set. Marks the parameters as warmed when at
/// least one step ran; with zero steps the parameters come back unchanged.
pub fn train_sft(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    check(dataset, config)?;
    let started = Instant::now();
    let mut s = Session::new(params, config, out);
    if config.warmup_steps > 0 {
        s.warmup(dataset)?;
    }
    Ok(s.finish(started))
}

/// Offline scheduled sampling: `iterations` rounds of {freeze, build the
/// mixed dataset, `inner_steps` combined updates}.
pub fn train_bash(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    offline(params, dataset, config, out, OfflineKind::Bash)
}

/// Reference-answer correction: `iterations` rounds of {freeze, build the
/// correction dataset, `inner_steps` combined updates}.
pub fn train_rac(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    offline(params, dataset, config, out, OfflineKind::Rac)
}

fn offline(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
    kind: OfflineKind,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    check(dataset, config)?;
    if !params.sft_warmed {
        return Err(TrainError::NotWarmed);
    }
    let started = Instant::now();
    let mut s = Session::new(params, config, out);
    s.offline_iterations(dataset, kind)?;
    s.checkpoint(&format!("{}.ckpt", kind.name()))?;
    Ok(s.finish(started))
}

/// `inner_steps` combined updates against a fixed, caller-supplied auxiliary
/// set, using the same batch streams and schedule as the first iteration of
/// the offline trainers. `AuxSet::None` gives the supervised-only trajectory
/// with identical minibatches.
pub fn train_combined(
    params: ModelParams<f32>,
    dataset: &Dataset,
    aux: &AuxSet,
    config: &TrainConfig,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    check(dataset, config)?;
    let started = Instant::now();
    let mut s = Session::new(params, config, None);
    let schedule = s.post_warmup_schedule();
    let mut sft_sampler = BatchSampler::new(dataset.len(), stream(config.seed, "combined/sft-batches"));
    s.combined_steps(
        "combined",
        dataset,
        aux,
        &mut sft_sampler,
        "combined/aux-batches/0",
        &schedule,
        0,
        config.inner_steps,
    )?;
    Ok(s.finish(started))
}

/// Online scheduled sampling: every update mixes its own minibatch against
/// the current parameters and trains on targets `y` in the mixed context.
/// Runs `warmup_steps` updates over the same minibatches as [`train_sft`],
/// so `beta = 0` reproduces it exactly when `template_warmup` is off.
pub fn train_scs_online(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    check(dataset, config)?;
    let started = Instant::now();
    let mut s = Session::new(params, config, out);
    s.scs_steps(dataset, config.warmup_steps, "sft/batches")?;
    s.params.sft_warmed = true;
    s.checkpoint("scs.ckpt")?;
    Ok(s.finish(started))
}

/// The full schedule for `config.mode`: supervised warmup, then (except in
/// `sft_only`) `iterations * inner_steps` further updates of the chosen kind.
/// Optimizer moments carry over the warmup boundary unless
/// `reset_optimizer` is set.
pub fn run_training(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    check(dataset, config)?;
    let started = Instant::now();
    let mut s = Session::new(params, config, out);
    if config.warmup_steps > 0 {
        s.warmup(dataset)?;
    }
    if config.mode != TrainMode::SftOnly {
        if !s.params.sft_warmed {
            return Err(TrainError::NotWarmed);
        }
        if config.reset_optimizer {
            s.opt.reset();
        }
        match config.mode {
            TrainMode::Bash => s.offline_iterations(dataset, OfflineKind::Bash)?,
            TrainMode::Rac => s.offline_iterations(dataset, OfflineKind::Rac)?,
            TrainMode::ScsOnline => s.scs_steps(dataset, config.iterations * config.inner_steps, "scs/batches")?,
            TrainMode::SftOnly => unreachable!(),
        }
        s.checkpoint(&format!("{}.ckpt", config.mode))?;
    }
    Ok(s.finish(started))
}

/// Supervised baseline matched to [`run_training`] in update count: warmup,
/// then `iterations * inner_steps` more supervised updates on a fresh
/// schedule.
pub fn run_sft_baseline(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    let (warm, mut record) = train_sft(params, dataset, config, None)?;
    let (params, rest) = continue_sft(warm, dataset, config, out)?;
    record.extend(rest);
    Ok((params, record))
}

/// The post-warmup half of [`run_sft_baseline`]: `iterations * inner_steps`
/// plain supervised updates with a fresh optimizer, starting from warmed
/// parameters.
pub fn continue_sft(
    params: ModelParams<f32>,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(ModelParams<f32>, RunRecord), TrainError> {
    check(dataset, config)?;
    let started = Instant::now();
    let mut s = Session::new(params, config, out);
    s.sft_steps(dataset, config.iterations * config.inner_steps, "sft-continued/batches", "sft", false)?;
    s.checkpoint("sft_baseline.ckpt")?;
    Ok(s.finish(started))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_covers_each_index_once_per_pass() {
        let mut s = BatchSampler::new(10, stream(1, "t"));
        let mut seen: Vec<usize> = s.next_batch(4);
        seen.extend(s.next_batch(6));
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(s.next_batch(25).len(), 25);
        assert!(BatchSampler::new(0, stream(1, "t")).next_batch(3).is_empty());
    }

    #[test]
    fn record_extension_renumbers_steps() {
        let row = |step| MetricsRow {
            step,
            phase: "sft".into(),
            lr: 0.0,
            loss_total: 1.0,
            loss_sft: Some(1.0),
            loss_aux: None,
            unmasked_token_count: 3,
            wall_ms: 0.5,
        };
        let mut a = RunRecord {
            rows: vec![row(0), row(1)],
            ..RunRecord::default()
        };
        a.extend(RunRecord {
            rows: vec![row(0), row(1)],
            ..RunRecord::default()
        });
        let steps: Vec<usize> = a.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
        let csv = a.metrics_csv();
        assert!(csv.starts_with(METRICS_HEADER));
        assert!(csv.lines().nth(1).unwrap().starts_with("0,sft,0,1,1,,3,"));
    }
}
