use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use seqmix::corpus::{read_dataset, write_dataset, Dataset, Task, Vocab, BOS};
use seqmix::eval::{evaluate, strip_eos, write_distances, write_eval_report, write_quartile_csv, embedding_distance_distribution};
use seqmix::mixing::{build_ds, write_ds, MixConfig};
use seqmix::model::{init_params, load_checkpoint, ModelParams};
use seqmix::rac::{build_dr, write_dr, RacTemplate};
use seqmix::rng::stream;
use seqmix::sampler::{generate, GenerationConfig};
use seqmix::trainer::bench::{bench_scs_vs_bash, BenchReport};
use seqmix::trainer::{rac_generation_config, run_sft_baseline, run_training, RunConfig, TrainMode};
use seqmix_cli::RunManifest;

/// A problem with the request rather than with the run: bad flags, config
/// values or input files. Exits with status 2.
#[derive(Debug)]
struct Invalid(String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(e: impl fmt::Display) -> anyhow::Error {
    Invalid(e.to_string()).into()
}

#[derive(Parser)]
#[command(name = "seqmix", version, about = "Offline scheduled sampling and reference-answer correction on a tiny transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic task dataset.
    GenCorpus(GenCorpusArgs),
    /// Train in any mode; writes checkpoints, metrics and a manifest.
    Train(TrainArgs),
    /// Build one offline dataset (mixed or correction) from a checkpoint.
    Build(BuildArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Print a continuation of one prompt.
    Sample(SampleArgs),
    /// Embedding-distance distributions of sampled responses.
    Distances(DistanceArgs),
    /// Time online scheduled sampling against offline mixed training.
    Bench(BenchArgs),
    /// Recompute the hashes recorded in a manifest.
    Verify { manifest: PathBuf },
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct GenArgs {
    /// Greedy decoding instead of sampling.
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
}

#[derive(Args)]
struct GenCorpusArgs {
    /// copy, reverse, addN or extractN.
    #[arg(long)]
    task: String,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Move the last K examples into a held-out file.
    #[arg(long, requires = "holdout_out")]
    holdout: Option<usize>,
    #[arg(long)]
    holdout_out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_parser = parse_mode)]
    mode: Option<TrainMode>,
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Start from a checkpoint instead of a fresh initialisation.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Run the supervised baseline matched in update count to the other modes.
    #[arg(long)]
    baseline: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuildKind {
    Ds,
    Dr,
}

#[derive(Args)]
struct BuildArgs {
    #[arg(value_enum)]
    kind: BuildKind,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Label for the report row; defaults to the checkpoint's file stem.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    gen: GenArgs,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    prompt: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write a manifest here.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    gen: GenArgs,
}

#[derive(Args)]
struct DistanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file whose examples are the probe prompts.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long)]
    method: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    gen: GenArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    batches: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn parse_mode(s: &str) -> Result<TrainMode, String> {
    s.parse()
}

/// Defaults, then the config file, then `--set` and the dedicated flags.
fn load_config(args: &ConfigArgs, mode: Option<TrainMode>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut errors = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        // good lines still apply, so their values are validated below too
        if let Err(e) = cfg.apply_text(&text) {
            errors.extend(e.0.into_iter().map(|m| format!("{}: {m}", path.display())));
        }
    }
    for s in &args.sets {
        match s.split_once('=') {
            Some((k, v)) => {
                if let Err(e) = cfg.set(k.trim(), v.trim()) {
                    errors.push(e);
                }
            }
            None => errors.push(format!("--set {s:?}: expected KEY=VALUE")),
        }
    }
    if let Some(m) = mode {
        cfg.train.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.train.workers = w;
    }
    if let Err(e) = cfg.validate() {
        errors.extend(e.0);
    }
    if !errors.is_empty() {
        return Err(invalid(format!("invalid configuration: {}", errors.join("; "))));
    }
    Ok(cfg)
}

fn read_data(path: &Path, context_len: usize) -> Result<Dataset> {
    let d = read_dataset(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    if d.is_empty() {
        return Err(invalid(format!("{}: no examples", path.display())));
    }
    d.validate(context_len)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(d)
}

fn read_checkpoint(path: &Path) -> Result<ModelParams<f32>> {
    Ok(load_checkpoint(path)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?
        .params)
}

fn gen_config(g: &GenArgs, default_temperature: f64, default_max: usize) -> Result<GenerationConfig> {
    let max = g.max_new_tokens.unwrap_or(default_max);
    let c = if g.greedy {
        GenerationConfig::greedy(max)
    } else {
        GenerationConfig::sample(max, g.temperature.unwrap_or(default_temperature))
    };
    c.validate().map_err(invalid)?;
    Ok(c)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(at: &Path, command: &str, config: Option<String>, inputs: &[PathBuf], outputs: &[PathBuf]) -> Result<()> {
    RunManifest::new(command, config, inputs, outputs)
        .and_then(|m| m.write(at))
        .with_context(|| format!("writing manifest {}", at.display()))
}

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<()> {
    let task: Task = a.task.parse().map_err(invalid)?;
    let d = seqmix::corpus::gen_task(task, a.n, a.seed).map_err(invalid)?;
    let mut outputs = vec![a.out.clone()];
    match (a.holdout, &a.holdout_out) {
        (Some(k), Some(held_path)) => {
            if k > d.len() {
                return Err(invalid(format!("--holdout {k} exceeds --n {}", a.n)));
            }
            let (train, held) = d.split_tail(k);
            write_dataset(&a.out, &train).with_context(|| format!("writing {}", a.out.display()))?;
            write_dataset(held_path, &held).with_context(|| format!("writing {}", held_path.display()))?;
            outputs.push(held_path.clone());
        }
        _ => write_dataset(&a.out, &d).with_context(|| format!("writing {}", a.out.display()))?,
    }
    let command = format!("gen-corpus task={task} n={} seed={} holdout={:?}", a.n, a.seed, a.holdout);
    write_manifest(&sibling_manifest(&a.out), &command, None, &[], &outputs)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.mode)?;
    let data = read_data(&a.data, cfg.model.context_len)?;
    let mut inputs = vec![a.data.clone()];
    let params = match &a.init {
        Some(p) => {
            inputs.push(p.clone());
            let params = read_checkpoint(p)?;
            if params.config != cfg.model {
                return Err(invalid(format!("{}: model shape differs from the configuration", p.display())));
            }
            params
        }
        None => init_params(&cfg.model, cfg.train.seed).map_err(invalid)?,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let (_, record) = if a.baseline {
        run_sft_baseline(params, &data, &cfg.train, Some(&a.out))?
    } else {
        run_training(params, &data, &cfg.train, Some(&a.out))?
    };
    let metrics = a.out.join("metrics.csv");
    record.write_metrics(&metrics)?;
    let snapshot = cfg.to_text();
    let config_path = a.out.join("config.txt");
    std::fs::write(&config_path, &snapshot)?;
    let mut outputs = record.checkpoints.clone();
    outputs.extend(record.artifacts().into_iter().map(Path::to_path_buf));
    outputs.push(metrics);
    outputs.push(config_path);
    if let Some(loss) = record.final_loss() {
        println!("{} steps, final loss {loss:.4}", record.rows.len());
    }
    let command = if a.baseline { "train --baseline" } else { "train" };
    write_manifest(&a.out.join("manifest.json"), command, Some(snapshot), &inputs, &outputs)
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let cfg = load_config(&a.config, None)?;
    let params = read_checkpoint(&a.checkpoint)?;
    let data = read_data(&a.data, params.config.context_len)?;
    let t = &cfg.train;
    let (n, skipped) = match a.kind {
        BuildKind::Ds => {
            let mix = MixConfig {
                beta: t.beta,
                temperature: t.gen_temperature,
                seed: t.seed,
            };
            let r = build_ds(&params, &data, &mix, t.workers)?;
            write_ds(&a.out, &data.task_name, data.seed, &r.items)
                .with_context(|| format!("writing {}", a.out.display()))?;
            (r.items.len(), r.skipped)
        }
        BuildKind::Dr => {
            let gen = rac_generation_config(&data, t);
            let r = build_dr(&params, &data, &gen, &RacTemplate, t.seed, t.workers)?;
            write_dr(&a.out, &data.task_name, data.seed, &r.items)
                .with_context(|| format!("writing {}", a.out.display()))?;
            (r.items.len(), r.skipped)
        }
    };
    for (id, reason) in &skipped {
        eprintln!("skipped {id}: {reason}");
    }
    println!("{n} examples, {} skipped", skipped.len());
    let kind = match a.kind {
        BuildKind::Ds => "ds",
        BuildKind::Dr => "dr",
    };
    write_manifest(
        &sibling_manifest(&a.out),
        &format!("build {kind}"),
        Some(cfg.to_text()),
        &[a.checkpoint, a.data],
        &[a.out],
    )
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let data = read_data(&a.data, params.config.context_len)?;
    let gen = gen_config(&a.gen, 0.7, data.max_continuation_len() + 2)?;
    if a.repeats == 0 {
        return Err(invalid("--repeats must be at least 1"));
    }
    let method = a.method.clone().unwrap_or_else(|| stem(&a.checkpoint));
    let row = evaluate(&params, &data, &method, &gen, a.repeats, a.seed, a.workers)?;
    println!(
        "{method}: exact match {:.4} {:?}, rougeL {:.4}, win rate {:.4}",
        row.exact_match, row.exact_match_per_repeat, row.rouge_l, row.win_rate
    );
    write_eval_report(&a.out, &[row]).with_context(|| format!("writing {}", a.out.display()))?;
    let command = format!(
        "eval method={method} repeats={} seed={} gen={}",
        a.repeats,
        a.seed,
        serde_json::to_string(&gen)?
    );
    write_manifest(&sibling_manifest(&a.out), &command, None, &[a.checkpoint, a.data], &[a.out])
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let vocab = Vocab::default();
    let mut prefix = vec![BOS];
    prefix.extend(vocab.encode(&a.prompt).map_err(invalid)?);
    let room = params.config.context_len.saturating_sub(prefix.len());
    let gen = gen_config(&a.gen, 1.0, room.min(32))?;
    let out = generate(&params, &prefix, &gen, &mut stream(a.seed, "sample"))
        .map_err(|e| invalid(format!("prompt: {e}")))?;
    println!("{}", vocab.decode(strip_eos(&out.tokens))?);
    if let Some(m) = &a.manifest {
        let command = format!("sample prompt={:?} seed={} gen={}", a.prompt, a.seed, serde_json::to_string(&gen)?);
        write_manifest(m, &command, None, &[a.checkpoint], &[])?;
    }
    Ok(())
}

fn cmd_distances(a: DistanceArgs) -> Result<()> {
    let params = read_checkpoint(&a.checkpoint)?;
    let prompts = read_data(&a.prompts, params.config.context_len)?;
    let gen = gen_config(&a.gen, 0.7, prompts.max_continuation_len() + 2)?;
    if a.n == 0 {
        return Err(invalid("--n must be at least 1"));
    }
    let method = a.method.clone().unwrap_or_else(|| stem(&a.checkpoint));
    let mut items = Vec::with_capacity(prompts.len());
    for e in &prompts.examples {
        let d = embedding_distance_distribution(&params, e, &method, a.n, &gen, a.seed, a.workers)?;
        let s = &d.summary;
        println!(
            "{} {method}: min {:.4} q1 {:.4} median {:.4} q3 {:.4} max {:.4}",
            d.prompt_id, s.min, s.q1, s.median, s.q3, s.max
        );
        items.push(d);
    }
    std::fs::create_dir_all(&a.out)?;
    let dist = a.out.join(format!("{method}_distances.jsonl"));
    let quart = a.out.join(format!("{method}_quartiles.csv"));
    write_distances(&dist, &items)?;
    write_quartile_csv(&quart, &items)?;
    let command = format!("distances method={method} n={} seed={} gen={}", a.n, a.seed, serde_json::to_string(&gen)?);
    write_manifest(
        &a.out.join(format!("{method}_manifest.json")),
        &command,
        None,
        &[a.checkpoint, a.prompts],
        &[dist, quart],
    )
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cfg = load_config(&a.config, None)?;
    let params = read_checkpoint(&a.checkpoint)?;
    let data = read_data(&a.data, params.config.context_len)?;
    if a.batches == 0 {
        return Err(invalid("--batches must be at least 1"));
    }
    let report = bench_scs_vs_bash(&params, &data, &cfg.train, a.batches)?;
    println!(
        "build {:.1} ms for {} examples; step ms: online {:.2}, offline {:.2}; online slower on {}/{} batches",
        report.bash_build_ms,
        report.bash_build_examples,
        BenchReport::mean(&report.scs_step_ms),
        BenchReport::mean(&report.bash_step_ms),
        report.scs_slower_count(),
        report.batches
    );
    std::fs::write(&a.out, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", a.out.display()))?;
    write_manifest(
        &sibling_manifest(&a.out),
        &format!("bench batches={}", a.batches),
        Some(cfg.to_text()),
        &[a.checkpoint, a.data],
        &[a.out],
    )
}

fn cmd_verify(path: &Path) -> Result<()> {
    let m = RunManifest::read(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let bad = m.verify();
    if !bad.is_empty() {
        anyhow::bail!("{} file(s) differ: {}", bad.len(), bad.join("; "));
    }
    println!("{}: {} files match", m.run_id, m.inputs.len() + m.outputs.len());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus(a) => cmd_gen_corpus(a),
        Command::Train(a) => cmd_train(a),
        Command::Build(a) => cmd_build(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Distances(a) => cmd_distances(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify { manifest } => cmd_verify(&manifest),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let validation = e.chain().any(|c| c.is::<Invalid>());
            let kind = if validation { "validation" } else { "runtime" };
            eprintln!("error[{kind}]: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::from(if validation { 2 } else { 3 })
        }
    }
}
