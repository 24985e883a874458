//! `motionfx` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or model error.
//! Every run prints its effective configuration and seed to stderr as JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use motionfx::checkpoint::{load_checkpoint, save_checkpoint};
use motionfx::gradcheck::{gradcheck_reduced, TOLERANCE};
use motionfx::model::{build_model, Architecture, Model, Variant};
use motionfx::numeric::{argmax, Rng};
use motionfx::skeleton::{load_jsonl, resample_to_24, save_jsonl, GestureClass, SkeletonSequence, SEQ_LEN};
use motionfx::stabilizer::{stabilize, StabilizerConfig};
use motionfx::synth::{generate_all, make_corpus, CorpusSpec};
use motionfx::train::{compare_models, evaluate, train_with_log, Dataset, TrainConfig, VALIDATION_FRACTION};
use motionfx::vfx::{emit_timeline, stream_infer, write_timeline, TriggerConfig};

const DEFAULT_SEED: u64 = 0;

#[derive(Parser, Debug)]
#[command(
    name = "motionfx",
    version,
    about = "Skeleton gesture recognition and VFX timeline generation"
)]
struct Cli {
    /// Master seed; every run is reproducible from it and the echoed config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON file with "seed", "corpus", "stabilizer", "train" and "trigger" sections.
    /// Flags override file values, which override defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; 1 forces the single-threaded path.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print progress to stderr (repeat for more).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic gesture corpus as JSONL.
    Synth(SynthArgs),
    /// Fill gaps, remove spikes and smooth every sequence of a JSONL file.
    Stabilize(StabilizeArgs),
    /// Train one architecture and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a labeled JSONL set.
    Eval(EvalArgs),
    /// Train all architectures over several seeds and tabulate test metrics.
    Compare(CompareArgs),
    /// Finite-difference gradient check of a reduced model clone.
    Gradcheck(GradcheckArgs),
    /// Classify every sequence of a JSONL file.
    Predict(PredictArgs),
    /// Turn one keypoint stream into a timed effect list.
    Timeline(TimelineArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Sequences per class.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    rhythm_min: Option<f64>,
    #[arg(long)]
    rhythm_max: Option<f64>,
    /// Gaussian keypoint noise in image units.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    jitter: Option<f64>,
    /// Training fraction per class (used with --test-out).
    #[arg(long)]
    split: Option<f64>,
    /// Output JSONL; receives the whole corpus, or the training part with --test-out.
    #[arg(long)]
    out: PathBuf,
    /// Write the held-out test part here.
    #[arg(long)]
    test_out: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct StabilizerFlags {
    #[arg(long)]
    median_window: Option<usize>,
    #[arg(long)]
    spike_threshold: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_gap: Option<usize>,
}

#[derive(Args, Debug)]
struct StabilizeArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    stab: StabilizerFlags,
}

#[derive(Args, Debug, Default)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    /// Early-stopping patience in epochs (0 disables).
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    no_shuffle: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// its-lstm | ts-lstm | ts-lstm-no-orig | single | double
    #[arg(long, default_value = "its-lstm")]
    variant: String,
    #[arg(long)]
    train: PathBuf,
    /// Validation JSONL; without it a stratified part of --train is held out.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Fraction held out when --val is absent (0 trains on everything).
    #[arg(long, default_value_t = VALIDATION_FRACTION)]
    val_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    /// Line-delimited JSON log of epoch metrics.
    #[arg(long)]
    log: Option<PathBuf>,
    #[command(flatten)]
    train_flags: TrainFlags,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Also write the report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Comma-separated training seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [1u64, 2, 3])]
    seeds: Vec<u64>,
    /// Comma-separated variants (default: all five).
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Comparison JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    train_flags: TrainFlags,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value = "its-lstm")]
    variant: String,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long, default_value_t = 5)]
    runs: u64,
    /// Entries probed per parameter tensor.
    #[arg(long, default_value_t = 6)]
    per_tensor: usize,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// JSONL predictions (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip stabilization of the input sequences.
    #[arg(long)]
    no_stabilize: bool,
}

#[derive(Args, Debug)]
struct TimelineArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSONL file holding exactly one stream.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    consecutive: Option<usize>,
    #[arg(long)]
    refractory: Option<usize>,
    #[arg(long)]
    no_stabilize: bool,
}

#[derive(Deserialize, Default, Debug)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    corpus: Option<CorpusSpec>,
    stabilizer: Option<StabilizerConfig>,
    train: Option<TrainConfig>,
    trigger: Option<TriggerConfig>,
}

enum Failure {
    Usage(String),
    Run(motionfx::Error),
}

impl From<motionfx::Error> for Failure {
    fn from(e: motionfx::Error) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn check(r: motionfx::Result<()>) -> CliResult<()> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn parse_variant(s: &str) -> CliResult<Variant> {
    s.parse().map_err(|e: motionfx::Error| Failure::Usage(e.to_string()))
}

struct Ctx {
    seed: u64,
    file: FileConfig,
    verbose: u8,
}

impl Ctx {
    fn echo(&self, command: &str, config: serde_json::Value) {
        eprintln!("{}", json!({"command": command, "seed": self.seed, "config": config}));
    }

    fn stabilizer(&self, flags: &StabilizerFlags) -> CliResult<StabilizerConfig> {
        let mut c = self.file.stabilizer.unwrap_or_default();
        set(&mut c.median_window, flags.median_window);
        set(&mut c.spike_threshold, flags.spike_threshold);
        set(&mut c.alpha, flags.alpha);
        set(&mut c.max_gap, flags.max_gap);
        check(c.validate())?;
        Ok(c)
    }

    fn train_config(&self, flags: &TrainFlags) -> CliResult<TrainConfig> {
        let mut c = self.file.train.unwrap_or_default();
        c.seed = self.seed;
        set(&mut c.max_epochs, flags.epochs);
        set(&mut c.learning_rate, flags.lr);
        set(&mut c.batch_size, flags.batch);
        set(&mut c.dropout, flags.dropout);
        if let Some(p) = flags.patience {
            c.patience = (p > 0).then_some(p);
        }
        if flags.no_shuffle {
            c.shuffle = false;
        }
        check(c.validate())?;
        Ok(c)
    }
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn run_synth(ctx: &Ctx, a: &SynthArgs) -> CliResult<()> {
    let mut spec = ctx.file.corpus.unwrap_or_default();
    spec.seed = ctx.seed;
    set(&mut spec.n_per_class, a.n);
    set(&mut spec.rhythm_range.0, a.rhythm_min);
    set(&mut spec.rhythm_range.1, a.rhythm_max);
    set(&mut spec.noise_sigma, a.sigma);
    set(&mut spec.amplitude_jitter, a.jitter);
    set(&mut spec.split, a.split);
    check(spec.validate())?;
    ctx.echo("synth", to_value(&spec));
    match &a.test_out {
        None => {
            let all = generate_all(&spec)?;
            save_jsonl(&all, &a.out)?;
            eprintln!("wrote {} sequences to {}", all.len(), a.out.display());
        }
        Some(test_path) => {
            let (train, test) = make_corpus(&spec)?;
            save_jsonl(&train, &a.out)?;
            save_jsonl(&test, test_path)?;
            eprintln!(
                "wrote {} training sequences to {} and {} test sequences to {}",
                train.len(),
                a.out.display(),
                test.len(),
                test_path.display()
            );
        }
    }
    Ok(())
}

fn run_stabilize(ctx: &Ctx, a: &StabilizeArgs) -> CliResult<()> {
    let cfg = ctx.stabilizer(&a.stab)?;
    ctx.echo("stabilize", to_value(&cfg));
    let seqs = load_jsonl(&a.input)?;
    let out: Vec<SkeletonSequence> = seqs
        .iter()
        .map(|s| stabilize(s, &cfg))
        .collect::<motionfx::Result<_>>()?;
    save_jsonl(&out, &a.out)?;
    eprintln!("stabilized {} sequences", out.len());
    Ok(())
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Ok(Dataset::from_sequences(&load_jsonl(path)?)?)
}

fn run_train(ctx: &Ctx, a: &TrainArgs) -> CliResult<()> {
    let variant = parse_variant(&a.variant)?;
    let cfg = ctx.train_config(&a.train_flags)?;
    if a.val.is_none() && !(0.0..1.0).contains(&a.val_fraction) {
        return usage(format!("--val-fraction {} outside [0, 1)", a.val_fraction));
    }
    ctx.echo(
        "train",
        json!({"variant": variant, "train": to_value(&cfg), "val_fraction": a.val_fraction}),
    );
    let full = load_dataset(&a.train)?;
    let (fit, val) = match &a.val {
        Some(p) => (full, load_dataset(p)?),
        None if a.val_fraction > 0.0 => {
            full.stratified_split(a.val_fraction, &mut Rng::new(ctx.seed).split("validation"))
        }
        None => {
            let empty = full.subset(&[]);
            (full, empty)
        }
    };
    let model = build_model(&Architecture::for_variant(variant), &Rng::new(ctx.seed).split("init"))?;
    let mut log = match &a.log {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(motionfx::Error::from)?)),
        None => None,
    };
    let mut log_err = None;
    let verbose = ctx.verbose;
    let (model, hist) = train_with_log(model, &fit, &val, &cfg, |m| {
        let line = json!({"variant": variant, "seed": cfg.seed, "metrics": to_value(m)});
        if let Some(w) = log.as_mut() {
            if let Err(e) = writeln!(w, "{line}") {
                log_err.get_or_insert(e);
            }
        }
        if verbose > 0 {
            eprintln!("{line}");
        }
    })?;
    if let Some(w) = log.as_mut() {
        if let Err(e) = w.flush() {
            log_err.get_or_insert(e);
        }
    }
    if let Some(e) = log_err {
        return Err(Failure::Run(e.into()));
    }
    save_checkpoint(&model, &a.out)?;
    let summary = json!({
        "epochs": hist.len(),
        "best_epoch": hist.best_epoch,
        "last": hist.epochs.last().map(to_value),
        "checkpoint": a.out.display().to_string(),
    });
    println!("{summary}");
    Ok(())
}

fn run_eval(ctx: &Ctx, a: &EvalArgs) -> CliResult<()> {
    ctx.echo(
        "eval",
        json!({"model": a.model.display().to_string(), "data": a.data.display().to_string()}),
    );
    let model = load_checkpoint(&a.model)?;
    let report = evaluate(&model, &load_dataset(&a.data)?)?;
    let text = serde_json::to_string_pretty(&report).map_err(motionfx::Error::from)?;
    if let Some(p) = &a.out {
        std::fs::write(p, &text).map_err(motionfx::Error::from)?;
    }
    println!("{text}");
    Ok(())
}

fn run_compare(ctx: &Ctx, a: &CompareArgs) -> CliResult<()> {
    let cfg = ctx.train_config(&a.train_flags)?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.iter().map(|v| parse_variant(v)).collect::<CliResult<_>>()?
    };
    if a.seeds.is_empty() {
        return usage("--seeds needs at least one seed");
    }
    ctx.echo(
        "compare",
        json!({"train": to_value(&cfg), "seeds": a.seeds, "variants": variants}),
    );
    let train = load_dataset(&a.train)?;
    let test = load_dataset(&a.test)?;
    let verbose = ctx.verbose;
    let cmp = compare_models(&train, &test, &cfg, &a.seeds, &variants, |v, s, m| {
        if verbose > 0 {
            eprintln!("{}", json!({"variant": v, "seed": s, "metrics": to_value(m)}));
        }
    })?;
    if let Some(p) = &a.out {
        let text = serde_json::to_string_pretty(&cmp).map_err(motionfx::Error::from)?;
        std::fs::write(p, text).map_err(motionfx::Error::from)?;
    }
    print!("{}", cmp.render());
    Ok(())
}

fn run_gradcheck(ctx: &Ctx, a: &GradcheckArgs) -> CliResult<()> {
    let variant = parse_variant(&a.variant)?;
    if a.runs == 0 || a.per_tensor == 0 {
        return usage("--runs and --per-tensor must be at least 1");
    }
    ctx.echo(
        "gradcheck",
        json!({"variant": variant, "runs": a.runs, "per_tensor": a.per_tensor, "tolerance": TOLERANCE}),
    );
    let mut worst: f64 = 0.0;
    for seed in ctx.seed..ctx.seed + a.runs {
        let r = gradcheck_reduced(variant, seed, a.per_tensor)?;
        println!(
            "seed {seed}: checked {} entries, max relative error {:.3e} at {}",
            r.checked, r.max_relative_error, r.worst
        );
        worst = worst.max(r.max_relative_error);
    }
    println!("max relative error {worst:.3e} (tolerance {TOLERANCE:e})");
    if worst < TOLERANCE {
        Ok(())
    } else {
        Err(Failure::Run(motionfx::Error::State(format!(
            "gradient check failed: {worst:.3e} >= {TOLERANCE:e}"
        ))))
    }
}

/// Stabilizes (optionally) and brings a sequence to the model's frame count.
fn prepare(seq: &SkeletonSequence, stab: Option<&StabilizerConfig>) -> motionfx::Result<SkeletonSequence> {
    let s = match stab {
        Some(cfg) => stabilize(seq, cfg)?,
        None => seq.clone(),
    };
    if s.len() == SEQ_LEN {
        Ok(s)
    } else {
        resample_to_24(&s)
    }
}

fn run_predict(ctx: &Ctx, a: &PredictArgs) -> CliResult<()> {
    let stab = ctx.stabilizer(&StabilizerFlags::default())?;
    let stab = (!a.no_stabilize).then_some(stab);
    ctx.echo("predict", json!({"stabilizer": stab.as_ref().map(to_value)}));
    let model: Model = load_checkpoint(&a.model)?;
    let mut lines = Vec::new();
    for seq in load_jsonl(&a.input)? {
        let x = prepare(&seq, stab.as_ref())?.model_tensor()?;
        let p = model.predict_proba(&[&x])?.into_vec();
        let c = argmax(&p);
        lines.push(json!({
            "id": seq.id,
            "class": c,
            "action": GestureClass::from_index(c)?.name(),
            "confidence": p[c],
            "probabilities": p,
        }));
    }
    let mut text = String::new();
    for l in &lines {
        text.push_str(&l.to_string());
        text.push('\n');
    }
    match &a.out {
        Some(path) => std::fs::write(path, text).map_err(motionfx::Error::from)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run_timeline(ctx: &Ctx, a: &TimelineArgs) -> CliResult<()> {
    let mut trig = ctx.file.trigger.clone().unwrap_or_default();
    set(&mut trig.hop, a.hop);
    set(&mut trig.threshold, a.threshold);
    set(&mut trig.consecutive, a.consecutive);
    set(&mut trig.refractory_frames, a.refractory);
    check(trig.validate())?;
    let stab = ctx.stabilizer(&StabilizerFlags::default())?;
    let stab = (!a.no_stabilize).then_some(stab);
    ctx.echo(
        "timeline",
        json!({"trigger": to_value(&trig), "stabilizer": stab.as_ref().map(to_value)}),
    );
    let model = load_checkpoint(&a.model)?;
    let streams = load_jsonl(&a.input)?;
    if streams.len() != 1 {
        return Err(Failure::Run(motionfx::Error::Data(format!(
            "{} must hold exactly one stream, found {}",
            a.input.display(),
            streams.len()
        ))));
    }
    let stream = match &stab {
        Some(cfg) => stabilize(&streams[0], cfg)?,
        None => streams[0].clone(),
    };
    let windows = stream_infer(&stream, &model, &trig)?;
    let tl = emit_timeline(&windows, &trig, stream.fps, &stream.id);
    write_timeline(&tl, &a.out)?;
    println!(
        "{}",
        json!({"windows": windows.len(), "events": tl.events.len(), "out": a.out.display().to_string()})
    );
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", p.display())))?
        }
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot configure threads: {e}")))?;
    }
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
        file,
        verbose: cli.verbose,
    };
    match &cli.command {
        Command::Synth(a) => run_synth(&ctx, a),
        Command::Stabilize(a) => run_stabilize(&ctx, a),
        Command::Train(a) => run_train(&ctx, a),
        Command::Eval(a) => run_eval(&ctx, a),
        Command::Compare(a) => run_compare(&ctx, a),
        Command::Gradcheck(a) => run_gradcheck(&ctx, a),
        Command::Predict(a) => run_predict(&ctx, a),
        Command::Timeline(a) => run_timeline(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run `motionfx --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
