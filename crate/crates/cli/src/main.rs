//! `bcsenet` command line: feature dumps, training, evaluation, prediction and checks.

mod dataset;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bcsenet::data::{Loader, NoiseKind, Split};
use bcsenet::dsp::{fix_length, frame_count, load_wav, FeatureExtractor, HOP, WINDOW};
use bcsenet::model::{build_model, load_checkpoint, parse_lines, AttentionMode, Model, ModelConfig};
use bcsenet::nn::ForwardCtx;
use bcsenet::tensor::no_grad;
use bcsenet::train::{
    check_component, eval_noise, evaluate, history_path, softmax_rows, train, GradCheckOptions, OptimConfig,
    TrainConfig, COMPONENTS,
};
use clap::{Args, Parser, Subcommand};

use dataset::{open_dataset, Task};

const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] bcsenet::Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Parser, Debug)]
#[command(
    name = "bcsenet",
    version,
    about = "Keyword spotting with broadcasted residual networks and squeeze-excitation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Log-mel features of one WAV file
    Features {
        wav: PathBuf,
        /// write the feature blob here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and save the best checkpoint
    Train(TrainArgs),
    /// Clean accuracy of a checkpoint on one split
    Eval {
        #[command(flatten)]
        source: EvalSource,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
    },
    /// Test accuracy with colored noise mixed in at each SNR
    EvalNoise {
        #[command(flatten)]
        source: EvalSource,
        /// comma separated SNRs in dB; `inf` for clean
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-10,0,10")]
        snr: Vec<f64>,
        #[arg(long, default_value = "pink")]
        noise: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        batch_size: usize,
    },
    /// Top-3 labels for one WAV file
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        wav: PathBuf,
    },
    /// Compare analytic and finite-difference gradients
    Gradcheck {
        /// one of the checkable components; all of them when omitted
        #[arg(long)]
        component: Option<String>,
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
    },
    /// Parameter count of a model configuration
    Params {
        #[arg(long, default_value_t = 1.0)]
        tau: f64,
        #[arg(long, default_value = "se_tfwse")]
        attention: String,
        #[arg(long, default_value_t = 12)]
        classes: usize,
        /// also list per-layer counts
        #[arg(long)]
        breakdown: bool,
    },
}

#[derive(Args, Debug)]
struct EvalSource {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// dataset layout; inferred from the checkpoint labels when omitted
    #[arg(long)]
    task: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// gsc12, gsc-keywords or folder
    #[arg(long, default_value = "gsc12")]
    task: String,
    /// target words for gsc-keywords, e.g. yes,no
    #[arg(long, value_delimiter = ',')]
    keywords: Vec<String>,
    /// class folders for the folder task; all subfolders when omitted
    #[arg(long, value_delimiter = ',')]
    classes: Vec<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    attention: Option<String>,
    /// sgd200 or adam50
    #[arg(long, default_value = "sgd200")]
    recipe: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value settings applied before the flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// stop after this many optimizer steps
    #[arg(long)]
    max_steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("BCSE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| usage(format!("BCSE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| usage(e.to_string()))
}

fn run(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::Features { wav, out } => features(&wav, out.as_deref()),
        Command::Train(args) => train_cmd(args),
        Command::Eval {
            source,
            split,
            batch_size,
        } => eval_cmd(&source, &split, batch_size),
        Command::EvalNoise {
            source,
            snr,
            noise,
            seed,
            batch_size,
        } => eval_noise_cmd(&source, &snr, &noise, seed, batch_size),
        Command::Predict { ckpt, wav } => predict(&ckpt, &wav),
        Command::Gradcheck { component, eps } => gradcheck(component.as_deref(), eps),
        Command::Params {
            tau,
            attention,
            classes,
            breakdown,
        } => params(tau, &attention, classes, breakdown),
    }
}

fn print_resolved(pairs: &[(&str, String)]) {
    eprintln!("# resolved configuration");
    for (k, v) in pairs {
        eprintln!("{k}={v}");
    }
}

fn features(wav: &Path, out: Option<&Path>) -> CliResult<ExitCode> {
    print_resolved(&[
        ("wav", wav.display().to_string()),
        ("out", out.map(|p| p.display().to_string()).unwrap_or_default()),
    ]);
    let map = FeatureExtractor::default().extract(&load_wav(wav)?)?;
    let v = map.values().data();
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    let (lo, hi) = v.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    println!(
        "bands={} frames={} mean={mean:.6} min={lo:.6} max={hi:.6}",
        map.bands(),
        map.frames()
    );
    if let Some(out) = out {
        fs::write(out, map.to_blob()).map_err(|e| bcsenet::Error::io(out, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Recipe defaults, then the config file, then explicit flags.
fn resolve_train(args: &TrainArgs) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut model = ModelConfig::default();
    let mut optim = OptimConfig::recipe(&args.recipe).map_err(|e| usage(e.to_string()))?;
    let mut seed = 0;
    let mut max_steps = None;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| bcsenet::Error::io(path, e))?;
        for (key, value) in parse_lines(&text).map_err(|e| usage(format!("{}: {e}", path.display())))? {
            let bad = |e: bcsenet::Error| usage(format!("{}: {e}", path.display()));
            match key.as_str() {
                "max_steps" => {
                    max_steps = Some(
                        value
                            .parse()
                            .map_err(|_| usage(format!("max_steps: bad value {value:?}")))?,
                    )
                }
                "seed" => {
                    model.set(&key, &value).map_err(bad)?;
                    seed = model.seed;
                }
                _ => {
                    if !(model.set(&key, &value).map_err(bad)? || optim.set(&key, &value).map_err(bad)?) {
                        return Err(usage(format!("{}: unknown key {key:?}", path.display())));
                    }
                }
            }
        }
    }
    if let Some(tau) = args.tau {
        model.tau = tau;
    }
    if let Some(a) = &args.attention {
        model.attention = a.parse::<AttentionMode>().map_err(|e| usage(e.to_string()))?;
    }
    if let Some(s) = args.seed {
        seed = s;
        model.seed = s;
    }
    if let Some(e) = args.epochs {
        optim.epochs = e;
        optim.warmup_epochs = optim.warmup_epochs.min(e);
    }
    if let Some(b) = args.batch_size {
        optim.batch_size = b;
    }
    if let Some(lr) = args.lr {
        optim.lr_peak = lr;
    }
    if args.max_steps.is_some() {
        max_steps = args.max_steps;
    }
    optim.validate().map_err(|e| usage(e.to_string()))?;
    let cfg = TrainConfig {
        optim,
        seed,
        out: args.out.clone(),
        max_steps,
    };
    Ok((model, cfg))
}

fn train_cmd(args: TrainArgs) -> CliResult<ExitCode> {
    let task: Task = args.task.parse().map_err(usage)?;
    let (mut model_cfg, cfg) = resolve_train(&args)?;
    let names = match task {
        Task::GscKeywords => &args.keywords,
        _ => &args.classes,
    };
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let manifest = open_dataset(&args.data, task, &names)?;
    for w in &manifest.warnings {
        eprintln!("warning: {w}");
    }
    model_cfg.class_names = manifest.labels.clone();
    model_cfg.num_classes = manifest.labels.len();
    model_cfg.frames = frame_count(manifest.target_samples)
        .ok_or_else(|| usage(format!("clips of {} samples hold no frame", manifest.target_samples)))?;
    model_cfg.validate().map_err(|e| usage(e.to_string()))?;

    let mut pairs: Vec<(&str, String)> = vec![
        ("data", args.data.display().to_string()),
        ("task", task.to_string()),
        (
            "out",
            cfg.out.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        ),
        ("train_seed", cfg.seed.to_string()),
        ("max_steps", cfg.max_steps.map(|s| s.to_string()).unwrap_or_default()),
    ];
    pairs.extend(model_cfg.to_pairs());
    pairs.extend(cfg.optim.to_pairs());
    print_resolved(&pairs);
    eprintln!(
        "clips: {} train, {} val, {} test",
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );

    let mut model: Model<f32> = build_model(&model_cfg)?;
    let loader = Loader::new(manifest)?;
    let history = train(&mut model, &loader, &cfg, |r| {
        let val = r.val_acc.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
        println!(
            "epoch={} lr={:.6} loss={:.6} train_acc={:.2} val_acc={val}",
            r.epoch, r.lr, r.train_loss, r.train_acc
        );
    })?;
    if let Some((epoch, acc)) = history.best {
        println!("best_epoch={epoch} best_val_acc={acc:.2}");
    }
    eprintln!("wall clock: {:.1}s", history.wall_clock_secs);
    if let Some(out) = &cfg.out {
        eprintln!(
            "checkpoint: {}, history: {}",
            out.display(),
            history_path(out).display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn load_for_eval(source: &EvalSource) -> CliResult<(Model<f32>, bcsenet::data::DatasetManifest)> {
    let (model, _) = load_checkpoint::<f32>(&source.ckpt)?;
    let task = source
        .task
        .as_deref()
        .map(str::parse::<Task>)
        .transpose()
        .map_err(usage)?;
    let manifest = dataset::for_model(&source.data, task, model.config())?;
    Ok((model, manifest))
}

fn eval_cmd(source: &EvalSource, split: &str, batch_size: usize) -> CliResult<ExitCode> {
    let split: Split = split.parse().map_err(|e: bcsenet::Error| usage(e.to_string()))?;
    print_resolved(&[
        ("ckpt", source.ckpt.display().to_string()),
        ("data", source.data.display().to_string()),
        ("split", split.to_string()),
        ("batch_size", batch_size.to_string()),
    ]);
    let (model, manifest) = load_for_eval(source)?;
    let acc = evaluate(&model, &Loader::new(manifest)?.with_cache(false), split, batch_size)?;
    println!(
        "split={split} correct={} total={} accuracy={:.2}",
        acc.correct,
        acc.total,
        acc.percent()
    );
    Ok(ExitCode::SUCCESS)
}

fn eval_noise_cmd(source: &EvalSource, snrs: &[f64], noise: &str, seed: u64, batch_size: usize) -> CliResult<ExitCode> {
    let kind: NoiseKind = noise.parse().map_err(|e: bcsenet::Error| usage(e.to_string()))?;
    if snrs.iter().any(|s| s.is_nan()) {
        return Err(usage("snr values must be numbers or inf"));
    }
    let list: Vec<String> = snrs.iter().map(|s| s.to_string()).collect();
    print_resolved(&[
        ("ckpt", source.ckpt.display().to_string()),
        ("data", source.data.display().to_string()),
        ("snr", list.join(",")),
        ("noise", kind.to_string()),
        ("seed", seed.to_string()),
        ("batch_size", batch_size.to_string()),
    ]);
    let (model, manifest) = load_for_eval(source)?;
    for (snr, acc) in eval_noise(&model, &manifest, snrs, kind, seed, batch_size)? {
        println!(
            "noise={kind} snr_db={snr} correct={} total={} accuracy={:.2}",
            acc.correct,
            acc.total,
            acc.percent()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn predict(ckpt: &Path, wav: &Path) -> CliResult<ExitCode> {
    print_resolved(&[("ckpt", ckpt.display().to_string()), ("wav", wav.display().to_string())]);
    let (model, _) = load_checkpoint::<f32>(ckpt)?;
    let cfg = model.config();
    let samples = (cfg.frames - 1) * HOP + WINDOW;
    let clip = fix_length(&load_wav(wav)?, samples)?;
    let features = FeatureExtractor::default().extract(&clip)?;
    let x = features
        .values()
        .reshape(&[1, 1, features.bands(), features.frames()])?;
    let logits = no_grad(|| model.forward(&x, &ForwardCtx::eval()))?;
    let probs = softmax_rows(logits.data(), model.num_classes());
    let mut ranked: Vec<(usize, f32)> = probs.iter().copied().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (rank, (class, p)) in ranked.iter().take(3).enumerate() {
        println!("{} {} {p:.6}", rank + 1, cfg.class_name(*class));
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(component: Option<&str>, eps: f64) -> CliResult<ExitCode> {
    let names: Vec<&str> = match component {
        Some(c) if COMPONENTS.contains(&c) => vec![c],
        Some(c) => {
            return Err(usage(format!(
                "unknown component {c:?}; expected one of {}",
                COMPONENTS.join(", ")
            )))
        }
        None => COMPONENTS.to_vec(),
    };
    if eps.is_nan() || eps <= 0.0 {
        return Err(usage("eps must be positive"));
    }
    let opts = GradCheckOptions {
        eps,
        ..GradCheckOptions::default()
    };
    print_resolved(&[
        ("components", names.join(",")),
        ("eps", eps.to_string()),
        ("param_fraction", opts.param_fraction.to_string()),
        ("seed", opts.seed.to_string()),
        ("tolerance", GRAD_TOLERANCE.to_string()),
    ]);
    let mut worst = 0.0f64;
    for name in names {
        let r = check_component(name, &opts)?;
        println!(
            "component={name} max_rel_err={:.3e} at={} checked={} skipped={}",
            r.max_rel_err, r.location, r.checked, r.skipped
        );
        worst = worst.max(r.max_rel_err);
    }
    let ok = worst < GRAD_TOLERANCE;
    println!("max_rel_err={worst:.3e} {}", if ok { "ok" } else { "FAILED" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn params(tau: f64, attention: &str, classes: usize, breakdown: bool) -> CliResult<ExitCode> {
    let attention: AttentionMode = attention.parse().map_err(|e: bcsenet::Error| usage(e.to_string()))?;
    let mut cfg = ModelConfig::default().with_tau(tau).with_attention(attention);
    cfg.set("num_classes", &classes.to_string())?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    print_resolved(&cfg.to_pairs());
    let model: Model<f32> = build_model(&cfg)?;
    if breakdown {
        for (name, n) in model.param_breakdown() {
            println!("{name} {n}");
        }
    }
    println!("params={}", model.count_params());
    Ok(ExitCode::SUCCESS)
}
