//! `frk` command-line entry point.
//!
//! Subcommands: `preprocess`, `compress-audit`, `train-demo`, `caption-demo`,
//! `evaluate`. Every run prints its resolved configuration to stderr, writes
//! artifacts deterministically for a fixed seed, and reports to stdout as
//! JSON unless `--out` redirects the report to a file.
//!
//! Exit codes: 0 success, 1 internal/divergence, 2 io/parse, 3
//! validation/capacity, 4 usage.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use frk::caption::{self, CaptionConfig, CaptionModel, Vocab};
use frk::dataio::{self, CaptionSet, PredictionSet, SplitSpec};
use frk::error::Error;
use frk::freqparam::{allocate_keep_total, compression_report, keep_floors};
use frk::metrics;
use frk::nn::{train, ArchPlan, ModelGraph};
use frk::{Rng, Tensor};

#[derive(Parser)]
#[command(
    name = "frk",
    about = "Frequency-regularized networks: compression audits, desk-scale training demos, caption metrics",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter COCO-style annotations to 5-caption images and emit splits
    Preprocess(PreprocessArgs),
    /// Build an FR architecture, truncate it, and report compression
    CompressAudit(CompressAuditArgs),
    /// Train a tiny FR conv net on synthetic blobs with the truncation schedule
    TrainDemo(TrainDemoArgs),
    /// Train the toy captioner on synthetic scenes and predict
    CaptionDemo(CaptionDemoArgs),
    /// Score a prediction file against 5-reference ground truth
    Evaluate(EvaluateArgs),
}

#[derive(Args, Serialize)]
struct PreprocessArgs {
    /// COCO-style annotation JSON (images + caption annotations)
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Split sizes; defaults match the reference preprocessing counts
    #[arg(long, default_value_t = 68_363)]
    train: usize,
    #[arg(long, default_value_t = 31_432)]
    valid: usize,
    #[arg(long, default_value_t = 2_000)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct CompressAuditArgs {
    /// Architecture: alexnet | efficientnetb0 | lenet5
    #[arg(long)]
    arch: String,
    /// Keep this fraction of every parameter's coefficients (in (0,1])
    #[arg(long)]
    keep_fraction: Option<f64>,
    /// Keep exactly this many coefficients over the whole model
    #[arg(long)]
    keep_total: Option<usize>,
    /// Classifier width; defaults to 10 for lenet5, 1000 otherwise
    #[arg(long)]
    num_classes: Option<usize>,
    /// Checkpoint directory to write
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Serialize)]
struct TrainDemoArgs {
    #[arg(long, default_value_t = 14)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 1.0)]
    keep_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    decay: f64,
    /// Examples per class in the synthetic blob set
    #[arg(long, default_value_t = 64)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Blob image side length
    #[arg(long, default_value_t = 8)]
    size: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Receives train_log.jsonl and checkpoint/
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct CaptionDemoArgs {
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    scenes: usize,
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 25)]
    seq_length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Predict one scene ("color:object") to stdout instead of batch mode
    #[arg(long)]
    scene: Option<String>,
    /// Batch mode output: test.json, prediction.json, checkpoint/
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct EvaluateArgs {
    /// Ground-truth JSON: image path → exactly five sos/eos-wrapped captions
    #[arg(long)]
    test: PathBuf,
    /// Prediction JSON: image path → one caption
    #[arg(long)]
    predictions: PathBuf,
    /// Report JSON destination (stdout when omitted)
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Parse { .. } | Error::Format(_) => 2,
        Error::Divergence { .. } => 1,
        _ => 3,
    }
}

fn announce<T: Serialize>(name: &str, args: &T) {
    let json = serde_json::to_string(args).unwrap_or_else(|_| "{}".into());
    eprintln!("{name} config: {json}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 4,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::CompressAudit(args) => cmd_compress_audit(args),
        Command::TrainDemo(args) => cmd_train_demo(args),
        Command::CaptionDemo(args) => cmd_caption_demo(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(4)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<(), Failure> {
    announce("preprocess", &args);
    let text = fs::read_to_string(&args.annotations).map_err(Error::from)?;
    let raw = dataio::ingest_annotations(&text)?;
    let filtered = dataio::filter_exactly_five(&raw);
    let spec = SplitSpec {
        train: args.train,
        valid: args.valid,
        test: args.test,
        seed: args.seed,
    };
    let (train, valid, test) = dataio::split_and_write(&filtered, &spec, &args.out_dir)?;
    #[derive(Serialize)]
    struct Counts {
        images_total: usize,
        images_with_five_captions: usize,
        train: usize,
        valid: usize,
        test: usize,
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Counts {
            images_total: raw.0.len(),
            images_with_five_captions: filtered.0.len(),
            train,
            valid,
            test,
        })
        .unwrap()
    );
    Ok(())
}

fn build_arch(arch: &str, num_classes: Option<usize>) -> Result<ArchPlan, Failure> {
    match arch {
        "alexnet" => Ok(ArchPlan::alexnet(num_classes.unwrap_or(1000))),
        "efficientnetb0" => Ok(ArchPlan::efficientnet_b0(num_classes.unwrap_or(1000))),
        "lenet5" => Ok(ArchPlan::lenet5(num_classes.unwrap_or(10))),
        other => Err(usage(format!(
            "unknown architecture {other:?}; expected alexnet, efficientnetb0, or lenet5"
        ))),
    }
}

fn cmd_compress_audit(args: CompressAuditArgs) -> Result<(), Failure> {
    announce("compress-audit", &args);
    let plan = build_arch(&args.arch, args.num_classes)?;
    if args.keep_fraction.is_some() && args.keep_total.is_some() {
        return Err(usage("pass either --keep-fraction or --keep-total, not both"));
    }
    let sizes: Vec<usize> = plan
        .param_shapes()
        .iter()
        .map(|(_, s)| frk::tensor::param_count(s))
        .collect();
    let keeps: Vec<usize> = if let Some(total) = args.keep_total {
        let min = sizes.len();
        let max: usize = sizes.iter().sum();
        if total < min || total > max {
            return Err(usage(format!(
                "--keep-total must lie in [{min}, {max}] for {}",
                args.arch
            )));
        }
        allocate_keep_total(&sizes, total)?
    } else {
        let f = args.keep_fraction.unwrap_or(1.0);
        if !(f > 0.0 && f <= 1.0) {
            return Err(usage(format!(
                "--keep-fraction must lie in (0,1], got {f} (minimum keep is 1 per parameter)"
            )));
        }
        keep_floors(&sizes, f)
    };

    let mut model = ModelGraph::build(plan, &mut Rng::from_seed(args.seed))?;
    let mut idx = 0;
    let mut trunc_err: Option<Error> = None;
    model.for_each_param_mut(&mut |_, p| {
        if let Err(e) = p.apply_truncation(keeps[idx]) {
            trunc_err = Some(e);
        }
        idx += 1;
    });
    if let Some(e) = trunc_err {
        return Err(e.into());
    }
    if let Some(dir) = &args.out {
        model.save(dir)?;
    }
    let report = compression_report(&model.named_params())?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}

fn cmd_train_demo(args: TrainDemoArgs) -> Result<(), Failure> {
    announce("train-demo", &args);
    let mut root = Rng::from_seed(args.seed);
    let mut data_rng = root.split();
    let mut model_rng = root.split();
    let mut train_rng = root.split();

    let data = train::synth_blobs(
        args.per_class,
        args.classes,
        args.size,
        args.size,
        args.noise,
        &mut data_rng,
    )?;
    let plan = ArchPlan::blob_net(args.classes, 1, args.size, args.size);
    let mut model = ModelGraph::build(plan, &mut model_rng)?;
    let cfg = train::TrainConfig {
        lr: args.lr,
        epochs: args.epochs,
        batch_size: args.batch,
        keep_fraction: args.keep_fraction,
        decay: args.decay,
    };
    let logs = train::train(&mut model, &data, &cfg, &mut train_rng)?;

    fs::create_dir_all(&args.out_dir).map_err(Error::from)?;
    let mut lines = String::new();
    for log in &logs {
        lines.push_str(&serde_json::to_string(log).unwrap());
        lines.push('\n');
    }
    fs::write(args.out_dir.join("train_log.jsonl"), lines).map_err(Error::from)?;
    model.save(&args.out_dir.join("checkpoint"))?;

    #[derive(Serialize)]
    struct Summary {
        epochs: usize,
        final_loss: f64,
        final_accuracy: f64,
        param_total: usize,
        kept_total: usize,
    }
    let last = logs.last().expect("epochs >= 1");
    println!(
        "{}",
        serde_json::to_string_pretty(&Summary {
            epochs: logs.len(),
            final_loss: last.loss,
            final_accuracy: last.accuracy,
            param_total: model.param_total(),
            kept_total: last.kept_total,
        })
        .unwrap()
    );
    Ok(())
}

fn scene_key(i: usize) -> String {
    format!("scene_{i:03}")
}

fn cmd_caption_demo(args: CaptionDemoArgs) -> Result<(), Failure> {
    announce("caption-demo", &args);
    let mut root = Rng::from_seed(args.seed);
    let mut data_rng = root.split();
    let mut model_rng = root.split();
    let mut train_rng = root.split();
    let mut test_rng = root.split();

    let dataset = caption::synth_dataset(args.scenes, args.noise, &mut data_rng)?;
    let vocab = Vocab::synth();
    let config = CaptionConfig {
        feat_dim: caption::SYNTH_FEAT_DIM,
        embed_dim: args.embed_dim,
        seq_length: args.seq_length,
    };
    let mut model = CaptionModel::init(config, vocab, &mut model_rng)?;
    let scenes: Vec<(Tensor, Vec<usize>)> = dataset
        .iter()
        .map(|(f, c)| (f.clone(), model.vocab.encode(c)))
        .collect();
    model.train_scenes(&scenes, args.epochs, args.lr, &mut train_rng)?;

    if let Some(spec) = &args.scene {
        let (color, object) = spec
            .split_once(':')
            .ok_or_else(|| usage("--scene expects \"color:object\""))?;
        let features =
            caption::scene_features(color, object).map_err(|e| usage(e.to_string()))?;
        println!("{}", model.generate(&features)?);
        if let Some(dir) = &args.out_dir {
            model.save(&dir.join("checkpoint"))?;
        }
        return Ok(());
    }

    let out_dir = args
        .out_dir
        .as_ref()
        .ok_or_else(|| usage("batch mode needs --out-dir"))?;
    fs::create_dir_all(out_dir).map_err(Error::from)?;

    // test split: one fresh noisy scene per (color, object) combination
    let n_test = caption::COLORS.len() * caption::OBJECTS.len();
    let test_scenes = caption::synth_dataset(n_test, args.noise, &mut test_rng)?;
    let mut truth = CaptionSet::default();
    let mut preds = PredictionSet::default();
    for (i, (features, caption_text)) in test_scenes.iter().enumerate() {
        let key = scene_key(i);
        truth.0.insert(key.clone(), vec![caption_text.clone(); 5]);
        preds.0.insert(key, model.generate(features)?);
    }
    dataio::write_captions(&truth, &out_dir.join("test.json"))?;
    dataio::write_predictions(&preds, &out_dir.join("prediction.json"))?;
    model.save(&out_dir.join("checkpoint"))?;
    #[derive(Serialize)]
    struct Summary {
        trained_scenes: usize,
        test_scenes: usize,
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&Summary {
            trained_scenes: args.scenes,
            test_scenes: n_test,
        })
        .unwrap()
    );
    Ok(())
}

fn key_mismatch(test: &CaptionSet, preds: &PredictionSet) -> Option<Error> {
    let missing_preds: Vec<&String> = test
        .0
        .keys()
        .filter(|k| !preds.0.contains_key(*k))
        .collect();
    let missing_truth: Vec<&String> = preds
        .0
        .keys()
        .filter(|k| !test.0.contains_key(*k))
        .collect();
    if missing_preds.is_empty() && missing_truth.is_empty() {
        return None;
    }
    let mut parts = Vec::new();
    if !missing_preds.is_empty() {
        parts.push(format!("images without predictions: {missing_preds:?}"));
    }
    if !missing_truth.is_empty() {
        parts.push(format!("predictions without ground truth: {missing_truth:?}"));
    }
    Some(Error::MissingKey(parts.join("; ")))
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    announce("evaluate", &args);
    let truth = dataio::read_captions(&args.test)?;
    let preds = dataio::read_predictions(&args.predictions)?;
    if let Some(e) = key_mismatch(&truth, &preds) {
        return Err(e.into());
    }
    let report = metrics::score_corpus(&preds, &truth)?;
    let json = serde_json::to_string_pretty(&report).unwrap() + "\n";
    let summary = metrics::format_summary(&report.corpus);
    match &args.out {
        Some(path) => {
            if let Some(parent) = Path::new(path).parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent).map_err(Error::from)?;
                }
            }
            fs::write(path, json).map_err(Error::from)?;
            println!("{summary}");
        }
        None => {
            print!("{json}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}
