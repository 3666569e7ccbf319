use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use smallnet::dataio::LabeledImageSet;
use smallnet::hwsim::{latency_at, run_pipeline, write_cycle_trace};
use smallnet::netcore::FeatureMap;
use smallnet::quantizer::{
    emit_rom_hex, quantize_params, read_rom_hex, read_weight_file, write_atomic, write_weight_file, ROM_FILES,
};
use smallnet::report::{compare, confusion_csv, evaluate_engine, Engine, Weights};
use smallnet::trainer::{history_csv, train_with_progress, TrainConfig};

#[derive(Parser)]
#[command(name = "smallnet", version, about = "Train, quantize and simulate the smallNet MNIST classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train in floating point and write an SNW1 weight file plus a per-epoch CSV.
    Train(TrainArgs),
    /// Score one engine on the test set; writes JSON, or a confusion CSV for `.csv` outputs.
    Evaluate(EvalArgs),
    /// Run the float, fixed and pipeline engines on the same images; writes JSON.
    Compare(CompareArgs),
    /// Write the four ROM hex images for a weight file.
    EmitRom(EmitRomArgs),
    /// Run one test image through the hardware model and dump its cycle trace.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct TestSet {
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
}

impl TestSet {
    fn load(&self) -> Result<LabeledImageSet> {
        LabeledImageSet::load(&self.test_images, &self.test_labels).context("loading test set")
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    /// Weight file to write.
    #[arg(long)]
    out: PathBuf,
    /// History CSV; defaults to the weight path with a `.history.csv` suffix.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    /// Trailing training images scored after each epoch instead of trained on.
    #[arg(long, default_value_t = 5000)]
    holdout: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    test: TestSet,
    #[arg(long, default_value = "fixed")]
    engine: String,
    #[arg(long, default_value_t = 10_000)]
    limit: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    test: TestSet,
    #[arg(long, default_value_t = 10_000)]
    limit: usize,
    #[arg(long, default_value_t = 100_000_000)]
    clock_hz: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmitRomArgs {
    #[arg(long)]
    weights: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Re-read the written files and check them word for word.
    #[arg(long)]
    verify: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    weights: PathBuf,
    #[command(flatten)]
    test: TestSet,
    /// Test image to run.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 100_000_000)]
    clock_hz: u64,
    /// Cycle trace file, one `cycle,state,stage` line per cycle.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn stdout(text: &str) -> Result<()> {
    let mut lock = std::io::stdout().lock();
    lock.write_all(text.as_bytes())?;
    lock.flush()?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => stdout(text),
    }
}

fn check_limit(limit: usize) -> Result<()> {
    if limit == 0 {
        bail!("--limit must be at least 1");
    }
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let data = LabeledImageSet::load(&a.train_images, &a.train_labels).context("loading training set")?;
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
        validation_holdout: a.holdout,
        ..TrainConfig::default()
    };
    let outcome = train_with_progress(&data, &config, |r| match r.val_accuracy {
        Some(acc) => eprintln!("epoch {}: loss {:.6} val_accuracy {:.4}", r.epoch, r.loss, acc),
        None => eprintln!("epoch {}: loss {:.6}", r.epoch, r.loss),
    })?;
    let q = quantize_params(&outcome.params)?;
    if q.saturated > 0 {
        eprintln!("warning: {} weights clamped to the Q16.16 range", q.saturated);
    }
    let history = a.history.unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".history.csv");
        PathBuf::from(p)
    });
    write_weight_file(&outcome.params, &q.params, &a.out)?;
    write_text(&history, &history_csv(&outcome.history))?;
    Ok(())
}

fn cmd_evaluate(a: EvalArgs) -> Result<()> {
    let engine: Engine = a.engine.parse()?;
    check_limit(a.limit)?;
    let (float, fixed) = read_weight_file(&a.weights)?;
    let data = a.test.load()?;
    let ev = evaluate_engine(engine, Weights { float: &float, fixed: &fixed }, &data, a.limit)?;
    eprintln!("{engine}: {}/{} correct, accuracy {:.4}", ev.correct, ev.images, ev.accuracy);
    let text = match &a.out {
        Some(p) if p.extension().is_some_and(|e| e == "csv") => confusion_csv(&ev.confusion),
        _ => serde_json::to_string_pretty(&ev)? + "\n",
    };
    emit(a.out.as_deref(), &text)
}

fn cmd_compare(a: CompareArgs) -> Result<()> {
    check_limit(a.limit)?;
    let (float, fixed) = read_weight_file(&a.weights)?;
    // the stored words are what the engines run; requantizing only counts clamped weights
    let clamped = quantize_params(&float)?.saturated;
    let data = a.test.load()?;
    let r = compare(Weights { float: &float, fixed: &fixed }, &data, a.limit, a.clock_hz, clamped)?;
    eprintln!(
        "float {:.4}  fixed {:.4}  pipeline {:.4}  gap {:+.2} pp  agreement {:.4}",
        r.float_accuracy, r.fixed_accuracy, r.pipeline_accuracy, r.fixed_minus_float_pp, r.agreement_rate
    );
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&r)? + "\n"))
}

fn cmd_emit_rom(a: EmitRomArgs) -> Result<()> {
    let (_, q) = read_weight_file(&a.weights)?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let counts = emit_rom_hex(&q, &a.out)?;
    stdout(&format!("{} {} {} {}\n", counts[0], counts[1], counts[2], counts[3]))?;
    if a.verify {
        let back = read_rom_hex(&a.out)?;
        if back != q {
            bail!("ROM files in {} do not match the weight file", a.out.display());
        }
        eprintln!("verified {} against {}", ROM_FILES.join(", "), a.weights.display());
    }
    Ok(())
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let (_, q) = read_weight_file(&a.weights)?;
    let data = a.test.load()?;
    if a.index >= data.len() {
        bail!("--index {} out of range for {} test images", a.index, data.len());
    }
    let (img, label) = data.get(a.index);
    let run = run_pipeline(&FeatureMap::from_image_fixed(img), &q)?;
    let latency = latency_at(&run.report, a.clock_hz)?;
    if let Some(path) = &a.out {
        let mut buf = Vec::new();
        write_cycle_trace(&run.trace, &mut buf)?;
        write_atomic(path, &buf)?;
    }
    let summary = serde_json::json!({
        "index": a.index,
        "label": label,
        "class_code": run.result.class_code,
        "done_flag": run.result.done_flag,
        "scores_raw": run.scores.map(|s| format!("{:08X}", s.bits())),
        "cycles": run.report,
        "clock_hz": a.clock_hz,
        "latency_s": latency,
        "saturations": run.saturations,
    });
    stdout(&(serde_json::to_string_pretty(&summary)? + "\n"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::EmitRom(a) => cmd_emit_rom(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
