//! Command-line front door: synthetic datasets, training, evaluation,
//! staged feature extraction, gradient verification, and the filter and
//! attention diagnostic reports.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rawbank::analysis::{self, Stage};
use rawbank::checkpoint::Checkpoint;
use rawbank::config::TrainConfig;
use rawbank::formats;
use rawbank::gradcheck;
use rawbank::signal::{load_wav, Utterance};
use rawbank::trainer::{self, synth};

#[derive(Parser)]
#[command(
    name = "rawbank",
    version,
    about = "Trainable raw-waveform filterbank front-end"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic band-ID dataset with a JSON-lines manifest.
    Synth(SynthArgs),
    /// Train on a dataset manifest and write a checkpoint plus metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Dump one front-end stage of a WAV file as features.
    Extract(ExtractArgs),
    /// Verify every analytic gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare learned center frequencies with the mel reference.
    AnalyzeFilters(AnalyzeFiltersArgs),
    /// Report attention weights against sub-band energy profiles.
    AnalyzeAttention(AnalyzeAttentionArgs),
}

#[derive(Parser)]
struct SynthArgs {
    /// Output directory; receives wav/ and manifest.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    /// Utterances per class (80/20 train/val split).
    #[arg(long, default_value_t = 250)]
    per_class: usize,
    /// Broadband noise level relative to the class signal.
    #[arg(long, default_value_t = 10.0)]
    snr_db: f64,
    /// Disable the broadband noise entirely.
    #[arg(long)]
    clean: bool,
    #[arg(long, default_value_t = 4800)]
    utt_len: usize,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Parser)]
struct TrainArgs {
    /// Dataset manifest (JSON lines).
    manifest: PathBuf,
    /// Training configuration JSON; defaults cover every field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Checkpoint path; metrics land next to it as <out>.metrics.jsonl
    /// and <out>.metrics.csv.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config label fraction.
    #[arg(long)]
    fraction: Option<f64>,
    /// Keep μ at its initialization.
    #[arg(long)]
    freeze_mu: bool,
    /// Replace learned attention with fixed uniform weights.
    #[arg(long)]
    uniform_attention: bool,
    /// CSV with one μ per line, replacing the mel initialization.
    #[arg(long)]
    mu_init: Option<PathBuf>,
}

#[derive(Parser)]
struct EvalArgs {
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "val")]
    split: String,
    /// Windows per utterance (0 = every complete window).
    #[arg(long, default_value_t = 0)]
    windows: usize,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct ExtractArgs {
    wav: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// One of x | y | z | mel.
    #[arg(long)]
    stage: String,
    /// One of bin | csv | pgm.
    #[arg(long, default_value = "bin")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Parser)]
struct AnalyzeFiltersArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Parser)]
struct AnalyzeAttentionArgs {
    /// A dataset manifest (*.jsonl) or one or more WAV files.
    inputs: Vec<PathBuf>,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split to analyze when the input is a manifest.
    #[arg(long, default_value = "val")]
    split: String,
    /// Windows per utterance (0 = every complete window).
    #[arg(long, default_value_t = 0)]
    windows: usize,
    /// Output directory: per-utterance profile CSVs, correlations.csv,
    /// and the per-window weight dump weights.csv.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Synth(a) => synth_cmd(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Eval(a) => eval_cmd(a),
        Cmd::Extract(a) => extract_cmd(a),
        Cmd::Gradcheck(a) => gradcheck_cmd(a),
        Cmd::AnalyzeFilters(a) => analyze_filters_cmd(a),
        Cmd::AnalyzeAttention(a) => analyze_attention_cmd(a),
    }
}

fn synth_cmd(a: SynthArgs) -> Result<ExitCode> {
    let snr = if a.clean { None } else { Some(a.snr_db) };
    let task = synth::SynthTask::band_id(a.classes, a.sample_rate, snr, a.utt_len, a.seed);
    let ds = synth::generate_dataset(&task, a.per_class).context("dataset generation")?;
    let manifest = synth::write_dataset(&ds, &a.out).context("writing dataset")?;
    let n_train = ds.indices(synth::Split::Train).len();
    let n_val = ds.indices(synth::Split::Val).len();
    println!(
        "wrote {} utterances ({n_train} train, {n_val} val, {} classes) to {}",
        ds.utts.len(),
        ds.n_classes,
        manifest.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_config(path: &Option<PathBuf>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TrainConfig::from_json(&text)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(fraction) = a.fraction {
        cfg.label_fraction = fraction;
    }
    cfg.freeze_mu |= a.freeze_mu;
    cfg.uniform_attention |= a.uniform_attention;

    let ds = synth::load_dataset(&a.manifest).context("loading dataset")?;
    let mu = match &a.mu_init {
        Some(p) => Some(formats::read_mu_csv(p)?),
        None => None,
    };
    let outcome = trainer::train(&cfg, &ds, mu.as_deref())?;

    outcome
        .checkpoint
        .save(&a.out)
        .context("writing checkpoint")?;
    let stem = a.out.display();
    formats::write_metrics_jsonl(
        &PathBuf::from(format!("{stem}.metrics.jsonl")),
        &outcome.metrics,
    )?;
    formats::write_metrics_csv(
        &PathBuf::from(format!("{stem}.metrics.csv")),
        &outcome.metrics,
    )?;
    if let Some(last) = outcome.metrics.last() {
        println!(
            "epoch {}: train_loss={:.4} train_acc={:.3} val_acc={:.3}",
            last.epoch, last.train_loss, last.train_acc, last.val_acc
        );
    }
    println!("checkpoint written to {stem}");
    Ok(ExitCode::SUCCESS)
}

fn eval_cmd(a: EvalArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let ds = synth::load_dataset(&a.manifest).context("loading dataset")?;
    let split = synth::Split::parse(&a.split)?;
    let report = trainer::evaluate(&ckpt, &ds, split, a.windows)?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn extract_cmd(a: ExtractArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let u = load_wav(&a.wav)?;
    let stage = Stage::parse(&a.stage)?;
    let feat = analysis::extract_features(&ckpt, &u, stage)?;
    match a.format.as_str() {
        "bin" => formats::write_wfb1(&a.out, &feat)?,
        "csv" => formats::write_feature_csv(&a.out, &feat)?,
        "pgm" => formats::write_pgm(&a.out, &feat)?,
        other => bail!("unknown format '{other}', expected bin|csv|pgm"),
    }
    println!(
        "{} bands x {} columns -> {}",
        feat.rows(),
        feat.cols(),
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn gradcheck_cmd(a: GradcheckArgs) -> Result<ExitCode> {
    let report = gradcheck::run(a.seed)?;
    for b in &report.blocks {
        println!(
            "{:<16} entries={:<4} max_rel_err={:.3e}  {}",
            b.name,
            b.n_checked,
            b.max_rel_err,
            if b.pass { "pass" } else { "FAIL" }
        );
    }
    if report.pass {
        println!(
            "all gradient blocks pass (tolerance {:.0e})",
            gradcheck::PASS_TOL
        );
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED");
        Ok(ExitCode::FAILURE)
    }
}

fn analyze_filters_cmd(a: AnalyzeFiltersArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let rows = analysis::analyze_filters(&ckpt)?;
    let csv = analysis::filter_report_csv(&rows);
    match &a.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn gather_utterances(inputs: &[PathBuf], split_name: &str) -> Result<Vec<Utterance>> {
    if inputs.is_empty() {
        bail!("no inputs: pass a dataset manifest or WAV files");
    }
    let is_manifest =
        inputs.len() == 1 && inputs[0].extension().map(|e| e == "jsonl").unwrap_or(false);
    if is_manifest {
        let ds = synth::load_dataset(&inputs[0]).context("loading dataset")?;
        let split = synth::Split::parse(split_name)?;
        Ok(ds
            .utts
            .into_iter()
            .filter(|u| u.split == split)
            .map(|u| u.utt)
            .collect())
    } else {
        inputs.iter().map(|p| Ok(load_wav(p)?)).collect()
    }
}

fn analyze_attention_cmd(a: AnalyzeAttentionArgs) -> Result<ExitCode> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let utts = gather_utterances(&a.inputs, &a.split)?;
    let profiles = analysis::analyze_attention(&ckpt, &utts, a.windows)?;

    fs::create_dir_all(&a.out)?;
    let mut correlations = String::from("utt_id,pearson,spearman\n");
    for p in &profiles {
        fs::write(
            a.out.join(format!("{}.csv", p.utt_id)),
            analysis::attention_profile_csv(p),
        )?;
        correlations.push_str(&format!("{},{},{}\n", p.utt_id, p.pearson, p.spearman));
    }
    fs::write(a.out.join("correlations.csv"), correlations)?;
    fs::write(
        a.out.join("weights.csv"),
        analysis::weights_dump_csv(&profiles),
    )?;

    let n = profiles.len() as f64;
    let mean_pearson: f64 = profiles.iter().map(|p| p.pearson).sum::<f64>() / n;
    let mean_spearman: f64 = profiles.iter().map(|p| p.spearman).sum::<f64>() / n;
    let frac_pos = profiles.iter().filter(|p| p.spearman > 0.0).count() as f64 / n;
    println!(
        "{} utterances: mean_pearson={mean_pearson:.3} mean_spearman={mean_spearman:.3} spearman>0 fraction={frac_pos:.3}",
        profiles.len()
    );
    Ok(ExitCode::SUCCESS)
}
