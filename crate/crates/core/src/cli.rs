//! The `rudx` command line.
//!
//! Exit status is 0 on success, 1 for usage and validation errors, and 2
//! for runtime failures such as I/O errors or a non-finite loss.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adapt::{lr_sweep, pretrain_source, run_adaptation_with, write_sweep_csv, Ablation, Mode};
use crate::data::{convert_usps, write_container};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_embeddings, DomainTag};
use crate::manifest::{parse_manifest_str, ExperimentManifest, Overrides};
use crate::nets::{Checkpoint, ModelBundle};

#[derive(Debug, Parser)]
#[command(name = "rudx", version, about = "Robust unsupervised domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the source encoder and classifier, then freeze them.
    Pretrain(RunArgs),
    /// Adapt the target encoder; prints one JSON metrics line per evaluation.
    Adapt(RunArgs),
    /// Evaluate a checkpoint on the target domain.
    Eval(RunArgs),
    /// Write the configured domain pair as RUDX1 containers.
    Synth(RunArgs),
    /// Run one adaptation per clustering rate and write sweep.csv.
    Sweep(SweepArgs),
    /// Write source, target and centroid embeddings as CSV.
    ExportEmbeddings(ExportArgs),
    /// Convert a USPS LIBSVM text file into 28x28 IDX files.
    ConvertUsps(ConvertArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Balanced,
    Imbalanced,
    Partial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum AblationArg {
    Full,
    NoDis,
    AddaOnly,
    AddaMix,
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// Experiment manifest (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint to start from or to evaluate.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    mix_ratio: Option<f64>,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    gamma_dec: Option<f64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: SweepRunArgs,
    /// Comma-separated clustering rates.
    #[arg(long, value_delimiter = ',', required = true)]
    gamma_dec: Vec<f64>,
    /// Run grid cells on separate threads.
    #[arg(long)]
    parallel: bool,
}

#[derive(Debug, Clone, Args)]
struct SweepRunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    mix_ratio: Option<f64>,
    #[arg(long, value_enum)]
    ablation: Option<AblationArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Destination CSV; defaults to embeddings.csv in the output dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    /// USPS file in LIBSVM text format.
    #[arg(long)]
    input: PathBuf,
    /// Directory receiving the image and label IDX files.
    #[arg(long)]
    out: PathBuf,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Balanced => Mode::Balanced,
            ModeArg::Imbalanced => Mode::Imbalanced,
            ModeArg::Partial => Mode::Partial,
        }
    }
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Full => Ablation::Full,
            AblationArg::NoDis => Ablation::NoDis,
            AblationArg::AddaOnly => Ablation::AddaOnly,
            AblationArg::AddaMix => Ablation::AddaMix,
        }
    }
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            mode: self.mode.map(Into::into),
            mix_ratio: self.mix_ratio,
            ablation: self.ablation.map(Into::into),
            seed: self.seed,
            max_iters: self.max_iters,
            gamma_dec: self.gamma_dec,
            output_dir: self.output_dir.clone(),
        }
    }

    fn manifest(&self) -> Result<ExperimentManifest> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        parse_manifest_str(&text, &self.overrides())
    }
}

impl From<SweepRunArgs> for RunArgs {
    fn from(a: SweepRunArgs) -> Self {
        RunArgs {
            config: a.config,
            checkpoint: a.checkpoint,
            mode: a.mode,
            mix_ratio: a.mix_ratio,
            ablation: a.ablation,
            seed: a.seed,
            max_iters: a.max_iters,
            gamma_dec: None,
            output_dir: a.output_dir,
        }
    }
}

/// Parses `argv` (program name first) and runs the chosen subcommand.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Pretrain(args) => pretrain(&args),
        Command::Adapt(args) => adapt(&args),
        Command::Eval(args) => eval(&args),
        Command::Synth(args) => synth(&args),
        Command::Sweep(args) => sweep(args),
        Command::ExportEmbeddings(args) => export(&args),
        Command::ConvertUsps(args) => {
            std::fs::create_dir_all(&args.out)?;
            let n = convert_usps(
                &args.input,
                &args.out.join("usps-images-idx3-ubyte"),
                &args.out.join("usps-labels-idx1-ubyte"),
            )?;
            println!("{{\"converted\":{n}}}");
            Ok(())
        }
    }
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

/// A frozen source model: loaded from `--checkpoint` or trained now.
fn pretrained(m: &ExperimentManifest, args: &RunArgs, source: &crate::data::DomainDataset) -> Result<ModelBundle> {
    match &args.checkpoint {
        Some(p) => Ok(load_checkpoint(p)?.bundle),
        None => pretrain_source(m.build_bundle(source)?, source, &m.pretrain),
    }
}

fn pretrain(args: &RunArgs) -> Result<()> {
    let m = args.manifest()?;
    m.write_provenance()?;
    let (source, _) = m.load_domains()?;
    let bundle = pretrain_source(m.build_bundle(&source)?, &source, &m.pretrain)?;
    let report = evaluate(&bundle, &source, None)?;
    Checkpoint::new(bundle, None, 0).save(&m.output_dir.join("pretrained.json"))?;
    println!("{}", report.to_json_line()?);
    Ok(())
}

fn adapt(args: &RunArgs) -> Result<()> {
    let m = args.manifest()?;
    m.write_provenance()?;
    let (source, target) = m.load_domains()?;
    let bundle = pretrained(&m, args, &source)?;
    let mut print_err = None;
    let outcome = run_adaptation_with(bundle, &target, &source, &m.adapt, |r| match r.to_json_line() {
        Ok(line) => println!("{line}"),
        Err(e) => print_err = Some(e),
    })?;
    if let Some(e) = print_err {
        return Err(e);
    }
    outcome.write_artifacts(&m.output_dir)
}

fn eval(args: &RunArgs) -> Result<()> {
    let m = args.manifest()?;
    m.write_provenance()?;
    let path = args
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::invalid("eval needs --checkpoint"))?;
    let ckpt = load_checkpoint(path)?;
    let (_, target) = m.load_domains()?;
    let mut report = evaluate(&ckpt.bundle, &target, ckpt.centroids.as_ref())?;
    report.iter = ckpt.iter;
    let line = report.to_json_line()?;
    std::fs::write(m.output_dir.join("eval.json"), format!("{line}\n"))?;
    println!("{line}");
    Ok(())
}

fn synth(args: &RunArgs) -> Result<()> {
    let m = args.manifest()?;
    m.write_provenance()?;
    let (source, target) = m.load_domains()?;
    write_container(&source, &m.output_dir.join("source.rudx"))?;
    write_container(&target, &m.output_dir.join("target.rudx"))?;
    println!("{{\"source\":{},\"target\":{}}}", source.len(), target.len());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let run: RunArgs = args.run.into();
    let m = run.manifest()?;
    m.write_provenance()?;
    let (source, target) = m.load_domains()?;
    let bundle = pretrained(&m, &run, &source)?;
    let rows = lr_sweep(&bundle, &target, &source, &m.adapt, &args.gamma_dec, args.parallel)?;
    write_sweep_csv(&rows, std::fs::File::create(m.output_dir.join("sweep.csv"))?)?;
    write_sweep_csv(&rows, std::io::stdout().lock())
}

fn export(args: &ExportArgs) -> Result<()> {
    let m = args.run.manifest()?;
    m.write_provenance()?;
    let path = args
        .run
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::invalid("export-embeddings needs --checkpoint"))?;
    let ckpt = load_checkpoint(path)?;
    let (source, target) = m.load_domains()?;
    let out = args.out.clone().unwrap_or_else(|| m.output_dir.join("embeddings.csv"));
    export_embeddings(
        &ckpt.bundle,
        &[(DomainTag::Source, &source), (DomainTag::Target, &target)],
        ckpt.centroids.as_ref(),
        &out,
    )
}
