mod manifest;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use sentigraph::autodiff::checkpoint::{load_into_store, save_store};
use sentigraph::corpus::conllu::{convert, read_conllu};
use sentigraph::corpus::{load_dataset, save_dataset, AspectSample, LabelSet, Vocab};
use sentigraph::model::{prepare_samples, Model};
use sentigraph::suite::run_gradient_suite;
use sentigraph::syntax::SdiTable;
use sentigraph::training::{
    evaluate, layer_sweep, run_ablation, run_experiment, write_ablation_table, write_epoch_log,
    write_predictions, write_sweep_series, MetricsReport, TrainConfig, Variant,
};

use manifest::{RunManifest, Status};

const CONFIG_FILE: &str = "config.txt";
const VOCAB_FILE: &str = "vocab.txt";
const SDI_FILE: &str = "sdi.tsv";
const CHECKPOINT_FILE: &str = "params.ckpt";
const FINAL_CHECKPOINT_FILE: &str = "params-final.ckpt";
const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "sentigraph", version, about = "Aspect-level sentiment classification over dependency graphs")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert CoNLL-U parses plus an aspect label file to JSON lines.
    Prepare(PrepareArgs),
    /// Compute relation-frequency statistics from a training split.
    Sdi(SdiArgs),
    /// Train one model and write a run directory.
    Train(TrainArgs),
    /// Score a trained run on a dataset.
    Eval(EvalArgs),
    /// Write per-sample predictions of a trained run.
    Predict(EvalArgs),
    /// Train every ablation variant and tabulate the scores.
    Ablate(AblateArgs),
    /// Train one model per graph convolution depth.
    Sweep(SweepArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    conllu: PathBuf,
    /// Lines of `sentence_index aspect_start aspect_len label`.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SdiArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Count root attachments as arcs labelled `root`.
    #[arg(long)]
    count_root: bool,
    /// Leave `punct` arcs out of the counts.
    #[arg(long)]
    no_punct: bool,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    train: PathBuf,
    /// Model-selection split; a seeded hold-out of --train when absent.
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    /// GloVe-format text vectors.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// `key = value` file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    /// Any config key, e.g. `--set d_h=150`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Defaults to runs/<command>-<input hash>-seed<seed>.
    #[arg(long)]
    run_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Use the final-epoch parameters instead of the best-dev ones.
    #[arg(long)]
    final_epoch: bool,
    /// Write here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Comma-separated subset of full, d-wo, ew-wo, bi-wo.
    #[arg(long, default_value = "full,d-wo,ew-wo,bi-wo")]
    variants: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Depths to train, e.g. `1-4` or `1,3`; defaults to layer_sweep_range.
    #[arg(long)]
    range: Option<String>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn effective_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        config
            .apply_text(&text)
            .with_context(|| format!("in config {}", path.display()))?;
    }
    let named = [
        ("seed", args.seed.map(|v| v.to_string())),
        ("max_epochs", args.epochs.map(|v| v.to_string())),
        ("learning_rate", args.learning_rate.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("gcn_layers", args.layers.map(|v| v.to_string())),
    ];
    for (key, value) in named {
        if let Some(v) = value {
            config.set(key, &v)?;
        }
    }
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        config.set(k.trim(), v)?;
    }
    config.validate()?;
    Ok(config)
}

fn load(path: &Path) -> Result<Vec<AspectSample>> {
    Ok(load_dataset(path, &LabelSet::all())?)
}

struct LoadedData {
    train: Vec<AspectSample>,
    dev: Option<Vec<AspectSample>>,
    test: Option<Vec<AspectSample>>,
}

fn load_data(args: &DataArgs) -> Result<LoadedData> {
    let optional = |p: &Option<PathBuf>| p.as_deref().map(load).transpose();
    Ok(LoadedData {
        train: load(&args.train)?,
        dev: optional(&args.dev)?,
        test: optional(&args.test)?,
    })
}

/// Creates the run directory and writes the incomplete manifest plus the
/// effective configuration.
fn start_run(command: &str, args: &TrainArgs, config: &TrainConfig) -> Result<(PathBuf, RunManifest)> {
    let d = &args.data;
    let mut inputs: Vec<(&str, &Path)> = vec![("train", &d.train)];
    for (role, p) in [
        ("dev", &d.dev),
        ("test", &d.test),
        ("embeddings", &d.embeddings),
        ("config", &args.config.config),
    ] {
        if let Some(p) = p {
            inputs.push((role, p));
        }
    }
    let text = config.to_string();
    let mut manifest = RunManifest::new(command, config.seed, text.clone(), &inputs)?;
    let dir = args.run_dir.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{command}-{}-seed{}", &manifest.input_hash[..12], config.seed))
    });
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    manifest.record(manifest::FILE_NAME);
    manifest.write(&dir)?;
    fs::write(dir.join(CONFIG_FILE), text).with_context(|| format!("cannot write into {}", dir.display()))?;
    manifest.record(CONFIG_FILE);
    manifest.write(&dir)?;
    Ok((dir, manifest))
}

fn finish_run(dir: &Path, manifest: &mut RunManifest) -> Result<()> {
    manifest.status = Status::Complete;
    manifest.write(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    best_epoch: usize,
    best_dev: &'a MetricsReport,
    final_dev: &'a MetricsReport,
    test_best: Option<&'a MetricsReport>,
    test_final: Option<&'a MetricsReport>,
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = effective_config(&args.config)?;
    let data = load_data(&args.data)?;
    let (dir, mut manifest) = start_run("train", args, &config)?;
    let exp = run_experiment(
        &config,
        &data.train,
        data.dev.as_deref(),
        data.test.as_deref(),
        args.data.embeddings.as_deref(),
    )?;

    let mut w = create(&dir.join(VOCAB_FILE))?;
    exp.vocab.write(&mut w)?;
    w.flush()?;
    manifest.record(VOCAB_FILE);
    exp.sdi.save(&dir.join(SDI_FILE))?;
    manifest.record(SDI_FILE);
    manifest.sdi_table = Some(dir.join(SDI_FILE));
    save_store(&exp.outcome.best.store, &dir.join(CHECKPOINT_FILE))?;
    manifest.record(CHECKPOINT_FILE);
    manifest.checkpoint = Some(dir.join(CHECKPOINT_FILE));
    save_store(&exp.outcome.final_store, &dir.join(FINAL_CHECKPOINT_FILE))?;
    manifest.record(FINAL_CHECKPOINT_FILE);
    let mut w = create(&dir.join("epochs.tsv"))?;
    write_epoch_log(&mut w, &exp.outcome.epochs)?;
    w.flush()?;
    manifest.record("epochs.tsv");
    write_json(
        &dir.join("metrics.json"),
        &TrainMetrics {
            best_epoch: exp.outcome.best_epoch,
            best_dev: &exp.outcome.best_dev,
            final_dev: &exp.outcome.final_dev,
            test_best: exp.test.as_ref(),
            test_final: exp.test_final.as_ref(),
        },
    )?;
    manifest.record("metrics.json");
    if let Some(test) = &data.test {
        let prepared = prepare_samples(test, &exp.vocab, Some(&exp.sdi), config.flags)?;
        let mut w = create(&dir.join("predictions.jsonl"))?;
        write_predictions(&mut w, &exp.test_predictions, &prepared)?;
        w.flush()?;
        manifest.record("predictions.jsonl");
    }
    finish_run(&dir, &mut manifest)?;

    let m = exp.headline();
    println!(
        "best epoch {} of {}: accuracy {:.4}, macro-F1 {:.4} ({})",
        exp.outcome.best_epoch,
        exp.outcome.epochs.len(),
        m.accuracy,
        m.macro_f1,
        if exp.test.is_some() { "test" } else { "dev" }
    );
    println!("run directory: {}", dir.display());
    Ok(())
}

struct TrainedRun {
    config: TrainConfig,
    vocab: Vocab,
    sdi: SdiTable,
    model: Model,
}

fn open_run(dir: &Path, final_epoch: bool) -> Result<TrainedRun> {
    let manifest = RunManifest::read(dir)?;
    if manifest.status != Status::Complete {
        bail!("run {} did not complete", dir.display());
    }
    let config = TrainConfig::from_text(&manifest.config)?;
    let vocab_path = dir.join(VOCAB_FILE);
    let file = File::open(&vocab_path).with_context(|| format!("cannot open {}", vocab_path.display()))?;
    let vocab = Vocab::read(BufReader::new(file))?;
    let sdi = SdiTable::load(&dir.join(SDI_FILE))?;
    let mut rng = sentigraph::rng::stream(config.seed, sentigraph::rng::INIT);
    let mut model = Model::skeleton(&config, vocab.len(), &mut rng)?;
    let ckpt = if final_epoch { FINAL_CHECKPOINT_FILE } else { CHECKPOINT_FILE };
    load_into_store(&mut model.store, &dir.join(ckpt))?;
    Ok(TrainedRun {
        config,
        vocab,
        sdi,
        model,
    })
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let run = open_run(&args.run, args.final_epoch)?;
    let samples = load(&args.data)?;
    let prepared = prepare_samples(&samples, &run.vocab, Some(&run.sdi), run.config.flags)?;
    let (metrics, _) = evaluate(&run.model, &prepared)?;
    let mut w = output(&args.out)?;
    serde_json::to_writer_pretty(&mut w, &metrics)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn cmd_predict(args: &EvalArgs) -> Result<()> {
    let run = open_run(&args.run, args.final_epoch)?;
    let samples = load(&args.data)?;
    let prepared = prepare_samples(&samples, &run.vocab, Some(&run.sdi), run.config.flags)?;
    let (_, predictions) = evaluate(&run.model, &prepared)?;
    let mut w = output(&args.out)?;
    write_predictions(&mut w, &predictions, &prepared)?;
    w.flush()?;
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let variants = args
        .variants
        .split(',')
        .map(|v| v.trim().parse::<Variant>())
        .collect::<sentigraph::Result<Vec<_>>>()?;
    let config = effective_config(&args.train.config)?;
    let data = load_data(&args.train.data)?;
    let (dir, mut manifest) = start_run("ablate", &args.train, &config)?;
    let rows = run_ablation(
        &config,
        &variants,
        &data.train,
        data.dev.as_deref(),
        data.test.as_deref(),
        args.train.data.embeddings.as_deref(),
    )?;
    let mut w = create(&dir.join("ablation.tsv"))?;
    write_ablation_table(&mut w, &rows)?;
    w.flush()?;
    manifest.record("ablation.tsv");
    write_json(&dir.join("ablation.json"), &rows)?;
    manifest.record("ablation.json");
    finish_run(&dir, &mut manifest)?;
    write_ablation_table(std::io::stdout().lock(), &rows)?;
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let mut config = effective_config(&args.train.config)?;
    if let Some(range) = &args.range {
        config.set("layer_sweep_range", range)?;
        config.validate()?;
    }
    let data = load_data(&args.train.data)?;
    let (dir, mut manifest) = start_run("sweep", &args.train, &config)?;
    let rows = layer_sweep(
        &config,
        &config.layer_sweep_range,
        &data.train,
        data.dev.as_deref(),
        data.test.as_deref(),
        args.train.data.embeddings.as_deref(),
    )?;
    let mut w = create(&dir.join("sweep.tsv"))?;
    write_sweep_series(&mut w, &rows)?;
    w.flush()?;
    manifest.record("sweep.tsv");
    finish_run(&dir, &mut manifest)?;
    write_sweep_series(std::io::stdout().lock(), &rows)?;
    Ok(())
}

fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let file = File::open(&args.conllu).with_context(|| format!("cannot open {}", args.conllu.display()))?;
    let sentences = read_conllu(BufReader::new(file)).with_context(|| format!("in {}", args.conllu.display()))?;
    let file = File::open(&args.labels).with_context(|| format!("cannot open {}", args.labels.display()))?;
    let samples = convert(&sentences, BufReader::new(file), &LabelSet::all())
        .with_context(|| format!("in {}", args.labels.display()))?;
    save_dataset(&args.out, &samples)?;
    println!("{} samples from {} sentences", samples.len(), sentences.len());
    Ok(())
}

fn cmd_sdi(args: &SdiArgs) -> Result<()> {
    let mut config = TrainConfig::default();
    config.sdi.count_root = args.count_root;
    config.sdi.count_punct = !args.no_punct;
    let train = load(&args.train)?;
    let table = SdiTable::collect(&train, config.sdi)?;
    table.save(&args.out)?;
    println!("{} relation labels over {} arcs", table.ratios().len(), table.total_edges());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<bool> {
    let report = run_gradient_suite(args.seed)?;
    for (name, r) in &report.checks {
        log::info!("{name}: {:.3e} over {} coordinates", r.max_rel_error, r.checked);
    }
    let max = report.max_rel_error();
    let worst = report.worst().map(|(n, _)| n.as_str()).unwrap_or("-");
    println!("max relative error: {max:.3e} (worst: {worst}; {} coordinates)", report.checked());
    Ok(max < GRADCHECK_THRESHOLD)
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(a)?,
        Command::Sdi(a) => cmd_sdi(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::Predict(a) => cmd_predict(a)?,
        Command::Ablate(a) => cmd_ablate(a)?,
        Command::Sweep(a) => cmd_sweep(a)?,
        Command::Gradcheck(a) => return cmd_gradcheck(a),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
