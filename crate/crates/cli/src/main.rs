//! `synthlab` command-line front end.
//!
//! Failures print one line `error[<category>]: <message>` to stderr and
//! exit with 1 (runtime) or 2 (usage).

mod config;
mod manifest;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use synthlab::baselines::{BaselineKind, BaselineModel, BaselineSpec, DEFAULT_KERNEL, DEFAULT_RIDGE};
use synthlab::datasets::{budgets_for, split, synthetic_corpus, DatasetMeta, Registry, SeriesStore, SyntheticCorpusConfig};
use synthlab::eval::{
    evaluate_fewshot, evaluate_long_term, evaluate_zero_shot_transfer, pooled_train_scaler, read_records_csv, run_jobs, write_records_csv,
    write_records_jsonl, Alignment, EvalOptions, EvalRecord, Metric, TransferJob, Units, TRANSFER_HORIZON,
};
use synthlab::pfn::{self, PfnConfig, PfnForecaster, PfnModel, TrainConfig, TrainingMeta};
use synthlab::prior::{self, PriorConfig};
use synthlab::reporting::{avg_rank, avg_relative_metric, render_csv, render_markdown, win_rate, ResultsMatrix, Table};
use synthlab::scalers::ScalerKind;
use synthlab::{ForecastMethod, Forecaster, Pretrained};

use manifest::Manifest;

/// Raised for bad invocations; exits with code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "synthlab", version, about = "Synthetic-prior forecasting laboratory")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "SYNTHLAB_SEED", default_value_t = 0)]
    seed: u64,
    /// File of `key = value` lines supplying defaults for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for evaluation; defaults to all cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
enum Command {
    /// Sample the synthetic prior, or write the bundled benchmark stand-in.
    Generate(GenerateArgs),
    /// Train the PFN forecaster on prior draws.
    TrainPfn(TrainPfnArgs),
    /// Fit a baseline on a dataset's train segment and save it.
    TrainBaseline(TrainBaselineArgs),
    /// Long-term sliding-window evaluation.
    Eval(EvalArgs),
    /// Few-shot budget sweep.
    Fewshot(FewshotArgs),
    /// Zero-shot transfer of a supervised model between datasets.
    Transfer(TransferArgs),
    /// Summarize evaluation records.
    Report(ReportArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum GenerateKind {
    Prior,
    Corpus,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum SampleFormat {
    Csv,
    Bin,
}

#[derive(Args, Debug, Serialize)]
struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = GenerateKind::Prior)]
    kind: GenerateKind,
    /// Number of prior samples.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    max_history: usize,
    #[arg(long, value_enum, default_value_t = SampleFormat::Csv)]
    format: SampleFormat,
    /// Corpus dataset name; also the registry key.
    #[arg(long, default_value = "ettlike")]
    name: String,
    /// Corpus length in time steps.
    #[arg(long, default_value_t = 6000)]
    length: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TrainPfnArgs {
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 500)]
    max_history: usize,
    #[arg(long, default_value_t = 720)]
    head_width: usize,
    /// Points of history used at prediction time.
    #[arg(long, default_value_t = pfn::DEFAULT_LOOK_BACK)]
    look_back: usize,
    /// Longest history drawn from the prior during training.
    #[arg(long, default_value_t = pfn::DEFAULT_LOOK_BACK)]
    prior_max_history: usize,
    #[arg(long, default_value_t = 20_000)]
    samples: usize,
    #[arg(long, default_value_t = 5)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch: usize,
    #[arg(long, default_value_t = 0.003)]
    lr: f64,
    #[arg(long)]
    max_steps: Option<u64>,
    #[arg(long, default_value_t = 200)]
    validation: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Dataset registry (TOML).
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Datasets to use; all registered datasets when omitted.
    #[arg(long = "dataset")]
    datasets: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct TrainBaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_parser = parse_kind)]
    model: BaselineKind,
    #[arg(long, default_value_t = 336)]
    look_back: usize,
    #[arg(long, default_value_t = 96)]
    horizon: usize,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    kernel: usize,
    /// Fit on standardized values instead of raw ones.
    #[arg(long)]
    standardized: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    /// `snaive`, `last`, `linear`, `dlinear`, `pfn:<checkpoint>` or
    /// `fitted:<baseline.json>`; repeatable.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    #[arg(long, default_value_t = 336)]
    look_back: usize,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    kernel: usize,
}

#[derive(Args, Debug, Serialize)]
struct OutputArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [Metric::Mse, Metric::Mae, Metric::Smape])]
    metrics: Vec<Metric>,
    #[arg(long, default_value = "standardized", value_parser = parse_units)]
    units: Units,
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Records CSV; a `.jsonl` log and a manifest are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    /// Horizons; defaults to each dataset's registered set.
    #[arg(long, value_delimiter = ',')]
    horizons: Vec<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct FewshotArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    models: ModelArgs,
    #[arg(long, default_value_t = 96)]
    horizon: usize,
    /// Explicit budgets instead of the dataset's plan.
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<usize>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug, Serialize)]
struct TransferArgs {
    /// Dataset registry (TOML).
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    source: String,
    /// Targets; every other registered dataset when omitted.
    #[arg(long = "target")]
    targets: Vec<String>,
    #[arg(long, value_parser = parse_kind, default_value = "linear")]
    model: BaselineKind,
    #[arg(long, default_value_t = 104)]
    look_back: usize,
    #[arg(long, default_value_t = TRANSFER_HORIZON)]
    horizon: usize,
    #[arg(long, default_value = "standard", value_parser = parse_scaler)]
    scaler: ScalerKind,
    #[arg(long, default_value = "per-series", value_parser = parse_alignment)]
    alignment: Alignment,
    #[arg(long, default_value_t = DEFAULT_RIDGE)]
    ridge: f64,
    #[arg(long, default_value_t = DEFAULT_KERNEL)]
    kernel: usize,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Stat {
    Winrate,
    Rank,
    Relmetric,
    Matrix,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Format {
    Md,
    Csv,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum, default_value_t = Stat::Winrate)]
    stat: Stat,
    #[arg(long, default_value = "mae")]
    metric: Metric,
    /// Only records of this horizon; otherwise horizons are averaged.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Md)]
    format: Format,
    /// Decimals shown in markdown.
    #[arg(long, default_value_t = 2)]
    decimals: usize,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<BaselineKind, String> {
    s.parse()
}

fn parse_units(s: &str) -> Result<Units, String> {
    s.parse()
}

fn parse_scaler(s: &str) -> Result<ScalerKind, String> {
    s.parse()
}

fn parse_alignment(s: &str) -> Result<Alignment, String> {
    s.parse()
}

fn main() -> ExitCode {
    let argv = match config::expand_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error[usage]: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let usage_err = e.downcast_ref::<UsageError>().is_some();
            let msg = format!("{e:#}").replace('\n', " ");
            if usage_err {
                eprintln!("error[usage]: {msg}");
                ExitCode::from(2)
            } else {
                eprintln!("error[runtime]: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool")?;
    }
    let seed = cli.seed;
    match &cli.command {
        Command::Generate(a) => generate(a, seed, &cli.command),
        Command::TrainPfn(a) => train_pfn(a, seed, &cli.command),
        Command::TrainBaseline(a) => train_baseline(a, seed, &cli.command),
        Command::Eval(a) => eval(a, seed, &cli.command),
        Command::Fewshot(a) => fewshot(a, seed, &cli.command),
        Command::Transfer(a) => transfer(a, seed, &cli.command),
        Command::Report(a) => report(a, seed, &cli.command),
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Generate(_) => "generate",
        Command::TrainPfn(_) => "train-pfn",
        Command::TrainBaseline(_) => "train-baseline",
        Command::Eval(_) => "eval",
        Command::Fewshot(_) => "fewshot",
        Command::Transfer(_) => "transfer",
        Command::Report(_) => "report",
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("missing {what}: {}", path.display())));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn generate(a: &GenerateArgs, seed: u64, cmd: &Command) -> Result<()> {
    let mut m = Manifest::new(command_name(cmd), seed, cmd);
    match a.kind {
        GenerateKind::Prior => {
            let cfg = PriorConfig { max_history: a.max_history, ..PriorConfig::default() };
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let idx: Vec<u64> = (0..a.n as u64).collect();
            let samples = prior::samples_at(&cfg, seed, &idx)?;
            let out = create(&a.out)?;
            match a.format {
                SampleFormat::Csv => prior::write_csv(&samples, out)?,
                SampleFormat::Bin => prior::write_binary(&samples, out)?,
            }
            m.detail("prior", &cfg);
        }
        GenerateKind::Corpus => {
            let cfg = SyntheticCorpusConfig { name: a.name.clone(), length: a.length, ..SyntheticCorpusConfig::default() };
            let store = synthetic_corpus(&cfg, seed)?;
            store.write_csv(create(&a.out)?)?;
            let dir = a.out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let reg_path = dir.join("registry.toml");
            let mut reg = if reg_path.is_file() { Registry::load(&reg_path)? } else { Registry::default() };
            let file_name = a.out.file_name().context("output has no file name")?;
            let meta = DatasetMeta { path: Some(PathBuf::from(file_name)), ..cfg.meta() };
            // Store paths relative to the registry so the directory can move.
            for d in &mut reg.datasets {
                if let Some(p) = &d.path {
                    if let Ok(rel) = p.strip_prefix(dir) {
                        d.path = Some(rel.to_path_buf());
                    }
                }
            }
            reg.datasets.retain(|d| d.name != meta.name);
            reg.datasets.push(meta);
            reg.datasets.sort_by(|x, y| x.name.cmp(&y.name));
            fs::write(&reg_path, reg.to_toml()).with_context(|| format!("writing {}", reg_path.display()))?;
            m.detail("corpus", &cfg);
            m.output(&reg_path);
        }
    }
    m.output(&a.out);
    m.write_beside(&a.out)
}

fn train_pfn(a: &TrainPfnArgs, seed: u64, cmd: &Command) -> Result<()> {
    let config = PfnConfig { max_history: a.max_history, head_width: a.head_width, ..PfnConfig::small(a.layers, a.heads, a.d_model) };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let prior_cfg = PriorConfig { max_history: a.prior_max_history, ..PriorConfig::default() };
    prior_cfg.validate().map_err(|e| usage(e.to_string()))?;
    let tc = TrainConfig {
        n_samples: a.samples,
        batch_size: a.batch,
        epochs: a.epochs,
        base_lr: a.lr,
        seed,
        validation_samples: a.validation,
        max_steps: a.max_steps,
    };
    tc.validate().map_err(|e| usage(e.to_string()))?;
    let mut model = PfnModel::init(config, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let report = pfn::train(&mut model, &prior_cfg, &tc)?;
    let model = model.with_look_back(a.look_back).map_err(|e| usage(e.to_string()))?;
    let meta = TrainingMeta {
        seed,
        steps: report.steps,
        final_loss: report.final_loss,
        n_samples: tc.n_samples,
        epochs: tc.epochs,
        batch_size: tc.batch_size,
        base_lr: tc.base_lr,
    };
    pfn::save_to(&model, Some(&meta), create(&a.out)?)?;
    log::info!("initial loss {:.4}, final loss {:.4}", report.initial_loss, report.final_loss);
    let mut m = Manifest::new(command_name(cmd), seed, cmd);
    m.detail("prior", &prior_cfg);
    m.detail("train", &tc);
    m.detail("report", &serde_json::json!({
        "steps": report.steps,
        "initial_loss": report.initial_loss,
        "final_loss": report.final_loss,
        "epoch_losses": report.epoch_losses,
        "initial_validation_mse": report.initial_validation_mse,
        "final_validation_mse": report.final_validation_mse,
    }));
    m.output(&a.out);
    m.write_beside(&a.out)
}

fn load_registry(path: &Option<PathBuf>) -> Result<Registry> {
    let path = path.as_ref().ok_or_else(|| usage("missing registry (pass --registry)"))?;
    require_file(path, "registry")?;
    Registry::load(path).map_err(|e| usage(e.to_string()))
}

fn select<'r>(reg: &'r Registry, names: &[String]) -> Result<Vec<&'r DatasetMeta>> {
    if names.is_empty() {
        if reg.datasets.is_empty() {
            return Err(usage("registry lists no datasets"));
        }
        return Ok(reg.datasets.iter().collect());
    }
    names.iter().map(|n| reg.get(n).map_err(|e| usage(e.to_string()))).collect()
}

fn open(reg: &Registry, meta: &DatasetMeta, m: &mut Manifest) -> Result<SeriesStore> {
    let path = meta.path.as_ref().ok_or_else(|| usage(format!("dataset '{}' has no path", meta.name)))?;
    require_file(path, "dataset file")?;
    m.input(path);
    Ok(reg.open(meta)?)
}

/// A trained baseline together with the frame it was fitted in.
#[derive(Serialize, serde::Deserialize)]
struct SavedBaseline {
    dataset: String,
    standardized: bool,
    spec: BaselineSpec,
    model: BaselineModel,
}

fn train_baseline(a: &TrainBaselineArgs, seed: u64, cmd: &Command) -> Result<()> {
    let reg = load_registry(&a.data.registry)?;
    let metas = select(&reg, &a.data.datasets)?;
    let [meta] = metas.as_slice() else {
        return Err(usage("train-baseline needs exactly one --dataset"));
    };
    let mut m = Manifest::new(command_name(cmd), seed, cmd);
    let store = open(&reg, meta, &mut m)?;
    let seg = split(store.len(), meta.ratios)?;
    let channels = if a.standardized { synthlab::datasets::standardize(&store, seg.train.clone())?.store.channels } else { store.channels.clone() };
    let train: Vec<&[f64]> = channels.iter().map(|c| &c[seg.train.clone()]).collect();
    let spec = BaselineSpec { kernel: a.kernel, ridge: a.ridge, ..BaselineSpec::new(a.model, a.look_back, meta.period) };
    let model = spec.fit_model(&train, a.horizon)?;
    let saved = SavedBaseline { dataset: meta.name.clone(), standardized: a.standardized, spec, model };
    serde_json::to_writer_pretty(create(&a.out)?, &saved)?;
    m.output(&a.out);
    m.write_beside(&a.out)
}

/// Builds the methods named on the command line. Dataset-specific
/// hyperparameters (the seasonal period) come from `meta`.
fn methods(a: &ModelArgs, meta: &DatasetMeta, m: &mut Manifest) -> Result<Vec<(Arc<dyn ForecastMethod>, String)>> {
    let mut out: Vec<(Arc<dyn ForecastMethod>, String)> = Vec::new();
    for name in &a.models {
        if let Some(path) = name.strip_prefix("pfn:") {
            let path = Path::new(path);
            require_file(path, "checkpoint")?;
            m.input(path);
            let ck = pfn::load(path)?;
            out.push((Arc::new(Pretrained(Arc::new(PfnForecaster::new(ck.model)))), "synthetic".into()));
        } else if let Some(path) = name.strip_prefix("fitted:") {
            let path = Path::new(path);
            require_file(path, "baseline file")?;
            m.input(path);
            let saved: SavedBaseline = serde_json::from_reader(fs::File::open(path)?).with_context(|| format!("reading {}", path.display()))?;
            let f: Arc<dyn Forecaster> = Arc::new(saved.model);
            out.push((Arc::new(Pretrained(f)), saved.dataset));
        } else {
            let kind: BaselineKind = name.parse().map_err(usage)?;
            let spec = BaselineSpec { kernel: a.kernel, ridge: a.ridge, ..BaselineSpec::new(kind, a.look_back, meta.period) };
            out.push((Arc::new(spec), meta.name.clone()));
        }
    }
    Ok(out)
}

fn write_records(records: &[EvalRecord], out: &Path, m: &mut Manifest) -> Result<()> {
    write_records_csv(records, create(out)?)?;
    let log = out.with_extension("jsonl");
    write_records_jsonl(records, create(&log)?)?;
    m.output(out);
    m.output(&log);
    m.write_beside(out)
}

fn eval_options(o: &OutputArgs, look_back: usize, source: String) -> Result<EvalOptions> {
    if o.stride == 0 {
        return Err(usage("--stride must be at least 1"));
    }
    Ok(EvalOptions { metrics: o.metrics.clone(), units: o.units, stride: o.stride, look_back: Some(look_back), source: Some(source), tracker: None })
}

fn eval(a: &EvalArgs, seed: u64, cmd: &Command) -> Result<()> {
    let reg = load_registry(&a.data.registry)?;
    let mut m = Manifest::new(command_name(cmd), seed, cmd);
    let mut jobs = Vec::new();
    for meta in select(&reg, &a.data.datasets)? {
        let store = Arc::new(open(&reg, meta, &mut m)?);
        let horizons = if a.horizons.is_empty() { meta.horizons.clone() } else { a.horizons.clone() };
        for (method, source) in methods(&a.models, meta, &mut m)? {
            jobs.push((method, meta.clone(), Arc::clone(&store), horizons.clone(), eval_options(&a.output, a.models.look_back, source)?));
        }
    }
    let records = run_jobs(&jobs, |(method, meta, store, horizons, opts)| evaluate_long_term(method.as_ref(), store, meta, horizons, opts))?;
    write_records(&records, &a.output.out, &mut m)
}

fn fewshot(a: &FewshotArgs, seed: u64, cmd: &Command) -> Result<()> {
    let reg = load_registry(&a.data.registry)?;
    let mut m = Manifest::new(command_name(cmd), seed, cmd);
    let mut jobs = Vec::new();
    for meta in select(&reg, &a.data.datasets)? {
        let store = Arc::new(open(&reg, meta, &mut m)?);
        let plan = if a.budgets.is_empty() {
            budgets_for(meta.period, meta.budget)?
        } else {
            if a.budgets.windows(2).any(|w| w[0] >= w[1]) || a.budgets[0] == 0 {
                return Err(usage("--budgets must be positive and strictly increasing"));
            }
            synthlab::datasets::BudgetPlan { period: meta.period, budgets: a.budgets.clone() }
        };
        for (method, source) in methods(&a.models, meta, &mut m)? {
            jobs.push((method, meta.clone(), Arc::clone(&store), plan.clone(), eval_options(&a.output, a.models.look_back, source)?));
        }
    }
    let records = run_jobs(&jobs, |(method, meta, store, plan, opts)| evaluate_fewshot(method.as_ref(), store, meta, plan, a.horizon, opts))?;
    write_records(&records, &a.output.out, &mut m)
}

fn transfer(a: &TransferArgs, seed: u64, cmd: &Command) -> Result<()> {
    let reg = load_registry(&a.registry)?;
    let mut m = Manifest::new(command_name(cmd), seed, cmd);
    let source_meta = reg.get(&a.source).map_err(|e| usage(e.to_string()))?;
    let source = open(&reg, source_meta, &mut m)?;
    let seg = split(source.len(), source_meta.ratios)?;
    let train: Vec<&[f64]> = source.channels.iter().map(|c| &c[seg.train.clone()]).collect();
    let spec = BaselineSpec { kernel: a.kernel, ridge: a.ridge, ..BaselineSpec::new(a.model, a.look_back, source_meta.period) };
    let model = spec.fit(&train, a.horizon)?;
    let job = TransferJob {
        model,
        source: a.source.clone(),
        source_scaler: pooled_train_scaler(&source, seg.train.clone(), a.scaler)?,
        scaler_kind: a.scaler,
        look_back: if matches!(a.model, BaselineKind::Last | BaselineKind::Snaive) { spec.look_back() } else { a.look_back },
        horizon: a.horizon,
        alignment: a.alignment,
    };
    let targets: Vec<&DatasetMeta> = if a.targets.is_empty() {
        reg.datasets.iter().filter(|d| d.name != a.source).collect()
    } else {
        a.targets.iter().map(|t| reg.get(t).map_err(|e| usage(e.to_string()))).collect::<Result<_>>()?
    };
    if targets.is_empty() {
        return Err(usage("no target datasets"));
    }
    let mut stores = Vec::new();
    for t in targets {
        stores.push((t.clone(), open(&reg, t, &mut m)?));
    }
    let opts = eval_options(&a.output, job.look_back, a.source.clone())?;
    let records = run_jobs(&stores, |(meta, store)| Ok(evaluate_zero_shot_transfer(&job, store, meta, &opts)?))?;
    write_records(&records, &a.output.out, &mut m)
}

fn report(a: &ReportArgs, seed: u64, cmd: &Command) -> Result<()> {
    require_file(&a.input, "records file")?;
    let records = read_records_csv(fs::File::open(&a.input)?)?;
    let matrix = ResultsMatrix::from_records(&records, a.metric, a.horizon)?;
    let table = match a.stat {
        Stat::Winrate => Table::from_win_rates(&win_rate(&matrix)),
        Stat::Rank => Table::from_ranks(&avg_rank(&matrix).map_err(|e| usage(e.to_string()))?),
        Stat::Relmetric => Table::from_relative(&avg_relative_metric(&matrix)),
        Stat::Matrix => Table::from_matrix(&matrix),
    };
    let text = match a.format {
        Format::Md => render_markdown(&table, a.decimals),
        Format::Csv => render_csv(&table),
    };
    match &a.out {
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
        Some(out) => {
            create(out)?.write_all(text.as_bytes())?;
            let mut m = Manifest::new(command_name(cmd), seed, cmd);
            m.input(&a.input);
            m.output(out);
            m.write_beside(out)
        }
    }
}
