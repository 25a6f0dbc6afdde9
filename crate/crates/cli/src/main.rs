//! `mmhb`: dataset generation, training, search, sweeps and latency
//! measurements for multi-user mmWave hybrid precoding.
//!
//! Exit status: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime failures.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmwave_hybrid::beamformer::{exhaustive_search, LinkBudget, SearchOptions};
use mmwave_hybrid::config::KeyValues;
use mmwave_hybrid::dataset::{read_dataset, DatasetConfig};
use mmwave_hybrid::harness::{
    csv_string, generate_and_write, load_models, run_latency, run_sweep, train_on_dataset, ExperimentConfig, Method,
    ModelConfig, ModelKind, TrainingPlan,
};
use mmwave_hybrid::nn::{write_checkpoint, write_train_config};
use mmwave_hybrid::scenario::{generate_scenario, SystemConfig, DEFAULT_SNR_DB};
use mmwave_hybrid::Error;

#[derive(Parser, Debug)]
#[command(name = "mmhb", version, about = "Multi-user mmWave hybrid precoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a training dataset (exhaustive-search labels on corrupted channels)
    GenDataset(Common),
    /// Train a CNN-MIMO (default) or MLP model on a dataset
    Train(Common),
    /// Run the exhaustive codebook search on freshly drawn scenarios
    Search(Common),
    /// Monte Carlo sum-rate sweep, written as CSV
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Record wall time per decision (makes the CSV non-reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Median per-decision wall time of each method
    Latency(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Configuration file (key = value lines)
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed, overriding the configuration
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output file
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Comma-separated methods: algorithm1, cnn_mimo, mlp, no_interference, random
    #[arg(long, value_name = "LIST")]
    methods: Option<String>,
    /// Worker threads (default: all cores)
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

type CliResult<T> = Result<T, Error>;

struct Context {
    kv: KeyValues,
    base: PathBuf,
    out: Option<PathBuf>,
    methods: Option<Vec<Method>>,
}

impl Context {
    fn load(c: &Common) -> CliResult<Self> {
        let mut kv = KeyValues::load(&c.config)?;
        if let Some(seed) = c.seed {
            kv.set("seed", seed);
        }
        let methods = c.methods.as_deref().map(Method::parse_list).transpose()?;
        let base = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Context {
            kv,
            base,
            out: c.out.clone(),
            methods,
        })
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.kv.get(key).map(|p| self.base.join(p))
    }

    /// `--out`, else the config key, else an error naming both.
    fn out_path(&self, key: &str) -> CliResult<PathBuf> {
        self.out
            .clone()
            .or_else(|| self.path(key))
            .ok_or_else(|| Error::Config(format!("no output path: pass --out or set {key}")))
    }
}

fn emit(out: Option<PathBuf>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn gen_dataset(ctx: &Context) -> CliResult<()> {
    let cfg = DatasetConfig::from_kv(&ctx.kv)?;
    let out = ctx.out_path("dataset.out")?;
    let d = generate_and_write(&cfg, &out)?;
    println!("wrote {} samples to {}", d.len(), out.display());
    Ok(())
}

fn train(ctx: &Context) -> CliResult<()> {
    let mut plan = TrainingPlan::from_kv(&ctx.kv)?;
    if let Some(methods) = &ctx.methods {
        plan.model.kind = match methods.as_slice() {
            [Method::CnnMimo] => ModelKind::Cnn,
            [Method::Mlp] => ModelKind::Mlp,
            _ => {
                return Err(Error::Config(
                    "train accepts --methods cnn_mimo or --methods mlp".into(),
                ))
            }
        };
    }
    let data_path = ctx
        .path("train.dataset")
        .ok_or_else(|| Error::Config("train.dataset is not set".into()))?;
    if !data_path.is_file() {
        return Err(Error::Config(format!("dataset {} not found", data_path.display())));
    }
    let out = ctx.out_path("train.out")?;
    let d = read_dataset(&data_path)?;
    let (model, history) = train_on_dataset(&d, &plan)?;
    for (i, (t, v)) in history.train.iter().zip(&history.validation).enumerate() {
        println!("epoch {:>4}  train_mse {t:.6}  val_mse {v:.6}", i + 1);
    }
    write_checkpoint(&model, &out)?;
    write_train_config(&out, &plan.train)?;
    println!("wrote {} parameters to {}", model.parameter_count(), out.display());
    Ok(())
}

fn search(ctx: &Context) -> CliResult<()> {
    let system = SystemConfig::from_kv(&ctx.kv)?;
    let seed = ctx.kv.parsed_or("seed", 0u64)?;
    let count = ctx.kv.parsed_or("search.scenarios", 1usize)?;
    let budget = LinkBudget::from_snr_db(ctx.kv.parsed_or("search.snr_db", DEFAULT_SNR_DB)?)?;
    let mut text = String::from("scenario,q_f,q_w,rate,visited\n");
    for n in 0..count {
        let s = generate_scenario(&system, seed, n as u64)?;
        let res = exhaustive_search(
            &s.realization.channels,
            &s.candidates,
            &budget,
            SearchOptions {
                keep_table: false,
                parallel: true,
            },
        )?;
        text.push_str(&format!(
            "{n},{},{},{},{}\n",
            res.best.q_f, res.best.q_w, res.best_rate, res.visited
        ));
    }
    emit(ctx.out.clone(), &text)
}

fn experiment(ctx: &Context) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_kv(&ctx.kv, Some(&ctx.base))?;
    if let Some(m) = &ctx.methods {
        cfg.methods = m.clone();
    }
    Ok(cfg)
}

fn sweep(ctx: &Context, timing: bool) -> CliResult<()> {
    let mut cfg = experiment(ctx)?;
    cfg.timing |= timing;
    let models = load_models(&cfg)?;
    let rows = run_sweep(&cfg, &models)?;
    emit(ctx.out.clone().or_else(|| ctx.path("sweep.out")), &csv_string(&rows)?)
}

fn latency(ctx: &Context) -> CliResult<()> {
    let cfg = experiment(ctx)?;
    let model_cfg = ModelConfig::from_kv(&ctx.kv)?;
    let reps = ctx.kv.parsed_or("latency.repetitions", 20usize)?;
    // loaded models are optional here; missing ones are timed untrained
    let mut with_models = cfg.clone();
    with_models.methods.retain(|m| match m {
        Method::CnnMimo => cfg.cnn_model.is_some(),
        Method::Mlp => cfg.mlp_model.is_some(),
        _ => true,
    });
    let models = load_models(&with_models)?;
    let rows = run_latency(&cfg, &models, &model_cfg, reps)?;
    emit(ctx.out.clone().or_else(|| ctx.path("latency.out")), &csv_string(&rows)?)
}

fn run(cli: Cli) -> CliResult<()> {
    let (common, timing) = match &cli.command {
        Command::GenDataset(c) | Command::Train(c) | Command::Search(c) | Command::Latency(c) => (c, false),
        Command::Sweep { common, timing } => (common, *timing),
    };
    let ctx = Context::load(common)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenDataset(_) => gen_dataset(&ctx),
        Command::Train(_) => train(&ctx),
        Command::Search(_) => search(&ctx),
        Command::Sweep { .. } => sweep(&ctx, timing),
        Command::Latency(_) => latency(&ctx),
    })
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
        Err(e) => {
            eprintln!("mmhb: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 1,
                _ => 2,
            })
        }
    }
}
